mod common;

use std::collections::{BTreeMap, BTreeSet};

use adprompt::backend::{Tokenizer, PLM_MAX_LEN};
use adprompt::corpus::{build_manifest, load_transcript, DatasetManifest};
use adprompt::disfluency::{select_threshold_by_correlation, DisfluencyLexicon, FluencyLabeling};
use adprompt::ensemble::{combine_runs, majority_vote, preset, TiePolicy};
use adprompt::prompting::{assemble, Position, PromptTemplate};
use adprompt::synthetic::{self, SCENE_WORDS};
use adprompt::trainer::{EpochDecisions, Paradigm, RunMeta, SystemRun};
use adprompt::{AdLabel, Source, Split, Task};
use proptest::prelude::*;
use rand::seq::SliceRandom;

fn write_records(dir: &std::path::Path, n_ad: usize, n_non: usize, n_test: usize) -> Vec<adprompt::corpus::SubjectRecord> {
    let lexicon = DisfluencyLexicon::default();
    let mut out = Vec::new();
    let plan = (0..n_ad)
        .map(|_| (Split::Train, AdLabel::Ad))
        .chain((0..n_non).map(|_| (Split::Train, AdLabel::NonAd)))
        .chain((0..n_test).map(|i| (Split::Test, if i % 2 == 0 { AdLabel::Ad } else { AdLabel::NonAd })));
    for (i, (split, label)) in plan.enumerate() {
        let id = format!("P{i:03}");
        let path = dir.join(format!("{id}.cha"));
        std::fs::write(&path, format!("*PAR:\tthe {} (.) uh word{i} .\n", SCENE_WORDS[i % SCENE_WORDS.len()])).unwrap();
        out.push(load_transcript(&path, &id, split, label, Source::Manual, &lexicon).unwrap());
    }
    out
}

fn class_counts(m: &DatasetManifest, fold: usize) -> (usize, usize) {
    let (_, held) = m.fold_split(fold).unwrap();
    let ad = held.iter().filter(|r| r.ad_label == AdLabel::Ad).count();
    (ad, held.len() - ad)
}

fn run(system: &str, seed: u64, epochs: &[Vec<AdLabel>]) -> SystemRun {
    let (plm, rest) = system.split_once(':').unwrap();
    SystemRun {
        meta: RunMeta {
            system_id: system.to_string(),
            plm: plm.to_string(),
            paradigm: if rest == "mlm" { Paradigm::Mlm } else { Paradigm::Prompt },
            position: rest.strip_prefix("prompt:").map(|p| p.parse().unwrap()),
            multi_task: false,
            seed,
        },
        epoch_decisions: epochs
            .iter()
            .enumerate()
            .map(|(e, d)| EpochDecisions {
                epoch: 8 + e,
                decisions: d.iter().enumerate().map(|(i, l)| (format!("s{i}"), *l)).collect(),
            })
            .collect(),
        epoch_accuracy: vec![None; epochs.len()],
    }
}

fn label(b: bool) -> AdLabel {
    if b { AdLabel::Ad } else { AdLabel::NonAd }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn manifest_round_trips_through_disk(n_ad in 2usize..20, n_non in 2usize..20, n_test in 0usize..8, folds in 2usize..5, seed in any::<u64>()) {
        let dir = tempfile::tempdir().unwrap();
        let m = build_manifest(write_records(dir.path(), n_ad, n_non, n_test), folds, seed).unwrap();
        let path = dir.path().join("manifest.tsv");
        m.save(&path).unwrap();
        let back = DatasetManifest::load(&path, &DisfluencyLexicon::default()).unwrap();
        prop_assert_eq!(&back.fold_of, &m.fold_of);
        prop_assert_eq!((back.train_count, back.test_count, back.fold_count), (m.train_count, m.test_count, m.fold_count));
        for (a, b) in back.records.iter().zip(&m.records) {
            prop_assert_eq!(&a.subject_id, &b.subject_id);
            prop_assert_eq!((a.split, a.ad_label, a.source), (b.split, b.ad_label, b.source));
            prop_assert_eq!(&a.merged_text, &b.merged_text);
        }
        // saving the reloaded manifest again changes nothing
        prop_assert_eq!(back.to_manifest_string(), std::fs::read_to_string(&path).unwrap());
    }

    #[test]
    fn folds_are_stratified(n_ad in 1usize..60, n_non in 1usize..60, folds in 2usize..11, seed in any::<u64>()) {
        prop_assume!(n_ad + n_non >= folds);
        let dir = tempfile::tempdir().unwrap();
        let m = build_manifest(write_records(dir.path(), n_ad, n_non, 0), folds, seed).unwrap();
        m.validate_folds().unwrap();
        let counts: Vec<(usize, usize)> = (0..folds).map(|f| class_counts(&m, f)).collect();
        let ad: Vec<usize> = counts.iter().map(|c| c.0).collect();
        let non: Vec<usize> = counts.iter().map(|c| c.1).collect();
        let sizes: Vec<usize> = counts.iter().map(|c| c.0 + c.1).collect();
        for v in [&ad, &non, &sizes] {
            prop_assert!(v.iter().max().unwrap() - v.iter().min().unwrap() <= 1, "{:?}", counts);
        }
        prop_assert_eq!(ad.iter().sum::<usize>(), n_ad);
        prop_assert_eq!(non.iter().sum::<usize>(), n_non);
    }

    #[test]
    fn vote_ignores_order(bits in prop::collection::vec(any::<bool>(), 1..16), seed in any::<u64>()) {
        let labels: Vec<AdLabel> = bits.iter().map(|&b| label(b)).collect();
        let mut shuffled = labels.clone();
        shuffled.shuffle(&mut adprompt::rng::stream(seed, "perm", 0));
        for policy in [TiePolicy::PreferAd, TiePolicy::PreferNonAd, TiePolicy::PoolSubDecisions] {
            prop_assert_eq!(majority_vote(&labels, policy).unwrap(), majority_vote(&shuffled, policy).unwrap());
        }
    }

    #[test]
    fn combination_ignores_run_order(bits in prop::collection::vec(any::<bool>(), 36), seed in any::<u64>()) {
        // 2 systems x 2 seeds x 3 epochs x 3 subjects
        let mut runs = Vec::new();
        let mut k = 0;
        for system in ["bert:prompt:front", "bert:prompt:back"] {
            for s in [1, 2] {
                let epochs: Vec<Vec<AdLabel>> = (0..3).map(|_| (0..3).map(|_| { k += 1; label(bits[k - 1]) }).collect()).collect();
                runs.push(run(system, s, &epochs));
            }
        }
        let p = preset("front+back", "bert").unwrap();
        let reference = combine_runs(&runs, &p, TiePolicy::PoolSubDecisions).unwrap();
        runs.shuffle(&mut adprompt::rng::stream(seed, "perm", 1));
        prop_assert_eq!(combine_runs(&runs, &p, TiePolicy::PoolSubDecisions).unwrap(), reference);
    }

    #[test]
    fn stumbling_count_never_grows_with_threshold(totals in prop::collection::vec(0u32..30, 1..60)) {
        let (profiles, _) = common::profiles_from(&totals, &vec![false; totals.len()]);
        let mut last = usize::MAX;
        for t in 0..=31 {
            let n = FluencyLabeling::at_threshold(&profiles, t).stumbling_count;
            prop_assert!(n <= last);
            last = n;
        }
    }

    #[test]
    fn threshold_matches_exhaustive_oracle(pairs in prop::collection::vec((0u32..25, any::<bool>()), 4..108)) {
        let totals: Vec<u32> = pairs.iter().map(|p| p.0).collect();
        let ad: Vec<bool> = pairs.iter().map(|p| p.1).collect();
        prop_assume!(ad.iter().any(|&a| a) && ad.iter().any(|&a| !a));
        let (profiles, labels) = common::profiles_from(&totals, &ad);
        let chosen = select_threshold_by_correlation(&profiles, &labels).unwrap();
        prop_assert_eq!(chosen.threshold, common::oracle_threshold(&totals, &ad));
    }

    #[test]
    fn front_and_back_hold_the_same_tokens(words in prop::collection::vec(0usize..SCENE_WORDS.len(), 1..40)) {
        let tok = synthetic::tokenizer();
        let text: Vec<&str> = words.iter().map(|&i| SCENE_WORDS[i]).collect();
        let text = text.join(" ");
        let front = assemble(&PromptTemplate::diagnosis(Position::Front), &text, &tok, PLM_MAX_LEN).unwrap();
        let back = assemble(&PromptTemplate::diagnosis(Position::Back), &text, &tok, PLM_MAX_LEN).unwrap();
        let mut a = front.token_ids.clone();
        let mut b = back.token_ids.clone();
        a.sort_unstable();
        b.sort_unstable();
        prop_assert_eq!(a, b);
        // "the diagnosis is <MASK> ." : mask is the 4th prompt token
        prop_assert_eq!(front.mask_positions[&Task::Diagnosis], 4);
        prop_assert_eq!(back.mask_positions[&Task::Diagnosis], back.len() - 3);
    }

    #[test]
    fn truncation_keeps_prompt_and_transcript_prefix(n in 1usize..700, multi in any::<bool>(), front in any::<bool>()) {
        let tok = synthetic::tokenizer();
        let text: Vec<&str> = (0..n).map(|i| SCENE_WORDS[i % SCENE_WORDS.len()]).collect();
        let text = text.join(" ");
        let pos = if front { Position::Front } else { Position::Back };
        let template = if multi { PromptTemplate::multi_task(pos) } else { PromptTemplate::diagnosis(pos) };
        let input = assemble(&template, &text, &tok, PLM_MAX_LEN).unwrap();
        let prompt = assemble(&template, "", &tok, PLM_MAX_LEN).unwrap();
        let prompt_body = &prompt.token_ids[1..prompt.len() - 1];
        let full = tok.tokenize(&text);
        let expected_len = (full.len() + prompt.len()).min(PLM_MAX_LEN);
        prop_assert_eq!(input.len(), expected_len);
        let ids = &input.token_ids;
        prop_assert_eq!(ids[0], tok.begin_id());
        prop_assert_eq!(*ids.last().unwrap(), tok.end_id());
        let kept = expected_len - prompt.len();
        let (body, prompt_part) = if front {
            (&ids[1 + prompt_body.len()..ids.len() - 1], &ids[1..1 + prompt_body.len()])
        } else {
            (&ids[1..1 + kept], &ids[1 + kept..ids.len() - 1])
        };
        prop_assert_eq!(prompt_part, prompt_body);
        prop_assert_eq!(body, &full[..kept]);
    }

    #[test]
    fn masks_sit_exactly_at_reported_positions(words in prop::collection::vec(0usize..SCENE_WORDS.len(), 0..600), front in any::<bool>()) {
        let tok = synthetic::tokenizer();
        let text: Vec<&str> = words.iter().map(|&i| SCENE_WORDS[i]).collect();
        let pos = if front { Position::Front } else { Position::Back };
        let input = assemble(&PromptTemplate::multi_task(pos), &text.join(" "), &tok, PLM_MAX_LEN).unwrap();
        let mask = tok.mask_id().unwrap();
        let found: BTreeSet<usize> = input.token_ids.iter().enumerate().filter(|(_, &t)| t == mask).map(|(i, _)| i).collect();
        let reported: BTreeSet<usize> = input.mask_positions.values().copied().collect();
        prop_assert_eq!(found, reported);
        prop_assert_eq!(input.mask_positions.len(), 2);
        prop_assert!(input.mask_positions[&Task::Fluency] < input.mask_positions[&Task::Diagnosis]);
    }
}

#[test]
fn fixed_threshold_oracle_sample() {
    let totals = [0, 3, 3, 5, 12, 12, 1, 9];
    let ad = [false, false, true, true, true, true, false, false];
    let (profiles, labels): (_, BTreeMap<_, _>) = common::profiles_from(&totals, &ad);
    let chosen = select_threshold_by_correlation(&profiles, &labels).unwrap();
    assert_eq!(chosen.threshold, common::oracle_threshold(&totals, &ad));
}
