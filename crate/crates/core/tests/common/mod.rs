//! Independent oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use adprompt::backend::toy::{ToyConfig, ToyFactory, TOY_LEARNING_RATE};
use adprompt::corpus::{build_manifest, load_transcript, Utterance, PARTICIPANT_TIER};
use adprompt::disfluency::{profile, select_threshold_by_correlation, write_profiles, DisfluencyLexicon, DisfluencyProfile};
use adprompt::ensemble::{TiePolicy, PRESET_NAMES};
use adprompt::evaluation::{Condition, EvalSet, RunStore};
use adprompt::pipeline::{write_report, Workspace};
use adprompt::prompting::{Position, PromptTemplate};
use adprompt::synthetic::{self, SyntheticSpec};
use adprompt::trainer::{Experiment, TrainConfig};
use adprompt::{AdLabel, Exec, Source, Split};

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/chat")
}

pub struct ChatFixture {
    pub name: String,
    pub source: String,
    pub expected: String,
}

pub fn chat_fixtures() -> Vec<ChatFixture> {
    let mut names: Vec<String> = fs::read_dir(fixture_dir())
        .unwrap()
        .filter_map(|e| {
            let p = e.unwrap().path();
            (p.extension()? == "cha").then(|| p.file_stem().unwrap().to_string_lossy().into_owned())
        })
        .collect();
    names.sort();
    names
        .into_iter()
        .map(|name| ChatFixture {
            source: fs::read_to_string(fixture_dir().join(format!("{name}.cha"))).unwrap(),
            expected: fs::read_to_string(fixture_dir().join(format!("{name}.expected"))).unwrap(),
            name,
        })
        .collect()
}

/// Participant tokens and event counts in the `.expected` layout.
pub fn render_parse(utterances: &[Utterance]) -> String {
    let par: Vec<&Utterance> = utterances.iter().filter(|u| u.tier == PARTICIPANT_TIER).collect();
    let tokens: Vec<&str> = par.iter().flat_map(|u| u.tokens.iter().map(String::as_str)).collect();
    let count = |cat: adprompt::corpus::EventCategory| {
        par.iter().flat_map(|u| &u.events).filter(|e| e.category == cat).count()
    };
    use adprompt::corpus::EventCategory as C;
    format!(
        "tokens\t{}\ninterjection\t{}\npause\t{}\naction\t{}\n",
        tokens.join(" "),
        count(C::Interjection),
        count(C::Pause),
        count(C::Action)
    )
}

/// Event counts found by scanning the raw participant lines character by
/// character, independent of the parser's tokenization.
pub fn scan_event_counts(source: &str, lexicon: &DisfluencyLexicon) -> (usize, usize, usize) {
    let mut bodies: Vec<String> = Vec::new();
    let mut in_par = false;
    for line in source.lines() {
        if line.starts_with('\t') {
            if in_par {
                bodies.last_mut().unwrap().push_str(line);
            }
            continue;
        }
        in_par = line.starts_with("*PAR:");
        if in_par {
            bodies.push(line["*PAR:".len()..].to_string());
        }
    }
    let (mut int, mut pause, mut action) = (0, 0, 0);
    for body in bodies {
        let chars: Vec<char> = body.chars().collect();
        let mut depth = 0;
        let mut i = 0;
        let mut word = String::new();
        let flush = |w: &mut String, int: &mut usize, pause: &mut usize, action: &mut usize| {
            if w.starts_with("&=") {
                *action += 1;
            } else if w == "(.)" || w == "(..)" || w == "(...)" {
                *pause += 1;
            } else {
                let bare = w.trim_start_matches('&').trim_start_matches('-');
                if lexicon.interjections.contains(bare) {
                    *int += 1;
                }
            }
            w.clear();
        };
        while i < chars.len() {
            let c = chars[i];
            match c {
                '[' => depth += 1,
                ']' => depth -= 1,
                _ if depth > 0 => {}
                c if c.is_whitespace() => flush(&mut word, &mut int, &mut pause, &mut action),
                c => word.push(c),
            }
            i += 1;
        }
        flush(&mut word, &mut int, &mut pause, &mut action);
    }
    (int, pause, action)
}

/// Counting vote over booleans (true = AD).
pub fn oracle_vote(ad: &[bool], policy: TiePolicy) -> AdLabel {
    let yes = ad.iter().filter(|b| **b).count();
    let no = ad.len() - yes;
    if yes * 2 > ad.len() {
        AdLabel::Ad
    } else if no * 2 > ad.len() || policy == TiePolicy::PreferNonAd {
        AdLabel::NonAd
    } else {
        AdLabel::Ad
    }
}

/// Pearson correlation of two 0/1 vectors computed from raw moments.
pub fn pearson_binary(x: &[bool], y: &[bool]) -> f64 {
    let n = x.len() as f64;
    let xs: Vec<f64> = x.iter().map(|&b| b as u8 as f64).collect();
    let ys: Vec<f64> = y.iter().map(|&b| b as u8 as f64).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let cov: f64 = xs.iter().zip(&ys).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = xs.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ys.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        0.0
    } else {
        cov / (vx * vy).sqrt()
    }
}

/// Exhaustive threshold maximizing the phi correlation; smallest t on ties.
pub fn oracle_threshold(totals: &[u32], ad: &[bool]) -> u32 {
    let max = totals.iter().copied().max().unwrap_or(0);
    let mut best = (0, f64::NEG_INFINITY);
    for t in 0..=max + 1 {
        let x: Vec<bool> = totals.iter().map(|&c| c >= t).collect();
        let r = pearson_binary(&x, ad);
        if r > best.1 + 1e-12 {
            best = (t, r);
        }
    }
    best.0
}

pub fn profiles_from(totals: &[u32], ad: &[bool]) -> (Vec<DisfluencyProfile>, BTreeMap<String, AdLabel>) {
    let profiles = totals
        .iter()
        .enumerate()
        .map(|(i, &t)| DisfluencyProfile::new(format!("s{i:03}"), t, 0, 0))
        .collect();
    let labels = ad
        .iter()
        .enumerate()
        .map(|(i, &a)| (format!("s{i:03}"), if a { AdLabel::Ad } else { AdLabel::NonAd }))
        .collect();
    (profiles, labels)
}

/// Relative agreement with a floor for components that are both tiny.
pub fn close(analytic: f64, numeric: f64, rel: f64) -> bool {
    let scale = analytic.abs().max(numeric.abs());
    scale < 1e-7 || (analytic - numeric).abs() <= rel * scale
}

pub fn toy_factory() -> ToyFactory {
    ToyFactory::new(synthetic::tokenizer(), ToyConfig::default())
}

pub fn toy_prompt_config(plm: &str, position: Position, seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig::prompt(plm, position, seed);
    cfg.optimizer.lr = TOY_LEARNING_RATE;
    cfg
}

pub fn toy_mlm_config(plm: &str, seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig::mlm(plm, seed);
    cfg.optimizer.lr = TOY_LEARNING_RATE;
    cfg
}

/// Ingest, disfluency thresholding, cross-validated and test training of
/// every single system for two PLMs and two seeds, every combination
/// preset, and the report, all written under `out`.
pub fn run_fixture_pipeline(out: &Path, exec: Exec) {
    let spec = SyntheticSpec {
        train_per_class: 10,
        test_per_class: 4,
        ..SyntheticSpec::default()
    };
    let corpus = synthetic::generate(&spec).unwrap();
    let data = out.join("data");
    fs::create_dir_all(&data).unwrap();
    let lexicon = DisfluencyLexicon::default();
    let mut records = Vec::new();
    for r in &corpus.records {
        let path = data.join(format!("{}.cha", r.subject_id));
        fs::write(&path, &corpus.chat[&r.subject_id]).unwrap();
        records.push(
            load_transcript(&path, &r.subject_id, r.split, r.ad_label, Source::Manual, &lexicon).unwrap(),
        );
    }
    let manifest = build_manifest(records, 4, 11).unwrap();
    manifest.save(&out.join("manifest.tsv")).unwrap();

    let train: Vec<_> = manifest.records.iter().filter(|r| r.split == Split::Train).collect();
    let profiles: Vec<_> = train.iter().map(|r| profile(r, &lexicon)).collect();
    let labels = train.iter().map(|r| (r.subject_id.clone(), r.ad_label)).collect();
    let labeling = select_threshold_by_correlation(&profiles, &labels).unwrap();
    fs::write(out.join("disfluency.tsv"), write_profiles(&profiles, &labeling).unwrap()).unwrap();

    let store = RunStore::new(out.join("results"));
    let ws = Workspace {
        store: &store,
        manifest: &manifest,
        exec,
        tie_policy: TiePolicy::PoolSubDecisions,
    };
    let factory = toy_factory();
    let seeds = [1, 2];
    for plm in ["bert", "roberta"] {
        let mut experiments = vec![Experiment::mlm(toy_mlm_config(plm, 0))];
        for pos in [Position::Front, Position::Back] {
            experiments.push(Experiment::prompt(toy_prompt_config(plm, pos, 0), PromptTemplate::diagnosis(pos)));
        }
        for exp in &experiments {
            for set in [EvalSet::Cv, EvalSet::Test] {
                ws.train(exp, &factory, None, set, &seeds, false).unwrap();
            }
        }
    }
    // one multi-task system so the disfluency condition is exercised too
    let mut mt = toy_prompt_config("bert", Position::Back, 0);
    mt.multi_task = true;
    let exp = Experiment::prompt(mt, PromptTemplate::multi_task(Position::Back));
    ws.train(&exp, &factory, Some(&labeling.labels), EvalSet::Test, &seeds, false).unwrap();

    let condition = Condition::Manual;
    for set in [EvalSet::Cv, EvalSet::Test] {
        for name in PRESET_NAMES {
            ws.combine(condition, set, name, "bert").unwrap();
        }
    }
    write_report(&store).unwrap();
}

/// Every file under `root` with its bytes, keyed by relative path.
pub fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

/// Central-difference check of `prompt_loss` over `draws` random logit
/// vectors, both tasks active; also compares the loss against a directly
/// coded softmax cross-entropy. Returns the number of mismatching draws.
pub fn prompt_loss_gradient_failures(draws: u64) -> usize {
    use adprompt::backend::MaskLogits;
    use adprompt::prompting::{validate_verbalizer, Verbalizer};
    use adprompt::trainer::prompt_loss;
    use adprompt::Task;
    use rand::Rng;

    let tok = synthetic::tokenizer();
    let resolved = validate_verbalizer(&Verbalizer::default(), &tok).unwrap();
    let vocab = adprompt::backend::Tokenizer::vocab_size(&tok);
    let mut failures = 0;
    for draw in 0..draws {
        let mut rng = adprompt::rng::stream(draw, "fd-prompt-loss", 0);
        let mut by_task = BTreeMap::new();
        let mut targets = BTreeMap::new();
        let mut weights = BTreeMap::new();
        for task in [Task::Diagnosis, Task::Fluency] {
            by_task.insert(task, (0..vocab).map(|_| rng.random_range(-4.0..4.0)).collect::<Vec<f64>>());
            targets.insert(task, rng.random_range(0..2usize));
            weights.insert(task, rng.random_range(0.0..1.0));
        }
        let logits = MaskLogits { by_task };
        let out = prompt_loss(&logits, &resolved, &targets, &weights).unwrap();

        let mut oracle = 0.0;
        for (task, w) in &weights {
            let [a, b] = resolved.ids(*task);
            let v = &logits.by_task[task];
            let (za, zb) = (v[a as usize].exp(), v[b as usize].exp());
            let p_true = if targets[task] == 0 { za / (za + zb) } else { zb / (za + zb) };
            oracle += -w * p_true.ln();
        }
        let mut ok = (out.loss - oracle).abs() < 1e-10;

        let h = 1e-6;
        for task in [Task::Diagnosis, Task::Fluency] {
            for k in 0..vocab {
                let mut plus = logits.clone();
                plus.by_task.get_mut(&task).unwrap()[k] += h;
                let mut minus = logits.clone();
                minus.by_task.get_mut(&task).unwrap()[k] -= h;
                let fd = (prompt_loss(&plus, &resolved, &targets, &weights).unwrap().loss
                    - prompt_loss(&minus, &resolved, &targets, &weights).unwrap().loss)
                    / (2.0 * h);
                ok &= close(out.grads[&task][k], fd, 1e-4);
            }
        }
        if !ok {
            failures += 1;
        }
    }
    failures
}

/// Central-difference check of the reference model's full parameter
/// gradient for a random linear functional of its logits at two positions.
/// Returns the number of mismatching draws.
pub fn toy_gradient_failures(draws: u64) -> usize {
    use adprompt::backend::toy::ToyMlm;
    use adprompt::backend::{MaskedLm, Pooling, WordPieceTokenizer};
    use rand::Rng;
    use std::sync::Arc;

    let tok = Arc::new(WordPieceTokenizer::new(["a", "b", "c", "d", "e", "f"]));
    let vocab = 10;
    let mut failures = 0;
    for draw in 0..draws {
        let mut rng = adprompt::rng::stream(draw, "fd-toy", 0);
        let config = ToyConfig {
            dim: 4,
            hidden: 5,
            max_len: 8,
            pooling: Pooling::Begin,
            init_scale: 0.8,
            position_init_scale: 0.5,
        };
        let mut model = ToyMlm::new("fd", Arc::clone(&tok), config, draw).unwrap();
        let len = rng.random_range(2..=8);
        let tokens: Vec<u32> = (0..len).map(|_| rng.random_range(0..vocab as u32)).collect();
        let p0 = rng.random_range(0..len);
        let p1 = (p0 + rng.random_range(1..len)) % len;
        let positions = [p0, p1];
        let coef: Vec<Vec<f64>> = (0..2)
            .map(|_| (0..vocab).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let objective = |m: &ToyMlm| -> f64 {
            m.logits(&tokens, &positions)
                .unwrap()
                .iter()
                .zip(&coef)
                .map(|(l, c)| l.iter().zip(c).map(|(a, b)| a * b).sum::<f64>())
                .sum()
        };
        model.zero_grad();
        model.accumulate_gradient(&tokens, &positions, &coef).unwrap();
        let analytic = model.gradient().to_vec();
        let base = model.parameters().to_vec();
        let h = 1e-6;
        let mut ok = true;
        for k in 0..base.len() {
            let mut p = base.clone();
            p[k] += h;
            model.set_parameters(&p).unwrap();
            let up = objective(&model);
            p[k] -= 2.0 * h;
            model.set_parameters(&p).unwrap();
            let down = objective(&model);
            ok &= close(analytic[k], (up - down) / (2.0 * h), 1e-4);
        }
        if !ok {
            failures += 1;
        }
    }
    failures
}
