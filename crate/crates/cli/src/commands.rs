use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use adprompt::backend::toy::{ToyFactory, MAX_TOY_VOCAB};
use adprompt::backend::tokenizer::pre_tokenize;
use adprompt::backend::WordPieceTokenizer;
use adprompt::corpus::{build_manifest, load_transcript, DatasetManifest};
use adprompt::disfluency::{
    phi_at, profile, read_profiles, select_threshold_by_correlation,
    select_threshold_by_split_match, write_profiles, DisfluencyProfile, FluencyLabeling,
};
use adprompt::evaluation::{gold_labels, Condition, EvalSet, RunStore, StatsEntry};
use adprompt::exec::with_workers;
use adprompt::pipeline::{corpus_source, write_report, Workspace};
use adprompt::prompting::{Position, PromptTemplate, Segment};
use adprompt::trainer::Experiment;
use adprompt::{AdLabel, FluencyLabel, Source, Split};
use anyhow::{anyhow, bail, Context, Result};

use crate::config::{RunConfig, ThresholdMode, ThresholdSetting};

pub const LABELS_FILE: &str = "labels.tsv";
pub const MANIFEST_FILE: &str = "manifest.tsv";
pub const DISFLUENCY_FILE: &str = "disfluency.tsv";

fn extension(source: Source) -> &'static str {
    match source {
        Source::Manual => "cha",
        Source::Asr => "txt",
    }
}

/// One `id, split, label` row of the labels file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelRow {
    pub id: String,
    pub split: Split,
    pub label: AdLabel,
}

/// Parses a tab-separated labels file. Blank lines, `#` comments and a
/// leading `id` header row are skipped.
pub fn parse_labels(text: &str) -> Result<Vec<LabelRow>> {
    let mut rows = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        if rows.is_empty() && fields[0].eq_ignore_ascii_case("id") {
            continue;
        }
        let [id, split, label] = fields[..] else {
            bail!("{LABELS_FILE} line {}: expected 3 tab-separated fields", i + 1);
        };
        if !seen.insert(id.to_string()) {
            bail!("{LABELS_FILE} line {}: duplicate subject {id:?}", i + 1);
        }
        rows.push(LabelRow {
            id: id.to_string(),
            split: split.parse().with_context(|| format!("{LABELS_FILE} line {}", i + 1))?,
            label: label.parse().with_context(|| format!("{LABELS_FILE} line {}", i + 1))?,
        });
    }
    Ok(rows)
}

fn class_counts<'a>(records: impl Iterator<Item = &'a adprompt::corpus::SubjectRecord>) -> (usize, usize) {
    records.fold((0, 0), |(ad, non), r| match r.ad_label {
        AdLabel::Ad => (ad + 1, non),
        AdLabel::NonAd => (ad, non + 1),
    })
}

pub fn ingest(cfg: &RunConfig) -> Result<DatasetManifest> {
    let root = fs::canonicalize(&cfg.data_root)
        .with_context(|| format!("data root {}", cfg.data_root.display()))?;
    let labels_path = root.join(LABELS_FILE);
    if !labels_path.is_file() {
        bail!("no {LABELS_FILE} in {}", root.display());
    }
    let rows = parse_labels(&fs::read_to_string(&labels_path)?)?;
    if rows.is_empty() {
        bail!("{} lists no subjects", labels_path.display());
    }

    let ext = extension(cfg.source);
    let labelled: BTreeSet<&str> = rows.iter().map(|r| r.id.as_str()).collect();
    for entry in fs::read_dir(&root)? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) != Some(ext) {
            continue;
        }
        if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
            if !labelled.contains(stem) {
                eprintln!("warning: {} has no row in {LABELS_FILE}; skipped", path.display());
            }
        }
    }

    let mut records = Vec::with_capacity(rows.len());
    for row in &rows {
        let path = root.join(format!("{}.{ext}", row.id));
        if !path.is_file() {
            bail!("subject {:?} has no transcript {}", row.id, path.display());
        }
        let record = load_transcript(&path, &row.id, row.split, row.label, cfg.source, &cfg.lexicon)?;
        record.ensure_admissible()?;
        records.push(record);
    }
    let manifest = build_manifest(records, cfg.folds, cfg.fold_seed)?;
    fs::create_dir_all(&cfg.output_dir)?;
    manifest.save(&cfg.output_dir.join(MANIFEST_FILE))?;

    let (tr_ad, tr_non) = class_counts(manifest.train());
    let (te_ad, te_non) = class_counts(manifest.test());
    println!(
        "ingested {} {} transcripts: train {} (AD {tr_ad}, non-AD {tr_non}), test {} (AD {te_ad}, non-AD {te_non}), {} folds",
        manifest.records.len(),
        cfg.source,
        manifest.train_count,
        manifest.test_count,
        manifest.fold_count,
    );
    Ok(manifest)
}

pub fn load_manifest(cfg: &RunConfig) -> Result<DatasetManifest> {
    let path = cfg.output_dir.join(MANIFEST_FILE);
    if !path.is_file() {
        bail!("no manifest at {}; run `adprompt ingest` first", path.display());
    }
    DatasetManifest::load(&path, &cfg.lexicon).with_context(|| format!("loading {}", path.display()))
}

fn read_labeling(path: &Path) -> Result<(Vec<DisfluencyProfile>, FluencyLabeling)> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    read_profiles(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn disfluency(cfg: &RunConfig) -> Result<FluencyLabeling> {
    let manifest = load_manifest(cfg)?;
    let profiles: Vec<DisfluencyProfile> =
        manifest.records.iter().map(|r| profile(r, &cfg.lexicon)).collect();
    let train_ids: BTreeSet<&str> = manifest.train().map(|r| r.subject_id.as_str()).collect();
    let train: Vec<DisfluencyProfile> = profiles
        .iter()
        .filter(|p| train_ids.contains(p.subject_id.as_str()))
        .cloned()
        .collect();
    let gold = gold_labels(manifest.train());

    let threshold = match cfg.threshold {
        ThresholdSetting::Fixed(t) => t,
        ThresholdSetting::Mode(ThresholdMode::Auto) => {
            select_threshold_by_correlation(&train, &gold)?.threshold
        }
        ThresholdSetting::Mode(ThresholdMode::Match) => {
            let path = cfg
                .reference_labels
                .as_deref()
                .ok_or_else(|| anyhow!("threshold \"match\" needs reference_labels"))?;
            let (_, reference) = read_labeling(path)?;
            select_threshold_by_split_match(&train, &reference)?.threshold
        }
    };
    let labeling = FluencyLabeling::at_threshold(&profiles, threshold);
    let path = cfg.output_dir.join(DISFLUENCY_FILE);
    fs::write(&path, write_profiles(&profiles, &labeling)?)
        .with_context(|| format!("writing {}", path.display()))?;

    let train_labels = FluencyLabeling::at_threshold(&train, threshold);
    println!(
        "threshold {threshold}: {} stumbling, {} fluent; train split {}/{} (phi {:.4})",
        labeling.stumbling_count,
        labeling.fluent_count,
        train_labels.stumbling_count,
        train_labels.fluent_count,
        phi_at(&train, &gold, threshold).value(),
    );
    Ok(labeling)
}

/// Reference-model tokenizer: prompt and label words first, then the most
/// frequent words of the training transcripts.
pub fn toy_tokenizer(cfg: &RunConfig, manifest: &DatasetManifest) -> Result<WordPieceTokenizer> {
    let mut required: Vec<String> = Vec::new();
    for text in [&cfg.templates.diagnosis, &cfg.templates.multi_task] {
        for segment in PromptTemplate::parse(text, Position::Back)?.segments {
            if let Segment::Text(t) = segment {
                required.extend(pre_tokenize(&t));
            }
        }
    }
    required.extend(cfg.verbalizer.all_words().map(str::to_lowercase));
    let mut seen = BTreeSet::new();
    required.retain(|w| seen.insert(w.clone()));
    let required: Vec<&str> = required.iter().map(String::as_str).collect();
    Ok(WordPieceTokenizer::from_corpus(
        manifest.train().map(|r| r.merged_text.as_str()),
        &required,
        MAX_TOY_VOCAB,
    )?)
}

fn print_stats(what: &str, s: &StatsEntry) {
    println!(
        "{what} {} [{}/{}]: mean {:.4} std {:.4} best {:.4} over {} runs",
        s.system,
        s.condition.as_str(),
        s.eval_set.as_str(),
        s.stats.mean,
        s.stats.std,
        s.stats.best,
        s.stats.n_runs,
    );
}

fn seed_list(seeds: &[u64]) -> String {
    if seeds.is_empty() {
        return "none".into();
    }
    seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(",")
}

pub fn train(cfg: &RunConfig, resume: bool) -> Result<StatsEntry> {
    if !cfg.toy_backend {
        bail!(
            "no masked-LM runtime is linked into this build; pass --toy-backend \
             (or set toy_backend = true) to train the reference model"
        );
    }
    let manifest = load_manifest(cfg)?;
    let factory = ToyFactory::new(toy_tokenizer(cfg, &manifest)?, cfg.toy);

    let config = cfg.train_config(cfg.seeds[0]);
    let mut experiment = match cfg.template()? {
        Some(template) => Experiment::prompt(config, template),
        None => Experiment::mlm(config),
    };
    experiment.verbalizer = cfg.verbalizer.clone();

    let fluency: Option<BTreeMap<String, FluencyLabel>> = if cfg.train.multi_task {
        let path = cfg.output_dir.join(DISFLUENCY_FILE);
        if !path.is_file() {
            bail!("multi-task training needs {}; run `adprompt disfluency` first", path.display());
        }
        Some(read_labeling(&path)?.1.labels)
    } else {
        None
    };

    let store = RunStore::new(&cfg.output_dir);
    let set = cfg.train.eval_set;
    let outcome = with_workers(cfg.workers, |exec| {
        let ws = Workspace {
            store: &store,
            manifest: &manifest,
            exec,
            tie_policy: cfg.tie_policy,
        };
        ws.train(&experiment, &factory, fluency.as_ref(), set, &cfg.seeds, resume)
    })??;
    println!(
        "trained seeds {}; reused seeds {}",
        seed_list(&outcome.trained),
        seed_list(&outcome.reused)
    );
    print_stats("system", &outcome.stats);
    Ok(outcome.stats)
}

pub fn combine(
    cfg: &RunConfig,
    condition: Option<Condition>,
    set: EvalSet,
    presets: &[String],
) -> Result<Vec<StatsEntry>> {
    let manifest = load_manifest(cfg)?;
    let condition = match condition {
        Some(c) => c,
        None => Condition::of(corpus_source(&manifest)?, cfg.train.multi_task),
    };
    let store = RunStore::new(&cfg.output_dir);
    let entries = with_workers(cfg.workers, |exec| {
        let ws = Workspace {
            store: &store,
            manifest: &manifest,
            exec,
            tie_policy: cfg.tie_policy,
        };
        presets
            .iter()
            .map(|p| {
                ws.combine(condition, set, p, &cfg.train.plm)
                    .with_context(|| format!("combining preset {p:?}"))
            })
            .collect::<Result<Vec<_>>>()
    })??;
    for e in &entries {
        print_stats("combined", e);
    }
    Ok(entries)
}

pub fn report(cfg: &RunConfig) -> Result<PathBuf> {
    let store = RunStore::new(&cfg.output_dir);
    if store.load_all_stats()?.is_empty() {
        bail!(
            "no runs recorded under {}; train at least one system first",
            cfg.output_dir.display()
        );
    }
    let table = write_report(&store)?;
    print!("{}", table.to_text());
    Ok(store.root.join("report.txt"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_skip_header_and_comments() {
        let rows = parse_labels("id\tsplit\tlabel\n# note\nS1\ttrain\tAD\n\nS2\ttest\tcc\n").unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[1].label, AdLabel::NonAd);
        assert_eq!(rows[1].split, Split::Test);
    }

    #[test]
    fn labels_reject_duplicates_and_short_rows() {
        assert!(parse_labels("S1\ttrain\tAD\nS1\ttest\tAD\n").is_err());
        let err = parse_labels("S1\ttrain\n").unwrap_err().to_string();
        assert!(err.contains("line 1"), "{err}");
    }
}
