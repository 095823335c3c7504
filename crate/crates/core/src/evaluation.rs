//! Cross-validation, seed sweeps, accuracy statistics and report tables.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{DatasetManifest, SubjectRecord};
use crate::ensemble::{accuracy, registry_rank, vote_epochs, TiePolicy};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::labels::{AdLabel, FluencyLabel};
use crate::trainer::{read_run, write_run, BackendFactory, EpochDecisions, Experiment, SystemRun};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StdMode {
    #[default]
    Population,
    Sample,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccuracyStats {
    pub mean: f64,
    pub std: f64,
    pub best: f64,
    pub n_runs: usize,
}

impl AccuracyStats {
    pub fn from_accuracies(accuracies: &[f64], mode: StdMode) -> Result<Self> {
        if accuracies.is_empty() {
            return Err(Error::invalid("statistics need at least one run"));
        }
        let n = accuracies.len() as f64;
        let mean = accuracies.iter().sum::<f64>() / n;
        let ss = accuracies.iter().map(|a| (a - mean).powi(2)).sum::<f64>();
        let std = match mode {
            StdMode::Population => (ss / n).sqrt(),
            StdMode::Sample if accuracies.len() > 1 => (ss / (n - 1.0)).sqrt(),
            StdMode::Sample => 0.0,
        };
        let best = accuracies.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Ok(AccuracyStats {
            mean,
            std,
            best,
            n_runs: accuracies.len(),
        })
    }
}

pub fn gold_labels<'a>(records: impl IntoIterator<Item = &'a SubjectRecord>) -> BTreeMap<String, AdLabel> {
    records
        .into_iter()
        .map(|r| (r.subject_id.clone(), r.ad_label))
        .collect()
}

/// Accuracy of a run's epoch-voted decisions.
pub fn voted_accuracy(
    run: &SystemRun,
    gold: &BTreeMap<String, AdLabel>,
    policy: TiePolicy,
) -> Result<f64> {
    accuracy(&vote_epochs(run, policy)?, gold)
}

/// Ten-fold (or `fold_count`-fold) cross-validation for one seed: trains on
/// the other folds, records decisions on the held-out fold, and merges the
/// held-out decisions into one run over every train subject.
pub fn run_cv(
    experiment: &Experiment,
    manifest: &DatasetManifest,
    factory: &dyn BackendFactory,
    fluency: Option<&BTreeMap<String, FluencyLabel>>,
    exec: Exec,
) -> Result<SystemRun> {
    manifest.validate_folds()?;
    let folds: Vec<usize> = (0..manifest.fold_count).collect();
    let fold_runs = exec.try_map(&folds, |&fold| {
        let (train, held_out) = manifest.fold_split(fold)?;
        if held_out.is_empty() {
            return Err(Error::Manifest(format!("fold {fold} is empty")));
        }
        experiment.run(factory, &train, &held_out, fluency)
    })?;
    merge_fold_runs(fold_runs)
}

/// Merges per-fold runs; captured epochs must line up across folds.
pub fn merge_fold_runs(fold_runs: Vec<SystemRun>) -> Result<SystemRun> {
    let mut iter = fold_runs.into_iter();
    let mut merged = iter
        .next()
        .ok_or_else(|| Error::invalid("no fold runs to merge"))?;
    merged.epoch_accuracy = vec![None; merged.epoch_decisions.len()];
    for run in iter {
        if run.epoch_decisions.len() != merged.epoch_decisions.len() {
            return Err(Error::invalid("folds captured different numbers of epochs"));
        }
        for (into, from) in merged.epoch_decisions.iter_mut().zip(run.epoch_decisions) {
            if into.epoch != from.epoch {
                return Err(Error::invalid("folds captured different epochs"));
            }
            for (subject, label) in from.decisions {
                if into.decisions.insert(subject.clone(), label).is_some() {
                    return Err(Error::invalid(format!("{subject} appears in two folds")));
                }
            }
        }
    }
    Ok(merged)
}

/// Trains on every train subject and records decisions on the test split.
pub fn run_test(
    experiment: &Experiment,
    manifest: &DatasetManifest,
    factory: &dyn BackendFactory,
    fluency: Option<&BTreeMap<String, FluencyLabel>>,
) -> Result<SystemRun> {
    let train: Vec<&SubjectRecord> = manifest.train().collect();
    let test: Vec<&SubjectRecord> = manifest.test().collect();
    if test.is_empty() {
        return Err(Error::Manifest("no test subjects".into()));
    }
    experiment.run(factory, &train, &test, fluency)
}

/// Per-subject correct counts summed over folds; equals the pooled numerator.
pub fn fold_correct_counts(
    run: &SystemRun,
    manifest: &DatasetManifest,
    policy: TiePolicy,
) -> Result<Vec<usize>> {
    let voted = vote_epochs(run, policy)?;
    let mut counts = vec![0; manifest.fold_count];
    for r in manifest.train() {
        let fold = manifest.fold_of[&r.subject_id];
        if voted.get(&r.subject_id) == Some(&r.ad_label) {
            counts[fold] += 1;
        }
    }
    Ok(counts)
}

/// Mean of per-fold accuracies, the alternative to subject pooling.
pub fn fold_averaged_accuracy(
    run: &SystemRun,
    manifest: &DatasetManifest,
    policy: TiePolicy,
) -> Result<f64> {
    let counts = fold_correct_counts(run, manifest, policy)?;
    let sizes = manifest.fold_sizes();
    Ok(counts
        .iter()
        .zip(&sizes)
        .map(|(&c, &s)| c as f64 / s as f64)
        .sum::<f64>()
        / sizes.len() as f64)
}

#[derive(Debug, Clone)]
pub struct SeedSweep {
    pub runs: Vec<SystemRun>,
    pub accuracies: Vec<f64>,
    pub stats: AccuracyStats,
}

/// Runs `experiment` once per seed (in parallel under `exec`) and
/// summarizes the epoch-voted accuracies.
pub fn sweep_seeds<F>(
    experiment: &Experiment,
    seeds: &[u64],
    gold: &BTreeMap<String, AdLabel>,
    policy: TiePolicy,
    exec: Exec,
    run_one: F,
) -> Result<SeedSweep>
where
    F: Fn(&Experiment) -> Result<SystemRun> + Sync + Send,
{
    if seeds.is_empty() {
        return Err(Error::invalid("seed sweep needs at least one seed"));
    }
    let runs = exec.try_map(seeds, |&seed| {
        run_one(&experiment.with_seed(seed)).map_err(|e| Error::Seed {
            seed,
            source: Box::new(e),
        })
    })?;
    let accuracies = runs
        .iter()
        .map(|r| voted_accuracy(r, gold, policy))
        .collect::<Result<Vec<_>>>()?;
    let stats = AccuracyStats::from_accuracies(&accuracies, StdMode::Population)?;
    Ok(SeedSweep {
        runs,
        accuracies,
        stats,
    })
}

/// Transcript condition of a table column group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Condition {
    Manual,
    ManualDisfl,
    Asr,
    AsrDisfl,
}

impl Condition {
    pub const ALL: [Condition; 4] = [
        Condition::Manual,
        Condition::ManualDisfl,
        Condition::Asr,
        Condition::AsrDisfl,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Condition::Manual => "manual",
            Condition::ManualDisfl => "manual+disfl",
            Condition::Asr => "asr",
            Condition::AsrDisfl => "asr+disfl",
        }
    }

    pub fn of(source: crate::labels::Source, disfluency: bool) -> Self {
        use crate::labels::Source;
        match (source, disfluency) {
            (Source::Manual, false) => Condition::Manual,
            (Source::Manual, true) => Condition::ManualDisfl,
            (Source::Asr, false) => Condition::Asr,
            (Source::Asr, true) => Condition::AsrDisfl,
        }
    }
}

impl std::str::FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Condition::ALL
            .into_iter()
            .find(|c| c.as_str() == s.trim())
            .ok_or_else(|| Error::invalid(format!("unknown condition {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalSet {
    Cv,
    Test,
}

impl EvalSet {
    pub fn as_str(self) -> &'static str {
        match self {
            EvalSet::Cv => "cv",
            EvalSet::Test => "test",
        }
    }
}

impl std::str::FromStr for EvalSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "cv" => Ok(EvalSet::Cv),
            "test" => Ok(EvalSet::Test),
            _ => Err(Error::invalid(format!("unknown evaluation set {s:?}"))),
        }
    }
}

/// Statistics of one system (or combination) under one condition and set.
#[derive(Debug, Clone, PartialEq)]
pub struct StatsEntry {
    pub system: String,
    pub combined: bool,
    pub condition: Condition,
    pub eval_set: EvalSet,
    pub stats: AccuracyStats,
}

const STATS_HEADER: &str = "#stats v1";

pub fn write_stats(entries: &[StatsEntry]) -> String {
    let mut out = format!("{STATS_HEADER}\n");
    for e in entries {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            e.system,
            if e.combined { "combined" } else { "single" },
            e.condition.as_str(),
            e.eval_set.as_str(),
            e.stats.mean,
            e.stats.std,
            e.stats.best,
            e.stats.n_runs
        );
    }
    out
}

pub fn read_stats(content: &str) -> Result<Vec<StatsEntry>> {
    let mut lines = content.lines().enumerate();
    if !matches!(lines.next(), Some((_, h)) if h.starts_with(STATS_HEADER)) {
        return Err(Error::Parse {
            line: 1,
            message: format!("missing {STATS_HEADER:?} header"),
        });
    }
    let mut out = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |m: String| Error::Parse {
            line: idx + 1,
            message: m,
        };
        let f: Vec<&str> = line.split('\t').collect();
        let [system, kind, condition, eval_set, mean, std, best, n] = f[..] else {
            return Err(err(format!("expected 8 fields, got {}", f.len())));
        };
        let num = |s: &str| s.parse::<f64>().map_err(|_| err(format!("bad number {s:?}")));
        out.push(StatsEntry {
            system: system.to_string(),
            combined: match kind {
                "combined" => true,
                "single" => false,
                k => return Err(err(format!("bad row kind {k:?}"))),
            },
            condition: condition.parse()?,
            eval_set: eval_set.parse()?,
            stats: AccuracyStats {
                mean: num(mean)?,
                std: num(std)?,
                best: num(best)?,
                n_runs: n.parse().map_err(|_| err(format!("bad run count {n:?}")))?,
            },
        });
    }
    Ok(out)
}

/// Report rows: single systems first (by PLM, then MLM, front, back),
/// then combinations in preset-registry order.
fn row_rank(system: &str, combined: bool) -> (u8, usize, String, u8) {
    if combined {
        return (1, registry_rank(system).unwrap_or(usize::MAX), system.to_string(), 0);
    }
    let mut parts = system.splitn(2, ':');
    let plm = parts.next().unwrap_or("").to_string();
    let kind = match parts.next().unwrap_or("") {
        "mlm" => 0,
        "prompt:front" => 1,
        "prompt:back" => 2,
        _ => 3,
    };
    (0, 0, plm, kind)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub system: String,
    pub combined: bool,
    pub cells: BTreeMap<(Condition, EvalSet), AccuracyStats>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportTable {
    pub columns: Vec<(Condition, EvalSet)>,
    pub rows: Vec<ReportRow>,
}

pub fn render_report(entries: &[StatsEntry]) -> Result<ReportTable> {
    if entries.is_empty() {
        return Err(Error::invalid("no stored runs to report"));
    }
    let mut rows: BTreeMap<(String, bool), ReportRow> = BTreeMap::new();
    let mut columns = BTreeSet::new();
    for e in entries {
        columns.insert((e.condition, e.eval_set));
        let row = rows
            .entry((e.system.clone(), e.combined))
            .or_insert_with(|| ReportRow {
                system: e.system.clone(),
                combined: e.combined,
                cells: BTreeMap::new(),
            });
        if row.cells.insert((e.condition, e.eval_set), e.stats).is_some() {
            return Err(Error::invalid(format!(
                "duplicate stats for {} / {} / {}",
                e.system,
                e.condition.as_str(),
                e.eval_set.as_str()
            )));
        }
    }
    let mut rows: Vec<ReportRow> = rows.into_values().collect();
    rows.sort_by_key(|r| row_rank(&r.system, r.combined));
    Ok(ReportTable {
        columns: columns.into_iter().collect(),
        rows,
    })
}

fn pct(x: f64) -> String {
    format!("{:.2}", x * 100.0)
}

impl ReportTable {
    /// Aligned text with Mean | Std | Best in percent per column group.
    pub fn to_text(&self) -> String {
        let mut header = vec!["System".to_string()];
        for (c, s) in &self.columns {
            for stat in ["Mean", "Std", "Best"] {
                header.push(format!("{}/{} {stat}", c.as_str(), s.as_str()));
            }
        }
        let mut table = vec![header];
        for row in &self.rows {
            let mut line = vec![row.system.clone()];
            for col in &self.columns {
                match row.cells.get(col) {
                    Some(st) => line.extend([pct(st.mean), pct(st.std), pct(st.best)]),
                    None => line.extend(["-".to_string(), "-".to_string(), "-".to_string()]),
                }
            }
            table.push(line);
        }
        let widths: Vec<usize> = (0..table[0].len())
            .map(|i| table.iter().map(|r| r[i].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for (n, line) in table.iter().enumerate() {
            let cells: Vec<String> = line
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (cell, w))| {
                    if i == 0 {
                        format!("{cell:<w$}")
                    } else {
                        format!("{cell:>w$}")
                    }
                })
                .collect();
            out.push_str(cells.join("  ").trim_end());
            out.push('\n');
            if n == 0 {
                let rule: usize = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
                out.push_str(&"-".repeat(rule));
                out.push('\n');
            }
        }
        out
    }

    /// One line per populated cell.
    pub fn to_tsv(&self) -> String {
        let mut out = "system\tkind\tcondition\teval_set\tmean\tstd\tbest\tn_runs\n".to_string();
        for row in &self.rows {
            for ((c, s), st) in &row.cells {
                let _ = writeln!(
                    out,
                    "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                    row.system,
                    if row.combined { "combined" } else { "single" },
                    c.as_str(),
                    s.as_str(),
                    pct(st.mean),
                    pct(st.std),
                    pct(st.best),
                    st.n_runs
                );
            }
        }
        out
    }
}

/// On-disk layout of stored runs under one output root:
///
/// ```text
/// runs/<condition>/<eval_set>/<system>/seed-<n>.tsv   one decision file per (system, seed)
/// combined/<condition>/<eval_set>/<preset>.tsv         voted decisions per seed tuple
/// stats/<condition>/<system>.tsv                       stats per (system, condition)
/// report.txt, report.tsv
/// ```
#[derive(Debug, Clone)]
pub struct RunStore {
    pub root: PathBuf,
}

pub fn file_stem(system: &str) -> String {
    system.replace([':', '/'], "_")
}

fn write_file(path: &Path, content: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, content).map_err(|e| Error::io(path, e))
}

impl RunStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunStore { root: root.into() }
    }

    pub fn run_path(&self, condition: Condition, set: EvalSet, system: &str, seed: u64) -> PathBuf {
        self.root
            .join("runs")
            .join(condition.as_str())
            .join(set.as_str())
            .join(file_stem(system))
            .join(format!("seed-{seed}.tsv"))
    }

    pub fn combined_path(&self, condition: Condition, set: EvalSet, preset: &str) -> PathBuf {
        self.root
            .join("combined")
            .join(condition.as_str())
            .join(set.as_str())
            .join(format!("{}.tsv", file_stem(preset)))
    }

    pub fn stats_path(&self, condition: Condition, system: &str) -> PathBuf {
        self.root
            .join("stats")
            .join(condition.as_str())
            .join(format!("{}.tsv", file_stem(system)))
    }

    pub fn has_run(&self, condition: Condition, set: EvalSet, system: &str, seed: u64) -> bool {
        self.run_path(condition, set, system, seed).is_file()
    }

    pub fn save_run(&self, condition: Condition, set: EvalSet, run: &SystemRun) -> Result<PathBuf> {
        let path = self.run_path(condition, set, &run.meta.system_id, run.meta.seed);
        write_file(&path, &write_run(run))?;
        Ok(path)
    }

    pub fn save_text(&self, path: &Path, content: &str) -> Result<()> {
        write_file(path, content)
    }

    /// Every stored single-system run for one condition and set, sorted by
    /// (system, seed).
    pub fn load_runs(&self, condition: Condition, set: EvalSet) -> Result<Vec<SystemRun>> {
        let dir = self.root.join("runs").join(condition.as_str()).join(set.as_str());
        if !dir.is_dir() {
            return Ok(Vec::new());
        }
        let mut runs = Vec::new();
        for system_dir in sorted_entries(&dir)? {
            if !system_dir.is_dir() {
                continue;
            }
            for file in sorted_entries(&system_dir)? {
                if file.extension().is_some_and(|e| e == "tsv") {
                    let text = fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
                    runs.push(read_run(&text).map_err(|e| Error::Rejected {
                        subject_id: file.display().to_string(),
                        message: e.to_string(),
                    })?);
                }
            }
        }
        runs.sort_by(|a, b| {
            (a.meta.system_id.as_str(), a.meta.seed).cmp(&(b.meta.system_id.as_str(), b.meta.seed))
        });
        Ok(runs)
    }

    /// Replaces the stats file for `system` under `condition`.
    pub fn save_stats(&self, condition: Condition, system: &str, entries: &[StatsEntry]) -> Result<()> {
        write_file(&self.stats_path(condition, system), &write_stats(entries))
    }

    pub fn load_all_stats(&self) -> Result<Vec<StatsEntry>> {
        let dir = self.root.join("stats");
        if !dir.is_dir() {
            return Ok(Vec::new());
        }
        let mut out = Vec::new();
        for cond_dir in sorted_entries(&dir)? {
            if !cond_dir.is_dir() {
                continue;
            }
            for file in sorted_entries(&cond_dir)? {
                let text = fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
                out.extend(read_stats(&text)?);
            }
        }
        Ok(out)
    }
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<_>>()?;
    v.sort();
    Ok(v)
}

/// Stats entry from the runs of one system (or the combined vectors of one preset).
pub fn stats_entry(
    system: &str,
    combined: bool,
    condition: Condition,
    eval_set: EvalSet,
    accuracies: &[f64],
) -> Result<StatsEntry> {
    Ok(StatsEntry {
        system: system.to_string(),
        combined,
        condition,
        eval_set,
        stats: AccuracyStats::from_accuracies(accuracies, StdMode::Population)?,
    })
}

/// Keeps only the captured epochs; used when a run is loaded without its accuracies.
pub fn epochs_of(run: &SystemRun) -> Vec<usize> {
    run.epoch_decisions.iter().map(|e: &EpochDecisions| e.epoch).collect()
}
