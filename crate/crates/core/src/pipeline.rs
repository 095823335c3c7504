//! Stored, resumable experiment steps shared by the command-line tool and
//! the end-to-end tests: train systems over seeds, combine them with a
//! preset, and render the report.

use std::collections::BTreeMap;

use crate::corpus::DatasetManifest;
use crate::ensemble::{accuracy, combine_runs_with, preset, write_combined, TiePolicy};
use crate::error::{Error, Result};
use crate::evaluation::{
    gold_labels, render_report, run_cv, run_test, stats_entry, voted_accuracy, Condition, EvalSet,
    ReportTable, RunStore, StatsEntry,
};
use crate::exec::Exec;
use crate::labels::{AdLabel, FluencyLabel, Source};
use crate::trainer::{read_run, BackendFactory, Experiment, SystemRun};

/// The single transcript source of a manifest.
pub fn corpus_source(manifest: &DatasetManifest) -> Result<Source> {
    let mut sources = manifest.records.iter().map(|r| r.source);
    let first = sources
        .next()
        .ok_or_else(|| Error::Manifest("manifest has no records".into()))?;
    if sources.any(|s| s != first) {
        return Err(Error::Manifest("manifest mixes manual and ASR transcripts".into()));
    }
    Ok(first)
}

pub fn gold_for(manifest: &DatasetManifest, set: EvalSet) -> BTreeMap<String, AdLabel> {
    match set {
        EvalSet::Cv => gold_labels(manifest.train()),
        EvalSet::Test => gold_labels(manifest.test()),
    }
}

pub struct Workspace<'a> {
    pub store: &'a RunStore,
    pub manifest: &'a DatasetManifest,
    pub exec: Exec,
    pub tie_policy: TiePolicy,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub condition: Condition,
    pub trained: Vec<u64>,
    /// Seeds whose decision file already existed and was reused.
    pub reused: Vec<u64>,
    pub stats: StatsEntry,
}

impl Workspace<'_> {
    pub fn condition(&self, experiment: &Experiment) -> Result<Condition> {
        Ok(Condition::of(corpus_source(self.manifest)?, experiment.config.multi_task))
    }

    /// Runs `experiment` for every seed not yet stored (all seeds unless
    /// `resume`), then refreshes the system's statistics.
    pub fn train(
        &self,
        experiment: &Experiment,
        factory: &dyn BackendFactory,
        fluency: Option<&BTreeMap<String, FluencyLabel>>,
        set: EvalSet,
        seeds: &[u64],
        resume: bool,
    ) -> Result<TrainOutcome> {
        if seeds.is_empty() {
            return Err(Error::invalid("no seeds to train"));
        }
        experiment.config.validate()?;
        let condition = self.condition(experiment)?;
        let system = experiment.config.system_id();
        let (reused, todo): (Vec<u64>, Vec<u64>) = seeds
            .iter()
            .partition(|&&s| resume && self.store.has_run(condition, set, &system, s));

        let runs = self.exec.try_map(&todo, |&seed| {
            let exp = experiment.with_seed(seed);
            let run = match set {
                EvalSet::Cv => run_cv(&exp, self.manifest, factory, fluency, self.exec),
                EvalSet::Test => run_test(&exp, self.manifest, factory, fluency),
            };
            run.map_err(|e| Error::Seed {
                seed,
                source: Box::new(e),
            })
        })?;
        for run in &runs {
            self.store.save_run(condition, set, run)?;
        }

        let gold = gold_for(self.manifest, set);
        let mut accuracies = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let run = match runs.iter().find(|r| r.meta.seed == seed) {
                Some(r) => r.clone(),
                None => self.load_run(condition, set, &system, seed)?,
            };
            accuracies.push(voted_accuracy(&run, &gold, self.tie_policy)?);
        }
        let stats = stats_entry(&system, false, condition, set, &accuracies)?;
        self.upsert_stats(&stats)?;
        Ok(TrainOutcome {
            condition,
            trained: todo,
            reused,
            stats,
        })
    }

    fn load_run(&self, condition: Condition, set: EvalSet, system: &str, seed: u64) -> Result<SystemRun> {
        let path = self.store.run_path(condition, set, system, seed);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        read_run(&text)
    }

    fn upsert_stats(&self, entry: &StatsEntry) -> Result<()> {
        let path = self.store.stats_path(entry.condition, &entry.system);
        let mut entries = match std::fs::read_to_string(&path) {
            Ok(text) => crate::evaluation::read_stats(&text)?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(Error::io(&path, e)),
        };
        entries.retain(|e| !(e.eval_set == entry.eval_set && e.combined == entry.combined));
        entries.push(entry.clone());
        entries.sort_by_key(|e| e.eval_set);
        self.store.save_stats(entry.condition, &entry.system, &entries)
    }

    /// Combines stored runs with a registry preset and records the
    /// combined accuracies.
    pub fn combine(
        &self,
        condition: Condition,
        set: EvalSet,
        preset_name: &str,
        plm: &str,
    ) -> Result<StatsEntry> {
        let preset = preset(preset_name, plm)?;
        let runs = self.store.load_runs(condition, set)?;
        let vectors = combine_runs_with(self.exec, &runs, &preset, self.tie_policy)?;
        let members: Vec<&SystemRun> = runs
            .iter()
            .filter(|r| preset.members.contains(&r.meta.system_id))
            .collect();
        let path = self.store.combined_path(condition, set, &preset.name);
        self.store.save_text(&path, &write_combined(&vectors, &members))?;

        let gold = gold_for(self.manifest, set);
        let accuracies = vectors
            .iter()
            .map(|v| accuracy(&v.decisions, &gold))
            .collect::<Result<Vec<_>>>()?;
        let stats = stats_entry(&preset.name, true, condition, set, &accuracies)?;
        self.upsert_stats(&stats)?;
        Ok(stats)
    }
}

/// Renders every stored statistic and writes `report.txt` and `report.tsv`.
pub fn write_report(store: &RunStore) -> Result<ReportTable> {
    let table = render_report(&store.load_all_stats()?)?;
    store.save_text(&store.root.join("report.txt"), &table.to_text())?;
    store.save_text(&store.root.join("report.tsv"), &table.to_tsv())?;
    Ok(table)
}
