//! Command-line driver: ingest transcripts, label disfluency, train systems
//! over seeds, combine them, and print the accuracy report.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use adprompt::evaluation::{Condition, EvalSet};
use adprompt::prompting::Position;
use adprompt::trainer::Paradigm;
use adprompt::Source;
use clap::{Args, Parser, Subcommand};

use config::{RunConfig, ThresholdSetting};

#[derive(Debug, Parser)]
#[command(name = "adprompt", version, about = "AD detection by prompt-based fine-tuning")]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory holding labels.tsv and the transcripts.
    #[arg(long, global = true, env = "ADPROMPT_DATA_ROOT")]
    data_root: Option<PathBuf>,
    /// Directory for the manifest, runs, statistics and report.
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,
    /// Worker threads for seed and fold runs.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build the dataset manifest from labels.tsv and transcript files.
    Ingest(IngestArgs),
    /// Count disfluency events and label subjects Stumbling or Fluent.
    Disfluency(DisfluencyArgs),
    /// Train one system over a list of seeds.
    Train(TrainArgs),
    /// Combine stored systems with registry presets.
    Combine(CombineArgs),
    /// Render the accuracy table from stored statistics.
    Report,
}

#[derive(Debug, Args)]
struct IngestArgs {
    #[arg(long)]
    source: Option<Source>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    fold_seed: Option<u64>,
}

#[derive(Debug, Args)]
struct DisfluencyArgs {
    /// `auto`, `match`, or a fixed event count.
    #[arg(long)]
    threshold: Option<ThresholdSetting>,
    /// Disfluency file whose Stumbling proportion `match` reproduces.
    #[arg(long)]
    reference: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SeedArgs {
    /// Train seeds 1..=N.
    #[arg(long, conflicts_with = "seed_list")]
    seeds: Option<u64>,
    /// Comma-separated explicit seeds.
    #[arg(long, value_delimiter = ',')]
    seed_list: Option<Vec<u64>>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    paradigm: Option<Paradigm>,
    #[arg(long)]
    position: Option<Position>,
    #[arg(long)]
    plm: Option<String>,
    /// Add the fluency cloze to the prompt.
    #[arg(long)]
    multi_task: bool,
    #[arg(long)]
    set: Option<EvalSet>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Use the built-in reference model instead of a pre-trained PLM.
    #[arg(long)]
    toy_backend: bool,
    /// Retrain seeds whose decisions are already stored.
    #[arg(long)]
    force: bool,
    #[command(flatten)]
    seeds: SeedArgs,
}

#[derive(Debug, Args)]
struct CombineArgs {
    /// Registry preset; repeatable. Defaults to the configured presets.
    #[arg(long)]
    preset: Vec<String>,
    /// PLM for within-PLM presets.
    #[arg(long)]
    plm: Option<String>,
    #[arg(long)]
    set: Option<EvalSet>,
    /// Defaults to the manifest's source, with `+disfl` under --multi-task.
    #[arg(long)]
    condition: Option<Condition>,
    #[arg(long)]
    multi_task: bool,
}

fn resolve(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(p) = &cli.data_root {
        cfg.data_root = p.clone();
    }
    if let Some(p) = &cli.output {
        cfg.output_dir = p.clone();
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    match &cli.command {
        Command::Ingest(a) => {
            cfg.source = a.source.unwrap_or(cfg.source);
            cfg.folds = a.folds.unwrap_or(cfg.folds);
            cfg.fold_seed = a.fold_seed.unwrap_or(cfg.fold_seed);
        }
        Command::Disfluency(a) => {
            cfg.threshold = a.threshold.unwrap_or(cfg.threshold);
            if a.reference.is_some() {
                cfg.reference_labels = a.reference.clone();
            }
        }
        Command::Train(a) => {
            let t = &mut cfg.train;
            t.paradigm = a.paradigm.unwrap_or(t.paradigm);
            if a.position.is_some() {
                t.position = a.position;
            }
            if let Some(plm) = &a.plm {
                t.plm = plm.clone();
            }
            t.multi_task |= a.multi_task;
            t.eval_set = a.set.unwrap_or(t.eval_set);
            t.epochs = a.epochs.or(t.epochs);
            t.lr = a.lr.or(t.lr);
            cfg.toy_backend |= a.toy_backend;
            if let Some(n) = a.seeds.seeds {
                cfg.seeds = (1..=n).collect();
            }
            if let Some(list) = &a.seeds.seed_list {
                cfg.seeds = list.clone();
            }
        }
        Command::Combine(a) => {
            if !a.preset.is_empty() {
                cfg.presets = a.preset.clone();
            }
            if let Some(plm) = &a.plm {
                cfg.train.plm = plm.clone();
            }
            cfg.train.eval_set = a.set.unwrap_or(cfg.train.eval_set);
            cfg.train.multi_task |= a.multi_task;
        }
        Command::Report => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = resolve(&cli)?;
    match &cli.command {
        Command::Ingest(_) => commands::ingest(&cfg).map(drop),
        Command::Disfluency(_) => commands::disfluency(&cfg).map(drop),
        Command::Train(a) => commands::train(&cfg, !a.force).map(drop),
        Command::Combine(a) => {
            commands::combine(&cfg, a.condition, cfg.train.eval_set, &cfg.presets).map(drop)
        }
        Command::Report => commands::report(&cfg).map(drop),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
