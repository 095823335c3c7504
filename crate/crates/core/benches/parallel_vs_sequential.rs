use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use adprompt::backend::toy::{ToyConfig, ToyFactory, TOY_LEARNING_RATE};
use adprompt::ensemble::{combine_runs_with, preset, TiePolicy};
use adprompt::evaluation::{gold_labels, sweep_seeds};
use adprompt::prompting::{Position, PromptTemplate};
use adprompt::synthetic::{self, SyntheticSpec};
use adprompt::trainer::{EpochDecisions, Experiment, Paradigm, RunMeta, SystemRun, TrainConfig};
use adprompt::{AdLabel, Exec, Split};
use rand::Rng;

const STRATEGIES: [Exec; 2] = [Exec::Sequential, Exec::Parallel];

fn seed_sweep(c: &mut Criterion) {
    let spec = SyntheticSpec {
        train_per_class: 20,
        test_per_class: 10,
        ..SyntheticSpec::default()
    };
    let corpus = synthetic::generate(&spec).unwrap();
    let (train, test): (Vec<_>, Vec<_>) = corpus.records.iter().partition(|r| r.split == Split::Train);
    let gold = gold_labels(test.iter().copied());
    let factory = ToyFactory::new(synthetic::tokenizer(), ToyConfig::default());
    let mut cfg = TrainConfig::prompt("bert", Position::Back, 0);
    cfg.optimizer.lr = TOY_LEARNING_RATE;
    let experiment = Experiment::prompt(cfg, PromptTemplate::diagnosis(Position::Back));
    let seeds: Vec<u64> = (1..=8).collect();

    let mut group = c.benchmark_group("seed_sweep_8_seeds");
    group.sample_size(10);
    for exec in STRATEGIES {
        group.bench_with_input(BenchmarkId::from_parameter(format!("{exec:?}")), &exec, |b, &exec| {
            b.iter(|| {
                sweep_seeds(&experiment, &seeds, &gold, TiePolicy::PoolSubDecisions, exec, |e| {
                    e.run(&factory, &train, &test, None)
                })
                .unwrap()
            })
        });
    }
    group.finish();
}

fn random_run(system: &str, plm: &str, seed: u64) -> SystemRun {
    let mut rng = adprompt::rng::stream(seed, system, 0);
    SystemRun {
        meta: RunMeta {
            system_id: system.into(),
            plm: plm.into(),
            paradigm: Paradigm::Mlm,
            position: None,
            multi_task: false,
            seed,
        },
        epoch_decisions: (28..=30)
            .map(|epoch| EpochDecisions {
                epoch,
                decisions: (0..48)
                    .map(|i| (format!("t{i:02}"), if rng.random_bool(0.5) { AdLabel::Ad } else { AdLabel::NonAd }))
                    .collect(),
            })
            .collect(),
        epoch_accuracy: vec![None; 3],
    }
}

fn cartesian_combination(c: &mut Criterion) {
    let mut runs = Vec::new();
    for seed in 1..=15 {
        runs.push(random_run("bert:mlm", "bert", seed));
        runs.push(random_run("roberta:mlm", "roberta", seed));
    }
    let p = preset("bert+roberta:mlm", "bert").unwrap();
    let mut group = c.benchmark_group("combine_15x15");
    for exec in STRATEGIES {
        group.bench_with_input(BenchmarkId::from_parameter(format!("{exec:?}")), &exec, |b, &exec| {
            b.iter(|| combine_runs_with(exec, &runs, &p, TiePolicy::PoolSubDecisions).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, seed_sweep, cartesian_combination);
criterion_main!(benches);
