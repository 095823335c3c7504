use std::path::{Path, PathBuf};

use adprompt::backend::toy::{ToyConfig, TOY_LEARNING_RATE};
use adprompt::backend::{AdamWConfig, DecayGroup};
use adprompt::classifier::ClassifierSpec;
use adprompt::disfluency::DisfluencyLexicon;
use adprompt::ensemble::{TiePolicy, PRESET_NAMES};
use adprompt::evaluation::EvalSet;
use adprompt::prompting::{Position, PromptTemplate, Verbalizer, DIAGNOSIS_TEMPLATE, MULTI_TASK_TEMPLATE};
use adprompt::trainer::{LossMode, Paradigm, TaskWeights, TrainConfig};
use adprompt::Source;
use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

/// How the Stumbling/Fluent threshold is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ThresholdSetting {
    Fixed(u32),
    Mode(ThresholdMode),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    /// Maximize phi against the AD labels of the train split.
    Auto,
    /// Match the Stumbling proportion of a reference labeling.
    Match,
}

impl std::str::FromStr for ThresholdSetting {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "auto" => Ok(ThresholdSetting::Mode(ThresholdMode::Auto)),
            "match" => Ok(ThresholdSetting::Mode(ThresholdMode::Match)),
            n => n
                .parse()
                .map(ThresholdSetting::Fixed)
                .map_err(|_| format!("expected auto, match or a count, got {n:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Templates {
    pub diagnosis: String,
    pub multi_task: String,
}

impl Default for Templates {
    fn default() -> Self {
        Templates {
            diagnosis: DIAGNOSIS_TEMPLATE.into(),
            multi_task: MULTI_TASK_TEMPLATE.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub paradigm: Paradigm,
    pub plm: String,
    pub position: Option<Position>,
    pub multi_task: bool,
    pub task_weights: TaskWeights,
    pub loss_mode: LossMode,
    /// Falls back to 1e-5, or to the reference model's rate with `toy_backend`.
    pub lr: Option<f64>,
    pub weight_decay: f64,
    pub decay_group: DecayGroup,
    pub batch_size: usize,
    /// Falls back to 10 for prompt runs and 30 for MLM runs.
    pub epochs: Option<usize>,
    pub capture_last_k: usize,
    pub mlm_mask_rate: f64,
    pub eval_set: EvalSet,
    pub classifier: ClassifierSpec,
}

impl Default for TrainSection {
    fn default() -> Self {
        let base = TrainConfig::prompt("bert", Position::Back, 0);
        TrainSection {
            paradigm: Paradigm::Prompt,
            plm: base.plm,
            position: Some(Position::Back),
            multi_task: false,
            task_weights: base.task_weights,
            loss_mode: base.loss_mode,
            lr: None,
            weight_decay: base.optimizer.weight_decay,
            decay_group: base.optimizer.decay_group,
            batch_size: base.batch_size,
            epochs: None,
            capture_last_k: base.capture_last_k,
            mlm_mask_rate: base.mlm_mask_rate,
            eval_set: EvalSet::Test,
            classifier: base.classifier,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data_root: PathBuf,
    pub source: Source,
    pub output_dir: PathBuf,
    pub folds: usize,
    pub fold_seed: u64,
    pub seeds: Vec<u64>,
    pub workers: usize,
    pub toy_backend: bool,
    pub tie_policy: TiePolicy,
    pub threshold: ThresholdSetting,
    /// Disfluency file whose split `threshold = "match"` reproduces.
    pub reference_labels: Option<PathBuf>,
    pub presets: Vec<String>,
    pub templates: Templates,
    pub verbalizer: Verbalizer,
    pub lexicon: DisfluencyLexicon,
    pub train: TrainSection,
    pub toy: ToyConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data_root: PathBuf::from("data"),
            source: Source::Manual,
            output_dir: PathBuf::from("out"),
            folds: 10,
            fold_seed: 0,
            seeds: (1..=15).collect(),
            workers: 1,
            toy_backend: false,
            tie_policy: TiePolicy::default(),
            threshold: ThresholdSetting::Mode(ThresholdMode::Auto),
            reference_labels: None,
            presets: PRESET_NAMES.iter().map(|s| s.to_string()).collect(),
            templates: Templates::default(),
            verbalizer: Verbalizer::default(),
            lexicon: DisfluencyLexicon::default(),
            train: TrainSection::default(),
            toy: ToyConfig::default(),
        }
    }
}

impl RunConfig {
    /// Reads a TOML file; relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.data_root, &mut cfg.output_dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(p) = cfg.reference_labels.as_mut().filter(|p| p.is_relative()) {
            *p = base.join(&*p);
        }
        Ok(cfg)
    }

    /// Checks every field and reports all problems at once.
    pub fn validate(&self) -> anyhow::Result<()> {
        let mut problems = Vec::new();
        let mut check = |ok: bool, key: &str, msg: &str| {
            if !ok {
                problems.push(format!("{key}: {msg}"));
            }
        };
        check(self.folds >= 2, "folds", "need at least 2 folds");
        check(!self.seeds.is_empty(), "seeds", "need at least one seed");
        let mut uniq = self.seeds.clone();
        uniq.sort_unstable();
        uniq.dedup();
        check(uniq.len() == self.seeds.len(), "seeds", "seeds must be distinct");
        check(self.workers >= 1, "workers", "need at least one worker");
        for p in &self.presets {
            check(PRESET_NAMES.contains(&p.as_str()), "presets", &format!("unknown preset {p:?}"));
        }
        if let ThresholdSetting::Mode(ThresholdMode::Match) = self.threshold {
            check(
                self.reference_labels.is_some(),
                "reference_labels",
                "threshold = \"match\" needs a reference disfluency file",
            );
        }
        for (key, text) in [
            ("templates.diagnosis", &self.templates.diagnosis),
            ("templates.multi_task", &self.templates.multi_task),
        ] {
            for pos in [Position::Front, Position::Back] {
                if let Err(e) = PromptTemplate::parse(text, pos) {
                    check(false, key, &e.to_string());
                    break;
                }
            }
        }
        for w in self.verbalizer.all_words() {
            check(
                !w.trim().is_empty() && !w.contains(char::is_whitespace),
                "verbalizer",
                &format!("label word {w:?} must be a single word"),
            );
        }
        if let Err(e) = self.lexicon.validate() {
            check(false, "lexicon", &e.to_string());
        }

        let t = &self.train;
        check(
            !t.plm.is_empty() && !t.plm.contains([':', '/', '\t', ' ']),
            "train.plm",
            "must be a plain name",
        );
        check(t.lr.is_none_or(|lr| lr >= 0.0 && lr.is_finite()), "train.lr", "must be finite and non-negative");
        check(t.weight_decay >= 0.0, "train.weight_decay", "must be non-negative");
        check(t.batch_size >= 1, "train.batch_size", "must be at least 1");
        check(t.epochs != Some(0), "train.epochs", "must be at least 1");
        check(t.capture_last_k >= 1, "train.capture_last_k", "must be at least 1");
        check(
            t.capture_last_k <= t.epochs.unwrap_or(usize::MAX),
            "train.capture_last_k",
            "cannot exceed train.epochs",
        );
        check((0.0..=1.0).contains(&t.mlm_mask_rate), "train.mlm_mask_rate", "must lie in [0, 1]");
        match t.paradigm {
            Paradigm::Prompt => check(t.position.is_some(), "train.position", "prompt runs need front or back"),
            Paradigm::Mlm => check(!t.multi_task, "train.multi_task", "applies to prompt runs only"),
        }
        if t.multi_task {
            let w = t.task_weights;
            check(w.diagnosis >= 0.0 && w.fluency >= 0.0, "train.task_weights", "must be non-negative");
            if t.loss_mode == LossMode::Interpolate {
                check(
                    (w.diagnosis + w.fluency - 1.0).abs() < 1e-9,
                    "train.task_weights",
                    "interpolated weights must sum to 1",
                );
            }
        }
        check(self.toy.dim >= 2 && self.toy.hidden >= 1, "toy", "need dim >= 2 and hidden >= 1");

        if problems.is_empty() {
            Ok(())
        } else {
            bail!("invalid configuration:\n  {}", problems.join("\n  "))
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        let t = &self.train;
        let base = match t.paradigm {
            Paradigm::Prompt => TrainConfig::prompt(&t.plm, t.position.unwrap_or(Position::Back), seed),
            Paradigm::Mlm => TrainConfig::mlm(&t.plm, seed),
        };
        let default_lr = if self.toy_backend {
            TOY_LEARNING_RATE
        } else {
            base.optimizer.lr
        };
        TrainConfig {
            multi_task: t.multi_task,
            task_weights: t.task_weights,
            loss_mode: t.loss_mode,
            optimizer: AdamWConfig {
                lr: t.lr.unwrap_or(default_lr),
                weight_decay: t.weight_decay,
                decay_group: t.decay_group,
                ..base.optimizer
            },
            batch_size: t.batch_size,
            epochs: t.epochs.unwrap_or(base.epochs),
            capture_last_k: t.capture_last_k,
            mlm_mask_rate: t.mlm_mask_rate,
            classifier: t.classifier,
            ..base
        }
    }

    pub fn template(&self) -> anyhow::Result<Option<PromptTemplate>> {
        let t = &self.train;
        let Some(pos) = t.position.filter(|_| t.paradigm == Paradigm::Prompt) else {
            return Ok(None);
        };
        let text = if t.multi_task {
            &self.templates.multi_task
        } else {
            &self.templates.diagnosis
        };
        Ok(Some(PromptTemplate::parse(text, pos)?))
    }
}
