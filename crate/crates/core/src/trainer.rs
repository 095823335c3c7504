//! Fine-tuning runs under the prompt and MLM-baseline paradigms.
//!
//! A run trains one backend instance for one seed and records AD decisions
//! on the evaluation subjects after each of the last `capture_last_k`
//! epochs. Those per-epoch decisions are what the ensemble module votes over.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::backend::{AdamW, AdamWConfig, Checkpoint, MaskLogits, MaskedLm};
use crate::classifier::{ClassifierSpec, LinearSvm};
use crate::corpus::SubjectRecord;
use crate::error::{Error, Result};
use crate::labels::{AdLabel, FluencyLabel, Task};
use crate::prompting::{
    assemble, validate_verbalizer, Position, PromptTemplate, PromptedInput, ResolvedVerbalizer,
    Verbalizer,
};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Paradigm {
    Prompt,
    Mlm,
}

impl Paradigm {
    pub fn as_str(self) -> &'static str {
        match self {
            Paradigm::Prompt => "prompt",
            Paradigm::Mlm => "mlm",
        }
    }
}

impl std::str::FromStr for Paradigm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "prompt" => Ok(Paradigm::Prompt),
            "mlm" => Ok(Paradigm::Mlm),
            _ => Err(Error::invalid(format!("unknown paradigm {s:?}"))),
        }
    }
}

/// How per-task losses combine in multi-task prompting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossMode {
    /// Weights must sum to one.
    #[default]
    Interpolate,
    /// Weights are used as given.
    Sum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskWeights {
    pub diagnosis: f64,
    pub fluency: f64,
}

impl Default for TaskWeights {
    fn default() -> Self {
        TaskWeights {
            diagnosis: 0.5,
            fluency: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub paradigm: Paradigm,
    pub plm: String,
    pub prompt_position: Option<Position>,
    pub multi_task: bool,
    pub task_weights: TaskWeights,
    pub loss_mode: LossMode,
    pub optimizer: AdamWConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub capture_last_k: usize,
    pub seed: u64,
    pub mlm_mask_rate: f64,
    pub classifier: ClassifierSpec,
}

impl TrainConfig {
    pub fn prompt(plm: &str, position: Position, seed: u64) -> Self {
        TrainConfig {
            paradigm: Paradigm::Prompt,
            plm: plm.to_string(),
            prompt_position: Some(position),
            multi_task: false,
            task_weights: TaskWeights::default(),
            loss_mode: LossMode::Interpolate,
            optimizer: AdamWConfig::default(),
            batch_size: 1,
            epochs: 10,
            capture_last_k: 3,
            seed,
            mlm_mask_rate: 0.15,
            classifier: ClassifierSpec::default(),
        }
    }

    pub fn mlm(plm: &str, seed: u64) -> Self {
        TrainConfig {
            paradigm: Paradigm::Mlm,
            prompt_position: None,
            epochs: 30,
            ..Self::prompt(plm, Position::Back, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        if self.plm.is_empty() || self.plm.contains(['\t', '\n', ':', '/']) {
            return bad(format!("invalid plm name {:?}", self.plm));
        }
        if self.epochs == 0 || self.capture_last_k == 0 || self.capture_last_k > self.epochs {
            return bad(format!(
                "capture_last_k ({}) must be in 1..=epochs ({})",
                self.capture_last_k, self.epochs
            ));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        match (self.paradigm, self.prompt_position) {
            (Paradigm::Prompt, None) => return bad("prompt paradigm needs a prompt position".into()),
            (Paradigm::Mlm, Some(_)) => return bad("MLM paradigm takes no prompt position".into()),
            _ => {}
        }
        if self.paradigm == Paradigm::Mlm && self.multi_task {
            return bad("multi-task training applies to the prompt paradigm only".into());
        }
        if self.optimizer.lr.is_nan() || self.optimizer.lr < 0.0 || self.optimizer.weight_decay.is_nan() || self.optimizer.weight_decay < 0.0 {
            return bad("learning rate and weight decay must be non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.mlm_mask_rate) {
            return bad(format!("mlm_mask_rate {} outside [0, 1]", self.mlm_mask_rate));
        }
        if self.multi_task {
            let w = self.task_weights;
            if !(w.diagnosis >= 0.0 && w.fluency >= 0.0) {
                return bad("task weights must be non-negative".into());
            }
            if self.loss_mode == LossMode::Interpolate
                && (w.diagnosis + w.fluency - 1.0).abs() > 1e-9
            {
                return bad(format!(
                    "interpolated task weights must sum to 1, got {} + {}",
                    w.diagnosis, w.fluency
                ));
            }
        }
        Ok(())
    }

    /// `plm:mlm` or `plm:prompt:position`.
    pub fn system_id(&self) -> String {
        match (self.paradigm, self.prompt_position) {
            (Paradigm::Prompt, Some(p)) => format!("{}:prompt:{}", self.plm, p.as_str()),
            _ => format!("{}:mlm", self.plm),
        }
    }

    fn active_weights(&self) -> BTreeMap<Task, f64> {
        let mut w = BTreeMap::new();
        if self.multi_task {
            w.insert(Task::Diagnosis, self.task_weights.diagnosis);
            w.insert(Task::Fluency, self.task_weights.fluency);
        } else {
            w.insert(Task::Diagnosis, 1.0);
        }
        w
    }

    pub fn meta(&self) -> RunMeta {
        RunMeta {
            system_id: self.system_id(),
            plm: self.plm.clone(),
            paradigm: self.paradigm,
            position: self.prompt_position,
            multi_task: self.multi_task,
            seed: self.seed,
        }
    }
}

/// Identity of a run as recorded in decision files.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunMeta {
    pub system_id: String,
    pub plm: String,
    pub paradigm: Paradigm,
    pub position: Option<Position>,
    pub multi_task: bool,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpochDecisions {
    pub epoch: usize,
    pub decisions: BTreeMap<String, AdLabel>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemRun {
    pub meta: RunMeta,
    pub epoch_decisions: Vec<EpochDecisions>,
    /// Accuracy per captured epoch, when gold labels were available.
    pub epoch_accuracy: Vec<Option<f64>>,
}

impl SystemRun {
    pub fn subjects(&self) -> Vec<&str> {
        self.epoch_decisions
            .first()
            .map(|e| e.decisions.keys().map(String::as_str).collect())
            .unwrap_or_default()
    }

    /// Decisions of every captured epoch for one subject, in epoch order.
    pub fn votes_for(&self, subject: &str) -> Vec<AdLabel> {
        self.epoch_decisions
            .iter()
            .filter_map(|e| e.decisions.get(subject).copied())
            .collect()
    }
}

fn epoch_accuracy(decisions: &BTreeMap<String, AdLabel>, eval: &[&SubjectRecord]) -> Option<f64> {
    if eval.is_empty() {
        return None;
    }
    let correct = eval
        .iter()
        .filter(|r| decisions.get(&r.subject_id) == Some(&r.ad_label))
        .count();
    Some(correct as f64 / eval.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptLoss {
    pub loss: f64,
    /// Gradient of the loss w.r.t. each task's full logit vector.
    pub grads: BTreeMap<Task, Vec<f64>>,
}

/// Weighted cross-entropy over each task's two label-word logits.
///
/// `targets` gives the true class index per task (0 = positive class).
/// Tasks absent from `weights` contribute nothing.
pub fn prompt_loss(
    logits: &MaskLogits,
    verbalizer: &ResolvedVerbalizer,
    targets: &BTreeMap<Task, usize>,
    weights: &BTreeMap<Task, f64>,
) -> Result<PromptLoss> {
    let mut loss = 0.0;
    let mut grads = BTreeMap::new();
    for (&task, &w) in weights {
        let vec = logits
            .get(task)
            .ok_or_else(|| Error::invalid(format!("no mask slot for active task {task}")))?;
        let target = *targets
            .get(&task)
            .ok_or_else(|| Error::invalid(format!("no target for active task {task}")))?;
        if target > 1 {
            return Err(Error::invalid(format!("target class {target} out of range")));
        }
        let ids = verbalizer.ids(task);
        let pair = [vec[ids[0] as usize], vec[ids[1] as usize]];
        let hi = pair[0].max(pair[1]);
        let lse = hi + ((pair[0] - hi).exp() + (pair[1] - hi).exp()).ln();
        loss += w * (lse - pair[target]);

        let mut g = vec![0.0; vec.len()];
        for c in 0..2 {
            let p = (pair[c] - lse).exp();
            let y = if c == target { 1.0 } else { 0.0 };
            g[ids[c] as usize] = w * (p - y);
        }
        grads.insert(task, g);
    }
    Ok(PromptLoss { loss, grads })
}

/// AD iff the AD label word scores at least as high as the non-AD one.
pub fn decide(logits: &MaskLogits, verbalizer: &ResolvedVerbalizer) -> Result<AdLabel> {
    let v = logits
        .get(Task::Diagnosis)
        .ok_or_else(|| Error::invalid("no diagnosis mask slot"))?;
    let [ad, non] = verbalizer.ids(Task::Diagnosis);
    Ok(if v[ad as usize] >= v[non as usize] {
        AdLabel::Ad
    } else {
        AdLabel::NonAd
    })
}

fn with_context(epoch: usize, record: &str) -> impl FnOnce(Error) -> Error + '_ {
    move |e| Error::Training {
        epoch,
        record: record.to_string(),
        source: Box::new(e),
    }
}

fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, "epoch-shuffle", epoch as u64));
    order
}

fn check_backend(config: &TrainConfig, backend: &dyn MaskedLm) -> Result<()> {
    config.validate()?;
    if !backend.descriptor().supports_training {
        return Err(Error::Backend(format!(
            "backend {} does not support training",
            backend.descriptor().name
        )));
    }
    Ok(())
}

/// Prompt-based fine-tuning of all backend parameters.
pub fn run_prompt_training(
    config: &TrainConfig,
    backend: &mut dyn MaskedLm,
    train: &[&SubjectRecord],
    eval: &[&SubjectRecord],
    template: &PromptTemplate,
    verbalizer: &Verbalizer,
    fluency: Option<&BTreeMap<String, FluencyLabel>>,
) -> Result<SystemRun> {
    check_backend(config, backend)?;
    if config.paradigm != Paradigm::Prompt {
        return Err(Error::invalid("run_prompt_training needs the prompt paradigm"));
    }
    let tasks = template.tasks();
    if !tasks.contains(&Task::Diagnosis) {
        return Err(Error::Template("template has no diagnosis slot".into()));
    }
    if config.multi_task && !tasks.contains(&Task::Fluency) {
        return Err(Error::Template("multi-task training needs a fluency slot".into()));
    }
    let resolved = validate_verbalizer(verbalizer, backend.tokenizer())?;
    let weights = config.active_weights();
    let max_len = backend.descriptor().max_len;

    let prepare = |records: &[&SubjectRecord]| -> Result<Vec<PromptedInput>> {
        records
            .iter()
            .map(|r| {
                r.ensure_admissible()?;
                assemble(template, &r.merged_text, backend.tokenizer(), max_len)
            })
            .collect()
    };
    let train_inputs = prepare(train)?;
    let eval_inputs = prepare(eval)?;
    let targets: Vec<BTreeMap<Task, usize>> = train
        .iter()
        .map(|r| {
            let mut t = BTreeMap::new();
            t.insert(Task::Diagnosis, r.ad_label.class_index());
            if config.multi_task {
                let label = fluency
                    .and_then(|f| f.get(&r.subject_id))
                    .ok_or_else(|| Error::Rejected {
                        subject_id: r.subject_id.clone(),
                        message: "no fluency label for multi-task training".into(),
                    })?;
                t.insert(Task::Fluency, label.class_index());
            }
            Ok(t)
        })
        .collect::<Result<_>>()?;

    let mut optimizer = AdamW::new(config.optimizer);
    let mut run = SystemRun {
        meta: config.meta(),
        epoch_decisions: Vec::new(),
        epoch_accuracy: Vec::new(),
    };
    let scale = 1.0 / config.batch_size as f64;
    backend.zero_grad();
    for epoch in 1..=config.epochs {
        let order = epoch_order(train.len(), config.seed, epoch);
        for batch in order.chunks(config.batch_size) {
            for &i in batch {
                let ctx = || with_context(epoch, &train[i].subject_id);
                let input = &train_inputs[i];
                let logits = backend.forward(input).map_err(ctx())?;
                let loss = prompt_loss(&logits, &resolved, &targets[i], &weights).map_err(ctx())?;
                let (positions, grads): (Vec<usize>, Vec<Vec<f64>>) = loss
                    .grads
                    .into_iter()
                    .map(|(task, g)| {
                        (input.mask_positions[&task], g.into_iter().map(|x| x * scale).collect())
                    })
                    .unzip();
                backend
                    .accumulate_gradient(&input.token_ids, &positions, &grads)
                    .map_err(ctx())?;
            }
            let last = &train[*batch.last().expect("non-empty batch")].subject_id;
            backend.step(&mut optimizer).map_err(with_context(epoch, last))?;
        }

        if epoch + config.capture_last_k > config.epochs {
            let mut decisions = BTreeMap::new();
            for (r, input) in eval.iter().zip(&eval_inputs) {
                let logits = backend.forward(input).map_err(with_context(epoch, &r.subject_id))?;
                decisions.insert(r.subject_id.clone(), decide(&logits, &resolved)?);
            }
            run.epoch_accuracy.push(epoch_accuracy(&decisions, eval));
            run.epoch_decisions.push(EpochDecisions { epoch, decisions });
        }
    }
    Ok(run)
}

/// Input for MLM fine-tuning and embedding: `[begin] transcript [end]`.
pub fn plain_input(backend: &dyn MaskedLm, text: &str) -> Vec<u32> {
    let tok = backend.tokenizer();
    let mut body = tok.tokenize(text);
    body.truncate(backend.descriptor().max_len.saturating_sub(2));
    let mut ids = Vec::with_capacity(body.len() + 2);
    ids.push(tok.begin_id());
    ids.extend(body);
    ids.push(tok.end_id());
    ids
}

/// Chooses masked positions among the transcript tokens (markers excluded).
pub fn choose_mask_positions(len: usize, rate: f64, rng: &mut impl Rng) -> Vec<usize> {
    (1..len.saturating_sub(1))
        .filter(|_| rate >= 1.0 || (rate > 0.0 && rng.random::<f64>() < rate))
        .collect()
}

/// Mean cross-entropy of the original tokens at masked positions, and its
/// gradient w.r.t. the logits there. Zero positions give zero loss.
pub fn masked_lm_loss(logits: &[Vec<f64>], targets: &[u32]) -> (f64, Vec<Vec<f64>>) {
    if logits.is_empty() {
        return (0.0, Vec::new());
    }
    let n = logits.len() as f64;
    let mut loss = 0.0;
    let grads = logits
        .iter()
        .zip(targets)
        .map(|(l, &t)| {
            let hi = l.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = hi + l.iter().map(|v| (v - hi).exp()).sum::<f64>().ln();
            loss += (lse - l[t as usize]) / n;
            l.iter()
                .enumerate()
                .map(|(v, x)| ((x - lse).exp() - if v == t as usize { 1.0 } else { 0.0 }) / n)
                .collect()
        })
        .collect();
    (loss, grads)
}

#[derive(Debug, Clone)]
pub struct MlmOutcome {
    pub checkpoints: Vec<Checkpoint>,
    /// Mean masked-token loss per epoch over records with at least one mask.
    pub epoch_losses: Vec<f64>,
}

/// Masked-token fine-tuning on the training transcripts, keeping
/// checkpoints of the last `capture_last_k` epochs.
pub fn run_mlm_training(
    config: &TrainConfig,
    backend: &mut dyn MaskedLm,
    train: &[&SubjectRecord],
) -> Result<MlmOutcome> {
    check_backend(config, backend)?;
    let inputs: Vec<Vec<u32>> = train
        .iter()
        .map(|r| {
            r.ensure_admissible()?;
            Ok(plain_input(backend, &r.merged_text))
        })
        .collect::<Result<_>>()?;
    let mask_id = backend.descriptor().mask_token_id;
    let descriptor = backend.descriptor().summary();
    let mut optimizer = AdamW::new(config.optimizer);
    let mut outcome = MlmOutcome {
        checkpoints: Vec::new(),
        epoch_losses: Vec::new(),
    };
    let scale = 1.0 / config.batch_size as f64;
    backend.zero_grad();
    for epoch in 1..=config.epochs {
        let order = epoch_order(train.len(), config.seed, epoch);
        let (mut total, mut counted) = (0.0, 0usize);
        for batch in order.chunks(config.batch_size) {
            let mut any = false;
            for &i in batch {
                let ctx = || with_context(epoch, &train[i].subject_id);
                let mut rng = rng::stream(
                    config.seed,
                    "mlm-mask",
                    (epoch * train.len() + i) as u64,
                );
                let positions = choose_mask_positions(inputs[i].len(), config.mlm_mask_rate, &mut rng);
                if positions.is_empty() {
                    continue;
                }
                let mut masked = inputs[i].clone();
                let targets: Vec<u32> = positions.iter().map(|&p| masked[p]).collect();
                for &p in &positions {
                    masked[p] = mask_id;
                }
                let logits = backend.logits(&masked, &positions).map_err(ctx())?;
                let (loss, grads) = masked_lm_loss(&logits, &targets);
                let grads: Vec<Vec<f64>> = grads
                    .into_iter()
                    .map(|g| g.into_iter().map(|x| x * scale).collect())
                    .collect();
                backend.accumulate_gradient(&masked, &positions, &grads).map_err(ctx())?;
                total += loss;
                counted += 1;
                any = true;
            }
            if any {
                let last = &train[*batch.last().expect("non-empty batch")].subject_id;
                backend.step(&mut optimizer).map_err(with_context(epoch, last))?;
            }
        }
        outcome
            .epoch_losses
            .push(if counted == 0 { 0.0 } else { total / counted as f64 });
        if epoch + config.capture_last_k > config.epochs {
            outcome.checkpoints.push(Checkpoint {
                name: config.plm.clone(),
                epoch,
                seed: config.seed,
                descriptor: descriptor.clone(),
                params: backend.parameters().to_vec(),
            });
        }
    }
    Ok(outcome)
}

/// Embeds train/eval transcripts with each checkpoint, fits the linear
/// classifier on the train embeddings, and records one decision map per
/// checkpoint.
pub fn run_baseline_classification(
    config: &TrainConfig,
    backend: &mut dyn MaskedLm,
    checkpoints: &[Checkpoint],
    train: &[&SubjectRecord],
    eval: &[&SubjectRecord],
) -> Result<SystemRun> {
    let mut run = SystemRun {
        meta: config.meta(),
        epoch_decisions: Vec::new(),
        epoch_accuracy: Vec::new(),
    };
    for ck in checkpoints {
        backend.set_parameters(&ck.params)?;
        let embed = |r: &SubjectRecord| -> Result<Vec<f64>> {
            r.ensure_admissible()?;
            Ok(backend.embed(&plain_input(backend, &r.merged_text))?.0)
        };
        let xs: Vec<Vec<f64>> = train.iter().map(|r| embed(r)).collect::<Result<_>>()?;
        let ys: Vec<AdLabel> = train.iter().map(|r| r.ad_label).collect();
        let svm = LinearSvm::fit(
            &config.classifier,
            &xs,
            &ys,
            rng::derive_seed(config.seed, "svm-fit", ck.epoch as u64),
        )?;
        let mut decisions = BTreeMap::new();
        for r in eval {
            decisions.insert(r.subject_id.clone(), svm.predict(&embed(r)?));
        }
        run.epoch_accuracy.push(epoch_accuracy(&decisions, eval));
        run.epoch_decisions.push(EpochDecisions {
            epoch: ck.epoch,
            decisions,
        });
    }
    Ok(run)
}

/// Builds fresh backend instances, one per (plm, seed).
pub trait BackendFactory: Sync {
    fn build(&self, plm: &str, seed: u64) -> Result<Box<dyn MaskedLm>>;
}

/// One system configuration, runnable for any seed.
#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub config: TrainConfig,
    pub template: Option<PromptTemplate>,
    pub verbalizer: Verbalizer,
}

impl Experiment {
    pub fn prompt(config: TrainConfig, template: PromptTemplate) -> Self {
        Experiment {
            config,
            template: Some(template),
            verbalizer: Verbalizer::default(),
        }
    }

    pub fn mlm(config: TrainConfig) -> Self {
        Experiment {
            config,
            template: None,
            verbalizer: Verbalizer::default(),
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        let mut e = self.clone();
        e.config.seed = seed;
        e
    }

    /// Trains on `train` and records decisions on `eval`.
    pub fn run(
        &self,
        factory: &dyn BackendFactory,
        train: &[&SubjectRecord],
        eval: &[&SubjectRecord],
        fluency: Option<&BTreeMap<String, FluencyLabel>>,
    ) -> Result<SystemRun> {
        let cfg = &self.config;
        let mut backend = factory.build(&cfg.plm, cfg.seed)?;
        match cfg.paradigm {
            Paradigm::Prompt => {
                let template = self
                    .template
                    .as_ref()
                    .ok_or_else(|| Error::Template("prompt experiment without template".into()))?;
                if Some(template.position) != cfg.prompt_position {
                    return Err(Error::Template(
                        "template position disagrees with prompt_position".into(),
                    ));
                }
                run_prompt_training(
                    cfg,
                    backend.as_mut(),
                    train,
                    eval,
                    template,
                    &self.verbalizer,
                    fluency,
                )
            }
            Paradigm::Mlm => {
                let outcome = run_mlm_training(cfg, backend.as_mut(), train)?;
                run_baseline_classification(cfg, backend.as_mut(), &outcome.checkpoints, train, eval)
            }
        }
    }
}

const DECISIONS_HEADER: &str = "#decisions v1";

/// Decision-file rows: `system_id, plm, paradigm, position, multi_task,
/// seed, epoch, subject_id, decision`.
pub fn write_run(run: &SystemRun) -> String {
    let m = &run.meta;
    let mut out = format!("{DECISIONS_HEADER}\n");
    let position = m.position.map_or("-", Position::as_str);
    for e in &run.epoch_decisions {
        for (subject, label) in &e.decisions {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                m.system_id,
                m.plm,
                m.paradigm.as_str(),
                position,
                m.multi_task,
                m.seed,
                e.epoch,
                subject,
                label
            );
        }
    }
    out
}

pub fn read_run(content: &str) -> Result<SystemRun> {
    let mut lines = content.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.starts_with(DECISIONS_HEADER) => {}
        _ => {
            return Err(Error::Parse {
                line: 1,
                message: format!("missing {DECISIONS_HEADER:?} header"),
            })
        }
    }
    let mut meta: Option<RunMeta> = None;
    let mut epochs: BTreeMap<usize, BTreeMap<String, AdLabel>> = BTreeMap::new();
    for (idx, line) in lines {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| Error::Parse {
            line: idx + 1,
            message,
        };
        let f: Vec<&str> = line.split('\t').collect();
        let [system_id, plm, paradigm, position, multi_task, seed, epoch, subject, decision] =
            f[..]
        else {
            return Err(err(format!("expected 9 fields, got {}", f.len())));
        };
        let row_meta = RunMeta {
            system_id: system_id.to_string(),
            plm: plm.to_string(),
            paradigm: paradigm.parse()?,
            position: match position {
                "-" => None,
                p => Some(p.parse()?),
            },
            multi_task: multi_task
                .parse()
                .map_err(|_| err(format!("bad multi_task {multi_task:?}")))?,
            seed: seed.parse().map_err(|_| err(format!("bad seed {seed:?}")))?,
        };
        match &meta {
            None => meta = Some(row_meta),
            Some(m) if *m != row_meta => {
                return Err(err("rows from more than one run in a decision file".into()))
            }
            _ => {}
        }
        let epoch: usize = epoch.parse().map_err(|_| err(format!("bad epoch {epoch:?}")))?;
        epochs
            .entry(epoch)
            .or_default()
            .insert(subject.to_string(), decision.parse()?);
    }
    let meta = meta.ok_or_else(|| Error::invalid("decision file has no rows"))?;
    let epoch_decisions: Vec<EpochDecisions> = epochs
        .into_iter()
        .map(|(epoch, decisions)| EpochDecisions { epoch, decisions })
        .collect();
    let subjects: Vec<&String> = epoch_decisions[0].decisions.keys().collect();
    if epoch_decisions
        .iter()
        .any(|e| e.decisions.keys().collect::<Vec<_>>() != subjects)
    {
        return Err(Error::invalid("captured epochs cover different subjects"));
    }
    Ok(SystemRun {
        meta,
        epoch_accuracy: vec![None; epoch_decisions.len()],
        epoch_decisions,
    })
}
