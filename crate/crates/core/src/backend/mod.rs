//! Masked-language-model runtime boundary.
//!
//! [`MaskedLm`] is what the trainer drives: logits at mask positions, a
//! backward pass from logit gradients, pooled embeddings, and optimizer
//! steps. [`toy::ToyMlm`] is a small reference implementation whose
//! gradients can be checked exhaustively; a pre-trained transformer runtime
//! plugs in behind the same trait.

pub mod checkpoint;
pub mod optim;
pub mod tokenizer;
pub mod toy;

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::labels::Task;
use crate::prompting::PromptedInput;

pub use checkpoint::Checkpoint;
pub use optim::{AdamW, AdamWConfig, DecayGroup, ParamGroup, ParamLayout};
pub use tokenizer::{Tokenizer, WordPieceTokenizer};

/// Maximum input length of the BERT/RoBERTa base models.
pub const PLM_MAX_LEN: usize = 512;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackendDescriptor {
    pub name: String,
    pub vocab_size: usize,
    pub max_len: usize,
    pub mask_token_id: u32,
    pub supports_training: bool,
}

impl BackendDescriptor {
    pub fn validate(&self) -> Result<()> {
        if self.max_len < 8 {
            return Err(Error::Backend(format!("max_len {} below 8", self.max_len)));
        }
        if self.mask_token_id as usize >= self.vocab_size {
            return Err(Error::Backend(format!(
                "mask token id {} outside vocabulary of {}",
                self.mask_token_id, self.vocab_size
            )));
        }
        Ok(())
    }

    pub fn summary(&self) -> String {
        format!(
            "{}:vocab={}:max_len={}:mask={}",
            self.name, self.vocab_size, self.max_len, self.mask_token_id
        )
    }

    pub(crate) fn check_tokens(&self, tokens: &[u32]) -> Result<()> {
        if tokens.is_empty() {
            return Err(Error::invalid("empty input"));
        }
        if tokens.len() > self.max_len {
            return Err(Error::InputTooLong {
                len: tokens.len(),
                max_len: self.max_len,
            });
        }
        if let Some(&id) = tokens.iter().find(|&&t| t as usize >= self.vocab_size) {
            return Err(Error::OutOfVocab {
                id,
                vocab_size: self.vocab_size,
            });
        }
        Ok(())
    }
}

/// Unnormalized vocabulary scores at each task's mask slot.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskLogits {
    pub by_task: BTreeMap<Task, Vec<f64>>,
}

impl MaskLogits {
    pub fn get(&self, task: Task) -> Option<&[f64]> {
        self.by_task.get(&task).map(Vec::as_slice)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(pub Vec<f64>);

impl EmbeddingVector {
    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// How `embed` pools the final hidden layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    /// State at the sequence-begin token.
    #[default]
    Begin,
    Mean,
}

pub trait MaskedLm: Send {
    fn descriptor(&self) -> &BackendDescriptor;

    fn tokenizer(&self) -> &dyn Tokenizer;

    /// Vocabulary logits at each of `positions`, in order.
    fn logits(&self, tokens: &[u32], positions: &[usize]) -> Result<Vec<Vec<f64>>>;

    /// Adds the parameter gradient implied by `logit_grads` (one
    /// vocabulary-length vector per position) to the accumulated gradient.
    fn accumulate_gradient(
        &mut self,
        tokens: &[u32],
        positions: &[usize],
        logit_grads: &[Vec<f64>],
    ) -> Result<()>;

    fn embed(&self, tokens: &[u32]) -> Result<EmbeddingVector>;

    /// Applies one optimizer update from the accumulated gradient and clears it.
    fn step(&mut self, optimizer: &mut AdamW) -> Result<()>;

    fn zero_grad(&mut self);

    fn parameters(&self) -> &[f64];

    fn set_parameters(&mut self, params: &[f64]) -> Result<()>;

    fn layout(&self) -> &ParamLayout;

    fn forward(&self, input: &PromptedInput) -> Result<MaskLogits> {
        let tasks: Vec<Task> = input.mask_positions.keys().copied().collect();
        let positions: Vec<usize> = tasks.iter().map(|t| input.mask_positions[t]).collect();
        for &p in &positions {
            if input.token_ids.get(p) != Some(&self.descriptor().mask_token_id) {
                return Err(Error::invalid(format!("position {p} is not a mask token")));
            }
        }
        let logits = self.logits(&input.token_ids, &positions)?;
        Ok(MaskLogits {
            by_task: tasks.into_iter().zip(logits).collect(),
        })
    }
}
