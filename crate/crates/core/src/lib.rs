//! AD / non-AD classification of picture-description transcripts by
//! prompt-based fine-tuning of masked language models.
//!
//! The pipeline runs bottom-up through these modules:
//!
//! - [`corpus`]: CHAT and ASR transcript ingestion, dataset manifests and fold plans.
//! - [`disfluency`]: per-subject disfluency counts and Stumbling/Fluent thresholding.
//! - [`prompting`]: cloze templates, label-word verbalizers, prompted input assembly.
//! - [`backend`]: the masked-LM runtime interface, AdamW, and a small reference model.
//! - [`trainer`]: prompt and MLM-baseline fine-tuning runs with last-k epoch capture.
//! - [`ensemble`]: majority voting across epochs, positions, paradigms and PLMs.
//! - [`evaluation`]: cross-validation, seed sweeps, accuracy statistics and reports.
//! - [`pipeline`]: stored, resumable train / combine / report steps.

pub mod backend;
pub mod classifier;
pub mod corpus;
pub mod disfluency;
pub mod ensemble;
pub mod error;
pub mod evaluation;
pub mod exec;
pub mod labels;
pub mod pipeline;
pub mod prompting;
pub mod rng;
pub mod synthetic;
pub mod trainer;

pub use error::{Error, Result};
pub use exec::Exec;
pub use labels::{AdLabel, FluencyLabel, Source, Split, Task};
