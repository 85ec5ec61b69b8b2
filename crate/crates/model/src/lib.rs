//! Disentangled-codebook generative model for sketch-and-extrude sequences.
//!
//! A sketch branch encodes topology and geometry views into quantized codes
//! and decodes the geometry view back; an extrude branch does the same for
//! extrude parameters. Code selectors sample code tuples, optionally
//! conditioned on some branches, and [`SkexGen`] ties everything together.

pub mod branch;
pub mod codebook;
pub mod config;
pub mod grammar;
pub mod probe;
pub mod selector;
pub mod skexgen;
pub mod train;

pub use branch::{Branch, BranchForward, BranchKind, BranchSample, Sampling};
pub use codebook::Codebook;
pub use config::{ModelConfig, TrainConfig};
pub use probe::{disentanglement_probe, ProbeConfig, ProbeReport};
pub use selector::{train_selector, CodeGroup, CodeTuple, Condition, Given, Selector, SelectorEpoch};
pub use skexgen::{mix_codes, Decoded, Generation, Latents, SkexGen, TrainEvent};
pub use train::{train_branch, EpochStats};

use skexcraft_core::seq::{SeqError, ViewKind};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Seq(#[from] SeqError),
    #[error("{view:?} sequence of length {len} exceeds the maximum {max}")]
    SequenceTooLong { view: ViewKind, len: usize, max: usize },
    #[error("code count: {0}")]
    CountMismatch(String),
    #[error("loss diverged at epoch {epoch}")]
    DivergedLoss { epoch: usize },
    #[error("no valid sample after {attempts} attempts")]
    GenerationExhausted { attempts: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(#[from] skexcraft_nn::CheckpointError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest: {0}")]
    Manifest(String),
}
