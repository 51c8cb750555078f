//! Dataset persistence, model files, checkpoints and the evaluation
//! protocol.

mod container;
mod dataset;
mod eval;
mod model;

pub use container::{decode, encode, read_file, write_file, MAGIC, VERSION};
pub use dataset::{
    generate_dataset, read_dataset, write_dataset, DemoDataset, GenerateConfig, GenerateSummary, TaskEntry,
};
pub use eval::{evaluate, EvalOptions, EvalReport, TaskResult};
pub use model::{read_checkpoint, read_model, write_checkpoint, write_model, ModelSpec, SavedModel};

use crate::env::EnvError;
use crate::meta::MetaError;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DataError {
    #[error("i/o: {0}")]
    Io(String),
    #[error("malformed manifest: {0}")]
    Json(String),
    #[error("not a milearn file (bad magic)")]
    BadMagic,
    #[error("unsupported format version {0}")]
    Version(u32),
    #[error("checksum mismatch: file is truncated or corrupted")]
    Checksum,
    #[error("expected a {expected} file, found {found}")]
    Kind { expected: &'static str, found: String },
    #[error(
        "environment hash mismatch: file {found}, configuration {expected} (pass the override flag to load anyway)"
    )]
    EnvMismatch { expected: String, found: String },
    #[error("invalid file contents: {0}")]
    Invalid(String),
    #[error("{needed} meta-test tasks requested, dataset has {available}")]
    TooFewTasks { needed: usize, available: usize },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Meta(#[from] MetaError),
}

impl From<std::io::Error> for DataError {
    fn from(e: std::io::Error) -> Self {
        DataError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for DataError {
    fn from(e: serde_json::Error) -> Self {
        DataError::Json(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, DataError>;

/// SplitMix64 finalizer; derives well-separated seeds from structured ones.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ b.wrapping_add(0x632b_e59b_d9b4_e019);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
