use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, BtmError>;

#[derive(Debug, Error)]
pub enum BtmError {
    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparameter(String),

    #[error("word id {id} out of range for vocabulary of size {vocab_size}")]
    UnknownWord { id: usize, vocab_size: usize },

    #[error("held-out set is empty")]
    EmptyTestSet,

    #[error("split ratio {0} must lie strictly between 0 and 1")]
    InvalidRatio(f64),

    #[error("count underflow for topic {topic} (word {word:?})")]
    CountUnderflow { topic: usize, word: Option<usize> },

    #[error("instance too large for enumeration: {states} states (limit {limit})")]
    InstanceTooLarge { states: u128, limit: u128 },

    #[error("measure has a negative or non-finite weight at index {0}")]
    NegativeWeight(usize),

    #[error("measure has no positive weight")]
    ZeroMeasure,

    #[error("supports differ in length: {0} vs {1}")]
    SupportMismatch(usize, usize),

    #[error("alpha = 0 is not supported for local projections")]
    ZeroAlpha,

    #[error("word {word} occurs in {count} biterms, at least {needed} required")]
    InsufficientOccurrences { word: usize, count: usize, needed: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl BtmError {
    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        BtmError::Parse { line, msg: msg.into() }
    }
}
