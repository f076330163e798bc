//! Global transition tokens.
//!
//! A token `q_n` is the per-step probability that the alignment moves from
//! phoneme `n` to `n + 1`; staying put has probability `1 - q_n`. Under that
//! reading the dwell time on a phoneme is geometric with mean `1 / q_n`, so a
//! phoneme with a target of `d_n` frames gets `q_n = 1 / d_n`
//! ([`oracle_tokens`]). The learned alternative is the
//! [`encoder::DurationEncoder`].

pub mod encoder;
pub mod train;

use std::fmt::Write as _;

use thiserror::Error;

use crate::score::PhonemeSequence;

pub use encoder::{DurationEncoder, DurationFeatures, EncoderGrads};
pub use train::{mean_squared_error, sweep_dataset, train_encoder, Init, Loss, TrainConfig, TrainOutcome};

/// Lower clamp for token values.
pub const Q_MIN: f64 = 1e-4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TokenError {
    #[error("token {index} = {value} is outside (0, 1]")]
    OutOfRange { index: usize, value: f64 },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("training diverged at epoch {0} (non-finite loss)")]
    Diverged(usize),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("parameter file line {line}: {msg}")]
    ParamFormat { line: usize, msg: String },
}

pub type Result<T> = std::result::Result<T, TokenError>;

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionTokens {
    q: Vec<f64>,
}

impl TransitionTokens {
    pub fn new(q: Vec<f64>) -> Result<Self> {
        if let Some((index, &value)) = q
            .iter()
            .enumerate()
            .find(|(_, &v)| !(v > 0.0 && v <= 1.0))
        {
            return Err(TokenError::OutOfRange { index, value });
        }
        Ok(TransitionTokens { q })
    }

    /// Every phoneme gets the same token.
    pub fn constant(n: usize, value: f64) -> Result<Self> {
        Self::new(vec![value; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.q
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }

    /// Expected dwell in frames, `1 / q_n`.
    pub fn expected_dwell(&self) -> Vec<f64> {
        self.q.iter().map(|q| 1.0 / q).collect()
    }

    /// `index,phoneme,d_frames,q` rows with a header line.
    pub fn to_csv(&self, seq: &PhonemeSequence) -> String {
        let mut out = String::from("index,phoneme,d_frames,q\n");
        for (i, (event, q)) in seq.events.iter().zip(&self.q).enumerate() {
            writeln!(out, "{i},{},{},{q}", event.phoneme, event.target_frames).unwrap();
        }
        out
    }
}

/// `q_n = clamp(1 / d_n, q_min, 1)`.
pub fn oracle_tokens(seq: &PhonemeSequence, q_min: f64) -> TransitionTokens {
    tokens_for_frames(&seq.targets(), q_min)
}

pub fn tokens_for_frames(targets: &[u32], q_min: f64) -> TransitionTokens {
    let q = targets
        .iter()
        .map(|&d| (1.0 / d.max(1) as f64).clamp(q_min, 1.0))
        .collect();
    TransitionTokens { q }
}
