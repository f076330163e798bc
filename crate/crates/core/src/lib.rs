//! Duration-controlled monotonic alignment.
//!
//! The crate models how a sequence-to-sequence decoder walks over a phoneme
//! sequence when every phoneme carries a target length taken from a musical
//! score:
//!
//! - [`score`] reads scores (native JSON or a MusicXML subset) and expands
//!   them into per-phoneme frame targets on a 10 ms grid.
//! - [`tokens`] turns targets into transition tokens, the per-step
//!   probability of moving to the next phoneme, either in closed form or
//!   through a small trainable encoder.
//! - [`attention`] holds the lattice recursion for duration-controlled,
//!   forward and content-only attention, the dynamic window filter, and
//!   reverse-mode gradients through the whole run.
//! - [`simulate`] replaces the trained acoustic decoder with synthetic
//!   energy sources and a stop rule so alignment behaviour can be studied on
//!   its own.
//! - [`eval`] scores alignments and drives the ablation, tempo and
//!   per-note duration experiments.
//!
//! The book under `book/` walks through each piece with runnable examples;
//! those examples are compiled and run as doc-tests of this crate.

pub mod attention;
pub mod eval;
pub mod gradcheck;
pub mod score;
pub mod simulate;
pub mod tokens;

pub use attention::{
    AlignmentDistribution, AlignmentMatrix, AttentionError, Convention, Mechanism, StepOptions,
    WindowShape,
};
pub use score::{FrameSpec, Lexicon, PhonemeSequence, Score, ScoreError};
pub use simulate::{SimConfig, SimError, SimResult};
pub use tokens::{TokenError, TransitionTokens};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error(transparent)]
    Tokens(#[from] TokenError),
    #[error(transparent)]
    Attention(#[from] AttentionError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Eval(#[from] eval::EvalError),
}

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/scores.md")]
    mod scores {}
    #[doc = include_str!("../../../book/src/tokens.md")]
    mod tokens {}
    #[doc = include_str!("../../../book/src/lattice.md")]
    mod lattice {}
    #[doc = include_str!("../../../book/src/filter.md")]
    mod filter {}
    #[doc = include_str!("../../../book/src/gradients.md")]
    mod gradients {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
