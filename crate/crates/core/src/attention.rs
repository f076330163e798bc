//! The alignment lattice.
//!
//! Each decoder step turns the previous alignment `p_{t-1}` into `p_t`:
//!
//! 1. optionally mask `p_{t-1}` with a window around its argmax
//!    ([`dynamic_filter`]);
//! 2. run the transition recursion, where mass at phoneme `n` stays with
//!    weight `1 - q_n` and moves to `n + 1` with weight `q_n`;
//! 3. multiply by the normalized content energies `e_t(n)`;
//! 4. renormalize so the row sums to one.
//!
//! Three mechanisms share that pipeline: [`Mechanism::Gdca`] (duration
//! controlled, uses tokens), [`Mechanism::Fa`] (forward attention, equal
//! stay and move weights) and [`Mechanism::La`] (content only, the previous
//! alignment is used just to place the window).
//!
//! The final phoneme is absorbing: it keeps all of its mass, so the GDCA
//! recursion conserves probability and normalization only undoes the energy
//! product.

mod energy;
mod export;
mod lattice;
mod step;

use serde::Serialize;
use thiserror::Error;

pub use energy::{content_energies, content_energies_backward, normalize_energies, EnergyGrads, EnergyParams};
pub use export::{alignment_csv, alignment_pgm};
pub use lattice::{
    lattice_backward, lattice_forward, lattice_forward_raw, occupancy, pure_lattice_occupancy,
    LatticeGrads, LatticeRun,
};
pub use step::{
    context_vector, dynamic_filter, fa_step, gdca_step, init_alignment, la_step, step,
    window_weights, StepTrace,
};

/// Denominators below this are treated as a vanished alignment.
pub const MIN_NORMALIZER: f64 = 1e-300;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AttentionError {
    #[error("alignment needs at least one phoneme")]
    NoPhonemes,
    #[error("length mismatch: {what} has {got}, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("normalizer {normalizer:e} vanished at step {step}")]
    DegenerateNormalizer { step: usize, normalizer: f64 },
    #[error("window width must be an even integer >= 2, got {0}")]
    InvalidWindow(usize),
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
}

pub type Result<T> = std::result::Result<T, AttentionError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mechanism {
    /// Content-only attention.
    La,
    /// Forward attention.
    Fa,
    /// Duration-controlled attention driven by transition tokens.
    Gdca,
}

impl Mechanism {
    pub fn name(self) -> &'static str {
        match self {
            Mechanism::La => "LA",
            Mechanism::Fa => "FA",
            Mechanism::Gdca => "GDCA",
        }
    }
}

impl std::str::FromStr for Mechanism {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "la" => Ok(Mechanism::La),
            "fa" => Ok(Mechanism::Fa),
            "gdca" => Ok(Mechanism::Gdca),
            other => Err(format!("unknown mechanism `{other}` (expected la, fa or gdca)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowShape {
    Rectangular,
    Triangular,
}

impl std::str::FromStr for WindowShape {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "rectangular" | "rect" => Ok(WindowShape::Rectangular),
            "triangular" | "tri" => Ok(WindowShape::Triangular),
            other => Err(format!("unknown window shape `{other}`")),
        }
    }
}

/// Where the token coefficients sit in the recursion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Convention {
    /// `q_n` is the probability of moving on: move with `q_{n-1}`, stay
    /// with `1 - q_n`.
    Move,
    /// `q_n` is the probability of staying: move with `1 - q_{n-1}`, stay
    /// with `q_n`.
    Stay,
}

impl std::str::FromStr for Convention {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "move" => Ok(Convention::Move),
            "stay" => Ok(Convention::Stay),
            other => Err(format!("unknown convention `{other}` (expected move or stay)")),
        }
    }
}

pub const DEFAULT_WINDOW: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct StepOptions {
    pub mechanism: Mechanism,
    pub filter_enabled: bool,
    pub window_width: usize,
    pub window_shape: WindowShape,
    pub convention: Convention,
}

impl Default for StepOptions {
    fn default() -> Self {
        StepOptions {
            mechanism: Mechanism::Gdca,
            filter_enabled: false,
            window_width: DEFAULT_WINDOW,
            window_shape: WindowShape::Rectangular,
            convention: Convention::Move,
        }
    }
}

impl StepOptions {
    pub fn new(mechanism: Mechanism, filter_enabled: bool) -> Self {
        StepOptions {
            mechanism,
            filter_enabled,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_width < 2 || self.window_width % 2 != 0 {
            return Err(AttentionError::InvalidWindow(self.window_width));
        }
        Ok(())
    }

    /// Ablation label: `LA`, `LA+Window`, `FA`, `FA+DF`, `GDCA`, `GDCA+DF`.
    pub fn label(&self) -> String {
        match (self.mechanism, self.filter_enabled) {
            (m, false) => m.name().to_string(),
            (Mechanism::La, true) => "LA+Window".to_string(),
            (m, true) => format!("{}+DF", m.name()),
        }
    }
}

/// Index of the largest entry; ties go to the earliest phoneme.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate().skip(1) {
        if v > p[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentDistribution {
    pub p: Vec<f64>,
    pub step: usize,
}

impl AlignmentDistribution {
    /// Wraps `p` after checking it is a probability vector (sum within 1e-9).
    pub fn new(p: Vec<f64>, step: usize) -> Result<Self> {
        if p.is_empty() {
            return Err(AttentionError::NoPhonemes);
        }
        if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(AttentionError::InvalidDistribution(
                "entries must be finite and non-negative".into(),
            ));
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(AttentionError::InvalidDistribution(format!("sums to {sum}")));
        }
        Ok(AlignmentDistribution { p, step })
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.p)
    }
}

/// Rows are decoder steps (row 0 is the initial alignment), columns are
/// phonemes.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentMatrix {
    rows: ndarray::Array2<f64>,
    argmax: Vec<usize>,
}

impl AlignmentMatrix {
    pub fn from_rows(rows: ndarray::Array2<f64>) -> Self {
        let argmax = rows
            .outer_iter()
            .map(|r| argmax(r.as_slice().expect("standard layout")))
            .collect();
        AlignmentMatrix { rows, argmax }
    }

    pub fn from_distributions(dists: &[AlignmentDistribution]) -> Self {
        let n = dists.first().map_or(0, |d| d.len());
        let mut rows = ndarray::Array2::zeros((dists.len(), n));
        for (mut r, d) in rows.outer_iter_mut().zip(dists) {
            r.assign(&ndarray::ArrayView1::from(&d.p));
        }
        AlignmentMatrix {
            rows,
            argmax: dists.iter().map(|d| d.argmax()).collect(),
        }
    }

    pub fn rows(&self) -> &ndarray::Array2<f64> {
        &self.rows
    }

    pub fn row(&self, t: usize) -> &[f64] {
        self.rows.row(t).to_slice().expect("standard layout")
    }

    pub fn argmax(&self) -> &[usize] {
        &self.argmax
    }

    pub fn steps(&self) -> usize {
        self.rows.nrows()
    }

    pub fn phonemes(&self) -> usize {
        self.rows.ncols()
    }

    /// Keeps rows `range`, e.g. to drop the initial row.
    pub fn slice_rows(&self, range: std::ops::Range<usize>) -> AlignmentMatrix {
        AlignmentMatrix {
            rows: self.rows.slice(ndarray::s![range.clone(), ..]).to_owned(),
            argmax: self.argmax[range].to_vec(),
        }
    }
}
