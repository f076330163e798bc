//! Decoding harness.
//!
//! The trained content pathway is replaced by synthetic energy rows
//! ([`EnergyGenerator`]); the harness steps the chosen attention mechanism
//! until a stop rule fires and reads realized phoneme durations off the
//! argmax path.

mod energies;

use serde::Serialize;
use thiserror::Error;

use crate::attention::{self, argmax, AlignmentDistribution, AlignmentMatrix, AttentionError, StepOptions};
use crate::score::PhonemeSequence;
use crate::tokens::TransitionTokens;

pub use energies::{EnergyGenerator, EnergyMode, SynthEnergySpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("spike schedule entry ({step}, {phoneme}) is outside the {phonemes}-phoneme sequence")]
    SpikeOutOfRange {
        step: usize,
        phoneme: usize,
        phonemes: usize,
    },
    #[error("{0} tokens for {1} phonemes")]
    TokenCount(usize, usize),
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error(transparent)]
    Attention(#[from] AttentionError),
}

pub type Result<T> = std::result::Result<T, SimError>;

/// When decoding ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum StopRule {
    /// The argmax has sat on the last phoneme for at least `consecutive`
    /// steps and the attention mass accumulated there has reached the
    /// expected dwell `1 / q_{N-1}`.
    LastDwell { consecutive: usize },
    /// The argmax has sat on the last phoneme for `consecutive` steps.
    ArgmaxParked { consecutive: usize },
    /// Exactly this many steps.
    Fixed { steps: usize },
}

impl Default for StopRule {
    fn default() -> Self {
        StopRule::LastDwell { consecutive: 3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StoppedBy {
    StopRule,
    FixedSteps,
    MaxSteps,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimConfig {
    pub opts: StepOptions,
    pub energy: SynthEnergySpec,
    pub seed: u64,
    pub max_steps: usize,
    pub stop: StopRule,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            opts: StepOptions::default(),
            energy: SynthEnergySpec::default(),
            seed: 0,
            max_steps: 10_000,
            stop: StopRule::default(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.opts.validate()?;
        if self.max_steps == 0 {
            return Err(SimError::Config("max_steps must be at least 1".into()));
        }
        match self.stop {
            StopRule::LastDwell { consecutive } | StopRule::ArgmaxParked { consecutive }
                if consecutive == 0 =>
            {
                Err(SimError::Config("stop rule needs at least one step".into()))
            }
            _ => self.energy.validate(),
        }
    }
}

/// Per-phoneme step counts along the argmax path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Realized {
    pub frames: Vec<u32>,
    /// False if the argmax ever moved backwards.
    pub monotone: bool,
}

/// Attributes every row to its argmax phoneme; phonemes never visited get 0.
pub fn realized_durations(alignment: &AlignmentMatrix) -> Realized {
    let mut frames = vec![0u32; alignment.phonemes()];
    let path = alignment.argmax();
    for &m in path {
        frames[m] += 1;
    }
    let monotone = path.windows(2).all(|w| w[1] >= w[0]);
    Realized { frames, monotone }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    /// Row 0 is the initial alignment; rows `1..=stop_step` are decoded.
    pub alignment: AlignmentMatrix,
    pub realized_frames: Vec<u32>,
    pub monotone: bool,
    pub stop_step: usize,
    pub stopped_by: StoppedBy,
    pub config: SimConfig,
}

impl SimResult {
    pub fn label(&self) -> String {
        self.config.opts.label()
    }

    /// Decoded rows only, without the initial alignment.
    pub fn decoded(&self) -> AlignmentMatrix {
        self.alignment.slice_rows(1..self.alignment.steps())
    }

    pub fn failed_to_stop(&self) -> bool {
        self.stopped_by == StoppedBy::MaxSteps
    }
}

/// Steps the configured mechanism from the initial alignment until the stop
/// rule fires or `max_steps` is reached (flagged, not an error).
pub fn run_simulation(
    seq: &PhonemeSequence,
    q: &TransitionTokens,
    cfg: &SimConfig,
) -> Result<SimResult> {
    cfg.validate()?;
    let n = seq.len();
    if q.len() != n {
        return Err(SimError::TokenCount(q.len(), n));
    }
    let mut generator = EnergyGenerator::new(seq, &cfg.energy, cfg.seed)?;
    let last = n - 1;
    let expected_last_dwell = 1.0 / q.as_slice()[last];
    let limit = match cfg.stop {
        StopRule::Fixed { steps } => steps,
        _ => cfg.max_steps,
    };

    let mut current = attention::init_alignment(n)?;
    let mut rows: Vec<AlignmentDistribution> = vec![current.clone()];
    let mut parked = 0usize;
    let mut last_mass = 0.0;
    let mut stopped_by = match cfg.stop {
        StopRule::Fixed { .. } => StoppedBy::FixedSteps,
        _ => StoppedBy::MaxSteps,
    };

    for t in 1..=limit {
        let e = generator.row(t, &current)?;
        let (next, _) = attention::step(&current, Some(q), &e, &cfg.opts)?;
        if argmax(&next.p) == last {
            parked += 1;
        } else {
            parked = 0;
        }
        last_mass += next.p[last];
        rows.push(next.clone());
        current = next;

        let done = match cfg.stop {
            StopRule::LastDwell { consecutive } => {
                parked >= consecutive && last_mass >= expected_last_dwell
            }
            StopRule::ArgmaxParked { consecutive } => parked >= consecutive,
            StopRule::Fixed { .. } => false,
        };
        if done {
            stopped_by = StoppedBy::StopRule;
            break;
        }
    }

    let alignment = AlignmentMatrix::from_distributions(&rows);
    let stop_step = alignment.steps() - 1;
    let realized = realized_durations(&alignment.slice_rows(1..stop_step + 1));
    Ok(SimResult {
        alignment,
        realized_frames: realized.frames,
        monotone: realized.monotone,
        stop_step,
        stopped_by,
        config: cfg.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::Mechanism;
    use crate::score::FrameSpec;
    use crate::tokens::{oracle_tokens, Q_MIN};
    use ndarray::array;

    #[test]
    fn realized_examples() {
        let a = AlignmentMatrix::from_rows(array![
            [1.0, 0.0, 0.0],
            [0.9, 0.1, 0.0],
            [0.1, 0.8, 0.1],
            [0.0, 0.7, 0.3],
            [0.0, 0.6, 0.4],
            [0.0, 0.2, 0.8]
        ]);
        let r = realized_durations(&a);
        assert_eq!(r.frames, vec![2, 3, 1]);
        assert!(r.monotone);

        let single = AlignmentMatrix::from_rows(array![[0.7, 0.2, 0.1]]);
        assert_eq!(realized_durations(&single).frames, vec![1, 0, 0]);

        let back = AlignmentMatrix::from_rows(array![[0.9, 0.1], [0.2, 0.8], [0.6, 0.4]]);
        let r = realized_durations(&back);
        assert_eq!(r.frames, vec![2, 1]);
        assert!(!r.monotone);
    }

    #[test]
    fn oracle_run_hits_targets() {
        let seq = PhonemeSequence::from_frames(&[10, 10, 10], FrameSpec::default());
        let q = oracle_tokens(&seq, Q_MIN);
        let res = run_simulation(&seq, &q, &SimConfig::default()).unwrap();
        assert_eq!(res.stopped_by, StoppedBy::StopRule);
        for (r, d) in res.realized_frames.iter().zip(seq.targets()) {
            assert!((*r as i64 - d as i64).abs() <= 2, "{:?}", res.realized_frames);
        }
        assert_eq!(res.realized_frames.iter().sum::<u32>() as usize, res.stop_step);
    }

    #[test]
    fn unit_tokens_fixed_steps_are_successive_deltas() {
        let seq = PhonemeSequence::from_frames(&[4, 7, 2, 9], FrameSpec::default());
        let q = TransitionTokens::constant(4, 1.0).unwrap();
        let cfg = SimConfig {
            stop: StopRule::Fixed { steps: 4 },
            energy: SynthEnergySpec {
                mode: EnergyMode::NoisyDiagonal,
                noise_sigma: 1.5,
                ..Default::default()
            },
            ..Default::default()
        };
        let res = run_simulation(&seq, &q, &cfg).unwrap();
        assert_eq!(res.stopped_by, StoppedBy::FixedSteps);
        for t in 0..=4 {
            let hot = t.min(3);
            assert_eq!(res.alignment.argmax()[t], hot);
            assert_eq!(res.alignment.row(t)[hot], 1.0);
        }
    }

    #[test]
    fn max_steps_is_flagged() {
        let seq = PhonemeSequence::from_frames(&[50, 50], FrameSpec::default());
        let q = oracle_tokens(&seq, Q_MIN);
        let cfg = SimConfig {
            max_steps: 10,
            ..Default::default()
        };
        let res = run_simulation(&seq, &q, &cfg).unwrap();
        assert!(res.failed_to_stop());
        assert_eq!(res.stop_step, 10);
    }

    #[test]
    fn literal_parked_rule_stops_early() {
        let seq = PhonemeSequence::from_frames(&[10, 10, 10], FrameSpec::default());
        let q = oracle_tokens(&seq, Q_MIN);
        let cfg = SimConfig {
            stop: StopRule::ArgmaxParked { consecutive: 3 },
            ..Default::default()
        };
        let res = run_simulation(&seq, &q, &cfg).unwrap();
        assert_eq!(res.realized_frames[2], 3);
    }

    #[test]
    fn config_errors() {
        let seq = PhonemeSequence::from_frames(&[3, 3], FrameSpec::default());
        let q = oracle_tokens(&seq, Q_MIN);
        let bad = SimConfig {
            max_steps: 0,
            ..Default::default()
        };
        assert!(matches!(run_simulation(&seq, &q, &bad), Err(SimError::Config(_))));
        let short = TransitionTokens::constant(1, 0.5).unwrap();
        assert!(matches!(
            run_simulation(&seq, &short, &SimConfig::default()),
            Err(SimError::TokenCount(1, 2))
        ));
        let spiky = SimConfig {
            energy: SynthEnergySpec {
                mode: EnergyMode::AdversarialSpike,
                spike_schedule: vec![(1, 5)],
                spike_magnitude: 3.0,
                ..Default::default()
            },
            ..Default::default()
        };
        assert!(matches!(
            run_simulation(&seq, &q, &spiky),
            Err(SimError::SpikeOutOfRange { phoneme: 5, .. })
        ));
        let la = SimConfig {
            opts: StepOptions::new(Mechanism::La, false),
            ..Default::default()
        };
        assert!(run_simulation(&seq, &q, &la).is_ok());
    }
}
