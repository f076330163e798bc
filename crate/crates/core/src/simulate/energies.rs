//! Synthetic energy rows standing in for a trained content encoder.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use super::{Result, SimError};
use crate::attention::{content_energies, context_vector, normalize_energies, AlignmentDistribution, EnergyParams};
use crate::score::PhonemeSequence;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EnergyMode {
    /// Peak on the phoneme whose target interval contains the current frame.
    OracleDiagonal,
    /// Oracle diagonal plus Gaussian noise before the softmax.
    NoisyDiagonal,
    /// Noisy diagonal plus scheduled spikes on chosen phonemes.
    AdversarialSpike,
    /// Content energies from a seeded query recurrence.
    FromQueryGenerator,
}

impl std::str::FromStr for EnergyMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "oracle" | "oracle_diagonal" => Ok(EnergyMode::OracleDiagonal),
            "noisy" | "noisy_diagonal" => Ok(EnergyMode::NoisyDiagonal),
            "spike" | "adversarial_spike" => Ok(EnergyMode::AdversarialSpike),
            "query" | "from_query_generator" => Ok(EnergyMode::FromQueryGenerator),
            other => Err(format!("unknown energy mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SynthEnergySpec {
    pub mode: EnergyMode,
    pub noise_sigma: f64,
    pub spike_magnitude: f64,
    /// `(step, phoneme)` pairs receiving `spike_magnitude` extra energy.
    pub spike_schedule: Vec<(usize, usize)>,
    /// Energy drop per phoneme of distance from the diagonal.
    pub sharpness: f64,
}

impl Default for SynthEnergySpec {
    fn default() -> Self {
        SynthEnergySpec {
            mode: EnergyMode::OracleDiagonal,
            noise_sigma: 0.0,
            spike_magnitude: 0.0,
            spike_schedule: Vec::new(),
            sharpness: 2.0,
        }
    }
}

impl SynthEnergySpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(SimError::Config("noise sigma must be finite and >= 0".into()));
        }
        if !(self.sharpness > 0.0) || self.sharpness.is_nan() {
            return Err(SimError::Config("sharpness must be positive".into()));
        }
        if !self.spike_magnitude.is_finite() {
            return Err(SimError::Config("spike magnitude must be finite".into()));
        }
        Ok(())
    }
}

const QUERY_DIM: usize = 8;
const KEY_DIM: usize = 8;
const ATTN_DIM: usize = 8;

/// Seeded linear recurrence `m_t = tanh(A m_{t-1} + B c_{t-1})` feeding
/// content energies.
#[derive(Debug, Clone)]
struct QueryGenerator {
    params: EnergyParams,
    keys: Array2<f64>,
    recur: Array2<f64>,
    from_context: Array2<f64>,
    query: Array1<f64>,
}

impl QueryGenerator {
    fn new(n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        let mut draw = |shape: (usize, usize), scale: f64| {
            Array2::from_shape_fn(shape, |_| rng.gen_range(-scale..scale))
        };
        let keys = draw((n, KEY_DIM), 1.0);
        let recur = draw((QUERY_DIM, QUERY_DIM), 0.5);
        let from_context = draw((QUERY_DIM, KEY_DIM), 1.0);
        QueryGenerator {
            params: EnergyParams::random(QUERY_DIM, KEY_DIM, ATTN_DIM, 1.0, seed.wrapping_add(17)),
            keys,
            recur,
            from_context,
            query: Array1::zeros(QUERY_DIM),
        }
    }

    fn next(&mut self, p_prev: &AlignmentDistribution) -> Result<Vec<f64>> {
        let context = context_vector(p_prev, self.keys.view())?;
        self.query = (self.recur.dot(&self.query) + self.from_context.dot(&context)).mapv(f64::tanh);
        Ok(content_energies(&self.params, self.query.view(), self.keys.view())?.to_vec())
    }
}

/// Produces one normalized energy row per decoder step.
#[derive(Debug, Clone)]
pub struct EnergyGenerator {
    spec: SynthEnergySpec,
    seed: u64,
    /// First frame of each phoneme; `starts[n] <= f < starts[n + 1]`.
    starts: Vec<u64>,
    query: Option<QueryGenerator>,
}

impl EnergyGenerator {
    pub fn new(seq: &PhonemeSequence, spec: &SynthEnergySpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let n = seq.len();
        if spec.mode == EnergyMode::AdversarialSpike {
            if let Some(&(step, phoneme)) = spec.spike_schedule.iter().find(|(_, p)| *p >= n) {
                return Err(SimError::SpikeOutOfRange {
                    step,
                    phoneme,
                    phonemes: n,
                });
            }
        }
        let mut starts = Vec::with_capacity(n + 1);
        let mut acc = 0u64;
        starts.push(0);
        for e in &seq.events {
            acc += e.target_frames as u64;
            starts.push(acc);
        }
        let query = (spec.mode == EnergyMode::FromQueryGenerator).then(|| QueryGenerator::new(n, seed));
        Ok(EnergyGenerator {
            spec: spec.clone(),
            seed,
            starts,
            query,
        })
    }

    fn phonemes(&self) -> usize {
        self.starts.len() - 1
    }

    /// Phoneme whose target interval holds decoder step `t` (frame `t - 1`);
    /// steps past the end map to the last phoneme.
    pub fn diagonal_center(&self, t: usize) -> usize {
        let frame = t.saturating_sub(1) as u64;
        let n = self.phonemes();
        // starts is sorted; find the last start <= frame
        let idx = self.starts[..n].partition_point(|&s| s <= frame);
        idx.saturating_sub(1).min(n - 1)
    }

    /// Raw (pre-softmax) energies for step `t`.
    pub fn raw_row(&mut self, t: usize, p_prev: &AlignmentDistribution) -> Result<Vec<f64>> {
        let n = self.phonemes();
        let mut raw = match self.spec.mode {
            EnergyMode::FromQueryGenerator => {
                self.query.as_mut().expect("query mode has a generator").next(p_prev)?
            }
            _ => {
                let c = self.diagonal_center(t);
                (0..n)
                    .map(|i| -self.spec.sharpness * i.abs_diff(c) as f64)
                    .collect()
            }
        };
        let noisy = matches!(
            self.spec.mode,
            EnergyMode::NoisyDiagonal | EnergyMode::AdversarialSpike
        );
        if noisy && self.spec.noise_sigma > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            rng.set_stream(t as u64);
            for v in raw.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *v += self.spec.noise_sigma * z;
            }
        }
        if self.spec.mode == EnergyMode::AdversarialSpike {
            for &(step, phoneme) in &self.spec.spike_schedule {
                if step == t {
                    raw[phoneme] += self.spec.spike_magnitude;
                }
            }
        }
        Ok(raw)
    }

    /// Softmax-normalized energies for step `t`.
    pub fn row(&mut self, t: usize, p_prev: &AlignmentDistribution) -> Result<Vec<f64>> {
        let raw = self.raw_row(t, p_prev)?;
        Ok(normalize_energies(&raw)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::init_alignment;
    use crate::score::FrameSpec;

    fn seq() -> PhonemeSequence {
        PhonemeSequence::from_frames(&[3, 2, 4], FrameSpec::default())
    }

    #[test]
    fn diagonal_centers_follow_targets() {
        let g = EnergyGenerator::new(&seq(), &SynthEnergySpec::default(), 0).unwrap();
        let centers: Vec<usize> = (1..=11).map(|t| g.diagonal_center(t)).collect();
        assert_eq!(centers, vec![0, 0, 0, 1, 1, 2, 2, 2, 2, 2, 2]);
    }

    #[test]
    fn sharp_diagonal_is_one_hot() {
        let spec = SynthEnergySpec {
            sharpness: 1e3,
            ..Default::default()
        };
        let mut g = EnergyGenerator::new(&seq(), &spec, 0).unwrap();
        let p = init_alignment(3).unwrap();
        let row = g.row(7, &p).unwrap();
        assert!(row[2] >= 1.0 - 1e-9);
    }

    #[test]
    fn zero_noise_matches_oracle() {
        let p = init_alignment(3).unwrap();
        let mut oracle = EnergyGenerator::new(&seq(), &SynthEnergySpec::default(), 4).unwrap();
        let noisy_spec = SynthEnergySpec {
            mode: EnergyMode::NoisyDiagonal,
            ..Default::default()
        };
        let mut noisy = EnergyGenerator::new(&seq(), &noisy_spec, 4).unwrap();
        for t in 1..12 {
            assert_eq!(oracle.row(t, &p).unwrap(), noisy.row(t, &p).unwrap());
        }
    }

    #[test]
    fn rows_depend_only_on_seed_and_step() {
        let spec = SynthEnergySpec {
            mode: EnergyMode::NoisyDiagonal,
            noise_sigma: 0.7,
            ..Default::default()
        };
        let p = init_alignment(3).unwrap();
        let mut a = EnergyGenerator::new(&seq(), &spec, 9).unwrap();
        let mut b = EnergyGenerator::new(&seq(), &spec, 9).unwrap();
        let forward: Vec<_> = (1..6).map(|t| a.row(t, &p).unwrap()).collect();
        let backward: Vec<_> = (1..6).rev().map(|t| b.row(t, &p).unwrap()).collect();
        for (x, y) in forward.iter().zip(backward.iter().rev()) {
            assert_eq!(x, y);
        }
        let mut c = EnergyGenerator::new(&seq(), &spec, 10).unwrap();
        assert_ne!(c.row(1, &p).unwrap(), forward[0]);
    }

    #[test]
    fn spikes_land_on_schedule() {
        let spec = SynthEnergySpec {
            mode: EnergyMode::AdversarialSpike,
            spike_magnitude: 50.0,
            spike_schedule: vec![(2, 2)],
            ..Default::default()
        };
        let mut g = EnergyGenerator::new(&seq(), &spec, 0).unwrap();
        let p = init_alignment(3).unwrap();
        assert!(g.row(1, &p).unwrap()[0] > 0.5);
        assert!(g.row(2, &p).unwrap()[2] > 0.99);
    }

    #[test]
    fn query_generator_is_deterministic() {
        let spec = SynthEnergySpec {
            mode: EnergyMode::FromQueryGenerator,
            ..Default::default()
        };
        let p = init_alignment(3).unwrap();
        let mut a = EnergyGenerator::new(&seq(), &spec, 5).unwrap();
        let mut b = EnergyGenerator::new(&seq(), &spec, 5).unwrap();
        for t in 1..5 {
            let ra = a.row(t, &p).unwrap();
            assert_eq!(ra, b.row(t, &p).unwrap());
            assert!((ra.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
