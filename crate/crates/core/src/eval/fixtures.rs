//! Seeded family of adversarial-spike instances.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::score::{FrameSpec, PhonemeSequence};
use crate::simulate::{EnergyMode, SynthEnergySpec};

/// One instance: phoneme targets, energy noise and a spike schedule placing
/// attention bursts well away from the diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdversarialFixture {
    pub id: usize,
    pub seed: u64,
    pub targets: Vec<u32>,
    pub noise_sigma: f64,
    pub spike_magnitude: f64,
    pub sharpness: f64,
    pub spike_schedule: Vec<(usize, usize)>,
}

impl AdversarialFixture {
    pub fn sequence(&self) -> PhonemeSequence {
        PhonemeSequence::from_frames(&self.targets, FrameSpec::default())
    }

    pub fn energy_spec(&self) -> SynthEnergySpec {
        SynthEnergySpec {
            mode: EnergyMode::AdversarialSpike,
            noise_sigma: self.noise_sigma,
            spike_magnitude: self.spike_magnitude,
            spike_schedule: self.spike_schedule.clone(),
            sharpness: self.sharpness,
        }
    }
}

/// Spikes sit at least this far from the diagonal, outside the default
/// filter window.
const MIN_OFFSET: usize = 10;

/// `count` instances derived from `seed`; identical arguments give identical
/// fixtures.
pub fn adversarial_family(count: usize, seed: u64) -> Vec<AdversarialFixture> {
    (0..count)
        .map(|id| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(id as u64);
            let n = rng.gen_range(16..=24);
            let targets: Vec<u32> = (0..n).map(|_| rng.gen_range(4..=16)).collect();
            let starts: Vec<u32> = targets
                .iter()
                .scan(0, |acc, d| {
                    let s = *acc;
                    *acc += d;
                    Some(s)
                })
                .collect();
            let total: u32 = targets.iter().sum();
            let magnitude = rng.gen_range(40.0..100.0);
            let spikes = rng.gen_range(4..=8);
            let mut schedule = Vec::with_capacity(spikes);
            while schedule.len() < spikes {
                let t = rng.gen_range(2..=total as usize);
                let frame = (t - 1) as u32;
                let center = starts.partition_point(|&s| s <= frame) - 1;
                let offset = rng.gen_range(MIN_OFFSET..=MIN_OFFSET + 4);
                let phoneme = if rng.gen_bool(0.5) {
                    center.checked_sub(offset)
                } else {
                    Some(center + offset).filter(|&p| p < n)
                };
                if let Some(p) = phoneme {
                    if !schedule.iter().any(|&(s, _)| s == t) {
                        schedule.push((t, p));
                    }
                }
            }
            schedule.sort_unstable();
            AdversarialFixture {
                id,
                seed: seed.wrapping_add(id as u64),
                targets,
                noise_sigma: 0.5,
                spike_magnitude: magnitude,
                sharpness: 1.0,
                spike_schedule: schedule,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn family_is_reproducible_and_off_diagonal() {
        let a = adversarial_family(20, 7);
        assert_eq!(a, adversarial_family(20, 7));
        assert_ne!(a, adversarial_family(20, 8));
        for f in &a {
            let starts: Vec<u32> = f
                .targets
                .iter()
                .scan(0, |acc, d| {
                    let s = *acc;
                    *acc += d;
                    Some(s)
                })
                .collect();
            for &(t, p) in &f.spike_schedule {
                let center = starts.partition_point(|&s| s <= (t - 1) as u32) - 1;
                assert!(center.abs_diff(p) >= MIN_OFFSET);
                assert!(p < f.targets.len());
            }
        }
    }
}
