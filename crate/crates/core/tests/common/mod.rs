#![allow(dead_code)]

use std::path::PathBuf;

use gdca::attention::{normalize_energies, AlignmentDistribution, Convention, Mechanism, StepOptions, WindowShape};
use gdca::tokens::{TransitionTokens, Q_MIN};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn read_fixture(name: &str) -> String {
    std::fs::read_to_string(fixture(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

/// One randomized step input.
#[derive(Debug, Clone)]
pub struct StepCase {
    pub p_prev: AlignmentDistribution,
    pub q: TransitionTokens,
    pub e: Vec<f64>,
    pub opts: StepOptions,
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A probability vector over `n` phonemes with a random contiguous support.
pub fn random_simplex(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let lo = rng.gen_range(0..n);
    let hi = rng.gen_range(lo..n);
    let mut p = vec![0.0; n];
    for v in &mut p[lo..=hi] {
        *v = rng.gen_range(0.01..1.0);
    }
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= s);
    p
}

pub fn random_energies(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(-4.0..4.0)).collect();
    normalize_energies(&raw).unwrap()
}

pub fn random_tokens(rng: &mut ChaCha8Rng, n: usize) -> TransitionTokens {
    TransitionTokens::new((0..n).map(|_| rng.gen_range(Q_MIN..=1.0)).collect()).unwrap()
}

pub fn random_case(rng: &mut ChaCha8Rng) -> StepCase {
    let n = rng.gen_range(2..=64);
    let mechanism = [Mechanism::La, Mechanism::Fa, Mechanism::Gdca][rng.gen_range(0..3)];
    let opts = StepOptions {
        mechanism,
        filter_enabled: rng.gen_bool(0.5),
        window_width: 2 * rng.gen_range(1..=12),
        window_shape: if rng.gen_bool(0.5) { WindowShape::Rectangular } else { WindowShape::Triangular },
        convention: if rng.gen_bool(0.5) { Convention::Move } else { Convention::Stay },
    };
    StepCase {
        p_prev: AlignmentDistribution::new(random_simplex(rng, n), 0).unwrap(),
        q: random_tokens(rng, n),
        e: random_energies(rng, n),
        opts,
    }
}

/// Phonemes `p_t` may reach from `p_prev`: current support and one to the
/// right.
pub fn reachable(p_prev: &[f64]) -> Vec<bool> {
    (0..p_prev.len())
        .map(|n| p_prev[n] > 0.0 || (n > 0 && p_prev[n - 1] > 0.0))
        .collect()
}
