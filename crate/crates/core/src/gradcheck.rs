//! Central finite-difference checks for every analytic gradient in the crate.
//!
//! Agreement is measured as the norm-wise relative error
//! `|a - n| / max(|a|, |n|)` between the analytic gradient `a` and the
//! numerical one `n`, both flattened over all checked parameters.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::attention::{
    content_energies, content_energies_backward, lattice_backward, lattice_forward, occupancy,
    normalize_energies, EnergyParams, StepOptions,
};
use crate::tokens::{DurationEncoder, DurationFeatures, TransitionTokens};

pub const DEFAULT_STEP: f64 = 1e-6;
pub const DEFAULT_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Energies,
    Encoder,
    Lattice,
}

impl Target {
    pub const ALL: [Target; 3] = [Target::Energies, Target::Encoder, Target::Lattice];
}

impl std::str::FromStr for Target {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "energies" => Ok(Target::Energies),
            "encoder" => Ok(Target::Encoder),
            "lattice" => Ok(Target::Lattice),
            other => Err(format!("unknown gradcheck target `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub target: Target,
    pub seed: u64,
    pub step: f64,
    pub tolerance: f64,
    pub parameters: usize,
    pub relative_error: f64,
    pub passed: bool,
}

/// Test hook: perturbs one analytic gradient entry before comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Corruption {
    pub index: usize,
    pub factor: f64,
}

pub fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    let denom = norm(analytic).max(norm(numeric));
    if denom == 0.0 {
        0.0
    } else {
        norm(&diff) / denom
    }
}

fn report(
    target: Target,
    seed: u64,
    mut analytic: Vec<f64>,
    numeric: Vec<f64>,
    corruption: Option<Corruption>,
) -> GradcheckReport {
    if let Some(c) = corruption {
        let i = c.index % analytic.len();
        analytic[i] = analytic[i] * c.factor + (c.factor - 1.0);
    }
    let relative_error = relative_error(&analytic, &numeric);
    GradcheckReport {
        target,
        seed,
        step: DEFAULT_STEP,
        tolerance: DEFAULT_TOLERANCE,
        parameters: analytic.len(),
        relative_error,
        passed: relative_error <= DEFAULT_TOLERANCE,
    }
}

pub fn run(target: Target, seed: u64, corruption: Option<Corruption>) -> GradcheckReport {
    match target {
        Target::Energies => check_energies(seed, corruption),
        Target::Encoder => check_encoder(seed, corruption),
        Target::Lattice => check_lattice(seed, corruption),
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: (usize, usize), lo: f64, hi: f64) -> Array2<f64> {
    Array2::from_shape_fn(shape, |_| rng.gen_range(lo..hi))
}

/// Loss `sum_n c_n e_n + e_n^2 / 2` over content energies, checked against
/// every entry of `W`, `V`, `v` and `b`.
pub fn check_energies(seed: u64, corruption: Option<Corruption>) -> GradcheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = EnergyParams::random(4, 3, 5, 0.8, seed ^ 0xe1);
    let query = Array1::from_shape_fn(4, |_| rng.gen_range(-1.0..1.0));
    let keys = uniform(&mut rng, (6, 3), -1.0, 1.0);
    let weights = Array1::from_shape_fn(6, |_| rng.gen_range(-1.0..1.0));

    let loss = |flat: &[f64]| {
        let mut p = params.clone();
        p.set_flat(flat);
        let e = content_energies(&p, query.view(), keys.view()).unwrap();
        e.iter().zip(&weights).map(|(e, c)| c * e + 0.5 * e * e).sum::<f64>()
    };
    let e = content_energies(&params, query.view(), keys.view()).unwrap();
    let upstream = &weights + &e;
    let analytic = content_energies_backward(&params, query.view(), keys.view(), upstream.view())
        .unwrap()
        .to_flat();
    let numeric = central_difference(loss, &params.to_flat(), DEFAULT_STEP);
    report(Target::Energies, seed, analytic, numeric, corruption)
}

/// Squared token error of the duration encoder against random targets.
pub fn check_encoder(seed: u64, corruption: Option<Corruption>) -> GradcheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let encoder = DurationEncoder::random(6, seed ^ 0xd0);
    let rows = Array2::from_shape_fn((5, DurationFeatures::WIDTH), |(_, c)| match c {
        0 => rng.gen_range(0.02..1.0),
        1 => rng.gen_range(50.0..200.0),
        _ => rng.gen_range(0.5..4.6),
    });
    let feats = DurationFeatures::from_rows(rows);
    let targets: Vec<f64> = (0..5).map(|_| rng.gen_range(0.01..0.9)).collect();

    let loss = |flat: &[f64]| {
        let mut enc = encoder.clone();
        enc.set_flat(flat);
        let q = enc.forward(&feats).unwrap();
        q.as_slice().iter().zip(&targets).map(|(q, t)| (q - t) * (q - t)).sum::<f64>()
    };
    let q = encoder.forward(&feats).unwrap();
    let upstream: Vec<f64> = q.as_slice().iter().zip(&targets).map(|(q, t)| 2.0 * (q - t)).collect();
    let analytic = encoder.backward(&feats, &upstream).unwrap().to_flat();
    let numeric = central_difference(loss, &encoder.to_flat(), DEFAULT_STEP);
    report(Target::Encoder, seed, analytic, numeric, corruption)
}

/// Occupancy loss `sum_n (occ_n - d_n)^2` over a three-phoneme GDCA
/// lattice, differentiated with respect to the tokens and every energy.
pub fn check_lattice(seed: u64, corruption: Option<Corruption>) -> GradcheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 3;
    let steps = 14;
    let q0: Vec<f64> = (0..n).map(|_| rng.gen_range(0.15..0.6)).collect();
    let targets: Vec<f64> = (0..n).map(|_| rng.gen_range(3.0..6.0)).collect();
    let mut energies = Array2::zeros((steps, n));
    for mut row in energies.outer_iter_mut() {
        let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        row.assign(&Array1::from(normalize_energies(&raw).unwrap()));
    }
    let opts = StepOptions::default();

    let occupancy_loss = |q: &[f64], e: &Array2<f64>| {
        let tokens = TransitionTokens::new(q.to_vec()).unwrap();
        let run = lattice_forward(Some(&tokens), e.view(), &opts).unwrap();
        occupancy(&run.alignment)
            .iter()
            .zip(&targets)
            .map(|(o, d)| (o - d) * (o - d))
            .sum::<f64>()
    };
    let flat_len = n + steps * n;
    let split = |flat: &[f64]| {
        let e = Array2::from_shape_vec((steps, n), flat[n..].to_vec()).unwrap();
        (flat[..n].to_vec(), e)
    };
    let mut x = q0.clone();
    x.extend(energies.iter());
    debug_assert_eq!(x.len(), flat_len);

    let tokens = TransitionTokens::new(q0).unwrap();
    let run = lattice_forward(Some(&tokens), energies.view(), &opts).unwrap();
    let occ = occupancy(&run.alignment);
    let mut upstream = Array2::zeros((steps + 1, n));
    for mut row in upstream.outer_iter_mut() {
        for (i, g) in row.iter_mut().enumerate() {
            *g = 2.0 * (occ[i] - targets[i]);
        }
    }
    let grads = lattice_backward(&run, upstream.view()).unwrap();
    let mut analytic = grads.tokens.clone();
    analytic.extend(grads.energies.iter());

    let numeric = central_difference(
        |flat| {
            let (q, e) = split(flat);
            occupancy_loss(&q, &e)
        },
        &x,
        DEFAULT_STEP,
    );
    report(Target::Lattice, seed, analytic, numeric, corruption)
}
