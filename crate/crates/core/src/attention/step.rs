//! Single decoder steps for every mechanism, plus the window filter and the
//! context vector.

use ndarray::{Array1, ArrayView2};

use super::{
    argmax, AlignmentDistribution, AttentionError, Convention, Mechanism, Result, StepOptions,
    WindowShape, MIN_NORMALIZER,
};
use crate::tokens::TransitionTokens;

/// Everything a step computed on the way to `p_t`; kept for backward passes.
#[derive(Debug, Clone, PartialEq)]
pub struct StepTrace {
    /// Window weights applied to `p_{t-1}` (or to `e_t` for LA); all ones
    /// when the filter is off.
    pub window: Vec<f64>,
    /// `p_{t-1}` after the window.
    pub masked: Vec<f64>,
    /// Transition recursion before the energy product. For LA this is the
    /// window itself.
    pub recursion: Vec<f64>,
    pub energies: Vec<f64>,
    pub normalizer: f64,
}

pub fn init_alignment(n: usize) -> Result<AlignmentDistribution> {
    if n == 0 {
        return Err(AttentionError::NoPhonemes);
    }
    let mut p = vec![0.0; n];
    p[0] = 1.0;
    Ok(AlignmentDistribution { p, step: 0 })
}

/// Window weights around `argmax(p)`: indices in `[m - L/2, m + L/2]` get a
/// positive weight, everything else zero. Rectangular windows use weight 1;
/// triangular windows taper linearly from 1 at `m`.
pub fn window_weights(p: &[f64], width: usize, shape: WindowShape) -> Vec<f64> {
    let m = argmax(p);
    let half = width / 2;
    let lo = m.saturating_sub(half);
    let hi = (m + half).min(p.len().saturating_sub(1));
    (0..p.len())
        .map(|i| {
            if i < lo || i > hi {
                0.0
            } else {
                match shape {
                    WindowShape::Rectangular => 1.0,
                    WindowShape::Triangular => {
                        1.0 - (i.abs_diff(m) as f64) / (half as f64 + 1.0)
                    }
                }
            }
        })
        .collect()
}

/// Masks `p_prev` outside the window around its argmax. Not renormalized.
pub fn dynamic_filter(p_prev: &AlignmentDistribution, width: usize, shape: WindowShape) -> Vec<f64> {
    window_weights(&p_prev.p, width, shape)
        .iter()
        .zip(&p_prev.p)
        .map(|(w, p)| w * p)
        .collect()
}

/// Move-in and stay coefficients for phoneme `n`, together with their
/// derivatives with respect to `q_{n-1}` and `q_n`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Coefficients {
    pub move_in: f64,
    pub d_move_in: f64,
    pub stay: f64,
    pub d_stay: f64,
}

pub(crate) fn coefficients(q: &[f64], n: usize, convention: Convention) -> Coefficients {
    let (move_in, d_move_in) = match (n, convention) {
        (0, _) => (0.0, 0.0),
        (_, Convention::Move) => (q[n - 1], 1.0),
        (_, Convention::Stay) => (1.0 - q[n - 1], -1.0),
    };
    // the final phoneme is absorbing under both conventions
    let (stay, d_stay) = match convention {
        _ if n + 1 == q.len() => (1.0, 0.0),
        Convention::Move => (1.0 - q[n], -1.0),
        Convention::Stay => (q[n], 1.0),
    };
    Coefficients {
        move_in,
        d_move_in,
        stay,
        d_stay,
    }
}

fn check_lengths(p_prev: &AlignmentDistribution, e_norm: &[f64], q: Option<&[f64]>) -> Result<()> {
    let n = p_prev.len();
    if n == 0 {
        return Err(AttentionError::NoPhonemes);
    }
    if e_norm.len() != n {
        return Err(AttentionError::LengthMismatch {
            what: "energies",
            got: e_norm.len(),
            expected: n,
        });
    }
    if let Some(q) = q {
        if q.len() != n {
            return Err(AttentionError::LengthMismatch {
                what: "tokens",
                got: q.len(),
                expected: n,
            });
        }
    }
    if e_norm.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(AttentionError::NonFinite("energies"));
    }
    Ok(())
}

/// Runs one step of `opts.mechanism`. `q` is required for GDCA and ignored
/// otherwise.
pub fn step(
    p_prev: &AlignmentDistribution,
    q: Option<&TransitionTokens>,
    e_norm: &[f64],
    opts: &StepOptions,
) -> Result<(AlignmentDistribution, StepTrace)> {
    opts.validate()?;
    let q = match opts.mechanism {
        Mechanism::Gdca => Some(
            q.ok_or_else(|| AttentionError::Shape("GDCA step needs transition tokens".into()))?
                .as_slice(),
        ),
        _ => None,
    };
    check_lengths(p_prev, e_norm, q)?;
    let n = p_prev.len();

    let window = if opts.filter_enabled {
        window_weights(&p_prev.p, opts.window_width, opts.window_shape)
    } else {
        vec![1.0; n]
    };
    let masked: Vec<f64> = window.iter().zip(&p_prev.p).map(|(w, p)| w * p).collect();

    let recursion: Vec<f64> = match opts.mechanism {
        Mechanism::La => window.clone(),
        Mechanism::Fa => (0..n)
            .map(|i| masked[i] + if i > 0 { masked[i - 1] } else { 0.0 })
            .collect(),
        Mechanism::Gdca => {
            let q = q.expect("checked above");
            (0..n)
                .map(|i| {
                    let c = coefficients(q, i, opts.convention);
                    let moved = if i > 0 { c.move_in * masked[i - 1] } else { 0.0 };
                    moved + c.stay * masked[i]
                })
                .collect()
        }
    };

    let mut p: Vec<f64> = recursion.iter().zip(e_norm).map(|(r, e)| r * e).collect();
    let normalizer: f64 = p.iter().sum();
    if !(normalizer >= MIN_NORMALIZER) {
        return Err(AttentionError::DegenerateNormalizer {
            step: p_prev.step + 1,
            normalizer,
        });
    }
    p.iter_mut().for_each(|v| *v /= normalizer);
    let trace = StepTrace {
        window,
        masked,
        recursion,
        energies: e_norm.to_vec(),
        normalizer,
    };
    Ok((
        AlignmentDistribution {
            p,
            step: p_prev.step + 1,
        },
        trace,
    ))
}

/// Duration-controlled step: filter, transition recursion with tokens,
/// energy product, normalization.
pub fn gdca_step(
    p_prev: &AlignmentDistribution,
    q: &TransitionTokens,
    e_norm: &[f64],
    opts: &StepOptions,
) -> Result<AlignmentDistribution> {
    let opts = StepOptions {
        mechanism: Mechanism::Gdca,
        ..*opts
    };
    step(p_prev, Some(q), e_norm, &opts).map(|(p, _)| p)
}

/// Forward attention: `p_t(n) ∝ (p_{t-1}(n-1) + p_{t-1}(n)) e_t(n)`.
pub fn fa_step(
    p_prev: &AlignmentDistribution,
    e_norm: &[f64],
    opts: &StepOptions,
) -> Result<AlignmentDistribution> {
    let opts = StepOptions {
        mechanism: Mechanism::Fa,
        ..*opts
    };
    step(p_prev, None, e_norm, &opts).map(|(p, _)| p)
}

/// Content-only step: `p_t = e_t`, or `e_t` masked by the window around the
/// previous argmax and renormalized when the filter is on.
pub fn la_step(
    p_prev: &AlignmentDistribution,
    e_norm: &[f64],
    opts: &StepOptions,
) -> Result<AlignmentDistribution> {
    let opts = StepOptions {
        mechanism: Mechanism::La,
        ..*opts
    };
    step(p_prev, None, e_norm, &opts).map(|(p, _)| p)
}

/// `c_t = sum_n p(n) h_n`. `keys` is N x key_dim.
pub fn context_vector(p: &AlignmentDistribution, keys: ArrayView2<f64>) -> Result<Array1<f64>> {
    if keys.nrows() != p.len() {
        return Err(AttentionError::LengthMismatch {
            what: "keys",
            got: keys.nrows(),
            expected: p.len(),
        });
    }
    Ok(keys.t().dot(&ndarray::ArrayView1::from(&p.p)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokens::Q_MIN;
    use ndarray::array;

    fn dist(p: &[f64]) -> AlignmentDistribution {
        AlignmentDistribution::new(p.to_vec(), 0).unwrap()
    }

    fn toks(q: &[f64]) -> TransitionTokens {
        TransitionTokens::new(q.to_vec()).unwrap()
    }

    #[test]
    fn init_examples() {
        assert_eq!(init_alignment(3).unwrap().p, vec![1.0, 0.0, 0.0]);
        assert_eq!(init_alignment(1).unwrap().p, vec![1.0]);
        assert_eq!(init_alignment(7).unwrap().p.iter().sum::<f64>(), 1.0);
        assert_eq!(init_alignment(0), Err(AttentionError::NoPhonemes));
    }

    #[test]
    fn gdca_forced_move_and_forced_stay() {
        let o = StepOptions::default();
        let p = gdca_step(&dist(&[1.0, 0.0]), &toks(&[1.0, 1.0]), &[0.5, 0.5], &o).unwrap();
        assert_eq!(p.p, vec![0.0, 1.0]);
        let p = gdca_step(&dist(&[1.0, 0.0]), &toks(&[Q_MIN, 1.0]), &[0.5, 0.5], &o).unwrap();
        assert!((p.p[0] - 1.0).abs() <= Q_MIN + 1e-12);
        assert!(p.p[1] <= Q_MIN + 1e-12);
    }

    #[test]
    fn literal_convention_swaps_coefficients() {
        let o = StepOptions {
            convention: Convention::Stay,
            ..Default::default()
        };
        // q_0 = 0.2: literal stays with 0.2 and moves with 0.8
        let p = gdca_step(&dist(&[1.0, 0.0, 0.0]), &toks(&[0.2, 0.5, 0.5]), &[1.0 / 3.0; 3], &o)
            .unwrap();
        assert!((p.p[0] - 0.2).abs() < 1e-15);
        assert!((p.p[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn fa_examples() {
        let o = StepOptions::default();
        assert_eq!(fa_step(&dist(&[1.0, 0.0]), &[0.5, 0.5], &o).unwrap().p, vec![0.5, 0.5]);
        assert_eq!(fa_step(&dist(&[0.0, 1.0]), &[0.9, 0.1], &o).unwrap().p, vec![0.0, 1.0]);
    }

    #[test]
    fn la_examples() {
        let o = StepOptions::default();
        let p = la_step(&dist(&[1.0, 0.0]), &[0.2, 0.8], &o).unwrap();
        assert!((p.p[0] - 0.2).abs() < 1e-15 && (p.p[1] - 0.8).abs() < 1e-15);
        let p = la_step(&dist(&[1.0, 0.0, 0.0, 0.0]), &[0.25; 4], &o).unwrap();
        assert_eq!(p.p, vec![0.25; 4]);

        let windowed = StepOptions {
            mechanism: Mechanism::La,
            filter_enabled: true,
            window_width: 2,
            ..Default::default()
        };
        let p = la_step(&dist(&[1.0, 0.0, 0.0, 0.0]), &[0.1, 0.3, 0.4, 0.2], &windowed).unwrap();
        assert_eq!(p.p[2], 0.0);
        assert_eq!(p.p[3], 0.0);
        assert!((p.p[0] - 0.25).abs() < 1e-15 && (p.p[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn filter_examples() {
        let p = dist(&[0.1, 0.2, 0.4, 0.2, 0.1]);
        assert_eq!(
            dynamic_filter(&p, 2, WindowShape::Rectangular),
            vec![0.0, 0.2, 0.4, 0.2, 0.0]
        );
        let p = dist(&[0.6, 0.4, 0.0, 0.0, 0.0]);
        assert_eq!(
            dynamic_filter(&p, 4, WindowShape::Rectangular),
            vec![0.6, 0.4, 0.0, 0.0, 0.0]
        );
        let tri = dynamic_filter(&dist(&[0.1, 0.2, 0.4, 0.2, 0.1]), 2, WindowShape::Triangular);
        assert_eq!(tri[2], 0.4);
        assert!((tri[1] - 0.1).abs() < 1e-15 && (tri[3] - 0.1).abs() < 1e-15);
        assert_eq!((tri[0], tri[4]), (0.0, 0.0));
    }

    #[test]
    fn step_errors() {
        let o = StepOptions::default();
        assert!(matches!(
            gdca_step(&dist(&[1.0, 0.0]), &toks(&[0.5]), &[0.5, 0.5], &o),
            Err(AttentionError::LengthMismatch { what: "tokens", .. })
        ));
        assert!(matches!(
            fa_step(&dist(&[1.0, 0.0]), &[1.0], &o),
            Err(AttentionError::LengthMismatch { what: "energies", .. })
        ));
        // all energy on a phoneme the recursion cannot reach
        assert!(matches!(
            fa_step(&dist(&[1.0, 0.0, 0.0]), &[0.0, 0.0, 1.0], &o),
            Err(AttentionError::DegenerateNormalizer { step: 1, .. })
        ));
        assert!(step(&dist(&[1.0]), None, &[1.0], &o).is_err());
    }

    #[test]
    fn context_examples() {
        let h = array![[1.0, 2.0], [3.0, 4.0]];
        assert_eq!(context_vector(&dist(&[1.0, 0.0]), h.view()).unwrap(), array![1.0, 2.0]);
        assert_eq!(context_vector(&dist(&[0.5, 0.5]), h.view()).unwrap(), array![2.0, 3.0]);
        let swapped = array![[3.0, 4.0], [1.0, 2.0]];
        let a = context_vector(&dist(&[0.3, 0.7]), h.view()).unwrap();
        let b = context_vector(&dist(&[0.7, 0.3]), swapped.view()).unwrap();
        assert_eq!(a, b);
    }
}
