//! Full lattice runs and reverse-mode gradients through them.

use ndarray::{Array2, ArrayView2};

use super::step::{coefficients, init_alignment, step, StepTrace};
use super::{
    normalize_energies, AlignmentDistribution, AlignmentMatrix, AttentionError, Convention,
    Mechanism, Result, StepOptions,
};
use crate::tokens::TransitionTokens;

/// A forward run with everything the backward pass needs.
#[derive(Debug, Clone)]
pub struct LatticeRun {
    pub alignment: AlignmentMatrix,
    pub opts: StepOptions,
    tokens: Option<TransitionTokens>,
    traces: Vec<StepTrace>,
}

impl LatticeRun {
    pub fn traces(&self) -> &[StepTrace] {
        &self.traces
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatticeGrads {
    /// `dLoss/dq`; zeros for mechanisms that ignore tokens.
    pub tokens: Vec<f64>,
    /// `dLoss/dE`, one row per step (T x N).
    pub energies: Array2<f64>,
}

/// Initial alignment followed by one step per row of `energies` (T x N,
/// each row a normalized energy vector). The result has T + 1 rows.
pub fn lattice_forward(
    q: Option<&TransitionTokens>,
    energies: ArrayView2<f64>,
    opts: &StepOptions,
) -> Result<LatticeRun> {
    let n = energies.ncols();
    let mut current = init_alignment(n)?;
    let mut dists: Vec<AlignmentDistribution> = Vec::with_capacity(energies.nrows() + 1);
    let mut traces = Vec::with_capacity(energies.nrows());
    for row in energies.outer_iter() {
        let e = row.to_vec();
        let (next, trace) = step(&current, q, &e, opts)?;
        dists.push(std::mem::replace(&mut current, next));
        traces.push(trace);
    }
    dists.push(current);
    Ok(LatticeRun {
        alignment: AlignmentMatrix::from_distributions(&dists),
        opts: *opts,
        tokens: q.cloned(),
        traces,
    })
}

/// Same as [`lattice_forward`] with raw energies softmax-normalized per row.
pub fn lattice_forward_raw(
    q: Option<&TransitionTokens>,
    raw: ArrayView2<f64>,
    opts: &StepOptions,
) -> Result<LatticeRun> {
    let mut normalized = Array2::zeros(raw.raw_dim());
    for (mut dst, src) in normalized.outer_iter_mut().zip(raw.outer_iter()) {
        let e = normalize_energies(&src.to_vec())?;
        dst.assign(&ndarray::ArrayView1::from(&e));
    }
    lattice_forward(q, normalized.view(), opts)
}

/// Exact gradients of a scalar loss through a forward run, given
/// `upstream = dLoss/dP` over all T + 1 rows. Window masks are treated as
/// constants.
pub fn lattice_backward(run: &LatticeRun, upstream: ArrayView2<f64>) -> Result<LatticeGrads> {
    let rows = run.alignment.steps();
    let n = run.alignment.phonemes();
    if upstream.dim() != (rows, n) || run.traces.len() + 1 != rows {
        return Err(AttentionError::Shape(format!(
            "upstream is {:?}, forward cache has {} rows of {} phonemes",
            upstream.dim(),
            rows,
            n
        )));
    }
    let q = run.tokens.as_ref().map(|t| t.as_slice());
    let mut dq = vec![0.0; n];
    let mut de = Array2::zeros((rows - 1, n));
    // gradient flowing into p_t from later steps
    let mut carry = vec![0.0; n];

    for t in (1..rows).rev() {
        let trace = &run.traces[t - 1];
        let p = run.alignment.row(t);
        let gp: Vec<f64> = (0..n).map(|i| upstream[[t, i]] + carry[i]).collect();
        let inner: f64 = gp.iter().zip(p).map(|(g, v)| g * v).sum();
        let du: Vec<f64> = gp.iter().map(|g| (g - inner) / trace.normalizer).collect();

        let mut da = vec![0.0; n];
        for i in 0..n {
            de[[t - 1, i]] = du[i] * trace.recursion[i];
            let dr = du[i] * trace.energies[i];
            match run.opts.mechanism {
                Mechanism::La => {}
                Mechanism::Fa => {
                    da[i] += dr;
                    if i > 0 {
                        da[i - 1] += dr;
                    }
                }
                Mechanism::Gdca => {
                    let q = q.expect("GDCA runs carry tokens");
                    let c = coefficients(q, i, run.opts.convention);
                    da[i] += dr * c.stay;
                    dq[i] += dr * trace.masked[i] * c.d_stay;
                    if i > 0 {
                        da[i - 1] += dr * c.move_in;
                        dq[i - 1] += dr * trace.masked[i - 1] * c.d_move_in;
                    }
                }
            }
        }
        for i in 0..n {
            carry[i] = da[i] * trace.window[i];
        }
    }
    Ok(LatticeGrads {
        tokens: dq,
        energies: de,
    })
}

/// Column sums `sum_t p_t(n)` over all rows.
pub fn occupancy(alignment: &AlignmentMatrix) -> Vec<f64> {
    alignment.rows().sum_axis(ndarray::Axis(0)).to_vec()
}

/// Expected steps spent on each phoneme by the token-only chain, where every
/// phoneme (the last one included) exits with its token into an
/// end-of-sequence sink. With `q_n = 1/d_n` the occupancy converges to `d_n`
/// for every phoneme. Counts rows `0..=horizon`.
pub fn pure_lattice_occupancy(
    q: &TransitionTokens,
    horizon: usize,
    convention: Convention,
) -> Result<Vec<f64>> {
    let q = q.as_slice();
    let n = q.len();
    let (stay, leave): (Vec<f64>, Vec<f64>) = q
        .iter()
        .map(|&v| match convention {
            Convention::Move => (1.0 - v, v),
            Convention::Stay => (v, 1.0 - v),
        })
        .unzip();
    let mut p = init_alignment(n)?.p;
    let mut occ = p.clone();
    let mut next = vec![0.0; n];
    for _ in 0..horizon {
        for i in 0..n {
            let moved = if i > 0 { leave[i - 1] * p[i - 1] } else { 0.0 };
            next[i] = moved + stay[i] * p[i];
        }
        std::mem::swap(&mut p, &mut next);
        occ.iter_mut().zip(&p).for_each(|(o, v)| *o += v);
    }
    Ok(occ)
}
