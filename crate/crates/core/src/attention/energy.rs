//! Content-based energies `e_t(n) = v . tanh(W m_t + V h_n + b)` and their
//! softmax normalization.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{AttentionError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyParams {
    /// `W`, attn_dim x query_dim.
    pub query_proj: Array2<f64>,
    /// `V`, attn_dim x key_dim.
    pub key_proj: Array2<f64>,
    /// `v`, attn_dim.
    pub score: Array1<f64>,
    /// `b`, attn_dim.
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyGrads {
    pub query_proj: Array2<f64>,
    pub key_proj: Array2<f64>,
    pub score: Array1<f64>,
    pub bias: Array1<f64>,
    pub query: Array1<f64>,
}

impl EnergyParams {
    pub fn zeros(query_dim: usize, key_dim: usize, attn_dim: usize) -> Self {
        EnergyParams {
            query_proj: Array2::zeros((attn_dim, query_dim)),
            key_proj: Array2::zeros((attn_dim, key_dim)),
            score: Array1::zeros(attn_dim),
            bias: Array1::zeros(attn_dim),
        }
    }

    /// Entries uniform in `[-scale, scale)` from a seeded stream.
    pub fn random(query_dim: usize, key_dim: usize, attn_dim: usize, scale: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self::zeros(query_dim, key_dim, attn_dim);
        let mut draw = |_: f64| rng.gen_range(-scale..scale);
        p.query_proj.mapv_inplace(&mut draw);
        p.key_proj.mapv_inplace(&mut draw);
        p.score.mapv_inplace(&mut draw);
        p.bias.mapv_inplace(&mut draw);
        p
    }

    pub fn attn_dim(&self) -> usize {
        self.score.len()
    }

    pub fn query_dim(&self) -> usize {
        self.query_proj.ncols()
    }

    pub fn key_dim(&self) -> usize {
        self.key_proj.ncols()
    }

    fn check(&self, query: ArrayView1<f64>, keys: ArrayView2<f64>) -> Result<()> {
        let a = self.attn_dim();
        if self.query_proj.nrows() != a || self.key_proj.nrows() != a || self.bias.len() != a {
            return Err(AttentionError::Shape("energy parameter shapes disagree".into()));
        }
        if query.len() != self.query_dim() {
            return Err(AttentionError::LengthMismatch {
                what: "query",
                got: query.len(),
                expected: self.query_dim(),
            });
        }
        if keys.ncols() != self.key_dim() {
            return Err(AttentionError::LengthMismatch {
                what: "key",
                got: keys.ncols(),
                expected: self.key_dim(),
            });
        }
        if keys.nrows() == 0 {
            return Err(AttentionError::NoPhonemes);
        }
        Ok(())
    }

    /// Parameters in a fixed order: `W`, `V` (row-major), `v`, `b`.
    pub fn to_flat(&self) -> Vec<f64> {
        self.query_proj
            .iter()
            .chain(self.key_proj.iter())
            .chain(self.score.iter())
            .chain(self.bias.iter())
            .copied()
            .collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        let mut it = flat.iter().copied();
        for p in self
            .query_proj
            .iter_mut()
            .chain(self.key_proj.iter_mut())
            .chain(self.score.iter_mut())
            .chain(self.bias.iter_mut())
        {
            *p = it.next().expect("flat parameter vector too short");
        }
        assert!(it.next().is_none(), "flat parameter vector too long");
    }
}

impl EnergyGrads {
    /// Parameter gradients in [`EnergyParams::to_flat`] order.
    pub fn to_flat(&self) -> Vec<f64> {
        self.query_proj
            .iter()
            .chain(self.key_proj.iter())
            .chain(self.score.iter())
            .chain(self.bias.iter())
            .copied()
            .collect()
    }
}

/// Pre-activations `W m + V h_n + b`, one row per key.
fn pre_activations(params: &EnergyParams, query: ArrayView1<f64>, keys: ArrayView2<f64>) -> Array2<f64> {
    let shared = params.query_proj.dot(&query) + &params.bias;
    let mut pre = keys.dot(&params.key_proj.t());
    pre += &shared;
    pre
}

/// Raw energies for every key. `keys` is N x key_dim.
pub fn content_energies(
    params: &EnergyParams,
    query: ArrayView1<f64>,
    keys: ArrayView2<f64>,
) -> Result<Array1<f64>> {
    params.check(query, keys)?;
    Ok(pre_activations(params, query, keys).mapv(f64::tanh).dot(&params.score))
}

/// Gradients of a scalar loss given `upstream[n] = dLoss/de(n)`.
pub fn content_energies_backward(
    params: &EnergyParams,
    query: ArrayView1<f64>,
    keys: ArrayView2<f64>,
    upstream: ArrayView1<f64>,
) -> Result<EnergyGrads> {
    params.check(query, keys)?;
    if upstream.len() != keys.nrows() {
        return Err(AttentionError::LengthMismatch {
            what: "upstream gradient",
            got: upstream.len(),
            expected: keys.nrows(),
        });
    }
    let act = pre_activations(params, query, keys).mapv(f64::tanh);
    // d e(n) / d act(n, k) = v_k; d act / d pre = 1 - act^2
    let score = act.t().dot(&upstream);
    let mut dpre = act.mapv(|a| 1.0 - a * a);
    dpre *= &params.score;
    dpre *= &upstream.insert_axis(Axis(1));
    let bias = dpre.sum_axis(Axis(0));
    let key_proj = dpre.t().dot(&keys);
    let query_proj = bias
        .view()
        .insert_axis(Axis(1))
        .dot(&query.insert_axis(Axis(0)));
    let dquery = params.query_proj.t().dot(&bias);
    Ok(EnergyGrads {
        query_proj,
        key_proj,
        score,
        bias,
        query: dquery,
    })
}

/// Softmax with max subtraction. Every output is strictly positive unless it
/// underflows, and the result sums to one.
pub fn normalize_energies(raw: &[f64]) -> Result<Vec<f64>> {
    if raw.is_empty() {
        return Err(AttentionError::NoPhonemes);
    }
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(AttentionError::NonFinite("energies"));
    }
    let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = raw.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exp.iter().sum();
    Ok(exp.into_iter().map(|v| v / total).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn zero_score_vector_gives_zero_energies() {
        let mut p = EnergyParams::random(3, 2, 4, 1.0, 1);
        p.score.fill(0.0);
        let e = content_energies(&p, array![0.1, 0.2, 0.3].view(), array![[1.0, 2.0], [3.0, 4.0]].view())
            .unwrap();
        assert_eq!(e, array![0.0, 0.0]);
    }

    #[test]
    fn identical_keys_score_equally() {
        let mut p = EnergyParams::random(2, 2, 3, 1.0, 2);
        p.query_proj.fill(0.0);
        p.bias.fill(0.0);
        let e = content_energies(&p, array![5.0, -1.0].view(), array![[0.3, 0.7], [0.3, 0.7]].view())
            .unwrap();
        assert_eq!(e[0], e[1]);
    }

    #[test]
    fn scalar_case_matches_hand_computation() {
        let p = EnergyParams::random(1, 1, 1, 1.0, 42);
        let (w, v_key, v, b) = (p.query_proj[[0, 0]], p.key_proj[[0, 0]], p.score[0], p.bias[0]);
        let m = 0.37;
        let keys = array![[-0.8], [0.25], [1.5]];
        let e = content_energies(&p, array![m].view(), keys.view()).unwrap();
        for n in 0..3 {
            let expect = v * (w * m + v_key * keys[[n, 0]] + b).tanh();
            assert!((e[n] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn dimension_mismatch() {
        let p = EnergyParams::zeros(3, 2, 4);
        assert!(matches!(
            content_energies(&p, array![1.0].view(), array![[1.0, 2.0]].view()),
            Err(AttentionError::LengthMismatch { what: "query", .. })
        ));
        assert!(matches!(
            content_energies(&p, array![1.0, 2.0, 3.0].view(), array![[1.0]].view()),
            Err(AttentionError::LengthMismatch { what: "key", .. })
        ));
    }

    #[test]
    fn softmax_examples() {
        let u = normalize_energies(&[0.0, 0.0, 0.0]).unwrap();
        assert!(u.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
        let t = normalize_energies(&[2f64.ln(), 0.0]).unwrap();
        assert!((t[0] - 2.0 / 3.0).abs() < 1e-15 && (t[1] - 1.0 / 3.0).abs() < 1e-15);
        let big = normalize_energies(&[1000.0, 0.0]).unwrap();
        assert_eq!(big[0], 1.0);
        assert!(big[1] >= 0.0 && big[1] < 1e-300);
        assert!(normalize_energies(&[f64::NAN]).is_err());
        assert!(normalize_energies(&[f64::INFINITY, 0.0]).is_err());
    }

    #[test]
    fn softmax_is_shift_invariant() {
        let a = normalize_energies(&[0.3, -1.2, 2.0]).unwrap();
        let b = normalize_energies(&[10.3, 8.8, 12.0]).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-14);
        }
    }
}
