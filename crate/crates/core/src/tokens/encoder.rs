//! Duration encoder: a per-phoneme two-layer map from duration features to a
//! transition token in (0, 1).
//!
//! ```text
//! x' = (x - shift) / scale
//! h  = tanh(W1 x' + b1)
//! z  = w2 . h + b2
//! q  = 1/2 + (1/2 - eps) tanh(z / 2)
//! ```
//!
//! The last line is a logistic squash pulled in by `eps`, so outputs stay
//! strictly inside (0, 1) even when `tanh` saturates in floating point.

use std::fmt::Write as _;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Result, TokenError, TransitionTokens};
use crate::score::PhonemeSequence;

const SQUASH_EPS: f64 = 1e-12;

/// Per-phoneme feature rows: `duration_s`, `tempo_bpm`, `ln(target_frames)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DurationFeatures {
    pub rows: Array2<f64>,
}

impl DurationFeatures {
    pub const WIDTH: usize = 3;

    pub fn from_sequence(seq: &PhonemeSequence) -> Self {
        let mut rows = Array2::zeros((seq.len(), Self::WIDTH));
        for (mut row, e) in rows.axis_iter_mut(Axis(0)).zip(&seq.events) {
            row[0] = e.duration_s;
            row[1] = e.tempo_bpm;
            row[2] = (e.target_frames as f64).ln();
        }
        DurationFeatures { rows }
    }

    pub fn from_rows(rows: Array2<f64>) -> Self {
        DurationFeatures { rows }
    }

    pub fn len(&self) -> usize {
        self.rows.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.nrows() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DurationEncoder {
    /// Fixed input standardization, not trained.
    pub shift: Array1<f64>,
    pub scale: Array1<f64>,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array1<f64>,
    pub b2: f64,
}

/// Gradients with the same layout as the trainable part of the encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderGrads {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array1<f64>,
    pub b2: f64,
}

/// Intermediate values of one row's forward pass.
struct RowTrace {
    x: Array1<f64>,
    h: Array1<f64>,
    z: f64,
}

fn squash(z: f64) -> f64 {
    0.5 + (0.5 - SQUASH_EPS) * (0.5 * z).tanh()
}

fn squash_grad(z: f64) -> f64 {
    let t = (0.5 * z).tanh();
    (0.5 - SQUASH_EPS) * 0.5 * (1.0 - t * t)
}

impl DurationEncoder {
    /// Standardization tuned to feature magnitudes on a 10 ms grid.
    fn default_standardization() -> (Array1<f64>, Array1<f64>) {
        (
            Array1::from(vec![0.5, 120.0, 3.0]),
            Array1::from(vec![0.5, 60.0, 1.5]),
        )
    }

    pub fn zeros(hidden: usize) -> Self {
        let (shift, scale) = Self::default_standardization();
        DurationEncoder {
            shift,
            scale,
            w1: Array2::zeros((hidden, DurationFeatures::WIDTH)),
            b1: Array1::zeros(hidden),
            w2: Array1::zeros(hidden),
            b2: 0.0,
        }
    }

    /// Uniform Glorot-style initialization from a seeded stream.
    pub fn random(hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut enc = Self::zeros(hidden);
        let inputs = DurationFeatures::WIDTH as f64;
        let a1 = (6.0 / (inputs + hidden as f64)).sqrt();
        let a2 = (6.0 / (hidden as f64 + 1.0)).sqrt();
        enc.w1.mapv_inplace(|_| rng.gen_range(-a1..a1));
        enc.b1.mapv_inplace(|_| rng.gen_range(-0.1..0.1));
        enc.w2.mapv_inplace(|_| rng.gen_range(-a2..a2));
        enc.b2 = rng.gen_range(-0.1..0.1);
        enc
    }

    pub fn hidden(&self) -> usize {
        self.w1.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.w1.ncols()
    }

    fn check_shapes(&self) -> Result<()> {
        let h = self.hidden();
        let d = self.input_dim();
        if self.b1.len() != h || self.w2.len() != h || self.shift.len() != d || self.scale.len() != d
        {
            return Err(TokenError::Shape("inconsistent encoder parameter shapes".into()));
        }
        Ok(())
    }

    fn check_features(&self, feats: &DurationFeatures) -> Result<()> {
        self.check_shapes()?;
        if feats.rows.ncols() != self.input_dim() {
            return Err(TokenError::Shape(format!(
                "features have {} columns, encoder expects {}",
                feats.rows.ncols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    fn trace(&self, row: ArrayView1<f64>) -> RowTrace {
        let x = (&row - &self.shift) / &self.scale;
        let h = (self.w1.dot(&x) + &self.b1).mapv(f64::tanh);
        let z = self.w2.dot(&h) + self.b2;
        RowTrace { x, h, z }
    }

    /// Token for a single feature row.
    pub fn token_for_row(&self, row: ArrayView1<f64>) -> f64 {
        squash(self.trace(row).z)
    }

    pub fn forward(&self, feats: &DurationFeatures) -> Result<TransitionTokens> {
        self.check_features(feats)?;
        let q = feats
            .rows
            .axis_iter(Axis(0))
            .map(|row| self.token_for_row(row))
            .collect();
        TransitionTokens::new(q)
    }

    /// Gradient of a scalar loss with respect to every trainable parameter,
    /// given `upstream[n] = dLoss/dq_n`.
    pub fn backward(&self, feats: &DurationFeatures, upstream: &[f64]) -> Result<EncoderGrads> {
        self.check_features(feats)?;
        if upstream.len() != feats.len() {
            return Err(TokenError::Shape(format!(
                "upstream gradient has {} entries for {} rows",
                upstream.len(),
                feats.len()
            )));
        }
        let mut grads = EncoderGrads::zeros_like(self);
        for (row, &g) in feats.rows.axis_iter(Axis(0)).zip(upstream) {
            if g == 0.0 {
                continue;
            }
            let t = self.trace(row);
            let gz = g * squash_grad(t.z);
            grads.b2 += gz;
            grads.w2.scaled_add(gz, &t.h);
            let ga = (&self.w2 * gz) * t.h.mapv(|h| 1.0 - h * h);
            grads.b1 += &ga;
            for (mut w_row, &gai) in grads.w1.axis_iter_mut(Axis(0)).zip(&ga) {
                w_row.scaled_add(gai, &t.x);
            }
        }
        Ok(grads)
    }

    /// Trainable parameters in a fixed order: `w1` row-major, `b1`, `w2`, `b2`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.w1.iter().copied().collect();
        v.extend(self.b1.iter());
        v.extend(self.w2.iter());
        v.push(self.b2);
        v
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        let h = self.hidden();
        let d = self.input_dim();
        assert_eq!(flat.len(), h * d + 2 * h + 1, "flat parameter length");
        let (w1, rest) = flat.split_at(h * d);
        let (b1, rest) = rest.split_at(h);
        let (w2, rest) = rest.split_at(h);
        self.w1.iter_mut().zip(w1).for_each(|(p, v)| *p = *v);
        self.b1.iter_mut().zip(b1).for_each(|(p, v)| *p = *v);
        self.w2.iter_mut().zip(w2).for_each(|(p, v)| *p = *v);
        self.b2 = rest[0];
    }

    /// Flat key-value text with declared shapes. Numbers use the shortest
    /// representation that parses back to the same `f64`.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# duration encoder parameters\n");
        let mut put = |key: &str, shape: String, values: &mut dyn Iterator<Item = f64>| {
            write!(out, "{key} {shape}").unwrap();
            for v in values {
                write!(out, " {v}").unwrap();
            }
            out.push('\n');
        };
        let (h, d) = (self.hidden(), self.input_dim());
        put("shift", format!("{d}"), &mut self.shift.iter().copied());
        put("scale", format!("{d}"), &mut self.scale.iter().copied());
        put("w1", format!("{h}x{d}"), &mut self.w1.iter().copied());
        put("b1", format!("{h}"), &mut self.b1.iter().copied());
        put("w2", format!("{h}"), &mut self.w2.iter().copied());
        put("b2", "1".into(), &mut std::iter::once(self.b2));
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut fields: std::collections::HashMap<String, (Vec<usize>, Vec<f64>)> =
            Default::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| TokenError::ParamFormat { line: idx + 1, msg };
            let mut parts = line.split_whitespace();
            let key = parts.next().unwrap().to_string();
            let shape_txt = parts.next().ok_or_else(|| err("missing shape".into()))?;
            let shape = shape_txt
                .split('x')
                .map(|s| s.parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| err(format!("bad shape `{shape_txt}`")))?;
            let values = parts
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| err("bad number".into()))?;
            if values.len() != shape.iter().product::<usize>() {
                return Err(err(format!(
                    "`{key}` declares {shape_txt} but has {} values",
                    values.len()
                )));
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(err(format!("`{key}` has non-finite values")));
            }
            fields.insert(key, (shape, values));
        }
        let mut take = |key: &str| {
            fields.remove(key).ok_or_else(|| TokenError::ParamFormat {
                line: 0,
                msg: format!("missing `{key}`"),
            })
        };
        let (w1_shape, w1) = take("w1")?;
        if w1_shape.len() != 2 {
            return Err(TokenError::Shape("w1 must be two-dimensional".into()));
        }
        let enc = DurationEncoder {
            shift: Array1::from(take("shift")?.1),
            scale: Array1::from(take("scale")?.1),
            w1: Array2::from_shape_vec((w1_shape[0], w1_shape[1]), w1)
                .map_err(|e| TokenError::Shape(e.to_string()))?,
            b1: Array1::from(take("b1")?.1),
            w2: Array1::from(take("w2")?.1),
            b2: take("b2")?.1[0],
        };
        enc.check_shapes()?;
        Ok(enc)
    }
}

impl EncoderGrads {
    pub fn zeros_like(enc: &DurationEncoder) -> Self {
        EncoderGrads {
            w1: Array2::zeros(enc.w1.raw_dim()),
            b1: Array1::zeros(enc.b1.len()),
            w2: Array1::zeros(enc.w2.len()),
            b2: 0.0,
        }
    }

    /// Same order as [`DurationEncoder::to_flat`].
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.w1.iter().copied().collect();
        v.extend(self.b1.iter());
        v.extend(self.w2.iter());
        v.push(self.b2);
        v
    }
}
