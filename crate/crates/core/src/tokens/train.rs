//! Supervised training of the duration encoder against target tokens.

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::encoder::{DurationEncoder, DurationFeatures};
use super::{Result, TokenError, TransitionTokens};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    Zeros,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Loss {
    /// Mean of `(q - q*)^2` over phonemes.
    SquaredError,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub hidden: usize,
    pub init: Init,
    pub loss: Loss,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            epochs: 300,
            batch_size: 32,
            seed: 0,
            hidden: 16,
            init: Init::Random,
            loss: Loss::SquaredError,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(TokenError::Config("learning rate must be finite and >= 0".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.hidden == 0 {
            return Err(TokenError::Config(
                "epochs, batch size and hidden width must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub encoder: DurationEncoder,
    /// Full-dataset mean loss after each epoch.
    pub loss_history: Vec<f64>,
}

impl TrainOutcome {
    pub fn loss_csv(&self) -> String {
        let mut out = String::from("epoch,loss\n");
        for (e, l) in self.loss_history.iter().enumerate() {
            out.push_str(&format!("{e},{l}\n"));
        }
        out
    }
}

/// Adam moment buffers over the flat parameter vector.
struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Adam { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * grads[i];
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * grads[i] * grads[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

pub fn mean_squared_error(predicted: &[f64], target: &[f64]) -> f64 {
    let n = predicted.len().max(1) as f64;
    predicted
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / n
}

/// Minibatch Adam on the squared token error. Deterministic given the seed.
pub fn train_encoder(
    dataset: &[(DurationFeatures, TransitionTokens)],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(TokenError::EmptyDataset);
    }
    let mut rows = Vec::new();
    let mut targets = Vec::new();
    for (feats, q) in dataset {
        if feats.len() != q.len() {
            return Err(TokenError::Shape(format!(
                "{} feature rows for {} targets",
                feats.len(),
                q.len()
            )));
        }
        rows.extend(feats.rows.axis_iter(Axis(0)).map(|r| r.to_owned()));
        targets.extend_from_slice(q.as_slice());
    }
    if rows.is_empty() {
        return Err(TokenError::EmptyDataset);
    }
    let width = rows[0].len();
    let all = DurationFeatures::from_rows(stack(&rows, width));

    let mut encoder = match cfg.init {
        Init::Zeros => DurationEncoder::zeros(cfg.hidden),
        Init::Random => DurationEncoder::random(cfg.hidden, cfg.seed),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5eed));
    let mut flat = encoder.to_flat();
    let mut adam = Adam::new(flat.len());
    let mut order: Vec<usize> = (0..rows.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let picked: Vec<Array1<f64>> = batch.iter().map(|&i| rows[i].clone()).collect();
            let feats = DurationFeatures::from_rows(stack(&picked, width));
            let q = encoder.forward(&feats)?;
            let scale = 2.0 / batch.len() as f64;
            let upstream: Vec<f64> = q
                .as_slice()
                .iter()
                .zip(batch)
                .map(|(p, &i)| scale * (p - targets[i]))
                .collect();
            let grads = encoder.backward(&feats, &upstream)?.to_flat();
            adam.step(&mut flat, &grads, cfg.learning_rate);
            encoder.set_flat(&flat);
        }
        let loss = match encoder.forward(&all) {
            Ok(q) => mean_squared_error(q.as_slice(), &targets),
            Err(_) => f64::NAN,
        };
        if !loss.is_finite() {
            return Err(TokenError::Diverged(epoch));
        }
        history.push(loss);
    }
    Ok(TrainOutcome {
        encoder,
        loss_history: history,
    })
}

fn stack(rows: &[Array1<f64>], width: usize) -> Array2<f64> {
    let mut out = Array2::zeros((rows.len(), width));
    for (mut dst, src) in out.axis_iter_mut(Axis(0)).zip(rows) {
        dst.assign(src);
    }
    out
}

/// One single-row example per `(d, tempo)` pair with oracle target `1/d`.
pub fn sweep_dataset(
    frames: impl IntoIterator<Item = u32>,
    tempos: &[f64],
    frame_shift_s: f64,
) -> Vec<(DurationFeatures, TransitionTokens)> {
    let frames: Vec<u32> = frames.into_iter().collect();
    let mut out = Vec::new();
    for &d in &frames {
        for &tempo in tempos {
            let row = ndarray::array![[d as f64 * frame_shift_s, tempo, (d as f64).ln()]];
            let q = super::tokens_for_frames(&[d], super::Q_MIN);
            out.push((DurationFeatures::from_rows(row), q));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_half_targets_stay_solved() {
        let data: Vec<_> = sweep_dataset(2..10, &[120.0], 0.01)
            .into_iter()
            .map(|(f, _)| (f, TransitionTokens::constant(1, 0.5).unwrap()))
            .collect();
        let cfg = TrainConfig {
            init: Init::Zeros,
            epochs: 5,
            ..Default::default()
        };
        let out = train_encoder(&data, &cfg).unwrap();
        assert!(out.loss_history.iter().all(|&l| l < 1e-20));
    }

    #[test]
    fn zero_learning_rate_keeps_loss_constant() {
        let data = sweep_dataset(2..40, &[60.0, 120.0], 0.01);
        let cfg = TrainConfig {
            learning_rate: 0.0,
            epochs: 4,
            ..Default::default()
        };
        let out = train_encoder(&data, &cfg).unwrap();
        let first = out.loss_history[0];
        assert!(out.loss_history.iter().all(|&l| l == first));
    }

    #[test]
    fn divergence_is_reported_with_epoch() {
        let data = sweep_dataset(2..10, &[120.0], 0.01);
        let cfg = TrainConfig {
            learning_rate: f64::MAX,
            epochs: 3,
            ..Default::default()
        };
        // Adam's normalized step keeps parameters finite for huge but finite
        // rates only if the update stays finite; f64::MAX overflows.
        match train_encoder(&data, &cfg) {
            Err(TokenError::Diverged(e)) => assert_eq!(e, 0),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_config() {
        let data = sweep_dataset(2..4, &[120.0], 0.01);
        let cfg = TrainConfig { epochs: 0, ..Default::default() };
        assert!(matches!(train_encoder(&data, &cfg), Err(TokenError::Config(_))));
        assert!(matches!(
            train_encoder(&[], &TrainConfig::default()),
            Err(TokenError::EmptyDataset)
        ));
    }
}
