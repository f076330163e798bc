use gdca::eval::token_profile;
use gdca::score::{FrameSpec, PhonemeSequence};
use gdca::tokens::{
    mean_squared_error, sweep_dataset, train_encoder, DurationFeatures, TrainConfig, TransitionTokens,
};

const TEMPOS: [f64; 5] = [60.0, 90.0, 120.0, 150.0, 180.0];

fn held_out_mae(train: impl IntoIterator<Item = u32>, test: impl IntoIterator<Item = u32>) -> f64 {
    let data = sweep_dataset(train, &TEMPOS, 0.01);
    let out = train_encoder(&data, &TrainConfig::default()).unwrap();
    let test = sweep_dataset(test, &[75.0, 135.0], 0.01);
    let mut total = 0.0;
    for (feats, target) in &test {
        let q = out.encoder.forward(feats).unwrap();
        total += (q.as_slice()[0] - target.as_slice()[0]).abs();
    }
    total / test.len() as f64
}

#[test]
fn encoder_generalizes_to_unseen_durations_and_tempos() {
    let mae = held_out_mae((2..=100).step_by(2), (3..=99).step_by(2));
    assert!(mae <= 0.02, "held-out MAE {mae}");
}

#[test]
fn early_epochs_lower_the_loss() {
    let data = sweep_dataset(2..=100, &TEMPOS, 0.01);
    let out = train_encoder(&data, &TrainConfig::default()).unwrap();
    assert_eq!(out.loss_history.len(), 300);
    for w in out.loss_history[..5].windows(2) {
        assert!(w[1] < w[0], "{:?}", &out.loss_history[..5]);
    }
}

#[test]
fn training_is_bit_reproducible() {
    let data = sweep_dataset(2..=60, &TEMPOS, 0.01);
    let cfg = TrainConfig { epochs: 20, seed: 7, ..Default::default() };
    let a = train_encoder(&data, &cfg).unwrap();
    let b = train_encoder(&data, &cfg).unwrap();
    assert_eq!(a.encoder.to_flat(), b.encoder.to_flat());
    assert_eq!(a.loss_history, b.loss_history);
    assert_eq!(a.loss_csv(), b.loss_csv());
}

#[test]
fn trained_tokens_are_reported_against_the_oracle() {
    let data = sweep_dataset(2..=100, &TEMPOS, 0.01);
    let out = train_encoder(&data, &TrainConfig::default()).unwrap();
    let targets: Vec<u32> = (2..=100).step_by(7).collect();
    let seq = PhonemeSequence::from_frames(&targets, FrameSpec::default());
    let q = out.encoder.forward(&DurationFeatures::from_sequence(&seq)).unwrap();
    let oracle = gdca::tokens::tokens_for_frames(&targets, gdca::tokens::Q_MIN);
    assert!(mean_squared_error(q.as_slice(), oracle.as_slice()) < 1e-4);
    let profile = token_profile(&seq, &q);
    assert_eq!(profile.rows.len(), targets.len());
    // A well-fit encoder may still wiggle in the flat tail; the count is what matters.
    assert!(profile.antitone_violations <= targets.len());
    eprintln!("encoder antitone violations: {}", profile.antitone_violations);
    let pair = PhonemeSequence::from_frames(&[2, 4], FrameSpec::default());
    let exact = token_profile(&pair, &TransitionTokens::new(vec![0.5, 0.25]).unwrap());
    assert!(exact.antitone());
}
