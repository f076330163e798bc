//! Alignment metrics and experiment drivers.

mod fixtures;

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::attention::{AlignmentMatrix, Mechanism, StepOptions};
use crate::score::{expand_to_phonemes, FrameSpec, Lexicon, PhonemeSequence, Score};
use crate::simulate::{run_simulation, SimConfig, SimResult};
use crate::tokens::{oracle_tokens, TransitionTokens, Q_MIN};

pub use fixtures::{adversarial_family, AdversarialFixture};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("metric needs at least {needed} alignment rows, got {got}")]
    TooFewRows { needed: usize, got: usize },
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, crate::Error>;

/// Fraction of consecutive steps whose argmax does not move backwards.
pub fn monotonicity_score(alignment: &AlignmentMatrix) -> Result<f64> {
    let path = alignment.argmax();
    if path.len() < 2 {
        return Err(EvalError::TooFewRows { needed: 2, got: path.len() }.into());
    }
    let ok = path.windows(2).filter(|w| w[1] >= w[0]).count();
    Ok(ok as f64 / (path.len() - 1) as f64)
}

/// Mean over steps of the largest attention weight.
pub fn sharpness_score(alignment: &AlignmentMatrix) -> Result<f64> {
    let rows = alignment.steps();
    if rows == 0 {
        return Err(EvalError::TooFewRows { needed: 1, got: 0 }.into());
    }
    let total: f64 = alignment
        .rows()
        .outer_iter()
        .map(|r| r.iter().copied().fold(0.0, f64::max))
        .sum();
    Ok(total / rows as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DurationError {
    pub mae_frames: f64,
    pub mean_rel_err: f64,
}

pub fn duration_error(realized: &[u32], target: &[u32]) -> DurationError {
    let n = target.len().max(1) as f64;
    let (abs, rel) = realized
        .iter()
        .zip(target)
        .fold((0.0, 0.0), |(a, r), (&got, &want)| {
            let diff = (got as f64 - want as f64).abs();
            (a + diff, r + diff / want.max(1) as f64)
        });
    DurationError {
        mae_frames: abs / n,
        mean_rel_err: rel / n,
    }
}

/// Per-run summary shared by the report formats.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMetrics {
    pub monotonicity_score: f64,
    pub mean_max_prob: f64,
    pub duration_mae_frames: f64,
    pub duration_rel_err: f64,
    pub stop_step: usize,
    pub failed: bool,
}

/// A run fails if it never stopped or its argmax path is mostly
/// non-monotone.
pub const MIN_MONOTONICITY: f64 = 0.5;

pub fn run_metrics(result: &SimResult, targets: &[u32]) -> Result<RunMetrics> {
    let monotonicity = monotonicity_score(&result.alignment)?;
    let err = duration_error(&result.realized_frames, targets);
    Ok(RunMetrics {
        monotonicity_score: monotonicity,
        mean_max_prob: sharpness_score(&result.decoded())?,
        duration_mae_frames: err.mae_frames,
        duration_rel_err: err.mean_rel_err,
        stop_step: result.stop_step,
        failed: result.failed_to_stop() || monotonicity < MIN_MONOTONICITY,
    })
}

#[derive(Debug, Serialize)]
struct SimReportJson<'a> {
    label: String,
    config: &'a SimConfig,
    target_frames: &'a [u32],
    realized_frames: &'a [u32],
    monotone: bool,
    stop_step: usize,
    stopped_by: crate::simulate::StoppedBy,
    metrics: RunMetrics,
}

/// JSON report for one simulation: config echo, realized frames, stop step
/// and metrics.
pub fn sim_report_json(result: &SimResult, targets: &[u32]) -> Result<String> {
    let report = SimReportJson {
        label: result.label(),
        config: &result.config,
        target_frames: targets,
        realized_frames: &result.realized_frames,
        monotone: result.monotone,
        stop_step: result.stop_step,
        stopped_by: result.stopped_by,
        metrics: run_metrics(result, targets)?,
    };
    Ok(to_json(&report))
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

fn pool(jobs: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .expect("thread pool")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MechanismRow {
    pub label: String,
    pub mechanism: Mechanism,
    pub filter: bool,
    #[serde(flatten)]
    pub metrics: RunMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MechanismReport {
    pub rows: Vec<MechanismRow>,
}

/// The six ablation systems in report order.
pub const ABLATION: [(Mechanism, bool); 6] = [
    (Mechanism::La, false),
    (Mechanism::La, true),
    (Mechanism::Fa, false),
    (Mechanism::Fa, true),
    (Mechanism::Gdca, false),
    (Mechanism::Gdca, true),
];

impl MechanismReport {
    pub fn row(&self, label: &str) -> Option<&MechanismRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    pub fn to_json(&self) -> String {
        to_json(self)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{:<10} {:>8} {:>8} {:>9} {:>8} {:>6} {:>6}\n",
            "system", "monotone", "sharp", "mae", "rel_err", "stop", "failed"
        );
        for r in &self.rows {
            let m = &r.metrics;
            writeln!(
                out,
                "{:<10} {:>8.4} {:>8.4} {:>9.3} {:>8.4} {:>6} {:>6}",
                r.label, m.monotonicity_score, m.mean_max_prob, m.duration_mae_frames, m.duration_rel_err,
                m.stop_step, m.failed
            )
            .unwrap();
        }
        out
    }
}

/// Runs LA, LA+Window, FA, FA+DF, GDCA and GDCA+DF on identical energies and
/// seeds.
pub fn compare_mechanisms(
    seq: &PhonemeSequence,
    q: &TransitionTokens,
    base: &SimConfig,
) -> Result<MechanismReport> {
    compare_mechanisms_jobs(seq, q, base, 1)
}

pub fn compare_mechanisms_jobs(
    seq: &PhonemeSequence,
    q: &TransitionTokens,
    base: &SimConfig,
    jobs: usize,
) -> Result<MechanismReport> {
    let targets = seq.targets();
    let rows: Vec<Result<MechanismRow>> = pool(jobs).install(|| {
        ABLATION
            .par_iter()
            .map(|&(mechanism, filter)| {
                let cfg = SimConfig {
                    opts: StepOptions {
                        mechanism,
                        filter_enabled: filter,
                        ..base.opts
                    },
                    ..base.clone()
                };
                let res = run_simulation(seq, q, &cfg)?;
                Ok(MechanismRow {
                    label: cfg.opts.label(),
                    mechanism,
                    filter,
                    metrics: run_metrics(&res, &targets)?,
                })
            })
            .collect()
    });
    Ok(MechanismReport {
        rows: rows.into_iter().collect::<Result<_>>()?,
    })
}

/// Score, lexicon and frame grid an experiment expands with.
#[derive(Debug, Clone)]
pub struct ScoreSetup<'a> {
    pub score: &'a Score,
    pub lexicon: &'a Lexicon,
    pub frames: FrameSpec,
}

impl ScoreSetup<'_> {
    fn simulate(&self, score: &Score, cfg: &SimConfig) -> Result<(PhonemeSequence, SimResult)> {
        let seq = expand_to_phonemes(score, self.lexicon, self.frames)?;
        let q = oracle_tokens(&seq, Q_MIN);
        let res = run_simulation(&seq, &q, cfg)?;
        Ok((seq, res))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TempoRow {
    pub tempo_bpm: f64,
    pub target_frames: u64,
    pub stop_step: usize,
    /// `stop_step` relative to the first tempo.
    pub ratio: f64,
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TempoSweep {
    pub rows: Vec<TempoRow>,
}

impl TempoSweep {
    pub fn ratios(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.ratio).collect()
    }

    pub fn to_json(&self) -> String {
        to_json(self)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("tempo_bpm,target_frames,stop_step,ratio,failed\n");
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{}",
                r.tempo_bpm, r.target_frames, r.stop_step, r.ratio, r.failed
            )
            .unwrap();
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{:>8} {:>8} {:>8} {:>8}\n", "tempo", "target", "stop", "ratio");
        for r in &self.rows {
            writeln!(
                out,
                "{:>8} {:>8} {:>8} {:>8.4}",
                r.tempo_bpm, r.target_frames, r.stop_step, r.ratio
            )
            .unwrap();
        }
        out
    }
}

/// Re-times the whole score at each tempo (overrides scale along with the
/// default), re-derives oracle tokens, simulates, and reports decoded
/// lengths relative to the first tempo. Also returns each run.
pub fn tempo_sweep(
    setup: &ScoreSetup,
    tempos: &[f64],
    base: &SimConfig,
    jobs: usize,
) -> Result<(TempoSweep, Vec<SimResult>)> {
    if tempos.is_empty() || tempos.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
        return Err(EvalError::Invalid("tempos must be a non-empty list of positive values".into()).into());
    }
    let runs: Vec<Result<(PhonemeSequence, SimResult)>> = pool(jobs).install(|| {
        tempos
            .par_iter()
            .map(|&tempo| {
                let score = setup.score.scale_tempo(tempo / setup.score.default_tempo_bpm);
                setup.simulate(&score, base)
            })
            .collect()
    });
    let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
    let first = runs[0].1.stop_step as f64;
    let rows = tempos
        .iter()
        .zip(&runs)
        .map(|(&tempo_bpm, (seq, res))| TempoRow {
            tempo_bpm,
            target_frames: seq.total_frames(),
            stop_step: res.stop_step,
            ratio: res.stop_step as f64 / first,
            failed: res.failed_to_stop(),
        })
        .collect();
    Ok((TempoSweep { rows }, runs.into_iter().map(|(_, r)| r).collect()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DurationEdit {
    pub note_index: usize,
    pub factor: f64,
    pub before: Vec<f64>,
    pub after: Vec<f64>,
    /// `after / before` for the edited note.
    pub edited_ratio: f64,
    /// Largest `|after / before - 1|` over the other notes.
    pub max_other_change: f64,
}

/// Scales one note's length in beats and measures realized frames per note
/// before and after.
pub fn local_duration_edit(
    setup: &ScoreSetup,
    note_index: usize,
    factor: f64,
    base: &SimConfig,
) -> Result<DurationEdit> {
    if note_index >= setup.score.notes.len() || !(factor > 0.0) {
        return Err(EvalError::Invalid(format!("cannot scale note {note_index} by {factor}")).into());
    }
    let mut edited = setup.score.clone();
    edited.notes[note_index].duration_beats *= factor;

    let per_note = |score: &Score| -> Result<Vec<f64>> {
        let (seq, res) = setup.simulate(score, base)?;
        Ok(seq.per_note(&res.realized_frames))
    };
    let before = per_note(setup.score)?;
    let after = per_note(&edited)?;
    let edited_ratio = after[note_index] / before[note_index];
    let max_other_change = before
        .iter()
        .zip(&after)
        .enumerate()
        .filter(|(i, _)| *i != note_index)
        .map(|(_, (b, a))| (a / b - 1.0).abs())
        .fold(0.0, f64::max);
    Ok(DurationEdit {
        note_index,
        factor,
        before,
        after,
        edited_ratio,
        max_other_change,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TokenRow {
    pub phoneme: String,
    pub duration_s: f64,
    pub tempo_bpm: f64,
    pub d_frames: u32,
    pub q: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TokenProfile {
    pub rows: Vec<TokenRow>,
    /// Ordered pairs with `d_a >= d_b` but `q_a > q_b`.
    pub antitone_violations: usize,
}

impl TokenProfile {
    pub fn antitone(&self) -> bool {
        self.antitone_violations == 0
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("phoneme,duration_s,tempo_bpm,d_frames,q\n");
        for r in &self.rows {
            writeln!(out, "{},{},{},{},{}", r.phoneme, r.duration_s, r.tempo_bpm, r.d_frames, r.q)
                .unwrap();
        }
        out
    }
}

/// Tabulates tokens against durations and counts antitone violations.
pub fn token_profile(seq: &PhonemeSequence, tokens: &TransitionTokens) -> TokenProfile {
    let rows: Vec<TokenRow> = seq
        .events
        .iter()
        .zip(tokens.as_slice())
        .map(|(e, &q)| TokenRow {
            phoneme: e.phoneme.clone(),
            duration_s: e.duration_s,
            tempo_bpm: e.tempo_bpm,
            d_frames: e.target_frames,
            q,
        })
        .collect();
    let mut violations = 0;
    for a in &rows {
        for b in &rows {
            if a.d_frames >= b.d_frames && a.q > b.q + 1e-12 {
                violations += 1;
            }
        }
    }
    TokenProfile {
        rows,
        antitone_violations: violations,
    }
}
