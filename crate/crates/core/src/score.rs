//! Musical score ingestion and expansion onto the decoder frame grid.
//!
//! A [`Score`] is an ordered list of notes, each carrying a syllable, its
//! phonemes, a pitch, a length in beats and an optional tempo override. Scores
//! come from either the native JSON document or a small subset of MusicXML
//! (see [`musicxml`]). [`expand_to_phonemes`] turns a score into the
//! per-phoneme frame targets `d_n` that drive the alignment lattice.

pub mod lexicon;
pub mod musicxml;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use lexicon::Lexicon;
pub use musicxml::{parse_musicxml, parse_musicxml_with_default};

/// The silence phoneme that rests expand to.
pub const SILENCE: &str = "sil";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScoreError {
    #[error("malformed score document: {0}")]
    Malformed(String),
    #[error("missing required field `{field}` at note {note}")]
    MissingField { note: usize, field: &'static str },
    #[error("non-positive duration at note {0}")]
    NonPositiveDuration(usize),
    #[error("non-positive tempo at note {0}")]
    NonPositiveTempo(usize),
    #[error("non-positive default tempo")]
    NonPositiveDefaultTempo,
    #[error("score has no notes")]
    Empty,
    #[error("midi pitch {pitch} out of range at note {note}")]
    PitchOutOfRange { note: usize, pitch: i64 },
    #[error("missing <divisions> before note {0}")]
    MissingDivisions(usize),
    #[error("unsupported pitch step `{step}` at note {note}")]
    UnsupportedStep { note: usize, step: String },
    #[error("no tempo directive before note {0} and no default tempo supplied")]
    MissingTempo(usize),
    #[error("unsupported MusicXML feature `{feature}`{}", at_note(*.note))]
    Unsupported { note: Option<usize>, feature: String },
    #[error("unknown syllable `{syllable}` at note {note} has no explicit phonemes")]
    UnknownSyllable { note: usize, syllable: String },
    #[error("lexicon line {line}: {msg}")]
    Lexicon { line: usize, msg: String },
    #[error("frame shift must be positive")]
    InvalidFrameShift,
}

fn at_note(note: Option<usize>) -> String {
    note.map(|n| format!(" at note {n}")).unwrap_or_default()
}

pub type Result<T> = std::result::Result<T, ScoreError>;

/// Pitch of a note: a MIDI note number or a rest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Pitch {
    Midi(u8),
    Rest,
}

impl Pitch {
    pub fn is_rest(self) -> bool {
        matches!(self, Pitch::Rest)
    }

    pub fn midi(self) -> Option<u8> {
        match self {
            Pitch::Midi(m) => Some(m),
            Pitch::Rest => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoteEvent {
    pub syllable: String,
    /// Explicit phonemes. Empty means "resolve the syllable through the
    /// lexicon at expansion time". Rests always carry `["sil"]`.
    pub phonemes: Vec<String>,
    pub pitch: Pitch,
    pub duration_beats: f64,
    pub tempo_bpm: Option<f64>,
}

impl NoteEvent {
    pub fn new(syllable: &str, phonemes: &[&str], midi: u8, duration_beats: f64) -> Self {
        NoteEvent {
            syllable: syllable.to_string(),
            phonemes: phonemes.iter().map(|p| p.to_string()).collect(),
            pitch: Pitch::Midi(midi),
            duration_beats,
            tempo_bpm: None,
        }
    }

    pub fn rest(duration_beats: f64) -> Self {
        NoteEvent {
            syllable: SILENCE.to_string(),
            phonemes: vec![SILENCE.to_string()],
            pitch: Pitch::Rest,
            duration_beats,
            tempo_bpm: None,
        }
    }

    pub fn with_tempo(mut self, tempo_bpm: f64) -> Self {
        self.tempo_bpm = Some(tempo_bpm);
        self
    }

    /// Wall-clock length of the note at the given effective tempo.
    pub fn seconds(&self, tempo_bpm: f64) -> f64 {
        self.duration_beats * 60.0 / tempo_bpm
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Score {
    pub title: Option<String>,
    pub default_tempo_bpm: f64,
    pub notes: Vec<NoteEvent>,
}

impl Score {
    /// Checks every invariant of the data model, reporting the first
    /// offending note.
    pub fn validate(&self) -> Result<()> {
        if !(self.default_tempo_bpm > 0.0 && self.default_tempo_bpm.is_finite()) {
            return Err(ScoreError::NonPositiveDefaultTempo);
        }
        if self.notes.is_empty() {
            return Err(ScoreError::Empty);
        }
        for (i, note) in self.notes.iter().enumerate() {
            if !(note.duration_beats > 0.0 && note.duration_beats.is_finite()) {
                return Err(ScoreError::NonPositiveDuration(i));
            }
            if let Some(t) = note.tempo_bpm {
                if !(t > 0.0 && t.is_finite()) {
                    return Err(ScoreError::NonPositiveTempo(i));
                }
            }
        }
        Ok(())
    }

    pub fn effective_tempo(&self, index: usize) -> f64 {
        self.notes[index].tempo_bpm.unwrap_or(self.default_tempo_bpm)
    }

    pub fn effective_tempos(&self) -> Vec<f64> {
        (0..self.notes.len()).map(|i| self.effective_tempo(i)).collect()
    }

    pub fn total_seconds(&self) -> f64 {
        self.notes
            .iter()
            .enumerate()
            .map(|(i, n)| n.seconds(self.effective_tempo(i)))
            .sum()
    }

    /// Multiplies the default tempo and every override by `factor`.
    pub fn scale_tempo(&self, factor: f64) -> Score {
        let mut out = self.clone();
        out.default_tempo_bpm *= factor;
        for note in &mut out.notes {
            if let Some(t) = note.tempo_bpm.as_mut() {
                *t *= factor;
            }
        }
        out
    }
}

// Native JSON schema. Field order here is the canonical output order.

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NativeScore {
    tempo_bpm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    title: Option<String>,
    notes: Option<Vec<NativeNote>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NativeNote {
    syllable: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    phonemes: Option<Vec<String>>,
    // Rests are an explicit null, so absence and null must be told apart.
    #[serde(default, deserialize_with = "present_nullable")]
    midi_pitch: Option<Option<i64>>,
    duration_beats: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tempo_bpm: Option<f64>,
}

fn present_nullable<'de, D>(de: D) -> std::result::Result<Option<Option<i64>>, D::Error>
where
    D: serde::Deserializer<'de>,
{
    Option::<i64>::deserialize(de).map(Some)
}

/// Parses the native JSON score document.
pub fn parse_score_native(text: &str) -> Result<Score> {
    let doc: NativeScore =
        serde_json::from_str(text).map_err(|e| ScoreError::Malformed(e.to_string()))?;
    let default_tempo_bpm = doc
        .tempo_bpm
        .ok_or_else(|| ScoreError::Malformed("missing required field `tempo_bpm`".into()))?;
    let raw_notes = doc
        .notes
        .ok_or_else(|| ScoreError::Malformed("missing required field `notes`".into()))?;

    let mut notes = Vec::with_capacity(raw_notes.len());
    for (i, raw) in raw_notes.into_iter().enumerate() {
        let syllable = raw
            .syllable
            .ok_or(ScoreError::MissingField { note: i, field: "syllable" })?;
        let midi = raw
            .midi_pitch
            .ok_or(ScoreError::MissingField { note: i, field: "midi_pitch" })?;
        let duration_beats = raw
            .duration_beats
            .ok_or(ScoreError::MissingField { note: i, field: "duration_beats" })?;
        let pitch = match midi {
            None => Pitch::Rest,
            Some(m) if (0..=127).contains(&m) => Pitch::Midi(m as u8),
            Some(m) => return Err(ScoreError::PitchOutOfRange { note: i, pitch: m }),
        };
        let phonemes = match (pitch, raw.phonemes) {
            (Pitch::Rest, _) => vec![SILENCE.to_string()],
            (_, Some(p)) => p,
            (_, None) => Vec::new(),
        };
        notes.push(NoteEvent {
            syllable,
            phonemes,
            pitch,
            duration_beats,
            tempo_bpm: raw.tempo_bpm,
        });
    }
    let score = Score {
        title: doc.title,
        default_tempo_bpm,
        notes,
    };
    score.validate()?;
    Ok(score)
}

/// Canonical native serialization: pretty-printed JSON with a fixed field
/// order and a trailing newline. Parsing the output yields an equal score.
pub fn serialize_native(score: &Score) -> String {
    let doc = NativeScore {
        tempo_bpm: Some(score.default_tempo_bpm),
        title: score.title.clone(),
        notes: Some(
            score
                .notes
                .iter()
                .map(|n| NativeNote {
                    syllable: Some(n.syllable.clone()),
                    phonemes: if n.phonemes.is_empty() || n.pitch.is_rest() {
                        None
                    } else {
                        Some(n.phonemes.clone())
                    },
                    midi_pitch: Some(n.pitch.midi().map(i64::from)),
                    duration_beats: Some(n.duration_beats),
                    tempo_bpm: n.tempo_bpm,
                })
                .collect(),
        ),
    };
    let mut out = serde_json::to_string_pretty(&doc).expect("score serializes");
    out.push('\n');
    out
}

/// Seconds per decoder frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameSpec {
    pub frame_shift_s: f64,
}

impl FrameSpec {
    pub fn new(frame_shift_s: f64) -> Result<Self> {
        if frame_shift_s > 0.0 && frame_shift_s.is_finite() {
            Ok(FrameSpec { frame_shift_s })
        } else {
            Err(ScoreError::InvalidFrameShift)
        }
    }
}

impl Default for FrameSpec {
    fn default() -> Self {
        FrameSpec {
            frame_shift_s: 0.010,
        }
    }
}

/// Rounds half away from zero after snapping away float noise below 1e-9,
/// so that e.g. 0.125 s / 0.01 s lands on 12.5 and rounds to 13.
fn round_frames(x: f64) -> u64 {
    let snapped = (x * 1e9).round() / 1e9;
    snapped.round().max(0.0) as u64
}

/// Number of decoder frames a note occupies at `tempo_bpm`, never less than 1.
pub fn frames_for_seconds(seconds: f64, frames: FrameSpec) -> u32 {
    round_frames(seconds / frames.frame_shift_s).max(1) as u32
}

pub fn frames_for(note: &NoteEvent, tempo_bpm: f64, frames: FrameSpec) -> u32 {
    frames_for_seconds(note.seconds(tempo_bpm), frames)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhonemeEvent {
    pub phoneme: String,
    pub pitch: Pitch,
    pub duration_s: f64,
    pub tempo_bpm: f64,
    pub target_frames: u32,
    pub note_index: usize,
}

/// A note whose frame budget could not give every phoneme its own frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BudgetWarning {
    pub note_index: usize,
    pub budget: u32,
    pub phonemes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhonemeSequence {
    pub events: Vec<PhonemeEvent>,
    pub warnings: Vec<BudgetWarning>,
}

impl PhonemeSequence {
    /// Builds a sequence straight from frame targets, one rest-pitched
    /// phoneme per target. Handy for lattice experiments without a score.
    pub fn from_frames(targets: &[u32], frames: FrameSpec) -> Self {
        let events = targets
            .iter()
            .enumerate()
            .map(|(i, &d)| PhonemeEvent {
                phoneme: format!("p{i}"),
                pitch: Pitch::Rest,
                duration_s: d as f64 * frames.frame_shift_s,
                tempo_bpm: 60.0,
                target_frames: d.max(1),
                note_index: i,
            })
            .collect();
        PhonemeSequence {
            events,
            warnings: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn targets(&self) -> Vec<u32> {
        self.events.iter().map(|e| e.target_frames).collect()
    }

    pub fn total_frames(&self) -> u64 {
        self.events.iter().map(|e| e.target_frames as u64).sum()
    }

    /// Number of notes the sequence was expanded from.
    pub fn note_count(&self) -> usize {
        self.events.last().map_or(0, |e| e.note_index + 1)
    }

    /// Sums a per-phoneme quantity back onto notes.
    pub fn per_note<T: Copy + Into<f64>>(&self, per_phoneme: &[T]) -> Vec<f64> {
        let mut out = vec![0.0; self.note_count()];
        for (e, &v) in self.events.iter().zip(per_phoneme) {
            out[e.note_index] += v.into();
        }
        out
    }
}

/// Splits `budget` frames over `ratios`: each share is rounded, the last
/// phoneme absorbs the residual, and every share is at least one frame.
/// Returns `None` when the budget is smaller than the phoneme count.
fn split_budget(budget: u32, ratios: &[f64]) -> Option<Vec<u32>> {
    let k = ratios.len();
    if (budget as usize) < k {
        return None;
    }
    let mut shares: Vec<u32> = ratios[..k - 1]
        .iter()
        .map(|r| (round_frames(budget as f64 * r) as u32).max(1))
        .collect();
    loop {
        let used: u32 = shares.iter().sum();
        if used < budget {
            shares.push(budget - used);
            return Some(shares);
        }
        // Rounding overshot; shave the largest earlier share.
        let (idx, _) = shares
            .iter()
            .enumerate()
            .filter(|(_, &s)| s > 1)
            .max_by_key(|(i, &s)| (s, std::cmp::Reverse(*i)))?;
        shares[idx] -= 1;
    }
}

/// Expands every note into phonemes with integer frame targets.
///
/// Phonemes come from the note itself or, when it has none, from the
/// lexicon. Lexicon ratios are used whenever the lexicon entry lists the
/// same phonemes as the note; otherwise the budget is split equally.
pub fn expand_to_phonemes(
    score: &Score,
    lexicon: &Lexicon,
    frames: FrameSpec,
) -> Result<PhonemeSequence> {
    score.validate()?;
    let mut events = Vec::new();
    let mut warnings = Vec::new();

    for (i, note) in score.notes.iter().enumerate() {
        let tempo = score.effective_tempo(i);
        let entry = lexicon.get(&note.syllable);
        let (phonemes, ratios): (Vec<String>, Vec<f64>) = if note.phonemes.is_empty() {
            match entry {
                Some(e) => (e.phonemes(), e.ratios()),
                None => {
                    return Err(ScoreError::UnknownSyllable {
                        note: i,
                        syllable: note.syllable.clone(),
                    })
                }
            }
        } else {
            let k = note.phonemes.len();
            let ratios = match entry {
                Some(e) if e.phonemes() == note.phonemes => e.ratios(),
                _ => vec![1.0 / k as f64; k],
            };
            (note.phonemes.clone(), ratios)
        };

        let budget = frames_for(note, tempo, frames);
        let shares = match split_budget(budget, &ratios) {
            Some(s) => s,
            None => {
                warnings.push(BudgetWarning {
                    note_index: i,
                    budget,
                    phonemes: phonemes.len(),
                });
                vec![1; phonemes.len()]
            }
        };
        let seconds = note.seconds(tempo);
        for ((phoneme, share), ratio) in phonemes.into_iter().zip(shares).zip(&ratios) {
            events.push(PhonemeEvent {
                phoneme,
                pitch: note.pitch,
                duration_s: seconds * ratio,
                tempo_bpm: tempo,
                target_frames: share,
                note_index: i,
            });
        }
    }
    Ok(PhonemeSequence { events, warnings })
}
