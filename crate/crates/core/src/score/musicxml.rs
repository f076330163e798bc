//! A deliberately small MusicXML reader.
//!
//! Supported: a single-part `score-partwise` document whose measures contain
//! `attributes/divisions`, `note` elements with `pitch` or `rest`, `duration`
//! and `lyric/text`, plus tempo given by `sound@tempo` (directly in the
//! measure or inside a `direction`). Chords, ties, grace notes, tuplets,
//! multiple voices (`backup`/`forward`) and multiple parts are rejected with
//! [`ScoreError::Unsupported`] instead of being skipped.

use roxmltree::{Document, Node};

use super::{NoteEvent, Pitch, Result, Score, ScoreError};

/// Parses a MusicXML document that carries its own tempo directive.
pub fn parse_musicxml(text: &str) -> Result<Score> {
    parse_musicxml_with_default(text, None)
}

/// Like [`parse_musicxml`], falling back to `default_tempo` when no tempo
/// directive precedes the first note.
pub fn parse_musicxml_with_default(text: &str, default_tempo: Option<f64>) -> Result<Score> {
    let doc = Document::parse(text).map_err(|e| ScoreError::Malformed(e.to_string()))?;
    let root = doc.root_element();
    if root.tag_name().name() != "score-partwise" {
        return Err(unsupported(None, root.tag_name().name()));
    }

    let title = child(root, "work")
        .and_then(|w| child(w, "work-title"))
        .or_else(|| child(root, "movement-title"))
        .and_then(|n| n.text())
        .map(|t| t.trim().to_string())
        .filter(|t| !t.is_empty());

    let mut parts = root.children().filter(|n| n.has_tag_name("part"));
    let part = parts
        .next()
        .ok_or_else(|| ScoreError::Malformed("document has no <part>".into()))?;
    if parts.next().is_some() {
        return Err(unsupported(None, "multiple parts"));
    }

    let mut reader = PartReader {
        divisions: None,
        tempo: None,
        default_tempo: None,
        caller_default: default_tempo,
        notes: Vec::new(),
    };
    for measure in part.children().filter(Node::is_element) {
        if !measure.has_tag_name("measure") {
            return Err(unsupported(None, measure.tag_name().name()));
        }
        reader.measure(measure)?;
    }
    if reader.notes.is_empty() {
        return Err(ScoreError::Empty);
    }
    let score = Score {
        title,
        default_tempo_bpm: reader.default_tempo.expect("set with the first note"),
        notes: reader.notes,
    };
    score.validate()?;
    Ok(score)
}

struct PartReader {
    divisions: Option<f64>,
    tempo: Option<f64>,
    default_tempo: Option<f64>,
    caller_default: Option<f64>,
    notes: Vec<NoteEvent>,
}

impl PartReader {
    fn measure(&mut self, measure: Node) -> Result<()> {
        for el in measure.children().filter(Node::is_element) {
            match el.tag_name().name() {
                "attributes" => {
                    if let Some(d) = child(el, "divisions") {
                        let value = number(d, self.notes.len(), "divisions")?;
                        if value <= 0.0 {
                            return Err(ScoreError::Malformed(format!(
                                "non-positive divisions before note {}",
                                self.notes.len()
                            )));
                        }
                        self.divisions = Some(value);
                    }
                }
                "direction" => {
                    for sound in el.descendants().filter(|n| n.has_tag_name("sound")) {
                        self.sound(sound)?;
                    }
                }
                "sound" => self.sound(el)?,
                "note" => self.note(el)?,
                "print" | "barline" => {}
                other => return Err(unsupported(Some(self.notes.len()), other)),
            }
        }
        Ok(())
    }

    fn sound(&mut self, sound: Node) -> Result<()> {
        if let Some(t) = sound.attribute("tempo") {
            let tempo: f64 = t
                .trim()
                .parse()
                .map_err(|_| ScoreError::Malformed(format!("bad tempo `{t}`")))?;
            if !(tempo > 0.0 && tempo.is_finite()) {
                return Err(ScoreError::NonPositiveTempo(self.notes.len()));
            }
            self.tempo = Some(tempo);
        }
        Ok(())
    }

    fn note(&mut self, note: Node) -> Result<()> {
        let index = self.notes.len();
        for el in note.children().filter(Node::is_element) {
            let name = el.tag_name().name();
            match name {
                "chord" | "grace" | "cue" | "unpitched" | "tie" | "time-modification" => {
                    return Err(unsupported(Some(index), name))
                }
                "notations" => {
                    if let Some(bad) = el
                        .descendants()
                        .find(|n| n.has_tag_name("tied") || n.has_tag_name("tuplet"))
                    {
                        return Err(unsupported(Some(index), bad.tag_name().name()));
                    }
                }
                _ => {}
            }
        }

        let divisions = self.divisions.ok_or(ScoreError::MissingDivisions(index))?;
        let tempo = match (self.tempo, self.default_tempo) {
            (Some(t), _) => t,
            (None, Some(d)) => d,
            (None, None) => self.caller_default.ok_or(ScoreError::MissingTempo(index))?,
        };
        let default_tempo = *self.default_tempo.get_or_insert(tempo);

        let duration = child(note, "duration").ok_or(ScoreError::MissingField {
            note: index,
            field: "duration",
        })?;
        let duration_beats = number(duration, index, "duration")? / divisions;

        let event = if child(note, "rest").is_some() {
            NoteEvent::rest(duration_beats)
        } else {
            let pitch = child(note, "pitch").ok_or(ScoreError::MissingField {
                note: index,
                field: "pitch",
            })?;
            let midi = midi_from_pitch(pitch, index)?;
            let syllable = child(note, "lyric")
                .and_then(|l| child(l, "text"))
                .and_then(|t| t.text())
                .map(str::trim)
                .filter(|t| !t.is_empty())
                .ok_or(ScoreError::MissingField {
                    note: index,
                    field: "lyric",
                })?;
            NoteEvent {
                syllable: syllable.to_string(),
                phonemes: Vec::new(),
                pitch: Pitch::Midi(midi),
                duration_beats,
                tempo_bpm: None,
            }
        };
        let tempo_bpm = (tempo != default_tempo).then_some(tempo);
        self.notes.push(NoteEvent { tempo_bpm, ..event });
        Ok(())
    }
}

fn midi_from_pitch(pitch: Node, index: usize) -> Result<u8> {
    let step_node = child(pitch, "step").ok_or(ScoreError::MissingField {
        note: index,
        field: "step",
    })?;
    let step = step_node.text().unwrap_or("").trim();
    let base: i64 = match step {
        "C" => 0,
        "D" => 2,
        "E" => 4,
        "F" => 5,
        "G" => 7,
        "A" => 9,
        "B" => 11,
        other => {
            return Err(ScoreError::UnsupportedStep {
                note: index,
                step: other.to_string(),
            })
        }
    };
    let octave = child(pitch, "octave").ok_or(ScoreError::MissingField {
        note: index,
        field: "octave",
    })?;
    let octave = integer(octave, index, "octave")?;
    let alter = match child(pitch, "alter") {
        Some(a) => integer(a, index, "alter")?,
        None => 0,
    };
    let midi = (octave + 1) * 12 + base + alter;
    if !(0..=127).contains(&midi) {
        return Err(ScoreError::PitchOutOfRange {
            note: index,
            pitch: midi,
        });
    }
    Ok(midi as u8)
}

fn child<'a, 'input>(node: Node<'a, 'input>, name: &str) -> Option<Node<'a, 'input>> {
    node.children().find(|n| n.has_tag_name(name))
}

fn number(node: Node, index: usize, what: &str) -> Result<f64> {
    let text = node.text().unwrap_or("").trim();
    text.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| ScoreError::Malformed(format!("bad {what} `{text}` at note {index}")))
}

fn integer(node: Node, index: usize, what: &str) -> Result<i64> {
    let value = number(node, index, what)?;
    if value.fract() != 0.0 {
        // microtonal alters are outside the supported subset
        return Err(unsupported(Some(index), &format!("fractional {what}")));
    }
    Ok(value as i64)
}

fn unsupported(note: Option<usize>, feature: &str) -> ScoreError {
    ScoreError::Unsupported {
        note,
        feature: feature.to_string(),
    }
}
