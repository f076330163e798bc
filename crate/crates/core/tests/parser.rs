mod common;

use common::read_fixture;
use gdca::score::{
    expand_to_phonemes, frames_for, parse_musicxml, parse_score_native, serialize_native, FrameSpec,
    Lexicon, NoteEvent, Pitch, Score, ScoreError,
};
use proptest::prelude::*;

const VALID: [&str; 6] = [
    "scale",
    "accidentals_rests",
    "tempo_change",
    "divisions_change",
    "octaves",
    "midmeasure_tempo",
];

#[test]
fn musicxml_fixtures_match_expected_native_bytes() {
    for name in VALID {
        let score = parse_musicxml(&read_fixture(&format!("musicxml/{name}.musicxml"))).unwrap();
        assert_eq!(
            serialize_native(&score),
            read_fixture(&format!("musicxml/{name}.json")),
            "{name}"
        );
    }
}

#[test]
fn musicxml_and_native_expand_identically() {
    let frames = FrameSpec::default();
    let lex = Lexicon::default();
    for name in VALID {
        let xml = parse_musicxml(&read_fixture(&format!("musicxml/{name}.musicxml"))).unwrap();
        let native = parse_score_native(&read_fixture(&format!("musicxml/{name}.json"))).unwrap();
        // MusicXML syllables carry no phonemes; give both the same spelling.
        let spell = |s: &Score| Score {
            notes: s
                .notes
                .iter()
                .map(|n| match n.pitch {
                    Pitch::Rest => n.clone(),
                    _ => NoteEvent { phonemes: vec![n.syllable.clone()], ..n.clone() },
                })
                .collect(),
            ..s.clone()
        };
        assert_eq!(
            expand_to_phonemes(&spell(&xml), &lex, frames).unwrap(),
            expand_to_phonemes(&spell(&native), &lex, frames).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn malformed_fixtures_report_specific_errors() {
    let cases: [(&str, fn(&ScoreError) -> bool); 8] = [
        ("chord", |e| *e == ScoreError::Unsupported { note: Some(1), feature: "chord".into() }),
        ("missing_divisions", |e| *e == ScoreError::MissingDivisions(0)),
        ("missing_lyric", |e| *e == ScoreError::MissingField { note: 0, field: "lyric" }),
        ("missing_tempo", |e| *e == ScoreError::MissingTempo(0)),
        ("not_xml", |e| matches!(e, ScoreError::Malformed(_))),
        ("two_parts", |e| *e == ScoreError::Unsupported { note: None, feature: "multiple parts".into() }),
        ("tuplet", |e| {
            *e == ScoreError::Unsupported { note: Some(0), feature: "time-modification".into() }
        }),
        ("timewise", |e| *e == ScoreError::Unsupported { note: None, feature: "score-timewise".into() }),
    ];
    for (name, expected) in cases {
        let err = parse_musicxml(&read_fixture(&format!("malformed/{name}.musicxml"))).unwrap_err();
        assert!(expected(&err), "{name}: {err:?}");
    }
}

#[test]
fn native_errors() {
    let missing = r#"{"tempo_bpm": 120, "notes": [{"syllable": "a", "duration_beats": 1}]}"#;
    assert_eq!(
        parse_score_native(missing).unwrap_err(),
        ScoreError::MissingField { note: 0, field: "midi_pitch" }
    );
    let zero = r#"{"tempo_bpm": 120, "notes": [{"syllable": "a", "midi_pitch": 60, "duration_beats": 0}]}"#;
    assert_eq!(parse_score_native(zero).unwrap_err(), ScoreError::NonPositiveDuration(0));
    let unknown = r#"{"tempo_bpm": 120, "notes": [], "key": "C"}"#;
    assert!(matches!(parse_score_native(unknown).unwrap_err(), ScoreError::Malformed(_)));
}

#[test]
fn one_beat_at_sixty_is_one_hundred_frames() {
    let note = NoteEvent::new("la", &["l", "a"], 69, 1.0);
    assert_eq!(frames_for(&note, 60.0, FrameSpec::default()), 100);
}

#[test]
fn canonical_native_is_idempotent() {
    let text = read_fixture("ten_notes.json");
    let once = serialize_native(&parse_score_native(&text).unwrap());
    let twice = serialize_native(&parse_score_native(&once).unwrap());
    assert_eq!(once, twice);
}

fn arb_note() -> impl Strategy<Value = NoteEvent> {
    let pitched = (
        "[a-z]{1,3}",
        prop::collection::vec("[a-z]{1,2}", 0..4),
        0u8..=127,
        1u32..64,
        prop::option::of(30u32..300),
    )
        .prop_map(|(syl, ph, midi, sixteenths, tempo)| NoteEvent {
            syllable: syl,
            phonemes: ph,
            pitch: Pitch::Midi(midi),
            duration_beats: sixteenths as f64 / 16.0,
            tempo_bpm: tempo.map(f64::from),
        });
    let rest = (1u32..64).prop_map(|s| NoteEvent::rest(s as f64 / 16.0));
    prop_oneof![4 => pitched, 1 => rest]
}

fn arb_score() -> impl Strategy<Value = Score> {
    (
        prop::option::of("[A-Za-z ]{0,12}"),
        20.0f64..400.0,
        prop::collection::vec(arb_note(), 1..20),
    )
        .prop_map(|(title, default_tempo_bpm, notes)| Score { title, default_tempo_bpm, notes })
}

proptest! {
    #[test]
    fn native_round_trip(score in arb_score()) {
        let text = serialize_native(&score);
        prop_assert_eq!(parse_score_native(&text).unwrap(), score);
    }

    #[test]
    fn expansion_conserves_frame_budget(score in arb_score()) {
        let frames = FrameSpec::default();
        let spelled = Score {
            notes: score
                .notes
                .iter()
                .map(|n| match (n.pitch, n.phonemes.is_empty()) {
                    (Pitch::Midi(_), true) => NoteEvent { phonemes: vec!["x".into()], ..n.clone() },
                    _ => n.clone(),
                })
                .collect(),
            ..score
        };
        let seq = expand_to_phonemes(&spelled, &Lexicon::default(), frames).unwrap();
        let budget: u64 = spelled
            .notes
            .iter()
            .enumerate()
            .map(|(i, n)| frames_for(n, spelled.effective_tempo(i), frames) as u64)
            .sum();
        if seq.warnings.is_empty() {
            prop_assert_eq!(seq.total_frames(), budget);
        } else {
            prop_assert!(seq.total_frames() >= budget);
        }
    }

    #[test]
    fn frames_fall_with_tempo(beats in 1u32..32, tempo in 20.0f64..600.0) {
        let note = NoteEvent::new("a", &["a"], 60, beats as f64 / 4.0);
        let frames = FrameSpec::default();
        let faster = tempo * 1.25;
        let slow = frames_for(&note, tempo, frames);
        let fast = frames_for(&note, faster, frames);
        prop_assert!(fast <= slow);
        // Whole frames can only resolve drops of at least one frame.
        let raw = |t: f64| note.seconds(t) / frames.frame_shift_s;
        if raw(tempo) - raw(faster) >= 1.0 && slow > 1 {
            prop_assert!(fast < slow, "{slow} -> {fast}");
        }
    }
}
