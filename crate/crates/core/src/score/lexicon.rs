//! Syllable to phoneme-ratio table.
//!
//! One entry per line: `syllable phoneme:ratio phoneme:ratio ...`, ratios
//! summing to 1 within 1e-6. Blank lines and lines starting with `#` are
//! ignored.

use std::collections::HashMap;

use super::{Result, ScoreError};

const RATIO_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct LexiconEntry {
    pub parts: Vec<(String, f64)>,
}

impl LexiconEntry {
    pub fn phonemes(&self) -> Vec<String> {
        self.parts.iter().map(|(p, _)| p.clone()).collect()
    }

    pub fn ratios(&self) -> Vec<f64> {
        self.parts.iter().map(|&(_, r)| r).collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Lexicon {
    entries: HashMap<String, LexiconEntry>,
}

impl Lexicon {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = HashMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| ScoreError::Lexicon { line: line_no, msg };
            let mut fields = line.split_whitespace();
            let syllable = fields.next().expect("non-empty line has a field");
            let mut parts = Vec::new();
            for field in fields {
                let (phoneme, ratio) = field
                    .split_once(':')
                    .ok_or_else(|| err(format!("expected phoneme:ratio, got `{field}`")))?;
                let ratio: f64 = ratio
                    .parse()
                    .map_err(|_| err(format!("bad ratio `{ratio}`")))?;
                if phoneme.is_empty() || !(ratio > 0.0 && ratio.is_finite()) {
                    return Err(err(format!("invalid part `{field}`")));
                }
                parts.push((phoneme.to_string(), ratio));
            }
            if parts.is_empty() {
                return Err(err(format!("syllable `{syllable}` has no phonemes")));
            }
            let total: f64 = parts.iter().map(|(_, r)| r).sum();
            if (total - 1.0).abs() > RATIO_TOLERANCE {
                return Err(err(format!("ratios sum to {total}, expected 1")));
            }
            if entries
                .insert(syllable.to_string(), LexiconEntry { parts })
                .is_some()
            {
                return Err(err(format!("duplicate syllable `{syllable}`")));
            }
        }
        Ok(Lexicon { entries })
    }

    pub fn get(&self, syllable: &str) -> Option<&LexiconEntry> {
        self.entries.get(syllable)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_entries_and_comments() {
        let lex = Lexicon::parse("# mandarin\n\nni n:0.4 i:0.6\nhao h:0.2 ao:0.8\n").unwrap();
        assert_eq!(lex.len(), 2);
        assert_eq!(lex.get("ni").unwrap().phonemes(), vec!["n", "i"]);
        assert_eq!(lex.get("hao").unwrap().ratios(), vec![0.2, 0.8]);
    }

    #[test]
    fn rejects_bad_sums_and_fields() {
        assert!(matches!(
            Lexicon::parse("ni n:0.4 i:0.5").unwrap_err(),
            ScoreError::Lexicon { line: 1, .. }
        ));
        assert!(Lexicon::parse("ni n0.4").is_err());
        assert!(Lexicon::parse("ni").is_err());
        assert!(Lexicon::parse("a a:1\na a:1").is_err());
        assert!(Lexicon::parse("ni n:-0.5 i:1.5").is_err());
    }
}
