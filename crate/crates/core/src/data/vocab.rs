use std::path::Path;

use crate::error::{Error, Result};
use crate::loss::BLANK;

/// Bijection between gloss strings and ids. Ids start at 1; 0 is the CTC blank.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GlossVocabulary {
    glosses: Vec<String>,
}

impl GlossVocabulary {
    pub fn new(glosses: Vec<String>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for g in &glosses {
            if g.is_empty() || g.contains(char::is_whitespace) {
                return Err(Error::format("vocabulary", format!("invalid gloss {g:?}")));
            }
            if !seen.insert(g.as_str()) {
                return Err(Error::format("vocabulary", format!("duplicate gloss {g:?}")));
            }
        }
        Ok(GlossVocabulary { glosses })
    }

    /// Number of glosses `N`, excluding the blank.
    pub fn len(&self) -> usize {
        self.glosses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.glosses.is_empty()
    }

    /// CTC alphabet size `N + 1`.
    pub fn alphabet_size(&self) -> usize {
        self.glosses.len() + 1
    }

    pub fn id(&self, gloss: &str) -> Option<usize> {
        self.glosses.iter().position(|g| g == gloss).map(|i| i + 1)
    }

    pub fn gloss(&self, id: usize) -> Option<&str> {
        if id == BLANK {
            return None;
        }
        self.glosses.get(id - 1).map(String::as_str)
    }

    pub fn glosses(&self) -> &[String] {
        &self.glosses
    }

    /// Maps a whitespace-separated gloss sentence to ids.
    pub fn encode(&self, sentence: &str) -> Result<Vec<usize>> {
        sentence
            .split_whitespace()
            .map(|g| self.id(g).ok_or_else(|| Error::format("sentence", format!("unknown gloss {g:?}"))))
            .collect()
    }

    /// Character-level tokenization, one id per non-space character.
    pub fn encode_chars(&self, sentence: &str) -> Result<Vec<usize>> {
        sentence
            .chars()
            .filter(|c| !c.is_whitespace())
            .map(|c| {
                let s = c.to_string();
                self.id(&s).ok_or_else(|| Error::format("sentence", format!("unknown character {s:?}")))
            })
            .collect()
    }

    pub fn render(&self, ids: &[usize]) -> String {
        ids.iter()
            .map(|&i| self.gloss(i).unwrap_or("-"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// One gloss per line; line `k` (1-based) holds id `k`.
    pub fn to_text(&self) -> String {
        let mut s = self.glosses.join("\n");
        s.push('\n');
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::new(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_start_at_one() {
        let v = GlossVocabulary::parse("hello\nworld\n").unwrap();
        assert_eq!(v.id("hello"), Some(1));
        assert_eq!(v.id("world"), Some(2));
        assert_eq!(v.gloss(0), None);
        assert_eq!(v.gloss(2), Some("world"));
        assert_eq!(v.alphabet_size(), 3);
        assert_eq!(GlossVocabulary::parse(&v.to_text()).unwrap(), v);
    }

    #[test]
    fn character_tokenizer() {
        let v = GlossVocabulary::parse("我\n爱\n你\n").unwrap();
        assert_eq!(v.encode_chars("我 爱你").unwrap(), vec![1, 2, 3]);
        assert!(v.encode_chars("他").is_err());
    }

    #[test]
    fn duplicates_rejected() {
        assert!(GlossVocabulary::parse("a\na\n").is_err());
    }
}
