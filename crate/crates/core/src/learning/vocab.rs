//! Whitespace vocabulary with reserved ids for control tokens and markers.

use super::input::TaskInput;
use super::markers::{escape, lex, Marker, Piece};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
const FIRST_MARKER: usize = 4;
const FIRST_WORD: usize = FIRST_MARKER + Marker::ALL.len();

pub fn marker_id(m: Marker) -> usize {
    FIRST_MARKER + Marker::ALL.iter().position(|x| *x == m).expect("listed marker")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "VocabRepr", into = "VocabRepr")]
pub struct Vocab {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabRepr {
    words: Vec<String>,
}

impl From<VocabRepr> for Vocab {
    fn from(r: VocabRepr) -> Self {
        Vocab::from_words(r.words)
    }
}

impl From<Vocab> for VocabRepr {
    fn from(v: Vocab) -> Self {
        VocabRepr { words: v.words }
    }
}

/// Accumulates word counts before fixing the vocabulary.
#[derive(Debug, Default)]
pub struct VocabBuilder {
    counts: BTreeMap<String, usize>,
}

impl VocabBuilder {
    pub fn add_text(&mut self, text: &str) {
        for w in text.split_whitespace() {
            *self.counts.entry(w.to_string()).or_default() += 1;
        }
    }

    pub fn add_input(&mut self, input: &TaskInput) {
        for (_, s) in &input.segments {
            self.add_text(s);
        }
    }

    pub fn add_target(&mut self, target: &str) {
        for p in lex(target) {
            if let Piece::Text(t) = p {
                self.add_text(&t);
            }
        }
    }

    /// Most frequent first, ties alphabetical.
    pub fn build(self) -> Vocab {
        let mut words: Vec<(String, usize)> = self.counts.into_iter().collect();
        words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Vocab::from_words(words.into_iter().map(|w| w.0).collect())
    }
}

impl Vocab {
    pub fn from_words(words: Vec<String>) -> Self {
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), FIRST_WORD + i)).collect();
        Self { words, index }
    }

    pub fn len(&self) -> usize {
        FIRST_WORD + self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn word_id(&self, w: &str) -> usize {
        self.index.get(w).copied().unwrap_or(UNK)
    }

    /// Plain text: every whitespace token is a word, even marker look-alikes.
    pub fn encode_text(&self, text: &str) -> Vec<usize> {
        text.split_whitespace().map(|w| self.word_id(w)).collect()
    }

    pub fn encode_input(&self, input: &TaskInput) -> Vec<usize> {
        let mut ids = vec![marker_id(input.task.token())];
        for (i, (_, s)) in input.segments.iter().enumerate() {
            if i > 0 {
                ids.push(marker_id(Marker::Sep));
            }
            ids.extend(self.encode_text(s));
        }
        ids
    }

    /// Target text: unescaped markers become marker ids.
    pub fn encode_target(&self, text: &str) -> Vec<usize> {
        let mut ids = Vec::new();
        for p in lex(text) {
            match p {
                Piece::Marker(m) => ids.push(marker_id(m)),
                Piece::Text(t) => ids.extend(self.encode_text(&t)),
            }
        }
        ids
    }

    pub fn token(&self, id: usize) -> String {
        match id {
            PAD => "<pad>".into(),
            BOS => "<s>".into(),
            EOS => "</s>".into(),
            UNK => "<unk>".into(),
            i if i < FIRST_WORD => Marker::ALL[i - FIRST_MARKER].text().into(),
            i => escape(self.words.get(i - FIRST_WORD).map(String::as_str).unwrap_or("<unk>")),
        }
    }

    /// Joins tokens with spaces up to the first EOS, skipping BOS and PAD.
    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .take_while(|&&i| i != EOS)
            .filter(|&&i| i != BOS && i != PAD)
            .map(|&i| self.token(i))
            .collect::<Vec<_>>()
            .join(" ")
    }
}
