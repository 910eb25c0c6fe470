use serde::{Deserialize, Serialize};
use std::collections::HashMap;

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;

const RESERVED: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

/// Word-level vocabulary. Ids 0..4 are always PAD, BOS, EOS, UNK.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Builds a vocabulary from `words` after the reserved entries. Repeats
    /// and reserved spellings are skipped.
    pub fn new<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut vocab = Self {
            words: Vec::new(),
            index: HashMap::new(),
        };
        for w in RESERVED {
            vocab.push(w);
        }
        for w in words {
            vocab.push(w.as_ref());
        }
        vocab
    }

    fn push(&mut self, word: &str) {
        if !self.index.contains_key(word) {
            self.index.insert(word.to_string(), self.words.len());
            self.words.push(word.to_string());
        }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(UNK)
    }

    pub fn word(&self, id: usize) -> &str {
        self.words.get(id).map_or("<unk>", String::as_str)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Whitespace tokenization wrapped in BOS/EOS.
    pub fn tokenize(&self, text: &str) -> Vec<usize> {
        self.encode_words(text.split_whitespace())
    }

    pub fn encode_words<I, S>(&self, words: I) -> Vec<usize>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut ids = vec![BOS];
        ids.extend(words.into_iter().map(|w| self.id(w.as_ref())));
        ids.push(EOS);
        ids
    }

    /// Space-joined words, without PAD/BOS/EOS.
    pub fn detokenize(&self, ids: &[usize]) -> String {
        content_tokens(ids)
            .iter()
            .map(|&id| self.word(id))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

impl From<Vec<String>> for Vocab {
    fn from(words: Vec<String>) -> Self {
        // The reserved entries are re-added by `new`.
        Self::new(words.into_iter().skip_while(|w| RESERVED.contains(&w.as_str())))
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.words
    }
}

/// Token ids with PAD, BOS and EOS removed.
pub fn content_tokens(ids: &[usize]) -> Vec<usize> {
    ids.iter()
        .copied()
        .filter(|&t| t != PAD && t != BOS && t != EOS)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocab {
        Vocab::new(["the", "cat", "sat", "on", "mat"])
    }

    #[test]
    fn reserved_ids_are_stable() {
        let v = vocab();
        assert_eq!(v.id("<pad>"), PAD);
        assert_eq!(v.id("<bos>"), BOS);
        assert_eq!(v.id("<eos>"), EOS);
        assert_eq!(v.id("<unk>"), UNK);
        assert_eq!(v.id("the"), 4);
        assert_eq!(v.len(), 9);
    }

    #[test]
    fn empty_text_is_bos_eos() {
        assert_eq!(vocab().tokenize(""), vec![BOS, EOS]);
    }

    #[test]
    fn round_trip_in_vocabulary() {
        let v = vocab();
        let text = "the cat sat on the mat";
        assert_eq!(v.detokenize(&v.tokenize(text)), text);
    }

    #[test]
    fn out_of_vocabulary_maps_to_unk() {
        let v = vocab();
        assert_eq!(v.tokenize("the dog"), vec![BOS, 4, UNK, EOS]);
    }

    #[test]
    fn serde_round_trip() {
        let v = vocab();
        let json = serde_json::to_string(&v).unwrap();
        let back: Vocab = serde_json::from_str(&json).unwrap();
        assert_eq!(v, back);
    }
}
