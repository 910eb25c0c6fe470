//! Synthetic paired music/lyrics/caption corpus: topics, vocabulary,
//! generation and the JSON-lines file format.

mod corpus;
mod synth;
mod topics;
mod vocab;

pub use corpus::{Corpus, CorpusMeta, CORPUS_FORMAT};
pub use synth::{generate_corpus, GenConfig, SongInstance};
pub use topics::{TopicSet, TopicSpec, MOOD_SLOT, THEME_SLOT};
pub use vocab::{content_tokens, Vocab, BOS, EOS, PAD, UNK};
