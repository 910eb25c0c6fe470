use super::vocab::Vocab;
use crate::error::{Error, Result};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Placeholder in a caption template filled with a theme word of the lyric
/// topic.
pub const THEME_SLOT: &str = "{theme}";
/// Placeholder filled with a mood word of the music topic.
pub const MOOD_SLOT: &str = "{mood}";

/// One latent topic: how its music sounds, which words its lyrics use and
/// how captions about it read.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopicSpec {
    pub id: usize,
    pub name: String,
    /// Per-feature mean of every frame.
    pub music_mean: Vec<f64>,
    /// Oscillations per track.
    pub music_freq: f64,
    /// Unit direction along which the oscillation moves frames.
    pub music_direction: Vec<f64>,
    pub lyric_words: Vec<String>,
    /// Unigram distribution over `lyric_words`.
    pub lyric_probs: Vec<f64>,
    /// Words filling `{theme}` slots.
    pub theme_words: Vec<String>,
    /// Words filling `{mood}` slots.
    pub mood_words: Vec<String>,
    pub template: Vec<String>,
}

impl TopicSpec {
    pub fn validate(&self, n_feat: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::Param(format!("topic {}: {msg}", self.id)));
        if self.music_mean.len() != n_feat || self.music_direction.len() != n_feat {
            return bad(format!("music profile must have {n_feat} features"));
        }
        if self.lyric_words.is_empty() || self.lyric_words.len() != self.lyric_probs.len() {
            return bad("lyric words and probabilities must be nonempty and aligned".into());
        }
        if self.lyric_probs.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return bad("lyric probabilities must lie in [0, 1]".into());
        }
        let total: f64 = self.lyric_probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return bad(format!("lyric distribution sums to {total}"));
        }
        let themes = self.template.iter().filter(|w| *w == THEME_SLOT).count();
        if themes > self.theme_words.len() {
            return bad("template has more theme slots than theme words".into());
        }
        if self.template.iter().any(|w| w == MOOD_SLOT) && self.mood_words.is_empty() {
            return bad("template has a mood slot but no mood words".into());
        }
        Ok(())
    }
}

/// A complete topic bank plus shared filler vocabulary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopicSet {
    pub n_feat: usize,
    pub filler_words: Vec<String>,
    pub topics: Vec<TopicSpec>,
}

const TEMPLATES: [&str; 4] = [
    "this song is about {theme} and {theme} with a {mood} feel",
    "a {mood} track where the {theme} meets {theme} and {theme}",
    "the lyrics describe {theme} and {theme} over a {mood} sound",
    "a {mood} piece on {theme} {theme} and the {theme} within",
];

/// Pronounceable two-syllable pseudo-words, deterministic in `seed`.
fn word_pool(seed: u64) -> Vec<String> {
    const ONSETS: [&str; 16] = [
        "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "sh", "ch",
    ];
    const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];
    let syllables: Vec<String> = ONSETS
        .iter()
        .flat_map(|o| VOWELS.iter().map(move |v| format!("{o}{v}")))
        .collect();
    let mut words: Vec<String> = syllables
        .iter()
        .flat_map(|a| syllables.iter().map(move |b| format!("{a}{b}")))
        .collect();
    words.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    words
}

impl TopicSet {
    /// Builds `n_topics` topics with `n_feat`-dimensional music profiles.
    pub fn synthetic(n_topics: usize, n_feat: usize, seed: u64) -> Result<Self> {
        if n_topics < 2 {
            return Err(Error::Param(format!("need at least 2 topics, got {n_topics}")));
        }
        if n_feat == 0 {
            return Err(Error::Param("n_feat must be positive".into()));
        }
        const LYRIC_WORDS: usize = 8;
        const THEME_WORDS: usize = 4;
        const MOOD_WORDS: usize = 2;
        const FILLER_WORDS: usize = 24;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pool = word_pool(seed.wrapping_add(0x5eed)).into_iter();
        let filler_words = pool.by_ref().take(FILLER_WORDS).collect();
        let mut topics = Vec::with_capacity(n_topics);
        for id in 0..n_topics {
            let music_mean: Vec<f64> = (0..n_feat).map(|_| StandardNormal.sample(&mut rng)).collect();
            let raw: Vec<f64> = (0..n_feat).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            let music_direction = raw.iter().map(|x| x / norm).collect();
            let music_freq = rng.gen_range(1.0..4.0);
            let lyric_words: Vec<String> = pool.by_ref().take(LYRIC_WORDS).collect();
            let weights: Vec<f64> = (0..LYRIC_WORDS).map(|_| rng.gen_range(0.5..1.5)).collect();
            let total: f64 = weights.iter().sum();
            let mut lyric_probs: Vec<f64> = weights.iter().map(|w| w / total).collect();
            // Absorb rounding so the distribution sums to one.
            let rest: f64 = lyric_probs[1..].iter().sum();
            lyric_probs[0] = 1.0 - rest;
            let theme_words = pool.by_ref().take(THEME_WORDS).collect();
            let mood_words = pool.by_ref().take(MOOD_WORDS).collect();
            let template = TEMPLATES[id % TEMPLATES.len()]
                .split_whitespace()
                .map(str::to_string)
                .collect();
            topics.push(TopicSpec {
                id,
                name: format!("topic{id}"),
                music_mean,
                music_freq,
                music_direction,
                lyric_words,
                lyric_probs,
                theme_words,
                mood_words,
                template,
            });
        }
        let set = Self {
            n_feat,
            filler_words,
            topics,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        if self.topics.len() < 2 {
            return Err(Error::Param("need at least 2 topics".into()));
        }
        if self.filler_words.is_empty() {
            return Err(Error::Param("filler vocabulary is empty".into()));
        }
        for (i, t) in self.topics.iter().enumerate() {
            if t.id != i {
                return Err(Error::Param(format!("topic at position {i} has id {}", t.id)));
            }
            t.validate(self.n_feat)?;
        }
        Ok(())
    }

    /// Every word the generator can emit, in a fixed order.
    pub fn vocab(&self) -> Vocab {
        let mut words: Vec<&str> = Vec::new();
        for t in &self.topics {
            for w in &t.template {
                if w != THEME_SLOT && w != MOOD_SLOT {
                    words.push(w);
                }
            }
        }
        words.extend(self.filler_words.iter().map(String::as_str));
        for t in &self.topics {
            words.extend(t.lyric_words.iter().map(String::as_str));
            words.extend(t.theme_words.iter().map(String::as_str));
            words.extend(t.mood_words.iter().map(String::as_str));
        }
        Vocab::new(words)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let set: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        set.validate()?;
        Ok(set)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_bank_is_valid_and_deterministic() {
        let a = TopicSet::synthetic(10, 16, 3).unwrap();
        let b = TopicSet::synthetic(10, 16, 3).unwrap();
        assert_eq!(a, b);
        for t in &a.topics {
            assert!((t.lyric_probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let v = a.vocab();
        // 4 reserved + connectives + 24 filler + 10 * 14 topic words
        assert!(v.len() > 4 + 24 + 140);
        assert!(v.len() < 220);
    }

    #[test]
    fn too_few_topics_rejected() {
        assert!(TopicSet::synthetic(1, 4, 0).is_err());
    }

    #[test]
    fn unnormalized_distribution_rejected() {
        let mut set = TopicSet::synthetic(3, 4, 0).unwrap();
        set.topics[1].lyric_probs[0] += 0.01;
        assert!(set.validate().is_err());
    }
}
