use super::topics::{TopicSet, MOOD_SLOT, THEME_SLOT};
use super::vocab::Vocab;
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, WeightedIndex};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// One paired sample: a music feature sequence with its lyrics and the
/// reference caption.
#[derive(Clone, Debug, PartialEq)]
pub struct SongInstance {
    /// `l_raw × n_feat` frame features.
    pub music: Tensor,
    /// BOS ... EOS
    pub lyrics: Vec<usize>,
    /// BOS ... EOS
    pub caption: Vec<usize>,
    pub music_topic: usize,
    pub lyric_topic: usize,
}

/// Generation knobs. `rho` is the probability that a track's music shares
/// its lyrics' topic.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenConfig {
    pub n: usize,
    pub seed: u64,
    pub rho: f64,
    pub frames: usize,
    pub lyric_len_min: usize,
    pub lyric_len_max: usize,
    /// Probability that a lyric word is drawn from the topic rather than the
    /// shared filler pool.
    pub lyric_topic_rate: f64,
    pub noise_std: f64,
    pub oscillation: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            n: 1000,
            seed: 0,
            rho: 1.0,
            frames: 64,
            lyric_len_min: 8,
            lyric_len_max: 16,
            lyric_topic_rate: 0.5,
            noise_std: 0.1,
            oscillation: 0.5,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::Param(format!("rho must lie in [0, 1], got {}", self.rho)));
        }
        if !(0.0..=1.0).contains(&self.lyric_topic_rate) {
            return Err(Error::Param(format!(
                "lyric_topic_rate must lie in [0, 1], got {}",
                self.lyric_topic_rate
            )));
        }
        if self.frames == 0 || self.lyric_len_min == 0 || self.lyric_len_min > self.lyric_len_max {
            return Err(Error::Param(
                "frame count and lyric lengths must be positive and ordered".into(),
            ));
        }
        if self.noise_std < 0.0 {
            return Err(Error::Param("noise_std must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Draws `config.n` instances. Instance `i` depends only on
/// `(config, topics, i)`.
pub fn generate_corpus(config: &GenConfig, topics: &TopicSet) -> Result<Vec<SongInstance>> {
    config.validate()?;
    topics.validate()?;
    let vocab = topics.vocab();
    (0..config.n)
        .map(|i| generate_instance(config, topics, &vocab, i as u64))
        .collect()
}

fn generate_instance(config: &GenConfig, topics: &TopicSet, vocab: &Vocab, index: u64) -> Result<SongInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(index);
    let k = topics.topics.len();
    let lyric_topic = rng.gen_range(0..k);
    let music_topic = if rng.gen_bool(config.rho) {
        lyric_topic
    } else {
        rng.gen_range(0..k)
    };

    let mt = &topics.topics[music_topic];
    let noise = Normal::new(0.0, config.noise_std).map_err(|e| Error::Param(e.to_string()))?;
    let phase = rng.gen_range(0.0..2.0 * PI);
    let n_feat = topics.n_feat;
    let mut frames = Vec::with_capacity(config.frames * n_feat);
    for t in 0..config.frames {
        let wave = (2.0 * PI * mt.music_freq * t as f64 / config.frames as f64 + phase).sin() * config.oscillation;
        for f in 0..n_feat {
            frames.push(mt.music_mean[f] + wave * mt.music_direction[f] + noise.sample(&mut rng));
        }
    }
    let music = Tensor::new(vec![config.frames, n_feat], frames)?;

    let lt = &topics.topics[lyric_topic];
    let pick = WeightedIndex::new(&lt.lyric_probs).map_err(|e| Error::Param(e.to_string()))?;
    let len = rng.gen_range(config.lyric_len_min..=config.lyric_len_max);
    let lyric_words: Vec<&str> = (0..len)
        .map(|_| {
            if rng.gen_bool(config.lyric_topic_rate) {
                lt.lyric_words[pick.sample(&mut rng)].as_str()
            } else {
                topics.filler_words.choose(&mut rng).expect("nonempty filler").as_str()
            }
        })
        .collect();

    let mut themes: Vec<&str> = lt.theme_words.iter().map(String::as_str).collect();
    themes.shuffle(&mut rng);
    let mut themes = themes.into_iter();
    let mood = mt.mood_words.choose(&mut rng).map(String::as_str);
    let caption_words: Vec<&str> = lt
        .template
        .iter()
        .map(|w| match w.as_str() {
            THEME_SLOT => themes.next().expect("validated slot count"),
            MOOD_SLOT => mood.expect("validated mood words"),
            other => other,
        })
        .collect();

    Ok(SongInstance {
        music,
        lyrics: vocab.encode_words(lyric_words),
        caption: vocab.encode_words(caption_words),
        music_topic,
        lyric_topic,
    })
}
