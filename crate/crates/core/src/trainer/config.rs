use crate::data::GenConfig;
use crate::error::{Error, Result};
use crate::model::{LossOptions, ModelConfig};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub alpha: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub tau: f64,
    pub symmetric: bool,
    pub freeze_music_encoder: bool,
    /// Longest caption produced when scoring the eval split.
    pub max_gen_len: usize,
    /// Eval instances captioned per epoch for checkpoint selection; 0 = all.
    pub eval_generate: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 5e-5,
            alpha: 0.02,
            batch_size: 16,
            epochs: 10,
            seed: 0,
            tau: 0.07,
            symmetric: false,
            freeze_music_encoder: false,
            max_gen_len: 24,
            eval_generate: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Param(format!("{name} must be positive, got {v}")))
            }
        };
        positive("lr", self.lr)?;
        positive("tau", self.tau)?;
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Param(format!("alpha must be nonnegative, got {}", self.alpha)));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.max_gen_len == 0 {
            return Err(Error::Param(
                "batch_size, epochs and max_gen_len must be at least 1".into(),
            ));
        }
        Ok(())
    }

    pub fn loss_options(&self) -> LossOptions {
        LossOptions {
            alpha: self.alpha,
            tau: self.tau,
            symmetric: self.symmetric,
        }
    }
}

/// Corpus recipe for experiments: topic set, generation knobs and split sizes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub topics: usize,
    pub topic_seed: u64,
    pub generation: GenConfig,
    pub train: usize,
    pub eval: usize,
    pub test: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            topics: 10,
            topic_seed: 0,
            generation: GenConfig::default(),
            train: 800,
            eval: 100,
            test: 100,
        }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        self.generation.validate()?;
        if self.train == 0 || self.eval == 0 || self.test == 0 {
            return Err(Error::Param("train, eval and test splits must be nonempty".into()));
        }
        if self.train + self.eval + self.test > self.generation.n {
            return Err(Error::Param(format!(
                "splits {}+{}+{} exceed corpus size {}",
                self.train, self.eval, self.test, self.generation.n
            )));
        }
        Ok(())
    }
}

/// Everything a training or experiment run depends on. `model.vocab_size`
/// and `model.n_feat` are overwritten from the corpus before use.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub seeds: Vec<u64>,
    /// Test instances whose fusion attention is summarized per run.
    pub attention_samples: usize,
    pub ks: Vec<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            data: DataConfig::default(),
            seeds: vec![0, 1, 2],
            attention_samples: 50,
            ks: vec![5, 10, 20, 30],
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.data.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::Param("at least one seed is required".into()));
        }
        Ok(())
    }
}
