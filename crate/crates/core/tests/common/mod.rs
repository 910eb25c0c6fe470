#![allow(dead_code)]

pub mod infonce;
pub mod oracles;

use mucap_core::data::SongInstance;
use mucap_core::model::{Model, ModelConfig};
use mucap_core::trainer::{build_corpus, model_config_for, train_step, Adam, ExperimentConfig, Splits};

pub const ALPHA_SWEEP_CONFIG: &str = include_str!("../../../../configs/alpha_sweep.json");
pub const VERIFY_IB_CONFIG: &str = include_str!("../../../../configs/verify_ib.json");

pub fn config(text: &str) -> ExperimentConfig {
    serde_json::from_str(text).expect("shipped config parses")
}

/// A corpus small enough for unit-speed training runs.
pub fn tiny_experiment() -> ExperimentConfig {
    let mut exp = config(ALPHA_SWEEP_CONFIG);
    exp.model = ModelConfig {
        max_len: 24,
        max_frames: 16,
        ..ModelConfig::tiny(0, 4)
    };
    exp.data.topics = 3;
    exp.data.generation.n = 40;
    exp.data.generation.frames = 8;
    exp.data.train = 24;
    exp.data.eval = 8;
    exp.data.test = 8;
    exp.train.epochs = 2;
    exp.train.batch_size = 8;
    exp.train.eval_generate = 4;
    exp.seeds = vec![0, 1];
    exp.attention_samples = 4;
    exp
}

pub struct Overfit {
    pub initial: f64,
    pub last: f64,
    pub batch: Vec<SongInstance>,
    pub model: Model,
}

/// 200 full-batch Adam steps on four training songs.
pub fn overfit_one_batch() -> Overfit {
    let exp = config(ALPHA_SWEEP_CONFIG);
    let Splits { vocab, train, .. } = build_corpus(&exp).unwrap();
    let batch: Vec<SongInstance> = train[..4].to_vec();
    let refs: Vec<&SongInstance> = batch.iter().collect();
    let mut model = Model::new(model_config_for(&exp, &vocab), 0).unwrap();
    let mut adam = Adam::new(&model.params, 3e-3);
    let opts = exp.train.loss_options();
    let (initial, _, _) = model.eval_losses(&refs, opts).unwrap();
    for step in 1..=200 {
        train_step(&mut model, &mut adam, &refs, opts, false, step).unwrap();
    }
    let (last, _, _) = model.eval_losses(&refs, opts).unwrap();
    Overfit {
        initial,
        last,
        batch,
        model,
    }
}
