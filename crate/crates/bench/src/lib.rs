//! Fixtures shared by the benchmarks under `benches/`.

use mucap_core::model::Model;
use mucap_core::trainer::{build_corpus, model_config_for, ExperimentConfig, Splits};

/// A corpus and freshly initialized model at the experiment config's size.
pub fn fixture(exp: &ExperimentConfig) -> (Splits, Model) {
    let splits = build_corpus(exp).expect("config builds a corpus");
    let model = Model::new(model_config_for(exp, &splits.vocab), 0).expect("valid model config");
    (splits, model)
}

/// The shipped sweep config with a corpus just large enough for one batch.
pub fn bench_experiment() -> ExperimentConfig {
    let mut exp: ExperimentConfig =
        serde_json::from_str(include_str!("../../../configs/alpha_sweep.json")).expect("shipped config parses");
    exp.data.generation.n = 40;
    exp.data.train = 16;
    exp.data.eval = 16;
    exp.data.test = 8;
    exp
}
