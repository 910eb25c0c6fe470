//! Optimization loop, evaluation helpers and experiment drivers.

mod config;
mod experiments;
mod optim;
mod runlog;

pub use config::{DataConfig, ExperimentConfig, TrainConfig};
pub use experiments::{
    build_corpus, evaluate, model_config_for, run_experiment, sweep_alpha, verify_ib, write_sweep_csv, Evaluation,
    IbReport, IbRun, RunSummary, Splits, SweepRow, IB_TRAILING_EPOCHS, SWEEP_CSV_HEADER,
};
pub use optim::{Adam, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use runlog::{EpochRecord, RunLog, StepRecord};

use crate::data::{content_tokens, SongInstance, BOS, EOS};
use crate::error::{Error, Result};
use crate::metrics::{mi_lower_bound, retrieval_eval, retrieval_eval_text, MetricsReport, RetrievalResult};
use crate::model::{save_checkpoint, LossOptions, Model};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::Path;

/// Result of [`train`]: the last and the best-on-eval parameters.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub last: Model,
    pub best: Model,
    pub best_epoch: usize,
    pub log: RunLog,
}

/// Where and how checkpoints are written during training.
pub struct CheckpointSink<'a> {
    pub dir: &'a Path,
    pub extra: serde_json::Value,
}

/// Shuffled minibatch index lists for one epoch.
pub fn epoch_batches(rng: &mut ChaCha8Rng, n: usize, batch_size: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

/// One gradient step on `batch`; returns `(caption, contrastive, total)`.
pub fn train_step(
    model: &mut Model,
    adam: &mut Adam,
    batch: &[&SongInstance],
    opts: LossOptions,
    freeze_music: bool,
    step: usize,
) -> Result<(f64, f64, f64)> {
    let mut g = crate::Graph::new();
    let b = model.bind(&mut g, freeze_music);
    let l = model.batch_losses(&mut g, &b, batch, opts)?;
    let values = (g.item(l.caption), g.item(l.contrastive), g.item(l.total));
    if !values.2.is_finite() {
        return Err(Error::Diverged { step });
    }
    g.backward(l.total)?;
    model.params.clear_grads();
    model.params.accumulate_grads(&g, &b);
    adam.step(&mut model.params);
    model.params.clear_grads();
    Ok(values)
}

/// Trains `model` in place of a copy; batch order depends only on
/// `config.seed`. Eval scores after every epoch pick the best checkpoint by
/// ROUGE-L F1, earlier epochs winning ties.
pub fn train(
    model: Model,
    config: &TrainConfig,
    train_set: &[SongInstance],
    eval_set: &[SongInstance],
    sink: Option<&CheckpointSink<'_>>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::EmptySequence("training corpus"));
    }
    if eval_set.is_empty() {
        return Err(Error::EmptySequence("eval corpus"));
    }
    check_vocab(&model, train_set.iter().chain(eval_set))?;
    let opts = config.loss_options();
    let mut model = model;
    let mut adam = Adam::new(&model.params, config.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut log = RunLog::default();
    let mut best: Option<(f64, usize, Model)> = None;
    let mut step = 0;
    for epoch in 0..config.epochs {
        for idx in epoch_batches(&mut rng, train_set.len(), config.batch_size) {
            step += 1;
            let batch: Vec<&SongInstance> = idx.iter().map(|&i| &train_set[i]).collect();
            let (caption, contrastive, total) =
                train_step(&mut model, &mut adam, &batch, opts, config.freeze_music_encoder, step)?;
            log.push_step(StepRecord {
                step,
                epoch,
                caption,
                contrastive,
                total,
            });
        }
        let record = eval_epoch(&model, config, eval_set, epoch, step)?;
        if let Some(dir) = sink {
            save_checkpoint(&dir.dir.join(format!("epoch-{epoch:03}.ckpt")), &model, &dir.extra)?;
        }
        if best.as_ref().is_none_or(|(score, _, _)| record.rouge_l > *score) {
            if let Some(dir) = sink {
                save_checkpoint(&dir.dir.join("best.ckpt"), &model, &dir.extra)?;
            }
            best = Some((record.rouge_l, epoch, model.clone()));
        }
        log.epochs.push(record);
    }
    let (_, best_epoch, best) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        last: model,
        best,
        best_epoch,
        log,
    })
}

fn check_vocab<'a>(model: &Model, set: impl Iterator<Item = &'a SongInstance>) -> Result<()> {
    let v = model.config.vocab_size;
    for s in set {
        if let Some(&t) = s.lyrics.iter().chain(&s.caption).find(|&&t| t >= v) {
            return Err(Error::Index {
                op: "corpus vocabulary",
                index: t,
                bound: v,
            });
        }
    }
    Ok(())
}

fn eval_epoch(
    model: &Model,
    config: &TrainConfig,
    eval_set: &[SongInstance],
    epoch: usize,
    step: usize,
) -> Result<EpochRecord> {
    let (caption, contrastive, mi) = eval_alignment(model, eval_set, config.batch_size, config.loss_options())?;
    let n_gen = match config.eval_generate {
        0 => eval_set.len(),
        n => n.min(eval_set.len()),
    };
    let (report, _) = caption_metrics(model, &eval_set[..n_gen], config.max_gen_len)?;
    Ok(EpochRecord {
        epoch,
        step,
        eval_caption: caption,
        eval_contrastive: contrastive,
        mi_bound: mi,
        rouge1: report.rouge1.f1,
        rouge2: report.rouge2.f1,
        rouge_l: report.rouge_l.f1,
        meteor_lite: report.meteor_lite,
    })
}

/// Mean caption loss, contrastive loss and MI bound over consecutive
/// batches of `batch_size`. A trailing partial batch is scored only when it
/// is the sole batch.
pub fn eval_alignment(
    model: &Model,
    set: &[SongInstance],
    batch_size: usize,
    opts: LossOptions,
) -> Result<(f64, f64, f64)> {
    if set.is_empty() {
        return Err(Error::EmptySequence("eval corpus"));
    }
    let refs: Vec<&SongInstance> = set.iter().collect();
    let mut chunks: Vec<&[&SongInstance]> = refs.chunks(batch_size).collect();
    if chunks.len() > 1 && chunks.last().is_some_and(|c| c.len() < batch_size) {
        chunks.pop();
    }
    let mut sums = (0.0, 0.0, 0.0);
    for c in &chunks {
        let (cap, con, _) = model.eval_losses(c, opts)?;
        sums.0 += cap;
        sums.1 += con;
        sums.2 += mi_lower_bound(con, c.len());
    }
    let n = chunks.len() as f64;
    Ok((sums.0 / n, sums.1 / n, sums.2 / n))
}

/// Greedy captions (content tokens only) for each instance.
pub fn generate_captions(model: &Model, set: &[SongInstance], max_len: usize) -> Result<Vec<Vec<usize>>> {
    let max_len = max_len.min(model.config.max_len);
    set.iter()
        .map(|s| Ok(content_tokens(&model.generate(&s.music, &s.lyrics, max_len)?)))
        .collect()
}

/// Caption metrics of greedy generations against the reference captions,
/// together with the generations.
pub fn caption_metrics(
    model: &Model,
    set: &[SongInstance],
    max_len: usize,
) -> Result<(MetricsReport, Vec<Vec<usize>>)> {
    let generated = generate_captions(model, set, max_len)?;
    let pairs: Vec<(Vec<usize>, Vec<usize>)> = generated
        .iter()
        .zip(set)
        .map(|(g, s)| (g.clone(), content_tokens(&s.caption)))
        .collect();
    Ok((MetricsReport::from_pairs(&pairs), generated))
}

fn framed(content: &[usize]) -> Vec<usize> {
    let mut v = Vec::with_capacity(content.len() + 2);
    v.push(BOS);
    v.extend_from_slice(content);
    v.push(EOS);
    v
}

/// Text-to-caption retrieval: each reference caption queries the generated
/// captions of all instances; its own song's caption is the relevant item.
/// Both sides are embedded by the model's mean-pooled lyric encoder.
pub fn caption_retrieval(
    model: &Model,
    set: &[SongInstance],
    generated: &[Vec<usize>],
    ks: &[usize],
) -> Result<RetrievalResult> {
    let queries: Vec<Vec<usize>> = set.iter().map(|s| framed(&content_tokens(&s.caption))).collect();
    let items: Vec<Vec<usize>> = generated.iter().map(|g| framed(g)).collect();
    let relevant: Vec<usize> = (0..set.len()).collect();
    retrieval_eval_text(&queries, &items, &relevant, |t| model.text_embedding(t), ks)
}

/// Music-to-lyrics retrieval in the shared latent space.
pub fn latent_retrieval(model: &Model, set: &[SongInstance], ks: &[usize]) -> Result<RetrievalResult> {
    let (zm, zt): (Vec<_>, Vec<_>) = set
        .iter()
        .map(|s| model.latents(s))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .unzip();
    let relevant: Vec<usize> = (0..set.len()).collect();
    retrieval_eval(&zm, &zt, &relevant, ks)
}

/// Mean row entropy of the fusion attention, averaged over instances.
pub fn mean_attention_entropy(model: &Model, set: &[SongInstance]) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::EmptySequence("attention samples"));
    }
    let mut total = 0.0;
    for s in set {
        total += model.export_attention(&s.music, &s.lyrics)?.mean_row_entropy();
    }
    Ok(total / set.len() as f64)
}
