use super::{
    caption_metrics, caption_retrieval, eval_alignment, latent_retrieval, mean_attention_entropy, train,
    ExperimentConfig, RunLog,
};
use crate::data::{Corpus, SongInstance, TopicSet, Vocab};
use crate::error::{Error, Result};
use crate::metrics::MetricsReport;
use crate::model::{Model, ModelConfig};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

/// Generated corpus cut into train / eval / test.
#[derive(Clone, Debug)]
pub struct Splits {
    pub topics: TopicSet,
    pub vocab: Vocab,
    pub train: Vec<SongInstance>,
    pub eval: Vec<SongInstance>,
    pub test: Vec<SongInstance>,
}

pub fn build_corpus(exp: &ExperimentConfig) -> Result<Splits> {
    exp.data.validate()?;
    let d = &exp.data;
    let topics = TopicSet::synthetic(d.topics, exp.model.n_feat, d.topic_seed)?;
    let corpus = Corpus::generate(&d.generation, &topics)?;
    let mut parts = corpus.split(&[d.train, d.eval, d.test])?.into_iter();
    let mut next = || parts.next().expect("three parts").instances;
    Ok(Splits {
        vocab: topics.vocab(),
        topics,
        train: next(),
        eval: next(),
        test: next(),
    })
}

/// The experiment's model dimensions fitted to a corpus vocabulary.
pub fn model_config_for(exp: &ExperimentConfig, vocab: &Vocab) -> ModelConfig {
    ModelConfig {
        vocab_size: vocab.len(),
        ..exp.model.clone()
    }
}

/// Test-split scores of one trained model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub captions: MetricsReport,
    /// Caption-to-caption retrieval precision at 1.
    pub p_at_1: f64,
    /// Caption-to-caption retrieval recall at 5.
    pub r_at_5: f64,
    /// Music-to-lyrics latent retrieval precision at 1.
    pub latent_p_at_1: f64,
    pub mi_bound: f64,
    pub attention_entropy: f64,
}

pub fn evaluate(model: &Model, exp: &ExperimentConfig, test: &[SongInstance]) -> Result<Evaluation> {
    let (captions, generated) = caption_metrics(model, test, exp.train.max_gen_len)?;
    let ks: Vec<usize> = [1, 5].into_iter().filter(|&k| k <= test.len()).collect();
    let retrieval = caption_retrieval(model, test, &generated, &ks)?;
    let latent = latent_retrieval(model, test, &[1])?;
    let (_, _, mi_bound) = eval_alignment(model, test, exp.train.batch_size, exp.train.loss_options())?;
    let n_attn = exp.attention_samples.clamp(1, test.len());
    Ok(Evaluation {
        captions,
        p_at_1: retrieval.precision_at(1).unwrap_or(0.0),
        r_at_5: retrieval.recall_at(5).unwrap_or(1.0),
        latent_p_at_1: latent.precision_at(1).unwrap_or(0.0),
        mi_bound,
        attention_entropy: mean_attention_entropy(model, &test[..n_attn])?,
    })
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub alpha: f64,
    pub seed: u64,
    pub best_epoch: usize,
    pub eval: Evaluation,
    pub log: RunLog,
    pub model: Model,
}

/// Trains from a fresh initialization (`seed` drives both init and batch
/// order) with the given `alpha` and scores the best-on-eval model on test.
pub fn run_experiment(exp: &ExperimentConfig, splits: &Splits, alpha: f64, seed: u64) -> Result<RunSummary> {
    let model = Model::new(model_config_for(exp, &splits.vocab), seed)?;
    let mut tc = exp.train.clone();
    tc.alpha = alpha;
    tc.seed = seed;
    let out = train(model, &tc, &splits.train, &splits.eval, None)?;
    let eval = evaluate(&out.best, exp, &splits.test)?;
    Ok(RunSummary {
        alpha,
        seed,
        best_epoch: out.best_epoch,
        eval,
        log: out.log,
        model: out.best,
    })
}

pub const SWEEP_CSV_HEADER: [&str; 10] = [
    "alpha",
    "seed",
    "rouge1",
    "rouge2",
    "rougeL",
    "meteor_lite",
    "p@1",
    "r@5",
    "mi_bound",
    "attn_entropy",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub seed: u64,
    pub rouge1: f64,
    pub rouge2: f64,
    pub rouge_l: f64,
    pub meteor_lite: f64,
    pub p_at_1: f64,
    pub r_at_5: f64,
    pub mi_bound: f64,
    pub attn_entropy: f64,
}

impl SweepRow {
    pub fn from_run(r: &RunSummary) -> Self {
        let e = &r.eval;
        Self {
            alpha: r.alpha,
            seed: r.seed,
            rouge1: e.captions.rouge1.f1,
            rouge2: e.captions.rouge2.f1,
            rouge_l: e.captions.rouge_l.f1,
            meteor_lite: e.captions.meteor_lite,
            p_at_1: e.p_at_1,
            r_at_5: e.r_at_5,
            mi_bound: e.mi_bound,
            attn_entropy: e.attention_entropy,
        }
    }

    fn fields(&self) -> [f64; 8] {
        [
            self.rouge1,
            self.rouge2,
            self.rouge_l,
            self.meteor_lite,
            self.p_at_1,
            self.r_at_5,
            self.mi_bound,
            self.attn_entropy,
        ]
    }

    /// Seed-mean row per distinct alpha, in first-appearance order. The
    /// `seed` field of a mean row holds the number of seeds averaged.
    pub fn seed_means(rows: &[SweepRow]) -> Vec<SweepRow> {
        let mut alphas: Vec<f64> = Vec::new();
        for r in rows {
            if !alphas.iter().any(|a| a.to_bits() == r.alpha.to_bits()) {
                alphas.push(r.alpha);
            }
        }
        alphas
            .into_iter()
            .map(|a| {
                let group: Vec<&SweepRow> = rows.iter().filter(|r| r.alpha.to_bits() == a.to_bits()).collect();
                let n = group.len() as f64;
                let mut sums = [0.0; 8];
                for r in &group {
                    for (s, v) in sums.iter_mut().zip(r.fields()) {
                        *s += v;
                    }
                }
                let [rouge1, rouge2, rouge_l, meteor_lite, p_at_1, r_at_5, mi_bound, attn_entropy] =
                    sums.map(|s| s / n);
                SweepRow {
                    alpha: a,
                    seed: group.len() as u64,
                    rouge1,
                    rouge2,
                    rouge_l,
                    meteor_lite,
                    p_at_1,
                    r_at_5,
                    mi_bound,
                    attn_entropy,
                }
            })
            .collect()
    }
}

/// CSV with [`SWEEP_CSV_HEADER`] columns; `config` is recorded as a leading
/// `#` comment line.
pub fn write_sweep_csv(mut w: impl Write, rows: &[SweepRow], config: &serde_json::Value) -> Result<()> {
    writeln!(w, "# config: {}", serde_json::to_string(config)?)?;
    let mut out = csv::Writer::from_writer(w);
    out.write_record(SWEEP_CSV_HEADER)?;
    for r in rows {
        let mut rec = vec![r.alpha.to_string(), r.seed.to_string()];
        rec.extend(r.fields().iter().map(f64::to_string));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

/// Runs `jobs` independent tasks on up to `workers` threads, preserving
/// task order in the output.
fn run_parallel<T: Send>(jobs: usize, workers: usize, task: impl Fn(usize) -> Result<T> + Sync) -> Result<Vec<T>> {
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<T>>>> = Mutex::new((0..jobs).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers.clamp(1, jobs.max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= jobs {
                    break;
                }
                let r = task(i);
                results.lock().expect("no poisoned workers")[i] = Some(r);
            });
        }
    });
    results
        .into_inner()
        .expect("no poisoned workers")
        .into_iter()
        .map(|r| r.expect("every task ran"))
        .collect()
}

/// One train+test run per `(alpha, seed)`, alpha-major.
pub fn sweep_alpha(exp: &ExperimentConfig, alphas: &[f64], jobs: usize) -> Result<Vec<RunSummary>> {
    exp.validate()?;
    if alphas.is_empty() {
        return Err(Error::Param("alpha list is empty".into()));
    }
    if let Some(a) = alphas.iter().find(|a| !(**a >= 0.0 && a.is_finite())) {
        return Err(Error::Param(format!("alpha must be nonnegative, got {a}")));
    }
    let splits = build_corpus(exp)?;
    let n_seeds = exp.seeds.len();
    run_parallel(alphas.len() * n_seeds, jobs, |i| {
        run_experiment(exp, &splits, alphas[i / n_seeds], exp.seeds[i % n_seeds])
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IbRun {
    pub rho: f64,
    /// Mean eval MI bound over the trailing epochs (the test split for the
    /// untrained control).
    pub trailing_mi: f64,
    /// Music-to-lyrics latent retrieval on the test split.
    pub p_at_1: f64,
    pub final_contrastive: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IbReport {
    pub config: ExperimentConfig,
    pub batch_size: usize,
    pub n_test: usize,
    pub trailing_epochs: usize,
    pub chance: f64,
    /// Binomial standard deviation of p@1 at chance over `n_test` queries.
    pub sigma: f64,
    pub control: IbRun,
    pub independent: IbRun,
    pub paired: IbRun,
    pub independent_mi_max: f64,
    pub paired_mi_min: f64,
    pub independent_mi_ok: bool,
    pub independent_p1_ok: bool,
    pub paired_mi_ok: bool,
    pub paired_p1_ok: bool,
    pub passed: bool,
}

pub const IB_TRAILING_EPOCHS: usize = 3;

/// Trains the same configuration on an independently paired corpus
/// (`rho = 0`) and a fully paired one (`rho = 1`) and compares how much
/// cross-modal information the alignment head extracts. Uses the first
/// configured seed.
pub fn verify_ib(exp: &ExperimentConfig) -> Result<IbReport> {
    exp.validate()?;
    let seed = exp.seeds[0];
    let with_rho = |rho: f64| {
        let mut e = exp.clone();
        e.data.generation.rho = rho;
        e
    };
    let run = |rho: f64| -> Result<(IbRun, Splits, Model)> {
        let e = with_rho(rho);
        let splits = build_corpus(&e)?;
        let model = Model::new(model_config_for(&e, &splits.vocab), seed)?;
        let mut tc = e.train.clone();
        tc.seed = seed;
        let out = train(model, &tc, &splits.train, &splits.eval, None)?;
        let p1 = latent_retrieval(&out.last, &splits.test, &[1])?
            .precision_at(1)
            .unwrap_or(0.0);
        let trailing_mi = out.log.trailing_mi(IB_TRAILING_EPOCHS).unwrap_or(0.0);
        let last = out.log.epochs.last().map_or(f64::NAN, |r| r.eval_contrastive);
        let r = IbRun {
            rho,
            trailing_mi,
            p_at_1: p1,
            final_contrastive: last,
        };
        Ok((r, splits, out.last))
    };
    let (independent, _, _) = run(0.0)?;
    let (paired, splits, _) = run(1.0)?;

    let untrained = Model::new(model_config_for(exp, &splits.vocab), seed)?;
    let (_, con, mi) = eval_alignment(&untrained, &splits.test, exp.train.batch_size, exp.train.loss_options())?;
    let control = IbRun {
        rho: 1.0,
        trailing_mi: mi,
        p_at_1: latent_retrieval(&untrained, &splits.test, &[1])?
            .precision_at(1)
            .unwrap_or(0.0),
        final_contrastive: con,
    };

    let n_test = splits.test.len();
    let chance = 1.0 / n_test as f64;
    let sigma = (chance * (1.0 - chance) / n_test as f64).sqrt();
    let batch = exp.train.batch_size.min(exp.data.eval);
    let independent_mi_max = 0.1;
    let paired_mi_min = 0.5 * (batch as f64).ln();
    let independent_mi_ok = independent.trailing_mi < independent_mi_max;
    let independent_p1_ok = (independent.p_at_1 - chance).abs() <= 3.0 * sigma;
    let paired_mi_ok = paired.trailing_mi > paired_mi_min;
    let paired_p1_ok = paired.p_at_1 > 5.0 * chance;
    Ok(IbReport {
        config: exp.clone(),
        batch_size: batch,
        n_test,
        trailing_epochs: IB_TRAILING_EPOCHS.min(exp.train.epochs),
        chance,
        sigma,
        control,
        independent,
        paired,
        independent_mi_max,
        paired_mi_min,
        independent_mi_ok,
        independent_p1_ok,
        paired_mi_ok,
        paired_p1_ok,
        passed: independent_mi_ok && independent_p1_ok && paired_mi_ok && paired_p1_ok,
    })
}
