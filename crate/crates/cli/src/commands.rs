use crate::{config, ConfigArgs, Failure};
use clap::{Args, ValueEnum};
use mucap_core::data::{content_tokens, Corpus, SongInstance, TopicSet, Vocab, UNK};
use mucap_core::gradsuite::{run_suite, DEFAULT_STEP, DEFAULT_TOLERANCE};
use mucap_core::model::{load_checkpoint, Model, ModelConfig};
use mucap_core::trainer::{self, CheckpointSink, ExperimentConfig, SweepRow};
use serde::Serialize;
use serde_json::{json, Value};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

type Outcome = Result<(), Failure>;

const FALLBACK_GEN_LEN: usize = 24;

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path).map(BufWriter::new).map_err(|e| Failure::io(path, e))
}

/// Pretty JSON to `out`, or to stdout when no path is given.
fn emit_json(out: Option<&Path>, value: &impl Serialize) -> Outcome {
    let text = serde_json::to_string_pretty(value).expect("report serializes");
    match out {
        Some(path) => std::fs::write(path, text + "\n").map_err(|e| Failure::io(path, e)),
        None => match writeln!(std::io::stdout().lock(), "{text}") {
            Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Failure::new("io", format!("stdout: {e}"))),
            _ => Ok(()),
        },
    }
}

fn load_corpus(path: &Path) -> Result<Corpus, Failure> {
    let corpus = Corpus::load(path).map_err(|e| match e {
        mucap_core::Error::Io(io) => Failure::io(path, io),
        other => Failure::from(other).with_detail(json!({ "file": path })),
    })?;
    if corpus.is_empty() {
        return Err(Failure::new(
            "parse",
            format!("{}: corpus has no instances", path.display()),
        ));
    }
    Ok(corpus)
}

fn load_model(path: &Path) -> Result<(Model, Value), Failure> {
    load_checkpoint(path).map_err(|e| match e {
        mucap_core::Error::Io(io) => Failure::io(path, io),
        other => other.into(),
    })
}

/// The corpus vocabulary, or placeholder words covering every token id when
/// the file carries no header.
fn corpus_vocab(corpus: &Corpus) -> Vocab {
    if let Some(v) = corpus.vocab() {
        return v.clone();
    }
    let max_id = corpus
        .instances
        .iter()
        .flat_map(|s| s.lyrics.iter().chain(&s.caption))
        .copied()
        .max()
        .unwrap_or(0);
    Vocab::new((UNK + 1..=max_id).map(|i| format!("w{i}")))
}

/// Vocabulary stored in a checkpoint, falling back to the corpus header.
fn display_vocab(extra: &Value, corpus: &Corpus) -> Option<Vocab> {
    serde_json::from_value(extra.get("vocab")?.clone())
        .ok()
        .or_else(|| corpus.vocab().cloned())
}

fn checkpoint_config(extra: &Value) -> Option<ExperimentConfig> {
    serde_json::from_value(extra.get("config")?.clone()).ok()
}

fn gen_len(flag: Option<usize>, extra: &Value) -> usize {
    flag.or_else(|| checkpoint_config(extra).map(|c| c.train.max_gen_len))
        .unwrap_or(FALLBACK_GEN_LEN)
}

#[derive(Args)]
pub struct GenDataArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Probability that a song's music shares its lyrics' topic.
    #[arg(long)]
    rho: Option<f64>,
    /// Number of synthetic topics, or a JSON topic-bank file.
    #[arg(long)]
    topics: Option<String>,
    #[arg(long)]
    topic_seed: Option<u64>,
    /// Features per music frame.
    #[arg(long)]
    n_feat: Option<usize>,
    /// Music frames per song.
    #[arg(long)]
    frames: Option<usize>,
    #[command(flatten)]
    config: ConfigArgs,
}

pub fn gen_data(a: GenDataArgs) -> Outcome {
    let exp = config::apply_sets(config::load(a.config.config.as_deref())?, &a.config.sets)?;
    let mut gen = exp.data.generation.clone();
    gen.n = a.n.unwrap_or(gen.n);
    gen.seed = a.seed.unwrap_or(gen.seed);
    gen.rho = a.rho.unwrap_or(gen.rho);
    gen.frames = a.frames.unwrap_or(gen.frames);
    let n_feat = a.n_feat.unwrap_or(exp.model.n_feat);
    let topic_seed = a.topic_seed.unwrap_or(exp.data.topic_seed);
    let topics = match a.topics.as_deref() {
        None => TopicSet::synthetic(exp.data.topics, n_feat, topic_seed)?,
        Some(t) => match t.parse::<usize>() {
            Ok(count) => TopicSet::synthetic(count, n_feat, topic_seed)?,
            Err(_) => {
                let path = Path::new(t);
                TopicSet::load(path).map_err(|e| match e {
                    mucap_core::Error::Io(io) => Failure::io(path, io),
                    other => other.into(),
                })?
            }
        },
    };
    let corpus = Corpus::generate(&gen, &topics)?;
    corpus.save(&a.out).map_err(|e| match e {
        mucap_core::Error::Io(io) => Failure::io(&a.out, io),
        other => other.into(),
    })?;
    emit_json(
        None,
        &json!({
            "out": a.out,
            "instances": corpus.len(),
            "topics": topics.topics.len(),
            "vocab_size": topics.vocab().len(),
        }),
    )
}

#[derive(Args)]
pub struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Training corpus file.
    #[arg(long)]
    train: PathBuf,
    /// Corpus scored after every epoch to select the best checkpoint.
    #[arg(long)]
    eval: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    lr: Option<f64>,
    /// Weight of the contrastive term.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Seeds both initialization and batch order.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    symmetric: bool,
    #[arg(long)]
    freeze_music_encoder: bool,
}

pub fn train(a: TrainArgs) -> Outcome {
    let mut exp = config::apply_sets(config::load(a.config.config.as_deref())?, &a.config.sets)?;
    let t = &mut exp.train;
    t.lr = a.lr.unwrap_or(t.lr);
    t.alpha = a.alpha.unwrap_or(t.alpha);
    t.epochs = a.epochs.unwrap_or(t.epochs);
    t.batch_size = a.batch_size.unwrap_or(t.batch_size);
    t.seed = a.seed.unwrap_or(t.seed);
    t.tau = a.tau.unwrap_or(t.tau);
    t.symmetric |= a.symmetric;
    t.freeze_music_encoder |= a.freeze_music_encoder;
    exp.train.validate()?;

    let train_set = load_corpus(&a.train)?;
    let eval_set = load_corpus(&a.eval)?;
    let vocab = corpus_vocab(&train_set);
    if let Some(ev) = eval_set.vocab() {
        if ev != &vocab {
            return Err(Failure::new(
                "parse",
                "train and eval corpora use different vocabularies",
            ));
        }
    }
    exp.model = ModelConfig {
        vocab_size: vocab.len(),
        n_feat: train_set.instances[0].music.cols(),
        ..exp.model
    };
    let model = Model::new(exp.model.clone(), exp.train.seed)?;

    std::fs::create_dir_all(&a.out_dir).map_err(|e| Failure::io(&a.out_dir, e))?;
    let record = json!({ "config": exp, "train": a.train, "eval": a.eval });
    emit_json(Some(&a.out_dir.join("config.json")), &record)?;
    let sink = CheckpointSink {
        dir: &a.out_dir,
        extra: json!({ "config": exp, "vocab": vocab }),
    };
    let out = trainer::train(
        model,
        &exp.train,
        &train_set.instances,
        &eval_set.instances,
        Some(&sink),
    )?;

    let log_path = a.out_dir.join("runlog.jsonl");
    let mut w = create(&log_path)?;
    out.log.write_jsonl(&mut w, &record)?;
    w.flush().map_err(|e| Failure::io(&log_path, e))?;
    let summary = json!({
        "config": record,
        "steps": out.log.steps.len(),
        "best_epoch": out.best_epoch,
        "best": out.log.epochs[out.best_epoch],
        "last": out.log.epochs.last(),
        "best_checkpoint": a.out_dir.join("best.ckpt"),
    });
    emit_json(Some(&a.out_dir.join("summary.json")), &summary)?;
    emit_json(None, &summary)
}

#[derive(Args)]
pub struct EvalCaptionArgs {
    /// Generate captions with this model.
    #[arg(long, required_unless_present = "predictions", conflicts_with = "predictions")]
    checkpoint: Option<PathBuf>,
    /// Score these captions instead: one JSON array of token ids per line,
    /// aligned with the corpus.
    #[arg(long)]
    predictions: Option<PathBuf>,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    max_gen_len: Option<usize>,
    /// Decoded examples included in the report.
    #[arg(long, default_value_t = 5)]
    samples: usize,
}

fn read_predictions(path: &Path) -> Result<Vec<Vec<usize>>, Failure> {
    let file = File::open(path).map_err(|e| Failure::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Failure::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let ids: Vec<usize> = serde_json::from_str(&line)
            .map_err(|e| Failure::new("parse", format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(content_tokens(&ids));
    }
    Ok(out)
}

pub fn eval_caption(a: EvalCaptionArgs) -> Outcome {
    let corpus = load_corpus(&a.corpus)?;
    let refs: Vec<Vec<usize>> = corpus.instances.iter().map(|s| content_tokens(&s.caption)).collect();
    let (generated, extra, max_len) = match (&a.checkpoint, &a.predictions) {
        (Some(ckpt), _) => {
            let (model, extra) = load_model(ckpt)?;
            let max_len = gen_len(a.max_gen_len, &extra);
            (
                trainer::generate_captions(&model, &corpus.instances, max_len)?,
                extra,
                Some(max_len),
            )
        }
        (None, Some(pred)) => {
            let generated = read_predictions(pred)?;
            if generated.len() != corpus.len() {
                return Err(Failure::new(
                    "parse",
                    format!("{} predictions for {} corpus instances", generated.len(), corpus.len()),
                ));
            }
            (generated, Value::Null, None)
        }
        (None, None) => unreachable!("clap requires one source"),
    };
    let pairs: Vec<(Vec<usize>, Vec<usize>)> = generated.iter().cloned().zip(refs.iter().cloned()).collect();
    let report = mucap_core::metrics::MetricsReport::from_pairs(&pairs);
    let samples: Vec<Value> = match display_vocab(&extra, &corpus) {
        Some(v) => pairs
            .iter()
            .take(a.samples)
            .map(|(g, r)| json!({ "generated": v.detokenize(g), "reference": v.detokenize(r) }))
            .collect(),
        None => Vec::new(),
    };
    emit_json(
        a.out.as_deref(),
        &json!({
            "config": {
                "checkpoint": a.checkpoint,
                "predictions": a.predictions,
                "corpus": a.corpus,
                "max_gen_len": max_len,
                "model": checkpoint_config(&extra),
            },
            "report": report,
            "samples": samples,
        }),
    )
}

#[derive(Clone, Copy, Debug, Serialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum RetrievalMode {
    /// Reference captions query generated captions in the lyric-encoder space.
    Caption,
    /// Music latents query lyric latents of the alignment head.
    Latent,
}

#[derive(Args)]
pub struct EvalRetrievalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = [5, 10, 20, 30])]
    k: Vec<usize>,
    #[arg(long, value_enum, default_value_t = RetrievalMode::Caption)]
    mode: RetrievalMode,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write per-query ranks and top items as CSV.
    #[arg(long)]
    per_query: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    per_query_top: usize,
    #[arg(long)]
    max_gen_len: Option<usize>,
}

pub fn eval_retrieval(a: EvalRetrievalArgs) -> Outcome {
    let (model, extra) = load_model(&a.checkpoint)?;
    let corpus = load_corpus(&a.corpus)?;
    let max_len = gen_len(a.max_gen_len, &extra);
    let result = match a.mode {
        RetrievalMode::Caption => {
            let generated = trainer::generate_captions(&model, &corpus.instances, max_len)?;
            trainer::caption_retrieval(&model, &corpus.instances, &generated, &a.k)?
        }
        RetrievalMode::Latent => trainer::latent_retrieval(&model, &corpus.instances, &a.k)?,
    };
    let cfg = json!({
        "checkpoint": a.checkpoint,
        "corpus": a.corpus,
        "k": a.k,
        "mode": a.mode,
        "max_gen_len": max_len,
        "model": checkpoint_config(&extra),
    });
    if let Some(path) = &a.per_query {
        let mut w = create(path)?;
        writeln!(w, "# config: {cfg}").map_err(|e| Failure::io(path, e))?;
        let relevant: Vec<usize> = (0..corpus.len()).collect();
        result.write_csv(&mut w, &relevant, a.per_query_top)?;
    }
    emit_json(a.out.as_deref(), &json!({ "config": cfg, "result": result }))
}

#[derive(Args)]
pub struct SweepArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.002, 0.02, 0.2, 2.0, 20.0])]
    alphas: Vec<f64>,
    /// Replace the config's seed list.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// CSV with one row per (alpha, seed) run.
    #[arg(long)]
    out: PathBuf,
    /// Runs trained concurrently.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

pub fn sweep_alpha(a: SweepArgs) -> Outcome {
    let mut exp = config::apply_sets(config::load(a.config.config.as_deref())?, &a.config.sets)?;
    if let Some(seeds) = a.seeds {
        exp.seeds = seeds;
    }
    exp.validate()?;
    let runs = trainer::sweep_alpha(&exp, &a.alphas, a.jobs.max(1))?;
    let rows: Vec<SweepRow> = runs.iter().map(SweepRow::from_run).collect();
    let cfg = json!({ "experiment": exp, "alphas": a.alphas });
    let mut w = create(&a.out)?;
    trainer::write_sweep_csv(&mut w, &rows, &cfg)?;
    w.flush().map_err(|e| Failure::io(&a.out, e))?;
    emit_json(
        None,
        &json!({ "out": a.out, "seed_means": SweepRow::seed_means(&rows) }),
    )
}

#[derive(Args)]
pub struct VerifyIbArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Replace the config's seed list with this single seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn verify_ib(a: VerifyIbArgs) -> Outcome {
    let mut exp = config::apply_sets(config::load(a.config.config.as_deref())?, &a.config.sets)?;
    if let Some(seed) = a.seed {
        exp.seeds = vec![seed];
    }
    let report = trainer::verify_ib(&exp)?;
    emit_json(a.out.as_deref(), &report)?;
    if report.passed {
        Ok(())
    } else {
        Err(
            Failure::new("check_failed", "mutual-information verification failed").with_detail(json!({
                "independent_mi_ok": report.independent_mi_ok,
                "paired_mi_ok": report.paired_mi_ok,
                "independent_trailing_mi": report.independent.trailing_mi,
                "paired_trailing_mi": report.paired.trailing_mi,
            })),
        )
    }
}

#[derive(Args)]
pub struct ExportAttentionArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Corpus instance to export.
    #[arg(long, default_value_t = 0)]
    index: usize,
    #[arg(long)]
    out: PathBuf,
}

pub fn export_attention(a: ExportAttentionArgs) -> Outcome {
    let (model, extra) = load_model(&a.checkpoint)?;
    let corpus = load_corpus(&a.corpus)?;
    let s: &SongInstance = corpus.instances.get(a.index).ok_or_else(|| {
        Failure::new(
            "invalid_parameter",
            format!("index {} out of range for {} instances", a.index, corpus.len()),
        )
    })?;
    let map = model.export_attention(&s.music, &s.lyrics)?;
    let vocab = display_vocab(&extra, &corpus);
    let cfg = json!({
        "checkpoint": a.checkpoint,
        "corpus": a.corpus,
        "index": a.index,
        "mean_row_entropy": map.mean_row_entropy(),
        "model": checkpoint_config(&extra),
    });
    let mut w = create(&a.out)?;
    writeln!(w, "# config: {cfg}").map_err(|e| Failure::io(&a.out, e))?;
    map.write_csv(&mut w, |t| match &vocab {
        Some(v) => v.word(t).to_string(),
        None => t.to_string(),
    })?;
    Ok(())
}

#[derive(Args)]
pub struct GradCheckArgs {
    /// Model width used throughout the suite (even).
    #[arg(long, default_value_t = 8)]
    dims: usize,
    /// Maximum relative error.
    #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
    tol: f64,
    /// Central-difference step.
    #[arg(long, default_value_t = DEFAULT_STEP)]
    step: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn grad_check(a: GradCheckArgs) -> Outcome {
    let report = run_suite(a.dims, a.step, a.tol, a.seed)?;
    let verdict = if report.passed { "pass" } else { "fail" };
    emit_json(
        a.out.as_deref(),
        &json!({ "result": verdict, "seed": a.seed, "report": report }),
    )?;
    if report.passed {
        Ok(())
    } else {
        let worst = report
            .entries
            .iter()
            .filter(|e| !e.report.passed)
            .map(|e| json!({ "op": e.name, "max_rel_error": e.report.max_rel_error }))
            .collect::<Vec<_>>();
        Err(Failure::new("check_failed", "gradient check failed").with_detail(json!(worst)))
    }
}
