mod commands;
mod config;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "mucap",
    version,
    about = "Music captioning with lyric/music alignment on synthetic corpora"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus file.
    GenData(commands::GenDataArgs),
    /// Train a model and write checkpoints plus a run log.
    Train(commands::TrainArgs),
    /// Score generated (or supplied) captions against a corpus.
    EvalCaption(commands::EvalCaptionArgs),
    /// Retrieval precision and recall at k.
    EvalRetrieval(commands::EvalRetrievalArgs),
    /// Train over a grid of alignment weights and seeds.
    SweepAlpha(commands::SweepArgs),
    /// Paired versus independent corpus comparison of the MI bound.
    VerifyIb(commands::VerifyIbArgs),
    /// Write one instance's cross-attention matrix as CSV.
    ExportAttention(commands::ExportAttentionArgs),
    /// Finite-difference check of every differentiable operation.
    GradCheck(commands::GradCheckArgs),
}

/// Experiment config file plus overrides shared by several subcommands.
#[derive(Args, Clone, Debug)]
pub struct ConfigArgs {
    /// JSON experiment config; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override any config field, e.g. `--set train.lr=0.001`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
}

/// A runtime failure reported as `{"error": {...}}` on stderr.
#[derive(Debug)]
pub struct Failure {
    kind: &'static str,
    message: String,
    detail: Option<Value>,
}

impl Failure {
    pub fn new(kind: &'static str, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
            detail: None,
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Self::new("io", format!("{}: {e}", path.display()))
    }

    pub fn with_detail(mut self, detail: Value) -> Self {
        self.detail = Some(detail);
        self
    }

    fn to_json(&self) -> Value {
        let mut body = json!({"kind": self.kind, "message": self.message});
        if let Some(d) = &self.detail {
            body["detail"] = d.clone();
        }
        json!({ "error": body })
    }
}

impl From<mucap_core::Error> for Failure {
    fn from(e: mucap_core::Error) -> Self {
        use mucap_core::Error as E;
        let kind = match &e {
            E::Io(_) => "io",
            E::Json(_) | E::Csv(_) | E::Parse { .. } => "parse",
            E::Checkpoint(_) => "checkpoint",
            E::Diverged { .. } => "diverged",
            E::Param(_) => "invalid_parameter",
            _ => "model",
        };
        let f = Self::new(kind, e.to_string());
        match e {
            E::Diverged { step } => f.with_detail(json!({ "step": step })),
            _ => f,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::Train(a) => commands::train(a),
        Command::EvalCaption(a) => commands::eval_caption(a),
        Command::EvalRetrieval(a) => commands::eval_retrieval(a),
        Command::SweepAlpha(a) => commands::sweep_alpha(a),
        Command::VerifyIb(a) => commands::verify_ib(a),
        Command::ExportAttention(a) => commands::export_attention(a),
        Command::GradCheck(a) => commands::grad_check(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", f.to_json());
            ExitCode::from(1)
        }
    }
}
