// SPDX-License-Identifier: MIT OR Apache-2.0

//! `aspectprobe` command line: argument parsing, configuration resolution and
//! dispatch to the pipelines.
//!
//! Every subcommand reads one JSON configuration (`--config`), applies
//! `--set path=value` overrides and then its own flags, and writes its outputs
//! through [`aspectprobe_core::report::emit`]. Exit status is 0 on success, 1
//! for usage or configuration errors and 2 for failures while running.

pub mod config;
mod pipelines;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use config::parse_value;

/// Exit status of a configuration or usage error.
pub const EXIT_CONFIG: i32 = 1;
/// Exit status of a runtime failure.
pub const EXIT_RUNTIME: i32 = 2;

/// Every seed field `--seed` sets at once.
const SEED_PATHS: [&str; 6] = [
    "seed",
    "inlp.sgd.seed",
    "causal.seed",
    "causal.random.seed",
    "head.seed",
    "mine.seed",
];

#[derive(Debug, Parser)]
#[command(
    name = "aspectprobe",
    version,
    about = "Probe masked language models for verbal aspect"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// JSON configuration file.
    #[arg(long, short = 'c', global = true)]
    config: Option<PathBuf>,
    /// Override one configuration field, e.g. `--set behavioral.k=64`.
    #[arg(long = "set", value_name = "PATH=VALUE", global = true)]
    set: Vec<String>,
    /// Seed of every stochastic step.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, short = 'o', global = true)]
    out: Option<PathBuf>,
    /// Backend kind: `toy` or `bridge`.
    #[arg(long, global = true)]
    backend: Option<String>,
    /// Bridge server address.
    #[arg(long, global = true)]
    backend_url: Option<String>,
    /// Probing instance files (JSONL), replacing the configured list.
    #[arg(long, global = true)]
    instances: Vec<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Layer-wise accuracy of the expected over the complementary form.
    ProbeBehavioral {
        /// `iterative` or `inference`.
        #[arg(long)]
        method: Option<String>,
        /// Top-k size of aspect inference.
        #[arg(long)]
        k: Option<usize>,
        /// Comma-separated layers, or `all`.
        #[arg(long)]
        layers: Option<String>,
    },
    /// Learn boundedness subspaces with iterative nullspace projection.
    TrainInlp {
        /// Boundedness instances (JSONL).
        #[arg(long)]
        boundedness: Option<PathBuf>,
        /// Comma-separated layers, or `all`.
        #[arg(long)]
        layers: Option<String>,
        /// Rounds per layer.
        #[arg(long)]
        m: Option<usize>,
        /// Push strength stored with the subspace.
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Accuracy shifts under counterfactual hidden-state substitution.
    ProbeCausal {
        /// Inclusive layer range, `a-b` or `a..b`.
        #[arg(long)]
        layer_range: Option<String>,
        /// A single intervention layer (repeatable).
        #[arg(long)]
        layer: Vec<usize>,
        /// `positive`, `negative` or `both`.
        #[arg(long)]
        direction: Option<String>,
        /// Subspace file written by `train-inlp`.
        #[arg(long)]
        subspace_file: Option<PathBuf>,
        /// Control experiment: `random`, `number` or `identity`.
        #[arg(long)]
        control: Option<String>,
        /// `aspect` or `number`.
        #[arg(long)]
        task: Option<String>,
        /// `iterative` or `inference`.
        #[arg(long)]
        method: Option<String>,
        /// Top-k size of inference scoring.
        #[arg(long)]
        k: Option<usize>,
    },
    /// Mine boundedness instances from CoNLL-U corpora.
    MineCues {
        /// CoNLL-U files (repeatable).
        #[arg(long)]
        corpus: Vec<PathBuf>,
        /// Cue lexicon (JSON).
        #[arg(long)]
        patterns: Option<PathBuf>,
        /// Instances kept per class.
        #[arg(long)]
        cap: Option<usize>,
        /// Texts to keep out of the mined set (repeatable).
        #[arg(long)]
        exclude_texts: Vec<PathBuf>,
    },
    /// Train the linear aspect head on mask-position features.
    TrainHead {
        /// Feature layer.
        #[arg(long)]
        layer: Option<usize>,
        /// Training epochs.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// F0.5 and MC-dropout uncertainty of a trained head.
    EvalHead {
        /// Head file written by `train-head`.
        #[arg(long)]
        head: Option<PathBuf>,
        /// Dropout samples per instance (0 skips sampling).
        #[arg(long)]
        mc_samples: Option<usize>,
        /// `head` or `backend`.
        #[arg(long)]
        dropout_source: Option<String>,
    },
    /// Cue-category and cue-less statistics of probing contexts.
    CueStats {
        /// Layer of the outcome split.
        #[arg(long)]
        layer: Option<usize>,
        /// Skip behavioral scoring.
        #[arg(long)]
        no_outcomes: bool,
        /// Mined boundedness files to scan as well (repeatable).
        #[arg(long)]
        boundedness: Vec<PathBuf>,
    },
    /// Check run directories against their manifests and index them.
    Report {
        /// Run directories.
        inputs: Vec<PathBuf>,
    },
}

/// A failed command with its exit status.
#[derive(Debug)]
pub(crate) enum Failure {
    Config(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> i32 {
        match self {
            Failure::Config(_) => EXIT_CONFIG,
            Failure::Runtime(_) => EXIT_RUNTIME,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Runtime(m) => m,
        }
    }
}

impl From<aspectprobe_core::Error> for Failure {
    fn from(e: aspectprobe_core::Error) -> Self {
        match e {
            aspectprobe_core::Error::Config(m) => Failure::Config(m),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

/// Parses `0,2,4` or `all` (empty list).
fn parse_layers(raw: &str) -> Result<Value, Failure> {
    if raw.trim() == "all" {
        return Ok(Value::Array(Vec::new()));
    }
    raw.split(',')
        .map(|s| {
            s.trim()
                .parse::<u64>()
                .map(Value::from)
                .map_err(|_| Failure::Config(format!("invalid layer {s:?}")))
        })
        .collect::<Result<Vec<_>, _>>()
        .map(Value::Array)
}

/// Parses an inclusive range `a-b` or `a..b`.
fn parse_range(raw: &str) -> Result<Vec<usize>, Failure> {
    let bad = || Failure::Config(format!("invalid layer range {raw:?}"));
    let (a, b) = raw.split_once("..").or_else(|| raw.split_once('-')).ok_or_else(bad)?;
    let a: usize = a.trim().parse().map_err(|_| bad())?;
    let b: usize = b.trim().trim_start_matches('=').parse().map_err(|_| bad())?;
    if a > b {
        return Err(bad());
    }
    Ok((a..=b).collect())
}

fn paths(v: &[PathBuf]) -> Value {
    Value::Array(v.iter().map(|p| Value::String(p.display().to_string())).collect())
}

fn path(p: &std::path::Path) -> Value {
    Value::String(p.display().to_string())
}

/// Translates flags into ordered `(path, value)` overrides.
fn overrides(cli: &Cli) -> Result<Vec<(String, Value)>, Failure> {
    let mut out: Vec<(String, Value)> = Vec::new();
    for raw in &cli.global.set {
        let (k, v) = raw
            .split_once('=')
            .ok_or_else(|| Failure::Config(format!("--set expects PATH=VALUE, got {raw:?}")))?;
        out.push((k.trim().to_string(), parse_value(v)));
    }
    let mut push = |k: &str, v: Value| out.push((k.to_string(), v));
    let g = &cli.global;
    if let Some(seed) = g.seed {
        for p in SEED_PATHS {
            push(p, seed.into());
        }
    }
    if let Some(o) = &g.out {
        push("out_dir", path(o));
    }
    if let Some(b) = &g.backend {
        push("backend.kind", b.as_str().into());
    }
    if let Some(u) = &g.backend_url {
        push("backend.url", u.as_str().into());
    }
    if !g.instances.is_empty() {
        push("data.instances", paths(&g.instances));
    }
    match &cli.command {
        Command::ProbeBehavioral { method, k, layers } => {
            if let Some(m) = method {
                push("behavioral.method", m.as_str().into());
            }
            if let Some(k) = k {
                push("behavioral.k", (*k).into());
            }
            if let Some(l) = layers {
                push("behavioral.layers", parse_layers(l)?);
            }
        }
        Command::TrainInlp {
            boundedness,
            layers,
            m,
            alpha,
        } => {
            if let Some(b) = boundedness {
                push("data.boundedness", path(b));
            }
            if let Some(l) = layers {
                push("inlp.layers", parse_layers(l)?);
            }
            if let Some(m) = m {
                push("inlp.m", (*m).into());
            }
            if let Some(a) = alpha {
                push("inlp.alpha", (*a).into());
            }
        }
        Command::ProbeCausal {
            layer_range,
            layer,
            direction,
            subspace_file,
            control,
            task,
            method,
            k,
        } => {
            let mut layers = Vec::new();
            if let Some(r) = layer_range {
                layers.extend(parse_range(r)?);
            }
            layers.extend(layer.iter().copied());
            if !layers.is_empty() {
                layers.sort_unstable();
                layers.dedup();
                push("causal.layers", layers.into());
            }
            if let Some(d) = direction {
                push("causal.direction", d.as_str().into());
            }
            if let Some(f) = subspace_file {
                push("causal.subspace_file", path(f));
            }
            if let Some(c) = control {
                push("causal.control", c.as_str().into());
            }
            if let Some(t) = task {
                push("causal.task", t.as_str().into());
            }
            if let Some(m) = method {
                push("causal.method", m.as_str().into());
            }
            if let Some(k) = k {
                push("causal.k", (*k).into());
            }
        }
        Command::MineCues {
            corpus,
            patterns,
            cap,
            exclude_texts,
        } => {
            if !corpus.is_empty() {
                push("mine.corpus", paths(corpus));
            }
            if let Some(p) = patterns {
                push("mine.patterns", path(p));
            }
            if let Some(c) = cap {
                push("mine.cap", (*c).into());
            }
            if !exclude_texts.is_empty() {
                push("mine.exclude_texts", paths(exclude_texts));
            }
        }
        Command::TrainHead { layer, epochs } => {
            if let Some(l) = layer {
                push("head.layer", (*l).into());
            }
            if let Some(e) = epochs {
                push("head.epochs", (*e).into());
            }
        }
        Command::EvalHead {
            head,
            mc_samples,
            dropout_source,
        } => {
            if let Some(h) = head {
                push("head.model", path(h));
            }
            if let Some(n) = mc_samples {
                push("head.mc_samples", (*n).into());
            }
            if let Some(s) = dropout_source {
                push("head.dropout_source", s.as_str().into());
            }
        }
        Command::CueStats {
            layer,
            no_outcomes,
            boundedness,
        } => {
            if let Some(l) = layer {
                push("cue_stats.layer", (*l).into());
            }
            if *no_outcomes {
                push("cue_stats.with_outcomes", false.into());
            }
            if !boundedness.is_empty() {
                push("cue_stats.boundedness", paths(boundedness));
            }
        }
        Command::Report { inputs } => {
            if !inputs.is_empty() {
                push("report.inputs", paths(inputs));
            }
        }
    }
    Ok(out)
}

fn execute(cli: &Cli) -> Result<(), Failure> {
    let overrides = overrides(cli)?;
    let config = config::resolve(cli.global.config.as_deref(), &overrides).map_err(Failure::Config)?;
    let written = match &cli.command {
        Command::ProbeBehavioral { .. } => pipelines::probe_behavioral(&config)?,
        Command::TrainInlp { .. } => pipelines::train_inlp(&config)?,
        Command::ProbeCausal { .. } => pipelines::probe_causal(&config)?,
        Command::MineCues { .. } => pipelines::mine_cues(&config)?,
        Command::TrainHead { .. } => pipelines::train_head(&config)?,
        Command::EvalHead { .. } => pipelines::eval_head(&config)?,
        Command::CueStats { .. } => pipelines::cue_stats(&config)?,
        Command::Report { .. } => pipelines::report(&config)?,
    };
    for p in written {
        log::info!("wrote {}", p.display());
    }
    Ok(())
}

/// Runs the command line `args` (program name first) and returns the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {}", f.message());
            f.code()
        }
    }
}
