//! Command-line front end for prompt scoring, selection and evaluation.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use pflat_core::evaluation::{MetricName, SweepVariable};
use pflat_core::io::OutputFormat;
use pflat_core::selection::BaseMetric;
use pflat_core::{Error, ErrorClass};

mod commands;
pub mod config;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

/// Environment fallback for `--threads`.
pub const THREADS_ENV: &str = "PFLAT_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "pflat",
    version,
    about = "Select prompts by loss, MI, sensitivity and prompt flatness"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Master seed for every random draw.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Report path; standard output if absent.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_parser = parse_format, default_value = "json")]
    pub format: OutputFormat,
    /// Worker threads (falls back to PFLAT_THREADS, then all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args, Default)]
pub struct Inputs {
    /// Weight file of the scoring model.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Prompt pool JSON.
    #[arg(long)]
    pub pool: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct Perturb {
    /// Monte-Carlo samples for pFlat.
    #[arg(long)]
    pub n_samples: Option<usize>,
    /// Variance of the Gaussian parameter noise.
    #[arg(long)]
    pub sigma2: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Per-prompt metric reports.
    Score {
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        perturb: Perturb,
        /// JSONL inputs; labels enable loss and true flatness.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Comma-separated subset of loss, mi, sen, pflat, true_flatness.
        #[arg(long, value_delimiter = ',', value_parser = parse_metric)]
        metrics: Option<Vec<MetricName>>,
        /// Weight of pFlat in the combined score.
        #[arg(long)]
        alpha: Option<f64>,
        /// Base metric of the combined score.
        #[arg(long, value_parser = parse_base, default_value = "loss")]
        base: BaseMetric,
    },
    /// Best prompt under one metric, optionally plus α·pFlat.
    Select {
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        perturb: Perturb,
        #[arg(long)]
        data: Option<PathBuf>,
        /// loss, mi, sen or pflat.
        #[arg(long, value_parser = parse_metric)]
        metric: MetricName,
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Pick α on a labeled dev set.
    TuneAlpha {
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        perturb: Perturb,
        #[arg(long)]
        dev: Option<PathBuf>,
        #[arg(long, value_parser = parse_base, default_value = "loss")]
        base: BaseMetric,
        /// Comma-separated ascending α values.
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<f64>>,
    },
    /// Correlation and ranking study over the pool.
    Evaluate {
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        perturb: Perturb,
        /// Labeled test set.
        #[arg(long)]
        test: Option<PathBuf>,
        /// Labeled set for loss and true flatness (defaults to the test set).
        #[arg(long)]
        dev: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', value_parser = parse_metric)]
        metrics: Option<Vec<MetricName>>,
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Repeat the study across σ² or N values.
    Sweep {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long)]
        dev: Option<PathBuf>,
        #[arg(long, value_parser = parse_variable)]
        variable: Option<SweepVariable>,
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
        #[arg(long)]
        repeats: Option<usize>,
        #[arg(long, value_parser = parse_metric)]
        metric: Option<MetricName>,
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Tune a continuous prefix with SAM or plain descent.
    PrefixTune {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        train: Option<PathBuf>,
        /// Labeled set for held-out accuracy.
        #[arg(long)]
        test: Option<PathBuf>,
        /// Where to write the tuned prefix.
        #[arg(long)]
        prefix_out: Option<PathBuf>,
        #[arg(long)]
        rho: Option<f64>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        prefix_len: Option<usize>,
        /// Plain gradient descent instead of SAM.
        #[arg(long)]
        no_sam: bool,
    },
    /// Fit (logistic) or initialize (transformer) a backend and save it.
    FitBackend {
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        verbalizer: Option<PathBuf>,
        /// logistic or transformer.
        #[arg(long, default_value = "logistic")]
        backend: String,
        #[arg(long)]
        weights_out: PathBuf,
    },
}

fn parse_format(s: &str) -> Result<OutputFormat, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_metric(s: &str) -> Result<MetricName, String> {
    MetricName::parse(s).map_err(|e| e.to_string())
}

fn parse_base(s: &str) -> Result<BaseMetric, String> {
    match s {
        "loss" => Ok(BaseMetric::Loss),
        "mi" => Ok(BaseMetric::Mi),
        "sen" => Ok(BaseMetric::Sen),
        other => Err(format!(
            "unknown base metric {other:?} (expected loss, mi or sen)"
        )),
    }
}

fn parse_variable(s: &str) -> Result<SweepVariable, String> {
    match s {
        "sigma2" => Ok(SweepVariable::Sigma2),
        "n_samples" => Ok(SweepVariable::NSamples),
        other => Err(format!(
            "unknown sweep variable {other:?} (expected sigma2 or n_samples)"
        )),
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e.class() {
        ErrorClass::Usage => EXIT_USAGE,
        ErrorClass::Data => EXIT_DATA,
        ErrorClass::Numeric => EXIT_NUMERIC,
    }
}

fn thread_count(flag: Option<usize>) -> Result<usize, String> {
    if let Some(n) = flag {
        return Ok(n);
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| format!("{THREADS_ENV}={v:?} is not a thread count")),
        Err(_) => Ok(0),
    }
}

/// Parse `argv` (program name first), run the command and return the exit
/// code. Errors go to standard error; nothing is written on failure.
pub fn dispatch(argv: Vec<String>) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let threads = match thread_count(cli.global.threads) {
        Ok(n) => n,
        Err(msg) => {
            eprintln!("error: {msg}");
            return EXIT_USAGE;
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker threads: {e}");
            return EXIT_USAGE;
        }
    };
    match pool.install(|| commands::run(&cli)) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
