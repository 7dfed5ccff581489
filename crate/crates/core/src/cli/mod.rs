//! Command-line front end. `run` parses arguments, applies an optional JSON
//! config, dispatches, and maps failures to exit codes (1 runtime, 2 usage).

mod canonical;
mod commands;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use canonical::{format_float, to_canonical};

use crate::barycenter::{BarySigma, Regularizer};
use crate::classify::Distance;
use crate::forecast::{Init, LossKind, Metric};
use crate::optim::Optimizer;
use crate::udtw::BaseDistanceKind;

#[derive(Debug, Parser)]
#[command(name = "udtw", version, about = "Uncertainty-aware DTW: distances, barycenters, classification, coding, forecasting")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON object whose keys (flag names, `-` or `_`) supply defaults
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed for every random choice
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write the JSON report here instead of stdout
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct MetricArgs {
    /// Softmin temperature; 0 gives hard DTW
    #[arg(long, default_value_t = 1.0)]
    pub gamma: f64,
    /// Base distance: normal, laplace or cauchy
    #[arg(long, default_value = "normal")]
    pub kind: BaseDistanceKind,
    /// Sakoe-Chiba half-width in frames
    #[arg(long, conflicts_with = "band_fraction")]
    pub band: Option<f64>,
    /// Sakoe-Chiba half-width as a fraction of the second length
    #[arg(long)]
    pub band_fraction: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct PairArgs {
    /// First series: comma-separated values, or @file (one frame per line)
    #[arg(long)]
    pub x: Option<String>,
    /// Second series, same format as --x
    #[arg(long)]
    pub y: Option<String>,
    /// Dataset path or synth:<kind>[:<n>]
    #[arg(long)]
    pub dataset: Option<String>,
    /// Index of the first series in --dataset
    #[arg(long, default_value_t = 0)]
    pub i: usize,
    /// Index of the second series in --dataset
    #[arg(long, default_value_t = 1)]
    pub j: usize,
    /// Constant variance for every cell
    #[arg(long, default_value_t = 1.0)]
    pub variance: f64,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// uDTW distance and penalty between two series
    #[command(allow_negative_numbers = true)]
    Dist {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        pair: PairArgs,
        #[command(flatten)]
        metric: MetricArgs,
        /// Penalty weight reported in `value = distance + beta * penalty`
        #[arg(long, default_value_t = 0.0)]
        beta: f64,
        /// Write the soft alignment as CSV
        #[arg(long)]
        alignment: Option<PathBuf>,
    },
    /// Soft alignment matrix and hard path between two series
    #[command(allow_negative_numbers = true)]
    Align {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        pair: PairArgs,
        #[command(flatten)]
        metric: MetricArgs,
        /// Also write the alignment as CSV
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Frechet mean with per-frame variances for one class of a dataset
    #[command(allow_negative_numbers = true)]
    Barycenter {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        metric: MetricArgs,
        /// Dataset path or synth:<kind>[:<n>]
        #[arg(long)]
        dataset: String,
        /// Class id to average (all series when absent)
        #[arg(long)]
        class: Option<usize>,
        /// Use only the first N selected series
        #[arg(long)]
        count: Option<usize>,
        /// Barycenter length (default: rounded mean length)
        #[arg(long)]
        length: Option<usize>,
        #[arg(long, default_value_t = 0.0)]
        beta: f64,
        #[arg(long, default_value_t = 0.0)]
        lambda: f64,
        #[arg(long, default_value_t = 100)]
        max_iters: usize,
        #[arg(long, default_value = "lbfgs")]
        optimizer: Optimizer,
        /// add-sq, add-one or unit
        #[arg(long, default_value = "add-sq")]
        sigma: BarySigma,
        /// both, omega-log or omega-prime-sq
        #[arg(long, default_value = "both")]
        regularizer: Regularizer,
        /// Write mu and sigma_mu per frame as CSV
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Write the objective trace as CSV
        #[arg(long)]
        trace_csv: Option<PathBuf>,
    },
    /// Nearest-centroid and k-NN accuracy with validation-chosen gamma and beta
    #[command(allow_negative_numbers = true)]
    Classify {
        #[command(flatten)]
        common: Common,
        /// Dataset path or synth:<kind>[:<n>]
        #[arg(long)]
        dataset: String,
        /// Classifiers: centroid, knn:<k>
        #[arg(long, value_delimiter = ',', default_value = "centroid,knn:1")]
        classifiers: Vec<String>,
        /// euclidean, dtw, sdtw, udtw
        #[arg(long, value_delimiter = ',', default_value = "euclidean,dtw,sdtw,udtw")]
        distances: Vec<Distance>,
        #[arg(long, value_delimiter = ',', default_value = "0.1,1,10")]
        gammas: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "0,0.01,0.05")]
        betas: Vec<f64>,
        /// Train, validation and test fractions
        #[arg(long, value_delimiter = ',', default_value = "0.5,0.25,0.25")]
        fractions: Vec<f64>,
        #[arg(long, default_value_t = 100)]
        max_iters: usize,
        /// Sakoe-Chiba half-width in frames
        #[arg(long)]
        band: Option<f64>,
        /// z-normalise every series first
        #[arg(long)]
        znorm: bool,
    },
    /// Train an MLP forecaster and report test metrics
    #[command(allow_negative_numbers = true)]
    Forecast {
        #[command(flatten)]
        common: Common,
        /// Training dataset path or synth:<kind>[:<n>]
        #[arg(long)]
        dataset: String,
        /// Test dataset (default: half of --dataset, chosen by --seed)
        #[arg(long)]
        test: Option<String>,
        /// euclid, sdtw or udtw
        #[arg(long, default_value = "udtw")]
        loss: LossKind,
        #[arg(long, default_value_t = 0.1)]
        gamma: f64,
        #[arg(long, default_value_t = 0.1)]
        beta: f64,
        #[arg(long, default_value_t = 30)]
        epochs: usize,
        #[arg(long, default_value_t = 30)]
        hidden: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        #[arg(long, default_value_t = 1e-6)]
        weight_decay: f64,
        #[arg(long, default_value_t = 16)]
        batch_size: usize,
        /// uniform or normal
        #[arg(long, default_value = "uniform")]
        init: Init,
        /// Train the uDTW loss without a SigmaNet head
        #[arg(long)]
        no_sigma_head: bool,
        #[arg(long, value_delimiter = ',', default_value = "mse,mse-per-step,dtw,sdtw,udtw")]
        metrics: Vec<Metric>,
        /// Temperature of the sdtw and udtw metrics
        #[arg(long, default_value_t = 0.1)]
        eval_gamma: f64,
        /// Write predictions and targets as CSV
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Learn a dictionary of anchors and report soft-assignment codes
    #[command(allow_negative_numbers = true)]
    Code {
        #[command(flatten)]
        common: Common,
        /// Dataset path or synth:<kind>[:<n>]
        #[arg(long)]
        dataset: String,
        /// Number of anchors
        #[arg(long, default_value_t = 2)]
        anchors: usize,
        /// Nearest anchors per code
        #[arg(long, default_value_t = 2)]
        k_nearest: usize,
        /// Coding/update alternations
        #[arg(long, default_value_t = 50)]
        iters: usize,
        #[arg(long, default_value_t = 1.0)]
        gamma: f64,
        #[arg(long, default_value_t = 0.7)]
        gamma_prime: f64,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        #[arg(long, default_value_t = 10)]
        inner_iters: usize,
    },
    /// Check dynamic programs and gradients against brute force
    #[command(allow_negative_numbers = true)]
    OracleCheck {
        #[command(flatten)]
        common: Common,
        /// Largest sizes as tau,tau_prime
        #[arg(long, value_delimiter = ',', default_value = "6,6")]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 200)]
        trials: usize,
        #[arg(long, value_delimiter = ',', default_value = "0.01,0.1,1,10")]
        gammas: Vec<f64>,
        /// Maximum number of enumerated paths
        #[arg(long, default_value_t = 1_000_000)]
        cap: u128,
        /// Overwrite forward-table entry m,n with a value (negative control)
        #[arg(long, hide = true, value_delimiter = ',')]
        corrupt: Option<Vec<f64>>,
    },
    /// Time forward, forward+backward and full uDTW on square instances
    #[command(allow_negative_numbers = true)]
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "16,32,64")]
        sizes: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "0.1,1")]
        gammas: Vec<f64>,
        #[arg(long, default_value_t = 5)]
        reps: usize,
        /// Write the timing table here (default: stderr)
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

/// A failure with its exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(crate::Error),
    /// A check ran and did not pass; the report was already written.
    Failed,
}

impl From<crate::Error> for CliError {
    fn from(e: crate::Error) -> Self {
        CliError::Runtime(e)
    }
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) | CliError::Failed => 1,
        }
    }
}

pub(crate) fn usage(flag: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Usage(format!("invalid value for {flag}: {msg}"))
}

const SUBCOMMANDS: [&str; 8] = ["dist", "align", "barycenter", "classify", "forecast", "code", "oracle-check", "bench"];

/// Splices `--config` keys into `args` right after the subcommand, skipping
/// flags that are given explicitly.
fn apply_config(args: Vec<OsString>) -> Result<Vec<OsString>, CliError> {
    let strs: Vec<String> = args.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let path = strs.iter().enumerate().find_map(|(k, a)| {
        if a == "--config" {
            strs.get(k + 1).cloned()
        } else {
            a.strip_prefix("--config=").map(str::to_string)
        }
    });
    let Some(path) = path else {
        return Ok(args);
    };
    let Some(pos) = strs.iter().position(|a| SUBCOMMANDS.contains(&a.as_str())) else {
        return Ok(args);
    };
    let text = std::fs::read_to_string(&path).map_err(|e| usage("--config", format!("{path}: {e}")))?;
    let json: serde_json::Value = serde_json::from_str(&text).map_err(|e| usage("--config", format!("{path}: {e}")))?;
    let serde_json::Value::Object(map) = json else {
        return Err(usage("--config", "expected a JSON object"));
    };
    let mut extra = Vec::new();
    let mut keys: Vec<&String> = map.keys().collect();
    keys.sort();
    for key in keys {
        let flag = format!("--{}", key.replace('_', "-"));
        if flag == "--config" || strs.iter().any(|a| a == &flag || a.starts_with(&format!("{flag}="))) {
            continue;
        }
        let scalar = |v: &serde_json::Value| -> Result<String, CliError> {
            match v {
                serde_json::Value::String(s) => Ok(s.clone()),
                serde_json::Value::Number(n) => Ok(n.to_string()),
                _ => Err(usage(&flag, "config values must be strings, numbers, booleans or arrays")),
            }
        };
        match &map[key] {
            serde_json::Value::Null | serde_json::Value::Bool(false) => {}
            serde_json::Value::Bool(true) => extra.push(flag.clone()),
            serde_json::Value::Array(items) => {
                let parts: Vec<String> = items.iter().map(scalar).collect::<Result<_, _>>()?;
                extra.push(format!("{flag}={}", parts.join(",")));
            }
            v => extra.push(format!("{flag}={}", scalar(v)?)),
        }
    }
    let mut out = args;
    for (k, e) in extra.into_iter().enumerate() {
        out.insert(pos + 1 + k, e.into());
    }
    Ok(out)
}

fn init_threads() -> Result<(), CliError> {
    if let Ok(v) = std::env::var("WARP_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|n| *n >= 1)
            .ok_or_else(|| usage("WARP_THREADS", format!("expected a positive integer, got `{v}`")))?;
        // a second initialisation in the same process is harmless
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

/// Runs the CLI on `args` (including the program name) and returns the exit code.
pub fn run_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let result = apply_config(args).and_then(|args| {
        let cli = match Cli::try_parse_from(args) {
            Ok(c) => c,
            Err(e) => {
                let _ = e.print();
                return if e.use_stderr() { Err(CliError::Usage(String::new())) } else { Ok(()) };
            }
        };
        init_threads()?;
        commands::dispatch(cli.command)
    });
    match result {
        Ok(_) => 0,
        Err(e) => {
            match &e {
                CliError::Usage(m) if m.is_empty() => {}
                CliError::Usage(m) => eprintln!("error: {m}"),
                CliError::Runtime(err) => eprintln!("error: {err}"),
                CliError::Failed => {}
            }
            e.code()
        }
    }
}

/// Runs the CLI on the process arguments.
pub fn run() -> i32 {
    run_with(std::env::args_os())
}
