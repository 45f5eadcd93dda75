//! Flag definitions. Every subcommand flag is optional here so that a config
//! file can supply it; required values are checked after merging.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use ev_energy::{Aggregation, Feature, ModelKind};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "ev-energy", version, about = "Trip energy estimation for electric vehicles with Bayesian MLPs")]
pub struct Cli {
    /// Seed for every random choice in the run [default: 0]
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Directory for outputs and the run manifest [default: .]
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,

    /// TOML or JSON file with `seed`, `out-dir` and per-command sections;
    /// a run manifest works too
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// More log output (-v info, -vv debug)
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Trace CSV → micro-trips → features.csv, train.csv, test.csv, stats.json
    Ingest(IngestArgs),
    /// Synthetic trace CSV from the built-in energy law
    Synth(SynthArgs),
    /// Train a model on a feature CSV → model.json, loss_history.csv
    Train(TrainArgs),
    /// Predictive mean, std and interval per row → predictions.csv
    Predict(PredictArgs),
    /// MAPE, RMSE and coverage on labelled rows → report.json
    Evaluate(EvaluateArgs),
    /// Permutation importance on labelled rows → importance.json
    Importance(ImportanceArgs),
    /// Energy per km while one feature varies → sweep.csv
    Sweep(SweepArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Ingest(_) => "ingest",
            Command::Synth(_) => "synth",
            Command::Train(_) => "train",
            Command::Predict(_) => "predict",
            Command::Evaluate(_) => "evaluate",
            Command::Importance(_) => "importance",
            Command::Sweep(_) => "sweep",
        }
    }
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct IngestArgs {
    /// Trace CSV (trip_id,t_sec,speed,accel,elev_delta,dist_delta,power,temp)
    #[arg(long)]
    pub traces: Option<PathBuf>,
    /// Micro-trips to draw before filtering [default: 5000]
    #[arg(long)]
    pub count: Option<usize>,
    /// Shortest micro-trip, s [default: 60]
    #[arg(long)]
    pub min_len: Option<usize>,
    /// Longest micro-trip, s [default: rest of trace]
    #[arg(long)]
    pub max_len: Option<usize>,
    /// Drop micro-trips with |energy| below this, kWh [default: 0.3]
    #[arg(long)]
    pub filter_kwh: Option<f64>,
    /// Training fraction [default: 0.9]
    #[arg(long)]
    pub split: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct SynthArgs {
    /// Number of traces [default: 50]
    #[arg(long)]
    pub trips: Option<usize>,
    /// Trace length, s [default: 1800]
    #[arg(long)]
    pub duration: Option<usize>,
    /// Per-second power noise std, W [default: 0]
    #[arg(long)]
    pub power_noise_w: Option<f64>,
    /// Auxiliary power per °F below the reference temperature, W [default: 35]
    #[arg(long)]
    pub aux_temp_coeff: Option<f64>,
    /// Largest road grade amplitude [default: 0.05]
    #[arg(long)]
    pub grade_max: Option<f64>,
    /// Lowest ambient temperature, °F [default: 33]
    #[arg(long)]
    pub temp_min: Option<f64>,
    /// Highest ambient temperature, °F [default: 85]
    #[arg(long)]
    pub temp_max: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct TrainArgs {
    /// Labelled feature CSV
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// prob-wu, prob or det [default: prob-wu]
    #[arg(long)]
    pub model: Option<ModelKind>,
    /// Adam learning rate [default: 0.05]
    #[arg(long)]
    pub lr: Option<f64>,
    /// [default: 400]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Mini-batch size [default: full batch]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Weight draws per step for the ELBO [default: 1]
    #[arg(long)]
    pub elbo_samples: Option<usize>,
    /// Multiplier on the KL term [default: 1]
    #[arg(long)]
    pub kl_weight: Option<f64>,
    /// Gradient norm cap as a multiple of its running average [default: 10]
    #[arg(long)]
    pub grad_clip: Option<f64>,
    /// Disable the gradient norm cap
    #[arg(long)]
    pub no_grad_clip: bool,
    /// Prior mean of uncertain weights [default: 0]
    #[arg(long)]
    pub prior_mean: Option<f64>,
    /// Prior std of uncertain weights [default: 1]
    #[arg(long)]
    pub prior_std: Option<f64>,
    /// Initial posterior std of uncertain weights [default: 0.05]
    #[arg(long)]
    pub init_sigma: Option<f64>,
    /// Drop rpa, avg_accel and avg_decel from the inputs
    #[arg(long)]
    pub no_driver_behaviour: bool,
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct PosteriorArgs {
    /// Monte Carlo weight draws [default: 10]
    #[arg(long)]
    pub m_samples: Option<usize>,
    /// average or mixture [default: average]
    #[arg(long)]
    pub aggregation: Option<Aggregation>,
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct PredictArgs {
    /// model.json from `train`
    #[arg(long)]
    pub model_file: Option<PathBuf>,
    /// Feature CSV; the label column may be empty
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub posterior: PosteriorArgs,
    /// Interval probability [default: 0.95]
    #[arg(long)]
    pub level: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct EvaluateArgs {
    /// model.json from `train`
    #[arg(long)]
    pub model_file: Option<PathBuf>,
    /// Labelled feature CSV
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub posterior: PosteriorArgs,
    /// Add permutation importance to the report
    #[arg(long)]
    pub importance: bool,
    /// Shuffles per feature [default: 10]
    #[arg(long)]
    pub repeats: Option<usize>,
    /// Feature to sweep around the test-set median; writes sweep.csv
    #[arg(long)]
    pub sweep: Option<Feature>,
    /// start:stop:step, inclusive [default: observed range in 20 steps]
    #[arg(long)]
    pub grid: Option<String>,
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct ImportanceArgs {
    /// model.json from `train`
    #[arg(long)]
    pub model_file: Option<PathBuf>,
    /// Labelled feature CSV
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub posterior: PosteriorArgs,
    /// Shuffles per feature [default: 10]
    #[arg(long)]
    pub repeats: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct SweepArgs {
    /// model.json from `train`
    #[arg(long)]
    pub model_file: Option<PathBuf>,
    /// Feature CSV whose per-column median is the baseline
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Feature to vary
    #[arg(long)]
    pub feature: Option<Feature>,
    /// start:stop:step, inclusive [default: observed range in 20 steps]
    #[arg(long)]
    pub grid: Option<String>,
    #[command(flatten)]
    #[serde(flatten)]
    pub posterior: PosteriorArgs,
}
