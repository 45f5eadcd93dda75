//! Resolved parameters and the work each subcommand does.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ev_energy::eval::{self, EvalReport, FeatureImportance, SweepCurve};
use ev_energy::features::{self, extract_features};
use ev_energy::inference::{self, PosteriorConfig};
use ev_energy::model::{self, write_loss_history};
use ev_energy::nn::PriorSpec;
use ev_energy::synth::{generate_fleet, FleetConfig};
use ev_energy::trip_data::{self, descriptive_stats, FieldStats};
use ev_energy::{Aggregation, Feature, FeatureVector, LengthBounds, ModelKind, NetworkSpec, TrainConfig, TrainedModel};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Points in a sweep grid derived from the observed range.
const DEFAULT_GRID_STEPS: usize = 20;

/// Shared state of one invocation.
pub struct Run {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<String>,
}

impl Run {
    fn input(&mut self, path: &Option<PathBuf>, key: &str) -> Result<PathBuf, CliError> {
        let p = path
            .clone()
            .ok_or_else(|| CliError::usage(format!("missing required parameter `{key}` (flag --{key} or config)")))?;
        self.inputs.push(p.clone());
        Ok(p)
    }

    fn output(&mut self, name: &str) -> PathBuf {
        self.outputs.push(name.to_string());
        self.out_dir.join(name)
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let path = self.output(name);
        let text = serde_json::to_string_pretty(value).map_err(|e| CliError::data(e.to_string()))?;
        std::fs::write(&path, text + "\n").map_err(|e| write_error(&path, e))
    }

    fn create(&mut self, name: &str) -> Result<(PathBuf, BufWriter<File>), CliError> {
        let path = self.output(name);
        let file = File::create(&path).map_err(|e| write_error(&path, e))?;
        Ok((path, BufWriter::new(file)))
    }

    fn posterior(&self, m_samples: usize, aggregation: Aggregation) -> PosteriorConfig {
        PosteriorConfig {
            m_samples,
            seed: self.seed,
            aggregation,
        }
    }
}

fn write_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::data(format!("cannot write {}: {e}", path.display()))
}

fn load_model(path: &Path) -> Result<TrainedModel, CliError> {
    Ok(TrainedModel::load(path)?)
}

fn load_rows(path: &Path) -> Result<Vec<FeatureVector>, CliError> {
    let rows = features::load_features(path)?;
    if rows.is_empty() {
        return Err(CliError::data(format!("{} has no rows", path.display())));
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// ingest
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct IngestParams {
    pub traces: Option<PathBuf>,
    pub count: usize,
    pub min_len: usize,
    pub max_len: Option<usize>,
    pub filter_kwh: f64,
    pub split: f64,
}

impl Default for IngestParams {
    fn default() -> Self {
        Self {
            traces: None,
            count: 5000,
            min_len: 60,
            max_len: None,
            filter_kwh: 0.3,
            split: 0.9,
        }
    }
}

#[derive(Debug, Serialize)]
struct IngestStats {
    traces: usize,
    samples: usize,
    drawn: usize,
    kept: usize,
    train: usize,
    test: usize,
    fields: Vec<FieldStats>,
}

pub fn ingest(run: &mut Run, p: &IngestParams) -> Result<(), CliError> {
    let path = run.input(&p.traces, "traces")?;
    let traces = trip_data::load_trips(&path)?;
    let bounds = LengthBounds {
        min: p.min_len,
        max: p.max_len,
    };
    let micros = trip_data::generate_micro_trips(&traces, p.count, bounds, run.seed)?;
    let kept = trip_data::filter_micro_trips(micros, p.filter_kwh)?;
    let rows = kept.iter().map(extract_features).collect::<ev_energy::Result<Vec<_>>>()?;
    log::info!("{} of {} micro-trips pass the {} kWh filter", rows.len(), p.count, p.filter_kwh);
    let split = trip_data::split_dataset(rows.clone(), p.split, run.seed)?;
    let stats = IngestStats {
        traces: traces.len(),
        samples: traces.iter().map(|t| t.len()).sum(),
        drawn: p.count,
        kept: rows.len(),
        train: split.train.len(),
        test: split.test.len(),
        fields: descriptive_stats(&rows)?,
    };
    for (name, set) in [("features.csv", &rows), ("train.csv", &split.train), ("test.csv", &split.test)] {
        let (path, mut w) = run.create(name)?;
        features::write_features(&mut w, set)?;
        w.flush().map_err(|e| write_error(&path, e))?;
    }
    run.write_json("stats.json", &stats)?;
    println!(
        "micro-trips: {} drawn, {} kept, {} train, {} test",
        stats.drawn, stats.kept, stats.train, stats.test
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct SynthParams {
    pub trips: usize,
    pub duration: usize,
    pub power_noise_w: f64,
    pub aux_temp_coeff: f64,
    pub grade_max: f64,
    pub temp_min: f64,
    pub temp_max: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        let fleet = FleetConfig::default();
        Self {
            trips: fleet.trips,
            duration: fleet.duration,
            power_noise_w: fleet.noise_std,
            aux_temp_coeff: fleet.law.aux_temp_coeff,
            grade_max: fleet.grade_amplitude.1,
            temp_min: fleet.temperature.0,
            temp_max: fleet.temperature.1,
        }
    }
}

pub fn synth(run: &mut Run, p: &SynthParams) -> Result<(), CliError> {
    if !(p.temp_min <= p.temp_max) || !(p.grade_max >= 0.0) {
        return Err(CliError::usage("need temp-min <= temp-max and grade-max >= 0"));
    }
    let mut fleet = FleetConfig {
        trips: p.trips,
        duration: p.duration,
        noise_std: p.power_noise_w,
        grade_amplitude: (0.0, p.grade_max),
        temperature: (p.temp_min, p.temp_max),
        ..FleetConfig::default()
    };
    fleet.law.aux_temp_coeff = p.aux_temp_coeff;
    fleet.law.validate()?;
    let traces = generate_fleet(&fleet, run.seed)?;
    let (path, mut w) = run.create("traces.csv")?;
    trip_data::write_trips(&mut w, &traces)?;
    w.flush().map_err(|e| write_error(&path, e))?;
    println!("{} traces of {} s", traces.len(), p.duration);
    Ok(())
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct TrainParams {
    pub train: Option<PathBuf>,
    pub model: ModelKind,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: Option<usize>,
    pub elbo_samples: usize,
    pub kl_weight: f64,
    pub grad_clip: Option<f64>,
    pub no_grad_clip: bool,
    pub prior_mean: f64,
    pub prior_std: f64,
    pub init_sigma: f64,
    pub no_driver_behaviour: bool,
}

impl Default for TrainParams {
    fn default() -> Self {
        let cfg = TrainConfig::default();
        let spec = NetworkSpec::reference(ModelKind::ProbWu, Feature::ALL.to_vec());
        Self {
            train: None,
            model: ModelKind::ProbWu,
            lr: cfg.learning_rate,
            epochs: cfg.epochs,
            batch_size: cfg.batch_size,
            elbo_samples: cfg.elbo_samples,
            kl_weight: cfg.kl_weight,
            grad_clip: cfg.grad_clip,
            no_grad_clip: false,
            prior_mean: cfg.prior.mean,
            prior_std: cfg.prior.std,
            init_sigma: spec.init_sigma,
            no_driver_behaviour: false,
        }
    }
}

pub fn train(run: &mut Run, p: &TrainParams) -> Result<(), CliError> {
    let path = run.input(&p.train, "train")?;
    let rows = load_rows(&path)?;
    let mut spec = NetworkSpec::reference(p.model, Feature::selection(!p.no_driver_behaviour));
    spec.init_sigma = p.init_sigma;
    let config = TrainConfig {
        learning_rate: p.lr,
        epochs: p.epochs,
        elbo_samples: p.elbo_samples,
        kl_weight: p.kl_weight,
        batch_size: p.batch_size,
        seed: run.seed,
        prior: PriorSpec::new(p.prior_mean, p.prior_std)?,
        grad_clip: if p.no_grad_clip { None } else { p.grad_clip },
    };
    let model: TrainedModel = model::fit(&rows, p.model, &spec, &config)?;
    let out = run.output("model.json");
    model.save(&out)?;
    let (hist, mut w) = run.create("loss_history.csv")?;
    write_loss_history(&mut w, &model.metadata.loss_history)?;
    w.flush().map_err(|e| write_error(&hist, e))?;
    println!(
        "{} on {} rows, {} epochs, final loss {}",
        p.model,
        rows.len(),
        p.epochs,
        model.metadata.final_loss.map_or("n/a".to_string(), |l| l.to_string())
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// predict
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct PredictParams {
    pub model_file: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub m_samples: usize,
    pub aggregation: Aggregation,
    pub level: f64,
}

impl Default for PredictParams {
    fn default() -> Self {
        Self {
            model_file: None,
            features: None,
            m_samples: PosteriorConfig::default().m_samples,
            aggregation: Aggregation::default(),
            level: 0.95,
        }
    }
}

pub fn predict(run: &mut Run, p: &PredictParams) -> Result<(), CliError> {
    let model = load_model(&run.input(&p.model_file, "model-file")?)?;
    let rows = load_rows(&run.input(&p.features, "features")?)?;
    let z = inference::two_sided_z(p.level)?;
    let posterior = run.posterior(p.m_samples, p.aggregation);
    let preds: Vec<(f64, f64)> = if model.kind == ModelKind::Det {
        if p.m_samples < 1 {
            return Err(CliError::usage("m-samples must be at least 1"));
        }
        inference::predict_point(&model, &rows, &posterior)?.into_iter().map(|m| (m, 0.0)).collect()
    } else {
        inference::predict_batch(&model, &rows, &posterior)?
            .into_iter()
            .map(|g| (g.mean, g.std))
            .collect()
    };
    let (path, mut w) = run.create("predictions.csv")?;
    let io = |e| write_error(&path, e);
    writeln!(w, "mean_kwh,std_kwh,ci_low_kwh,ci_high_kwh,m_samples,seed").map_err(io)?;
    for (mean, std) in &preds {
        writeln!(w, "{mean},{std},{},{},{},{}", mean - z * std, mean + z * std, p.m_samples, run.seed).map_err(io)?;
    }
    w.flush().map_err(io)?;
    println!("{} predictions", preds.len());
    Ok(())
}

// ---------------------------------------------------------------------------
// evaluate, importance, sweep
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct EvaluateParams {
    pub model_file: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub m_samples: usize,
    pub aggregation: Aggregation,
    pub importance: bool,
    pub repeats: usize,
    pub sweep: Option<Feature>,
    pub grid: Option<String>,
}

impl Default for EvaluateParams {
    fn default() -> Self {
        Self {
            model_file: None,
            test: None,
            m_samples: PosteriorConfig::default().m_samples,
            aggregation: Aggregation::default(),
            importance: false,
            repeats: 10,
            sweep: None,
            grid: None,
        }
    }
}

pub fn evaluate(run: &mut Run, p: &EvaluateParams) -> Result<(), CliError> {
    let model = load_model(&run.input(&p.model_file, "model-file")?)?;
    let rows = load_rows(&run.input(&p.test, "test")?)?;
    let posterior = run.posterior(p.m_samples, p.aggregation);
    let mut report: EvalReport = eval::evaluate(&model, &rows, &posterior)?;
    if p.importance {
        report.importances = Some(eval::permutation_importance(&model, &rows, p.repeats, run.seed, &posterior)?);
    }
    if let Some(feature) = p.sweep {
        let curve = sweep_curve(&model, &rows, feature, p.grid.as_deref(), &posterior)?;
        let out = run.output("sweep.csv");
        eval::save_sweeps(&out, std::slice::from_ref(&curve))?;
        report.sweeps.push(curve);
    }
    run.write_json("report.json", &report)?;
    let fmt = |c: Option<f64>| c.map_or("n/a".to_string(), |v| format!("{v:.4}"));
    println!(
        "{}: {} rows, MAPE {:.3}%, RMSE {:.4} kWh, 95% coverage {} (mixture {})",
        report.model,
        report.rows,
        report.mape,
        report.rmse,
        fmt(report.coverage_95),
        fmt(report.coverage_95_mixture)
    );
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct ImportanceParams {
    pub model_file: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub m_samples: usize,
    pub aggregation: Aggregation,
    pub repeats: usize,
}

impl Default for ImportanceParams {
    fn default() -> Self {
        Self {
            model_file: None,
            test: None,
            m_samples: PosteriorConfig::default().m_samples,
            aggregation: Aggregation::default(),
            repeats: 10,
        }
    }
}

pub fn importance(run: &mut Run, p: &ImportanceParams) -> Result<(), CliError> {
    let model = load_model(&run.input(&p.model_file, "model-file")?)?;
    let rows = load_rows(&run.input(&p.test, "test")?)?;
    let posterior = run.posterior(p.m_samples, p.aggregation);
    let table: Vec<FeatureImportance> = eval::permutation_importance(&model, &rows, p.repeats, run.seed, &posterior)?;
    run.write_json("importance.json", &table)?;
    for f in &table {
        println!("{:<10} {:>8.3} pp {:>6.2}%", f.feature.name(), f.raw, f.share);
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct SweepParams {
    pub model_file: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub feature: Option<Feature>,
    pub grid: Option<String>,
    pub m_samples: usize,
    pub aggregation: Aggregation,
}

impl Default for SweepParams {
    fn default() -> Self {
        Self {
            model_file: None,
            features: None,
            feature: None,
            grid: None,
            m_samples: PosteriorConfig::default().m_samples,
            aggregation: Aggregation::default(),
        }
    }
}

pub fn sweep(run: &mut Run, p: &SweepParams) -> Result<(), CliError> {
    let feature = p
        .feature
        .ok_or_else(|| CliError::usage("missing required parameter `feature` (flag --feature or config)"))?;
    let model = load_model(&run.input(&p.model_file, "model-file")?)?;
    let rows = load_rows(&run.input(&p.features, "features")?)?;
    let posterior = run.posterior(p.m_samples, p.aggregation);
    let curve = sweep_curve(&model, &rows, feature, p.grid.as_deref(), &posterior)?;
    let out = run.output("sweep.csv");
    eval::save_sweeps(&out, std::slice::from_ref(&curve))?;
    println!("{} points over {}", curve.points.len(), feature);
    Ok(())
}

/// Sweep around the per-column median of `rows`. Without a grid the
/// observed range of `feature` is split into equal steps.
fn sweep_curve(
    model: &TrainedModel,
    rows: &[FeatureVector],
    feature: Feature,
    grid: Option<&str>,
    posterior: &PosteriorConfig,
) -> Result<SweepCurve, CliError> {
    let grid = match grid {
        Some(g) => eval::parse_grid(g)?,
        None => default_grid(rows, feature),
    };
    if grid.is_empty() {
        return Err(CliError::usage("sweep grid is empty"));
    }
    let baseline = eval::median_baseline(rows)?;
    Ok(eval::sensitivity_sweep(model, feature, &grid, &baseline, posterior)?)
}

fn default_grid(rows: &[FeatureVector], feature: Feature) -> Vec<f64> {
    let (lo, hi) = rows
        .iter()
        .map(|r| feature.get(r))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if hi <= lo {
        return vec![lo];
    }
    (0..=DEFAULT_GRID_STEPS)
        .map(|i| lo + (hi - lo) * i as f64 / DEFAULT_GRID_STEPS as f64)
        .collect()
}
