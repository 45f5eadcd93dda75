//! Network architectures, the NLL / ELBO objectives, and the training loop.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{fit_scaler, Feature, FeatureVector, ScalingParams};
use crate::nn::{
    Activation, Adam, AdamConfig, DenseLayer, Layer, LayerParams, Network, NetworkGrads, NetworkNoise,
    NodeId, PriorSpec, Tape, VariationalLayer,
};
use crate::nn::tape::nll_term;
use crate::scalar::{softplus, Scalar};
use crate::trip_data::DatasetSplit;

/// Lower bound added to every predicted standard deviation, kWh.
pub const SIGMA_FLOOR: f64 = 1e-6;

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// The three reference models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    /// Gaussian head, last two layers carry weight uncertainty.
    ProbWu,
    /// Gaussian head, point weights.
    Prob,
    /// Single output, point weights.
    Det,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::ProbWu, ModelKind::Prob, ModelKind::Det];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::ProbWu => "prob-wu",
            ModelKind::Prob => "prob",
            ModelKind::Det => "det",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "prob-wu" => Ok(ModelKind::ProbWu),
            "prob" => Ok(ModelKind::Prob),
            "det" => Ok(ModelKind::Det),
            other => Err(Error::InvalidArgument(format!(
                "unknown model `{other}` (expected prob-wu, prob or det)"
            ))),
        }
    }
}

/// Which training objective a network spec implies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    Elbo,
    Nll,
    Mse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    /// Input columns, in order. Their count is the input dimension.
    pub features: Vec<Feature>,
    pub hidden: Vec<usize>,
    /// 2 for a Gaussian head, 1 for a point estimate.
    pub output_units: usize,
    /// Indices (0 = first hidden layer) of layers with weight uncertainty.
    pub variational_layers: Vec<usize>,
    /// Initial posterior standard deviation of uncertain weights.
    pub init_sigma: f64,
    #[serde(default = "default_hidden_activation")]
    pub hidden_activation: Activation,
}

fn default_hidden_activation() -> Activation {
    Activation::Relu
}

impl NetworkSpec {
    pub const HIDDEN: [usize; 4] = [32, 64, 32, 8];

    /// The reference architecture: hidden layers 32-64-32-8 with ReLU.
    pub fn reference(kind: ModelKind, features: Vec<Feature>) -> Self {
        let hidden = Self::HIDDEN.to_vec();
        let n_layers = hidden.len() + 1;
        let (output_units, variational_layers) = match kind {
            ModelKind::ProbWu => (2, vec![n_layers - 2, n_layers - 1]),
            ModelKind::Prob => (2, vec![]),
            ModelKind::Det => (1, vec![]),
        };
        Self {
            features,
            hidden,
            output_units,
            variational_layers,
            init_sigma: 0.05,
            hidden_activation: Activation::Relu,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.features.len()
    }

    pub fn num_layers(&self) -> usize {
        self.hidden.len() + 1
    }

    pub fn objective(&self) -> Objective {
        match (self.output_units, self.variational_layers.is_empty()) {
            (1, _) => Objective::Mse,
            (_, true) => Objective::Nll,
            (_, false) => Objective::Elbo,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.features.is_empty() {
            return Err(Error::InvalidArgument("network needs at least one input feature".into()));
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::InvalidArgument("hidden layer with zero units".into()));
        }
        if !matches!(self.output_units, 1 | 2) {
            return Err(Error::InvalidArgument(format!(
                "output units must be 1 or 2, got {}",
                self.output_units
            )));
        }
        if let Some(&bad) = self.variational_layers.iter().find(|&&i| i >= self.num_layers()) {
            return Err(Error::InvalidArgument(format!(
                "variational layer index {bad} out of range for {} layers",
                self.num_layers()
            )));
        }
        if !(self.init_sigma > 0.0) {
            return Err(Error::InvalidArgument("initial sigma must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Weight draws per step for the ELBO estimate.
    pub elbo_samples: usize,
    /// Multiplier on the full-data KL term; split evenly across mini-batches.
    pub kl_weight: f64,
    /// `None` trains full-batch.
    pub batch_size: Option<usize>,
    pub seed: u64,
    pub prior: PriorSpec,
    /// Caps each step's gradient norm at this multiple of a running
    /// average of recent (capped) norms. `None` disables the cap.
    #[serde(default)]
    pub grad_clip: Option<f64>,
}

/// Decay of the running gradient-norm average used by `grad_clip`.
const CLIP_NORM_DECAY: f64 = 0.99;

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            epochs: 400,
            elbo_samples: 1,
            kl_weight: 1.0,
            batch_size: None,
            seed: 0,
            prior: PriorSpec::default(),
            grad_clip: Some(10.0),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument("learning rate must be positive".into()));
        }
        if self.elbo_samples == 0 {
            return Err(Error::InvalidArgument("ELBO sample count must be at least 1".into()));
        }
        if !(self.kl_weight >= 0.0) {
            return Err(Error::InvalidArgument("KL weight must be non-negative".into()));
        }
        if self.batch_size == Some(0) {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        if let Some(k) = self.grad_clip {
            if !(k >= 1.0) {
                return Err(Error::InvalidArgument(format!("gradient clip factor must be at least 1, got {k}")));
            }
        }
        PriorSpec::new(self.prior.mean, self.prior.std)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub seed: u64,
    pub train_rows: usize,
    pub final_loss: Option<f64>,
    /// Summed objective per epoch.
    pub loss_history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct TrainedModel<T: Scalar> {
    pub version: u32,
    pub kind: ModelKind,
    pub spec: NetworkSpec,
    pub network: Network<T>,
    pub scaler: ScalingParams,
    pub prior: PriorSpec,
    pub config: TrainConfig,
    pub metadata: TrainingMetadata,
}

impl<T: Scalar> TrainedModel<T> {
    pub fn features(&self) -> &[Feature] {
        &self.spec.features
    }

    pub fn is_probabilistic(&self) -> bool {
        self.spec.output_units == 2
    }

    /// Scaled design matrix for `rows`.
    pub fn design_matrix(&self, rows: &[FeatureVector]) -> Array2<T> {
        design_matrix(&self.scaler, rows)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let model: Self = serde_json::from_str(s)?;
        model.check()?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer_pretty(&mut w, self)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let model: Self = serde_json::from_reader(BufReader::new(file))?;
        model.check()?;
        Ok(model)
    }

    fn check(&self) -> Result<()> {
        if self.version != MODEL_FORMAT_VERSION {
            return Err(Error::UnsupportedVersion(self.version));
        }
        self.spec.validate()?;
        if self.network.input_dim() != self.spec.input_dim()
            || self.network.output_dim() != self.spec.output_units
            || self.scaler.columns != self.spec.features
        {
            return Err(Error::InvalidArgument(
                "model file is inconsistent: network, spec and scaler disagree".into(),
            ));
        }
        Ok(())
    }
}

pub(crate) fn design_matrix<T: Scalar>(scaler: &ScalingParams, rows: &[FeatureVector]) -> Array2<T> {
    let k = scaler.dim();
    let mut x = Array2::zeros((rows.len(), k));
    for (i, r) in rows.iter().enumerate() {
        for (j, v) in scaler.apply(r).into_iter().enumerate() {
            x[[i, j]] = T::of(v);
        }
    }
    x
}

/// Initializes parameters for `spec`: He-uniform means, zero biases,
/// `sigma = spec.init_sigma` on uncertain layers. ReLU on hidden layers,
/// linear output.
pub fn build_network<T: Scalar>(spec: &NetworkSpec, seed: u64) -> Result<Network<T>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dims = vec![spec.input_dim()];
    dims.extend(&spec.hidden);
    dims.push(spec.output_units);
    let n = dims.len() - 1;
    let layers = (0..n)
        .map(|i| {
            let (inputs, outputs) = (dims[i], dims[i + 1]);
            let activation = if i + 1 == n {
                Activation::Linear
            } else {
                spec.hidden_activation
            };
            let params = if spec.variational_layers.contains(&i) {
                LayerParams::Variational(VariationalLayer::he_uniform(inputs, outputs, spec.init_sigma, &mut rng))
            } else {
                LayerParams::Dense(DenseLayer::he_uniform(inputs, outputs, &mut rng))
            };
            Layer { params, activation }
        })
        .collect();
    Network::new(layers)
}

/// Splits a raw two-unit output into `(mu, sigma)` with
/// `sigma = softplus(out[1]) + 1e-6`.
pub fn predict_head<T: Scalar>(raw: &[T]) -> Result<(T, T)> {
    if raw.len() != 2 {
        return Err(Error::dims("2 output units", raw.len()));
    }
    Ok((raw[0], softplus(raw[1]) + T::of(SIGMA_FLOOR)))
}

/// `Σ ln σ_i + (y_i - μ_i)² / (2σ_i²)`; the additive constant is dropped.
pub fn nll_loss<T: Scalar>(mu: &[T], sigma: &[T], y: &[T]) -> Result<T> {
    if mu.len() != sigma.len() || mu.len() != y.len() {
        return Err(Error::dims(
            format!("{} predictions", y.len()),
            format!("{} means / {} sigmas", mu.len(), sigma.len()),
        ));
    }
    let mut total = T::zero();
    for ((&m, &s), &t) in mu.iter().zip(sigma).zip(y) {
        if !(s > T::zero()) {
            return Err(Error::InvalidArgument(format!("sigma must be positive, got {s}")));
        }
        total += nll_term(m, s, t);
    }
    Ok(total)
}

/// An objective value with its parameter gradients.
#[derive(Debug, Clone)]
pub struct LossEval<T> {
    pub loss: T,
    /// Data term (NLL or MSE), averaged over weight draws.
    pub data: T,
    /// `log q - log p` at the draws, averaged, before weighting.
    pub kl: T,
    pub grads: NetworkGrads<T>,
}

fn record_head<T: Scalar>(tape: &mut Tape<T>, out: NodeId) -> Result<(NodeId, NodeId)> {
    let mu = tape.column(out, 0)?;
    let raw = tape.column(out, 1)?;
    let sp = tape.softplus(raw);
    Ok((mu, tape.add_scalar(sp, T::of(SIGMA_FLOOR))))
}

/// Evaluates `objective` averaged over the supplied weight draws:
/// `(1/N) Σ_i [data(W_i) + kl_weight · (log q(W_i) - log p(W_i))]`.
/// Deterministic networks take a single empty draw.
pub fn objective_with_noise<T: Scalar>(
    network: &Network<T>,
    x: &Array2<T>,
    y: &Array2<T>,
    objective: Objective,
    prior: PriorSpec,
    kl_weight: T,
    noises: &[NetworkNoise<T>],
) -> Result<LossEval<T>> {
    if noises.is_empty() {
        return Err(Error::InvalidArgument("at least one weight draw is required".into()));
    }
    if y.dim() != (x.nrows(), 1) {
        return Err(Error::dims(format!("targets ({}, 1)", x.nrows()), format!("{:?}", y.dim())));
    }
    let lens = network.param_lens();
    let mut grads = NetworkGrads::zeros_like(&lens);
    let inv_n = T::one() / T::from_usize(noises.len()).unwrap();
    let (mut loss, mut data, mut kl) = (T::zero(), T::zero(), T::zero());
    for noise in noises {
        let mut tape = Tape::new();
        let rec = network.record(&mut tape, x.clone(), noise)?;
        let data_node = match objective {
            Objective::Mse => tape.mean_squared_error(rec.output, y.clone())?,
            Objective::Nll | Objective::Elbo => {
                let (mu, sigma) = record_head(&mut tape, rec.output)?;
                tape.gaussian_nll(mu, sigma, y.clone())?
            }
        };
        let mut total = data_node;
        let mut kl_value = T::zero();
        if objective == Objective::Elbo {
            if let Some(kl_node) = rec.log_q_minus_log_p(&mut tape, prior)? {
                kl_value = tape.scalar(kl_node);
                let weighted = tape.scale(kl_node, kl_weight);
                total = tape.add(data_node, weighted)?;
            }
        }
        let g = tape.backward_scalar(total)?;
        grads.add_scaled(&rec.collect_grads(&g, &lens), inv_n);
        loss += tape.scalar(total) * inv_n;
        data += tape.scalar(data_node) * inv_n;
        kl += kl_value * inv_n;
    }
    Ok(LossEval { loss, data, kl, grads })
}

/// Monte Carlo ELBO with `n_samples` reparameterized weight draws.
pub fn elbo_loss<T: Scalar, R: rand::Rng + ?Sized>(
    network: &Network<T>,
    x: &Array2<T>,
    y: &Array2<T>,
    prior: PriorSpec,
    n_samples: usize,
    kl_weight: T,
    rng: &mut R,
) -> Result<LossEval<T>> {
    if !network.has_variational() {
        return Err(Error::InvalidArgument(
            "ELBO requires at least one variational layer".into(),
        ));
    }
    if n_samples == 0 {
        return Err(Error::InvalidArgument("ELBO sample count must be at least 1".into()));
    }
    let noises: Vec<_> = (0..n_samples).map(|_| network.sample_noise(rng)).collect();
    objective_with_noise(network, x, y, Objective::Elbo, prior, kl_weight, &noises)
}

/// Trains on `dataset.train`; the test half is left untouched.
pub fn train<T: Scalar>(
    dataset: &DatasetSplit<FeatureVector>,
    kind: ModelKind,
    spec: &NetworkSpec,
    config: &TrainConfig,
) -> Result<TrainedModel<T>> {
    fit(&dataset.train, kind, spec, config)
}

/// Fits the scaler on `rows`, then runs `config.epochs` passes of Adam.
pub fn fit<T: Scalar>(
    rows: &[FeatureVector],
    kind: ModelKind,
    spec: &NetworkSpec,
    config: &TrainConfig,
) -> Result<TrainedModel<T>> {
    spec.validate()?;
    config.validate()?;
    if rows.is_empty() {
        return Err(Error::InsufficientData("training set is empty".into()));
    }
    let scaler = fit_scaler(rows, &spec.features)?;
    let x: Array2<T> = design_matrix(&scaler, rows);
    let labels = rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            r.label_energy
                .map(T::of)
                .ok_or_else(|| Error::InsufficientData(format!("training row {i} has no energy label")))
        })
        .collect::<Result<Vec<T>>>()?;
    let y = Array2::from_shape_vec((rows.len(), 1), labels).expect("n × 1");

    let mut network: Network<T> = build_network(spec, config.seed)?;
    let objective = spec.objective();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let adam_cfg = AdamConfig::with_learning_rate(config.learning_rate);
    let mut adam = Adam::new(adam_cfg, &network.param_lens());

    let n = rows.len();
    let batch = config.batch_size.unwrap_or(n).min(n);
    let n_batches = n.div_ceil(batch);
    let kl_weight = T::of(config.kl_weight / n_batches as f64);
    let draws = if objective == Objective::Elbo {
        config.elbo_samples
    } else {
        1
    };
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut norm_avg: Option<f64> = None;

    for epoch in 0..config.epochs {
        if n_batches > 1 {
            order.shuffle(&mut rng);
        }
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(batch) {
            let (xb, yb) = if n_batches > 1 {
                (x.select(Axis(0), chunk), y.select(Axis(0), chunk))
            } else {
                (x.clone(), y.clone())
            };
            let noises: Vec<_> = (0..draws).map(|_| network.sample_noise(&mut rng)).collect();
            let mut eval = objective_with_noise(&network, &xb, &yb, objective, config.prior, kl_weight, &noises)?;
            let loss = eval.loss.f64();
            if !loss.is_finite() || eval.grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence { epoch, loss });
            }
            if let Some(k) = config.grad_clip {
                let norm = eval.grads.iter().map(|g| g.f64() * g.f64()).sum::<f64>().sqrt();
                let used = match norm_avg {
                    Some(avg) if norm > k * avg => {
                        let scale = T::of(k * avg / norm);
                        eval.grads.tensors.iter_mut().flatten().for_each(|g| *g *= scale);
                        k * avg
                    }
                    _ => norm,
                };
                norm_avg = Some(norm_avg.map_or(used, |a| CLIP_NORM_DECAY * a + (1.0 - CLIP_NORM_DECAY) * used));
            }
            adam.step(&mut network.params_mut(), &eval.grads.tensors)?;
            epoch_loss += loss;
        }
        log::debug!("epoch {epoch}: loss {epoch_loss}");
        history.push(epoch_loss);
    }

    Ok(TrainedModel {
        version: MODEL_FORMAT_VERSION,
        kind,
        spec: spec.clone(),
        network,
        scaler,
        prior: config.prior,
        config: config.clone(),
        metadata: TrainingMetadata {
            seed: config.seed,
            train_rows: n,
            final_loss: history.last().copied(),
            loss_history: history,
        },
    })
}

/// Writes `epoch,loss` rows.
pub fn write_loss_history<W: Write>(writer: W, history: &[f64]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["epoch", "loss"])?;
    for (i, l) in history.iter().enumerate() {
        wtr.write_record([i.to_string(), l.to_string()])?;
    }
    wtr.flush().map_err(|e| Error::io("<loss history writer>", e))
}
