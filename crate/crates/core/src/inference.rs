//! Monte Carlo predictive posterior.
//!
//! Each of the `M` components draws one weight set from the variational
//! posterior using its own ChaCha stream keyed by `(seed, m)`, so results do
//! not depend on the order in which components are evaluated.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::features::FeatureVector;
use crate::model::{predict_head, ModelKind, TrainedModel};
use crate::scalar::Scalar;

/// Streams below this value are reserved for training.
const INFERENCE_STREAM_BASE: u64 = 1 << 32;

/// How component Gaussians are combined into one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    /// `μ* = (1/M) Σ μ_m`, `σ*² = (1/M²) Σ σ_m²`.
    #[default]
    Average,
    /// Moment-matched mixture: `σ*² = (1/M) Σ (σ_m² + μ_m²) − μ*²`.
    Mixture,
}

impl std::str::FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "average" => Ok(Self::Average),
            "mixture" => Ok(Self::Mixture),
            _ => Err(Error::InvalidArgument(format!(
                "unknown aggregation '{s}' (expected average or mixture)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPrediction {
    /// kWh
    pub mean: f64,
    /// kWh
    pub std: f64,
    /// Per-component `(μ_m, σ_m)`.
    pub components: Option<Vec<(f64, f64)>>,
}

impl GaussianPrediction {
    /// Re-aggregates the stored components.
    pub fn reaggregate(&self, how: Aggregation) -> Result<Self> {
        match &self.components {
            Some(c) => aggregate(c, how),
            None => Ok(self.clone()),
        }
    }
}

/// Combines component Gaussians. Errors on an empty list.
pub fn aggregate(components: &[(f64, f64)], how: Aggregation) -> Result<GaussianPrediction> {
    if components.is_empty() {
        return Err(Error::InvalidArgument("cannot aggregate zero components".into()));
    }
    let m = components.len() as f64;
    let mean = compensated_sum(components.iter().map(|c| c.0)) / m;
    let mean_var = compensated_sum(components.iter().map(|c| c.1 * c.1)) / m;
    let var = match how {
        Aggregation::Average => mean_var / m,
        Aggregation::Mixture => mean_var + compensated_sum(components.iter().map(|c| (c.0 - mean).powi(2))) / m,
    };
    Ok(GaussianPrediction {
        mean,
        std: var.sqrt(),
        components: Some(components.to_vec()),
    })
}

/// Neumaier summation: the rounding error of each addition is carried along.
fn compensated_sum(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut carry) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        carry += if sum.abs() >= v.abs() { (sum - t) + v } else { (v - t) + sum };
        sum = t;
    }
    sum + carry
}

/// Seeded generator for component `m`.
pub fn component_rng(seed: u64, m: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(INFERENCE_STREAM_BASE + m as u64);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PosteriorConfig {
    pub m_samples: usize,
    pub seed: u64,
    pub aggregation: Aggregation,
}

impl Default for PosteriorConfig {
    fn default() -> Self {
        Self {
            m_samples: 10,
            seed: 0,
            aggregation: Aggregation::Average,
        }
    }
}

/// Posterior prediction for one row.
pub fn predict_posterior<T: Scalar>(
    model: &TrainedModel<T>,
    x: &FeatureVector,
    m_samples: usize,
    seed: u64,
) -> Result<GaussianPrediction> {
    let cfg = PosteriorConfig {
        m_samples,
        seed,
        aggregation: Aggregation::Average,
    };
    Ok(predict_batch(model, std::slice::from_ref(x), &cfg)?.remove(0))
}

/// Posterior predictions for many rows. Component `m` uses the same weight
/// draw for every row, so a row's result does not depend on its batch.
///
/// Networks without uncertain layers have one component regardless of
/// `m_samples`, since every draw would be identical.
pub fn predict_batch<T: Scalar>(
    model: &TrainedModel<T>,
    rows: &[FeatureVector],
    cfg: &PosteriorConfig,
) -> Result<Vec<GaussianPrediction>> {
    if cfg.m_samples < 1 {
        return Err(Error::InvalidArgument("m_samples must be at least 1".into()));
    }
    if model.kind == ModelKind::Det {
        return Err(Error::InvalidArgument(
            "deterministic model has no predictive distribution; use predict_point".into(),
        ));
    }
    let x = model.design_matrix(rows);
    let effective = if model.network.has_variational() {
        cfg.m_samples
    } else {
        1
    };
    let mut per_row: Vec<Vec<(f64, f64)>> = vec![Vec::with_capacity(effective); rows.len()];
    for m in 0..effective {
        let noise = if model.network.has_variational() {
            Some(model.network.sample_noise(&mut component_rng(cfg.seed, m)))
        } else {
            None
        };
        let out = model.network.forward(x.view(), noise.as_ref())?;
        for (i, row) in out.outer_iter().enumerate() {
            let raw = row.to_vec();
            let (mu, sigma) = predict_head(&raw)?;
            per_row[i].push((mu.f64(), sigma.f64()));
        }
    }
    per_row.iter().map(|c| aggregate(c, cfg.aggregation)).collect()
}

/// Point predictions in kWh for any model kind: the posterior mean for
/// probabilistic models, the network output for deterministic ones.
pub fn predict_point<T: Scalar>(
    model: &TrainedModel<T>,
    rows: &[FeatureVector],
    cfg: &PosteriorConfig,
) -> Result<Vec<f64>> {
    if model.kind == ModelKind::Det {
        let x = model.design_matrix(rows);
        let out = model.network.forward(x.view(), None)?;
        Ok(out.column(0).iter().map(|v| v.f64()).collect())
    } else {
        Ok(predict_batch(model, rows, cfg)?.into_iter().map(|p| p.mean).collect())
    }
}

/// Standard-normal quantile `z` with `P(|Z| ≤ z) = level`.
pub fn two_sided_z(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument(format!("confidence level must lie in (0, 1), got {level}")));
    }
    let n = Normal::standard();
    Ok(n.inverse_cdf(0.5 + level / 2.0))
}

/// `μ* ± z(level)·σ*`.
pub fn confidence_interval(pred: &GaussianPrediction, level: f64) -> Result<(f64, f64)> {
    let z = two_sided_z(level)?;
    Ok((pred.mean - z * pred.std, pred.mean + z * pred.std))
}
