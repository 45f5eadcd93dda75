//! Accuracy metrics, interval coverage, permutation importance and
//! one-factor sensitivity sweeps.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{Feature, FeatureVector};
use crate::inference::{
    confidence_interval, predict_batch, predict_point, Aggregation, GaussianPrediction, PosteriorConfig,
};
use crate::model::{ModelKind, TrainedModel};
use crate::scalar::Scalar;

fn check_lengths(actual: &[f64], predicted: &[f64]) -> Result<()> {
    if actual.len() != predicted.len() {
        return Err(Error::dims(format!("{} predictions", actual.len()), predicted.len()));
    }
    if actual.is_empty() {
        return Err(Error::InsufficientData("no rows to score".into()));
    }
    Ok(())
}

/// Mean absolute percentage error, in percent.
pub fn mape(actual: &[f64], predicted: &[f64]) -> Result<f64> {
    check_lengths(actual, predicted)?;
    let mut total = 0.0;
    for (i, (y, p)) in actual.iter().zip(predicted).enumerate() {
        if *y == 0.0 {
            return Err(Error::InvalidArgument(format!("actual value at row {i} is zero")));
        }
        total += ((y - p) / y).abs();
    }
    Ok(100.0 * total / actual.len() as f64)
}

/// Root mean squared error, in the units of the inputs.
pub fn rmse(actual: &[f64], predicted: &[f64]) -> Result<f64> {
    check_lengths(actual, predicted)?;
    let ss: f64 = actual.iter().zip(predicted).map(|(y, p)| (y - p).powi(2)).sum();
    Ok((ss / actual.len() as f64).sqrt())
}

/// Fraction of `actual` inside the `level` interval of each prediction.
pub fn coverage(predictions: &[GaussianPrediction], actual: &[f64], level: f64) -> Result<f64> {
    if predictions.len() != actual.len() {
        return Err(Error::dims(format!("{} predictions", actual.len()), predictions.len()));
    }
    if actual.is_empty() {
        return Err(Error::InsufficientData("no rows to score".into()));
    }
    let mut hits = 0usize;
    for (p, y) in predictions.iter().zip(actual) {
        let (lo, hi) = confidence_interval(p, level)?;
        if lo <= *y && *y <= hi {
            hits += 1;
        }
    }
    Ok(hits as f64 / actual.len() as f64)
}

pub(crate) fn labels(rows: &[FeatureVector]) -> Result<Vec<f64>> {
    rows.iter()
        .enumerate()
        .map(|(i, r)| {
            r.label_energy
                .ok_or_else(|| Error::InsufficientData(format!("row {i} has no energy label")))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub feature: Feature,
    /// Mean MAPE increase after shuffling, percentage points.
    pub raw: f64,
    /// `max(raw, 0)` as a percentage of the summed positive increases.
    pub share: f64,
}

/// Shuffles each model input column `repeats` times and reports the mean
/// MAPE increase. Predictions reuse `posterior.seed`, so every evaluation
/// sees the same weight draws.
pub fn permutation_importance<T: Scalar>(
    model: &TrainedModel<T>,
    test: &[FeatureVector],
    repeats: usize,
    seed: u64,
    posterior: &PosteriorConfig,
) -> Result<Vec<FeatureImportance>> {
    if test.len() < 2 {
        return Err(Error::InsufficientData("permutation importance needs at least 2 rows".into()));
    }
    if repeats == 0 {
        return Err(Error::InvalidArgument("repeats must be at least 1".into()));
    }
    let y = labels(test)?;
    let base = mape(&y, &predict_point(model, test, posterior)?)?;
    let mut out = Vec::with_capacity(model.features().len());
    for (k, &feature) in model.features().iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k as u64);
        let column: Vec<f64> = test.iter().map(|r| feature.get(r)).collect();
        let mut increase = 0.0;
        for _ in 0..repeats {
            let mut shuffled = column.clone();
            shuffled.shuffle(&mut rng);
            let mut rows = test.to_vec();
            for (r, v) in rows.iter_mut().zip(&shuffled) {
                feature.set(r, *v);
            }
            increase += mape(&y, &predict_point(model, &rows, posterior)?)? - base;
        }
        out.push(FeatureImportance {
            feature,
            raw: increase / repeats as f64,
            share: 0.0,
        });
    }
    let positive: f64 = out.iter().map(|f| f.raw.max(0.0)).sum();
    if positive > 0.0 {
        for f in &mut out {
            f.share = 100.0 * f.raw.max(0.0) / positive;
        }
    }
    Ok(out)
}

/// Per-feature median over `rows`; the label is dropped.
pub fn median_baseline(rows: &[FeatureVector]) -> Result<FeatureVector> {
    if rows.is_empty() {
        return Err(Error::InsufficientData("median of an empty set".into()));
    }
    let mut out = FeatureVector::default();
    for f in Feature::ALL {
        let mut v: Vec<f64> = rows.iter().map(|r| f.get(r)).collect();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let m = if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        };
        f.set(&mut out, m);
    }
    out.label_energy = None;
    Ok(out)
}

/// Parses `start:stop:step` into an inclusive grid.
pub fn parse_grid(s: &str) -> Result<Vec<f64>> {
    let bad = || Error::InvalidArgument(format!("grid must look like start:stop:step, got `{s}`"));
    let parts: Vec<f64> = s
        .split(':')
        .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
        .collect::<Result<_>>()?;
    let [start, stop, step] = parts[..] else {
        return Err(bad());
    };
    if !(step > 0.0) || !start.is_finite() || !stop.is_finite() {
        return Err(bad());
    }
    if stop < start {
        return Ok(Vec::new());
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| start + i as f64 * step).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    /// kWh/km
    pub ecr_mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCurve {
    pub feature: Feature,
    pub points: Vec<SweepPoint>,
}

/// Varies `feature` over `grid` with the other features held at
/// `baseline`, reporting energy per km and its 95% interval. Deterministic
/// models report a zero-width interval.
pub fn sensitivity_sweep<T: Scalar>(
    model: &TrainedModel<T>,
    feature: Feature,
    grid: &[f64],
    baseline: &FeatureVector,
    posterior: &PosteriorConfig,
) -> Result<SweepCurve> {
    if grid.is_empty() {
        return Ok(SweepCurve {
            feature,
            points: Vec::new(),
        });
    }
    let rows: Vec<FeatureVector> = grid
        .iter()
        .map(|&v| {
            let mut r = baseline.clone();
            feature.set(&mut r, v);
            r
        })
        .collect();
    let bounds: Vec<(f64, f64, f64)> = if model.kind == ModelKind::Det {
        predict_point(model, &rows, posterior)?.into_iter().map(|m| (m, m, m)).collect()
    } else {
        predict_batch(model, &rows, posterior)?
            .iter()
            .map(|p| confidence_interval(p, 0.95).map(|(lo, hi)| (p.mean, lo, hi)))
            .collect::<Result<_>>()?
    };
    let points = rows
        .iter()
        .zip(grid)
        .zip(bounds)
        .map(|((r, &value), (mean, lo, hi))| {
            let km = r.distance / 1000.0;
            if !(km > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "sweep point {value} has non-positive distance {}",
                    r.distance
                )));
            }
            Ok(SweepPoint {
                value,
                ecr_mean: mean / km,
                ci_low: lo / km,
                ci_high: hi / km,
            })
        })
        .collect::<Result<_>>()?;
    Ok(SweepCurve { feature, points })
}

pub fn write_sweeps<W: Write>(writer: W, curves: &[SweepCurve]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["feature", "value", "ecr_mean", "ci_low", "ci_high"])?;
    for c in curves {
        for p in &c.points {
            wtr.write_record([
                c.feature.name().to_string(),
                p.value.to_string(),
                p.ecr_mean.to_string(),
                p.ci_low.to_string(),
                p.ci_high.to_string(),
            ])?;
        }
    }
    wtr.flush().map_err(|e| Error::io("<sweep writer>", e))
}

pub fn save_sweeps(path: impl AsRef<Path>, curves: &[SweepCurve]) -> Result<()> {
    let path = path.as_ref();
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_sweeps(f, curves)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: ModelKind,
    pub rows: usize,
    /// percent
    pub mape: f64,
    /// kWh
    pub rmse: f64,
    /// Absent for deterministic models.
    pub coverage_95: Option<f64>,
    /// Coverage with moment-matched mixture intervals.
    pub coverage_95_mixture: Option<f64>,
    pub m_samples: usize,
    pub seed: u64,
    pub aggregation: Aggregation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub importances: Option<Vec<FeatureImportance>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sweeps: Vec<SweepCurve>,
}

/// Scores `model` on labelled `test` rows.
pub fn evaluate<T: Scalar>(
    model: &TrainedModel<T>,
    test: &[FeatureVector],
    posterior: &PosteriorConfig,
) -> Result<EvalReport> {
    let y = labels(test)?;
    let (predicted, cov, cov_mix) = if model.kind == ModelKind::Det {
        (predict_point(model, test, posterior)?, None, None)
    } else {
        let preds = predict_batch(model, test, posterior)?;
        let other = match posterior.aggregation {
            Aggregation::Average => Aggregation::Mixture,
            Aggregation::Mixture => Aggregation::Average,
        };
        let alt = preds.iter().map(|p| p.reaggregate(other)).collect::<Result<Vec<_>>>()?;
        let (avg, mix) = match posterior.aggregation {
            Aggregation::Average => (&preds, &alt),
            Aggregation::Mixture => (&alt, &preds),
        };
        (
            preds.iter().map(|p| p.mean).collect(),
            Some(coverage(avg, &y, 0.95)?),
            Some(coverage(mix, &y, 0.95)?),
        )
    };
    Ok(EvalReport {
        model: model.kind,
        rows: test.len(),
        mape: mape(&y, &predicted)?,
        rmse: rmse(&y, &predicted)?,
        coverage_95: cov,
        coverage_95_mixture: cov_mix,
        m_samples: posterior.m_samples,
        seed: posterior.seed,
        aggregation: posterior.aggregation,
        importances: None,
        sweeps: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mape_examples() {
        assert!((mape(&[2.0], &[1.8]).unwrap() - 10.0).abs() < 1e-12);
        assert_eq!(mape(&[1.0, 3.0], &[1.0, 3.0]).unwrap(), 0.0);
        assert!(mape(&[0.0], &[1.0]).is_err());
        assert!(mape(&[1.0], &[1.0, 2.0]).is_err());
        assert!(mape(&[], &[]).is_err());
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((rmse(&[0.0, 0.0], &[3.0, 4.0]).unwrap() - 12.5f64.sqrt()).abs() < 1e-12);
        assert!(rmse(&[], &[]).is_err());
    }

    fn point(mean: f64, std: f64) -> GaussianPrediction {
        GaussianPrediction {
            mean,
            std,
            components: None,
        }
    }

    #[test]
    fn coverage_extremes() {
        let preds = vec![point(1.0, 0.0), point(2.0, 0.0)];
        assert_eq!(coverage(&preds, &[1.0, 2.0], 0.95).unwrap(), 1.0);
        let wide_off = vec![point(100.0, 1.0), point(-100.0, 1.0)];
        assert_eq!(coverage(&wide_off, &[1.0, 2.0], 0.95).unwrap(), 0.0);
        assert!(coverage(&[], &[], 0.95).is_err());
    }

    #[test]
    fn grid_parsing() {
        let g = parse_grid("33:85:1").unwrap();
        assert_eq!(g.len(), 53);
        assert_eq!(g[0], 33.0);
        assert_eq!(*g.last().unwrap(), 85.0);
        assert_eq!(parse_grid("0:1:0.25").unwrap(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert!(parse_grid("5:1:1").unwrap().is_empty());
        assert!(parse_grid("0:1").is_err());
        assert!(parse_grid("0:1:0").is_err());
        assert!(parse_grid("a:b:c").is_err());
    }

    #[test]
    fn median_of_odd_and_even() {
        let mk = |d: f64| FeatureVector {
            distance: d,
            label_energy: Some(1.0),
            ..Default::default()
        };
        assert_eq!(median_baseline(&[mk(3.0), mk(1.0), mk(2.0)]).unwrap().distance, 2.0);
        let m = median_baseline(&[mk(4.0), mk(1.0), mk(2.0), mk(3.0)]).unwrap();
        assert_eq!(m.distance, 2.5);
        assert_eq!(m.label_energy, None);
        assert!(median_baseline(&[]).is_err());
    }
}
