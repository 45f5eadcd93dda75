//! The nine trip-characteristic features and min-max scaling.

use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trip_data::{samples_energy, MicroTrip, TripSample};

/// Feature CSV header, in column order.
pub const FEATURE_HEADER: [&str; 10] = [
    "avg_speed",
    "std_speed",
    "distance",
    "pos_elev",
    "neg_elev",
    "temp",
    "rpa",
    "avg_accel",
    "avg_decel",
    "energy_kwh",
];

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FeatureVector {
    /// Mean speed, m/s.
    pub avg_speed: f64,
    /// Population standard deviation of speed, m/s.
    pub std_speed: f64,
    /// Trip distance, m.
    pub distance: f64,
    /// Sum of positive elevation deltas, m.
    pub pos_elev_change: f64,
    /// Sum of negative elevation deltas, m (≤ 0).
    pub neg_elev_change: f64,
    /// Trip-mean ambient temperature, °F.
    pub temperature: f64,
    /// Relative positive acceleration, m/s².
    pub rpa: f64,
    /// Sum of strictly positive accelerations over T, m/s².
    pub avg_accel: f64,
    /// Sum of strictly negative accelerations over T, m/s² (≤ 0).
    pub avg_decel: f64,
    /// Trip energy label in kWh, when known.
    pub label_energy: Option<f64>,
}

/// Identifies one input column of a [`FeatureVector`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    AvgSpeed,
    StdSpeed,
    Distance,
    PosElev,
    NegElev,
    Temperature,
    Rpa,
    AvgAccel,
    AvgDecel,
}

impl Feature {
    pub const ALL: [Feature; 9] = [
        Feature::AvgSpeed,
        Feature::StdSpeed,
        Feature::Distance,
        Feature::PosElev,
        Feature::NegElev,
        Feature::Temperature,
        Feature::Rpa,
        Feature::AvgAccel,
        Feature::AvgDecel,
    ];

    /// The driver-behaviour group dropped in the ablation.
    pub const DRIVER_BEHAVIOUR: [Feature; 3] = [Feature::Rpa, Feature::AvgAccel, Feature::AvgDecel];

    /// Column name in the feature CSV.
    pub fn name(self) -> &'static str {
        FEATURE_HEADER[self.index()]
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn get(self, v: &FeatureVector) -> f64 {
        match self {
            Feature::AvgSpeed => v.avg_speed,
            Feature::StdSpeed => v.std_speed,
            Feature::Distance => v.distance,
            Feature::PosElev => v.pos_elev_change,
            Feature::NegElev => v.neg_elev_change,
            Feature::Temperature => v.temperature,
            Feature::Rpa => v.rpa,
            Feature::AvgAccel => v.avg_accel,
            Feature::AvgDecel => v.avg_decel,
        }
    }

    pub fn set(self, v: &mut FeatureVector, value: f64) {
        let slot = match self {
            Feature::AvgSpeed => &mut v.avg_speed,
            Feature::StdSpeed => &mut v.std_speed,
            Feature::Distance => &mut v.distance,
            Feature::PosElev => &mut v.pos_elev_change,
            Feature::NegElev => &mut v.neg_elev_change,
            Feature::Temperature => &mut v.temperature,
            Feature::Rpa => &mut v.rpa,
            Feature::AvgAccel => &mut v.avg_accel,
            Feature::AvgDecel => &mut v.avg_decel,
        };
        *slot = value;
    }

    /// All features, or all but the driver-behaviour group.
    pub fn selection(driver_behaviour: bool) -> Vec<Feature> {
        Feature::ALL
            .into_iter()
            .filter(|f| driver_behaviour || !Feature::DRIVER_BEHAVIOUR.contains(f))
            .collect()
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Feature {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        let found = match key.as_str() {
            "avg_speed" | "speed" => Feature::AvgSpeed,
            "std_speed" => Feature::StdSpeed,
            "distance" => Feature::Distance,
            "pos_elev" | "pos_elev_change" => Feature::PosElev,
            "neg_elev" | "neg_elev_change" => Feature::NegElev,
            "temp" | "temperature" => Feature::Temperature,
            "rpa" => Feature::Rpa,
            "avg_accel" => Feature::AvgAccel,
            "avg_decel" => Feature::AvgDecel,
            _ => return Err(Error::InvalidArgument(format!("unknown feature `{s}`"))),
        };
        Ok(found)
    }
}

/// Computes the nine features from a micro-trip. The label is the trip
/// energy from the power channel.
pub fn extract_features(micro: &MicroTrip<'_>) -> Result<FeatureVector> {
    let mut v = features_of_samples(micro.samples, micro.source_trip_id)?;
    v.label_energy = Some(samples_energy(micro.samples));
    Ok(v)
}

fn features_of_samples(samples: &[TripSample], trip_id: &str) -> Result<FeatureVector> {
    let t = samples.len();
    if t < 2 {
        return Err(Error::BadTrace {
            trip_id: trip_id.to_string(),
            message: format!("feature extraction needs at least 2 samples, got {t}"),
        });
    }
    let n = t as f64;

    let mut speed_sum = 0.0;
    let mut distance = 0.0;
    let mut pos_elev = 0.0;
    let mut neg_elev = 0.0;
    let mut temp_sum = 0.0;
    let mut accel_pos = 0.0;
    let mut accel_neg = 0.0;
    let mut work = 0.0;
    for s in samples {
        speed_sum += s.speed;
        distance += s.distance_delta;
        temp_sum += s.temperature;
        if s.elevation_delta > 0.0 {
            pos_elev += s.elevation_delta;
        } else {
            neg_elev += s.elevation_delta;
        }
        if s.acceleration > 0.0 {
            accel_pos += s.acceleration;
            work += s.speed * s.acceleration;
        } else if s.acceleration < 0.0 {
            accel_neg += s.acceleration;
        }
    }
    let avg_speed = speed_sum / n;
    let var = samples
        .iter()
        .map(|s| (s.speed - avg_speed).powi(2))
        .sum::<f64>()
        / n;

    let rpa = if distance > 0.0 {
        work / distance
    } else if work == 0.0 {
        0.0
    } else {
        return Err(Error::BadTrace {
            trip_id: trip_id.to_string(),
            message: "zero distance with positive acceleration work; RPA is undefined".into(),
        });
    };

    Ok(FeatureVector {
        avg_speed,
        std_speed: var.sqrt(),
        distance,
        pos_elev_change: pos_elev,
        neg_elev_change: neg_elev,
        temperature: temp_sum / n,
        rpa,
        avg_accel: accel_pos / n,
        avg_decel: accel_neg / n,
        label_energy: None,
    })
}

// ---------------------------------------------------------------------------
// Scaling
// ---------------------------------------------------------------------------

/// Per-column minimum and maximum fitted on a training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingParams {
    pub columns: Vec<Feature>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl ScalingParams {
    pub fn dim(&self) -> usize {
        self.columns.len()
    }

    /// Columns whose training range is a single value; they scale to 0.
    pub fn degenerate_columns(&self) -> Vec<Feature> {
        self.columns
            .iter()
            .zip(self.min.iter().zip(&self.max))
            .filter(|(_, (lo, hi))| hi <= lo)
            .map(|(f, _)| *f)
            .collect()
    }

    /// `(x - min) / (max - min)` per column. Values outside the training
    /// range are passed through, not clipped.
    pub fn apply(&self, x: &FeatureVector) -> Vec<f64> {
        self.columns
            .iter()
            .enumerate()
            .map(|(j, f)| {
                let span = self.max[j] - self.min[j];
                if span > 0.0 {
                    (f.get(x) - self.min[j]) / span
                } else {
                    0.0
                }
            })
            .collect()
    }
}

pub fn fit_scaler(train: &[FeatureVector], columns: &[Feature]) -> Result<ScalingParams> {
    if train.is_empty() {
        return Err(Error::InsufficientData("cannot fit a scaler on zero rows".into()));
    }
    if columns.is_empty() {
        return Err(Error::InvalidArgument("scaler needs at least one column".into()));
    }
    let mut min = vec![f64::INFINITY; columns.len()];
    let mut max = vec![f64::NEG_INFINITY; columns.len()];
    for v in train {
        for (j, f) in columns.iter().enumerate() {
            let x = f.get(v);
            if !x.is_finite() {
                return Err(Error::InvalidArgument(format!("non-finite value in column `{f}`")));
            }
            min[j] = min[j].min(x);
            max[j] = max[j].max(x);
        }
    }
    let params = ScalingParams {
        columns: columns.to_vec(),
        min,
        max,
    };
    for f in params.degenerate_columns() {
        log::warn!("feature `{f}` is constant on the training set; it will scale to 0");
    }
    Ok(params)
}

pub fn apply_scaler(params: &ScalingParams, x: &FeatureVector) -> Vec<f64> {
    params.apply(x)
}

// ---------------------------------------------------------------------------
// Feature CSV
// ---------------------------------------------------------------------------

pub fn write_features<W: Write>(writer: W, rows: &[FeatureVector]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(FEATURE_HEADER)?;
    for v in rows {
        let mut rec: Vec<String> = Feature::ALL.iter().map(|f| f.get(v).to_string()).collect();
        rec.push(v.label_energy.map(|e| e.to_string()).unwrap_or_default());
        wtr.write_record(&rec)?;
    }
    wtr.flush().map_err(|e| Error::io("<feature writer>", e))?;
    Ok(())
}

pub fn save_features(path: impl AsRef<Path>, rows: &[FeatureVector]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_features(std::io::BufWriter::new(file), rows)
}

/// Reads the feature CSV. The `energy_kwh` column may be absent or empty.
pub fn read_features<R: Read>(reader: R) -> Result<Vec<FeatureVector>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let position = |name: &str| headers.iter().position(|h| h == name);
    let mut idx = Vec::with_capacity(9);
    for f in Feature::ALL {
        idx.push(position(f.name()).ok_or_else(|| Error::MissingColumn(f.name().into()))?);
    }
    let label_idx = position("energy_kwh");

    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let row = record.position().map(|p| p.line()).unwrap_or(0);
        let parse = |col: usize, name: &str| -> Result<f64> {
            let raw = record.get(col).unwrap_or("");
            raw.parse::<f64>().map_err(|_| Error::BadRow {
                row,
                message: format!("column `{name}`: non-numeric value `{raw}`"),
            })
        };
        let mut v = FeatureVector::default();
        for (f, &col) in Feature::ALL.iter().zip(&idx) {
            f.set(&mut v, parse(col, f.name())?);
        }
        v.label_energy = match label_idx.and_then(|c| record.get(c)) {
            Some(raw) if !raw.is_empty() => Some(parse(label_idx.unwrap(), "energy_kwh")?),
            _ => None,
        };
        rows.push(v);
    }
    Ok(rows)
}

pub fn load_features(path: impl AsRef<Path>) -> Result<Vec<FeatureVector>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_features(file)
}
