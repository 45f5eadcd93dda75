//! Trip traces, micro-trip sampling, trip energy, filtering and splitting.
//!
//! A trace is a 1 Hz recording of one drive. Training examples are
//! *micro-trips*: contiguous slices drawn with three levels of randomness
//! (which trace, where to start, how long), with replacement.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{Feature, FeatureVector};

/// Joules per kilowatt-hour.
pub const JOULES_PER_KWH: f64 = 3.6e6;

/// Header of the trace CSV format, in column order.
pub const TRACE_HEADER: [&str; 8] = [
    "trip_id",
    "t_sec",
    "speed_mps",
    "accel_mps2",
    "elev_delta_m",
    "dist_delta_m",
    "power_w",
    "temp_f",
];

/// One second of a recorded trip.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TripSample {
    /// m/s, non-negative.
    pub speed: f64,
    /// m/s², recorded channel.
    pub acceleration: f64,
    /// Signed elevation change since the previous second, m.
    pub elevation_delta: f64,
    /// Distance covered during this second, m, non-negative.
    pub distance_delta: f64,
    /// Battery power, W. Negative while regenerating.
    pub power: f64,
    /// Ambient temperature, °F.
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripTrace {
    pub trip_id: String,
    pub samples: Vec<TripSample>,
}

impl TripTrace {
    /// Builds a trace, checking the per-sample invariants.
    pub fn new(trip_id: impl Into<String>, samples: Vec<TripSample>) -> Result<Self> {
        let trip_id = trip_id.into();
        if samples.len() < 2 {
            return Err(Error::BadTrace {
                trip_id,
                message: format!("needs at least 2 samples, got {}", samples.len()),
            });
        }
        for (i, s) in samples.iter().enumerate() {
            if let Some(problem) = sample_problem(s) {
                return Err(Error::BadTrace {
                    trip_id,
                    message: format!("sample {i}: {problem}"),
                });
            }
        }
        Ok(Self { trip_id, samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// The whole trace viewed as a single micro-trip.
    pub fn as_micro_trip(&self) -> MicroTrip<'_> {
        MicroTrip {
            source_trip_id: &self.trip_id,
            start_index: 0,
            samples: &self.samples,
        }
    }
}

fn sample_problem(s: &TripSample) -> Option<String> {
    let fields = [
        s.speed,
        s.acceleration,
        s.elevation_delta,
        s.distance_delta,
        s.power,
        s.temperature,
    ];
    if fields.iter().any(|v| !v.is_finite()) {
        return Some("non-finite value".into());
    }
    if s.speed < 0.0 {
        return Some(format!("negative speed {}", s.speed));
    }
    if s.distance_delta < 0.0 {
        return Some(format!("negative distance_delta {}", s.distance_delta));
    }
    None
}

/// A contiguous slice of a trace. Borrows from the source trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MicroTrip<'a> {
    pub source_trip_id: &'a str,
    pub start_index: usize,
    pub samples: &'a [TripSample],
}

impl<'a> MicroTrip<'a> {
    /// Slice `trace[start..start + length]`.
    pub fn new(trace: &'a TripTrace, start_index: usize, length: usize) -> Result<Self> {
        if length < 2 || start_index + length > trace.len() {
            return Err(Error::InvalidArgument(format!(
                "slice [{start_index}, {}) out of range for trace `{}` of length {} (minimum length 2)",
                start_index + length,
                trace.trip_id,
                trace.len()
            )));
        }
        Ok(Self {
            source_trip_id: &trace.trip_id,
            start_index,
            samples: &trace.samples[start_index..start_index + length],
        })
    }

    /// Duration T in seconds (one sample per second).
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn energy_kwh(&self) -> f64 {
        trip_energy(self)
    }
}

/// Train/test partition of labelled rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit<T> {
    pub train: Vec<T>,
    pub test: Vec<T>,
    pub seed: u64,
}

// ---------------------------------------------------------------------------
// Trace CSV
// ---------------------------------------------------------------------------

pub fn load_trips(path: impl AsRef<Path>) -> Result<Vec<TripTrace>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_trips(file)
}

/// Parses the trace CSV. Rows for a trip must be contiguous with `t_sec`
/// running 0, 1, 2, ...; any other cadence is rejected.
pub fn read_trips<R: Read>(reader: R) -> Result<Vec<TripTrace>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut idx = [0usize; 8];
    for (slot, name) in idx.iter_mut().zip(TRACE_HEADER) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))?;
    }

    let mut traces: Vec<TripTrace> = Vec::new();
    let mut current: Option<(String, Vec<TripSample>)> = None;
    let mut seen = std::collections::HashSet::new();

    for record in rdr.records() {
        let record = record?;
        let row = record.position().map(|p| p.line()).unwrap_or(0);
        let field = |k: usize| -> Result<f64> {
            let raw = record.get(idx[k]).unwrap_or("");
            raw.parse::<f64>().map_err(|_| Error::BadRow {
                row,
                message: format!("column `{}`: non-numeric value `{raw}`", TRACE_HEADER[k]),
            })
        };
        let trip_id = record.get(idx[0]).unwrap_or("").to_string();
        let t_sec = field(1)?;
        let sample = TripSample {
            speed: field(2)?,
            acceleration: field(3)?,
            elevation_delta: field(4)?,
            distance_delta: field(5)?,
            power: field(6)?,
            temperature: field(7)?,
        };
        if let Some(problem) = sample_problem(&sample) {
            return Err(Error::BadRow { row, message: problem });
        }

        let starts_new = current.as_ref().map_or(true, |(id, _)| *id != trip_id);
        if starts_new {
            if let Some((id, samples)) = current.take() {
                traces.push(TripTrace::new(id, samples)?);
            }
            if !seen.insert(trip_id.clone()) {
                return Err(Error::BadRow {
                    row,
                    message: format!("rows for trip `{trip_id}` are not contiguous"),
                });
            }
            current = Some((trip_id, Vec::new()));
        }
        let (_, samples) = current.as_mut().expect("set above");
        let expected = samples.len() as f64;
        if (t_sec - expected).abs() > 1e-9 {
            return Err(Error::BadRow {
                row,
                message: format!("t_sec {t_sec} breaks the 1 s cadence (expected {expected})"),
            });
        }
        samples.push(sample);
    }
    if let Some((id, samples)) = current.take() {
        traces.push(TripTrace::new(id, samples)?);
    }
    Ok(traces)
}

pub fn write_trips<W: Write>(writer: W, traces: &[TripTrace]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(TRACE_HEADER)?;
    for trace in traces {
        for (t, s) in trace.samples.iter().enumerate() {
            wtr.write_record(&[
                trace.trip_id.clone(),
                t.to_string(),
                s.speed.to_string(),
                s.acceleration.to_string(),
                s.elevation_delta.to_string(),
                s.distance_delta.to_string(),
                s.power.to_string(),
                s.temperature.to_string(),
            ])?;
        }
    }
    wtr.flush().map_err(|e| Error::io("<trace writer>", e))?;
    Ok(())
}

pub fn save_trips(path: impl AsRef<Path>, traces: &[TripTrace]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_trips(std::io::BufWriter::new(file), traces)
}

// ---------------------------------------------------------------------------
// Micro-trips
// ---------------------------------------------------------------------------

/// Inclusive bounds on micro-trip duration, in samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LengthBounds {
    pub min: usize,
    /// `None` means "up to the full remaining trace".
    pub max: Option<usize>,
}

impl Default for LengthBounds {
    fn default() -> Self {
        Self { min: 60, max: None }
    }
}

/// Draws `count` micro-trips with replacement: a uniformly random trace
/// (among those at least `bounds.min` long), a uniformly random start that
/// leaves room for `bounds.min` samples, then a uniformly random admissible
/// length.
pub fn generate_micro_trips<'a>(
    traces: &'a [TripTrace],
    count: usize,
    bounds: LengthBounds,
    seed: u64,
) -> Result<Vec<MicroTrip<'a>>> {
    if count == 0 {
        return Err(Error::InvalidArgument("micro-trip count must be positive".into()));
    }
    if bounds.min < 2 {
        return Err(Error::InvalidArgument(format!(
            "minimum micro-trip length must be at least 2, got {}",
            bounds.min
        )));
    }
    if let Some(max) = bounds.max {
        if max < bounds.min {
            return Err(Error::InvalidArgument(format!(
                "length bounds inverted: min {} > max {max}",
                bounds.min
            )));
        }
    }
    let eligible: Vec<&TripTrace> = traces.iter().filter(|t| t.len() >= bounds.min).collect();
    if eligible.is_empty() {
        return Err(Error::InsufficientData(format!(
            "no trace has at least {} samples",
            bounds.min
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let trace = eligible[rng.random_range(0..eligible.len())];
        let start = rng.random_range(0..=trace.len() - bounds.min);
        let room = trace.len() - start;
        let max_len = bounds.max.map_or(room, |m| m.min(room));
        let length = rng.random_range(bounds.min..=max_len);
        out.push(MicroTrip {
            source_trip_id: &trace.trip_id,
            start_index: start,
            samples: &trace.samples[start..start + length],
        });
    }
    Ok(out)
}

/// Net battery energy over the slice in kWh: `Σ power_i · 1 s / 3.6e6`.
/// Negative means net regeneration.
pub fn trip_energy(micro: &MicroTrip<'_>) -> f64 {
    samples_energy(micro.samples)
}

pub(crate) fn samples_energy(samples: &[TripSample]) -> f64 {
    samples.iter().map(|s| s.power).sum::<f64>() / JOULES_PER_KWH
}

/// Keeps micro-trips whose `|energy| >= threshold_kwh`, preserving order.
pub fn filter_micro_trips<'a>(
    micros: Vec<MicroTrip<'a>>,
    threshold_kwh: f64,
) -> Result<Vec<MicroTrip<'a>>> {
    if !(threshold_kwh > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "energy filter threshold must be positive, got {threshold_kwh}"
        )));
    }
    Ok(micros
        .into_iter()
        .filter(|m| trip_energy(m).abs() >= threshold_kwh)
        .collect())
}

/// Seeded uniform shuffle, then the first `floor(ratio * N)` rows go to train.
pub fn split_dataset<T>(labeled: Vec<T>, ratio: f64, seed: u64) -> Result<DatasetSplit<T>> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "split ratio must lie in (0, 1), got {ratio}"
        )));
    }
    if labeled.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least 2 rows to split, got {}",
            labeled.len()
        )));
    }
    let mut rows = labeled;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rows.shuffle(&mut rng);
    let n_train = (ratio * rows.len() as f64).floor() as usize;
    let test = rows.split_off(n_train);
    Ok(DatasetSplit {
        train: rows,
        test,
        seed,
    })
}

// ---------------------------------------------------------------------------
// Descriptive statistics
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldStats {
    pub name: String,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
}

/// Min / max / mean for every feature, plus the energy label when all rows
/// carry one.
pub fn descriptive_stats(features: &[FeatureVector]) -> Result<Vec<FieldStats>> {
    if features.is_empty() {
        return Err(Error::InsufficientData(
            "descriptive statistics of an empty set".into(),
        ));
    }
    let summarize = |name: &str, values: &mut dyn Iterator<Item = f64>| {
        let (mut min, mut max, mut sum, mut n) = (f64::INFINITY, f64::NEG_INFINITY, 0.0, 0usize);
        for v in values {
            min = min.min(v);
            max = max.max(v);
            sum += v;
            n += 1;
        }
        FieldStats {
            name: name.to_string(),
            min,
            max,
            mean: sum / n as f64,
        }
    };
    let mut out: Vec<FieldStats> = Feature::ALL
        .iter()
        .map(|f| summarize(f.name(), &mut features.iter().map(|v| f.get(v))))
        .collect();
    if features.iter().all(|f| f.label_energy.is_some()) {
        out.push(summarize(
            "energy_kwh",
            &mut features.iter().filter_map(|v| v.label_energy),
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat_trace(id: &str, n: usize, power: f64) -> TripTrace {
        let samples = (0..n)
            .map(|_| TripSample {
                speed: 10.0,
                distance_delta: 10.0,
                power,
                temperature: 60.0,
                ..Default::default()
            })
            .collect();
        TripTrace::new(id, samples).unwrap()
    }

    fn csv_for(trips: &[(&str, usize)]) -> String {
        let mut s = TRACE_HEADER.join(",") + "\n";
        for (id, n) in trips {
            for t in 0..*n {
                s += &format!("{id},{t},10,0,0,10,1000,60\n");
            }
        }
        s
    }

    #[test]
    fn loads_one_trace_per_trip() {
        let traces = read_trips(csv_for(&[("a", 100), ("b", 200)]).as_bytes()).unwrap();
        assert_eq!(traces.len(), 2);
        assert_eq!(traces[0].len(), 100);
        assert_eq!(traces[1].len(), 200);
        assert_eq!(traces[1].trip_id, "b");
    }

    #[test]
    fn rejects_negative_distance_with_row_number() {
        let mut s = csv_for(&[("a", 3)]);
        s += "a,3,10,0,0,-1,1000,60\n";
        match read_trips(s.as_bytes()) {
            Err(Error::BadRow { row, message }) => {
                assert_eq!(row, 5);
                assert!(message.contains("distance"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_missing_column_and_bad_cells() {
        let s = "trip_id,t_sec,speed_mps\na,0,1\n";
        assert!(matches!(read_trips(s.as_bytes()), Err(Error::MissingColumn(c)) if c == "accel_mps2"));

        let mut s = csv_for(&[("a", 2)]);
        s += "a,2,fast,0,0,1,1,60\n";
        assert!(matches!(read_trips(s.as_bytes()), Err(Error::BadRow { row: 4, .. })));
    }

    #[test]
    fn rejects_short_trips_gaps_and_interleaving() {
        assert!(matches!(
            read_trips(csv_for(&[("a", 5), ("b", 1)]).as_bytes()),
            Err(Error::BadTrace { .. })
        ));
        let s = TRACE_HEADER.join(",") + "\na,0,1,0,0,1,1,60\na,2,1,0,0,1,1,60\n";
        assert!(matches!(read_trips(s.as_bytes()), Err(Error::BadRow { .. })));
        let s = csv_for(&[("a", 2), ("b", 2), ("a", 2)]);
        assert!(matches!(read_trips(s.as_bytes()), Err(Error::BadRow { .. })));
    }

    #[test]
    fn csv_round_trip() {
        let traces = vec![flat_trace("x", 4, 12.5), flat_trace("y", 3, -7.0)];
        let mut buf = Vec::new();
        write_trips(&mut buf, &traces).unwrap();
        assert_eq!(read_trips(buf.as_slice()).unwrap(), traces);
    }

    #[test]
    fn micro_trip_count_and_degenerate_slice() {
        let traces: Vec<_> = (0..50).map(|i| flat_trace(&i.to_string(), 300, 1.0)).collect();
        let micros = generate_micro_trips(&traces, 5000, LengthBounds::default(), 1).unwrap();
        assert_eq!(micros.len(), 5000);

        let one = vec![flat_trace("only", 2, 1.0)];
        let bounds = LengthBounds { min: 2, max: Some(2) };
        let micros = generate_micro_trips(&one, 3, bounds, 9).unwrap();
        assert_eq!(micros.len(), 3);
        assert!(micros.iter().all(|m| *m == micros[0] && m.start_index == 0 && m.len() == 2));
    }

    #[test]
    fn micro_trips_are_seed_deterministic() {
        let traces: Vec<_> = (0..5).map(|i| flat_trace(&i.to_string(), 100 + i * 7, 1.0)).collect();
        let a = generate_micro_trips(&traces, 200, LengthBounds { min: 10, max: None }, 42).unwrap();
        let b = generate_micro_trips(&traces, 200, LengthBounds { min: 10, max: None }, 42).unwrap();
        assert_eq!(a, b);
        let c = generate_micro_trips(&traces, 200, LengthBounds { min: 10, max: None }, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn micro_trip_errors() {
        let traces = vec![flat_trace("a", 10, 1.0)];
        assert!(matches!(
            generate_micro_trips(&traces, 1, LengthBounds { min: 11, max: None }, 0),
            Err(Error::InsufficientData(_))
        ));
        assert!(generate_micro_trips(&traces, 0, LengthBounds { min: 2, max: None }, 0).is_err());
        assert!(generate_micro_trips(&traces, 1, LengthBounds { min: 5, max: Some(4) }, 0).is_err());
    }

    #[test]
    fn energy_unit_conversion() {
        let t = flat_trace("a", 1000, 3600.0);
        assert!((trip_energy(&t.as_micro_trip()) - 1.0).abs() < 1e-12);
        let z = flat_trace("z", 10, 0.0);
        assert_eq!(trip_energy(&z.as_micro_trip()), 0.0);
    }

    #[test]
    fn filter_keeps_large_magnitudes_in_order() {
        let traces: Vec<_> = [0.1, 0.5, -0.2, -0.4]
            .iter()
            .enumerate()
            .map(|(i, kwh)| flat_trace(&i.to_string(), 10, kwh * JOULES_PER_KWH / 10.0))
            .collect();
        let micros: Vec<_> = traces.iter().map(|t| t.as_micro_trip()).collect();
        let kept = filter_micro_trips(micros, 0.3).unwrap();
        let energies: Vec<f64> = kept.iter().map(trip_energy).collect();
        assert_eq!(energies.len(), 2);
        assert!((energies[0] - 0.5).abs() < 1e-12);
        assert!((energies[1] + 0.4).abs() < 1e-12);
        assert!(filter_micro_trips(vec![], 0.0).is_err());
    }

    #[test]
    fn split_sizes() {
        let s = split_dataset((0..3916).collect::<Vec<_>>(), 0.9, 3).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (3524, 392));
        let s = split_dataset((0..10).collect::<Vec<_>>(), 0.5, 3).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (5, 5));
        let again = split_dataset((0..10).collect::<Vec<_>>(), 0.5, 3).unwrap();
        assert_eq!(s, again);
        assert!(split_dataset(vec![1], 0.5, 0).is_err());
        assert!(split_dataset(vec![1, 2], 1.0, 0).is_err());
    }

    #[test]
    fn stats_of_one_and_two_vectors() {
        let mut a = FeatureVector {
            avg_speed: 4.0,
            label_energy: Some(1.0),
            ..Default::default()
        };
        let one = descriptive_stats(std::slice::from_ref(&a)).unwrap();
        assert!(one.iter().all(|s| s.min == s.max && s.max == s.mean));
        assert_eq!(one.last().unwrap().name, "energy_kwh");

        let mut b = a.clone();
        b.avg_speed = 8.0;
        a.label_energy = None;
        let two = descriptive_stats(&[a, b]).unwrap();
        assert_eq!(two.len(), 9);
        assert_eq!(two[0].mean, 6.0);
        assert!(descriptive_stats(&[]).is_err());
    }
}
