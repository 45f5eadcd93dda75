//! Synthetic trip traces driven by a known energy law.
//!
//! The generator is a verification oracle, not a vehicle simulator. Speed
//! follows a mean-reverting random walk around a cruise speed with
//! acceleration bursts whose frequency and size grow with driver
//! aggressiveness. Battery power per second is
//!
//! ```text
//! mech    = m·a·v + c_rr·m·g·v + k_aero·v³ + m·g·Δh
//! battery = mech / η_drive            if mech ≥ 0
//!           mech · η_regen            otherwise
//! power   = battery + aux(temp) + noise
//! aux     = max(0, aux_base + k_temp · (T_ref − temp))
//! ```

use std::f64::consts::PI;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{extract_features, FeatureVector};
use crate::trip_data::{generate_micro_trips, LengthBounds, TripSample, TripTrace};

const GRAVITY: f64 = 9.81;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriverProfile {
    /// 0 = calm, 1 = aggressive.
    pub aggressiveness: f64,
    /// m/s
    pub cruise_speed: f64,
    /// Per-second acceleration jitter, m/s².
    pub speed_noise: f64,
}

impl DriverProfile {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.aggressiveness) {
            return Err(Error::InvalidArgument(format!(
                "aggressiveness must lie in [0, 1], got {}",
                self.aggressiveness
            )));
        }
        if !(self.cruise_speed > 0.0) || !(self.speed_noise >= 0.0) {
            return Err(Error::InvalidArgument(
                "cruise speed must be positive and speed noise non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Road grade as a sum of two sinusoids over distance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElevationProfile {
    /// Peak grade of the primary undulation (rise over run).
    pub grade_amplitude: f64,
    /// m
    pub wavelength: f64,
}

impl ElevationProfile {
    pub fn flat() -> Self {
        Self {
            grade_amplitude: 0.0,
            wavelength: 2000.0,
        }
    }

    fn grade(&self, x: f64, phase: (f64, f64)) -> f64 {
        let k = 2.0 * PI / self.wavelength;
        self.grade_amplitude * ((k * x + phase.0).sin() + 0.5 * (3.1 * k * x + phase.1).sin()) / 1.5
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyLaw {
    /// kg
    pub mass: f64,
    pub rolling_coeff: f64,
    /// ½·ρ·C_d·A, kg/m
    pub aero_coeff: f64,
    /// Fraction of battery energy delivered as traction.
    pub drivetrain_efficiency: f64,
    /// Fraction of braking / downhill energy recovered.
    pub regen_efficiency: f64,
    /// W
    pub aux_base: f64,
    /// Extra auxiliary draw per °F below `aux_reference_temp`, W/°F.
    pub aux_temp_coeff: f64,
    /// °F
    pub aux_reference_temp: f64,
}

impl Default for EnergyLaw {
    fn default() -> Self {
        Self {
            mass: 1500.0,
            rolling_coeff: 0.010,
            aero_coeff: 0.36,
            drivetrain_efficiency: 0.90,
            regen_efficiency: 0.60,
            aux_base: 400.0,
            aux_temp_coeff: 35.0,
            aux_reference_temp: 85.0,
        }
    }
}

/// Per-second power split by source, W.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PowerTerms {
    /// Positive mechanical demand divided by drivetrain efficiency.
    pub traction: f64,
    /// Recovered power (≤ 0).
    pub regeneration: f64,
    pub auxiliary: f64,
}

impl PowerTerms {
    pub fn total(&self) -> f64 {
        self.traction + self.regeneration + self.auxiliary
    }
}

impl EnergyLaw {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.regen_efficiency) {
            return Err(Error::InvalidArgument("regeneration efficiency must lie in [0, 1]".into()));
        }
        if !(self.drivetrain_efficiency > 0.0 && self.drivetrain_efficiency <= 1.0) {
            return Err(Error::InvalidArgument("drivetrain efficiency must lie in (0, 1]".into()));
        }
        if !(self.mass > 0.0) {
            return Err(Error::InvalidArgument("mass must be positive".into()));
        }
        Ok(())
    }

    /// Noise-free battery power terms for one second.
    pub fn terms(&self, speed: f64, accel: f64, elevation_delta: f64, temperature: f64) -> PowerTerms {
        let m = self.mass;
        let mech = m * accel * speed
            + self.rolling_coeff * m * GRAVITY * speed
            + self.aero_coeff * speed.powi(3)
            + m * GRAVITY * elevation_delta;
        let (traction, regeneration) = if mech >= 0.0 {
            (mech / self.drivetrain_efficiency, 0.0)
        } else {
            (0.0, mech * self.regen_efficiency)
        };
        let auxiliary = (self.aux_base + self.aux_temp_coeff * (self.aux_reference_temp - temperature)).max(0.0);
        PowerTerms {
            traction,
            regeneration,
            auxiliary,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthWorld {
    pub elevation: ElevationProfile,
    /// °F
    pub temperature: f64,
    pub law: EnergyLaw,
    /// Standard deviation of per-second power noise, W.
    pub noise_std: f64,
}

impl Default for SynthWorld {
    fn default() -> Self {
        Self {
            elevation: ElevationProfile {
                grade_amplitude: 0.03,
                wavelength: 2000.0,
            },
            temperature: 62.0,
            law: EnergyLaw::default(),
            noise_std: 0.0,
        }
    }
}

impl SynthWorld {
    pub fn validate(&self) -> Result<()> {
        self.law.validate()?;
        if !(self.noise_std >= 0.0) {
            return Err(Error::InvalidArgument("noise std must be non-negative".into()));
        }
        if !(self.elevation.wavelength > 0.0) {
            return Err(Error::InvalidArgument("elevation wavelength must be positive".into()));
        }
        Ok(())
    }
}

/// Generates a `duration`-second trace.
pub fn generate_trace(profile: &DriverProfile, world: &SynthWorld, duration: usize, seed: u64) -> Result<TripTrace> {
    generate_trace_with_id(profile, world, duration, seed, format!("synth-{seed}"))
}

fn generate_trace_with_id(
    profile: &DriverProfile,
    world: &SynthWorld,
    duration: usize,
    seed: u64,
    trip_id: String,
) -> Result<TripTrace> {
    if duration < 2 {
        return Err(Error::InvalidArgument(format!(
            "trace duration must be at least 2 s, got {duration}"
        )));
    }
    profile.validate()?;
    world.validate()?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phase = (rng.random_range(0.0..2.0 * PI), rng.random_range(0.0..2.0 * PI));
    let agg = profile.aggressiveness;
    let burst_probability = 0.05 * agg;
    let reversion = 0.08;

    let mut samples = Vec::with_capacity(duration);
    let mut v = profile.cruise_speed;
    let mut x = 0.0;
    let mut burst_left = 0usize;
    let mut burst_accel = 0.0;
    for _ in 0..duration {
        let jitter: f64 = StandardNormal.sample(&mut rng);
        let burst_draw: f64 = rng.random();
        let (len_draw, size_draw): (usize, f64) = (rng.random_range(2..=5), rng.random_range(0.6..1.0));
        if burst_left == 0 && burst_draw < burst_probability {
            burst_left = len_draw;
            burst_accel = (0.4 + 1.6 * agg) * size_draw;
        }
        let target = if burst_left > 0 {
            burst_left -= 1;
            burst_accel
        } else {
            reversion * (profile.cruise_speed - v)
        };
        let next = (v + target + profile.speed_noise * jitter).max(0.0);
        let accel = next - v;
        let distance_delta = v;
        let elevation_delta = world.elevation.grade(x, phase) * distance_delta;
        let mut power = world.law.terms(v, accel, elevation_delta, world.temperature).total();
        if world.noise_std > 0.0 {
            let n: f64 = StandardNormal.sample(&mut rng);
            power += world.noise_std * n;
        }
        samples.push(TripSample {
            speed: v,
            acceleration: accel,
            elevation_delta,
            distance_delta,
            power,
            temperature: world.temperature,
        });
        x += distance_delta;
        v = next;
    }
    TripTrace::new(trip_id, samples)
}

/// Ranges from which a fleet of synthetic drivers and worlds is drawn
/// uniformly, one draw per trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FleetConfig {
    pub trips: usize,
    /// Trace duration, s.
    pub duration: usize,
    pub aggressiveness: (f64, f64),
    pub cruise_speed: (f64, f64),
    pub speed_noise: (f64, f64),
    pub temperature: (f64, f64),
    pub grade_amplitude: (f64, f64),
    pub wavelength: f64,
    pub law: EnergyLaw,
    /// Per-second power noise, W.
    pub noise_std: f64,
}

impl Default for FleetConfig {
    fn default() -> Self {
        Self {
            trips: 50,
            duration: 1800,
            aggressiveness: (0.0, 1.0),
            cruise_speed: (6.0, 26.0),
            speed_noise: (0.1, 0.4),
            temperature: (33.0, 85.0),
            grade_amplitude: (0.0, 0.05),
            wavelength: 2000.0,
            law: EnergyLaw::default(),
            noise_std: 0.0,
        }
    }
}

fn draw_in<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Generates `config.trips` traces named `synth-000`, `synth-001`, ...
pub fn generate_fleet(config: &FleetConfig, seed: u64) -> Result<Vec<TripTrace>> {
    if config.trips == 0 {
        return Err(Error::InvalidArgument("fleet needs at least one trip".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..config.trips)
        .map(|i| {
            let profile = DriverProfile {
                aggressiveness: draw_in(&mut rng, config.aggressiveness),
                cruise_speed: draw_in(&mut rng, config.cruise_speed),
                speed_noise: draw_in(&mut rng, config.speed_noise),
            };
            let world = SynthWorld {
                elevation: ElevationProfile {
                    grade_amplitude: draw_in(&mut rng, config.grade_amplitude),
                    wavelength: config.wavelength,
                },
                temperature: draw_in(&mut rng, config.temperature),
                law: config.law,
                noise_std: config.noise_std,
            };
            let trace_seed = rng.next_u64();
            generate_trace_with_id(&profile, &world, config.duration, trace_seed, format!("synth-{i:03}"))
        })
        .collect()
}

/// Recipe for a labelled synthetic feature set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDataset {
    pub fleet: FleetConfig,
    /// Rows to keep after the energy filter.
    pub rows: usize,
    pub bounds: LengthBounds,
    pub filter_kwh: f64,
    /// Label noise standard deviation as a fraction of the mean |energy|.
    pub label_noise: f64,
}

impl SyntheticDataset {
    /// Fleet → micro-trips → features. Labels get Gaussian noise with std
    /// `label_noise · mean|E|`, where the mean is over noise-free energies
    /// passing the filter; the filter is then applied to the noisy labels.
    pub fn generate(&self, seed: u64) -> Result<Vec<FeatureVector>> {
        if self.rows == 0 {
            return Err(Error::InvalidArgument("synthetic dataset needs at least one row".into()));
        }
        if !(self.filter_kwh > 0.0) {
            return Err(Error::InvalidArgument("energy filter threshold must be positive".into()));
        }
        if !(self.label_noise >= 0.0) {
            return Err(Error::InvalidArgument("label noise must be non-negative".into()));
        }
        let traces = generate_fleet(&self.fleet, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(7);
        let mut rows = Vec::with_capacity(self.rows);
        let mut noise: Option<Normal<f64>> = None;
        for _ in 0..20 {
            let draw = 2 * (self.rows - rows.len()) + 16;
            let micros = generate_micro_trips(&traces, draw, self.bounds, rng.next_u64())?;
            let mut pool = micros.iter().map(extract_features).collect::<Result<Vec<_>>>()?;
            let normal = match noise {
                Some(n) => n,
                None => {
                    let kept: Vec<f64> = pool
                        .iter()
                        .filter_map(|r| r.label_energy)
                        .filter(|e| e.abs() >= self.filter_kwh)
                        .map(f64::abs)
                        .collect();
                    if kept.is_empty() {
                        continue;
                    }
                    let mean_abs = kept.iter().sum::<f64>() / kept.len() as f64;
                    let n = Normal::new(0.0, self.label_noise * mean_abs)
                        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
                    noise = Some(n);
                    n
                }
            };
            for r in &mut pool {
                if let Some(e) = r.label_energy.as_mut() {
                    if self.label_noise > 0.0 {
                        *e += normal.sample(&mut rng);
                    }
                }
            }
            rows.extend(
                pool.into_iter()
                    .filter(|r| r.label_energy.is_some_and(|e| e.abs() >= self.filter_kwh))
                    .take(self.rows - rows.len()),
            );
            if rows.len() == self.rows {
                return Ok(rows);
            }
        }
        Err(Error::InsufficientData(format!(
            "energy filter keeps too few micro-trips to reach {} rows",
            self.rows
        )))
    }
}
