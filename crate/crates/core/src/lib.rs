//! Trip-level energy estimation for electric vehicles with a Bayesian MLP.
//!
//! Pipeline: trip traces → micro-trips → nine summary features → a
//! multilayer perceptron with a Gaussian output head, optionally with
//! variational weights trained by the ELBO → Monte Carlo predictive
//! posterior → metrics, permutation importance and sensitivity sweeps.
//!
//! Network code is generic over [`Scalar`] (`f32` or `f64`); trip data and
//! features are always `f64`. The aliases below fix the scalar type.

pub mod error;
pub mod eval;
pub mod features;
pub mod inference;
pub mod model;
pub mod nn;
pub mod scalar;
pub mod synth;
pub mod trip_data;

pub use error::{Error, ErrorKind, Result};
pub use eval::{EvalReport, FeatureImportance, SweepCurve, SweepPoint};
pub use features::{Feature, FeatureVector, ScalingParams};
pub use inference::{Aggregation, GaussianPrediction, PosteriorConfig};
pub use model::{ModelKind, NetworkSpec, TrainConfig};
pub use scalar::Scalar;
pub use trip_data::{DatasetSplit, LengthBounds, MicroTrip, TripSample, TripTrace};

pub type Network = nn::Network<f64>;
pub type TrainedModel = model::TrainedModel<f64>;
pub type Tape = nn::Tape<f64>;

pub type NetworkF32 = nn::Network<f32>;
pub type TrainedModelF32 = model::TrainedModel<f32>;
pub type TapeF32 = nn::Tape<f32>;
