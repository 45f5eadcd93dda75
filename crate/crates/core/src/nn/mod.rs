//! A small neural-network engine: dense and variational layers, a
//! reverse-mode tape, and Adam.

pub mod adam;
pub mod layers;
pub mod network;
pub mod tape;

pub use adam::{adam_step, Adam, AdamConfig};
pub use layers::{
    gaussian_log_density, variational_sample, Activation, DenseLayer, LayerNoise, PriorSpec,
    VariationalLayer,
};
pub use network::{backward, Layer, LayerParams, Network, NetworkGrads, NetworkNoise, NetworkRecord};
pub use tape::{Gradients, NodeId, Tape};
