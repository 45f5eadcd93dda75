//! A stack of dense and variational layers.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{Activation, DenseLayer, LayerNoise, PriorSpec, VariationalLayer};
use super::tape::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Version tag written into serialized networks.
pub const NETWORK_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum LayerParams<T> {
    Dense(DenseLayer<T>),
    Variational(VariationalLayer<T>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    pub params: LayerParams<T>,
    pub activation: Activation,
}

impl<T: Scalar> Layer<T> {
    pub fn inputs(&self) -> usize {
        match &self.params {
            LayerParams::Dense(d) => d.inputs(),
            LayerParams::Variational(v) => v.inputs(),
        }
    }

    pub fn outputs(&self) -> usize {
        match &self.params {
            LayerParams::Dense(d) => d.outputs(),
            LayerParams::Variational(v) => v.outputs(),
        }
    }

    pub fn is_variational(&self) -> bool {
        matches!(self.params, LayerParams::Variational(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(
    into = "NetworkFile<T>",
    try_from = "NetworkFile<T>",
    bound = "T: Scalar"
)]
pub struct Network<T: Scalar> {
    layers: Vec<Layer<T>>,
}

/// One noise draw per variational layer (`None` for deterministic layers).
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkNoise<T> {
    pub layers: Vec<Option<LayerNoise<T>>>,
}

/// Gradients for every parameter tensor, flattened row-major, in the order
/// of [`Network::params_mut`].
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkGrads<T> {
    pub tensors: Vec<Vec<T>>,
}

impl<T: Scalar> NetworkGrads<T> {
    pub fn zeros_like(lens: &[usize]) -> Self {
        Self {
            tensors: lens.iter().map(|&n| vec![T::zero(); n]).collect(),
        }
    }

    pub fn add_scaled(&mut self, other: &Self, k: T) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, &y) in a.iter_mut().zip(b) {
                *x = *x + k * y;
            }
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.tensors.iter().flatten()
    }
}

/// Node handles for a sampled tensor of a variational layer.
#[derive(Debug, Clone, Copy)]
pub struct SampledNodes {
    pub value: NodeId,
    pub mu: NodeId,
    pub rho: NodeId,
}

/// What a forward pass left on the tape.
#[derive(Debug, Clone)]
pub struct NetworkRecord {
    pub input: NodeId,
    pub output: NodeId,
    /// Parameter leaves, in [`Network::params_mut`] order.
    pub params: Vec<NodeId>,
    /// Every reparameterized weight and bias tensor.
    pub sampled: Vec<SampledNodes>,
}

impl NetworkRecord {
    /// `Σ log q(w | mu, sigma) - Σ log p(w)` over all sampled tensors,
    /// evaluated at the recorded draws.
    pub fn log_q_minus_log_p<T: Scalar>(&self, tape: &mut Tape<T>, prior: PriorSpec) -> Result<Option<NodeId>> {
        let mut acc: Option<NodeId> = None;
        for s in &self.sampled {
            let sigma = tape.softplus(s.rho);
            let lq = tape.log_density(s.value, s.mu, sigma)?;
            let lp = tape.log_density_const(s.value, T::of(prior.mean), T::of(prior.std));
            let neg = tape.scale(lp, -T::one());
            let term = tape.add(lq, neg)?;
            acc = Some(match acc {
                Some(a) => tape.add(a, term)?,
                None => term,
            });
        }
        Ok(acc)
    }

    pub fn collect_grads<T: Scalar>(
        &self,
        grads: &super::tape::Gradients<T>,
        lens: &[usize],
    ) -> NetworkGrads<T> {
        let tensors = self
            .params
            .iter()
            .zip(lens)
            .map(|(id, &n)| match grads.get(*id) {
                Some(g) => g.iter().copied().collect(),
                None => vec![T::zero(); n],
            })
            .collect();
        NetworkGrads { tensors }
    }
}

fn row<T: Scalar>(v: &Array1<T>) -> Array2<T> {
    v.clone().insert_axis(Axis(0))
}

impl<T: Scalar> Network<T> {
    pub fn new(layers: Vec<Layer<T>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("network needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(Error::dims(
                    format!("layer input {}", pair[0].outputs()),
                    pair[1].inputs(),
                ));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").outputs()
    }

    pub fn has_variational(&self) -> bool {
        self.layers.iter().any(Layer::is_variational)
    }

    pub fn zero_noise(&self) -> NetworkNoise<T> {
        NetworkNoise {
            layers: self
                .layers
                .iter()
                .map(|l| l.is_variational().then(|| LayerNoise::zeros(l.inputs(), l.outputs())))
                .collect(),
        }
    }

    pub fn sample_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> NetworkNoise<T> {
        NetworkNoise {
            layers: self
                .layers
                .iter()
                .map(|l| {
                    l.is_variational()
                        .then(|| LayerNoise::sample(l.inputs(), l.outputs(), rng))
                })
                .collect(),
        }
    }

    fn check_noise(&self, noise: &NetworkNoise<T>) -> Result<()> {
        if noise.layers.len() != self.layers.len() {
            return Err(Error::dims(
                format!("noise for {} layers", self.layers.len()),
                noise.layers.len(),
            ));
        }
        for (i, (l, n)) in self.layers.iter().zip(&noise.layers).enumerate() {
            if l.is_variational() != n.is_some() {
                return Err(Error::dims(
                    format!("noise presence matching layer {i}"),
                    "mismatch",
                ));
            }
        }
        Ok(())
    }

    /// Forward pass for a batch of rows. Variational layers use the given
    /// noise, or their means when `noise` is `None`.
    pub fn forward(&self, x: ArrayView2<'_, T>, noise: Option<&NetworkNoise<T>>) -> Result<Array2<T>> {
        if let Some(n) = noise {
            self.check_noise(n)?;
        }
        let mut h: Option<Array2<T>> = None;
        for (i, layer) in self.layers.iter().enumerate() {
            let input = h.as_ref().map_or(x.view(), |a| a.view());
            let out = match &layer.params {
                LayerParams::Dense(d) => d.forward_batch(input, layer.activation)?,
                LayerParams::Variational(v) => {
                    let point = match noise.and_then(|n| n.layers[i].as_ref()) {
                        Some(eps) => v.sample(eps)?,
                        None => v.mean_layer(),
                    };
                    point.forward_batch(input, layer.activation)?
                }
            };
            h = Some(out);
        }
        Ok(h.expect("non-empty"))
    }

    /// Records the forward pass on `tape` so it can be differentiated.
    pub fn record(&self, tape: &mut Tape<T>, x: Array2<T>, noise: &NetworkNoise<T>) -> Result<NetworkRecord> {
        self.check_noise(noise)?;
        if x.ncols() != self.input_dim() {
            return Err(Error::dims(format!("{} input columns", self.input_dim()), x.ncols()));
        }
        let input = tape.leaf(x);
        let mut h = input;
        let mut params = Vec::new();
        let mut sampled = Vec::new();
        for (layer, eps) in self.layers.iter().zip(&noise.layers) {
            let (w, b) = match &layer.params {
                LayerParams::Dense(d) => {
                    let w = tape.leaf(d.weight.clone());
                    let b = tape.leaf(row(&d.bias));
                    params.extend([w, b]);
                    (w, b)
                }
                LayerParams::Variational(v) => {
                    let eps = eps.as_ref().expect("checked");
                    let wm = tape.leaf(v.weight_mu.clone());
                    let wr = tape.leaf(v.weight_rho.clone());
                    let bm = tape.leaf(row(&v.bias_mu));
                    let br = tape.leaf(row(&v.bias_rho));
                    params.extend([wm, wr, bm, br]);
                    let w = tape.reparam(wm, wr, eps.weight.clone())?;
                    let b = tape.reparam(bm, br, row(&eps.bias))?;
                    sampled.push(SampledNodes { value: w, mu: wm, rho: wr });
                    sampled.push(SampledNodes { value: b, mu: bm, rho: br });
                    (w, b)
                }
            };
            let z = tape.matmul(h, w)?;
            let z = tape.add_bias(z, b)?;
            h = match layer.activation {
                Activation::Linear => z,
                Activation::Relu => tape.relu(z),
                Activation::LeakyRelu => tape.leaky_relu(z, T::of(super::layers::LEAKY_SLOPE)),
            };
        }
        Ok(NetworkRecord {
            input,
            output: h,
            params,
            sampled,
        })
    }

    /// Element counts of each parameter tensor, in [`Self::params_mut`] order.
    pub fn param_lens(&self) -> Vec<usize> {
        self.layers
            .iter()
            .flat_map(|l| match &l.params {
                LayerParams::Dense(d) => vec![d.weight.len(), d.bias.len()],
                LayerParams::Variational(v) => vec![
                    v.weight_mu.len(),
                    v.weight_rho.len(),
                    v.bias_mu.len(),
                    v.bias_rho.len(),
                ],
            })
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.param_lens().iter().sum()
    }

    /// Mutable row-major views of every parameter tensor: `weight, bias` for
    /// dense layers and `weight_mu, weight_rho, bias_mu, bias_rho` for
    /// variational layers.
    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match &mut layer.params {
                LayerParams::Dense(d) => {
                    out.push(d.weight.as_slice_mut().expect("standard layout"));
                    out.push(d.bias.as_slice_mut().expect("contiguous"));
                }
                LayerParams::Variational(v) => {
                    out.push(v.weight_mu.as_slice_mut().expect("standard layout"));
                    out.push(v.weight_rho.as_slice_mut().expect("standard layout"));
                    out.push(v.bias_mu.as_slice_mut().expect("contiguous"));
                    out.push(v.bias_rho.as_slice_mut().expect("contiguous"));
                }
            }
        }
        out
    }

    /// Copy of every parameter, flattened in [`Self::params_mut`] order.
    pub fn flat_params(&self) -> Vec<T> {
        self.clone().params_mut().into_iter().flat_map(|s| s.to_vec()).collect()
    }
}

/// Records a forward pass with the given noise and back-propagates
/// `upstream` (the adjoint of the network output). Returns the output and
/// the parameter gradients.
pub fn backward<T: Scalar>(
    network: &Network<T>,
    input: Array2<T>,
    noise: &NetworkNoise<T>,
    upstream: Array2<T>,
) -> Result<(Array2<T>, NetworkGrads<T>)> {
    let mut tape = Tape::new();
    let rec = network.record(&mut tape, input, noise)?;
    let grads = tape.backward(rec.output, upstream)?;
    let out = tape.value(rec.output).clone();
    Ok((out, rec.collect_grads(&grads, &network.param_lens())))
}

// ---------------------------------------------------------------------------
// Serialized form
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct NetworkFile<T> {
    pub version: u32,
    pub layers: Vec<LayerRecord<T>>,
}

/// One layer with its parameters flattened row-major (`inputs × outputs`).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", bound = "T: Scalar")]
pub enum LayerRecord<T> {
    Deterministic {
        activation: Activation,
        inputs: usize,
        outputs: usize,
        weight: Vec<T>,
        bias: Vec<T>,
    },
    Variational {
        activation: Activation,
        inputs: usize,
        outputs: usize,
        weight_mu: Vec<T>,
        weight_rho: Vec<T>,
        bias_mu: Vec<T>,
        bias_rho: Vec<T>,
    },
}

impl<T: Scalar> From<Network<T>> for NetworkFile<T> {
    fn from(net: Network<T>) -> Self {
        let flat2 = |a: &Array2<T>| a.iter().copied().collect::<Vec<_>>();
        let layers = net
            .layers
            .iter()
            .map(|l| match &l.params {
                LayerParams::Dense(d) => LayerRecord::Deterministic {
                    activation: l.activation,
                    inputs: d.inputs(),
                    outputs: d.outputs(),
                    weight: flat2(&d.weight),
                    bias: d.bias.to_vec(),
                },
                LayerParams::Variational(v) => LayerRecord::Variational {
                    activation: l.activation,
                    inputs: v.inputs(),
                    outputs: v.outputs(),
                    weight_mu: flat2(&v.weight_mu),
                    weight_rho: flat2(&v.weight_rho),
                    bias_mu: v.bias_mu.to_vec(),
                    bias_rho: v.bias_rho.to_vec(),
                },
            })
            .collect();
        NetworkFile {
            version: NETWORK_FORMAT_VERSION,
            layers,
        }
    }
}

impl<T: Scalar> TryFrom<NetworkFile<T>> for Network<T> {
    type Error = Error;

    fn try_from(file: NetworkFile<T>) -> Result<Self> {
        if file.version != NETWORK_FORMAT_VERSION {
            return Err(Error::UnsupportedVersion(file.version));
        }
        let mat = |data: Vec<T>, r: usize, c: usize| {
            Array2::from_shape_vec((r, c), data).map_err(|e| Error::InvalidArgument(e.to_string()))
        };
        let vec = |data: Vec<T>, n: usize| {
            if data.len() == n {
                Ok(Array1::from(data))
            } else {
                Err(Error::dims(n, data.len()))
            }
        };
        let layers = file
            .layers
            .into_iter()
            .map(|rec| {
                Ok(match rec {
                    LayerRecord::Deterministic {
                        activation,
                        inputs,
                        outputs,
                        weight,
                        bias,
                    } => Layer {
                        activation,
                        params: LayerParams::Dense(DenseLayer {
                            weight: mat(weight, inputs, outputs)?,
                            bias: vec(bias, outputs)?,
                        }),
                    },
                    LayerRecord::Variational {
                        activation,
                        inputs,
                        outputs,
                        weight_mu,
                        weight_rho,
                        bias_mu,
                        bias_rho,
                    } => Layer {
                        activation,
                        params: LayerParams::Variational(VariationalLayer {
                            weight_mu: mat(weight_mu, inputs, outputs)?,
                            weight_rho: mat(weight_rho, inputs, outputs)?,
                            bias_mu: vec(bias_mu, outputs)?,
                            bias_rho: vec(bias_rho, outputs)?,
                        }),
                    },
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Network::new(layers)
    }
}
