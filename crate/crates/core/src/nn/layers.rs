use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{softplus, softplus_inv, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Linear,
    Relu,
    /// Slope [`LEAKY_SLOPE`] for negative inputs.
    LeakyRelu,
}

pub const LEAKY_SLOPE: f64 = 0.01;

impl Activation {
    #[inline]
    pub fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Linear => x,
            Activation::Relu => x.max(T::zero()),
            Activation::LeakyRelu => {
                if x > T::zero() {
                    x
                } else {
                    T::of(LEAKY_SLOPE) * x
                }
            }
        }
    }
}

/// Gaussian prior shared by every uncertain weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub mean: f64,
    pub std: f64,
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self { mean: 0.0, std: 1.0 }
    }
}

impl PriorSpec {
    pub fn new(mean: f64, std: f64) -> Result<Self> {
        if !(std > 0.0) || !mean.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "prior needs finite mean and positive std, got N({mean}, {std})"
            )));
        }
        Ok(Self { mean, std })
    }
}

/// `log N(x | mean, std)`.
pub fn gaussian_log_density<T: Scalar>(x: T, mean: T, std: T) -> Result<T> {
    if !(std > T::zero()) {
        return Err(Error::InvalidArgument(format!("std must be positive, got {std}")));
    }
    let z = (x - mean) / std;
    Ok(-std.ln() - T::of(0.5 * (2.0 * std::f64::consts::PI).ln()) - T::of(0.5) * z * z)
}

/// Point-weight affine layer: `x · W + b` with `W` stored `in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer<T> {
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Scalar> DenseLayer<T> {
    pub fn new(weight: Array2<T>, bias: Array1<T>) -> Result<Self> {
        if weight.ncols() != bias.len() {
            return Err(Error::dims(
                format!("bias of length {}", weight.ncols()),
                format!("length {}", bias.len()),
            ));
        }
        Ok(Self { weight, bias })
    }

    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Array2::zeros((inputs, outputs)),
            bias: Array1::zeros(outputs),
        }
    }

    /// He-style uniform weights `U(-√(6/fan_in), √(6/fan_in))`, zero bias.
    pub fn he_uniform<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        Self {
            weight: he_uniform_matrix(inputs, outputs, rng),
            bias: Array1::zeros(outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.ncols()
    }

    /// `activation(Wᵀx + b)` for a single input vector.
    pub fn forward(&self, x: &[T], activation: Activation) -> Result<Vec<T>> {
        if x.len() != self.inputs() {
            return Err(Error::dims(format!("input of length {}", self.inputs()), x.len()));
        }
        let mut out = self.bias.to_vec();
        for (i, &xi) in x.iter().enumerate() {
            for (o, &w) in out.iter_mut().zip(self.weight.row(i)) {
                *o = *o + xi * w;
            }
        }
        Ok(out.into_iter().map(|v| activation.apply(v)).collect())
    }

    /// Row-batched forward: `activation(X · W + b)`.
    pub fn forward_batch(&self, x: ArrayView2<'_, T>, activation: Activation) -> Result<Array2<T>> {
        if x.ncols() != self.inputs() {
            return Err(Error::dims(format!("{} input columns", self.inputs()), x.ncols()));
        }
        let mut out = x.dot(&self.weight);
        out += &self.bias.view().insert_axis(Axis(0));
        if activation != Activation::Linear {
            out.mapv_inplace(|v| activation.apply(v));
        }
        Ok(out)
    }
}

/// Affine layer whose weights and biases are independent Gaussians
/// `N(mu, softplus(rho)²)`.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalLayer<T> {
    pub weight_mu: Array2<T>,
    pub weight_rho: Array2<T>,
    pub bias_mu: Array1<T>,
    pub bias_rho: Array1<T>,
}

/// Standard-normal draws matching a variational layer's shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNoise<T> {
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Scalar> LayerNoise<T> {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Array2::zeros((inputs, outputs)),
            bias: Array1::zeros(outputs),
        }
    }

    pub fn sample<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let mut draw = || T::of(StandardNormal.sample(rng));
        let weight = Array2::from_shape_simple_fn((inputs, outputs), &mut draw);
        let bias = Array1::from_shape_simple_fn(outputs, &mut draw);
        Self { weight, bias }
    }
}

impl<T: Scalar> VariationalLayer<T> {
    /// He-style uniform means, every `sigma` set to `init_sigma`.
    pub fn he_uniform<R: Rng + ?Sized>(
        inputs: usize,
        outputs: usize,
        init_sigma: f64,
        rng: &mut R,
    ) -> Self {
        let rho = softplus_inv(T::of(init_sigma));
        Self {
            weight_mu: he_uniform_matrix(inputs, outputs, rng),
            weight_rho: Array2::from_elem((inputs, outputs), rho),
            bias_mu: Array1::zeros(outputs),
            bias_rho: Array1::from_elem(outputs, rho),
        }
    }

    /// Deterministic layer at the posterior means.
    pub fn from_mean(dense: &DenseLayer<T>, rho: T) -> Self {
        Self {
            weight_mu: dense.weight.clone(),
            weight_rho: Array2::from_elem(dense.weight.dim(), rho),
            bias_mu: dense.bias.clone(),
            bias_rho: Array1::from_elem(dense.bias.len(), rho),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight_mu.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.weight_mu.ncols()
    }

    pub fn weight_sigma(&self) -> Array2<T> {
        self.weight_rho.mapv(softplus)
    }

    pub fn bias_sigma(&self) -> Array1<T> {
        self.bias_rho.mapv(softplus)
    }

    pub fn mean_layer(&self) -> DenseLayer<T> {
        DenseLayer {
            weight: self.weight_mu.clone(),
            bias: self.bias_mu.clone(),
        }
    }

    /// Reparameterized draw `w = mu + softplus(rho) · eps`.
    pub fn sample(&self, noise: &LayerNoise<T>) -> Result<DenseLayer<T>> {
        if noise.weight.dim() != self.weight_mu.dim() || noise.bias.len() != self.bias_mu.len() {
            return Err(Error::dims(
                format!("noise {:?}/{}", self.weight_mu.dim(), self.bias_mu.len()),
                format!("{:?}/{}", noise.weight.dim(), noise.bias.len()),
            ));
        }
        let mut weight = self.weight_mu.clone();
        Zip::from(&mut weight)
            .and(&self.weight_rho)
            .and(&noise.weight)
            .for_each(|w, &r, &e| *w = *w + softplus(r) * e);
        let mut bias = self.bias_mu.clone();
        Zip::from(&mut bias)
            .and(&self.bias_rho)
            .and(&noise.bias)
            .for_each(|b, &r, &e| *b = *b + softplus(r) * e);
        Ok(DenseLayer { weight, bias })
    }
}

/// Free-function form of [`VariationalLayer::sample`].
pub fn variational_sample<T: Scalar>(
    params: &VariationalLayer<T>,
    noise: &LayerNoise<T>,
) -> Result<DenseLayer<T>> {
    params.sample(noise)
}

fn he_uniform_matrix<T: Scalar, R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Array2<T> {
    let limit = (6.0 / inputs.max(1) as f64).sqrt();
    let dist = Uniform::new_inclusive(-limit, limit).expect("finite bounds");
    Array2::from_shape_simple_fn((inputs, outputs), || T::of(dist.sample(rng)))
}
