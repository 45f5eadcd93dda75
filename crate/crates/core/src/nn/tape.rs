//! Reverse-mode differentiation over a recorded tape of matrix operations.
//!
//! Every value on the tape is a 2-D array; scalars are `1 × 1`. Nodes are
//! appended in evaluation order, so a single reverse sweep over the node
//! list visits every node after all of its consumers.

use ndarray::{Array2, Axis, Zip};

use crate::error::{Error, Result};
use crate::scalar::{sigmoid, softplus, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    MatMul(NodeId, NodeId),
    /// `a (n×k) + b (1×k)` broadcast over rows.
    AddBias(NodeId, NodeId),
    /// `max(x, 0) + slope · min(x, 0)`
    Relu(NodeId, T),
    Softplus(NodeId),
    /// `mu + softplus(rho) ⊙ eps`
    Reparam {
        mu: NodeId,
        rho: NodeId,
        eps: Array2<T>,
    },
    Column(NodeId, usize),
    AddScalar(NodeId),
    Add(NodeId, NodeId),
    Scale(NodeId, T),
    Sum(NodeId),
    /// `Σ ln σ + (y-μ)² / (2σ²)`
    GaussianNll {
        mean: NodeId,
        std: NodeId,
        target: Array2<T>,
    },
    /// `mean((p - y)²)`
    MeanSquaredError { pred: NodeId, target: Array2<T> },
    /// `Σ log N(x | mean, std)` with every argument on the tape.
    LogDensity { x: NodeId, mean: NodeId, std: NodeId },
    /// `Σ log N(x | mean, std)` with constant mean and std.
    LogDensityConst { x: NodeId, mean: T, std: T },
}

/// `ln σ + (y − μ)² / (2σ²)`, shared with `model::nll_loss` so both sum identically.
pub(crate) fn nll_term<T: Scalar>(mean: T, std: T, y: T) -> T {
    let z = (y - mean) / std;
    std.ln() + T::of(0.5) * z * z
}

#[derive(Debug, Clone)]
struct Node<T> {
    op: Op<T>,
    value: Array2<T>,
}

#[derive(Debug, Clone, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Adjoints for every node reached by a backward sweep.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Option<Array2<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, id: NodeId) -> Option<&Array2<T>> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }
}

fn half_ln_2pi<T: Scalar>() -> T {
    T::of(0.5 * (2.0 * std::f64::consts::PI).ln())
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Array2<T> {
        &self.nodes[id.0].value
    }

    /// Value of a `1 × 1` node.
    pub fn scalar(&self, id: NodeId) -> T {
        self.nodes[id.0].value[[0, 0]]
    }

    fn push(&mut self, op: Op<T>, value: Array2<T>) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    fn shape(&self, id: NodeId) -> (usize, usize) {
        self.nodes[id.0].value.dim()
    }

    fn same_shape(&self, a: NodeId, b: NodeId) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dims(format!("{:?}", self.shape(a)), format!("{:?}", self.shape(b))));
        }
        Ok(())
    }

    /// Input, parameter or constant.
    pub fn leaf(&mut self, value: Array2<T>) -> NodeId {
        self.push(Op::Leaf, value)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (_, k) = self.shape(a);
        let (k2, _) = self.shape(b);
        if k != k2 {
            return Err(Error::dims(format!("inner dimension {k}"), format!("inner dimension {k2}")));
        }
        let v = self.value(a).dot(self.value(b));
        Ok(self.push(Op::MatMul(a, b), v))
    }

    pub fn add_bias(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        let (_, k) = self.shape(a);
        if self.shape(bias) != (1, k) {
            return Err(Error::dims(format!("bias (1, {k})"), format!("{:?}", self.shape(bias))));
        }
        let v = self.value(a) + self.value(bias);
        Ok(self.push(Op::AddBias(a, bias), v))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.leaky_relu(a, T::zero())
    }

    /// Identity for positive inputs, `slope · x` otherwise.
    pub fn leaky_relu(&mut self, a: NodeId, slope: T) -> NodeId {
        let v = self.value(a).mapv(|x| if x > T::zero() { x } else { slope * x });
        self.push(Op::Relu(a, slope), v)
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(softplus);
        self.push(Op::Softplus(a), v)
    }

    /// Reparameterized draw `mu + softplus(rho) ⊙ eps`.
    pub fn reparam(&mut self, mu: NodeId, rho: NodeId, eps: Array2<T>) -> Result<NodeId> {
        self.same_shape(mu, rho)?;
        if eps.dim() != self.shape(mu) {
            return Err(Error::dims(format!("{:?}", self.shape(mu)), format!("{:?}", eps.dim())));
        }
        let mut v = self.value(mu).clone();
        Zip::from(&mut v)
            .and(self.value(rho))
            .and(&eps)
            .for_each(|w, &r, &e| *w = *w + softplus(r) * e);
        Ok(self.push(Op::Reparam { mu, rho, eps }, v))
    }

    pub fn column(&mut self, a: NodeId, j: usize) -> Result<NodeId> {
        let (_, k) = self.shape(a);
        if j >= k {
            return Err(Error::dims(format!("column < {k}"), j));
        }
        let v = self.value(a).column(j).to_owned().insert_axis(Axis(1));
        Ok(self.push(Op::Column(a, j), v))
    }

    pub fn add_scalar(&mut self, a: NodeId, c: T) -> NodeId {
        let v = self.value(a).mapv(|x| x + c);
        self.push(Op::AddScalar(a), v)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b)?;
        let v = self.value(a) + self.value(b);
        Ok(self.push(Op::Add(a, b), v))
    }

    pub fn scale(&mut self, a: NodeId, c: T) -> NodeId {
        let v = self.value(a).mapv(|x| x * c);
        self.push(Op::Scale(a, c), v)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s = self.value(a).sum();
        self.push(Op::Sum(a), Array2::from_elem((1, 1), s))
    }

    /// Gaussian negative log likelihood without the constant term.
    pub fn gaussian_nll(&mut self, mean: NodeId, std: NodeId, target: Array2<T>) -> Result<NodeId> {
        self.same_shape(mean, std)?;
        if target.dim() != self.shape(mean) {
            return Err(Error::dims(format!("{:?}", self.shape(mean)), format!("{:?}", target.dim())));
        }
        let mut total = T::zero();
        Zip::from(self.value(mean))
            .and(self.value(std))
            .and(&target)
            .for_each(|&m, &s, &y| total += nll_term(m, s, y));
        Ok(self.push(
            Op::GaussianNll { mean, std, target },
            Array2::from_elem((1, 1), total),
        ))
    }

    pub fn mean_squared_error(&mut self, pred: NodeId, target: Array2<T>) -> Result<NodeId> {
        if target.dim() != self.shape(pred) {
            return Err(Error::dims(format!("{:?}", self.shape(pred)), format!("{:?}", target.dim())));
        }
        let n = T::from_usize(target.len()).unwrap();
        let mut total = T::zero();
        Zip::from(self.value(pred))
            .and(&target)
            .for_each(|&p, &y| total = total + (p - y) * (p - y));
        Ok(self.push(
            Op::MeanSquaredError { pred, target },
            Array2::from_elem((1, 1), total / n),
        ))
    }

    pub fn log_density(&mut self, x: NodeId, mean: NodeId, std: NodeId) -> Result<NodeId> {
        self.same_shape(x, mean)?;
        self.same_shape(x, std)?;
        let (c, half) = (half_ln_2pi::<T>(), T::of(0.5));
        let mut total = T::zero();
        Zip::from(self.value(x))
            .and(self.value(mean))
            .and(self.value(std))
            .for_each(|&x, &m, &s| {
                let z = (x - m) / s;
                total = total - s.ln() - c - half * z * z;
            });
        Ok(self.push(Op::LogDensity { x, mean, std }, Array2::from_elem((1, 1), total)))
    }

    pub fn log_density_const(&mut self, x: NodeId, mean: T, std: T) -> NodeId {
        let (c, half) = (half_ln_2pi::<T>(), T::of(0.5));
        let ln_s = std.ln();
        let total = self.value(x).fold(T::zero(), |acc, &x| {
            let z = (x - mean) / std;
            acc - ln_s - c - half * z * z
        });
        self.push(
            Op::LogDensityConst { x, mean, std },
            Array2::from_elem((1, 1), total),
        )
    }

    /// Reverse sweep from a `1 × 1` node with unit seed.
    pub fn backward_scalar(&self, output: NodeId) -> Result<Gradients<T>> {
        self.backward(output, Array2::from_elem((1, 1), T::one()))
    }

    /// Reverse sweep from `output` with the given upstream adjoint.
    pub fn backward(&self, output: NodeId, upstream: Array2<T>) -> Result<Gradients<T>> {
        if output.0 >= self.nodes.len() {
            return Err(Error::BackwardBeforeForward);
        }
        if upstream.dim() != self.shape(output) {
            return Err(Error::dims(format!("{:?}", self.shape(output)), format!("{:?}", upstream.dim())));
        }
        let mut grads: Vec<Option<Array2<T>>> = vec![None; output.0 + 1];
        grads[output.0] = Some(upstream);

        fn accumulate<T: Scalar>(slot: &mut Option<Array2<T>>, g: Array2<T>) {
            match slot {
                Some(acc) => *acc += &g,
                None => *slot = Some(g),
            }
        }

        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    accumulate(&mut grads[a.0], ga);
                    accumulate(&mut grads[b.0], gb);
                }
                Op::AddBias(a, b) => {
                    let gb = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut grads[b.0], gb);
                    accumulate(&mut grads[a.0], g.clone());
                }
                Op::Relu(a, slope) => {
                    let mut ga = g.clone();
                    Zip::from(&mut ga).and(self.value(*a)).for_each(|d, &x| {
                        if x <= T::zero() {
                            *d *= *slope;
                        }
                    });
                    accumulate(&mut grads[a.0], ga);
                }
                Op::Softplus(a) => {
                    let mut ga = g.clone();
                    Zip::from(&mut ga)
                        .and(self.value(*a))
                        .for_each(|d, &x| *d = *d * sigmoid(x));
                    accumulate(&mut grads[a.0], ga);
                }
                Op::Reparam { mu, rho, eps } => {
                    let mut grho = g.clone();
                    Zip::from(&mut grho)
                        .and(self.value(*rho))
                        .and(eps)
                        .for_each(|d, &r, &e| *d = *d * e * sigmoid(r));
                    accumulate(&mut grads[rho.0], grho);
                    accumulate(&mut grads[mu.0], g.clone());
                }
                Op::Column(a, j) => {
                    let mut ga = Array2::zeros(self.shape(*a));
                    ga.column_mut(*j).assign(&g.column(0));
                    accumulate(&mut grads[a.0], ga);
                }
                Op::AddScalar(a) => accumulate(&mut grads[a.0], g.clone()),
                Op::Add(a, b) => {
                    accumulate(&mut grads[a.0], g.clone());
                    accumulate(&mut grads[b.0], g.clone());
                }
                Op::Scale(a, c) => accumulate(&mut grads[a.0], g.mapv(|d| d * *c)),
                Op::Sum(a) => {
                    let up = g[[0, 0]];
                    accumulate(&mut grads[a.0], Array2::from_elem(self.shape(*a), up));
                }
                Op::GaussianNll { mean, std, target } => {
                    let up = g[[0, 0]];
                    let mut gm = Array2::zeros(target.dim());
                    let mut gs = Array2::zeros(target.dim());
                    Zip::from(&mut gm)
                        .and(&mut gs)
                        .and(self.value(*mean))
                        .and(self.value(*std))
                        .and(target)
                        .for_each(|dm, ds, &m, &s, &y| {
                            let r = y - m;
                            let s2 = s * s;
                            *dm = -up * r / s2;
                            *ds = up * (T::one() / s - r * r / (s2 * s));
                        });
                    accumulate(&mut grads[mean.0], gm);
                    accumulate(&mut grads[std.0], gs);
                }
                Op::MeanSquaredError { pred, target } => {
                    let up = g[[0, 0]];
                    let k = T::of(2.0) / T::from_usize(target.len()).unwrap();
                    let mut gp = self.value(*pred) - target;
                    gp.mapv_inplace(|r| r * k * up);
                    accumulate(&mut grads[pred.0], gp);
                }
                Op::LogDensity { x, mean, std } => {
                    let up = g[[0, 0]];
                    let shape = self.shape(*x);
                    let mut gx = Array2::zeros(shape);
                    let mut gm = Array2::zeros(shape);
                    let mut gs = Array2::zeros(shape);
                    Zip::from(&mut gx)
                        .and(&mut gm)
                        .and(&mut gs)
                        .and(self.value(*x))
                        .and(self.value(*mean))
                        .and(self.value(*std))
                        .for_each(|dx, dm, ds, &x, &m, &s| {
                            let r = x - m;
                            let s2 = s * s;
                            *dx = -up * r / s2;
                            *dm = up * r / s2;
                            *ds = up * (r * r / (s2 * s) - T::one() / s);
                        });
                    accumulate(&mut grads[x.0], gx);
                    accumulate(&mut grads[mean.0], gm);
                    accumulate(&mut grads[std.0], gs);
                }
                Op::LogDensityConst { x, mean, std } => {
                    let up = g[[0, 0]];
                    let s2 = *std * *std;
                    let gx = self.value(*x).mapv(|x| -up * (x - *mean) / s2);
                    accumulate(&mut grads[x.0], gx);
                }
            }
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }
}
