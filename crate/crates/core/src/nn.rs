//! Parameterized layers and the [`Module`] parameter-visiting trait.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::graph::{Graph, NodeId};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Seeded generator used for parameter initialization and sampling.
pub type SeedRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SeedRng {
    use rand::SeedableRng;
    ChaCha8Rng::seed_from_u64(seed)
}

/// Anything owning named trainable tensors.
///
/// Both methods must list parameters in the same deterministic order.
pub trait Module<T: Scalar> {
    fn params(&self) -> Vec<(String, &Tensor<T>)>;
    fn params_mut(&mut self) -> Vec<(String, &mut Tensor<T>)>;

    fn num_params(&self) -> usize {
        self.params().iter().map(|(_, t)| t.numel()).sum()
    }
}

pub(crate) fn prefixed<'a, T: Scalar>(
    prefix: &str,
    items: Vec<(String, &'a Tensor<T>)>,
) -> impl Iterator<Item = (String, &'a Tensor<T>)> + 'a {
    let prefix = prefix.to_string();
    items.into_iter().map(move |(n, t)| (format!("{prefix}.{n}"), t))
}

pub(crate) fn prefixed_mut<'a, T: Scalar>(
    prefix: &str,
    items: Vec<(String, &'a mut Tensor<T>)>,
) -> impl Iterator<Item = (String, &'a mut Tensor<T>)> + 'a {
    let prefix = prefix.to_string();
    items.into_iter().map(move |(n, t)| (format!("{prefix}.{n}"), t))
}

pub fn uniform<T: Scalar>(rng: &mut SeedRng, shape: &[usize], bound: f64) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::c(rng.gen_range(-bound..=bound)))
}

/// Affine map over the last axis.
#[derive(Clone, Debug)]
pub struct Linear<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> Linear<T> {
    /// Uniform `+-1/sqrt(din)` weights scaled by `gain`, zero bias.
    pub fn new(rng: &mut SeedRng, din: usize, dout: usize, gain: f64) -> Self {
        let bound = gain / (din as f64).sqrt();
        Self {
            weight: uniform(rng, &[din, dout], bound),
            bias: Tensor::zeros(&[dout]),
        }
    }

    pub fn din(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn dout(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn forward<'p>(&'p self, g: &mut Graph<'p, T>, x: NodeId) -> Result<NodeId> {
        let w = g.param(&self.weight);
        let b = g.param(&self.bias);
        g.linear(x, w, b)
    }
}

impl<T: Scalar> Module<T> for Linear<T> {
    fn params(&self) -> Vec<(String, &Tensor<T>)> {
        vec![("weight".into(), &self.weight), ("bias".into(), &self.bias)]
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        vec![
            ("weight".into(), &mut self.weight),
            ("bias".into(), &mut self.bias),
        ]
    }
}

/// Layer normalization over the channel (last) axis.
#[derive(Clone, Debug)]
pub struct LayerNorm<T> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

impl<T: Scalar> LayerNorm<T> {
    pub fn new(d: usize) -> Self {
        Self {
            gamma: Tensor::full(&[d], T::one()),
            beta: Tensor::zeros(&[d]),
        }
    }

    pub fn forward<'p>(&'p self, g: &mut Graph<'p, T>, x: NodeId) -> Result<NodeId> {
        let gamma = g.param(&self.gamma);
        let beta = g.param(&self.beta);
        g.layer_norm(x, gamma, beta)
    }
}

impl<T: Scalar> Module<T> for LayerNorm<T> {
    fn params(&self) -> Vec<(String, &Tensor<T>)> {
        vec![("gamma".into(), &self.gamma), ("beta".into(), &self.beta)]
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        vec![
            ("gamma".into(), &mut self.gamma),
            ("beta".into(), &mut self.beta),
        ]
    }
}

/// Convolution with weight `[kf, ks, ks, cin, cout]`; see [`crate::kernels::conv`].
#[derive(Clone, Debug)]
pub struct Conv<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> Conv<T> {
    pub fn new(rng: &mut SeedRng, kf: usize, ks: usize, cin: usize, cout: usize, gain: f64) -> Self {
        let fan_in = kf * ks * ks * cin;
        let bound = gain / (fan_in as f64).sqrt();
        Self {
            weight: uniform(rng, &[kf, ks, ks, cin, cout], bound),
            bias: Tensor::zeros(&[cout]),
        }
    }

    pub fn frame_kernel(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward<'p>(&'p self, g: &mut Graph<'p, T>, x: NodeId) -> Result<NodeId> {
        let w = g.param(&self.weight);
        let b = g.param(&self.bias);
        g.conv3d(x, w, b)
    }
}

impl<T: Scalar> Module<T> for Conv<T> {
    fn params(&self) -> Vec<(String, &Tensor<T>)> {
        vec![("weight".into(), &self.weight), ("bias".into(), &self.bias)]
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        vec![
            ("weight".into(), &mut self.weight),
            ("bias".into(), &mut self.bias),
        ]
    }
}
