//! Selective state-space scans and the bi-directional scanning operator.
//!
//! Each spatial position of a `[F, H, W, D]` feature map is treated as its own
//! length-`F` token sequence. The forward SSM reads frames `0..F`, the backward
//! SSM reads them in reverse with independent parameters, and the two outputs
//! are summed in the original frame order.

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::kernels::dense::{softplus, softplus_inv, Activation};
use crate::nn::{prefixed, prefixed_mut, Linear, Module, SeedRng};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Learned parameters of one selective SSM acting on `D`-channel tokens with
/// `d_state` hidden states per channel.
#[derive(Clone, Debug)]
pub struct SsmParams<T> {
    /// `[D, d_state]`; the state matrix is `A = -exp(a_log)`.
    pub a_log: Tensor<T>,
    /// `D -> D`, softplus applied afterwards.
    pub dt_proj: Linear<T>,
    /// `D -> d_state`.
    pub b_proj: Linear<T>,
    /// `D -> d_state`.
    pub c_proj: Linear<T>,
    /// `[D]`.
    pub d_skip: Tensor<T>,
}

/// Discretized per-token coefficients.
#[derive(Clone, Debug)]
pub struct Discretized<T> {
    /// `[D, d_state]`, entries in `(0, 1)`.
    pub a_bar: Tensor<T>,
    /// `[D, d_state]`; multiplies the input channel in the state update.
    pub b_bar: Tensor<T>,
    /// `[d_state]`.
    pub c: Tensor<T>,
}

/// A length-`L` sequence of `D`-channel tokens, stored `[L, D]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenSequence<T> {
    pub x: Tensor<T>,
}

impl<T: Scalar> TokenSequence<T> {
    pub fn new(x: Tensor<T>) -> Result<Self> {
        if x.ndim() != 2 || x.numel() == 0 {
            return Err(Error::EmptySequence);
        }
        Ok(Self { x })
    }

    pub fn len(&self) -> usize {
        self.x.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channels(&self) -> usize {
        self.x.shape()[1]
    }

    pub fn reversed(&self) -> Self {
        Self {
            x: self.x.flip_leading(),
        }
    }
}

impl<T: Scalar> SsmParams<T> {
    /// Stable initialization: `A` spans `-1..-d_state` per channel and the
    /// initial step size is log-uniform in `[0.01, 0.1]`.
    pub fn new(rng: &mut SeedRng, d: usize, d_state: usize) -> Self {
        let a_log = Tensor::from_fn(&[d, d_state], |i| T::c(((i % d_state) + 1) as f64).ln());
        let mut dt_proj = Linear::new(rng, d, d, 0.1);
        let (lo, hi) = (0.01f64.ln(), 0.1f64.ln());
        for b in dt_proj.bias.data_mut() {
            let dt = rng.gen_range(lo..=hi).exp();
            *b = T::c(softplus_inv(dt));
        }
        Self {
            a_log,
            dt_proj,
            b_proj: Linear::new(rng, d, d_state, 0.5),
            c_proj: Linear::new(rng, d, d_state, 0.5),
            d_skip: Tensor::full(&[d], T::one()),
        }
    }

    /// Fully random parameters for tests; every entry is drawn from `+-scale`.
    pub fn random(rng: &mut SeedRng, d: usize, d_state: usize, scale: f64) -> Self {
        let mut p = Self::new(rng, d, d_state);
        for (_, t) in p.params_mut() {
            for v in t.data_mut() {
                *v = T::c(rng.gen_range(-scale..=scale));
            }
        }
        p
    }

    pub fn channels(&self) -> usize {
        self.a_log.shape()[0]
    }

    pub fn d_state(&self) -> usize {
        self.a_log.shape()[1]
    }

    /// `A = -exp(a_log)`.
    pub fn state_matrix(&self) -> Tensor<T> {
        self.a_log.map(|v| -v.exp())
    }

    /// Step size, input-scaled Euler term and readout for one token.
    pub fn discretize(&self, token: &[T]) -> Result<Discretized<T>> {
        let d = self.channels();
        let n = self.d_state();
        if token.len() != d {
            return Err(Error::ChannelMismatch {
                expected: d,
                got: token.len(),
            });
        }
        if token.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        let affine = |l: &Linear<T>| -> Vec<T> {
            crate::kernels::dense::linear_forward(token, l.weight.data(), l.bias.data(), d, l.dout())
        };
        let delta: Vec<T> = affine(&self.dt_proj).into_iter().map(softplus).collect();
        let b = affine(&self.b_proj);
        let c = affine(&self.c_proj);
        let a = self.state_matrix();
        let a_bar = Tensor::from_fn(&[d, n], |i| (delta[i / n] * a.data()[i]).exp());
        let b_bar = Tensor::from_fn(&[d, n], |i| delta[i / n] * b[i % n]);
        Ok(Discretized {
            a_bar,
            b_bar,
            c: Tensor::from_vec(&[n], c)?,
        })
    }

    /// Records the forward-direction scan of `x: [L, .., D]` along axis 0.
    pub fn forward<'p>(&'p self, g: &mut Graph<'p, T>, x: NodeId) -> Result<NodeId> {
        let d = g.value(x).last_dim();
        if d != self.channels() {
            return Err(Error::ChannelMismatch {
                expected: self.channels(),
                got: d,
            });
        }
        let dt = self.dt_proj.forward(g, x)?;
        let delta = g.act(dt, Activation::Softplus);
        let b = self.b_proj.forward(g, x)?;
        let c = self.c_proj.forward(g, x)?;
        let a_log = g.param(&self.a_log);
        let d_skip = g.param(&self.d_skip);
        g.scan(x, delta, a_log, b, c, d_skip)
    }

    /// Records the scan over the time-reversed input, re-reversed to input order.
    pub fn forward_reversed<'p>(&'p self, g: &mut Graph<'p, T>, x: NodeId) -> Result<NodeId> {
        let rev = g.flip_frames(x);
        let y = self.forward(g, rev)?;
        Ok(g.flip_frames(y))
    }
}

impl<T: Scalar> Module<T> for SsmParams<T> {
    fn params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut v = vec![("a_log".to_string(), &self.a_log)];
        v.extend(prefixed("dt_proj", self.dt_proj.params()));
        v.extend(prefixed("b_proj", self.b_proj.params()));
        v.extend(prefixed("c_proj", self.c_proj.params()));
        v.push(("d_skip".to_string(), &self.d_skip));
        v
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut v = vec![("a_log".to_string(), &mut self.a_log)];
        v.extend(prefixed_mut("dt_proj", self.dt_proj.params_mut()));
        v.extend(prefixed_mut("b_proj", self.b_proj.params_mut()));
        v.extend(prefixed_mut("c_proj", self.c_proj.params_mut()));
        v.push(("d_skip".to_string(), &mut self.d_skip));
        v
    }
}

fn check_sequence<T: Scalar>(seq: &TokenSequence<T>) -> Result<()> {
    if seq.is_empty() {
        return Err(Error::EmptySequence);
    }
    if !seq.x.is_finite() {
        return Err(Error::NonFinite);
    }
    Ok(())
}

/// Forward-direction selective scan of one token sequence.
pub fn scan_forward<T: Scalar>(
    seq: &TokenSequence<T>,
    params: &SsmParams<T>,
) -> Result<TokenSequence<T>> {
    check_sequence(seq)?;
    let mut g = Graph::new();
    let x = g.input(seq.x.clone());
    let y = params.forward(&mut g, x)?;
    Ok(TokenSequence {
        x: g.value(y).clone(),
    })
}

/// Scan of the time-reversed sequence, returned in the original order.
pub fn scan_backward<T: Scalar>(
    seq: &TokenSequence<T>,
    params: &SsmParams<T>,
) -> Result<TokenSequence<T>> {
    check_sequence(seq)?;
    let mut g = Graph::new();
    let x = g.input(seq.x.clone());
    let y = params.forward_reversed(&mut g, x)?;
    Ok(TokenSequence {
        x: g.value(y).clone(),
    })
}

/// Bi-directional scanning operator with independent forward/backward SSMs.
#[derive(Clone, Debug)]
pub struct Bism<T> {
    pub forward: SsmParams<T>,
    pub backward: SsmParams<T>,
}

impl<T: Scalar> Bism<T> {
    pub fn new(rng: &mut SeedRng, d: usize, d_state: usize) -> Self {
        Self {
            forward: SsmParams::new(rng, d, d_state),
            backward: SsmParams::new(rng, d, d_state),
        }
    }

    pub fn channels(&self) -> usize {
        self.forward.channels()
    }

    /// `x: [F, H, W, D]` (any `[F, .., D]`); output has the same shape.
    pub fn apply<'p>(&'p self, g: &mut Graph<'p, T>, x: NodeId) -> Result<NodeId> {
        let yf = self.forward.forward(g, x)?;
        let yb = self.backward.forward_reversed(g, x)?;
        g.add(yf, yb)
    }

    /// Value-level evaluation on a channel-last tensor `[F, H, W, D]`.
    pub fn eval(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        if !x.is_finite() {
            return Err(Error::NonFinite);
        }
        let mut g = Graph::new();
        let id = g.input(x.clone());
        let y = self.apply(&mut g, id)?;
        Ok(g.value(y).clone())
    }

    /// The same operator with the two directions exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            forward: self.backward.clone(),
            backward: self.forward.clone(),
        }
    }
}

impl<T: Scalar> Module<T> for Bism<T> {
    fn params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut v: Vec<_> = prefixed("fwd", self.forward.params()).collect();
        v.extend(prefixed("bwd", self.backward.params()));
        v
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut v: Vec<_> = prefixed_mut("fwd", self.forward.params_mut()).collect();
        v.extend(prefixed_mut("bwd", self.backward.params_mut()));
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::seeded;

    fn random_seq(rng: &mut SeedRng, l: usize, d: usize) -> TokenSequence<f64> {
        TokenSequence::new(Tensor::from_fn(&[l, d], |_| rng.gen_range(-1.0..1.0))).unwrap()
    }

    #[test]
    fn zero_token_gives_ln2_step() {
        let mut rng = seeded(3);
        let mut p = SsmParams::<f64>::new(&mut rng, 4, 3);
        p.dt_proj.bias.fill(0.0);
        let disc = p.discretize(&[0.0; 4]).unwrap();
        // a_bar = exp(ln2 * A) with A = -(n+1)
        for ch in 0..4 {
            for s in 0..3 {
                let want = (std::f64::consts::LN_2 * -((s + 1) as f64)).exp();
                assert!((disc.a_bar.data()[ch * 3 + s] - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn a_bar_lies_in_unit_interval() {
        let mut rng = seeded(5);
        let p = SsmParams::<f64>::random(&mut rng, 3, 4, 2.0);
        for _ in 0..20 {
            let tok: Vec<f64> = (0..3).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let d = p.discretize(&tok).unwrap();
            assert!(d.a_bar.data().iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn discretize_scalar_channel_by_hand() {
        let mut rng = seeded(11);
        let p = SsmParams::<f64>::random(&mut rng, 1, 2, 1.0);
        let tok = [0.37];
        let d = p.discretize(&tok).unwrap();
        let pre = p.dt_proj.weight.data()[0] * 0.37 + p.dt_proj.bias.data()[0];
        let delta = (1.0 + pre.exp()).ln();
        for s in 0..2 {
            let a = -p.a_log.data()[s].exp();
            assert!((d.a_bar.data()[s] - (delta * a).exp()).abs() < 1e-14);
            let b = p.b_proj.weight.data()[s] * 0.37 + p.b_proj.bias.data()[s];
            assert!((d.b_bar.data()[s] - delta * b).abs() < 1e-14);
        }
    }

    #[test]
    fn non_finite_token_is_rejected() {
        let p = SsmParams::<f64>::new(&mut seeded(0), 2, 2);
        assert!(matches!(p.discretize(&[f64::NAN, 0.0]), Err(Error::NonFinite)));
        let seq = TokenSequence::new(Tensor::from_vec(&[1, 2], vec![f64::INFINITY, 0.0]).unwrap())
            .unwrap();
        assert!(matches!(scan_forward(&seq, &p), Err(Error::NonFinite)));
    }

    #[test]
    fn empty_sequence_is_rejected() {
        assert!(matches!(
            TokenSequence::<f64>::new(Tensor::zeros(&[0, 3])),
            Err(Error::EmptySequence)
        ));
    }

    #[test]
    fn zero_input_zero_bias_gives_zero_output() {
        let mut p = SsmParams::<f64>::new(&mut seeded(1), 3, 4);
        p.dt_proj.bias.fill(0.0);
        p.b_proj.bias.fill(0.0);
        let seq = TokenSequence::new(Tensor::zeros(&[6, 3])).unwrap();
        let y = scan_forward(&seq, &p).unwrap();
        assert!(y.x.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_step_unrolls_by_hand() {
        let mut rng = seeded(2);
        let p = SsmParams::<f64>::random(&mut rng, 2, 3, 1.0);
        let seq = random_seq(&mut rng, 1, 2);
        let y = scan_forward(&seq, &p).unwrap();
        let tok = &seq.x.data()[..2];
        let d = p.discretize(tok).unwrap();
        for ch in 0..2 {
            let mut want = p.d_skip.data()[ch] * tok[ch];
            for s in 0..3 {
                want += d.c.data()[s] * d.b_bar.data()[ch * 3 + s] * tok[ch];
            }
            assert!((y.x.data()[ch] - want).abs() < 1e-14);
        }
        assert_eq!(scan_backward(&seq, &p).unwrap(), y);
    }

    #[test]
    fn palindrome_with_shared_params_mirrors() {
        let mut rng = seeded(4);
        let p = SsmParams::<f64>::random(&mut rng, 3, 2, 1.0);
        let half = random_seq(&mut rng, 3, 3);
        let mut rows = half.x.data().to_vec();
        rows.extend_from_slice(&half.x.data()[..6]);
        // frames a b c b a
        let mut pal = half.x.data().to_vec();
        pal.extend_from_slice(&rows[3..6]);
        pal.extend_from_slice(&rows[0..3]);
        let seq = TokenSequence::new(Tensor::from_vec(&[5, 3], pal).unwrap()).unwrap();
        assert_eq!(seq.reversed(), seq);
        let f = scan_forward(&seq, &p).unwrap();
        let b = scan_backward(&seq, &p).unwrap();
        assert_eq!(b.x, f.x.flip_leading());
    }

    #[test]
    fn bism_rejects_channel_mismatch() {
        let b = Bism::<f64>::new(&mut seeded(0), 4, 2);
        let x = Tensor::zeros(&[3, 2, 2, 5]);
        assert!(matches!(b.eval(&x), Err(Error::ChannelMismatch { .. })));
    }
}
