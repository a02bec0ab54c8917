//! Tape-based reverse-mode differentiation over coarse tensor operations.
//!
//! Operations evaluate eagerly when recorded. [`Graph::backward`] walks the
//! tape in reverse and calls each operation's adjoint kernel. Parameters are
//! borrowed from their owning module for the lifetime of the graph and keyed
//! by address, so gradients can be looked up with the same reference.

use std::collections::HashMap;
use std::marker::PhantomData;

use crate::error::{shape_err, Error, Result};
use crate::kernels::conv::{self, ConvDims};
use crate::kernels::dense::{self, Activation};
use crate::kernels::resample;
use crate::kernels::scan::{self, ScanDims, ScanInputs};
use crate::kernels::warp;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Add(NodeId, NodeId),
    Scale(NodeId, T),
    Linear {
        x: NodeId,
        w: NodeId,
        b: NodeId,
    },
    LayerNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Act(NodeId, Activation),
    SpaceToDepth(NodeId, usize),
    FlipFrames(NodeId),
    Scan {
        x: NodeId,
        delta: NodeId,
        a_log: NodeId,
        b: NodeId,
        c: NodeId,
        d_skip: NodeId,
        dims: ScanDims,
        states: Vec<T>,
    },
    Upsample(NodeId, usize),
    Concat(NodeId, NodeId),
    Conv3d {
        x: NodeId,
        w: NodeId,
        b: NodeId,
        dims: ConvDims,
    },
    MeanFrames(NodeId),
    Reshape(NodeId),
    Warp {
        img: NodeId,
        flow: NodeId,
    },
    Mse(NodeId, NodeId),
    Smooth(NodeId),
    WeightedSum(NodeId, Vec<T>),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// A recording of tensor operations for one forward evaluation.
pub struct Graph<'p, T: Scalar> {
    nodes: Vec<Node<T>>,
    params: HashMap<usize, NodeId>,
    _borrow: PhantomData<&'p Tensor<T>>,
}

impl<T: Scalar> Default for Graph<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

fn key<T>(t: &Tensor<T>) -> usize {
    t as *const Tensor<T> as usize
}

impl<'p, T: Scalar> Graph<'p, T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
            _borrow: PhantomData,
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Bytes held by recorded activations (including cached intermediates).
    pub fn activation_bytes(&self) -> usize {
        self.nodes
            .iter()
            .map(|n| {
                let cached = match &n.op {
                    Op::LayerNorm { xhat, rstd, .. } => xhat.len() + rstd.len(),
                    Op::Scan { states, .. } => states.len(),
                    _ => 0,
                };
                (n.value.numel() + cached) * T::WIDTH
            })
            .sum()
    }

    /// Adds a constant (or differentiable input) leaf.
    pub fn input(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Leaf)
    }

    /// Adds a parameter leaf; repeated calls with the same tensor share one node.
    pub fn param(&mut self, p: &'p Tensor<T>) -> NodeId {
        if let Some(&id) = self.params.get(&key(p)) {
            return id;
        }
        let id = self.push(p.clone(), Op::Leaf);
        self.params.insert(key(p), id);
        id
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(shape_err(format!("add {:?} + {:?}", va.shape(), vb.shape())));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x + y).collect();
        let out = Tensor::from_vec(va.shape(), data)?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn scale(&mut self, a: NodeId, s: T) -> NodeId {
        let out = self.value(a).map(|v| v * s);
        self.push(out, Op::Scale(a, s))
    }

    /// Affine map over the last axis with `w: [din, dout]`, `b: [dout]`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (vx, vw, vb) = (self.value(x), self.value(w), self.value(b));
        let din = vx.last_dim();
        if vw.ndim() != 2 || vw.shape()[0] != din || vb.numel() != vw.shape()[1] {
            return Err(Error::ChannelMismatch {
                expected: vw.shape()[0],
                got: din,
            });
        }
        let dout = vw.shape()[1];
        let y = dense::linear_forward(vx.data(), vw.data(), vb.data(), din, dout);
        let mut shape = vx.shape().to_vec();
        *shape.last_mut().unwrap() = dout;
        let out = Tensor::from_vec(&shape, y)?;
        Ok(self.push(out, Op::Linear { x, w, b }))
    }

    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId) -> Result<NodeId> {
        let (vx, vg, vb) = (self.value(x), self.value(gamma), self.value(beta));
        let d = vx.last_dim();
        if vg.numel() != d || vb.numel() != d {
            return Err(Error::ChannelMismatch {
                expected: vg.numel(),
                got: d,
            });
        }
        let (y, xhat, rstd) = dense::layer_norm_forward(vx.data(), vg.data(), vb.data(), d);
        let out = Tensor::from_vec(vx.shape(), y)?;
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
        ))
    }

    pub fn act(&mut self, x: NodeId, kind: Activation) -> NodeId {
        let out = self.value(x).map(|v| kind.apply(v));
        self.push(out, Op::Act(x, kind))
    }

    /// `[F, H, W, C] -> [F, H/p, W/p, p*p*C]`.
    pub fn space_to_depth(&mut self, x: NodeId, p: usize) -> Result<NodeId> {
        let vx = self.value(x);
        let dims = dims4(vx.shape())?;
        if p == 0 || dims[1] % p != 0 || dims[2] % p != 0 {
            return Err(Error::NotDivisible(format!(
                "{}x{} by patch {}",
                dims[1], dims[2], p
            )));
        }
        let y = resample::space_to_depth(vx.data(), dims, p);
        let out = Tensor::from_vec(&[dims[0], dims[1] / p, dims[2] / p, p * p * dims[3]], y)?;
        Ok(self.push(out, Op::SpaceToDepth(x, p)))
    }

    pub fn flip_frames(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).flip_leading();
        self.push(out, Op::FlipFrames(x))
    }

    /// Selective scan along the leading axis; see [`crate::kernels::scan`].
    ///
    /// `x`, `delta`: `[L, .., D]`; `b`, `c`: `[L, .., N]`; `a_log`: `[D, N]`;
    /// `d_skip`: `[D]`.
    pub fn scan(
        &mut self,
        x: NodeId,
        delta: NodeId,
        a_log: NodeId,
        b: NodeId,
        c: NodeId,
        d_skip: NodeId,
    ) -> Result<NodeId> {
        let vx = self.value(x);
        let va = self.value(a_log);
        if vx.numel() == 0 || vx.ndim() < 2 {
            return Err(Error::EmptySequence);
        }
        let len = vx.shape()[0];
        let d = vx.last_dim();
        if va.ndim() != 2 || va.shape()[0] != d {
            return Err(Error::ChannelMismatch {
                expected: va.shape()[0],
                got: d,
            });
        }
        let n = va.shape()[1];
        let positions = vx.numel() / (len * d);
        let dims = ScanDims {
            len,
            positions,
            channels: d,
            state: n,
        };
        let vd = self.value(delta);
        let (vb, vc, vs) = (self.value(b), self.value(c), self.value(d_skip));
        if vd.shape() != vx.shape()
            || vb.numel() != len * positions * n
            || vc.numel() != len * positions * n
            || vs.numel() != d
        {
            return Err(shape_err("scan operand shapes disagree"));
        }
        let inputs = ScanInputs {
            x: vx.data(),
            delta: vd.data(),
            a_log: va.data(),
            b: vb.data(),
            c: vc.data(),
            d_skip: vs.data(),
        };
        let (y, states) = scan::scan_forward(&inputs, dims);
        let out = Tensor::from_vec(vx.shape(), y)?;
        Ok(self.push(
            out,
            Op::Scan {
                x,
                delta,
                a_log,
                b,
                c,
                d_skip,
                dims,
                states,
            },
        ))
    }

    /// Bilinear spatial upsampling of `[F, H, W, C]` by an integer factor.
    pub fn upsample(&mut self, x: NodeId, factor: usize) -> Result<NodeId> {
        let vx = self.value(x);
        let dims = dims4(vx.shape())?;
        let y = resample::upsample_forward(vx.data(), dims, factor);
        let out = Tensor::from_vec(&[dims[0], dims[1] * factor, dims[2] * factor, dims[3]], y)?;
        Ok(self.push(out, Op::Upsample(x, factor)))
    }

    pub fn concat(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        let (sa, sb) = (va.shape(), vb.shape());
        if sa.len() != sb.len() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
            return Err(shape_err(format!("concat {sa:?} with {sb:?}")));
        }
        let (ca, cb) = (va.last_dim(), vb.last_dim());
        let y = resample::concat_last(va.data(), vb.data(), ca, cb);
        let mut shape = sa.to_vec();
        *shape.last_mut().unwrap() = ca + cb;
        let out = Tensor::from_vec(&shape, y)?;
        Ok(self.push(out, Op::Concat(a, b)))
    }

    /// `x: [F, H, W, Cin]`, `w: [kf, ks, ks, Cin, Cout]`, `b: [Cout]`.
    pub fn conv3d(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (vx, vw, vb) = (self.value(x), self.value(w), self.value(b));
        let [f, h, wd, cin] = dims4(vx.shape())?;
        let ws = vw.shape();
        if ws.len() != 5 || ws[3] != cin || vb.numel() != ws[4] {
            return Err(Error::ChannelMismatch {
                expected: ws.get(3).copied().unwrap_or(0),
                got: cin,
            });
        }
        if ws[0] > f || ws[0] == 0 {
            return Err(shape_err(format!("frame kernel {} exceeds {} frames", ws[0], f)));
        }
        let dims = ConvDims {
            frames: f,
            height: h,
            width: wd,
            cin,
            cout: ws[4],
            kf: ws[0],
            ks: ws[1],
        };
        let y = conv::conv3d_forward(vx.data(), vw.data(), vb.data(), dims);
        let out = Tensor::from_vec(&[dims.out_frames(), h, wd, dims.cout], y)?;
        Ok(self.push(out, Op::Conv3d { x, w, b, dims }))
    }

    /// Mean over the leading axis, keeping it as a singleton.
    pub fn mean_frames(&mut self, x: NodeId) -> NodeId {
        let vx = self.value(x);
        let f = vx.shape()[0];
        let mut shape = vx.shape().to_vec();
        shape[0] = 1;
        let y = resample::mean_leading(vx.data(), f);
        let out = Tensor::from_vec(&shape, y).expect("mean keeps inner size");
        self.push(out, Op::MeanFrames(x))
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let out = self.value(x).clone().reshape(shape)?;
        Ok(self.push(out, Op::Reshape(x)))
    }

    /// Pull-warps `img: [H, W]` by `flow: [H, W, 2]`.
    pub fn warp(&mut self, img: NodeId, flow: NodeId) -> Result<NodeId> {
        let (vi, vf) = (self.value(img), self.value(flow));
        let s = vi.shape();
        if s.len() != 2 || vf.shape() != [s[0], s[1], 2] {
            return Err(shape_err(format!("warp image {:?} by field {:?}", s, vf.shape())));
        }
        let y = warp::warp_forward(vi.data(), vf.data(), s[0], s[1]);
        let out = Tensor::from_vec(s, y)?;
        Ok(self.push(out, Op::Warp { img, flow }))
    }

    pub fn mse(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(shape_err(format!("mse {:?} vs {:?}", va.shape(), vb.shape())));
        }
        let v = warp::mse_forward(va.data(), vb.data());
        Ok(self.push(Tensor::scalar(v), Op::Mse(a, b)))
    }

    /// Squared-gradient penalty of a `[H, W, C]` field.
    pub fn smooth(&mut self, flow: NodeId) -> Result<NodeId> {
        let vf = self.value(flow);
        let s = vf.shape();
        if s.len() != 3 {
            return Err(shape_err(format!("smoothness expects [H, W, C], got {s:?}")));
        }
        let v = warp::smooth_forward(vf.data(), s[0], s[1], s[2]);
        Ok(self.push(Tensor::scalar(v), Op::Smooth(flow)))
    }

    /// `sum_i weights[i] * x[i]`.
    pub fn weighted_sum(&mut self, x: NodeId, weights: Vec<T>) -> Result<NodeId> {
        let vx = self.value(x);
        if vx.numel() != weights.len() {
            return Err(shape_err("weighted_sum length"));
        }
        let v = vx.data().iter().zip(&weights).map(|(&a, &b)| a * b).sum();
        Ok(self.push(Tensor::scalar(v), Op::WeightedSum(x, weights)))
    }

    /// Reverse-mode sweep from a scalar node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<T>> {
        if self.value(loss).numel() != 1 {
            return Err(shape_err("backward needs a scalar output"));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), T::one()));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        grads.resize_with(self.nodes.len(), || None);
        Ok(Gradients {
            grads,
            params: self.params.clone(),
        })
    }

    fn propagate(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let mut acc = |id: NodeId, data: Vec<T>| -> Result<()> {
            let shape = self.value(id).shape();
            match &mut grads[id.0] {
                Some(t) => {
                    for (a, b) in t.data_mut().iter_mut().zip(&data) {
                        *a += *b;
                    }
                }
                slot @ None => *slot = Some(Tensor::from_vec(shape, data)?),
            }
            Ok(())
        };
        let gd = g.data();
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, gd.to_vec())?;
                acc(*b, gd.to_vec())?;
            }
            Op::Scale(a, s) => acc(*a, gd.iter().map(|&v| v * *s).collect())?,
            Op::Linear { x, w, b } => {
                let (vx, vw) = (self.value(*x), self.value(*w));
                let (din, dout) = (vw.shape()[0], vw.shape()[1]);
                let (gx, gw, gb) = dense::linear_backward(vx.data(), vw.data(), gd, din, dout);
                acc(*x, gx)?;
                acc(*w, gw)?;
                acc(*b, gb)?;
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let vg = self.value(*gamma);
                let (gx, gg, gb) =
                    dense::layer_norm_backward(gd, xhat, rstd, vg.data(), vg.numel());
                acc(*x, gx)?;
                acc(*gamma, gg)?;
                acc(*beta, gb)?;
            }
            Op::Act(x, kind) => {
                let vx = self.value(*x);
                let gx = vx
                    .data()
                    .iter()
                    .zip(gd)
                    .map(|(&v, &g)| g * kind.derivative(v))
                    .collect();
                acc(*x, gx)?;
            }
            Op::SpaceToDepth(x, p) => {
                let dims = dims4(self.value(*x).shape())?;
                acc(*x, resample::depth_to_space(gd, dims, *p))?;
            }
            Op::FlipFrames(x) => acc(*x, g.flip_leading().into_data())?,
            Op::Scan {
                x,
                delta,
                a_log,
                b,
                c,
                d_skip,
                dims,
                states,
            } => {
                let inputs = ScanInputs {
                    x: self.value(*x).data(),
                    delta: self.value(*delta).data(),
                    a_log: self.value(*a_log).data(),
                    b: self.value(*b).data(),
                    c: self.value(*c).data(),
                    d_skip: self.value(*d_skip).data(),
                };
                let sg = scan::scan_backward(&inputs, states, gd, *dims);
                acc(*x, sg.x)?;
                acc(*delta, sg.delta)?;
                acc(*a_log, sg.a_log)?;
                acc(*b, sg.b)?;
                acc(*c, sg.c)?;
                acc(*d_skip, sg.d_skip)?;
            }
            Op::Upsample(x, factor) => {
                let dims = dims4(self.value(*x).shape())?;
                acc(*x, resample::upsample_backward(gd, dims, *factor))?;
            }
            Op::Concat(a, b) => {
                let (ca, cb) = (self.value(*a).last_dim(), self.value(*b).last_dim());
                let (ga, gb) = resample::split_last(gd, ca, cb);
                acc(*a, ga)?;
                acc(*b, gb)?;
            }
            Op::Conv3d { x, w, b, dims } => {
                let (gx, gw, gb) =
                    conv::conv3d_backward(self.value(*x).data(), self.value(*w).data(), gd, *dims);
                acc(*x, gx)?;
                acc(*w, gw)?;
                acc(*b, gb)?;
            }
            Op::MeanFrames(x) => {
                let f = self.value(*x).shape()[0];
                let s = T::one() / T::c(f as f64);
                let mut gx = Vec::with_capacity(gd.len() * f);
                for _ in 0..f {
                    gx.extend(gd.iter().map(|&v| v * s));
                }
                acc(*x, gx)?;
            }
            Op::Reshape(x) => acc(*x, gd.to_vec())?,
            Op::Warp { img, flow } => {
                let vi = self.value(*img);
                let (h, w) = (vi.shape()[0], vi.shape()[1]);
                let (gi, gf) = warp::warp_backward(vi.data(), self.value(*flow).data(), gd, h, w);
                acc(*img, gi)?;
                acc(*flow, gf)?;
            }
            Op::Mse(a, b) => {
                let (ga, gb) =
                    warp::mse_backward(self.value(*a).data(), self.value(*b).data(), gd[0]);
                acc(*a, ga)?;
                acc(*b, gb)?;
            }
            Op::Smooth(flow) => {
                let vf = self.value(*flow);
                let s = vf.shape();
                acc(*flow, warp::smooth_backward(vf.data(), s[0], s[1], s[2], gd[0]))?;
            }
            Op::WeightedSum(x, weights) => {
                acc(*x, weights.iter().map(|&w| w * gd[0]).collect())?;
            }
        }
        Ok(())
    }
}

fn dims4(shape: &[usize]) -> Result<[usize; 4]> {
    shape
        .try_into()
        .map_err(|_| shape_err(format!("expected [F, H, W, C], got {shape:?}")))
}

/// Gradients produced by [`Graph::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    params: HashMap<usize, NodeId>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the loss w.r.t. a node, `None` if the loss does not depend on it.
    pub fn wrt(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    /// Gradient w.r.t. a parameter registered via [`Graph::param`].
    pub fn wrt_param(&self, p: &Tensor<T>) -> Option<&Tensor<T>> {
        self.params.get(&key(p)).and_then(|&id| self.wrt(id))
    }

    /// Like [`Gradients::wrt_param`] but zero-filled when the parameter was unused.
    pub fn param_or_zero(&self, p: &Tensor<T>) -> Tensor<T> {
        self.wrt_param(p)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(p.shape()))
    }
}
