//! Motion decoder: progressive upsampling pathway and dual-path fusion head.

use crate::encoder::{FeatureMap, LEVELS, PATCH};
use crate::error::{shape_err, Error, Result};
use crate::graph::{Graph, NodeId};
use crate::kernels::dense::Activation;
use crate::nn::{prefixed, prefixed_mut, Conv, Module, SeedRng};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Spatial kernel of every decoder convolution.
const KS: usize = 3;
/// Bound of the uniform init of the last convolution.
const HEAD_INIT: f64 = 1e-5;

/// Dense displacement field in pixels, stored `[2, H, W]`; channel 0 is the
/// column (x) displacement, channel 1 the row (y) displacement.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionField<T> {
    pub u: Tensor<T>,
}

impl<T: Scalar> MotionField<T> {
    pub fn new(u: Tensor<T>) -> Result<Self> {
        if u.ndim() != 3 || u.shape()[0] != 2 {
            return Err(shape_err(format!("motion field must be [2, H, W], got {:?}", u.shape())));
        }
        Ok(Self { u })
    }

    pub fn zeros(h: usize, w: usize) -> Self {
        Self {
            u: Tensor::zeros(&[2, h, w]),
        }
    }

    /// Builds a field from a closure returning `(u_x, u_y)` at `(row, col)`.
    pub fn from_fn(h: usize, w: usize, f: impl Fn(usize, usize) -> (T, T)) -> Self {
        let mut u = Tensor::zeros(&[2, h, w]);
        for y in 0..h {
            for x in 0..w {
                let (ux, uy) = f(y, x);
                u.data_mut()[y * w + x] = ux;
                u.data_mut()[h * w + y * w + x] = uy;
            }
        }
        Self { u }
    }

    /// From a channel-last `[H, W, 2]` or `[1, H, W, 2]` tensor.
    pub fn from_channels_last(t: &Tensor<T>) -> Result<Self> {
        let s = t.shape();
        let (h, w) = match s {
            [h, w, 2] | [1, h, w, 2] => (*h, *w),
            _ => return Err(shape_err(format!("expected [H, W, 2], got {s:?}"))),
        };
        let hw = t.clone().reshape(&[1, h * w, 2])?.channels_to_second();
        Self::new(hw.reshape(&[2, h, w])?)
    }

    /// `[H, W, 2]`.
    pub fn channels_last(&self) -> Tensor<T> {
        let (h, w) = (self.height(), self.width());
        let t = self.u.clone().reshape(&[1, 2, h * w]).expect("same size");
        t.channels_to_last().reshape(&[h, w, 2]).expect("same size")
    }

    pub fn height(&self) -> usize {
        self.u.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.u.shape()[2]
    }

    #[inline]
    pub fn ux(&self, y: usize, x: usize) -> T {
        self.u.data()[y * self.width() + x]
    }

    #[inline]
    pub fn uy(&self, y: usize, x: usize) -> T {
        self.u.data()[(self.height() + y) * self.width() + x]
    }

    /// Per-pixel displacement magnitude, row-major.
    pub fn magnitudes(&self) -> Vec<T> {
        let n = self.height() * self.width();
        let d = self.u.data();
        (0..n).map(|i| (d[i] * d[i] + d[n + i] * d[n + i]).sqrt()).collect()
    }
}

/// Fused full-resolution motion features `F_M`, channel-last `[N_f, H, W, C]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionFeature<T> {
    pub data: Tensor<T>,
}

/// Progressive upsampling pathway: coarse-to-fine ×2 bilinear upsampling, skip
/// concatenation, 3x3 convolution and SiLU; finally ×4 back to full resolution.
#[derive(Clone, Debug)]
pub struct Pup<T> {
    /// `fuse[i]` produces level `i + 1` channels; index 3 is unused.
    pub fuse: Vec<Conv<T>>,
}

impl<T: Scalar> Pup<T> {
    pub fn new(rng: &mut SeedRng, c_base: usize) -> Self {
        let fuse = (1..LEVELS)
            .map(|level| {
                let c = c_base << (level - 1);
                Conv::new(rng, 1, KS, 3 * c, c, 1.0)
            })
            .collect();
        Self { fuse }
    }

    pub fn forward<'p>(&'p self, g: &mut Graph<'p, T>, feats: &[NodeId; LEVELS]) -> Result<NodeId> {
        let mut x = feats[LEVELS - 1];
        for level in (0..LEVELS - 1).rev() {
            let skip = feats[level];
            let up = g.upsample(x, 2)?;
            if g.shape(up)[..3] != g.shape(skip)[..3] {
                return Err(shape_err(format!(
                    "level {} features {:?} do not match upsampled {:?}",
                    level + 1,
                    g.shape(skip),
                    g.shape(up)
                )));
            }
            let cat = g.concat(up, skip)?;
            let y = self.fuse[level].forward(g, cat)?;
            x = g.act(y, Activation::Silu);
        }
        g.upsample(x, PATCH)
    }

    /// Value-level evaluation.
    pub fn eval(&self, feats: &[FeatureMap<T>; LEVELS]) -> Result<MotionFeature<T>> {
        let mut g = Graph::new();
        let ids = std::array::from_fn(|i| g.input(feats[i].data.clone()));
        let y = self.forward(&mut g, &ids)?;
        Ok(MotionFeature {
            data: g.value(y).clone(),
        })
    }
}

impl<T: Scalar> Module<T> for Pup<T> {
    fn params(&self) -> Vec<(String, &Tensor<T>)> {
        self.fuse
            .iter()
            .enumerate()
            .flat_map(|(i, c)| prefixed(&format!("fuse{}", i + 1), c.params()))
            .collect()
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        self.fuse
            .iter_mut()
            .enumerate()
            .flat_map(|(i, c)| prefixed_mut(&format!("fuse{}", i + 1), c.params_mut()))
            .collect()
    }
}

/// Frame kernels of the two 3D layers for a window of `n` frames and the
/// number of frames left after them.
pub fn frame_schedule(n: usize) -> ([usize; 2], usize) {
    let k1 = n.clamp(1, 3);
    let n1 = n + 1 - k1;
    let k2 = n1.clamp(1, 3);
    ([k1, k2], n1 + 1 - k2)
}

/// Dual-path fusion head: independent 3D stacks over the frame-ordered and
/// frame-reversed motion features, averaged, then two 2D convolutions to a
/// two-channel field.
#[derive(Clone, Debug)]
pub struct Dfh<T> {
    pub window: usize,
    pub fwd: Vec<Conv<T>>,
    pub bwd: Vec<Conv<T>>,
    pub head: Conv<T>,
    pub out: Conv<T>,
}

impl<T: Scalar> Dfh<T> {
    pub fn new(rng: &mut SeedRng, c: usize, window: usize) -> Self {
        let (kernels, _) = frame_schedule(window);
        let stack = |rng: &mut SeedRng| -> Vec<Conv<T>> {
            kernels.iter().map(|&k| Conv::new(rng, k, KS, c, c, 1.0)).collect()
        };
        let fwd = stack(rng);
        let bwd = stack(rng);
        let mid = (c / 2).max(1);
        let head = Conv::new(rng, 1, KS, c, mid, 1.0);
        let mut out = Conv::new(rng, 1, KS, mid, 2, 1.0);
        for v in out.weight.data_mut() {
            *v = *v * T::c(HEAD_INIT * ((KS * KS * mid) as f64).sqrt());
        }
        Self {
            window,
            fwd,
            bwd,
            head,
            out,
        }
    }

    fn path<'p>(stack: &'p [Conv<T>], g: &mut Graph<'p, T>, x: NodeId) -> Result<NodeId> {
        let mut x = x;
        for conv in stack {
            let y = conv.forward(g, x)?;
            x = g.act(y, Activation::Silu);
        }
        if g.shape(x)[0] > 1 {
            x = g.mean_frames(x);
        }
        Ok(x)
    }

    /// `fm: [N_f, H, W, C]` to a `[1, H, W, 2]` field.
    pub fn forward<'p>(&'p self, g: &mut Graph<'p, T>, fm: NodeId) -> Result<NodeId> {
        let n = g.shape(fm)[0];
        if n != self.window {
            return Err(Error::UnsupportedWindow {
                expected: self.window,
                got: n,
            });
        }
        let a = Self::path(&self.fwd, g, fm)?;
        let rev = g.flip_frames(fm);
        let b = Self::path(&self.bwd, g, rev)?;
        let sum = g.add(a, b)?;
        let avg = g.scale(sum, T::c(0.5));
        let h = self.head.forward(g, avg)?;
        let h = g.act(h, Activation::Silu);
        self.out.forward(g, h)
    }

    pub fn eval(&self, fm: &MotionFeature<T>) -> Result<MotionField<T>> {
        let mut g = Graph::new();
        let x = g.input(fm.data.clone());
        let y = self.forward(&mut g, x)?;
        MotionField::from_channels_last(g.value(y))
    }

    /// Forward 3D path only, after frame collapse; exposed for symmetry checks.
    pub fn forward_path(&self, fm: &MotionFeature<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let x = g.input(fm.data.clone());
        let y = Self::path(&self.fwd, &mut g, x)?;
        Ok(g.value(y).clone())
    }

    /// Averaged 3D features before the 2D convolutions.
    pub fn fused(&self, fm: &MotionFeature<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let x = g.input(fm.data.clone());
        let a = Self::path(&self.fwd, &mut g, x)?;
        let rev = g.flip_frames(x);
        let b = Self::path(&self.bwd, &mut g, rev)?;
        let sum = g.add(a, b)?;
        let avg = g.scale(sum, T::c(0.5));
        Ok(g.value(avg).clone())
    }
}

impl<T: Scalar> Module<T> for Dfh<T> {
    fn params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut v = Vec::new();
        for (i, c) in self.fwd.iter().enumerate() {
            v.extend(prefixed(&format!("fwd{i}"), c.params()));
        }
        for (i, c) in self.bwd.iter().enumerate() {
            v.extend(prefixed(&format!("bwd{i}"), c.params()));
        }
        v.extend(prefixed("head", self.head.params()));
        v.extend(prefixed("out", self.out.params()));
        v
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut v = Vec::new();
        for (i, c) in self.fwd.iter_mut().enumerate() {
            v.extend(prefixed_mut(&format!("fwd{i}"), c.params_mut()));
        }
        for (i, c) in self.bwd.iter_mut().enumerate() {
            v.extend(prefixed_mut(&format!("bwd{i}"), c.params_mut()));
        }
        v.extend(prefixed_mut("head", self.head.params_mut()));
        v.extend(prefixed_mut("out", self.out.params_mut()));
        v
    }
}

#[derive(Clone, Debug)]
pub struct Decoder<T> {
    pub pup: Pup<T>,
    pub dfh: Dfh<T>,
}

impl<T: Scalar> Decoder<T> {
    pub fn new(rng: &mut SeedRng, c_base: usize, window: usize) -> Self {
        Self {
            pup: Pup::new(rng, c_base),
            dfh: Dfh::new(rng, c_base, window),
        }
    }

    pub fn forward<'p>(&'p self, g: &mut Graph<'p, T>, feats: &[NodeId; LEVELS]) -> Result<NodeId> {
        let fm = self.pup.forward(g, feats)?;
        self.dfh.forward(g, fm)
    }
}

impl<T: Scalar> Module<T> for Decoder<T> {
    fn params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut v: Vec<_> = prefixed("pup", self.pup.params()).collect();
        v.extend(prefixed("dfh", self.dfh.params()));
        v
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut v: Vec<_> = prefixed_mut("pup", self.pup.params_mut()).collect();
        v.extend(prefixed_mut("dfh", self.dfh.params_mut()));
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_schedules() {
        assert_eq!(frame_schedule(5), ([3, 3], 1));
        assert_eq!(frame_schedule(3), ([3, 1], 1));
        assert_eq!(frame_schedule(1), ([1, 1], 1));
        assert_eq!(frame_schedule(2), ([2, 1], 1));
        assert_eq!(frame_schedule(7), ([3, 3], 3));
    }

    #[test]
    fn motion_field_layout_round_trip() {
        let f = MotionField::<f64>::from_fn(3, 4, |y, x| (x as f64, -(y as f64)));
        assert_eq!(f.ux(2, 3), 3.0);
        assert_eq!(f.uy(2, 3), -2.0);
        let cl = f.channels_last();
        assert_eq!(cl.shape(), &[3, 4, 2]);
        assert_eq!(cl.data()[(2 * 4 + 3) * 2 + 1], -2.0);
        assert_eq!(MotionField::from_channels_last(&cl).unwrap(), f);
    }
}
