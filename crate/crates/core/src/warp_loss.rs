//! Bilinear pull-warping and the registration objective
//! `MSE(target, warp(reference, phi)) + lambda * smoothness(phi)`.
//!
//! Both terms are pixel means, so `lambda` does not depend on resolution.

use crate::decoder::MotionField;
use crate::error::{shape_err, Error, Result};
use crate::graph::{Graph, NodeId};
use crate::kernels::warp as k;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Smoothness weight used when none is configured.
pub const DEFAULT_LAMBDA: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub lambda: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda: DEFAULT_LAMBDA,
        }
    }
}

impl LossConfig {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::Invalid(format!("lambda must be >= 0, got {lambda}")));
        }
        Ok(Self { lambda })
    }
}

fn image_dims<T: Scalar>(img: &Tensor<T>) -> Result<(usize, usize)> {
    match img.shape() {
        [h, w] => Ok((*h, *w)),
        s => Err(shape_err(format!("image must be [H, W], got {s:?}"))),
    }
}

/// `out(p) = img(p + u(p))`, bilinear, border-clamped.
pub fn warp<T: Scalar>(img: &Tensor<T>, phi: &MotionField<T>) -> Result<Tensor<T>> {
    let (h, w) = image_dims(img)?;
    if (phi.height(), phi.width()) != (h, w) {
        return Err(shape_err(format!(
            "image {h}x{w} vs field {}x{}",
            phi.height(),
            phi.width()
        )));
    }
    let flow = phi.channels_last();
    Tensor::from_vec(&[h, w], k::warp_forward(img.data(), flow.data(), h, w))
}

pub fn sim_loss<T: Scalar>(target: &Tensor<T>, warped: &Tensor<T>) -> Result<T> {
    if target.shape() != warped.shape() {
        return Err(shape_err(format!(
            "{:?} vs {:?}",
            target.shape(),
            warped.shape()
        )));
    }
    Ok(k::mse_forward(target.data(), warped.data()))
}

pub fn smooth_loss<T: Scalar>(phi: &MotionField<T>) -> T {
    let flow = phi.channels_last();
    k::smooth_forward(flow.data(), phi.height(), phi.width(), 2)
}

pub fn total_loss<T: Scalar>(
    target: &Tensor<T>,
    reference: &Tensor<T>,
    phi: &MotionField<T>,
    cfg: &LossConfig,
) -> Result<T> {
    let warped = warp(reference, phi)?;
    Ok(sim_loss(target, &warped)? + T::c(cfg.lambda) * smooth_loss(phi))
}

/// Node ids of the recorded objective.
#[derive(Clone, Copy, Debug)]
pub struct LossNodes {
    pub total: NodeId,
    pub sim: NodeId,
    pub smooth: NodeId,
}

/// Records the objective for `flow: [H, W, 2]` (or `[1, H, W, 2]`) against
/// `[H, W]` images.
pub fn record_loss<T: Scalar>(
    g: &mut Graph<'_, T>,
    target: NodeId,
    reference: NodeId,
    flow: NodeId,
    cfg: &LossConfig,
) -> Result<LossNodes> {
    let s = g.shape(flow).to_vec();
    let flow = match s.as_slice() {
        [1, h, w, 2] => g.reshape(flow, &[*h, *w, 2])?,
        [_, _, 2] => flow,
        _ => return Err(shape_err(format!("flow must be [H, W, 2], got {s:?}"))),
    };
    let warped = g.warp(reference, flow)?;
    let sim = g.mse(target, warped)?;
    let smooth = g.smooth(flow)?;
    let reg = g.scale(smooth, T::c(cfg.lambda));
    let total = g.add(sim, reg)?;
    Ok(LossNodes { total, sim, smooth })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lambda_must_be_non_negative() {
        assert!(LossConfig::new(-0.1).is_err());
        assert!(LossConfig::new(f64::NAN).is_err());
        assert_eq!(LossConfig::default().lambda, 0.05);
    }

    #[test]
    fn warp_shape_mismatch_is_an_error() {
        let img = Tensor::<f64>::zeros(&[4, 4]);
        assert!(warp(&img, &MotionField::zeros(4, 5)).is_err());
        assert!(sim_loss(&img, &Tensor::zeros(&[4, 5])).is_err());
    }
}
