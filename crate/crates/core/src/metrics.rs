//! Evaluation metrics: Dice overlap, Jacobian-determinant statistics, label
//! warping, endpoint error and temporal consistency.

use crate::decoder::MotionField;
use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::warp_loss::warp;

/// Integer label map, row-major `H x W`; 0 is background.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMask {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u8>,
}

impl LabelMask {
    pub fn new(height: usize, width: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(shape_err(format!(
                "{} labels for a {height}x{width} mask",
                labels.len()
            )));
        }
        Ok(Self {
            height,
            width,
            labels,
        })
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> u8) -> Self {
        let labels = (0..height * width).map(|i| f(i / width, i % width)).collect();
        Self {
            height,
            width,
            labels,
        }
    }

    pub fn max_label(&self) -> u8 {
        self.labels.iter().copied().max().unwrap_or(0)
    }

    pub fn count(&self, label: u8) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    /// From a float tensor `[H, W]` of label values (as stored in tensor files).
    pub fn from_tensor<T: Scalar>(t: &Tensor<T>) -> Result<Self> {
        let [h, w] = t.shape() else {
            return Err(shape_err(format!("mask must be [H, W], got {:?}", t.shape())));
        };
        let labels = t
            .data()
            .iter()
            .map(|v| {
                let r = v.round();
                if r < T::zero() || r > T::c(255.0) || !r.is_finite() {
                    Err(Error::Invalid(format!("label value {v} out of range")))
                } else {
                    Ok(r.to_u8().unwrap_or(0))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(*h, *w, labels)
    }

    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        Tensor::from_fn(&[self.height, self.width], |i| T::c(self.labels[i] as f64))
    }

    fn same_shape(&self, other: &LabelMask) -> Result<()> {
        if (self.height, self.width) != (other.height, other.width) {
            return Err(shape_err(format!(
                "masks {}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        Ok(())
    }
}

/// `2|A ∩ B| / (|A| + |B|)` for one class; two empty sets score 1.
pub fn dice(a: &LabelMask, b: &LabelMask, label: u8) -> Result<f64> {
    a.same_shape(b)?;
    let (mut inter, mut na, mut nb) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.labels.iter().zip(&b.labels) {
        let (ia, ib) = (x == label, y == label);
        na += ia as usize;
        nb += ib as usize;
        inter += (ia && ib) as usize;
    }
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (na + nb) as f64)
}

/// Determinant of `I + grad u` at interior pixels, `(H-2) x (W-2)` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct JacobianMap {
    pub height: usize,
    pub width: usize,
    pub det: Vec<f64>,
}

/// Central-difference Jacobian determinant of the deformation `x -> x + u(x)`.
pub fn jacobian_det<T: Scalar>(phi: &MotionField<T>) -> Result<JacobianMap> {
    let (h, w) = (phi.height(), phi.width());
    if h < 3 || w < 3 {
        return Err(Error::Invalid(format!(
            "field {h}x{w} too small for central differences"
        )));
    }
    let ux = |y: usize, x: usize| phi.ux(y, x).as_f64();
    let uy = |y: usize, x: usize| phi.uy(y, x).as_f64();
    let mut det = Vec::with_capacity((h - 2) * (w - 2));
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let dux_dx = 0.5 * (ux(y, x + 1) - ux(y, x - 1));
            let dux_dy = 0.5 * (ux(y + 1, x) - ux(y - 1, x));
            let duy_dx = 0.5 * (uy(y, x + 1) - uy(y, x - 1));
            let duy_dy = 0.5 * (uy(y + 1, x) - uy(y - 1, x));
            det.push((1.0 + dux_dx) * (1.0 + duy_dy) - dux_dy * duy_dx);
        }
    }
    Ok(JacobianMap {
        height: h - 2,
        width: w - 2,
        det,
    })
}

/// Folding and volume-change summary of a field.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JacobianStats {
    /// Percentage of interior pixels with `det <= 0`.
    pub neg_pct: f64,
    /// Mean `|det - 1|` over interior pixels.
    pub mean_abs_jm1: f64,
}

pub fn jacobian_metrics<T: Scalar>(phi: &MotionField<T>) -> Result<JacobianStats> {
    let j = jacobian_det(phi)?;
    let n = j.det.len() as f64;
    let neg = j.det.iter().filter(|&&d| d <= 0.0).count() as f64;
    let jm1 = j.det.iter().map(|d| (d - 1.0).abs()).sum::<f64>();
    Ok(JacobianStats {
        neg_pct: 100.0 * neg / n,
        mean_abs_jm1: jm1 / n,
    })
}

/// Warps a label map: one-hot, bilinear warp per class, argmax (ties go to
/// the lowest label).
pub fn warp_labels<T: Scalar>(mask: &LabelMask, phi: &MotionField<T>) -> Result<LabelMask> {
    if (phi.height(), phi.width()) != (mask.height, mask.width) {
        return Err(shape_err(format!(
            "mask {}x{} vs field {}x{}",
            mask.height,
            mask.width,
            phi.height(),
            phi.width()
        )));
    }
    let (h, w) = (mask.height, mask.width);
    let mut best = vec![(T::neg_infinity(), 0u8); h * w];
    for label in 0..=mask.max_label() {
        let one_hot = Tensor::from_fn(&[h, w], |i| {
            if mask.labels[i] == label {
                T::one()
            } else {
                T::zero()
            }
        });
        let warped = warp(&one_hot, phi)?;
        for (b, &v) in best.iter_mut().zip(warped.data()) {
            if v > b.0 {
                *b = (v, label);
            }
        }
    }
    LabelMask::new(h, w, best.into_iter().map(|b| b.1).collect())
}

/// Mean Euclidean distance between two fields, over `mask > 0` when given.
pub fn endpoint_error<T: Scalar>(
    phi: &MotionField<T>,
    gt: &MotionField<T>,
    mask: Option<&LabelMask>,
) -> Result<f64> {
    let (h, w) = (phi.height(), phi.width());
    if (gt.height(), gt.width()) != (h, w) {
        return Err(shape_err("fields differ in size"));
    }
    if let Some(m) = mask {
        if (m.height, m.width) != (h, w) {
            return Err(shape_err("mask differs from field size"));
        }
    }
    let (mut sum, mut n) = (0.0f64, 0usize);
    for y in 0..h {
        for x in 0..w {
            if mask.is_some_and(|m| m.labels[y * w + x] == 0) {
                continue;
            }
            let dx = (phi.ux(y, x) - gt.ux(y, x)).as_f64();
            let dy = (phi.uy(y, x) - gt.uy(y, x)).as_f64();
            sum += dx.hypot(dy);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Invalid("endpoint error over an empty mask".into()));
    }
    Ok(sum / n as f64)
}

/// Per-frame mean displacement magnitude and second-difference roughness.
#[derive(Clone, Debug, PartialEq)]
pub struct TemporalConsistency {
    /// `mean_p |phi_t(p)|` for each frame.
    pub curve: Vec<f64>,
    /// Mean over interior frames and pixels of `|phi_{t+1} - 2 phi_t + phi_{t-1}|`.
    pub tc_index: f64,
}

pub fn temporal_consistency<T: Scalar>(fields: &[MotionField<T>]) -> Result<TemporalConsistency> {
    if fields.len() < 3 {
        return Err(Error::Invalid(format!(
            "temporal consistency needs at least 3 fields, got {}",
            fields.len()
        )));
    }
    let shape = fields[0].u.shape();
    if fields.iter().any(|f| f.u.shape() != shape) {
        return Err(shape_err("fields differ in size"));
    }
    let curve = fields
        .iter()
        .map(|f| {
            let m = f.magnitudes();
            m.iter().map(|v| v.as_f64()).sum::<f64>() / m.len() as f64
        })
        .collect();
    let n = shape[1] * shape[2];
    let mut acc = 0.0;
    for t in 1..fields.len() - 1 {
        let (a, b, c) = (fields[t - 1].u.data(), fields[t].u.data(), fields[t + 1].u.data());
        for p in 0..n {
            let dx = (c[p] - b[p] - b[p] + a[p]).as_f64();
            let dy = (c[n + p] - b[n + p] - b[n + p] + a[n + p]).as_f64();
            acc += dx.hypot(dy);
        }
    }
    Ok(TemporalConsistency {
        curve,
        tc_index: acc / ((fields.len() - 2) * n) as f64,
    })
}
