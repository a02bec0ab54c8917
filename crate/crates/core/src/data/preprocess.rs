use crate::data::ImageSequence;
use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const DEFAULT_CROP: usize = 128;

/// Center-crops `raw: [T, H', W']` to `crop x crop` and min-max normalizes the
/// whole sequence to `[0, 1]`. A constant sequence maps to all zeros.
pub fn preprocess<T: Scalar>(raw: &Tensor<T>, crop: usize) -> Result<ImageSequence<T>> {
    let [frames, h, w] = *raw.shape() else {
        return Err(shape_err(format!(
            "raw sequence must be [T, H, W], got {:?}",
            raw.shape()
        )));
    };
    if frames == 0 {
        return Err(Error::EmptySequence);
    }
    if crop == 0 || h < crop || w < crop {
        return Err(Error::Invalid(format!(
            "frame {h}x{w} smaller than crop {crop}"
        )));
    }
    if !raw.is_finite() {
        return Err(Error::NonFinite);
    }
    let (y0, x0) = ((h - crop) / 2, (w - crop) / 2);
    let mut out = Vec::with_capacity(frames * crop * crop);
    for f in 0..frames {
        for y in 0..crop {
            let row = (f * h + y0 + y) * w + x0;
            out.extend_from_slice(&raw.data()[row..row + crop]);
        }
    }
    let lo = out.iter().copied().fold(T::infinity(), T::min);
    let hi = out.iter().copied().fold(T::neg_infinity(), T::max);
    let span = hi - lo;
    for v in &mut out {
        *v = if span > T::zero() {
            ((*v - lo) / span).max(T::zero()).min(T::one())
        } else {
            T::zero()
        };
    }
    ImageSequence::new(Tensor::from_vec(&[frames, crop, crop], out)?)
}
