//! Image sequences, tensor files, preprocessing and the synthetic phantom.

pub mod mcmt;
pub mod phantom;
pub mod preprocess;

use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub use mcmt::{load_tensor, read_tensor, save_tensor, write_tensor};
pub use phantom::{synth_phantom, Phantom, PhantomSpec};
pub use preprocess::preprocess;

/// A cardiac cycle of `T` grayscale frames, stored `[T, H, W]`. Frame 0 is the
/// reference (end-diastole).
#[derive(Clone, Debug, PartialEq)]
pub struct ImageSequence<T> {
    frames: Tensor<T>,
}

impl<T: Scalar> ImageSequence<T> {
    pub fn new(frames: Tensor<T>) -> Result<Self> {
        if frames.ndim() != 3 {
            return Err(shape_err(format!(
                "image sequence must be [T, H, W], got {:?}",
                frames.shape()
            )));
        }
        if frames.shape()[0] == 0 {
            return Err(Error::EmptySequence);
        }
        if frames.numel() == 0 {
            return Err(shape_err("zero-sized frames"));
        }
        if !frames.is_finite() {
            return Err(Error::NonFinite);
        }
        Ok(Self { frames })
    }

    pub fn len(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn height(&self) -> usize {
        self.frames.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.frames.shape()[2]
    }

    pub fn frame(&self, t: usize) -> &[T] {
        let n = self.height() * self.width();
        &self.frames.data()[t * n..(t + 1) * n]
    }

    /// Frame `t` as an `[H, W]` tensor.
    pub fn frame_tensor(&self, t: usize) -> Tensor<T> {
        Tensor::from_vec(&[self.height(), self.width()], self.frame(t).to_vec())
            .expect("frame size")
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.frames
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.frames
    }
}
