use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

/// Adam moments for a fixed list of parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new<'a>(shapes: impl IntoIterator<Item = &'a [usize]>) -> Self {
        let m: Vec<Tensor<T>> = shapes.into_iter().map(Tensor::zeros).collect();
        Self {
            step: 0,
            v: m.clone(),
            m,
        }
    }

    /// One bias-corrected update. Fails without touching anything when a
    /// gradient is non-finite or the shapes disagree.
    pub fn update(&mut self, params: &mut [&mut Tensor<T>], grads: &[Tensor<T>], lr: f64) -> Result<()> {
        if params.len() != grads.len() || grads.len() != self.m.len() {
            return Err(shape_err(format!(
                "{} params, {} grads, {} moments",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || g.shape() != self.m[i].shape() {
                return Err(shape_err(format!(
                    "tensor {i}: param {:?}, grad {:?}, moment {:?}",
                    p.shape(),
                    g.shape(),
                    self.m[i].shape()
                )));
            }
            if !g.is_finite() {
                return Err(Error::Diverged {
                    step: self.step + 1,
                    what: format!("non-finite gradient in tensor {i}"),
                });
            }
        }
        self.step += 1;
        let (b1, b2) = (T::c(BETA1), T::c(BETA2));
        let one = T::one();
        let c1 = one - b1.powi(self.step as i32);
        let c2 = one - b2.powi(self.step as i32);
        let (lr, eps) = (T::c(lr), T::c(EPS));
        for (i, p) in params.iter_mut().enumerate() {
            let g = grads[i].data();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (j, w) in p.data_mut().iter_mut().enumerate() {
                m[j] = b1 * m[j] + (one - b1) * g[j];
                v[j] = b2 * v[j] + (one - b2) * g[j] * g[j];
                let mhat = m[j] / c1;
                let vhat = v[j] / c2;
                *w -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Free-function form of [`Adam::update`].
pub fn adam_step<T: Scalar>(
    params: &mut [&mut Tensor<T>],
    grads: &[Tensor<T>],
    moments: &mut Adam<T>,
    lr: f64,
) -> Result<()> {
    moments.update(params, grads, lr)
}
