//! Per-token dense kernels: affine maps, layer normalization, pointwise activations.

use crate::scalar::Scalar;

/// Pointwise nonlinearity.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    /// tanh approximation of GELU.
    Gelu,
    Silu,
    Softplus,
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C: f64 = 0.044_715;

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[inline]
pub fn softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

/// Inverse of softplus for `y > 0`.
pub fn softplus_inv<T: Scalar>(y: T) -> T {
    y + (-(-y).exp_m1()).ln()
}

impl Activation {
    #[inline]
    pub fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Gelu => {
                let k = T::c(GELU_K);
                let inner = k * (x + T::c(GELU_C) * x * x * x);
                T::c(0.5) * x * (T::one() + inner.tanh())
            }
            Activation::Silu => x * sigmoid(x),
            Activation::Softplus => softplus(x),
        }
    }

    #[inline]
    pub fn derivative<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Gelu => {
                let k = T::c(GELU_K);
                let c = T::c(GELU_C);
                let inner = k * (x + c * x * x * x);
                let th = inner.tanh();
                let half = T::c(0.5);
                half * (T::one() + th)
                    + half * x * (T::one() - th * th) * k * (T::one() + T::c(3.0) * c * x * x)
            }
            Activation::Silu => {
                let s = sigmoid(x);
                s * (T::one() + x * (T::one() - s))
            }
            Activation::Softplus => sigmoid(x),
        }
    }
}

/// `y[r, o] = b[o] + sum_i x[r, i] * w[i, o]` for `rows` tokens.
pub fn linear_forward<T: Scalar>(x: &[T], w: &[T], b: &[T], din: usize, dout: usize) -> Vec<T> {
    let rows = x.len() / din;
    let mut y = Vec::with_capacity(rows * dout);
    for r in 0..rows {
        y.extend_from_slice(b);
        let yr = &mut y[r * dout..(r + 1) * dout];
        let xr = &x[r * din..(r + 1) * din];
        for (i, &xi) in xr.iter().enumerate() {
            if xi == T::zero() {
                continue;
            }
            let wi = &w[i * dout..(i + 1) * dout];
            for (yo, &wio) in yr.iter_mut().zip(wi) {
                *yo += xi * wio;
            }
        }
    }
    y
}

/// Returns `(gx, gw, gb)`.
pub fn linear_backward<T: Scalar>(
    x: &[T],
    w: &[T],
    gy: &[T],
    din: usize,
    dout: usize,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let rows = x.len() / din;
    let mut gx = vec![T::zero(); x.len()];
    let mut gw = vec![T::zero(); w.len()];
    let mut gb = vec![T::zero(); dout];
    for r in 0..rows {
        let xr = &x[r * din..(r + 1) * din];
        let gyr = &gy[r * dout..(r + 1) * dout];
        let gxr = &mut gx[r * din..(r + 1) * din];
        for (gbo, &g) in gb.iter_mut().zip(gyr) {
            *gbo += g;
        }
        for i in 0..din {
            let wi = &w[i * dout..(i + 1) * dout];
            let gwi = &mut gw[i * dout..(i + 1) * dout];
            let xi = xr[i];
            let mut acc = T::zero();
            for o in 0..dout {
                acc += gyr[o] * wi[o];
                gwi[o] += xi * gyr[o];
            }
            gxr[i] = acc;
        }
    }
    (gx, gw, gb)
}

pub const LN_EPS: f64 = 1e-5;

/// Layer normalization over the last axis. Returns `(y, xhat, rstd)`.
pub fn layer_norm_forward<T: Scalar>(
    x: &[T],
    gamma: &[T],
    beta: &[T],
    d: usize,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let rows = x.len() / d;
    let dn = T::c(d as f64);
    let mut y = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    let mut rstd = Vec::with_capacity(rows);
    for r in 0..rows {
        let xr = &x[r * d..(r + 1) * d];
        let mean = xr.iter().copied().sum::<T>() / dn;
        let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
        let rs = T::one() / (var + T::c(LN_EPS)).sqrt();
        rstd.push(rs);
        for i in 0..d {
            let h = (xr[i] - mean) * rs;
            xhat[r * d + i] = h;
            y[r * d + i] = gamma[i] * h + beta[i];
        }
    }
    (y, xhat, rstd)
}

/// Returns `(gx, ggamma, gbeta)`.
pub fn layer_norm_backward<T: Scalar>(
    gy: &[T],
    xhat: &[T],
    rstd: &[T],
    gamma: &[T],
    d: usize,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let rows = gy.len() / d;
    let dn = T::c(d as f64);
    let mut gx = vec![T::zero(); gy.len()];
    let mut gg = vec![T::zero(); d];
    let mut gbeta = vec![T::zero(); d];
    let mut gxhat = vec![T::zero(); d];
    for r in 0..rows {
        let off = r * d;
        let mut mean_g = T::zero();
        let mut mean_gx = T::zero();
        for i in 0..d {
            let g = gy[off + i];
            gg[i] += g * xhat[off + i];
            gbeta[i] += g;
            gxhat[i] = g * gamma[i];
            mean_g += gxhat[i];
            mean_gx += gxhat[i] * xhat[off + i];
        }
        mean_g /= dn;
        mean_gx /= dn;
        for i in 0..d {
            gx[off + i] = rstd[r] * (gxhat[i] - mean_g - xhat[off + i] * mean_gx);
        }
    }
    (gx, gg, gbeta)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softplus_matches_naive_and_inverts() {
        for &x in &[-30.0f64, -2.0, 0.0, 0.5, 3.0, 40.0] {
            let naive = (1.0 + x.exp()).ln();
            assert!((softplus(x) - naive).abs() < 1e-12);
        }
        assert!((softplus(0.0f64) - std::f64::consts::LN_2).abs() < 1e-15);
        for &y in &[0.001f64, 0.01, 0.1, 1.0, 5.0] {
            assert!((softplus(softplus_inv(y)) - y).abs() < 1e-12);
        }
    }

    #[test]
    fn activation_derivatives_match_central_differences() {
        let h = 1e-6;
        for act in [Activation::Gelu, Activation::Silu, Activation::Softplus] {
            for &x in &[-3.0f64, -0.7, 0.0, 0.4, 2.5] {
                let fd = (act.apply(x + h) - act.apply(x - h)) / (2.0 * h);
                assert!((fd - act.derivative(x)).abs() < 1e-8, "{act:?} at {x}");
            }
        }
    }

    #[test]
    fn linear_matches_hand_product() {
        // two tokens, din 2, dout 3
        let x = [1.0f64, 2.0, -1.0, 0.5];
        let w = [1.0, 0.0, 2.0, -1.0, 3.0, 0.5];
        let b = [0.1, 0.2, 0.3];
        let y = linear_forward(&x, &w, &b, 2, 3);
        let want = [-0.9, 6.2, 3.3, -1.4, 1.7, -1.45];
        for (a, b) in y.iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_norm_output_is_standardized() {
        let x = [1.0f64, 2.0, 3.0, 4.0];
        let (y, _, _) = layer_norm_forward(&x, &[1.0; 4], &[0.0; 4], 4);
        let mean: f64 = y.iter().sum::<f64>() / 4.0;
        let var: f64 = y.iter().map(|v| v * v).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.25 / (1.25 + LN_EPS)).abs() < 1e-9);
    }
}
