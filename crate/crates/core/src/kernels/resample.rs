//! Layout and resampling kernels on channel-last `[F, H, W, C]` tensors.

use crate::scalar::Scalar;

/// Gathers non-overlapping `p x p` patches into channels.
///
/// Output channel order within a patch is row-major over the patch offset, then
/// input channel: `out[f, Y, X, (dy * p + dx) * C + c] = x[f, Y*p + dy, X*p + dx, c]`.
pub fn space_to_depth<T: Scalar>(x: &[T], dims: [usize; 4], p: usize) -> Vec<T> {
    let [f, h, w, c] = dims;
    let (ho, wo) = (h / p, w / p);
    let mut out = Vec::with_capacity(x.len());
    for fi in 0..f {
        for yo in 0..ho {
            for xo in 0..wo {
                for dy in 0..p {
                    for dx in 0..p {
                        let src = ((fi * h + yo * p + dy) * w + xo * p + dx) * c;
                        out.extend_from_slice(&x[src..src + c]);
                    }
                }
            }
        }
    }
    out
}

/// Adjoint (and inverse) of [`space_to_depth`].
pub fn depth_to_space<T: Scalar>(g: &[T], dims: [usize; 4], p: usize) -> Vec<T> {
    let [f, h, w, c] = dims;
    let (ho, wo) = (h / p, w / p);
    let mut out = vec![T::zero(); g.len()];
    let mut it = 0;
    for fi in 0..f {
        for yo in 0..ho {
            for xo in 0..wo {
                for dy in 0..p {
                    for dx in 0..p {
                        let dst = ((fi * h + yo * p + dy) * w + xo * p + dx) * c;
                        out[dst..dst + c].copy_from_slice(&g[it..it + c]);
                        it += c;
                    }
                }
            }
        }
    }
    out
}

/// One output coordinate of a linear interpolation: `(i0, i1, weight_of_i1)`.
#[derive(Clone, Copy, Debug)]
pub struct Tap<T> {
    pub i0: usize,
    pub i1: usize,
    pub w1: T,
}

/// Half-pixel-centred linear interpolation taps for upsampling `n` by `factor`,
/// clamped at the borders.
pub fn upsample_taps<T: Scalar>(n: usize, factor: usize) -> Vec<Tap<T>> {
    let last = T::c((n - 1) as f64);
    (0..n * factor)
        .map(|o| {
            let src = (T::c(o as f64) + T::c(0.5)) / T::c(factor as f64) - T::c(0.5);
            let src = src.max(T::zero()).min(last);
            let i0 = src.floor().to_usize().unwrap_or(0).min(n - 1);
            let i1 = (i0 + 1).min(n - 1);
            Tap {
                i0,
                i1,
                w1: src - T::c(i0 as f64),
            }
        })
        .collect()
}

pub fn upsample_forward<T: Scalar>(x: &[T], dims: [usize; 4], factor: usize) -> Vec<T> {
    let [f, h, w, c] = dims;
    let ty = upsample_taps::<T>(h, factor);
    let tx = upsample_taps::<T>(w, factor);
    let (ho, wo) = (h * factor, w * factor);
    let mut out = vec![T::zero(); f * ho * wo * c];
    for fi in 0..f {
        for (yo, ry) in ty.iter().enumerate() {
            for (xo, rx) in tx.iter().enumerate() {
                let dst = ((fi * ho + yo) * wo + xo) * c;
                let corners = [
                    (ry.i0, rx.i0, (T::one() - ry.w1) * (T::one() - rx.w1)),
                    (ry.i0, rx.i1, (T::one() - ry.w1) * rx.w1),
                    (ry.i1, rx.i0, ry.w1 * (T::one() - rx.w1)),
                    (ry.i1, rx.i1, ry.w1 * rx.w1),
                ];
                for (iy, ix, wt) in corners {
                    let src = ((fi * h + iy) * w + ix) * c;
                    for ch in 0..c {
                        out[dst + ch] += wt * x[src + ch];
                    }
                }
            }
        }
    }
    out
}

pub fn upsample_backward<T: Scalar>(gy: &[T], dims: [usize; 4], factor: usize) -> Vec<T> {
    let [f, h, w, c] = dims;
    let ty = upsample_taps::<T>(h, factor);
    let tx = upsample_taps::<T>(w, factor);
    let (ho, wo) = (h * factor, w * factor);
    let mut gx = vec![T::zero(); f * h * w * c];
    for fi in 0..f {
        for (yo, ry) in ty.iter().enumerate() {
            for (xo, rx) in tx.iter().enumerate() {
                let src = ((fi * ho + yo) * wo + xo) * c;
                let corners = [
                    (ry.i0, rx.i0, (T::one() - ry.w1) * (T::one() - rx.w1)),
                    (ry.i0, rx.i1, (T::one() - ry.w1) * rx.w1),
                    (ry.i1, rx.i0, ry.w1 * (T::one() - rx.w1)),
                    (ry.i1, rx.i1, ry.w1 * rx.w1),
                ];
                for (iy, ix, wt) in corners {
                    let dst = ((fi * h + iy) * w + ix) * c;
                    for ch in 0..c {
                        gx[dst + ch] += wt * gy[src + ch];
                    }
                }
            }
        }
    }
    gx
}

/// Concatenates along the last axis: `[.., ca] ++ [.., cb] -> [.., ca + cb]`.
pub fn concat_last<T: Scalar>(a: &[T], b: &[T], ca: usize, cb: usize) -> Vec<T> {
    let rows = a.len() / ca;
    let mut out = Vec::with_capacity(a.len() + b.len());
    for r in 0..rows {
        out.extend_from_slice(&a[r * ca..(r + 1) * ca]);
        out.extend_from_slice(&b[r * cb..(r + 1) * cb]);
    }
    out
}

pub fn split_last<T: Scalar>(g: &[T], ca: usize, cb: usize) -> (Vec<T>, Vec<T>) {
    let c = ca + cb;
    let rows = g.len() / c;
    let mut ga = Vec::with_capacity(rows * ca);
    let mut gb = Vec::with_capacity(rows * cb);
    for r in 0..rows {
        ga.extend_from_slice(&g[r * c..r * c + ca]);
        gb.extend_from_slice(&g[r * c + ca..(r + 1) * c]);
    }
    (ga, gb)
}

/// Mean over the leading axis of `frames` equally sized blocks.
pub fn mean_leading<T: Scalar>(x: &[T], frames: usize) -> Vec<T> {
    let inner = x.len() / frames;
    let scale = T::one() / T::c(frames as f64);
    (0..inner)
        .map(|i| (0..frames).map(|f| x[f * inner + i]).sum::<T>() * scale)
        .collect()
}
