//! Pull-warping by a dense displacement field and the registration losses.
//!
//! Displacements are channel-last `[H, W, 2]`: channel 0 moves along columns
//! (x), channel 1 along rows (y). Sampling clamps coordinates to the image.

use crate::scalar::Scalar;

#[derive(Clone, Copy)]
struct Axis<T> {
    i0: usize,
    i1: usize,
    w1: T,
    /// false when the coordinate was clamped, where the sample is locally constant.
    live: bool,
}

#[inline]
fn axis<T: Scalar>(coord: T, n: usize) -> Axis<T> {
    if n == 1 {
        return Axis {
            i0: 0,
            i1: 0,
            w1: T::zero(),
            live: false,
        };
    }
    let last = T::c((n - 1) as f64);
    let live = coord >= T::zero() && coord <= last;
    let c = coord.max(T::zero()).min(last);
    let i0 = c.floor().to_usize().unwrap_or(0).min(n - 2);
    Axis {
        i0,
        i1: i0 + 1,
        w1: c - T::c(i0 as f64),
        live,
    }
}

/// `out(y, x) = img(y + flow_y, x + flow_x)` with bilinear interpolation.
pub fn warp_forward<T: Scalar>(img: &[T], flow: &[T], h: usize, w: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let ax = axis(T::c(x as f64) + flow[2 * p], w);
            let ay = axis(T::c(y as f64) + flow[2 * p + 1], h);
            let v00 = img[ay.i0 * w + ax.i0];
            let v01 = img[ay.i0 * w + ax.i1];
            let v10 = img[ay.i1 * w + ax.i0];
            let v11 = img[ay.i1 * w + ax.i1];
            let top = v00 * (T::one() - ax.w1) + v01 * ax.w1;
            let bot = v10 * (T::one() - ax.w1) + v11 * ax.w1;
            out.push(top * (T::one() - ay.w1) + bot * ay.w1);
        }
    }
    out
}

/// Returns `(g_img, g_flow)`.
pub fn warp_backward<T: Scalar>(
    img: &[T],
    flow: &[T],
    gy: &[T],
    h: usize,
    w: usize,
) -> (Vec<T>, Vec<T>) {
    let mut gimg = vec![T::zero(); img.len()];
    let mut gflow = vec![T::zero(); flow.len()];
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let g = gy[p];
            let ax = axis(T::c(x as f64) + flow[2 * p], w);
            let ay = axis(T::c(y as f64) + flow[2 * p + 1], h);
            let (wx0, wy0) = (T::one() - ax.w1, T::one() - ay.w1);
            let i00 = ay.i0 * w + ax.i0;
            let i01 = ay.i0 * w + ax.i1;
            let i10 = ay.i1 * w + ax.i0;
            let i11 = ay.i1 * w + ax.i1;
            gimg[i00] += g * wx0 * wy0;
            gimg[i01] += g * ax.w1 * wy0;
            gimg[i10] += g * wx0 * ay.w1;
            gimg[i11] += g * ax.w1 * ay.w1;
            if ax.live {
                let d = (img[i01] - img[i00]) * wy0 + (img[i11] - img[i10]) * ay.w1;
                gflow[2 * p] = g * d;
            }
            if ay.live {
                let d = (img[i10] - img[i00]) * wx0 + (img[i11] - img[i01]) * ax.w1;
                gflow[2 * p + 1] = g * d;
            }
        }
    }
    (gimg, gflow)
}

pub fn mse_forward<T: Scalar>(a: &[T], b: &[T]) -> T {
    let n = T::c(a.len() as f64);
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum::<T>() / n
}

pub fn mse_backward<T: Scalar>(a: &[T], b: &[T], g: T) -> (Vec<T>, Vec<T>) {
    let k = T::c(2.0) * g / T::c(a.len() as f64);
    let ga: Vec<T> = a.iter().zip(b).map(|(&x, &y)| k * (x - y)).collect();
    let gb = ga.iter().map(|&v| -v).collect();
    (ga, gb)
}

/// Squared forward differences of every channel along both axes, divided by
/// the pixel count. Differences that would leave the grid are omitted.
pub fn smooth_forward<T: Scalar>(flow: &[T], h: usize, w: usize, c: usize) -> T {
    let mut acc = T::zero();
    for y in 0..h {
        for x in 0..w {
            let p = (y * w + x) * c;
            for ch in 0..c {
                if x + 1 < w {
                    let d = flow[p + c + ch] - flow[p + ch];
                    acc += d * d;
                }
                if y + 1 < h {
                    let d = flow[p + w * c + ch] - flow[p + ch];
                    acc += d * d;
                }
            }
        }
    }
    acc / T::c((h * w) as f64)
}

pub fn smooth_backward<T: Scalar>(flow: &[T], h: usize, w: usize, c: usize, g: T) -> Vec<T> {
    let k = T::c(2.0) * g / T::c((h * w) as f64);
    let mut gf = vec![T::zero(); flow.len()];
    for y in 0..h {
        for x in 0..w {
            let p = (y * w + x) * c;
            for ch in 0..c {
                if x + 1 < w {
                    let d = k * (flow[p + c + ch] - flow[p + ch]);
                    gf[p + c + ch] += d;
                    gf[p + ch] -= d;
                }
                if y + 1 < h {
                    let d = k * (flow[p + w * c + ch] - flow[p + ch]);
                    gf[p + w * c + ch] += d;
                    gf[p + ch] -= d;
                }
            }
        }
    }
    gf
}
