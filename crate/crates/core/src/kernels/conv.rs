//! Channel-last 3D convolution over `(frame, row, col)`.
//!
//! The frame axis is "valid" (no padding); the spatial axes use zero padding of
//! `ks / 2` so spatial size is preserved. A frame kernel of 1 is a per-frame 2D
//! convolution.

use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvDims {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub cin: usize,
    pub cout: usize,
    pub kf: usize,
    pub ks: usize,
}

impl ConvDims {
    pub fn out_frames(&self) -> usize {
        self.frames + 1 - self.kf
    }

    #[inline]
    fn w_index(&self, df: usize, dy: usize, dx: usize) -> usize {
        ((df * self.ks + dy) * self.ks + dx) * self.cin * self.cout
    }
}

/// Visits every in-bounds `(out_pixel, in_pixel, kernel_tap)` triple.
#[inline]
fn for_each_tap(dims: &ConvDims, mut f: impl FnMut(usize, usize, usize)) {
    let ConvDims {
        height: h,
        width: w,
        kf,
        ks,
        ..
    } = *dims;
    let pad = (ks / 2) as isize;
    for fo in 0..dims.out_frames() {
        for y in 0..h {
            for x in 0..w {
                let out_px = (fo * h + y) * w + x;
                for df in 0..kf {
                    for dy in 0..ks {
                        let iy = y as isize + dy as isize - pad;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for dx in 0..ks {
                            let ix = x as isize + dx as isize - pad;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let in_px = ((fo + df) * h + iy as usize) * w + ix as usize;
                            f(out_px, in_px, dims.w_index(df, dy, dx));
                        }
                    }
                }
            }
        }
    }
}

pub fn conv3d_forward<T: Scalar>(x: &[T], w: &[T], b: &[T], dims: ConvDims) -> Vec<T> {
    let (cin, cout) = (dims.cin, dims.cout);
    let n_out = dims.out_frames() * dims.height * dims.width;
    let mut y = Vec::with_capacity(n_out * cout);
    for _ in 0..n_out {
        y.extend_from_slice(b);
    }
    for_each_tap(&dims, |op, ip, wi| {
        let xs = &x[ip * cin..(ip + 1) * cin];
        let ys = &mut y[op * cout..(op + 1) * cout];
        for (i, &xv) in xs.iter().enumerate() {
            let wr = &w[wi + i * cout..wi + (i + 1) * cout];
            for (yo, &wv) in ys.iter_mut().zip(wr) {
                *yo += xv * wv;
            }
        }
    });
    y
}

/// Returns `(gx, gw, gb)`.
pub fn conv3d_backward<T: Scalar>(
    x: &[T],
    w: &[T],
    gy: &[T],
    dims: ConvDims,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let (cin, cout) = (dims.cin, dims.cout);
    let mut gx = vec![T::zero(); x.len()];
    let mut gw = vec![T::zero(); w.len()];
    let mut gb = vec![T::zero(); cout];
    for g in gy.chunks_exact(cout) {
        for (a, &v) in gb.iter_mut().zip(g) {
            *a += v;
        }
    }
    for_each_tap(&dims, |op, ip, wi| {
        let gys = &gy[op * cout..(op + 1) * cout];
        for i in 0..cin {
            let xv = x[ip * cin + i];
            let wr = &w[wi + i * cout..wi + (i + 1) * cout];
            let gwr = &mut gw[wi + i * cout..wi + (i + 1) * cout];
            let mut acc = T::zero();
            for o in 0..cout {
                acc += gys[o] * wr[o];
                gwr[o] += xv * gys[o];
            }
            gx[ip * cin + i] += acc;
        }
    });
    (gx, gw, gb)
}
