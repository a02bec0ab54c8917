//! Selective diagonal state-space recurrence over the leading (time) axis.
//!
//! Layout: `x`, `delta`: `[L, P, D]`; `b`, `c`: `[L, P, N]`; `a_log`: `[D, N]`;
//! `d_skip`: `[D]`. Every one of the `P` positions is an independent sequence.
//!
//! ```text
//! a_bar = exp(delta * A),  A = -exp(a_log)
//! h_k   = a_bar_k * h_{k-1} + delta_k * B_k * x_k,  h_0 = 0
//! y_k   = <C_k, h_k> + d_skip * x_k
//! ```

use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug)]
pub struct ScanDims {
    pub len: usize,
    pub positions: usize,
    pub channels: usize,
    pub state: usize,
}

pub struct ScanInputs<'a, T> {
    pub x: &'a [T],
    pub delta: &'a [T],
    pub a_log: &'a [T],
    pub b: &'a [T],
    pub c: &'a [T],
    pub d_skip: &'a [T],
}

pub struct ScanGrads<T> {
    pub x: Vec<T>,
    pub delta: Vec<T>,
    pub a_log: Vec<T>,
    pub b: Vec<T>,
    pub c: Vec<T>,
    pub d_skip: Vec<T>,
}

/// Returns `(y, states)` with `states` laid out `[L, P, D, N]`.
pub fn scan_forward<T: Scalar>(inp: &ScanInputs<'_, T>, dims: ScanDims) -> (Vec<T>, Vec<T>) {
    let ScanDims {
        len,
        positions,
        channels: d,
        state: n,
    } = dims;
    let a: Vec<T> = inp.a_log.iter().map(|v| -v.exp()).collect();
    let mut y = vec![T::zero(); len * positions * d];
    let mut states = vec![T::zero(); len * positions * d * n];
    for p in 0..positions {
        for k in 0..len {
            let tok = (k * positions + p) * d;
            let bc = (k * positions + p) * n;
            let hk = tok * n;
            let hprev = if k == 0 { None } else { Some(((k - 1) * positions + p) * d * n) };
            for ch in 0..d {
                let xv = inp.x[tok + ch];
                let dt = inp.delta[tok + ch];
                let mut acc = T::zero();
                for s in 0..n {
                    let abar = (dt * a[ch * n + s]).exp();
                    let prev = hprev.map_or(T::zero(), |o| states[o + ch * n + s]);
                    let h = abar * prev + dt * inp.b[bc + s] * xv;
                    states[hk + ch * n + s] = h;
                    acc += inp.c[bc + s] * h;
                }
                y[tok + ch] = acc + inp.d_skip[ch] * xv;
            }
        }
    }
    (y, states)
}

pub fn scan_backward<T: Scalar>(
    inp: &ScanInputs<'_, T>,
    states: &[T],
    gy: &[T],
    dims: ScanDims,
) -> ScanGrads<T> {
    let ScanDims {
        len,
        positions,
        channels: d,
        state: n,
    } = dims;
    let a: Vec<T> = inp.a_log.iter().map(|v| -v.exp()).collect();
    let mut g = ScanGrads {
        x: vec![T::zero(); inp.x.len()],
        delta: vec![T::zero(); inp.delta.len()],
        a_log: vec![T::zero(); inp.a_log.len()],
        b: vec![T::zero(); inp.b.len()],
        c: vec![T::zero(); inp.c.len()],
        d_skip: vec![T::zero(); d],
    };
    let mut gh = vec![T::zero(); d * n];
    for p in 0..positions {
        gh.fill(T::zero());
        for k in (0..len).rev() {
            let tok = (k * positions + p) * d;
            let bc = (k * positions + p) * n;
            let hk = tok * n;
            let hprev = if k == 0 { None } else { Some(((k - 1) * positions + p) * d * n) };
            for ch in 0..d {
                let gyv = gy[tok + ch];
                let xv = inp.x[tok + ch];
                let dt = inp.delta[tok + ch];
                g.x[tok + ch] += gyv * inp.d_skip[ch];
                g.d_skip[ch] += gyv * xv;
                let mut gdt = T::zero();
                let mut gx = T::zero();
                for s in 0..n {
                    let idx = ch * n + s;
                    g.c[bc + s] += gyv * states[hk + idx];
                    let gs = gh[idx] + gyv * inp.c[bc + s];
                    let av = a[idx];
                    let abar = (dt * av).exp();
                    let prev = hprev.map_or(T::zero(), |o| states[o + idx]);
                    let bv = inp.b[bc + s];
                    gdt += gs * (av * abar * prev + bv * xv);
                    g.b[bc + s] += gs * dt * xv;
                    gx += gs * dt * bv;
                    g.a_log[idx] += gs * abar * dt * prev * av;
                    gh[idx] = gs * abar;
                }
                g.delta[tok + ch] += gdt;
                g.x[tok + ch] += gx;
            }
        }
    }
    g
}
