#![allow(dead_code)]

use mcm_core::nn::{seeded, SeedRng};
use mcm_core::ssm::SsmParams;
use mcm_core::Tensor;
use rand::Rng;

pub fn rng(seed: u64) -> SeedRng {
    seeded(seed)
}

pub fn random_tensor(rng: &mut SeedRng, shape: &[usize], scale: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-scale..scale))
}

fn dot(w: &Tensor<f64>, b: &Tensor<f64>, x: &[f64], out: usize) -> f64 {
    let dout = w.shape()[1];
    let mut s = b.data()[out];
    for (i, xi) in x.iter().enumerate() {
        s += xi * w.data()[i * dout + out];
    }
    s
}

/// Explicit-state recurrence, written without any crate kernels.
pub fn naive_scan(x: &Tensor<f64>, p: &SsmParams<f64>) -> Tensor<f64> {
    let (l, d) = (x.shape()[0], x.shape()[1]);
    let n = p.a_log.shape()[1];
    let mut h = vec![vec![0.0f64; n]; d];
    let mut y = Vec::with_capacity(l * d);
    for k in 0..l {
        let tok = &x.data()[k * d..(k + 1) * d];
        let bk: Vec<f64> = (0..n).map(|s| dot(&p.b_proj.weight, &p.b_proj.bias, tok, s)).collect();
        let ck: Vec<f64> = (0..n).map(|s| dot(&p.c_proj.weight, &p.c_proj.bias, tok, s)).collect();
        for ch in 0..d {
            let pre = dot(&p.dt_proj.weight, &p.dt_proj.bias, tok, ch);
            let delta = (1.0 + pre.exp()).ln();
            let mut out = p.d_skip.data()[ch] * tok[ch];
            for s in 0..n {
                let a = -p.a_log.data()[ch * n + s].exp();
                h[ch][s] = (delta * a).exp() * h[ch][s] + delta * bk[s] * tok[ch];
                out += ck[s] * h[ch][s];
            }
            y.push(out);
        }
    }
    Tensor::from_vec(&[l, d], y).unwrap()
}

pub fn reverse_rows(x: &Tensor<f64>) -> Tensor<f64> {
    x.flip_leading()
}
