mod common;

use common::{naive_scan, random_tensor, rng};
use mcm_core::gradcheck::{check_inputs, check_module, probe};
use mcm_core::nn::Module;
use mcm_core::ssm::{scan_backward, scan_forward, Bism, SsmParams, TokenSequence};
use mcm_core::Tensor;
use proptest::prelude::*;
use rand::Rng;

#[test]
fn forward_matches_naive_loop_fixed_case() {
    let mut r = rng(0);
    let p = SsmParams::<f64>::random(&mut r, 3, 4, 1.0);
    let x = random_tensor(&mut r, &[7, 3], 1.0);
    let y = scan_forward(&TokenSequence::new(x.clone()).unwrap(), &p).unwrap();
    assert!(y.x.max_abs_diff(&naive_scan(&x, &p)) < 1e-6);
}

#[test]
fn backward_is_reversed_forward() {
    let mut r = rng(9);
    let p = SsmParams::<f64>::random(&mut r, 2, 3, 1.0);
    let x = random_tensor(&mut r, &[5, 2], 1.0);
    let seq = TokenSequence::new(x).unwrap();
    let b = scan_backward(&seq, &p).unwrap();
    let f = scan_forward(&seq.reversed(), &p).unwrap();
    assert_eq!(b, f.reversed());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn forward_matches_naive_loop(seed in 0u64..10_000, l in 1usize..=16, d in 1usize..=8, n in 1usize..=8) {
        let mut r = rng(seed);
        let p = SsmParams::<f64>::random(&mut r, d, n, 1.0);
        let x = random_tensor(&mut r, &[l, d], 2.0);
        let y = scan_forward(&TokenSequence::new(x.clone()).unwrap(), &p).unwrap();
        prop_assert!(y.x.max_abs_diff(&naive_scan(&x, &p)) < 1e-6);
    }
}

#[test]
fn long_sequences_stay_bounded() {
    let mut r = rng(21);
    let p = SsmParams::<f64>::random(&mut r, 4, 8, 1.0);
    let x = random_tensor(&mut r, &[1000, 4], 3.0);
    let y = scan_forward(&TokenSequence::new(x.clone()).unwrap(), &p).unwrap();
    assert!(y.x.is_finite());
    // |h| <= max|b_bar x| / (1 - max a_bar); bound the readout accordingly
    let mut bound = 0.0f64;
    let mut worst_a = 0.0f64;
    for k in 0..1000 {
        let tok = &x.data()[k * 4..(k + 1) * 4];
        let d = p.discretize(tok).unwrap();
        worst_a = worst_a.max(d.a_bar.max_abs());
        let drive = (0..4 * 8)
            .map(|i| (d.b_bar.data()[i] * tok[i / 8]).abs())
            .fold(0.0, f64::max);
        bound = bound.max(drive);
    }
    assert!(worst_a < 1.0);
    let h_bound = bound / (1.0 - worst_a);
    let c_bound = 8.0 * 3.0 * (p.c_proj.weight.max_abs() * 4.0 + p.c_proj.bias.max_abs());
    let out_bound = c_bound * h_bound + p.d_skip.max_abs() * 3.0;
    assert!(y.x.max_abs() <= out_bound, "{} > {}", y.x.max_abs(), out_bound);
}

#[test]
fn bism_single_frame_is_two_single_steps() {
    let mut r = rng(6);
    let mut b = Bism::<f64>::new(&mut r, 3, 2);
    for (_, t) in b.params_mut() {
        for v in t.data_mut() {
            *v += r.gen_range(-0.3..0.3);
        }
    }
    let x = random_tensor(&mut r, &[1, 2, 2, 3], 1.0);
    let y = b.eval(&x).unwrap();
    for pos in 0..4 {
        let tok = Tensor::from_vec(&[1, 3], x.data()[pos * 3..pos * 3 + 3].to_vec()).unwrap();
        let seq = TokenSequence::new(tok).unwrap();
        let f = scan_forward(&seq, &b.forward).unwrap();
        let g = scan_forward(&seq, &b.backward).unwrap();
        for ch in 0..3 {
            let want = f.x.data()[ch] + g.x.data()[ch];
            assert!((y.data()[pos * 3 + ch] - want).abs() < 1e-15);
        }
    }
}

#[test]
fn bism_zero_input_zero_bias_is_zero() {
    let mut b = Bism::<f64>::new(&mut rng(2), 4, 3);
    for p in [&mut b.forward, &mut b.backward] {
        p.dt_proj.bias.fill(0.0);
        p.b_proj.bias.fill(0.0);
    }
    let y = b.eval(&Tensor::zeros(&[3, 2, 2, 4])).unwrap();
    assert!(y.data().iter().all(|&v| v == 0.0));
}

fn position_sequence(x: &Tensor<f64>, pos: usize) -> TokenSequence<f64> {
    let [f, h, w, c] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    let mut v = Vec::new();
    for fi in 0..f {
        let o = (fi * h * w + pos) * c;
        v.extend_from_slice(&x.data()[o..o + c]);
    }
    TokenSequence::new(Tensor::from_vec(&[f, c], v).unwrap()).unwrap()
}

#[test]
fn bism_position_is_isolated_scan() {
    let mut r = rng(0);
    let b = Bism {
        forward: SsmParams::<f64>::random(&mut r, 3, 4, 1.0),
        backward: SsmParams::<f64>::random(&mut r, 3, 4, 1.0),
    };
    let x = random_tensor(&mut r, &[3, 2, 2, 3], 1.0);
    let y = b.eval(&x).unwrap();
    let seq = position_sequence(&x, 0);
    let f = scan_forward(&seq, &b.forward).unwrap();
    let g = scan_backward(&seq, &b.backward).unwrap();
    for fi in 0..3 {
        for ch in 0..3 {
            let got = y.data()[fi * 4 * 3 + ch];
            assert_eq!(got, f.x.data()[fi * 3 + ch] + g.x.data()[fi * 3 + ch]);
        }
    }
}

#[test]
fn bism_time_reversal_with_swapped_directions() {
    let mut r = rng(13);
    let b = Bism {
        forward: SsmParams::<f64>::random(&mut r, 2, 3, 1.0),
        backward: SsmParams::<f64>::random(&mut r, 2, 3, 1.0),
    };
    let x = random_tensor(&mut r, &[5, 2, 3, 2], 1.0);
    let y = b.eval(&x).unwrap();
    let y_rev = b.swapped().eval(&x.flip_leading()).unwrap();
    assert_eq!(y_rev, y.flip_leading());
}

#[test]
fn bism_perturbation_stays_at_its_position() {
    let mut r = rng(8);
    let b = Bism::<f64>::new(&mut r, 3, 2);
    let x = random_tensor(&mut r, &[3, 3, 3, 3], 1.0);
    let mut x2 = x.clone();
    let (pos, fr) = (4usize, 1usize);
    x2.data_mut()[(fr * 9 + pos) * 3 + 1] += 0.5;
    let (y, y2) = (b.eval(&x).unwrap(), b.eval(&x2).unwrap());
    for fi in 0..3 {
        for p in 0..9 {
            let o = (fi * 9 + p) * 3;
            let same = y.data()[o..o + 3] == y2.data()[o..o + 3];
            assert_eq!(same, p != pos, "frame {fi} position {p}");
        }
    }
}

#[test]
fn scan_gradients_match_finite_differences() {
    let mut r = rng(31);
    let mut p = SsmParams::<f64>::random(&mut r, 3, 4, 0.8);
    let x = random_tensor(&mut r, &[6, 3], 1.0);
    let rep = check_module(&mut p, &[x], 64, |m, g, ids| {
        let y = m.forward(g, ids[0])?;
        probe(g, y, 1)
    })
    .unwrap();
    assert!(rep.worst() < 1e-3, "{:?}", rep.worst_entry());
}

#[test]
fn bism_gradients_match_finite_differences() {
    let mut r = rng(32);
    let mut b = Bism {
        forward: SsmParams::<f64>::random(&mut r, 2, 3, 0.8),
        backward: SsmParams::<f64>::random(&mut r, 2, 3, 0.8),
    };
    let x = random_tensor(&mut r, &[4, 2, 2, 2], 1.0);
    let rep = check_module(&mut b, &[x], 32, |m, g, ids| {
        let y = m.apply(g, ids[0])?;
        probe(g, y, 2)
    })
    .unwrap();
    assert!(rep.worst() < 1e-3, "{:?}", rep.worst_entry());
}

#[test]
fn raw_scan_kernel_gradients_with_free_inputs() {
    // every operand of the fused kernel as an independent input
    let mut r = rng(33);
    let (l, p, d, n) = (5, 2, 3, 2);
    let x = random_tensor(&mut r, &[l, p, d], 1.0);
    let delta = Tensor::from_fn(&[l, p, d], |_| r.gen_range(0.05..0.8));
    let a_log = random_tensor(&mut r, &[d, n], 0.5);
    let b = random_tensor(&mut r, &[l, p, n], 1.0);
    let c = random_tensor(&mut r, &[l, p, n], 1.0);
    let ds = random_tensor(&mut r, &[d], 1.0);
    let rep = check_inputs(&[x, delta, a_log, b, c, ds], 64, |g, ids| {
        let y = g.scan(ids[0], ids[1], ids[2], ids[3], ids[4], ids[5])?;
        probe(g, y, 3)
    })
    .unwrap();
    assert!(rep.worst() < 1e-3, "{:?}", rep.worst_entry());
}
