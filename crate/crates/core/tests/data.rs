mod common;

use common::{random_tensor, rng};
use mcm_core::data::{load_tensor, preprocess, save_tensor, synth_phantom, PhantomSpec};
use mcm_core::metrics::{jacobian_metrics, warp_labels, dice};
use mcm_core::warp_loss::{sim_loss, warp};
use mcm_core::{Error, Tensor};

#[test]
fn tensor_files_round_trip_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.mcmt");
    let t32: Tensor<f32> = random_tensor(&mut rng(1), &[5, 2, 8, 8], 3.0).cast();
    save_tensor(&path, &t32).unwrap();
    let back: Tensor<f32> = load_tensor(&path).unwrap();
    assert_eq!(back.shape(), t32.shape());
    assert!(back.data().iter().zip(t32.data()).all(|(a, b)| a.to_bits() == b.to_bits()));

    let t64 = random_tensor(&mut rng(2), &[3, 7], 1.0);
    save_tensor(&path, &t64).unwrap();
    let back: Tensor<f64> = load_tensor(&path).unwrap();
    assert!(back.data().iter().zip(t64.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
}

#[test]
fn corrupt_files_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.mcmt");
    save_tensor(&path, &Tensor::<f32>::full(&[2, 3], 1.5)).unwrap();
    let good = std::fs::read(&path).unwrap();

    let mut bad = good.clone();
    bad[0] = b'X';
    std::fs::write(&path, &bad).unwrap();
    let err = load_tensor::<f32>(&path).unwrap_err();
    assert!(err.to_string().contains("bad magic"), "{err}");

    let mut bad = good.clone();
    bad.truncate(bad.len() - 1);
    std::fs::write(&path, &bad).unwrap();
    let err = load_tensor::<f32>(&path).unwrap_err();
    assert!(err.to_string().contains("truncated payload"), "{err}");

    // claim more elements than the payload holds
    let mut bad = good.clone();
    bad[8] = 9;
    std::fs::write(&path, &bad).unwrap();
    assert!(matches!(load_tensor::<f32>(&path), Err(Error::Truncated(_))));

    let mut bad = good.clone();
    bad[5] = 7;
    std::fs::write(&path, &bad).unwrap();
    assert!(matches!(load_tensor::<f32>(&path), Err(Error::BadDtype(7))));

    let mut bad = good;
    bad[4] = 2;
    std::fs::write(&path, &bad).unwrap();
    assert!(matches!(load_tensor::<f32>(&path), Err(Error::BadVersion(2))));
}

#[test]
fn preprocess_examples() {
    let flat = Tensor::<f64>::full(&[2, 5, 5], 42.0);
    assert_eq!(preprocess(&flat, 4).unwrap().tensor().max_abs(), 0.0);

    let raw = Tensor::from_fn(&[3, 6, 6], |i| (i % 256) as f64);
    let seq = preprocess(&raw, 4).unwrap();
    let lo = seq.tensor().data().iter().copied().fold(f64::INFINITY, f64::min);
    let hi = seq.tensor().data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    assert_eq!((lo, hi), (0.0, 1.0));

    assert!(preprocess(&Tensor::<f64>::zeros(&[1, 100, 200]), 128).is_err());
}

#[test]
fn preprocess_center_crop_offset() {
    // encode (row, col) so the kept window can be read back
    let raw = Tensor::from_fn(&[1, 130, 130], |i| ((i / 130) * 1000 + i % 130) as f64);
    let seq = preprocess(&raw, 128).unwrap();
    let frame = seq.frame(0);
    let (lo, hi) = (1001.0, 128.0 * 1000.0 + 128.0);
    let back = |v: f64| (lo + v * (hi - lo)).round() as usize;
    assert_eq!(back(frame[0]), 1001);
    assert_eq!(back(frame[127]), 1128);
    assert_eq!(back(frame[127 * 128]), 128 * 1000 + 1);
    assert_eq!(back(frame[128 * 128 - 1]), 128 * 1000 + 128);
}

#[test]
fn phantom_cycle_endpoints_are_still() {
    let spec = PhantomSpec::default();
    let p = synth_phantom::<f64>(&spec).unwrap();
    assert_eq!(p.fields.len(), spec.frames);
    assert_eq!(p.masks.len(), spec.frames);
    assert_eq!(p.fields[0].u.max_abs(), 0.0);
    assert!(p.fields[spec.frames - 1].u.max_abs() < 1e-12);
    assert_eq!(&p.masks[0], p.ed_mask());
    assert!(p.fields[spec.mid_cycle()].u.max_abs() > 0.5);
}

#[test]
fn phantom_displacement_is_bounded_by_amplitude_times_r2() {
    let spec = PhantomSpec {
        height: 64,
        width: 64,
        center: (31.5, 31.5),
        r1: 12.0,
        r2: 20.0,
        amplitude: 0.1,
        frames: 9,
        ..Default::default()
    };
    let mid = spec.mid_cycle();
    assert_eq!(spec.phase(mid), 1.0);
    let mut best = 0.0f64;
    let steps = 400;
    for i in 0..=steps {
        for j in 0..=steps {
            let x = 64.0 * i as f64 / steps as f64;
            let y = 64.0 * j as f64 / steps as f64;
            let (ux, uy) = spec.displacement(mid, x, y);
            best = best.max(ux.hypot(uy));
        }
    }
    assert!(best <= 2.0 + 1e-12, "{best}");
    assert!(best > 1.95);
}

#[test]
fn phantom_ground_truth_is_self_consistent() {
    for seed in 0..5 {
        let spec = PhantomSpec::sample(seed, 10, 32);
        let p = synth_phantom::<f64>(&spec).unwrap();
        let f0 = p.seq.frame_tensor(0);
        for t in 0..spec.frames {
            let warped = warp(&f0, &p.fields[t]).unwrap();
            let mse = sim_loss(&p.seq.frame_tensor(t), &warped).unwrap();
            assert!(mse < 1e-3, "seed {seed} t {t}: {mse}");
            let labels = warp_labels(p.ed_mask(), &p.fields[t]).unwrap();
            assert!(dice(&labels, &p.masks[t], 1).unwrap() > 0.85);
        }
        let jm = jacobian_metrics(&p.fields[spec.mid_cycle()]).unwrap();
        assert_eq!(jm.neg_pct, 0.0);
    }
}

#[test]
fn phantom_is_deterministic_and_noise_is_seeded() {
    let spec = PhantomSpec {
        noise_sigma: 0.05,
        seed: 3,
        ..Default::default()
    };
    let a = synth_phantom::<f32>(&spec).unwrap();
    let b = synth_phantom::<f32>(&spec).unwrap();
    assert_eq!(a.seq, b.seq);
    let c = synth_phantom::<f32>(&PhantomSpec { seed: 4, ..spec.clone() }).unwrap();
    assert_ne!(a.seq, c.seq);
    let clean = synth_phantom::<f32>(&PhantomSpec { noise_sigma: 0.0, ..spec }).unwrap();
    assert_ne!(a.seq, clean.seq);
    assert!(a.seq.tensor().data().iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn phantom_with_a_tenth_amplitude_does_not_fold() {
    let spec = PhantomSpec {
        amplitude: 0.1,
        ..Default::default()
    };
    let p = synth_phantom::<f64>(&spec).unwrap();
    let jm = jacobian_metrics(&p.fields[spec.mid_cycle()]).unwrap();
    assert_eq!(jm.neg_pct, 0.0);
}
