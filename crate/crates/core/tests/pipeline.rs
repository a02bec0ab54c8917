use mcm_core::data::phantom::MYOCARDIUM;
use mcm_core::metrics::dice;
use mcm_core::model::Model;
use mcm_core::nn::Module;
use mcm_core::pipeline::alloc::TrackingAlloc;
use mcm_core::pipeline::eval::{read_jsonl, write_jsonl};
use mcm_core::pipeline::plot::{plot, read_loss_csv, write_loss_csv};
use mcm_core::pipeline::{
    adam_step, batch_gradients, evaluate, mean_sim_loss, profile, train, Adam, Checkpoint,
    Dataset, ProfileConfig, TrainConfig,
};
use mcm_core::{Error, Tensor};

#[global_allocator]
static ALLOC: TrackingAlloc = TrackingAlloc;

fn small_cfg() -> TrainConfig {
    TrainConfig {
        lr: 3e-3,
        epochs: 2,
        batch_size: 2,
        k: 1,
        c_base: 2,
        d_state: 2,
        crop: 32,
        phantoms: 3,
        frames: 5,
        ..Default::default()
    }
}

#[test]
fn adam_with_zero_gradients_only_decays_moments() {
    let mut p = Tensor::<f64>::from_vec(&[3], vec![1.0, -2.0, 0.5]).unwrap();
    let before = p.clone();
    let mut adam = Adam::new([p.shape()]);
    adam.m[0].fill(0.4);
    adam.v[0].fill(0.2);
    adam_step(&mut [&mut p], &[Tensor::zeros(&[3])], &mut adam, 0.1).unwrap();
    assert!(adam.m[0].data().iter().all(|&m| (m - 0.36).abs() < 1e-15));
    assert!(adam.v[0].data().iter().all(|&v| (v - 0.1998).abs() < 1e-15));
    // moments were seeded by hand, so the parameter moves; with fresh moments it must not
    let mut q = before.clone();
    let mut fresh = Adam::new([q.shape()]);
    adam_step(&mut [&mut q], &[Tensor::zeros(&[3])], &mut fresh, 0.1).unwrap();
    assert_eq!(q, before);
}

#[test]
fn adam_first_step_moves_by_lr() {
    let mut p = Tensor::<f64>::scalar(0.75);
    let mut adam = Adam::new([p.shape()]);
    adam_step(&mut [&mut p], &[Tensor::scalar(1.0)], &mut adam, 0.01).unwrap();
    assert!((p.data()[0] - (0.75 - 0.01)).abs() < 1e-9);
    assert_eq!(adam.step, 1);
}

#[test]
fn adam_matches_hand_recursion() {
    let grads = [0.3, -1.2, 0.7];
    let lr = 0.05;
    let mut p = Tensor::<f64>::scalar(2.0);
    let mut adam = Adam::new([p.shape()]);
    let (mut w, mut m, mut v) = (2.0f64, 0.0f64, 0.0f64);
    for (k, g) in grads.iter().enumerate() {
        adam_step(&mut [&mut p], &[Tensor::scalar(*g)], &mut adam, lr).unwrap();
        let step = (k + 1) as i32;
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        let mhat = m / (1.0 - 0.9f64.powi(step));
        let vhat = v / (1.0 - 0.999f64.powi(step));
        w -= lr * mhat / (vhat.sqrt() + 1e-8);
        assert!((p.data()[0] - w).abs() < 1e-12);
    }
}

#[test]
fn adam_rejects_non_finite_gradients() {
    let mut p = Tensor::<f64>::scalar(1.0);
    let mut adam = Adam::new([p.shape()]);
    adam_step(&mut [&mut p], &[Tensor::scalar(0.5)], &mut adam, 0.1).unwrap();
    let snapshot = (p.clone(), adam.clone());
    let err = adam_step(&mut [&mut p], &[Tensor::scalar(f64::NAN)], &mut adam, 0.1).unwrap_err();
    assert!(matches!(err, Error::Diverged { step: 2, .. }), "{err}");
    assert!(err.to_string().contains("diverged"));
    assert_eq!((p, adam), snapshot);
}

#[test]
fn checkpoint_round_trip_is_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_cfg();
    let data = Dataset::<f64>::synthetic(2, 5, 32, 1, 0.0).unwrap();
    let out = train(&TrainConfig { epochs: 1, ..cfg.clone() }, &data).unwrap();
    let path = dir.path().join("m.mcmc");
    Checkpoint::capture(&cfg, &out.model, Some(&out.adam)).save(&path).unwrap();
    let ck = Checkpoint::<f64>::load(&path).unwrap();
    assert_eq!(ck.config, cfg);
    assert_eq!(ck.step, out.adam.step);
    assert_eq!(ck.adam().unwrap(), out.adam);
    let back = ck.model().unwrap();
    assert_eq!(back.snapshot(), out.model.snapshot());
    let seq = &data.samples[0].seq;
    for t in 0..seq.len() {
        let a = out.model.predict_motion(seq, t).unwrap();
        let b = back.predict_motion(seq, t).unwrap();
        assert!(a.u.data().iter().zip(b.u.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
    assert!(!dir.path().join("m.mcmc.tmp").exists());
}

#[test]
fn checkpoint_f32_and_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_cfg();
    let model = Model::<f32>::new(cfg.model(), 3);
    let path = dir.path().join("m.mcmc");
    Checkpoint::capture(&cfg, &model, None).save(&path).unwrap();
    let ck = Checkpoint::<f32>::load(&path).unwrap();
    assert!(ck.adam().is_none());
    assert_eq!(ck.model().unwrap().snapshot(), model.snapshot());

    let mut bytes = std::fs::read(&path).unwrap();
    bytes[0] = b'Z';
    assert!(Checkpoint::<f32>::from_bytes(&bytes).unwrap_err().to_string().contains("bad magic"));
    let good = std::fs::read(&path).unwrap();
    assert!(Checkpoint::<f32>::from_bytes(&good[..good.len() - 3]).is_err());

    let mut other = ck.clone();
    other.params.pop();
    assert!(matches!(other.model(), Err(Error::MissingParam(_))));
}

#[test]
fn zero_learning_rate_leaves_parameters_alone() {
    let cfg = TrainConfig { lr: 0.0, ..small_cfg() };
    let data = Dataset::<f64>::synthetic(3, 5, 32, 2, 0.0).unwrap();
    let init = Model::<f64>::new(cfg.model(), cfg.seed);
    let out = train(&cfg, &data).unwrap();
    assert_eq!(out.model.snapshot(), init.snapshot());
    let batch: Vec<_> = data.samples.iter().map(|s| (s, 3)).collect();
    let a = batch_gradients(&init, &cfg, &batch).unwrap().loss;
    let b = batch_gradients(&out.model, &cfg, &batch).unwrap().loss;
    assert_eq!(a, b);
}

#[test]
fn training_is_deterministic() {
    let cfg = small_cfg();
    let data = Dataset::<f64>::synthetic(3, 5, 32, 3, 0.02).unwrap();
    let a = train(&cfg, &data).unwrap();
    let b = train(&cfg, &data).unwrap();
    assert_eq!(a.log, b.log);
    assert_eq!(a.model.snapshot(), b.model.snapshot());
    assert_eq!(a.log.len(), cfg.epochs);
    assert_eq!(a.log.last().unwrap().step, 4);
}

#[test]
fn divergence_is_reported() {
    let cfg = small_cfg();
    let mut data = Dataset::<f64>::synthetic(1, 5, 32, 4, 0.0).unwrap();
    let mut frames = data.samples[0].seq.tensor().clone();
    frames.data_mut()[1] = f64::INFINITY;
    assert!(mcm_core::data::ImageSequence::new(frames).is_err());
    // corrupt a parameter instead so the loss itself blows up
    let mut model = Model::<f64>::new(cfg.model(), 0);
    model.decoder.dfh.out.bias.fill(f64::NAN);
    let adam = Adam::new(model.params().iter().map(|(_, p)| p.shape()));
    data.samples.truncate(1);
    let err = mcm_core::pipeline::train_from(&cfg, &data, model, adam, |_| {}).err().unwrap();
    assert!(matches!(err, Error::Diverged { step: 1, .. }), "{err}");
}

#[test]
fn zero_model_scores_the_no_motion_baseline() {
    let data = Dataset::<f64>::synthetic(2, 6, 32, 5, 0.0).unwrap();
    let mut model = Model::<f64>::new(small_cfg().model(), 1);
    model.zero_output_layer();
    let recs = evaluate(&model, &data, None).unwrap();
    assert_eq!(recs.len(), 2 * 6);
    for r in &recs {
        let s = data.samples.iter().find(|s| s.id == r.seq_id).unwrap();
        let masks = s.masks.as_ref().unwrap();
        assert_eq!(r.dice.unwrap(), dice(&masks[0], &masks[r.t], MYOCARDIUM).unwrap());
        assert!(r.has_mask);
        assert!(r.epe.is_some());
        assert_eq!((r.neg_jac_pct, r.mean_abs_jm1, r.mean_disp), (0.0, 0.0, 0.0));
        assert_eq!(r.tc_index, Some(0.0));
    }
    let some = evaluate(&model, &data, Some(&[0, 3])).unwrap();
    assert_eq!(some.len(), 4);
    assert!(evaluate(&model, &data, Some(&[6])).is_err());

    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("r.jsonl");
    write_jsonl(&p, &recs).unwrap();
    assert_eq!(read_jsonl(&p).unwrap(), recs);
    let line = std::fs::read_to_string(&p).unwrap();
    for key in ["seq_id", "\"t\"", "dice", "neg_jac_pct", "mean_abs_jm1", "epe", "tc_index"] {
        assert!(line.lines().next().unwrap().contains(key), "{key}");
    }
}

#[test]
fn dataset_directory_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = Dataset::<f32>::synthetic(2, 4, 32, 6, 0.0).unwrap();
    data.save_dir(dir.path()).unwrap();
    let back = Dataset::<f32>::load_dir(dir.path(), 32).unwrap();
    assert_eq!(back.len(), 2);
    for (a, b) in data.samples.iter().zip(&back.samples) {
        assert_eq!(a.id, b.id);
        assert_eq!(a.masks, b.masks);
        assert_eq!(a.fields.as_ref().unwrap(), b.fields.as_ref().unwrap());
        // min-max renormalization is affine, so the extremes map to 0 and 1
        let d = b.seq.tensor().data();
        assert_eq!(d.iter().copied().fold(f32::INFINITY, f32::min), 0.0);
        assert_eq!(d.iter().copied().fold(f32::NEG_INFINITY, f32::max), 1.0);
    }
    let sub = tempfile::tempdir().unwrap();
    std::fs::copy(dir.path().join("phantom_000.seq.mcmt"), sub.path().join("a.seq.mcmt")).unwrap();
    let bare = Dataset::<f32>::load_dir(sub.path(), 32).unwrap();
    assert!(bare.samples[0].fields.is_none() && bare.samples[0].masks.is_none());
    assert!(Dataset::<f32>::load_dir(tempfile::tempdir().unwrap().path(), 32).is_err());
}

#[test]
fn profile_memory_grows_with_the_window() {
    let pc = ProfileConfig {
        size: 32,
        c_base: 4,
        d_state: 4,
        iters: 3,
        warmup: 1,
        ..Default::default()
    };
    let rows = profile::<f32>(&pc).unwrap();
    assert_eq!(rows.iter().map(|r| r.n_f).collect::<Vec<_>>(), vec![1, 3, 5]);
    assert_eq!(rows[0].memory_source, "allocator");
    assert!(rows[0].peak_bytes < rows[1].peak_bytes && rows[1].peak_bytes < rows[2].peak_bytes);
    assert!(rows.iter().all(|r| r.latency_ms > 0.0));

    let again = profile::<f32>(&pc).unwrap();
    for (a, b) in rows.iter().zip(&again) {
        let ratio = a.latency_ms / b.latency_ms;
        assert!((1.0 / 3.0..3.0).contains(&ratio), "N_f={}: {} vs {} ms", a.n_f, a.latency_ms, b.latency_ms);
    }
}

#[test]
fn shipped_configs_parse() {
    let root = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let desk = TrainConfig::load(root.join("desk.cfg")).unwrap();
    assert_eq!((desk.k, desk.c_base, desk.crop, desk.frames), (2, 4, 32, 10));
    assert_eq!(desk.epochs * desk.phantoms / desk.batch_size, 200);
    let full = TrainConfig::load(root.join("full.cfg")).unwrap();
    assert_eq!((full.lr, full.batch_size, full.epochs), (1e-4, 32, 200));
    assert!(full.data.is_none());
}

#[test]
fn plots_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let data = Dataset::<f64>::synthetic(2, 5, 32, 7, 0.0).unwrap();
    let out = train(&small_cfg(), &data).unwrap();
    let loss = dir.path().join("loss.csv");
    write_loss_csv(&loss, &out.log).unwrap();
    assert_eq!(read_loss_csv(&loss).unwrap(), out.log);
    let recs = evaluate(&out.model, &data, None).unwrap();
    let files = plot(
        dir.path().join("plots"),
        &[("a".into(), out.log.clone())],
        &[("lambda=0.05".into(), recs.clone()), ("copy".into(), recs)],
    )
    .unwrap();
    assert_eq!(files.len(), 5);
    let svg = std::fs::read_to_string(dir.path().join("plots/tc.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    assert_eq!(svg.matches("<polyline").count(), 2);
    let summary = std::fs::read_to_string(dir.path().join("plots/summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);
}

#[test]
fn phantom_training_halves_the_similarity_loss() {
    let cfg = TrainConfig {
        lr: 3e-3,
        k: 1,
        c_base: 4,
        d_state: 4,
        batch_size: 8,
        phantoms: 32,
        epochs: 50,
        frames: 10,
        ..Default::default()
    };
    let data = Dataset::<f32>::synthetic(cfg.phantoms, cfg.frames, 32, cfg.seed, 0.0).unwrap();
    let before = mean_sim_loss(&Model::new(cfg.model(), cfg.seed), &data).unwrap();
    let out = train(&cfg, &data).unwrap();
    assert_eq!(out.adam.step, 200);
    let after = mean_sim_loss(&out.model, &data).unwrap();
    assert!(after <= 0.5 * before, "{before} -> {after}");

    // the phantom is most contracted at mid-cycle and still at frame 0
    let mean_disp = |seq, t| {
        let m = out.model.predict_motion(seq, t).unwrap().magnitudes();
        m.iter().sum::<f32>() / m.len() as f32
    };
    for s in &data.samples[..4] {
        let (d0, des) = (mean_disp(&s.seq, 0), mean_disp(&s.seq, (cfg.frames - 1) / 2));
        assert!(d0 < des, "{}: |phi_0| {d0} vs |phi_ES| {des}", s.id);
    }
}
