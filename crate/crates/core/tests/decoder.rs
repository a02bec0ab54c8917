mod common;

use common::{random_tensor, rng};
use mcm_core::data::ImageSequence;
use mcm_core::decoder::{frame_schedule, Decoder, Dfh, MotionFeature, MotionField, Pup};
use mcm_core::encoder::{FeatureMap, LEVELS};
use mcm_core::gradcheck::{check_module, probe};
use mcm_core::model::{Model, ModelConfig};
use mcm_core::{Error, Tensor};

fn features(seed: u64, nf: usize, c: usize, h: usize, w: usize) -> [FeatureMap<f64>; LEVELS] {
    let mut r = rng(seed);
    std::array::from_fn(|i| FeatureMap {
        data: random_tensor(&mut r, &[nf, h >> (i + 2), w >> (i + 2), c << i], 1.0),
        level: i + 1,
    })
}

#[test]
fn frame_schedule_collapses_to_one() {
    assert_eq!(frame_schedule(1), ([1, 1], 1));
    assert_eq!(frame_schedule(3), ([3, 1], 1));
    assert_eq!(frame_schedule(5), ([3, 3], 1));
    assert_eq!(frame_schedule(7), ([3, 3], 3));
    assert_eq!(frame_schedule(2), ([2, 1], 1));
}

#[test]
fn pup_output_shape_and_zero_features() {
    let pup = Pup::<f32>::new(&mut rng(0), 16);
    let feats: [FeatureMap<f32>; LEVELS] = std::array::from_fn(|i| FeatureMap {
        data: Tensor::zeros(&[5, 32 >> i, 32 >> i, 16 << i]),
        level: i + 1,
    });
    let fm = pup.eval(&feats).unwrap();
    assert_eq!(fm.data.shape(), &[5, 128, 128, 16]);
    assert_eq!(fm.data.max_abs(), 0.0);
}

#[test]
fn pup_rejects_mismatched_levels() {
    let pup = Pup::<f64>::new(&mut rng(0), 4);
    let mut feats = features(1, 1, 4, 32, 32);
    feats[1].data = Tensor::zeros(&[1, 3, 3, 8]);
    assert!(pup.eval(&feats).is_err());
}

#[test]
fn dfh_zero_features_give_zero_field() {
    let dfh = Dfh::<f64>::new(&mut rng(2), 4, 5);
    let fm = MotionFeature {
        data: Tensor::zeros(&[5, 8, 8, 4]),
    };
    let phi = dfh.eval(&fm).unwrap();
    assert_eq!((phi.height(), phi.width()), (8, 8));
    assert_eq!(phi.u.max_abs(), 0.0);
}

#[test]
fn dfh_path_symmetry_on_palindromic_features() {
    let mut dfh = Dfh::<f64>::new(&mut rng(3), 4, 5);
    dfh.bwd = dfh.fwd.clone();
    let mut r = rng(4);
    let frames: Vec<Tensor<f64>> = (0..3).map(|_| random_tensor(&mut r, &[6, 6, 4], 1.0)).collect();
    let order = [0, 1, 2, 1, 0];
    let data: Vec<f64> = order.iter().flat_map(|&i| frames[i].data().to_vec()).collect();
    let fm = MotionFeature {
        data: Tensor::from_vec(&[5, 6, 6, 4], data).unwrap(),
    };
    let fwd = dfh.forward_path(&fm).unwrap();
    assert_eq!(fwd.shape(), &[1, 6, 6, 4]);
    assert_eq!(dfh.fused(&fm).unwrap(), fwd);
}

#[test]
fn dfh_rejects_other_windows() {
    let dfh = Dfh::<f64>::new(&mut rng(2), 4, 5);
    let fm = MotionFeature {
        data: Tensor::zeros(&[3, 4, 4, 4]),
    };
    let err = dfh.eval(&fm).unwrap_err();
    assert!(matches!(err, Error::UnsupportedWindow { expected: 5, got: 3 }));
    assert!(err.to_string().contains("unsupported window length"));
}

#[test]
fn zero_output_layer_gives_zero_field() {
    let mut model = Model::<f64>::new(ModelConfig { c_base: 4, d_state: 4, k: 1, ..Default::default() }, 5);
    model.zero_output_layer();
    let mut r = rng(6);
    let seq = ImageSequence::new(random_tensor(&mut r, &[4, 32, 32], 1.0)).unwrap();
    for t in 0..4 {
        assert_eq!(model.predict_motion(&seq, t).unwrap().u.max_abs(), 0.0);
    }
}

#[test]
fn fresh_model_predicts_near_identity() {
    let model = Model::<f32>::new(ModelConfig::default(), 7);
    let mut r = rng(8);
    let seq = ImageSequence::new(random_tensor(&mut r, &[6, 64, 64], 1.0).cast::<f32>()).unwrap();
    let phi = model.predict_motion(&seq, 3).unwrap();
    assert_eq!(phi.u.shape(), &[2, 64, 64]);
    assert!(phi.u.max_abs() < 0.1);
    assert!(phi.u.is_finite());
}

#[test]
fn field_from_channels_last_round_trips() {
    let phi = MotionField::<f64>::from_fn(3, 4, |y, x| (x as f64, -(y as f64)));
    assert_eq!(phi.ux(2, 3), 3.0);
    assert_eq!(phi.uy(2, 3), -2.0);
    let back = MotionField::from_channels_last(&phi.channels_last()).unwrap();
    assert_eq!(back, phi);
}

#[test]
fn pup_dfh_gradients_match_finite_differences() {
    let mut dec = Decoder::<f64>::new(&mut rng(9), 2, 3);
    // lift the output layer off its near-zero init so every gradient is visible
    let mut r = rng(10);
    dec.dfh.out.weight = random_tensor(&mut r, dec.dfh.out.weight.shape(), 0.5);
    let feats = features(11, 3, 2, 32, 32);
    let inputs: Vec<Tensor<f64>> = feats.iter().map(|f| f.data.clone()).collect();
    let report = check_module(&mut dec, &inputs, 5, |m, g, ids| {
        let ids: [_; LEVELS] = std::array::from_fn(|i| ids[i]);
        let y = m.forward(g, &ids)?;
        probe(g, y, 3)
    })
    .unwrap();
    assert!(report.worst() < 1e-3, "{:?}", report.worst_entry());
}

#[test]
fn end_to_end_gradients_match_finite_differences() {
    let mut model = Model::<f64>::new(ModelConfig { c_base: 2, d_state: 2, k: 1, ..Default::default() }, 12);
    let mut r = rng(13);
    model.decoder.dfh.out.weight = random_tensor(&mut r, model.decoder.dfh.out.weight.shape(), 0.5);
    let x = random_tensor(&mut r, &[3, 32, 32, 2], 1.0);
    let report = check_module(&mut model, &[x], 2, |m, g, ids| {
        let y = m.forward(g, ids[0])?;
        probe(g, y, 4)
    })
    .unwrap();
    assert!(report.worst() < 1e-3, "{:?}", report.worst_entry());
}
