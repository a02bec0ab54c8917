use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{pair_images, WindowSpec};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::model::Model;
use crate::nn::{seeded, Module};
use crate::pipeline::adam::Adam;
use crate::pipeline::config::TrainConfig;
use crate::pipeline::dataset::{Dataset, Sample};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::warp_loss::record_loss;

/// Mean losses over one epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub step: u64,
    pub loss: f64,
    pub sim: f64,
    pub smooth: f64,
}

pub struct TrainOutcome<T> {
    pub model: Model<T>,
    pub adam: Adam<T>,
    pub log: Vec<EpochRecord>,
}

/// Loss terms and mean parameter gradients of one batch.
pub struct BatchResult<T> {
    pub loss: f64,
    pub sim: f64,
    pub smooth: f64,
    pub grads: Vec<Tensor<T>>,
}

/// Forward and backward over `(sample, target frame)` pairs; losses and
/// gradients are averaged over the batch.
pub fn batch_gradients<T: Scalar>(
    model: &Model<T>,
    cfg: &TrainConfig,
    batch: &[(&Sample<T>, usize)],
) -> Result<BatchResult<T>> {
    let params = model.params();
    let mut grads: Vec<Tensor<T>> = params.iter().map(|(_, p)| Tensor::zeros(p.shape())).collect();
    let (mut loss, mut sim, mut smooth) = (0.0, 0.0, 0.0);
    let loss_cfg = cfg.loss();
    for &(sample, t) in batch {
        let spec = WindowSpec::new(t, cfg.k, sample.seq.len())?;
        let paired = pair_images(&sample.seq, &spec)?;
        let mut g = Graph::new();
        let x = g.input(paired.channels_last());
        let flow = model.forward(&mut g, x)?;
        let target = g.input(sample.seq.frame_tensor(t));
        let reference = g.input(sample.seq.frame_tensor(0));
        let nodes = record_loss(&mut g, target, reference, flow, &loss_cfg)?;
        loss += g.value(nodes.total).data()[0].as_f64();
        sim += g.value(nodes.sim).data()[0].as_f64();
        smooth += g.value(nodes.smooth).data()[0].as_f64();
        let gr = g.backward(nodes.total)?;
        for (acc, (_, p)) in grads.iter_mut().zip(&params) {
            if let Some(d) = gr.wrt_param(p) {
                acc.add_assign(d);
            }
        }
    }
    let n = batch.len().max(1) as f64;
    let inv = T::c(1.0 / n);
    for gt in &mut grads {
        for v in gt.data_mut() {
            *v *= inv;
        }
    }
    Ok(BatchResult {
        loss: loss / n,
        sim: sim / n,
        smooth: smooth / n,
        grads,
    })
}

/// Trains a freshly initialized model.
pub fn train<T: Scalar>(cfg: &TrainConfig, data: &Dataset<T>) -> Result<TrainOutcome<T>> {
    let model = Model::new(cfg.model(), cfg.seed);
    let adam = Adam::new(model.params().iter().map(|(_, p)| p.shape()));
    train_from(cfg, data, model, adam, |_| {})
}

/// Runs `cfg.epochs` epochs starting from `model` and `adam`. Each epoch
/// visits every sequence once in a shuffled order, with a uniformly drawn
/// target frame per visit. `on_epoch` sees each record as it is produced.
pub fn train_from<T: Scalar>(
    cfg: &TrainConfig,
    data: &Dataset<T>,
    mut model: Model<T>,
    mut adam: Adam<T>,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptySequence);
    }
    let mut rng = seeded(cfg.seed ^ 0x7a1e_5eed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss, mut sim, mut smooth, mut batches) = (0.0, 0.0, 0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<(&Sample<T>, usize)> = chunk
                .iter()
                .map(|&i| {
                    let s = &data.samples[i];
                    (s, rng.gen_range(0..s.seq.len()))
                })
                .collect();
            let r = batch_gradients(&model, cfg, &batch)?;
            if !r.loss.is_finite() {
                return Err(Error::Diverged {
                    step: adam.step + 1,
                    what: format!("loss {} (sim {}, smooth {})", r.loss, r.sim, r.smooth),
                });
            }
            let mut params: Vec<&mut Tensor<T>> = model.params_mut().into_iter().map(|(_, p)| p).collect();
            adam.update(&mut params, &r.grads, cfg.lr)?;
            loss += r.loss;
            sim += r.sim;
            smooth += r.smooth;
            batches += 1;
        }
        let n = batches as f64;
        let rec = EpochRecord {
            epoch,
            step: adam.step,
            loss: loss / n,
            sim: sim / n,
            smooth: smooth / n,
        };
        on_epoch(&rec);
        log.push(rec);
    }
    Ok(TrainOutcome { model, adam, log })
}

/// Mean similarity loss of `model` over every frame `t >= 1` of every sequence.
pub fn mean_sim_loss<T: Scalar>(model: &Model<T>, data: &Dataset<T>) -> Result<f64> {
    let (mut acc, mut n) = (0.0, 0usize);
    for s in &data.samples {
        let f0 = s.seq.frame_tensor(0);
        for t in 1..s.seq.len() {
            let phi = model.predict_motion(&s.seq, t)?;
            let warped = crate::warp_loss::warp(&f0, &phi)?;
            acc += crate::warp_loss::sim_loss(&s.seq.frame_tensor(t), &warped)?.as_f64();
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Invalid("no frames beyond the reference".into()));
    }
    Ok(acc / n as f64)
}
