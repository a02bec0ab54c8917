//! Central finite-difference verification of reverse-mode gradients.

use rand::seq::index::sample;
use rand::Rng;

use crate::error::Result;
use crate::graph::{Graph, NodeId};
use crate::nn::{seeded, Module};
use crate::tensor::Tensor;

/// Finite-difference step used throughout the test suites.
pub const FD_STEP: f64 = 1e-5;

/// Outcome of one gradient check: the worst relative error per checked tensor.
#[derive(Clone, Debug, Default)]
pub struct GradReport {
    pub entries: Vec<(String, f64)>,
}

impl GradReport {
    pub fn worst(&self) -> f64 {
        self.entries.iter().map(|e| e.1).fold(0.0, f64::max)
    }

    pub fn worst_entry(&self) -> Option<&(String, f64)> {
        self.entries
            .iter()
            .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
    }
}

/// `max |analytic - numeric| / max(|analytic|, |numeric|)` over the checked entries.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = analytic
        .iter()
        .chain(numeric)
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1e-6);
    let diff = analytic
        .iter()
        .zip(numeric)
        .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
    diff / scale
}

/// Reduces `node` to a scalar with fixed pseudo-random weights.
pub fn probe(g: &mut Graph<'_, f64>, node: NodeId, seed: u64) -> Result<NodeId> {
    let mut rng = seeded(seed);
    let n = g.value(node).numel();
    let w = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    g.weighted_sum(node, w)
}

fn pick(n: usize, max: usize, seed: u64) -> Vec<usize> {
    if n <= max {
        (0..n).collect()
    } else {
        let mut v = sample(&mut seeded(seed), n, max).into_vec();
        v.sort_unstable();
        v
    }
}

/// Checks gradients of a scalar function of plain input tensors.
///
/// At most `max_entries` elements per tensor are perturbed.
pub fn check_inputs<F>(inputs: &[Tensor<f64>], max_entries: usize, build: F) -> Result<GradReport>
where
    F: Fn(&mut Graph<'_, f64>, &[NodeId]) -> Result<NodeId>,
{
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let loss = build(&mut g, &ids)?;
    let grads = g.backward(loss)?;
    let eval = |ins: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = ins.iter().map(|t| g.input(t.clone())).collect();
        let l = build(&mut g, &ids)?;
        Ok(g.value(l).data()[0])
    };
    let mut report = GradReport::default();
    let mut work = inputs.to_vec();
    for (k, id) in ids.iter().enumerate() {
        let analytic = grads
            .wrt(*id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[k].shape()));
        let idx = pick(inputs[k].numel(), max_entries, k as u64 + 17);
        let mut a = Vec::new();
        let mut num = Vec::new();
        for &e in &idx {
            let orig = work[k].data()[e];
            work[k].data_mut()[e] = orig + FD_STEP;
            let fp = eval(&work)?;
            work[k].data_mut()[e] = orig - FD_STEP;
            let fm = eval(&work)?;
            work[k].data_mut()[e] = orig;
            num.push((fp - fm) / (2.0 * FD_STEP));
            a.push(analytic.data()[e]);
        }
        report.entries.push((format!("input{k}"), relative_error(&a, &num)));
    }
    Ok(report)
}

/// Checks gradients w.r.t. every parameter tensor of `module` and every input.
pub fn check_module<M, F>(
    module: &mut M,
    inputs: &[Tensor<f64>],
    max_entries: usize,
    build: F,
) -> Result<GradReport>
where
    M: Module<f64>,
    F: for<'p> Fn(&'p M, &mut Graph<'p, f64>, &[NodeId]) -> Result<NodeId>,
{
    let (param_grads, input_grads) = {
        let m: &M = module;
        let mut g = Graph::new();
        let ids: Vec<NodeId> = inputs.iter().map(|t| g.input(t.clone())).collect();
        let loss = build(m, &mut g, &ids)?;
        let grads = g.backward(loss)?;
        let pg: Vec<(String, Tensor<f64>)> = m
            .params()
            .into_iter()
            .map(|(n, p)| (n, grads.param_or_zero(p)))
            .collect();
        let ig: Vec<Tensor<f64>> = ids
            .iter()
            .zip(inputs)
            .map(|(id, t)| grads.wrt(*id).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect();
        (pg, ig)
    };
    let eval = |m: &M, ins: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = ins.iter().map(|t| g.input(t.clone())).collect();
        let l = build(m, &mut g, &ids)?;
        Ok(g.value(l).data()[0])
    };
    let mut report = GradReport::default();
    for (k, (name, analytic)) in param_grads.iter().enumerate() {
        let idx = pick(analytic.numel(), max_entries, k as u64 + 101);
        let mut a = Vec::new();
        let mut num = Vec::new();
        for &e in &idx {
            let orig = module.params_mut()[k].1.data()[e];
            module.params_mut()[k].1.data_mut()[e] = orig + FD_STEP;
            let fp = eval(module, inputs)?;
            module.params_mut()[k].1.data_mut()[e] = orig - FD_STEP;
            let fm = eval(module, inputs)?;
            module.params_mut()[k].1.data_mut()[e] = orig;
            num.push((fp - fm) / (2.0 * FD_STEP));
            a.push(analytic.data()[e]);
        }
        report.entries.push((name.clone(), relative_error(&a, &num)));
    }
    let mut work = inputs.to_vec();
    for (k, analytic) in input_grads.iter().enumerate() {
        let idx = pick(analytic.numel(), max_entries, k as u64 + 7);
        let mut a = Vec::new();
        let mut num = Vec::new();
        for &e in &idx {
            let orig = work[k].data()[e];
            work[k].data_mut()[e] = orig + FD_STEP;
            let fp = eval(module, &work)?;
            work[k].data_mut()[e] = orig - FD_STEP;
            let fm = eval(module, &work)?;
            work[k].data_mut()[e] = orig;
            num.push((fp - fm) / (2.0 * FD_STEP));
            a.push(analytic.data()[e]);
        }
        report.entries.push((format!("input{k}"), relative_error(&a, &num)));
    }
    Ok(report)
}
