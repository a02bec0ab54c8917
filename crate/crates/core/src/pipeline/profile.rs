use std::time::Instant;

use rand::Rng;
use serde::Serialize;

use crate::encoder::PairedInput;
use crate::error::Result;
use crate::graph::Graph;
use crate::model::{Model, ModelConfig};
use crate::nn::seeded;
use crate::pipeline::alloc;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct ProfileConfig {
    pub size: usize,
    pub c_base: usize,
    pub d_state: usize,
    pub windows: Vec<usize>,
    pub warmup: usize,
    pub iters: usize,
    pub seed: u64,
}

impl Default for ProfileConfig {
    fn default() -> Self {
        Self {
            size: 64,
            c_base: 8,
            d_state: 8,
            windows: vec![1, 3, 5],
            warmup: 5,
            iters: 100,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProfileRow {
    pub n_f: usize,
    /// Peak bytes allocated during one prediction, above the pre-call level.
    pub peak_bytes: usize,
    /// `"allocator"` when measured by the tracking allocator, else `"graph"`.
    pub memory_source: &'static str,
    pub latency_ms: f64,
}

/// Peak working memory and mean latency of one prediction per window length.
/// Only odd window lengths are meaningful (`N_f = 2K + 1`).
pub fn profile<T: Scalar>(pc: &ProfileConfig) -> Result<Vec<ProfileRow>> {
    let tracking = alloc::is_tracking();
    let mut rows = Vec::new();
    for &n_f in &pc.windows {
        let cfg = ModelConfig {
            c_base: pc.c_base,
            d_state: pc.d_state,
            k: n_f / 2,
            ..ModelConfig::default()
        };
        let model = Model::<T>::new(cfg, pc.seed);
        let mut rng = seeded(pc.seed + n_f as u64);
        let pairs = Tensor::from_fn(&[n_f, 2, pc.size, pc.size], |_| T::c(rng.gen_range(0.0..1.0)));
        let input = PairedInput { pairs };

        let peak_bytes = if tracking {
            alloc::reset_peak();
            let base = alloc::current_bytes();
            std::hint::black_box(model.predict_paired(&input)?);
            alloc::peak_bytes().saturating_sub(base)
        } else {
            let mut g = Graph::new();
            let x = g.input(input.channels_last());
            model.forward(&mut g, x)?;
            g.activation_bytes()
        };

        for _ in 0..pc.warmup {
            std::hint::black_box(model.predict_paired(&input)?);
        }
        let start = Instant::now();
        for _ in 0..pc.iters {
            std::hint::black_box(model.predict_paired(&input)?);
        }
        let latency_ms = start.elapsed().as_secs_f64() * 1e3 / pc.iters.max(1) as f64;
        rows.push(ProfileRow {
            n_f,
            peak_bytes,
            memory_source: if tracking { "allocator" } else { "graph" },
            latency_ms,
        });
    }
    Ok(rows)
}
