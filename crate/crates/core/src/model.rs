//! The full motion-tracking network: encoder, decoder and inference entry point.

use crate::data::ImageSequence;
use crate::decoder::{Decoder, MotionField};
use crate::encoder::{pair_images, Encoder, EncoderConfig, PairedInput, WindowSpec};
use crate::error::Result;
use crate::graph::{Graph, NodeId};
use crate::nn::{prefixed, prefixed_mut, seeded, Module};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Architecture hyper-parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub c_base: usize,
    pub d_state: usize,
    /// Half-window: the model sees `2k + 1` target frames.
    pub k: usize,
    pub mlp_ratio: usize,
    pub depth: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            c_base: 16,
            d_state: 8,
            k: 2,
            mlp_ratio: 2,
            depth: 1,
        }
    }
}

impl ModelConfig {
    pub fn window_len(&self) -> usize {
        2 * self.k + 1
    }

    pub fn encoder(&self) -> EncoderConfig {
        EncoderConfig {
            c_base: self.c_base,
            d_state: self.d_state,
            mlp_ratio: self.mlp_ratio,
            depth: self.depth,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub encoder: Encoder<T>,
    pub decoder: Decoder<T>,
}

impl<T: Scalar> Model<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Self {
        let mut rng = seeded(seed);
        let encoder = Encoder::new(&mut rng, config.encoder());
        let decoder = Decoder::new(&mut rng, config.c_base, config.window_len());
        Self {
            config,
            encoder,
            decoder,
        }
    }

    /// Records the network on a channel-last paired input `[N_f, H, W, 2]`;
    /// returns the `[1, H, W, 2]` field.
    pub fn forward<'p>(&'p self, g: &mut Graph<'p, T>, paired: NodeId) -> Result<NodeId> {
        let feats = self.encoder.forward(g, paired)?;
        self.decoder.forward(g, &feats)
    }

    /// Field for an already paired window.
    pub fn predict_paired(&self, f0: &PairedInput<T>) -> Result<MotionField<T>> {
        let mut g = Graph::new();
        let x = g.input(f0.channels_last());
        let y = self.forward(&mut g, x)?;
        MotionField::from_channels_last(g.value(y))
    }

    /// Motion field from frame 0 to frame `t`.
    pub fn predict_motion(&self, seq: &ImageSequence<T>, t: usize) -> Result<MotionField<T>> {
        let spec = WindowSpec::new(t, self.config.k, seq.len())?;
        self.predict_paired(&pair_images(seq, &spec)?)
    }

    /// Fields for every frame of the cycle.
    pub fn predict_cycle(&self, seq: &ImageSequence<T>) -> Result<Vec<MotionField<T>>> {
        (0..seq.len()).map(|t| self.predict_motion(seq, t)).collect()
    }

    /// Zeroes the last convolution so every prediction is the zero field.
    pub fn zero_output_layer(&mut self) {
        self.decoder.dfh.out.weight.fill(T::zero());
        self.decoder.dfh.out.bias.fill(T::zero());
    }

    /// Copy of every parameter in visiting order.
    pub fn snapshot(&self) -> Vec<Tensor<T>> {
        self.params().into_iter().map(|(_, t)| t.clone()).collect()
    }
}

impl<T: Scalar> Module<T> for Model<T> {
    fn params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut v: Vec<_> = prefixed("encoder", self.encoder.params()).collect();
        v.extend(prefixed("decoder", self.decoder.params()));
        v
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut v: Vec<_> = prefixed_mut("encoder", self.encoder.params_mut()).collect();
        v.extend(prefixed_mut("decoder", self.decoder.params_mut()));
        v
    }
}
