//! Image pairing and the hierarchical bi-directional Mamba encoder.
//!
//! Feature maps are channel-last, `[N_f, H_i, W_i, C_i]`; [`FeatureMap::dims`]
//! reports them in `(N_f, C_i, H_i, W_i)` order.

use crate::data::ImageSequence;
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::kernels::dense::Activation;
use crate::nn::{prefixed, prefixed_mut, LayerNorm, Linear, Module, SeedRng};
use crate::scalar::Scalar;
use crate::ssm::Bism;
use crate::tensor::Tensor;

/// Side length of the non-overlapping patches embedded at the first level.
pub const PATCH: usize = 4;
/// Number of encoder levels.
pub const LEVELS: usize = 4;
/// Total downsampling of the deepest level.
pub const STRIDE: usize = PATCH << (LEVELS - 1);

/// Target frame `t`, half-window `k` and cycle length.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowSpec {
    pub t: usize,
    pub k: usize,
    pub frames: usize,
}

impl WindowSpec {
    pub fn new(t: usize, k: usize, frames: usize) -> Result<Self> {
        if frames == 0 {
            return Err(Error::EmptySequence);
        }
        if t >= frames {
            return Err(Error::OutOfRange(format!(
                "target frame {t} outside cycle of {frames}"
            )));
        }
        Ok(Self { t, k, frames })
    }

    pub fn window_len(&self) -> usize {
        2 * self.k + 1
    }

    /// Frame indices `t-K..=t+K`, each clamped to the cycle.
    pub fn indices(&self) -> Vec<usize> {
        let last = self.frames as isize - 1;
        (-(self.k as isize)..=self.k as isize)
            .map(|o| (self.t as isize + o).clamp(0, last) as usize)
            .collect()
    }
}

/// `N_f` two-channel frames `(reference, window frame)`, stored `[N_f, 2, H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PairedInput<T> {
    pub pairs: Tensor<T>,
}

impl<T: Scalar> PairedInput<T> {
    pub fn window_len(&self) -> usize {
        self.pairs.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.pairs.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.pairs.shape()[3]
    }

    /// `[N_f, H, W, 2]` layout consumed by the network.
    pub fn channels_last(&self) -> Tensor<T> {
        self.pairs.channels_to_last()
    }

    /// Whether channel 0 is the same image in every pair.
    pub fn reference_is_constant(&self) -> bool {
        let n = self.height() * self.width();
        let first = &self.pairs.data()[..n];
        (0..self.window_len()).all(|f| &self.pairs.data()[f * 2 * n..f * 2 * n + n] == first)
    }
}

/// Pairs frame 0 with every frame of the clamped window around `spec.t`.
pub fn pair_images<T: Scalar>(seq: &ImageSequence<T>, spec: &WindowSpec) -> Result<PairedInput<T>> {
    if seq.is_empty() {
        return Err(Error::EmptySequence);
    }
    let spec = WindowSpec::new(spec.t, spec.k, seq.len())?;
    let (h, w) = (seq.height(), seq.width());
    let idx = spec.indices();
    let mut data = Vec::with_capacity(idx.len() * 2 * h * w);
    for &i in &idx {
        data.extend_from_slice(seq.frame(0));
        data.extend_from_slice(seq.frame(i));
    }
    Ok(PairedInput {
        pairs: Tensor::from_vec(&[idx.len(), 2, h, w], data)?,
    })
}

/// Deformation features of one encoder level, channel-last.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap<T> {
    pub data: Tensor<T>,
    pub level: usize,
}

impl<T: Scalar> FeatureMap<T> {
    /// `(N_f, C, H, W)`.
    pub fn dims(&self) -> (usize, usize, usize, usize) {
        let s = self.data.shape();
        (s[0], s[3], s[1], s[2])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EncoderConfig {
    pub c_base: usize,
    pub d_state: usize,
    pub mlp_ratio: usize,
    /// BMBs per level.
    pub depth: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            c_base: 16,
            d_state: 8,
            mlp_ratio: 2,
            depth: 1,
        }
    }
}

impl EncoderConfig {
    pub fn channels(&self, level: usize) -> usize {
        self.c_base << (level - 1)
    }
}

/// Two-layer per-token network with a GELU in between.
#[derive(Clone, Debug)]
pub struct Mlp<T> {
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
}

impl<T: Scalar> Mlp<T> {
    pub fn new(rng: &mut SeedRng, d: usize, ratio: usize) -> Self {
        Self {
            fc1: Linear::new(rng, d, d * ratio, 1.0),
            fc2: Linear::new(rng, d * ratio, d, 1.0),
        }
    }

    pub fn forward<'p>(&'p self, g: &mut Graph<'p, T>, x: NodeId) -> Result<NodeId> {
        let h = self.fc1.forward(g, x)?;
        let h = g.act(h, Activation::Gelu);
        self.fc2.forward(g, h)
    }
}

impl<T: Scalar> Module<T> for Mlp<T> {
    fn params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut v: Vec<_> = prefixed("fc1", self.fc1.params()).collect();
        v.extend(prefixed("fc2", self.fc2.params()));
        v
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut v: Vec<_> = prefixed_mut("fc1", self.fc1.params_mut()).collect();
        v.extend(prefixed_mut("fc2", self.fc2.params_mut()));
        v
    }
}

/// Bi-directional Mamba block:
/// `h = x + BiSM(LN(x))`, `out = h + MLP(LN(h))`.
#[derive(Clone, Debug)]
pub struct Bmb<T> {
    pub norm1: LayerNorm<T>,
    pub bism: Bism<T>,
    pub norm2: LayerNorm<T>,
    pub mlp: Mlp<T>,
}

impl<T: Scalar> Bmb<T> {
    pub fn new(rng: &mut SeedRng, d: usize, d_state: usize, mlp_ratio: usize) -> Self {
        Self {
            norm1: LayerNorm::new(d),
            bism: Bism::new(rng, d, d_state),
            norm2: LayerNorm::new(d),
            mlp: Mlp::new(rng, d, mlp_ratio),
        }
    }

    pub fn channels(&self) -> usize {
        self.bism.channels()
    }

    pub fn forward<'p>(&'p self, g: &mut Graph<'p, T>, x: NodeId) -> Result<NodeId> {
        let c = g.value(x).last_dim();
        if c != self.channels() {
            return Err(Error::ChannelMismatch {
                expected: self.channels(),
                got: c,
            });
        }
        let n1 = self.norm1.forward(g, x)?;
        let s = self.bism.apply(g, n1)?;
        let h = g.add(s, x)?;
        let n2 = self.norm2.forward(g, h)?;
        let m = self.mlp.forward(g, n2)?;
        g.add(m, h)
    }

    /// Value-level evaluation of one block.
    pub fn eval(&self, f: &FeatureMap<T>) -> Result<FeatureMap<T>> {
        let mut g = Graph::new();
        let x = g.input(f.data.clone());
        let y = self.forward(&mut g, x)?;
        Ok(FeatureMap {
            data: g.value(y).clone(),
            level: f.level,
        })
    }
}

impl<T: Scalar> Module<T> for Bmb<T> {
    fn params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut v: Vec<_> = prefixed("norm1", self.norm1.params()).collect();
        v.extend(prefixed("bism", self.bism.params()));
        v.extend(prefixed("norm2", self.norm2.params()));
        v.extend(prefixed("mlp", self.mlp.params()));
        v
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut v: Vec<_> = prefixed_mut("norm1", self.norm1.params_mut()).collect();
        v.extend(prefixed_mut("bism", self.bism.params_mut()));
        v.extend(prefixed_mut("norm2", self.norm2.params_mut()));
        v.extend(prefixed_mut("mlp", self.mlp.params_mut()));
        v
    }
}

/// Strided linear projection of non-overlapping `PATCH x PATCH` patches.
#[derive(Clone, Debug)]
pub struct PatchEmbed<T> {
    pub proj: Linear<T>,
}

impl<T: Scalar> PatchEmbed<T> {
    pub fn new(rng: &mut SeedRng, cin: usize, cout: usize) -> Self {
        Self {
            proj: Linear::new(rng, PATCH * PATCH * cin, cout, 1.0),
        }
    }

    pub fn forward<'p>(&'p self, g: &mut Graph<'p, T>, x: NodeId) -> Result<NodeId> {
        let p = g.space_to_depth(x, PATCH)?;
        self.proj.forward(g, p)
    }
}

/// Concatenates each 2x2 neighbourhood (row-major corners) and projects
/// `4C -> 2C`.
#[derive(Clone, Debug)]
pub struct PatchMerge<T> {
    pub proj: Linear<T>,
}

impl<T: Scalar> PatchMerge<T> {
    pub fn new(rng: &mut SeedRng, c: usize) -> Self {
        Self {
            proj: Linear::new(rng, 4 * c, 2 * c, 1.0),
        }
    }

    pub fn forward<'p>(&'p self, g: &mut Graph<'p, T>, x: NodeId) -> Result<NodeId> {
        let c = g.value(x).last_dim();
        if 4 * c != self.proj.din() {
            return Err(Error::ChannelMismatch {
                expected: self.proj.din() / 4,
                got: c,
            });
        }
        let p = g.space_to_depth(x, 2)?;
        self.proj.forward(g, p)
    }

    pub fn eval(&self, f: &FeatureMap<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let x = g.input(f.data.clone());
        let y = self.forward(&mut g, x)?;
        Ok(g.value(y).clone())
    }
}

#[derive(Clone, Debug)]
pub struct Stage<T> {
    /// `None` at level 1, where the patch embedding precedes the blocks.
    pub merge: Option<PatchMerge<T>>,
    pub blocks: Vec<Bmb<T>>,
}

/// Patch embedding, then one stage of BMBs per level with patch merging in between.
#[derive(Clone, Debug)]
pub struct Encoder<T> {
    pub config: EncoderConfig,
    pub embed: PatchEmbed<T>,
    pub stages: Vec<Stage<T>>,
}

impl<T: Scalar> Encoder<T> {
    pub fn new(rng: &mut SeedRng, config: EncoderConfig) -> Self {
        let embed = PatchEmbed::new(rng, 2, config.c_base);
        let stages = (1..=LEVELS)
            .map(|level| {
                let c = config.channels(level);
                let merge = (level > 1).then(|| PatchMerge::new(rng, c / 2));
                let blocks = (0..config.depth)
                    .map(|_| Bmb::new(rng, c, config.d_state, config.mlp_ratio))
                    .collect();
                Stage { merge, blocks }
            })
            .collect();
        Self {
            config,
            embed,
            stages,
        }
    }

    /// Records the encoder on `x: [N_f, H, W, 2]`; returns the four level outputs.
    pub fn forward<'p>(&'p self, g: &mut Graph<'p, T>, x: NodeId) -> Result<[NodeId; LEVELS]> {
        let s = g.shape(x).to_vec();
        if s.len() != 4 || s[3] != 2 {
            return Err(Error::ChannelMismatch {
                expected: 2,
                got: s.last().copied().unwrap_or(0),
            });
        }
        if s[1] % STRIDE != 0 || s[2] % STRIDE != 0 || s[1] == 0 || s[2] == 0 {
            return Err(Error::NotDivisible(format!(
                "{}x{} must be multiples of {STRIDE}",
                s[1], s[2]
            )));
        }
        let mut cur = self.embed.forward(g, x)?;
        let mut outs = [cur; LEVELS];
        for (i, stage) in self.stages.iter().enumerate() {
            if let Some(m) = &stage.merge {
                cur = m.forward(g, cur)?;
            }
            for b in &stage.blocks {
                cur = b.forward(g, cur)?;
            }
            outs[i] = cur;
        }
        Ok(outs)
    }

    /// Level-0 embedding `[N_f, H/4, W/4, C_base]` of a paired input.
    pub fn patch_embed(&self, f0: &PairedInput<T>) -> Result<FeatureMap<T>> {
        if f0.height() % STRIDE != 0 || f0.width() % STRIDE != 0 {
            return Err(Error::NotDivisible(format!(
                "{}x{} must be multiples of {STRIDE}",
                f0.height(),
                f0.width()
            )));
        }
        let mut g = Graph::new();
        let x = g.input(f0.channels_last());
        let y = self.embed.forward(&mut g, x)?;
        Ok(FeatureMap {
            data: g.value(y).clone(),
            level: 0,
        })
    }

    /// Multi-scale features `F_1..F_4`.
    pub fn encode(&self, f0: &PairedInput<T>) -> Result<[FeatureMap<T>; LEVELS]> {
        let mut g = Graph::new();
        let x = g.input(f0.channels_last());
        let ids = self.forward(&mut g, x)?;
        Ok(std::array::from_fn(|i| FeatureMap {
            data: g.value(ids[i]).clone(),
            level: i + 1,
        }))
    }
}

impl<T: Scalar> Module<T> for Encoder<T> {
    fn params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut v: Vec<_> = prefixed("embed", self.embed.proj.params()).collect();
        for (i, s) in self.stages.iter().enumerate() {
            if let Some(m) = &s.merge {
                v.extend(prefixed(&format!("level{}.merge", i + 1), m.proj.params()));
            }
            for (j, b) in s.blocks.iter().enumerate() {
                v.extend(prefixed(&format!("level{}.block{j}", i + 1), b.params()));
            }
        }
        v
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut v: Vec<_> = prefixed_mut("embed", self.embed.proj.params_mut()).collect();
        for (i, s) in self.stages.iter_mut().enumerate() {
            if let Some(m) = &mut s.merge {
                v.extend(prefixed_mut(&format!("level{}.merge", i + 1), m.proj.params_mut()));
            }
            for (j, b) in s.blocks.iter_mut().enumerate() {
                v.extend(prefixed_mut(&format!("level{}.block{j}", i + 1), b.params_mut()));
            }
        }
        v
    }
}
