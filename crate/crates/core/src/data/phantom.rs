//! Synthetic beating-annulus phantom with analytic motion and labels.
//!
//! Frame `t` is `I_0(x + u_t(x))` evaluated in closed form, where
//! `u_t(x) = -a sin(pi t / (T-1)) (x - c) w(|x - c|)`. The window `w` is 1 up
//! to `r2` and then falls to 0 at `1.5 r2` with a raised-cosine profile scaled
//! by `r2 / r`, so `|u|` never exceeds `a r2`.
//!
//! The reference image is a blood pool, myocardial ring and background with
//! sigmoid edges, optionally overlaid with a faint texture of a few long-wave
//! sinusoids. The texture moves with the tissue, which makes motion visible
//! away from the two ring edges.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::data::ImageSequence;
use crate::decoder::MotionField;
use crate::error::{Error, Result};
use crate::metrics::LabelMask;
use crate::nn::seeded;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const BACKGROUND: u8 = 0;
pub const MYOCARDIUM: u8 = 1;
pub const BLOOD_POOL: u8 = 2;

const POOL_LEVEL: f64 = 0.85;
const MYO_LEVEL: f64 = 0.25;
const BG_LEVEL: f64 = 0.45;
/// Sigmoid edge scale in pixels.
const EDGE: f64 = 0.5;
const TEXTURE_WAVES: usize = 4;
/// Texture wavelength range in pixels.
const WAVELENGTH: (f64, f64) = (6.0, 12.0);

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomSpec {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    /// Center `(x, y)` in pixel coordinates.
    pub center: (f64, f64),
    pub r1: f64,
    pub r2: f64,
    pub amplitude: f64,
    pub seed: u64,
    pub noise_sigma: f64,
    /// Peak texture amplitude; 0 gives the plain annulus.
    pub texture: f64,
}

/// One texture component: `amp * sin(kx x + ky y + phase)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Wave {
    pub kx: f64,
    pub ky: f64,
    pub phase: f64,
    pub amp: f64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            frames: 10,
            height: 32,
            width: 32,
            center: (15.5, 15.5),
            r1: 6.0,
            r2: 10.0,
            amplitude: 0.12,
            seed: 0,
            noise_sigma: 0.0,
            texture: 0.0,
        }
    }
}

impl PhantomSpec {
    /// A randomized square phantom: center jittered by up to 2 px, `r2` in
    /// `[0.25, 0.32] * size`, `r1 / r2` in `[0.55, 0.7]`, amplitude in
    /// `[0.1, 0.2]`, texture amplitude 0.1.
    pub fn sample(seed: u64, frames: usize, size: usize) -> Self {
        let mut rng = seeded(seed ^ 0x5eed_9a47_0f1e_3c21);
        let s = size as f64;
        let mid = 0.5 * (s - 1.0);
        let r2 = s * rng.gen_range(0.25..0.32);
        Self {
            frames,
            height: size,
            width: size,
            center: (mid + rng.gen_range(-2.0..2.0), mid + rng.gen_range(-2.0..2.0)),
            r1: r2 * rng.gen_range(0.55..0.7),
            r2,
            amplitude: rng.gen_range(0.1..0.2),
            seed,
            noise_sigma: 0.0,
            texture: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Invalid(m));
        if self.frames == 0 {
            return Err(Error::EmptySequence);
        }
        if self.height == 0 || self.width == 0 {
            return bad("phantom frames must be non-empty".into());
        }
        if !(self.center.0.is_finite() && self.center.1.is_finite()) {
            return Err(Error::NonFinite);
        }
        if !(self.r1 > 0.0 && self.r1 < self.r2) {
            return bad(format!("need 0 < r1 < r2, got r1={} r2={}", self.r1, self.r2));
        }
        let half = 0.5 * self.height.min(self.width) as f64;
        if self.r2 >= half {
            return bad(format!("r2={} must be below min(H, W)/2={half}", self.r2));
        }
        if !(0.0..0.5).contains(&self.amplitude) {
            return bad(format!("amplitude {} outside [0, 0.5)", self.amplitude));
        }
        if self.amplitude * self.r2 >= self.r1 {
            return bad(format!(
                "a*r2={} must stay below r1={}",
                self.amplitude * self.r2,
                self.r1
            ));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma {} must be >= 0", self.noise_sigma));
        }
        if !(0.0..=0.15).contains(&self.texture) {
            return bad(format!("texture {} outside [0, 0.15]", self.texture));
        }
        Ok(())
    }

    /// Temporal profile `sin(pi t / (T-1))`; zero for a single frame.
    pub fn phase(&self, t: usize) -> f64 {
        if self.frames < 2 {
            0.0
        } else {
            (PI * t as f64 / (self.frames - 1) as f64).sin()
        }
    }

    pub fn mid_cycle(&self) -> usize {
        (self.frames - 1) / 2
    }

    /// Radial window `w(r)`.
    pub fn window(&self, r: f64) -> f64 {
        let r2 = self.r2;
        if r <= r2 {
            1.0
        } else if r < 1.5 * r2 {
            (r2 / r) * 0.5 * (1.0 + (PI * (r - r2) / (0.5 * r2)).cos())
        } else {
            0.0
        }
    }

    /// Ground-truth displacement `(ux, uy)` at pixel `(x, y)`, frame `t`.
    pub fn displacement(&self, t: usize, x: f64, y: f64) -> (f64, f64) {
        let (dx, dy) = (x - self.center.0, y - self.center.1);
        let k = -self.amplitude * self.phase(t) * self.window(dx.hypot(dy));
        (k * dx, k * dy)
    }

    /// Texture components, drawn from the seed. Amplitudes sum to `texture`.
    pub fn waves(&self) -> Vec<Wave> {
        if self.texture == 0.0 {
            return Vec::new();
        }
        let mut rng = seeded(self.seed ^ 0x7e47_0e5e_ed00_0001);
        (0..TEXTURE_WAVES)
            .map(|_| {
                let angle = rng.gen_range(0.0..PI);
                let k = 2.0 * PI / rng.gen_range(WAVELENGTH.0..WAVELENGTH.1);
                Wave {
                    kx: k * angle.cos(),
                    ky: k * angle.sin(),
                    phase: rng.gen_range(0.0..2.0 * PI),
                    amp: self.texture / TEXTURE_WAVES as f64,
                }
            })
            .collect()
    }

    /// Noise-free reference intensity at `(x, y)`.
    pub fn reference_intensity(&self, x: f64, y: f64) -> f64 {
        self.intensity(&self.waves(), x, y)
    }

    fn intensity(&self, waves: &[Wave], x: f64, y: f64) -> f64 {
        let r = (x - self.center.0).hypot(y - self.center.1);
        let s = |d: f64| 1.0 / (1.0 + (-d / EDGE).exp());
        let base = BG_LEVEL
            + (MYO_LEVEL - BG_LEVEL) * s(self.r2 - r)
            + (POOL_LEVEL - MYO_LEVEL) * s(self.r1 - r);
        let tex: f64 = waves.iter().map(|w| w.amp * (w.kx * x + w.ky * y + w.phase).sin()).sum();
        base + tex
    }

    pub fn reference_label(&self, x: f64, y: f64) -> u8 {
        let r = (x - self.center.0).hypot(y - self.center.1);
        if r < self.r1 {
            BLOOD_POOL
        } else if r < self.r2 {
            MYOCARDIUM
        } else {
            BACKGROUND
        }
    }
}

/// Sequence, per-frame ground-truth fields (frame 0 to frame t) and per-frame
/// label masks. `masks[0]` is the end-diastolic mask.
#[derive(Clone, Debug)]
pub struct Phantom<T> {
    pub spec: PhantomSpec,
    pub seq: ImageSequence<T>,
    pub fields: Vec<MotionField<T>>,
    pub masks: Vec<LabelMask>,
}

impl<T> Phantom<T> {
    pub fn ed_mask(&self) -> &LabelMask {
        &self.masks[0]
    }
}

pub fn synth_phantom<T: Scalar>(spec: &PhantomSpec) -> Result<Phantom<T>> {
    spec.validate()?;
    let (n, h, w) = (spec.frames, spec.height, spec.width);
    let mut frames = Vec::with_capacity(n * h * w);
    let mut fields = Vec::with_capacity(n);
    let mut masks = Vec::with_capacity(n);
    let waves = spec.waves();
    for t in 0..n {
        let mut labels = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                let (px, py) = (x as f64, y as f64);
                let (ux, uy) = spec.displacement(t, px, py);
                frames.push(spec.intensity(&waves, px + ux, py + uy));
                labels.push(spec.reference_label(px + ux, py + uy));
            }
        }
        masks.push(LabelMask::new(h, w, labels)?);
        fields.push(MotionField::from_fn(h, w, |y, x| {
            let (ux, uy) = spec.displacement(t, x as f64, y as f64);
            (T::c(ux), T::c(uy))
        }));
    }
    if spec.noise_sigma > 0.0 {
        let mut rng = seeded(spec.seed);
        let normal = Normal::new(0.0, spec.noise_sigma)
            .map_err(|e| Error::Invalid(format!("noise: {e}")))?;
        for v in &mut frames {
            *v = (*v + normal.sample(&mut rng)).clamp(0.0, 1.0);
        }
    }
    let data = frames.into_iter().map(T::c).collect();
    Ok(Phantom {
        spec: spec.clone(),
        seq: ImageSequence::new(Tensor::from_vec(&[n, h, w], data)?)?,
        fields,
        masks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn invariants_are_enforced() {
        let ok = PhantomSpec::default();
        assert!(ok.validate().is_ok());
        let cases = [
            PhantomSpec { r1: 10.0, ..ok.clone() },
            PhantomSpec { r2: 16.0, ..ok.clone() },
            PhantomSpec { amplitude: 0.5, ..ok.clone() },
            PhantomSpec { r1: 1.0, amplitude: 0.2, ..ok.clone() },
            PhantomSpec { frames: 0, ..ok.clone() },
            PhantomSpec { noise_sigma: -1.0, ..ok.clone() },
            PhantomSpec { texture: 0.5, ..ok.clone() },
        ];
        for c in cases {
            assert!(synth_phantom::<f64>(&c).is_err(), "{c:?}");
        }
    }

    #[test]
    fn sampled_specs_are_valid() {
        for seed in 0..50 {
            PhantomSpec::sample(seed, 10, 32).validate().unwrap();
            PhantomSpec::sample(seed, 10, 64).validate().unwrap();
        }
    }

    #[test]
    fn single_frame_has_no_motion() {
        let spec = PhantomSpec { frames: 1, ..Default::default() };
        let p = synth_phantom::<f32>(&spec).unwrap();
        assert_eq!(p.fields[0].u.max_abs(), 0.0);
    }
}
