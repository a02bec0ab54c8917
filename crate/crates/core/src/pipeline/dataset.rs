//! Collections of sequences with optional ground truth.
//!
//! On disk a dataset is a directory of `<id>.seq.mcmt` (`[T, H, W]`) files with
//! optional `<id>.gt.mcmt` (`[T, 2, H, W]`) and `<id>.masks.mcmt` (`[T, H, W]`)
//! companions.

use std::path::{Path, PathBuf};

use crate::data::{load_tensor, preprocess, save_tensor, synth_phantom, ImageSequence, PhantomSpec};
use crate::decoder::MotionField;
use crate::error::{shape_err, Error, Result};
use crate::metrics::LabelMask;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct Sample<T> {
    pub id: String,
    pub seq: ImageSequence<T>,
    /// Frame-0-to-frame-t fields, one per frame.
    pub fields: Option<Vec<MotionField<T>>>,
    /// Label maps, one per frame; `masks[0]` is end-diastole.
    pub masks: Option<Vec<LabelMask>>,
}

#[derive(Clone, Debug, Default)]
pub struct Dataset<T> {
    pub samples: Vec<Sample<T>>,
}

const SEQ: &str = ".seq.mcmt";
const GT: &str = ".gt.mcmt";
const MASKS: &str = ".masks.mcmt";

/// Seed of the `i`-th phantom in a synthetic set seeded with `seed`.
pub fn phantom_seed(seed: u64, i: usize) -> u64 {
    seed.wrapping_mul(1_000_003).wrapping_add(i as u64)
}

fn crop_window(h: usize, w: usize, crop: usize) -> (usize, usize) {
    ((h - crop) / 2, (w - crop) / 2)
}

impl<T: Scalar> Dataset<T> {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// `count` randomized phantoms of `size x size` pixels.
    pub fn synthetic(count: usize, frames: usize, size: usize, seed: u64, noise: f64) -> Result<Self> {
        let samples = (0..count)
            .map(|i| {
                let spec = PhantomSpec {
                    noise_sigma: noise,
                    ..PhantomSpec::sample(phantom_seed(seed, i), frames, size)
                };
                let p = synth_phantom::<T>(&spec)?;
                Ok(Sample {
                    id: format!("phantom_{i:03}"),
                    seq: p.seq,
                    fields: Some(p.fields),
                    masks: Some(p.masks),
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { samples })
    }

    pub fn save_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        for s in &self.samples {
            save_tensor(dir.join(format!("{}{SEQ}", s.id)), s.seq.tensor())?;
            if let Some(fields) = &s.fields {
                let (t, h, w) = (fields.len(), s.seq.height(), s.seq.width());
                let data = fields.iter().flat_map(|f| f.u.data().iter().copied()).collect();
                save_tensor(dir.join(format!("{}{GT}", s.id)), &Tensor::from_vec(&[t, 2, h, w], data)?)?;
            }
            if let Some(masks) = &s.masks {
                let (h, w) = (s.seq.height(), s.seq.width());
                let data = masks.iter().flat_map(|m| m.labels.iter().map(|&l| T::c(l as f64))).collect();
                save_tensor(
                    dir.join(format!("{}{MASKS}", s.id)),
                    &Tensor::<T>::from_vec(&[masks.len(), h, w], data)?,
                )?;
            }
        }
        Ok(())
    }

    /// Loads every `*.seq.mcmt` in `dir` (sorted by name), center-cropping
    /// images, fields and masks to `crop` and min-max normalizing intensities.
    pub fn load_dir(dir: impl AsRef<Path>, crop: usize) -> Result<Self> {
        let dir = dir.as_ref();
        let mut ids: Vec<String> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok())
            .filter_map(|e| e.file_name().to_str().and_then(|n| n.strip_suffix(SEQ)).map(String::from))
            .collect();
        ids.sort();
        if ids.is_empty() {
            return Err(Error::Invalid(format!("no *{SEQ} files in {}", dir.display())));
        }
        let samples = ids
            .into_iter()
            .map(|id| load_sample(dir, id, crop))
            .collect::<Result<_>>()?;
        Ok(Self { samples })
    }
}

fn optional(path: PathBuf) -> Option<PathBuf> {
    path.exists().then_some(path)
}

fn load_sample<T: Scalar>(dir: &Path, id: String, crop: usize) -> Result<Sample<T>> {
    let raw: Tensor<T> = load_tensor(dir.join(format!("{id}{SEQ}")))?;
    let seq = preprocess(&raw, crop)?;
    let (n, h, w) = (raw.shape()[0], raw.shape()[1], raw.shape()[2]);
    let (y0, x0) = crop_window(h, w, crop);
    let fields = match optional(dir.join(format!("{id}{GT}"))) {
        Some(p) => {
            let gt: Tensor<T> = load_tensor(p)?;
            if gt.shape() != [n, 2, h, w] {
                return Err(shape_err(format!("{id}: gt {:?} vs sequence {:?}", gt.shape(), raw.shape())));
            }
            let at = |f: usize, c: usize, y: usize, x: usize| gt.data()[((f * 2 + c) * h + y0 + y) * w + x0 + x];
            Some(
                (0..n)
                    .map(|f| MotionField::from_fn(crop, crop, |y, x| (at(f, 0, y, x), at(f, 1, y, x))))
                    .collect(),
            )
        }
        None => None,
    };
    let masks = match optional(dir.join(format!("{id}{MASKS}"))) {
        Some(p) => {
            let m: Tensor<T> = load_tensor(p)?;
            if m.shape() != [n, h, w] {
                return Err(shape_err(format!("{id}: masks {:?} vs sequence {:?}", m.shape(), raw.shape())));
            }
            let full: Vec<LabelMask> = (0..n)
                .map(|f| {
                    let frame = Tensor::from_vec(&[h, w], m.data()[f * h * w..(f + 1) * h * w].to_vec())?;
                    LabelMask::from_tensor(&frame)
                })
                .collect::<Result<_>>()?;
            Some(
                full.iter()
                    .map(|l| LabelMask::from_fn(crop, crop, |y, x| l.labels[(y0 + y) * w + x0 + x]))
                    .collect(),
            )
        }
        None => None,
    };
    Ok(Sample { id, seq, fields, masks })
}
