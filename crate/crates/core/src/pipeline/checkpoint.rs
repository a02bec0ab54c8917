//! Checkpoint container: `b"MCMC"`, u8 version 1, then repeated
//! `(u16 name length, UTF-8 name, MCMT tensor)` records until end of file.

use std::path::Path;

use crate::data::mcmt::{read_tensor, write_atomic, write_tensor};
use crate::error::{shape_err, Error, Result};
use crate::model::Model;
use crate::nn::Module;
use crate::pipeline::adam::Adam;
use crate::pipeline::config::TrainConfig;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"MCMC";
pub const VERSION: u8 = 1;

const CONFIG: &str = "config";
const STEP: &str = "step";
const PARAM: &str = "param/";
const ADAM_M: &str = "adam_m/";
const ADAM_V: &str = "adam_v/";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub config: TrainConfig,
    pub step: u64,
    pub params: Vec<(String, Tensor<T>)>,
    /// Empty when no optimizer state was saved.
    pub adam_m: Vec<Tensor<T>>,
    pub adam_v: Vec<Tensor<T>>,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn capture(config: &TrainConfig, model: &Model<T>, adam: Option<&Adam<T>>) -> Self {
        Self {
            config: config.clone(),
            step: adam.map_or(0, |a| a.step),
            params: model
                .params()
                .into_iter()
                .map(|(n, t)| (n, t.clone()))
                .collect(),
            adam_m: adam.map(|a| a.m.clone()).unwrap_or_default(),
            adam_v: adam.map(|a| a.v.clone()).unwrap_or_default(),
        }
    }

    /// Rebuilds the model and copies every stored parameter into it.
    pub fn model(&self) -> Result<Model<T>> {
        let mut model = Model::new(self.config.model(), self.config.seed);
        let stored: std::collections::HashMap<&str, &Tensor<T>> =
            self.params.iter().map(|(n, t)| (n.as_str(), t)).collect();
        for (name, p) in model.params_mut() {
            let src = stored
                .get(name.as_str())
                .ok_or_else(|| Error::MissingParam(name.clone()))?;
            if src.shape() != p.shape() {
                return Err(shape_err(format!(
                    "{name}: stored {:?}, model {:?}",
                    src.shape(),
                    p.shape()
                )));
            }
            p.data_mut().copy_from_slice(src.data());
        }
        Ok(model)
    }

    pub fn adam(&self) -> Option<Adam<T>> {
        (!self.adam_m.is_empty()).then(|| Adam {
            step: self.step,
            m: self.adam_m.clone(),
            v: self.adam_v.clone(),
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = MAGIC.to_vec();
        out.push(VERSION);
        let mut entry = |name: &str, write: &dyn Fn(&mut Vec<u8>) -> Result<()>| -> Result<()> {
            let len = u16::try_from(name.len())
                .map_err(|_| Error::Invalid(format!("entry name too long: {name}")))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            write(&mut out)
        };
        let text = self.config.to_text();
        let bytes = Tensor::<f64>::from_fn(&[text.len()], |i| text.as_bytes()[i] as f64);
        entry(CONFIG, &|o| write_tensor(&bytes, o))?;
        // split so every u64 survives an f64 round trip
        let step = Tensor::<f64>::from_vec(
            &[2],
            vec![(self.step >> 32) as f64, (self.step & 0xffff_ffff) as f64],
        )?;
        entry(STEP, &|o| write_tensor(&step, o))?;
        for (name, t) in &self.params {
            entry(&format!("{PARAM}{name}"), &|o| write_tensor(t, o))?;
        }
        for (i, (m, v)) in self.adam_m.iter().zip(&self.adam_v).enumerate() {
            entry(&format!("{ADAM_M}{i}"), &|o| write_tensor(m, o))?;
            entry(&format!("{ADAM_V}{i}"), &|o| write_tensor(v, o))?;
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 5 {
            return Err(Error::Truncated("checkpoint header".into()));
        }
        let found: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
        if found != MAGIC {
            return Err(Error::BadMagic {
                expected: MAGIC,
                found,
            });
        }
        if bytes[4] != VERSION {
            return Err(Error::BadVersion(bytes[4]));
        }
        let mut cur = &bytes[5..];
        let (mut config, mut step) = (None, None);
        let mut params = Vec::new();
        let (mut adam_m, mut adam_v) = (Vec::new(), Vec::new());
        while !cur.is_empty() {
            if cur.len() < 2 {
                return Err(Error::Truncated("entry name length".into()));
            }
            let len = u16::from_le_bytes([cur[0], cur[1]]) as usize;
            cur = &cur[2..];
            if cur.len() < len {
                return Err(Error::Truncated("entry name".into()));
            }
            let name = std::str::from_utf8(&cur[..len])
                .map_err(|e| Error::Invalid(format!("entry name: {e}")))?
                .to_string();
            cur = &cur[len..];
            if name == CONFIG {
                let t: Tensor<f64> = read_tensor(&mut cur)?;
                let text: Vec<u8> = t.data().iter().map(|&b| b as u8).collect();
                let text = String::from_utf8(text)
                    .map_err(|e| Error::Invalid(format!("config snapshot: {e}")))?;
                config = Some(TrainConfig::parse(&text)?);
            } else if name == STEP {
                let t: Tensor<f64> = read_tensor(&mut cur)?;
                let [hi, lo] = t.data() else {
                    return Err(shape_err("step entry must hold 2 values"));
                };
                step = Some(((*hi as u64) << 32) | *lo as u64);
            } else if let Some(p) = name.strip_prefix(PARAM) {
                params.push((p.to_string(), read_tensor(&mut cur)?));
            } else if name.starts_with(ADAM_M) {
                adam_m.push(read_tensor(&mut cur)?);
            } else if name.starts_with(ADAM_V) {
                adam_v.push(read_tensor(&mut cur)?);
            } else {
                return Err(Error::Invalid(format!("unknown checkpoint entry {name:?}")));
            }
        }
        if adam_m.len() != adam_v.len() {
            return Err(Error::Invalid("unpaired optimizer moments".into()));
        }
        Ok(Self {
            config: config.ok_or_else(|| Error::MissingParam(CONFIG.into()))?,
            step: step.ok_or_else(|| Error::MissingParam(STEP.into()))?,
            params,
            adam_m,
            adam_v,
        })
    }

    /// Atomic write: temporary file, then rename.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), &self.to_bytes()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
