//! Training configuration and its `key = value` text form.
//!
//! Full-scale settings (200 epochs, batch 32, 128 px crops, lr 1e-4) are
//! reachable through the same keys; the defaults here are sized for a CPU.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::warp_loss::{LossConfig, DEFAULT_LAMBDA};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub k: usize,
    pub lambda: f64,
    pub c_base: usize,
    pub d_state: usize,
    pub seed: u64,
    pub crop: usize,
    /// Directory of `seq_*.mcmt` files; synthetic phantoms when absent.
    pub data: Option<PathBuf>,
    /// Where checkpoints and logs go.
    pub out: Option<PathBuf>,
    /// Number of generated training phantoms.
    pub phantoms: usize,
    /// Frames per generated phantom.
    pub frames: usize,
    pub noise: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            epochs: 50,
            batch_size: 4,
            k: 2,
            lambda: DEFAULT_LAMBDA,
            c_base: 8,
            d_state: 8,
            seed: 0,
            crop: 32,
            data: None,
            out: None,
            phantoms: 8,
            frames: 10,
            noise: 0.0,
        }
    }
}

fn parse<T: FromStr>(line: usize, key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse().map_err(|e| Error::Config {
        line,
        msg: format!("{key}: {e}"),
    })
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config { line: 0, msg: msg.into() });
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr must be finite and >= 0");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be >= 0");
        }
        if self.c_base == 0 || self.d_state == 0 {
            return bad("c_base and d_state must be >= 1");
        }
        if self.crop == 0 || self.crop % crate::encoder::STRIDE != 0 {
            return bad("crop must be a positive multiple of 32");
        }
        if self.data.is_none() && (self.phantoms == 0 || self.frames == 0) {
            return bad("phantoms and frames must be >= 1");
        }
        Ok(())
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            c_base: self.c_base,
            d_state: self.d_state,
            k: self.k,
            ..ModelConfig::default()
        }
    }

    pub fn loss(&self) -> LossConfig {
        LossConfig {
            lambda: self.lambda,
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let n = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config {
                    line: n,
                    msg: format!("expected `key = value`, got {line:?}"),
                });
            };
            let (key, v) = (key.trim(), value.trim());
            match key {
                "lr" => cfg.lr = parse(n, key, v)?,
                "epochs" => cfg.epochs = parse(n, key, v)?,
                "batch_size" => cfg.batch_size = parse(n, key, v)?,
                "K" | "k" => cfg.k = parse(n, key, v)?,
                "lambda" => cfg.lambda = parse(n, key, v)?,
                "C_base" | "c_base" => cfg.c_base = parse(n, key, v)?,
                "d_state" => cfg.d_state = parse(n, key, v)?,
                "seed" => cfg.seed = parse(n, key, v)?,
                "crop" => cfg.crop = parse(n, key, v)?,
                "data" => cfg.data = Some(PathBuf::from(v)),
                "out" => cfg.out = Some(PathBuf::from(v)),
                "phantoms" => cfg.phantoms = parse(n, key, v)?,
                "frames" => cfg.frames = parse(n, key, v)?,
                "noise" => cfg.noise = parse(n, key, v)?,
                _ => {
                    return Err(Error::Config {
                        line: n,
                        msg: format!("unknown key {key:?}"),
                    })
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Text form that [`TrainConfig::parse`] reads back unchanged.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "lr = {:?}", self.lr);
        let _ = writeln!(s, "epochs = {}", self.epochs);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "K = {}", self.k);
        let _ = writeln!(s, "lambda = {:?}", self.lambda);
        let _ = writeln!(s, "C_base = {}", self.c_base);
        let _ = writeln!(s, "d_state = {}", self.d_state);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "crop = {}", self.crop);
        if let Some(p) = &self.data {
            let _ = writeln!(s, "data = {}", p.display());
        }
        if let Some(p) = &self.out {
            let _ = writeln!(s, "out = {}", p.display());
        }
        let _ = writeln!(s, "phantoms = {}", self.phantoms);
        let _ = writeln!(s, "frames = {}", self.frames);
        let _ = writeln!(s, "noise = {:?}", self.noise);
        s
    }
}
