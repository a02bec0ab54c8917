use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::phantom::MYOCARDIUM;
use crate::error::{Error, Result};
use crate::metrics::{dice, endpoint_error, jacobian_metrics, temporal_consistency, warp_labels};
use crate::model::Model;
use crate::pipeline::dataset::Dataset;
use crate::scalar::Scalar;

/// One evaluated `(sequence, frame)` pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub seq_id: String,
    pub t: usize,
    /// Myocardium Dice of the warped ED mask against the frame mask.
    pub dice: Option<f64>,
    pub has_mask: bool,
    pub neg_jac_pct: f64,
    pub mean_abs_jm1: f64,
    /// Mean endpoint error over all pixels, when ground truth exists.
    pub epe: Option<f64>,
    /// Sequence-level second-difference roughness; absent for `T < 3`.
    pub tc_index: Option<f64>,
    /// Mean displacement magnitude of this frame's field.
    pub mean_disp: f64,
}

/// Predicts every frame of every sequence and reports the requested frames
/// (all frames when `frames` is `None`).
pub fn evaluate<T: Scalar>(
    model: &Model<T>,
    data: &Dataset<T>,
    frames: Option<&[usize]>,
) -> Result<Vec<EvalRecord>> {
    let mut out = Vec::new();
    for s in &data.samples {
        let n = s.seq.len();
        let fields = model.predict_cycle(&s.seq)?;
        let tc = if n >= 3 {
            Some(temporal_consistency(&fields)?)
        } else {
            None
        };
        let all: Vec<usize> = (0..n).collect();
        for &t in frames.unwrap_or(&all) {
            if t >= n {
                return Err(Error::OutOfRange(format!("frame {t} of {} ({n} frames)", s.id)));
            }
            let phi = &fields[t];
            let jm = jacobian_metrics(phi)?;
            let dice = match &s.masks {
                Some(m) => Some(dice(&warp_labels(&m[0], phi)?, &m[t], MYOCARDIUM)?),
                None => None,
            };
            let epe = match &s.fields {
                Some(gt) => Some(endpoint_error(phi, &gt[t], None)?),
                None => None,
            };
            let mags = phi.magnitudes();
            out.push(EvalRecord {
                seq_id: s.id.clone(),
                t,
                has_mask: dice.is_some(),
                dice,
                neg_jac_pct: jm.neg_pct,
                mean_abs_jm1: jm.mean_abs_jm1,
                epe,
                tc_index: tc.as_ref().map(|c| c.tc_index),
                mean_disp: mags.iter().map(|v| v.as_f64()).sum::<f64>() / mags.len() as f64,
            });
        }
    }
    Ok(out)
}

pub fn write_jsonl(path: impl AsRef<Path>, records: &[EvalRecord]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Vec<EvalRecord>> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for line in f.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}
