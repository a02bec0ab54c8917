use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use mcm_core::data::{load_tensor, preprocess, save_tensor};
use mcm_core::pipeline::alloc::TrackingAlloc;
use mcm_core::pipeline::dataset::phantom_seed;
use mcm_core::pipeline::plot::{plot, read_loss_csv, write_loss_csv};
use mcm_core::pipeline::{
    evaluate, profile, train_from, Adam, Checkpoint, Dataset, ProfileConfig, TrainConfig,
};
use mcm_core::nn::Module;
use mcm_core::pipeline::eval::{read_jsonl, write_jsonl};
use mcm_core::{Checkpoint32, Model32};

#[global_allocator]
static ALLOC: TrackingAlloc = TrackingAlloc;

type Real = f32;

#[derive(Parser)]
#[command(name = "mcm", version, about = "Cardiac motion tracking with bi-directional state-space scans")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate synthetic phantom sequences with ground-truth motion and masks.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// Frames per cycle.
        #[arg(long = "T", default_value_t = 10)]
        frames: usize,
        #[arg(long, default_value_t = 32)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
    },
    /// Train from a `key = value` config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `out` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint; writes line-delimited JSON records.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        /// Dataset directory; held-out phantoms when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Comma-separated frame indices; all frames when omitted.
        #[arg(long, value_delimiter = ',')]
        frames: Option<Vec<usize>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Predict the field from frame 0 to frame `t` of one sequence file.
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        seq: PathBuf,
        #[arg(long)]
        t: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Peak memory and mean latency for window lengths 1, 3 and 5.
    Profile {
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 8)]
        c_base: usize,
        #[arg(long, default_value_t = 8)]
        d_state: usize,
        #[arg(long, default_value_t = 100)]
        iters: usize,
        /// Optional CSV output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Emit CSV tables and SVG charts from loss logs and eval records.
    Plot {
        #[arg(long)]
        out: PathBuf,
        /// `label=path` of a loss CSV; repeatable.
        #[arg(long)]
        loss: Vec<String>,
        /// `label=path` of an eval JSONL file; repeatable.
        #[arg(long)]
        eval: Vec<String>,
    },
}

fn labeled(spec: &str) -> (String, PathBuf) {
    match spec.split_once('=') {
        Some((l, p)) => (l.to_string(), PathBuf::from(p)),
        None => {
            let p = PathBuf::from(spec);
            let l = p.file_stem().map_or_else(|| spec.to_string(), |s| s.to_string_lossy().into_owned());
            (l, p)
        }
    }
}

fn training_data(cfg: &TrainConfig) -> Result<Dataset<Real>> {
    Ok(match &cfg.data {
        Some(dir) => Dataset::load_dir(dir, cfg.crop)
            .with_context(|| format!("loading {}", dir.display()))?,
        None => Dataset::synthetic(cfg.phantoms, cfg.frames, cfg.crop, cfg.seed, cfg.noise)?,
    })
}

fn run_train(config: &Path, out: Option<PathBuf>) -> Result<()> {
    let mut cfg = TrainConfig::load(config).with_context(|| format!("reading {}", config.display()))?;
    if out.is_some() {
        cfg.out = out;
    }
    let out = cfg.out.clone().unwrap_or_else(|| PathBuf::from("run"));
    std::fs::create_dir_all(&out)?;
    let data = training_data(&cfg)?;
    let model = Model32::new(cfg.model(), cfg.seed);
    let adam = Adam::new(model.params().iter().map(|(_, p)| p.shape()));
    eprintln!(
        "training {} params on {} sequences for {} epochs",
        model.num_params(),
        data.len(),
        cfg.epochs
    );
    let outcome = train_from(&cfg, &data, model, adam, |r| {
        eprintln!(
            "epoch {:>4} step {:>6} loss {:.6} sim {:.6} smooth {:.6}",
            r.epoch, r.step, r.loss, r.sim, r.smooth
        );
    })?;
    let ckpt = out.join("model.mcmc");
    Checkpoint::capture(&cfg, &outcome.model, Some(&outcome.adam)).save(&ckpt)?;
    write_loss_csv(out.join("loss.csv"), &outcome.log)?;
    println!("{}", ckpt.display());
    Ok(())
}

fn run_eval(ckpt: &Path, data: Option<PathBuf>, frames: Option<Vec<usize>>, out: Option<PathBuf>) -> Result<()> {
    let ck = Checkpoint32::load(ckpt).with_context(|| format!("reading {}", ckpt.display()))?;
    let model = ck.model()?;
    let cfg = &ck.config;
    let data = match data {
        Some(dir) => Dataset::load_dir(&dir, cfg.crop)?,
        // offset the seed so evaluation never reuses training phantoms
        None => Dataset::synthetic(cfg.phantoms, cfg.frames, cfg.crop, phantom_seed(cfg.seed, 1 << 20), cfg.noise)?,
    };
    let records = evaluate(&model, &data, frames.as_deref())?;
    match out {
        Some(p) => {
            write_jsonl(&p, &records)?;
            eprintln!("{} records -> {}", records.len(), p.display());
        }
        None => {
            for r in &records {
                println!("{}", serde_json::to_string(r)?);
            }
        }
    }
    Ok(())
}

fn run_infer(ckpt: &Path, seq: &Path, t: usize, out: &Path) -> Result<()> {
    let ck = Checkpoint32::load(ckpt)?;
    let model = ck.model()?;
    let raw = load_tensor::<Real>(seq).with_context(|| format!("reading {}", seq.display()))?;
    let seq = preprocess(&raw, ck.config.crop)?;
    if t >= seq.len() {
        bail!("frame {t} out of range for a {}-frame sequence", seq.len());
    }
    let phi = model.predict_motion(&seq, t)?;
    save_tensor(out, &phi.u)?;
    println!("{:?} -> {}", phi.u.shape(), out.display());
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::Synth { out, frames, size, seed, count, noise } => {
            let data = Dataset::<Real>::synthetic(count, frames, size, seed, noise)?;
            data.save_dir(&out)?;
            println!("{} sequences -> {}", data.len(), out.display());
        }
        Cmd::Train { config, out } => run_train(&config, out)?,
        Cmd::Eval { ckpt, data, frames, out } => run_eval(&ckpt, data, frames, out)?,
        Cmd::Infer { ckpt, seq, t, out } => run_infer(&ckpt, &seq, t, &out)?,
        Cmd::Profile { size, c_base, d_state, iters, out } => {
            let pc = ProfileConfig { size, c_base, d_state, iters, ..Default::default() };
            let rows = profile::<Real>(&pc)?;
            println!("n_f,peak_bytes,memory_source,latency_ms");
            for r in &rows {
                println!("{},{},{},{:.3}", r.n_f, r.peak_bytes, r.memory_source, r.latency_ms);
            }
            if let Some(p) = out {
                let mut w = csv::Writer::from_path(&p)?;
                for r in &rows {
                    w.serialize(r)?;
                }
                w.flush()?;
            }
        }
        Cmd::Plot { out, loss, eval } => {
            let losses = loss
                .iter()
                .map(|s| {
                    let (l, p) = labeled(s);
                    Ok((l, read_loss_csv(&p).with_context(|| format!("reading {}", p.display()))?))
                })
                .collect::<Result<Vec<_>>>()?;
            let evals = eval
                .iter()
                .map(|s| {
                    let (l, p) = labeled(s);
                    Ok((l, read_jsonl(&p).with_context(|| format!("reading {}", p.display()))?))
                })
                .collect::<Result<Vec<_>>>()?;
            if losses.is_empty() && evals.is_empty() {
                bail!("nothing to plot: pass --loss and/or --eval");
            }
            for p in plot(&out, &losses, &evals)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}
