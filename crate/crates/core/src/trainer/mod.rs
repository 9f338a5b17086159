//! The optimization loop.
//!
//! Each step draws a batch of pixels (with replacement) from all training
//! images, renders it in train mode, and applies one clipped Adam update. The
//! batch is split into fixed-size chunks, each on a private tape with its own
//! rng seed drawn from the run's stream; chunk gradients are summed in chunk
//! order, so results do not depend on the number of worker threads.

pub mod optim;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{save_layers, Real, Tape, Tensor};
use crate::error::{Error, Result};
use crate::field::{EditOverrides, FieldConfig, FieldParams, Mode};
use crate::losses::{batch_losses, LossWeights};
use crate::renderer::{Ray, RenderSettings};
use crate::scenes::SceneDataset;

pub use optim::{clip_gradients, Adam, AdamHyper, Schedule};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_rays: usize,
    pub lr_init: f64,
    pub lr_final: f64,
    pub warmup: usize,
    pub adam: AdamHyper,
    pub clip_norm: f64,
    pub seed: u64,
    pub losses: LossWeights,
    /// Sampling used while training (the background should match the images').
    pub render: RenderSettings,
    /// Rays per tape; fixes the partition of a batch.
    pub chunk_rays: usize,
    /// Checkpoint cadence in steps (0: final checkpoint only).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 3000,
            batch_rays: 1024,
            lr_init: 2e-3,
            lr_final: 2e-5,
            warmup: 512,
            adam: AdamHyper::default(),
            clip_norm: 1e-3,
            seed: 0,
            losses: LossWeights::default(),
            render: RenderSettings::default(),
            chunk_rays: 128,
            checkpoint_every: 500,
        }
    }
}

impl TrainConfig {
    pub fn schedule(&self) -> Schedule {
        Schedule {
            iterations: self.iterations,
            lr_init: self.lr_init,
            lr_final: self.lr_final,
            warmup: self.warmup,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule().validate()?;
        self.losses.validate()?;
        if self.batch_rays == 0 || self.chunk_rays == 0 || self.render.samples == 0 {
            return Err(Error::InvalidArgument("batch, chunk and sample counts must be positive".into()));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::InvalidArgument(format!("clip_norm must be > 0, got {}", self.clip_norm)));
        }
        Ok(())
    }
}

/// Hex SHA-256 of the JSON form of both configurations.
pub fn config_hash(field: &FieldConfig, train: &TrainConfig) -> String {
    let json = serde_json::to_string(&(field, train)).expect("configs serialize");
    Sha256::digest(json.as_bytes()).iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Every training pixel as a ray with its target color.
#[derive(Clone, Debug)]
pub struct TrainingRays {
    pub rays: Vec<Ray>,
    pub colors: Vec<[f64; 3]>,
}

impl TrainingRays {
    pub fn from_dataset(ds: &SceneDataset, settings: &RenderSettings) -> Result<Self> {
        let mut rays = Vec::with_capacity(ds.frames.len() * ds.pixel_count());
        let mut colors = Vec::with_capacity(rays.capacity());
        for (i, frame) in ds.frames.iter().enumerate() {
            rays.extend(ds.camera(i).rays(settings.near, settings.far)?);
            colors.extend_from_slice(&frame.image);
        }
        if rays.is_empty() {
            return Err(Error::InvalidArgument("dataset has no pixels".into()));
        }
        Ok(Self { rays, colors })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogEntry {
    pub step: usize,
    pub data: f64,
    /// Absent when density normals were not computed.
    pub rp: Option<f64>,
    pub ro: f64,
    pub total: f64,
    pub lr: f64,
}

impl LogEntry {
    pub const HEADER: &'static str = "# step data rp ro total lr";

    pub fn line(&self) -> String {
        let rp = self.rp.map_or_else(|| "-".to_string(), |v| format!("{v:.6e}"));
        format!(
            "{} {:.6e} {} {:.6e} {:.6e} {:.6e}",
            self.step, self.data, rp, self.ro, self.total, self.lr
        )
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub params: FieldParams<f32>,
    pub log: Vec<LogEntry>,
    /// Checkpoints written, in order; the last one is the final state.
    pub checkpoints: Vec<PathBuf>,
}

struct ChunkResult {
    grads: Vec<Tensor<f32>>,
    data: f64,
    rp: Option<f64>,
    ro: f64,
    total: f64,
}

#[allow(clippy::too_many_arguments)]
fn chunk_gradients(
    params: &FieldParams<f32>,
    field: &FieldConfig,
    cfg: &TrainConfig,
    rays: &[Ray],
    gt: &[[f64; 3]],
    denominator: usize,
    seed: u64,
) -> Result<ChunkResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tape = Tape::<f32>::new();
    let vars = params.register(&mut tape, true);
    let density_normals = cfg.losses.lambda_p > 0.0;
    let render = crate::renderer::render_batch(
        &mut tape,
        &vars,
        field,
        &EditOverrides::default(),
        rays,
        &cfg.render,
        Mode::Train(&mut rng),
        density_normals,
    )?;
    let target = Tensor::from_fn(gt.len(), 3, |r, c| f32::of(gt[r][c]));
    let terms = batch_losses(&mut tape, &render, &target, &cfg.losses, denominator)?;
    let grads = tape.backward(terms.total)?;
    let item = |v| tape.value(v).item().f64();
    Ok(ChunkResult {
        grads: vars.vars().into_iter().map(|v| grads.wrt(v)).collect(),
        data: item(terms.data),
        rp: terms.rp.map(item),
        ro: item(terms.ro),
        total: item(terms.total),
    })
}

fn write_checkpoint(dir: &Path, name: &str, params: &FieldParams<f32>, hash: &str, step: usize) -> Result<PathBuf> {
    let path = dir.join(format!("{name}.rfld"));
    save_layers(&path, &params.layers())?;
    let meta = sidecar_path(&path);
    fs::write(&meta, format!("config_hash={hash}\nstep={step}\n")).map_err(|e| Error::io(&meta, e))?;
    Ok(path)
}

pub fn sidecar_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("meta")
}

/// Optimizes a freshly initialized field on `data`. With `out_dir`, writes
/// `step_NNNNNN.rfld` checkpoints, `final.rfld` (each with a `.meta` sidecar)
/// and `train.log`.
pub fn train(
    data: &TrainingRays,
    field: &FieldConfig,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    field.validate()?;
    cfg.validate()?;
    if data.rays.is_empty() || data.rays.len() != data.colors.len() {
        return Err(Error::InvalidArgument("training set is empty or inconsistent".into()));
    }
    let hash = config_hash(field, cfg);
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = FieldParams::<f32>::init(field, &mut rng)?;
    let mut adam = Adam::new(cfg.adam, &params.parameters());
    let schedule = cfg.schedule();
    let mut log = Vec::with_capacity(cfg.iterations);
    let mut checkpoints = Vec::new();
    let mut log_text = format!("{}\n", LogEntry::HEADER);

    for step in 0..cfg.iterations {
        let idx: Vec<usize> = (0..cfg.batch_rays).map(|_| rng.gen_range(0..data.rays.len())).collect();
        let rays: Vec<Ray> = idx.iter().map(|&i| data.rays[i]).collect();
        let gt: Vec<[f64; 3]> = idx.iter().map(|&i| data.colors[i]).collect();
        let seeds: Vec<u64> = (0..cfg.batch_rays.div_ceil(cfg.chunk_rays)).map(|_| rng.gen()).collect();
        let parts: Vec<ChunkResult> = rays
            .par_chunks(cfg.chunk_rays)
            .zip(gt.par_chunks(cfg.chunk_rays))
            .zip(seeds.par_iter())
            .map(|((r, g), &seed)| chunk_gradients(&params, field, cfg, r, g, cfg.batch_rays, seed))
            .collect::<Result<_>>()?;

        let mut iter = parts.into_iter();
        let first = iter.next().expect("at least one chunk");
        let mut grads = first.grads;
        let (mut d, mut rp, mut ro, mut total) = (first.data, first.rp, first.ro, first.total);
        for part in iter {
            for (g, pg) in grads.iter_mut().zip(&part.grads) {
                g.add_assign(pg);
            }
            d += part.data;
            rp = rp.zip(part.rp).map(|(a, b)| a + b);
            ro += part.ro;
            total += part.total;
        }
        if !total.is_finite() || grads.iter().any(|g| !g.all_finite()) {
            return Err(Error::NonFiniteLoss { step, value: total });
        }
        clip_gradients(&mut grads, cfg.clip_norm);
        let lr = schedule.lr_at(step)?;
        adam.step(&mut params.parameters_mut(), &grads, lr)?;

        let entry = LogEntry {
            step,
            data: d,
            rp,
            ro,
            total,
            lr,
        };
        log_text.push_str(&entry.line());
        log_text.push('\n');
        log.push(entry);
        if let Some(dir) = out_dir {
            let done = step + 1;
            if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 && done < cfg.iterations {
                checkpoints.push(write_checkpoint(dir, &format!("step_{done:06}"), &params, &hash, done)?);
            }
        }
    }
    if let Some(dir) = out_dir {
        checkpoints.push(write_checkpoint(dir, "final", &params, &hash, cfg.iterations)?);
        let path = dir.join("train.log");
        fs::write(&path, log_text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(TrainOutcome {
        params,
        log,
        checkpoints,
    })
}

#[cfg(test)]
mod tests;
