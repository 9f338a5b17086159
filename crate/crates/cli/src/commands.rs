//! The work behind each subcommand, usable without the binary.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use reflfield::autodiff::load_layers;
use reflfield::field::{EditOverrides, FieldParams};
use reflfield::renderer::{render_image, Camera, RenderedImage};
use reflfield::scenes::image::{self, Rgb8};
use reflfield::scenes::{generate_dataset, load_dataset, Decode, SceneDataset, Split};
use reflfield::trainer::{self, config_hash, sidecar_path, TrainOutcome, TrainingRays};
use reflfield::Error;

use crate::config::RunConfig;
use crate::metrics::{psnr, MaeAccumulator};
use crate::CliError;

pub const FINAL_CHECKPOINT: &str = "final.rfld";
pub const RESULTS_FILE: &str = "results.txt";

fn io(path: &Path, e: std::io::Error) -> CliError {
    CliError::Core(Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

pub fn oracle_gen(cfg: &RunConfig) -> Result<(SceneDataset, SceneDataset), CliError> {
    Ok(generate_dataset(&cfg.scene, &cfg.dataset, &cfg.scene_dir)?)
}

/// Trains on the train split and writes checkpoints, `train.log` and a copy of
/// the configuration into `out_dir`.
pub fn train(cfg: &RunConfig) -> Result<TrainOutcome, CliError> {
    let ds = load_dataset(&cfg.scene_dir, Split::Train, Decode::Srgb)?;
    let rays = TrainingRays::from_dataset(&ds, &cfg.render_settings())?;
    fs::create_dir_all(&cfg.out_dir).map_err(|e| io(&cfg.out_dir, e))?;
    let copy = cfg.out_dir.join("config.toml");
    fs::write(&copy, cfg.to_toml()).map_err(|e| io(&copy, e))?;
    Ok(trainer::train(&rays, &cfg.field, &cfg.train_config(), Some(&cfg.out_dir))?)
}

pub fn checkpoint_path(cfg: &RunConfig) -> PathBuf {
    cfg.out_dir.join(FINAL_CHECKPOINT)
}

/// Loads a checkpoint for the run's field layout. A sidecar whose hash does
/// not match the configuration produces a warning, not an error, so render
/// settings may change after training.
pub fn load_params(cfg: &RunConfig, path: &Path) -> Result<FieldParams<f32>, CliError> {
    let layers = load_layers(path)?;
    let params = FieldParams::from_layers(&cfg.field, layers)
        .map_err(|e| CliError::Config(format!("{}: does not match [field]: {e}", path.display())))?;
    if let Ok(meta) = fs::read_to_string(sidecar_path(path)) {
        let want = format!("config_hash={}", config_hash(&cfg.field, &cfg.train_config()));
        if !meta.lines().any(|l| l == want) {
            eprintln!("warning: {} was trained with a different configuration", path.display());
        }
    }
    Ok(params)
}

/// Test-split cameras, resized to the configured resolution if any.
pub fn test_cameras(cfg: &RunConfig) -> Result<(SceneDataset, Vec<Camera>), CliError> {
    let ds = load_dataset(&cfg.scene_dir, Split::Test, Decode::Srgb)?;
    let cams = (0..ds.frames.len())
        .map(|i| {
            let mut c = ds.camera(i);
            if let Some([w, h]) = cfg.resolution {
                c.width = w;
                c.height = h;
            }
            c
        })
        .collect();
    Ok((ds, cams))
}

pub fn render_views(
    params: &FieldParams<f32>,
    cfg: &RunConfig,
    edit: &EditOverrides,
    cameras: &[Camera],
) -> Result<Vec<RenderedImage>, CliError> {
    edit.validate()?;
    let settings = cfg.render_settings();
    cameras
        .iter()
        .map(|c| Ok(render_image(params, &cfg.field, edit, c, &settings)?))
        .collect()
}

/// Writes `r_i.png`, `r_i_normal.png` (density normals), `r_i_pred_normal.png`
/// and `r_i_opacity.png` for each view.
pub fn write_views(dir: &Path, views: &[RenderedImage]) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    for (i, v) in views.iter().enumerate() {
        let (w, h) = (v.width, v.height);
        image::write_rgb(&dir.join(format!("r_{i}.png")), &Rgb8::from_colors(w, h, &v.color))?;
        image::write_rgb(&dir.join(format!("r_{i}_normal.png")), &Rgb8::from_normals(w, h, &v.normals))?;
        image::write_rgb(
            &dir.join(format!("r_{i}_pred_normal.png")),
            &Rgb8::from_normals(w, h, &v.pred_normals),
        )?;
        let alpha: Vec<u8> = v.opacity.iter().map(|&a| image::to_byte(a)).collect();
        image::write_gray(&dir.join(format!("r_{i}_opacity.png")), w, h, &alpha)?;
    }
    Ok(())
}

/// Renders the test cameras with `edit` applied into `out_dir/<subdir>`.
pub fn render_with(
    cfg: &RunConfig,
    checkpoint: &Path,
    edit: &EditOverrides,
    subdir: &str,
) -> Result<Vec<RenderedImage>, CliError> {
    let params = load_params(cfg, checkpoint)?;
    let (_, cams) = test_cameras(cfg)?;
    let views = render_views(&params, cfg, edit, &cams)?;
    write_views(&cfg.out_dir.join(subdir), &views)?;
    Ok(views)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub psnr: Vec<f64>,
    /// Per-image MAE over that image's masked pixels.
    pub mae: Vec<f64>,
    pub psnr_mean: f64,
    /// Pooled over every masked pixel of every test image.
    pub mae_mean: f64,
    pub mask_source: &'static str,
}

impl EvalReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# psnr_mean: mean of per-image PSNR (dB, capped at 99)");
        let _ = writeln!(
            s,
            "# mae_mean: degrees, pooled over all masked pixels of all test images; mask = {}",
            self.mask_source
        );
        let _ = writeln!(s, "psnr_mean={:.6}", self.psnr_mean);
        let _ = writeln!(s, "mae_mean={:.6}", self.mae_mean);
        for (i, (p, m)) in self.psnr.iter().zip(&self.mae).enumerate() {
            let _ = writeln!(s, "image_{i}_psnr={p:.6}");
            let _ = writeln!(s, "image_{i}_mae={m:.6}");
        }
        s
    }
}

/// PSNR and normal MAE of rendered test views against the dataset. The MAE
/// mask is the ground-truth foreground when present, else opacity > 0.5.
pub fn evaluate(ds: &SceneDataset, views: &[RenderedImage]) -> Result<EvalReport, CliError> {
    if views.len() != ds.frames.len() {
        return Err(CliError::Metric(format!("{} views for {} test images", views.len(), ds.frames.len())));
    }
    let mut psnrs = Vec::new();
    let mut maes = Vec::new();
    let mut pooled = MaeAccumulator::default();
    let mut mask_source = "ground-truth foreground";
    for (f, v) in ds.frames.iter().zip(views) {
        psnrs.push(psnr(&v.color, &f.image)?);
        let Some(gt) = &f.normals else {
            return Err(CliError::Metric(format!("{} has no ground-truth normals", f.file_path)));
        };
        let mask = match &f.mask {
            Some(m) => m.clone(),
            None => {
                mask_source = "predicted opacity > 0.5";
                v.opacity.iter().map(|&a| a > 0.5).collect()
            }
        };
        let mut one = MaeAccumulator::default();
        one.add(&v.normals, gt, &mask)?;
        pooled.add(&v.normals, gt, &mask)?;
        maes.push(if one.count > 0 { one.mean()? } else { f64::NAN });
    }
    Ok(EvalReport {
        psnr_mean: psnrs.iter().sum::<f64>() / psnrs.len() as f64,
        mae_mean: pooled.mean()?,
        psnr: psnrs,
        mae: maes,
        mask_source,
    })
}

/// Renders the test split at its native resolution, scores it, and writes
/// `results.txt` into `out_dir`.
pub fn eval(cfg: &RunConfig, checkpoint: &Path) -> Result<EvalReport, CliError> {
    let params = load_params(cfg, checkpoint)?;
    let ds = load_dataset(&cfg.scene_dir, Split::Test, Decode::Srgb)?;
    let cams: Vec<Camera> = (0..ds.frames.len()).map(|i| ds.camera(i)).collect();
    let views = render_views(&params, cfg, &EditOverrides::default(), &cams)?;
    let report = evaluate(&ds, &views)?;
    fs::create_dir_all(&cfg.out_dir).map_err(|e| io(&cfg.out_dir, e))?;
    let path = cfg.out_dir.join(RESULTS_FILE);
    fs::write(&path, report.to_text()).map_err(|e| io(&path, e))?;
    Ok(report)
}
