//! The TOML run configuration that drives every command.
//!
//! ```toml
//! scene_dir = "data/sphere"      # relative paths resolve against this file
//! out_dir = "runs/full"
//! background = [1.0, 1.0, 1.0]
//! # resolution = [64, 64]        # render/eval size; defaults to the dataset's
//!
//! [dataset]                      # oracle-gen: counts, size, camera band, seed
//! [scene]                        # oracle-gen: sphere, materials, lights
//! [field]                        # network sizes and ablation switches
//! [train]                        # schedule, batch, seed, checkpoint cadence
//! [train.losses]                 # lambda_p, lambda_o, stop-gradient switches
//! [train.render]                 # samples, near/far, chunk
//! [edit]                         # roughness_scale, diffuse_override, tint_scale
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use reflfield::field::{EditOverrides, FieldConfig};
use reflfield::renderer::RenderSettings;
use reflfield::scenes::{DatasetSpec, OracleScene};
use reflfield::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scene_dir: PathBuf,
    pub out_dir: PathBuf,
    pub dataset: DatasetSpec,
    pub scene: OracleScene,
    pub field: FieldConfig,
    pub train: TrainConfig,
    /// Render/eval resolution; the dataset's when absent.
    pub resolution: Option<[usize; 2]>,
    /// Background composited behind the field, in training and rendering.
    pub background: [f64; 3],
    pub edit: EditOverrides,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scene_dir: PathBuf::new(),
            out_dir: PathBuf::new(),
            dataset: DatasetSpec::default(),
            scene: OracleScene::default(),
            field: FieldConfig::default(),
            train: TrainConfig::default(),
            resolution: None,
            background: [1.0; 3],
            edit: EditOverrides::default(),
        }
    }
}

impl RunConfig {
    /// Parses and validates `path`; relative directories are taken relative
    /// to the file's own directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {}", path.display(), e.message())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for dir in [&mut cfg.scene_dir, &mut cfg.out_dir] {
            if dir.is_relative() && !dir.as_os_str().is_empty() {
                *dir = base.join(&*dir);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.scene_dir.as_os_str().is_empty() || self.out_dir.as_os_str().is_empty() {
            return Err(CliError::Config("scene_dir and out_dir must be set".into()));
        }
        if matches!(self.resolution, Some([w, h]) if w == 0 || h == 0) {
            return Err(CliError::Config("resolution must be positive".into()));
        }
        if !self.background.iter().all(|c| (0.0..=1.0).contains(c)) {
            return Err(CliError::Config(format!("background {:?} outside [0, 1]", self.background)));
        }
        self.field.validate()?;
        self.train.validate()?;
        self.edit.validate()?;
        Ok(())
    }

    /// Sampling settings with the run's background applied.
    pub fn render_settings(&self) -> RenderSettings {
        RenderSettings {
            background: self.background,
            ..self.train.render.clone()
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            render: self.render_settings(),
            ..self.train.clone()
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file_fills_defaults_and_resolves_paths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, "scene_dir = \"data\"\nout_dir = \"/tmp/x\"\n[train]\niterations = 600\n").unwrap();
        let cfg = RunConfig::load(&path).unwrap();
        assert_eq!(cfg.scene_dir, dir.path().join("data"));
        assert_eq!(cfg.out_dir, PathBuf::from("/tmp/x"));
        assert_eq!(cfg.train.iterations, 600);
        assert_eq!(cfg.field, FieldConfig::default());
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = RunConfig {
            scene_dir: "a".into(),
            out_dir: "b".into(),
            resolution: Some([8, 6]),
            ..RunConfig::default()
        };
        let back: RunConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn bad_files_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        assert!(RunConfig::load(&path).unwrap_err().to_string().contains("run.toml"));
        fs::write(&path, "scene_dir = \"a\"\nout_dir = \"b\"\nbogus = 1\n").unwrap();
        assert!(RunConfig::load(&path).unwrap_err().to_string().contains("bogus"));
        fs::write(&path, "out_dir = \"b\"\n").unwrap();
        assert!(RunConfig::load(&path).is_err());
        fs::write(&path, "scene_dir = \"a\"\nout_dir = \"b\"\n[edit]\nroughness_scale = -1.0\n").unwrap();
        assert!(RunConfig::load(&path).is_err());
    }
}
