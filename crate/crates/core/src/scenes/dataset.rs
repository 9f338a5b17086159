//! Posed image datasets in the NeRF synthetic layout.
//!
//! `transforms_{train,test}.json` hold `camera_angle_x` and per-frame
//! `file_path` / `transform_matrix`. Next to each `r_i.png` the generator writes
//! `r_i_normal.png` (world normals, `(n+1)/2` bytes) and `r_i_mask.png`.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::image::{self, srgb_to_linear, Rgb8};
use super::{render_oracle, OracleScene};
use crate::error::{Error, Result};
use crate::renderer::{Camera, Pose};
use crate::vec3::Vec3;

pub const SCENE_FILE: &str = "scene.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }

    pub fn transforms_file(self) -> String {
        format!("transforms_{}.json", self.name())
    }
}

/// Whether loaded colors stay sRGB-encoded or are converted to linear.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Decode {
    #[default]
    Srgb,
    Linear,
}

#[derive(Serialize, Deserialize)]
struct TransformsFile {
    camera_angle_x: f64,
    frames: Vec<FrameEntry>,
}

#[derive(Serialize, Deserialize)]
struct FrameEntry {
    file_path: String,
    transform_matrix: Pose,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub file_path: String,
    pub pose: Pose,
    pub image: Vec<[f64; 3]>,
    pub normals: Option<Vec<Vec3>>,
    pub mask: Option<Vec<bool>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneDataset {
    pub width: usize,
    pub height: usize,
    pub camera_angle_x: f64,
    pub decode: Decode,
    pub frames: Vec<Frame>,
}

impl SceneDataset {
    pub fn camera(&self, frame: usize) -> Camera {
        Camera {
            width: self.width,
            height: self.height,
            camera_angle_x: self.camera_angle_x,
            pose: self.frames[frame].pose,
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }
}

/// Checks that the rotation block is orthonormal and right-handed and the
/// bottom row is `(0, 0, 0, 1)`.
pub fn validate_pose(pose: &Pose) -> Result<()> {
    const TOL: f64 = 1e-4;
    if pose.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::DegeneratePose("non-finite entry".into()));
    }
    for i in 0..3 {
        for j in 0..3 {
            let dot: f64 = (0..3).map(|k| pose[k][i] * pose[k][j]).sum();
            let want = if i == j { 1.0 } else { 0.0 };
            if (dot - want).abs() > TOL {
                return Err(Error::DegeneratePose(format!("rotation columns {i},{j} have dot {dot}")));
            }
        }
    }
    let col = |j: usize| Vec3::new(pose[0][j], pose[1][j], pose[2][j]);
    let det = col(0).cross(col(1)).dot(col(2));
    if det < 0.0 {
        return Err(Error::DegeneratePose(format!("left-handed rotation (det {det})")));
    }
    if pose[3] != [0.0, 0.0, 0.0, 1.0] {
        return Err(Error::DegeneratePose(format!("bottom row {:?}", pose[3])));
    }
    Ok(())
}

/// Camera at `position` looking at the origin with world `+z` up.
pub fn look_at_origin(position: Vec3) -> Result<Pose> {
    let back = position.normalize_guarded();
    let right = Vec3::Z.cross(back);
    if back == Vec3::ZERO || right.norm() < 1e-9 {
        return Err(Error::DegeneratePose(format!("cannot aim camera from {position:?}")));
    }
    let right = right.normalize_guarded();
    let up = back.cross(right);
    let mut pose = [[0.0; 4]; 4];
    for (r, row) in pose.iter_mut().take(3).enumerate() {
        *row = [right[r], up[r], back[r], position[r]];
    }
    pose[3] = [0.0, 0.0, 0.0, 1.0];
    Ok(pose)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub n_train: usize,
    pub n_test: usize,
    pub width: usize,
    pub height: usize,
    pub camera_angle_x: f64,
    pub camera_radius: f64,
    /// Range of `z / radius` for camera positions.
    pub elevation: (f64, f64),
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            n_train: 30,
            n_test: 20,
            width: 32,
            height: 32,
            camera_angle_x: 0.6,
            camera_radius: 4.0,
            elevation: (-0.25, 0.9),
            seed: 0,
        }
    }
}

/// Uniform on the spherical band `z/r ∈ elevation` (equal-area in `z`).
fn sample_poses(spec: &DatasetSpec, rng: &mut ChaCha8Rng, n: usize) -> Result<Vec<Pose>> {
    (0..n)
        .map(|_| {
            let z = rng.gen_range(spec.elevation.0..=spec.elevation.1);
            let phi = rng.gen_range(0.0..std::f64::consts::TAU);
            let r = (1.0 - z * z).sqrt();
            look_at_origin(Vec3::new(r * phi.cos(), r * phi.sin(), z) * spec.camera_radius)
        })
        .collect()
}

fn frame_stem(dir: &Path, file_path: &str) -> PathBuf {
    let rel = file_path.trim_start_matches("./");
    let rel = rel.strip_suffix(".png").unwrap_or(rel);
    dir.join(rel)
}

fn with_suffix(stem: &Path, suffix: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn write_split(
    scene: &OracleScene,
    spec: &DatasetSpec,
    out_dir: &Path,
    split: Split,
    poses: &[Pose],
) -> Result<()> {
    let sub = out_dir.join(split.name());
    fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
    let frames: Vec<FrameEntry> = (0..poses.len())
        .map(|i| FrameEntry {
            file_path: format!("./{}/r_{i}", split.name()),
            transform_matrix: poses[i],
        })
        .collect();
    frames.par_iter().try_for_each(|f| -> Result<()> {
        let camera = Camera {
            width: spec.width,
            height: spec.height,
            camera_angle_x: spec.camera_angle_x,
            pose: f.transform_matrix,
        };
        let img = render_oracle(scene, &camera, [1.0; 3])?;
        let stem = frame_stem(out_dir, &f.file_path);
        image::write_rgb(&with_suffix(&stem, ".png"), &Rgb8::from_colors(img.width, img.height, &img.color))?;
        image::write_rgb(
            &with_suffix(&stem, "_normal.png"),
            &Rgb8::from_normals(img.width, img.height, &img.normals),
        )?;
        let mask: Vec<u8> = img.mask.iter().map(|&m| if m { 255 } else { 0 }).collect();
        image::write_gray(&with_suffix(&stem, "_mask.png"), img.width, img.height, &mask)
    })?;
    let file = TransformsFile {
        camera_angle_x: spec.camera_angle_x,
        frames,
    };
    let path = out_dir.join(split.transforms_file());
    let text = serde_json::to_string_pretty(&file).map_err(|e| Error::format(&path, e.to_string()))?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// Renders train and test views of `scene` into `out_dir` and loads them back.
/// Train poses are drawn before test poses from one seeded stream.
pub fn generate_dataset(scene: &OracleScene, spec: &DatasetSpec, out_dir: &Path) -> Result<(SceneDataset, SceneDataset)> {
    scene.validate()?;
    if spec.n_train == 0 || spec.n_test == 0 || spec.width == 0 || spec.height == 0 {
        return Err(Error::InvalidArgument(format!("empty dataset request {spec:?}")));
    }
    let (lo, hi) = spec.elevation;
    if !(-1.0 < lo && lo <= hi && hi < 1.0) || !(spec.camera_radius > scene.radius) {
        return Err(Error::InvalidArgument(format!("invalid camera placement {spec:?}")));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let train = sample_poses(spec, &mut rng, spec.n_train)?;
    let test = sample_poses(spec, &mut rng, spec.n_test)?;
    write_split(scene, spec, out_dir, Split::Train, &train)?;
    write_split(scene, spec, out_dir, Split::Test, &test)?;
    let path = out_dir.join(SCENE_FILE);
    let text = serde_json::to_string_pretty(scene).map_err(|e| Error::format(&path, e.to_string()))?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok((
        load_dataset(out_dir, Split::Train, Decode::Srgb)?,
        load_dataset(out_dir, Split::Test, Decode::Srgb)?,
    ))
}

/// Reads the oracle description written next to a generated dataset.
pub fn load_scene(dir: &Path) -> Result<OracleScene> {
    let path = dir.join(SCENE_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let scene: OracleScene = serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
    scene.validate()?;
    Ok(scene)
}

/// Loads one split. Normal maps and masks are picked up when present.
pub fn load_dataset(dir: &Path, split: Split, decode: Decode) -> Result<SceneDataset> {
    let path = dir.join(split.transforms_file());
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let file: TransformsFile = serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
    if file.frames.is_empty() {
        return Err(Error::format(&path, "no frames"));
    }
    if !(file.camera_angle_x > 0.0 && file.camera_angle_x < std::f64::consts::PI) {
        return Err(Error::format(&path, format!("camera_angle_x {}", file.camera_angle_x)));
    }
    let mut size = None;
    let mut frames = Vec::with_capacity(file.frames.len());
    for entry in file.frames {
        validate_pose(&entry.transform_matrix)
            .map_err(|e| Error::format(&path, format!("frame {}: {e}", entry.file_path)))?;
        let stem = frame_stem(dir, &entry.file_path);
        let img_path = with_suffix(&stem, ".png");
        let rgb = image::read_rgb(&img_path, [1.0; 3])?;
        let dims = (rgb.width, rgb.height);
        if *size.get_or_insert(dims) != dims {
            return Err(Error::format(&img_path, format!("size {dims:?} differs from {:?}", size.unwrap())));
        }
        let mut colors = rgb.colors();
        if decode == Decode::Linear {
            for c in &mut colors {
                *c = c.map(srgb_to_linear);
            }
        }
        let normal_path = with_suffix(&stem, "_normal.png");
        let normals = if normal_path.exists() {
            let n = image::read_rgb(&normal_path, [0.5; 3])?;
            if (n.width, n.height) != dims {
                return Err(Error::format(&normal_path, "size differs from color image"));
            }
            Some(n.normals())
        } else {
            None
        };
        let mask_path = with_suffix(&stem, "_mask.png");
        let mask = if mask_path.exists() {
            let (w, h, m) = image::read_gray(&mask_path)?;
            if (w, h) != dims {
                return Err(Error::format(&mask_path, "size differs from color image"));
            }
            Some(m.into_iter().map(|v| v >= 128).collect())
        } else {
            None
        };
        frames.push(Frame {
            file_path: entry.file_path,
            pose: entry.transform_matrix,
            image: colors,
            normals,
            mask,
        });
    }
    let (width, height) = size.expect("at least one frame");
    Ok(SceneDataset {
        width,
        height,
        camera_angle_x: file.camera_angle_x,
        decode,
        frames,
    })
}
