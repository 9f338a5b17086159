//! Camera rays, sampling along rays, and alpha compositing of field samples.
//!
//! The scalar functions ([`quadrature_weights`], [`composite`],
//! [`accumulate_normals`]) define the compositing rules; [`render_batch`]
//! applies the same rules on a tape so training can differentiate them, and
//! [`render_rays`] / [`render_image`] use it for evaluation.

use rand::{Rng, RngCore};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Real, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::field::{shade, EditOverrides, FieldConfig, FieldParams, FieldVars, Mode, Shaded};
use crate::vec3::{UnitVector3, Vec3};

/// Camera-to-world transform, row-major.
pub type Pose = [[f64; 4]; 4];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub dir: UnitVector3,
    pub near: f64,
    pub far: f64,
}

impl Ray {
    pub fn new(origin: Vec3, dir: UnitVector3, near: f64, far: f64) -> Result<Self> {
        if !(near > 0.0 && near < far && far.is_finite()) || !origin.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "ray bounds must satisfy 0 < near < far, got near={near} far={far}"
            )));
        }
        Ok(Self {
            origin,
            dir,
            near,
            far,
        })
    }

    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.dir.vec() * t
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub width: usize,
    pub height: usize,
    pub camera_angle_x: f64,
    pub pose: Pose,
}

impl Camera {
    pub fn focal(&self) -> f64 {
        0.5 * self.width as f64 / (0.5 * self.camera_angle_x).tan()
    }

    pub fn rays(&self, near: f64, far: f64) -> Result<Vec<Ray>> {
        camera_rays(self.width, self.height, self.camera_angle_x, &self.pose, near, far)
    }
}

fn det3(m: &Pose) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// One ray per pixel, row-major from the top-left. The camera looks down its
/// local `-z` with `+x` right and `+y` up; rays pass through pixel centers.
pub fn camera_rays(
    width: usize,
    height: usize,
    camera_angle_x: f64,
    pose: &Pose,
    near: f64,
    far: f64,
) -> Result<Vec<Ray>> {
    if width == 0 || height == 0 || !(camera_angle_x > 0.0 && camera_angle_x < std::f64::consts::PI) {
        return Err(Error::InvalidArgument(format!(
            "invalid pinhole camera {width}x{height}, angle {camera_angle_x}"
        )));
    }
    let det = det3(pose);
    if !(det.abs() > 1e-8) || pose.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::DegeneratePose(format!("rotation determinant {det}")));
    }
    let focal = 0.5 * width as f64 / (0.5 * camera_angle_x).tan();
    let origin = Vec3::new(pose[0][3], pose[1][3], pose[2][3]);
    let mut rays = Vec::with_capacity(width * height);
    for j in 0..height {
        for i in 0..width {
            let local = Vec3::new(
                (i as f64 + 0.5 - 0.5 * width as f64) / focal,
                -(j as f64 + 0.5 - 0.5 * height as f64) / focal,
                -1.0,
            );
            let world = Vec3::new(
                pose[0][0] * local.x + pose[0][1] * local.y + pose[0][2] * local.z,
                pose[1][0] * local.x + pose[1][1] * local.y + pose[1][2] * local.z,
                pose[2][0] * local.x + pose[2][1] * local.y + pose[2][2] * local.z,
            );
            let dir = UnitVector3::normalize(world)
                .ok_or_else(|| Error::DegeneratePose("zero ray direction".into()))?;
            rays.push(Ray::new(origin, dir, near, far)?);
        }
    }
    Ok(rays)
}

/// Sample distances along a ray and the interval after each one.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    pub t: Vec<f64>,
    pub deltas: Vec<f64>,
}

impl SampleSet {
    /// Intervals `t_{i+1} - t_i`, the last one running to `far`.
    pub fn from_sorted(t: Vec<f64>, far: f64) -> Self {
        let deltas = t
            .iter()
            .enumerate()
            .map(|(i, &ti)| t.get(i + 1).copied().unwrap_or(far) - ti)
            .collect();
        Self { t, deltas }
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

/// One sample per equal bin of `[near, far]`: uniform within the bin when an
/// rng is given, at the bin midpoint otherwise.
pub fn stratified_samples(ray: &Ray, n: usize, rng: Option<&mut dyn RngCore>) -> Result<SampleSet> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 samples per ray, got {n}")));
    }
    let width = (ray.far - ray.near) / n as f64;
    let t = match rng {
        Some(rng) => (0..n)
            .map(|i| ray.near + (i as f64 + rng.gen::<f64>()) * width)
            .collect(),
        None => (0..n).map(|i| ray.near + (i as f64 + 0.5) * width).collect(),
    };
    Ok(SampleSet::from_sorted(t, ray.far))
}

/// `w_i = exp(-Σ_{j<i} τ_j δ_j) (1 - exp(-τ_i δ_i))`.
pub fn quadrature_weights(taus: &[f64], samples: &SampleSet) -> Result<Vec<f64>> {
    if taus.len() != samples.len() {
        return Err(Error::LengthMismatch {
            op: "quadrature_weights",
            left: taus.len(),
            right: samples.len(),
        });
    }
    if let Some(&bad) = taus.iter().find(|&&t| !(t >= 0.0)) {
        return Err(Error::NegativeDensity(bad));
    }
    let mut acc = 0.0f64;
    Ok(taus
        .iter()
        .zip(&samples.deltas)
        .map(|(&tau, &d)| {
            let od = tau * d;
            let w = (-acc).exp() * -(-od).exp_m1();
            acc += od;
            w
        })
        .collect())
}

/// `Σ w_i c_i + (1 - Σ w_i) background`.
pub fn composite(weights: &[f64], colors: &[[f64; 3]], background: [f64; 3]) -> Result<[f64; 3]> {
    if weights.len() != colors.len() {
        return Err(Error::LengthMismatch {
            op: "composite",
            left: weights.len(),
            right: colors.len(),
        });
    }
    let opacity: f64 = weights.iter().sum();
    Ok(std::array::from_fn(|c| {
        weights.iter().zip(colors).map(|(w, col)| w * col[c]).sum::<f64>() + (1.0 - opacity) * background[c]
    }))
}

/// `N = Σ w_i n_i` and its guarded normalization.
pub fn accumulate_normals(weights: &[f64], normals: &[Vec3]) -> Result<(Vec3, Vec3)> {
    if weights.len() != normals.len() {
        return Err(Error::LengthMismatch {
            op: "accumulate_normals",
            left: weights.len(),
            right: normals.len(),
        });
    }
    let n = weights.iter().zip(normals).fold(Vec3::ZERO, |acc, (&w, &n)| acc + n * w);
    Ok((n, n.normalize_guarded()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderSettings {
    /// Stratified samples per ray.
    pub samples: usize,
    /// Extra samples per ray drawn from the first pass's weights (0 disables).
    pub importance_samples: usize,
    pub near: f64,
    pub far: f64,
    pub background: [f64; 3],
    /// Rays per tape when rendering images.
    pub chunk: usize,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            samples: 64,
            importance_samples: 0,
            near: 2.0,
            far: 6.0,
            background: [1.0; 3],
            chunk: 64,
        }
    }
}

/// Inverse-CDF draws from the piecewise-constant density given by `weights`
/// over the bins around the sample points; `u` holds the uniform variates.
fn resample(samples: &SampleSet, weights: &[f64], near: f64, far: f64, u: &[f64]) -> Vec<f64> {
    let n = samples.len();
    let mut edges = Vec::with_capacity(n + 1);
    edges.push(near);
    for i in 1..n {
        edges.push(0.5 * (samples.t[i - 1] + samples.t[i]));
    }
    edges.push(far);
    let pdf: Vec<f64> = weights.iter().map(|w| w + 1e-5).collect();
    let total: f64 = pdf.iter().sum();
    let mut cdf = Vec::with_capacity(n + 1);
    cdf.push(0.0);
    for p in &pdf {
        cdf.push(cdf.last().expect("non-empty") + p / total);
    }
    u.iter()
        .map(|&u| {
            let k = cdf.partition_point(|&c| c <= u).clamp(1, n) - 1;
            let frac = ((u - cdf[k]) / (cdf[k + 1] - cdf[k])).clamp(0.0, 1.0);
            edges[k] + frac * (edges[k + 1] - edges[k])
        })
        .collect()
}

/// A batch of rays composited on a tape.
#[derive(Clone, Debug)]
pub struct BatchRender {
    /// `rays x 3`, background included.
    pub color: Var,
    /// `rays x 1`.
    pub opacity: Var,
    /// `rays x samples`.
    pub weights: Var,
    /// `(rays * samples) x 1`, the same weights one per point.
    pub point_weights: Var,
    /// `(rays * samples) x 3`, each ray's direction repeated per sample.
    pub view_dirs: Var,
    pub shaded: Shaded,
    pub samples: Vec<SampleSet>,
}

impl BatchRender {
    pub fn samples_per_ray(&self) -> usize {
        self.weights.cols()
    }
}

/// Samples, shades and composites `rays` on `tape`. In train mode the sample
/// positions are jittered and the bottleneck noised from the mode's rng.
#[allow(clippy::too_many_arguments)]
pub fn render_batch<T: Real>(
    tape: &mut Tape<T>,
    vars: &FieldVars,
    cfg: &FieldConfig,
    edit: &EditOverrides,
    rays: &[Ray],
    settings: &RenderSettings,
    mut mode: Mode<'_>,
    density_normals: bool,
) -> Result<BatchRender> {
    if rays.is_empty() {
        return Err(Error::InvalidArgument("empty ray batch".into()));
    }
    let mut samples = Vec::with_capacity(rays.len());
    for ray in rays {
        let rng: Option<&mut dyn RngCore> = match &mut mode {
            Mode::Train(rng) => Some(&mut **rng),
            Mode::Eval => None,
        };
        samples.push(stratified_samples(ray, settings.samples, rng)?);
    }
    if settings.importance_samples > 0 {
        let coarse = composite_on_tape(tape, vars, cfg, edit, rays, &samples, settings, Mode::Eval, false)?;
        let w = tape.value(coarse.weights).clone();
        let m = settings.importance_samples;
        for (r, ray) in rays.iter().enumerate() {
            let u: Vec<f64> = match &mut mode {
                Mode::Train(rng) => (0..m).map(|_| rng.gen::<f64>()).collect(),
                Mode::Eval => (0..m).map(|j| (j as f64 + 0.5) / m as f64).collect(),
            };
            let wr: Vec<f64> = w.row(r).iter().map(|v| v.f64()).collect();
            let mut t = resample(&samples[r], &wr, ray.near, ray.far, &u);
            t.extend_from_slice(&samples[r].t);
            t.sort_by(f64::total_cmp);
            samples[r] = SampleSet::from_sorted(t, ray.far);
        }
    }
    composite_on_tape(tape, vars, cfg, edit, rays, &samples, settings, mode, density_normals)
}

#[allow(clippy::too_many_arguments)]
fn composite_on_tape<T: Real>(
    tape: &mut Tape<T>,
    vars: &FieldVars,
    cfg: &FieldConfig,
    edit: &EditOverrides,
    rays: &[Ray],
    samples: &[SampleSet],
    settings: &RenderSettings,
    mode: Mode<'_>,
    density_normals: bool,
) -> Result<BatchRender> {
    let r = rays.len();
    let s = samples[0].len();
    let n = r * s;
    let mut points = Tensor::zeros(n, 3);
    let mut dirs = Tensor::zeros(n, 3);
    let mut deltas = Tensor::zeros(r, s);
    for (i, (ray, set)) in rays.iter().zip(samples).enumerate() {
        for (k, (&t, &d)) in set.t.iter().zip(&set.deltas).enumerate() {
            let p = ray.at(t);
            for c in 0..3 {
                points.set(i * s + k, c, T::of(p[c]));
                dirs.set(i * s + k, c, T::of(ray.dir.vec()[c]));
            }
            deltas.set(i, k, T::of(d));
        }
    }
    let points = tape.constant(points);
    let view_dirs = tape.constant(dirs);
    let shaded = shade(tape, vars, cfg, edit, points, view_dirs, mode, density_normals)?;
    let tau = tape.reshape(shaded.tau, r, s)?;
    let weights = tape.volume_weights(tau, deltas)?;
    let point_weights = tape.reshape(weights, n, 1)?;
    let weighted = tape.mul_col(shaded.color, point_weights)?;
    let fg = tape.sum_groups(weighted, s)?;
    let opacity = tape.row_sum(weights);
    let bg = settings.background;
    let background = tape.constant(Tensor::from_fn(r, 3, |_, c| T::of(bg[c])));
    let clear = tape.scale(opacity, T::of(-1.0));
    let clear = tape.offset(clear, T::one());
    let bg_part = tape.mul_col(background, clear)?;
    let color = tape.add(fg, bg_part)?;
    Ok(BatchRender {
        color,
        opacity,
        weights,
        point_weights,
        view_dirs,
        shaded,
        samples: samples.to_vec(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderOutput {
    pub color: [f64; 3],
    pub opacity: f64,
    /// Accumulated density normal and its normalization.
    pub normal: Vec3,
    pub normal_hat: Vec3,
    /// Accumulated predicted normal and its normalization.
    pub pred_normal: Vec3,
    pub pred_normal_hat: Vec3,
    pub depth: f64,
}

fn row3<T: Real>(t: &Tensor<T>, r: usize) -> Vec3 {
    Vec3::new(t.get(r, 0).f64(), t.get(r, 1).f64(), t.get(r, 2).f64())
}

fn render_chunk<T: Real>(
    params: &FieldParams<T>,
    cfg: &FieldConfig,
    edit: &EditOverrides,
    rays: &[Ray],
    settings: &RenderSettings,
) -> Result<Vec<RenderOutput>> {
    let mut tape = Tape::new();
    let vars = params.register(&mut tape, false);
    let out = render_batch(&mut tape, &vars, cfg, edit, rays, settings, Mode::Eval, true)?;
    let w = tape.value(out.weights);
    let dn = tape.value(out.shaded.density_normal.expect("requested"));
    let pn = tape.value(out.shaded.pred_normal);
    let s = out.samples_per_ray();
    (0..rays.len())
        .map(|r| {
            let wr: Vec<f64> = w.row(r).iter().map(|v| v.f64()).collect();
            let dns: Vec<Vec3> = (0..s).map(|k| row3(dn, r * s + k)).collect();
            let pns: Vec<Vec3> = (0..s).map(|k| row3(pn, r * s + k)).collect();
            let (normal, normal_hat) = accumulate_normals(&wr, &dns)?;
            let (pred_normal, pred_normal_hat) = accumulate_normals(&wr, &pns)?;
            let opacity = tape.value(out.opacity).get(r, 0).f64();
            let depth = wr.iter().zip(&out.samples[r].t).map(|(w, t)| w * t).sum::<f64>() / opacity.max(1e-10);
            Ok(RenderOutput {
                color: row3(tape.value(out.color), r).to_array(),
                opacity,
                normal,
                normal_hat,
                pred_normal,
                pred_normal_hat,
                depth,
            })
        })
        .collect()
}

/// Deterministic (eval-mode) rendering of independent rays. Rays are split into
/// fixed chunks that run in parallel; the result does not depend on the number
/// of worker threads.
pub fn render_rays<T: Real>(
    params: &FieldParams<T>,
    cfg: &FieldConfig,
    edit: &EditOverrides,
    rays: &[Ray],
    settings: &RenderSettings,
) -> Result<Vec<RenderOutput>> {
    let chunk = settings.chunk.max(1);
    let parts: Vec<Vec<RenderOutput>> = rays
        .par_chunks(chunk)
        .map(|c| render_chunk(params, cfg, edit, c, settings))
        .collect::<Result<_>>()?;
    Ok(parts.into_iter().flatten().collect())
}

pub fn render_ray<T: Real>(
    params: &FieldParams<T>,
    cfg: &FieldConfig,
    edit: &EditOverrides,
    ray: &Ray,
    settings: &RenderSettings,
) -> Result<RenderOutput> {
    Ok(render_chunk(params, cfg, edit, std::slice::from_ref(ray), settings)?.remove(0))
}

/// Per-pixel maps, row-major from the top-left.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderedImage {
    pub width: usize,
    pub height: usize,
    pub color: Vec<[f64; 3]>,
    pub opacity: Vec<f64>,
    /// Normalized accumulated density normals.
    pub normals: Vec<Vec3>,
    pub pred_normals: Vec<Vec3>,
    pub depth: Vec<f64>,
}

pub fn render_image<T: Real>(
    params: &FieldParams<T>,
    cfg: &FieldConfig,
    edit: &EditOverrides,
    camera: &Camera,
    settings: &RenderSettings,
) -> Result<RenderedImage> {
    let rays = camera.rays(settings.near, settings.far)?;
    let out = render_rays(params, cfg, edit, &rays, settings)?;
    Ok(RenderedImage {
        width: camera.width,
        height: camera.height,
        color: out.iter().map(|o| o.color).collect(),
        opacity: out.iter().map(|o| o.opacity).collect(),
        normals: out.iter().map(|o| o.normal_hat).collect(),
        pred_normals: out.iter().map(|o| o.pred_normal_hat).collect(),
        depth: out.iter().map(|o| o.depth).collect(),
    })
}
