//! Analytic glossy-sphere oracle, dataset files and PNG codecs.
//!
//! The oracle shades a sphere under distant illumination made of colored
//! vMF-shaped lobes. Both the diffuse irradiance and the Phong-filtered
//! specular term are integrals of the environment against a lobe around an
//! axis; each is evaluated on a fixed grid warped so that the lobe weight is
//! uniform, which keeps very sharp lobes well resolved.

pub mod dataset;
pub mod image;

use std::f64::consts::PI;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::autodiff::srgb_tonemap;
use crate::error::{Error, Result};
use crate::renderer::{Camera, Ray};
use crate::sphmath::reflect;
use crate::vec3::{UnitVector3, Vec3};

pub use dataset::{generate_dataset, load_dataset, load_scene, look_at_origin, validate_pose, DatasetSpec, Decode, Frame, SceneDataset, Split};

pub const GRID_PHI: usize = 128;
pub const GRID_S: usize = 64;

/// Radiance `radiance * exp(kappa (d·direction - 1))`, peaking at `direction`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvLobe {
    pub direction: UnitVector3,
    pub kappa: f64,
    pub radiance: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub ambient: [f64; 3],
    pub lobes: Vec<EnvLobe>,
}

impl Environment {
    pub fn constant(value: [f64; 3]) -> Self {
        Self {
            ambient: value,
            lobes: Vec::new(),
        }
    }

    /// Per-channel upper bound of the radiance over all directions.
    pub fn radiance_bound(&self) -> [f64; 3] {
        let mut b = self.ambient;
        for lobe in &self.lobes {
            for (b, r) in b.iter_mut().zip(lobe.radiance) {
                *b += r;
            }
        }
        b
    }

    fn validate(&self) -> Result<()> {
        let bad = |v: f64| !(v >= 0.0 && v.is_finite());
        if self.ambient.iter().any(|&v| bad(v)) {
            return Err(Error::InvalidArgument(format!("ambient radiance {:?}", self.ambient)));
        }
        for lobe in &self.lobes {
            if lobe.radiance.iter().any(|&v| bad(v)) || bad(lobe.kappa) {
                return Err(Error::InvalidArgument(format!("environment lobe {lobe:?}")));
            }
        }
        Ok(())
    }

    fn radiance_vec(&self, d: Vec3) -> [f64; 3] {
        let mut out = self.ambient;
        for lobe in &self.lobes {
            let f = (lobe.kappa * (d.dot(lobe.direction.vec()) - 1.0)).exp();
            for (o, r) in out.iter_mut().zip(lobe.radiance) {
                *o += r * f;
            }
        }
        out
    }
}

pub fn env_radiance(dir: UnitVector3, env: &Environment) -> [f64; 3] {
    env.radiance_vec(dir.vec())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Material {
    pub diffuse: [f64; 3],
    pub tint: [f64; 3],
    /// Phong exponent of the specular lobe.
    pub exponent: f64,
}

impl Material {
    fn validate(&self) -> Result<()> {
        let unit = |v: &f64| (0.0..=1.0).contains(v);
        if !self.diffuse.iter().chain(&self.tint).all(unit) || !(self.exponent > 0.0 && self.exponent.is_finite()) {
            return Err(Error::InvalidArgument(format!("invalid material {self:?}")));
        }
        Ok(())
    }
}

/// How the two materials are laid out over the sphere (by surface normal).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regions {
    /// `materials[0]` where `n·axis >= 0`.
    Hemisphere { axis: UnitVector3 },
    /// Alternating cells in longitude/latitude, `cells` per half turn.
    Checker { cells: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleScene {
    pub center: Vec3,
    pub radius: f64,
    pub materials: [Material; 2],
    pub regions: Regions,
    pub env: Environment,
}

impl Default for OracleScene {
    /// Unit sphere, glossy on `+x` and rough on `-x`, under a sky with a
    /// warm sun, a few colored lobes and a dim ground.
    fn default() -> Self {
        Self {
            center: Vec3::ZERO,
            radius: 1.0,
            materials: [
                Material {
                    diffuse: [0.1, 0.04, 0.03],
                    tint: [0.9, 0.9, 0.9],
                    exponent: 150.0,
                },
                Material {
                    diffuse: [0.03, 0.06, 0.12],
                    tint: [0.8, 0.8, 0.8],
                    exponent: 12.0,
                },
            ],
            regions: Regions::Hemisphere {
                axis: UnitVector3::new(1.0, 0.0, 0.0).expect("unit axis"),
            },
            env: Environment {
                ambient: [0.03, 0.03, 0.03],
                lobes: vec![
                    EnvLobe {
                        direction: UnitVector3::normalize(Vec3::new(0.3, 0.4, 0.87)).expect("nonzero"),
                        kappa: 30.0,
                        radiance: [1.0, 0.8, 0.55],
                    },
                    EnvLobe {
                        direction: UnitVector3::normalize(Vec3::new(0.0, 0.0, 1.0)).expect("nonzero"),
                        kappa: 2.0,
                        radiance: [0.15, 0.3, 0.55],
                    },
                    EnvLobe {
                        direction: UnitVector3::normalize(Vec3::new(-0.8, 0.5, 0.2)).expect("nonzero"),
                        kappa: 8.0,
                        radiance: [0.2, 0.55, 0.2],
                    },
                    EnvLobe {
                        direction: UnitVector3::normalize(Vec3::new(0.6, -0.7, 0.1)).expect("nonzero"),
                        kappa: 10.0,
                        radiance: [0.6, 0.12, 0.12],
                    },
                    EnvLobe {
                        direction: UnitVector3::normalize(Vec3::new(0.0, 0.0, -1.0)).expect("nonzero"),
                        kappa: 3.0,
                        radiance: [0.25, 0.18, 0.1],
                    },
                ],
            },
        }
    }
}

impl OracleScene {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0 && self.radius.is_finite()) || !self.center.is_finite() {
            return Err(Error::InvalidArgument(format!("sphere radius {} center {:?}", self.radius, self.center)));
        }
        if let Regions::Checker { cells: 0 } = self.regions {
            return Err(Error::InvalidArgument("checker needs at least one cell".into()));
        }
        self.materials.iter().try_for_each(Material::validate)?;
        self.env.validate()
    }

    pub fn material_at(&self, normal: UnitVector3) -> &Material {
        let first = match &self.regions {
            Regions::Hemisphere { axis } => normal.dot(*axis) >= 0.0,
            Regions::Checker { cells } => {
                let k = *cells as f64 / PI;
                let lon = (normal.y().atan2(normal.x()) * k).floor() as i64;
                let lat = (normal.z().clamp(-1.0, 1.0).acos() * k).floor() as i64;
                (lon + lat).rem_euclid(2) == 0
            }
        };
        &self.materials[if first { 0 } else { 1 }]
    }
}

/// Nearest intersection with positive distance, as `(t, outward normal)`.
pub fn ray_sphere_intersect(ray: &Ray, center: Vec3, radius: f64) -> Option<(f64, Vec3)> {
    let oc = ray.origin - center;
    let d = ray.dir.vec();
    let b = oc.dot(d);
    let c = oc.norm_squared() - radius * radius;
    let disc = b * b - c;
    if disc < 0.0 {
        return None;
    }
    let root = disc.sqrt();
    // Stable pair of roots of t^2 + 2bt + c = 0.
    let q = -b - root.copysign(b);
    let (t0, t1) = if q == 0.0 { (0.0, 0.0) } else { (q, c / q) };
    let (lo, hi) = if t0 <= t1 { (t0, t1) } else { (t1, t0) };
    let t = if lo > 0.0 {
        lo
    } else if hi > 0.0 {
        hi
    } else {
        return None;
    };
    Some((t, (ray.at(t) - center) / radius))
}

struct Grid {
    phi: Vec<(f64, f64)>,
    s: Vec<f64>,
}

fn grid() -> &'static Grid {
    static GRID: OnceLock<Grid> = OnceLock::new();
    GRID.get_or_init(|| Grid {
        phi: (0..GRID_PHI)
            .map(|j| {
                let a = 2.0 * PI * (j as f64 + 0.5) / GRID_PHI as f64;
                (a.cos(), a.sin())
            })
            .collect(),
        s: (0..GRID_S).map(|i| (i as f64 + 0.5) / GRID_S as f64).collect(),
    })
}

/// `(1/2π) ∫ L(ω) · p · (t^(p-1)) dω` over the hemisphere around `axis`, with
/// `t = ω·axis`. Substituting `s = t^p` makes the weight uniform in `(s, φ)`.
fn lobe_integral(axis: UnitVector3, power: f64, env: &Environment) -> [f64; 3] {
    let g = grid();
    let a = axis.vec();
    let (u, v) = axis.basis();
    let mut acc = [0.0; 3];
    for &s in &g.s {
        let t = s.powf(1.0 / power);
        let r = (1.0 - t * t).max(0.0).sqrt();
        for &(c, sn) in &g.phi {
            let l = env.radiance_vec(a * t + (u * c + v * sn) * r);
            for k in 0..3 {
                acc[k] += l[k];
            }
        }
    }
    acc.map(|x| x / (GRID_S * GRID_PHI) as f64)
}

/// Cosine-weighted irradiance divided by π.
pub fn diffuse_irradiance(normal: UnitVector3, env: &Environment) -> [f64; 3] {
    lobe_integral(normal, 2.0, env)
}

/// Environment filtered by the normalized Phong lobe `((α+1)/2π) max(t,0)^α`.
pub fn phong_filtered(dir: UnitVector3, exponent: f64, env: &Environment) -> [f64; 3] {
    lobe_integral(dir, exponent + 1.0, env)
}

/// Linear outgoing radiance `c_d E/π + s ⊙ F(ω_r)`; no shadows or interreflection.
/// Illumination is distant, so the hit position does not enter.
pub fn oracle_shade(normal: UnitVector3, wo: UnitVector3, material: &Material, env: &Environment) -> Result<[f64; 3]> {
    let cos = normal.dot(wo);
    if !(cos > 0.0) {
        return Err(Error::BackFacing(cos));
    }
    let zero = |c: &[f64; 3]| c.iter().all(|&v| v == 0.0);
    let diffuse = if zero(&material.diffuse) {
        [0.0; 3]
    } else {
        diffuse_irradiance(normal, env)
    };
    let specular = if zero(&material.tint) {
        [0.0; 3]
    } else {
        phong_filtered(reflect(wo, normal), material.exponent, env)
    };
    Ok(std::array::from_fn(|c| material.diffuse[c] * diffuse[c] + material.tint[c] * specular[c]))
}

/// Ground-truth rendering of one view.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleImage {
    pub width: usize,
    pub height: usize,
    /// Tone-mapped color in `[0, 1]`, background composited.
    pub color: Vec<[f64; 3]>,
    /// World-space unit normals; zero on background pixels.
    pub normals: Vec<Vec3>,
    pub mask: Vec<bool>,
}

/// Renders the sphere through pixel centers. Tangent hits count as misses.
pub fn render_oracle(scene: &OracleScene, camera: &Camera, background: [f64; 3]) -> Result<OracleImage> {
    scene.validate()?;
    let rays = camera.rays(1e-6, 1e6)?;
    let n = rays.len();
    let mut img = OracleImage {
        width: camera.width,
        height: camera.height,
        color: vec![background; n],
        normals: vec![Vec3::ZERO; n],
        mask: vec![false; n],
    };
    for (i, ray) in rays.iter().enumerate() {
        let Some((_, normal)) = ray_sphere_intersect(ray, scene.center, scene.radius) else {
            continue;
        };
        let Some(n) = UnitVector3::normalize(normal) else { continue };
        let wo = -ray.dir;
        if !(n.dot(wo) > 0.0) {
            continue;
        }
        let linear = oracle_shade(n, wo, scene.material_at(n), &scene.env)?;
        img.color[i] = linear.map(srgb_tonemap);
        img.normals[i] = n.vec();
        img.mask[i] = true;
    }
    Ok(img)
}
