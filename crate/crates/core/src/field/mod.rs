//! The scene representation: a spatial network producing density, normals and
//! material properties, and a directional network producing specular color
//! from an encoding of the reflected view direction.
//!
//! Everything is evaluated in batches on a [`Tape`]; the single-point functions
//! at the bottom of this module are thin wrappers for inspection and tests.

mod config;

pub use config::{DirEncoding, EditOverrides, FieldConfig};

use std::sync::Arc;

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use crate::autodiff::encoding::jacobian_tensor;
use crate::autodiff::{srgb_tonemap, Activation, DenseLayer, DenseNetwork, LayerVars, NetworkVars, Real, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::sphmath::ShTerm;
use crate::vec3::{UnitVector3, Vec3};

/// Upper clamp on the concentration `κ = 1/ρ`.
pub const KAPPA_MAX: f64 = 1e6;
/// Initial bias of the density pre-activation.
pub const DENSITY_BIAS: f64 = -1.0;
/// Initial bias of the roughness pre-activation.
pub const ROUGHNESS_BIAS: f64 = -1.0;

/// Whether the bottleneck receives training noise.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut dyn RngCore),
}

#[derive(Clone, Debug, PartialEq)]
pub struct FieldParams<T = f32> {
    pub trunk: DenseNetwork<T>,
    pub density: DenseLayer<T>,
    pub features: DenseLayer<T>,
    pub directional: DenseNetwork<T>,
}

impl<T: Real> FieldParams<T> {
    pub fn init<R: Rng + ?Sized>(cfg: &FieldConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let mut dims = vec![cfg.point_encoding_width()];
        dims.extend(std::iter::repeat_n(cfg.spatial_width, cfg.spatial_depth));
        let trunk = DenseNetwork::init(rng, &dims, Activation::Relu, Activation::Relu)?;
        let mut density = DenseLayer::init(rng, cfg.spatial_width, 1, Activation::Softplus);
        density.bias.set(0, 0, T::of(DENSITY_BIAS));
        let mut features = DenseLayer::init(rng, cfg.spatial_width, cfg.feature_width(), Activation::Linear);
        features.bias.set(0, cfg.bottleneck + 6, T::of(ROUGHNESS_BIAS));
        let mut dims = vec![cfg.directional_input_width()];
        dims.extend(std::iter::repeat_n(cfg.directional_width, cfg.directional_depth));
        dims.push(3);
        let directional = DenseNetwork::init(rng, &dims, Activation::Relu, Activation::Sigmoid)?;
        Ok(Self {
            trunk,
            density,
            features,
            directional,
        })
    }

    /// Reassembles parameters from a flat layer list (as stored in checkpoints),
    /// checking every shape against `cfg`.
    pub fn from_layers(cfg: &FieldConfig, mut layers: Vec<DenseLayer<T>>) -> Result<Self> {
        let expected = cfg.spatial_depth + 2 + cfg.directional_depth + 1;
        if layers.len() != expected {
            return Err(Error::Checkpoint(format!(
                "expected {expected} layers for this configuration, found {}",
                layers.len()
            )));
        }
        let directional = layers.split_off(cfg.spatial_depth + 2);
        let features = layers.pop().expect("counted");
        let density = layers.pop().expect("counted");
        let params = Self {
            trunk: DenseNetwork::from_layers(layers)?,
            density,
            features,
            directional: DenseNetwork::from_layers(directional)?,
        };
        let reference = Self::zeros(cfg)?;
        for (i, (a, b)) in params.layers().iter().zip(reference.layers()).enumerate() {
            if a.weight.shape() != b.weight.shape() || a.activation != b.activation {
                return Err(Error::Checkpoint(format!(
                    "layer {i}: found {:?} {:?}, configuration needs {:?} {:?}",
                    a.weight.shape(),
                    a.activation,
                    b.weight.shape(),
                    b.activation
                )));
            }
        }
        Ok(params)
    }

    /// All weights zero, head biases at their initial values.
    pub fn zeros(cfg: &FieldConfig) -> Result<Self> {
        let mut p = Self::init(cfg, &mut rand::rngs::mock::StepRng::new(0, 0))?;
        for l in p.layers_mut() {
            l.weight = Tensor::zeros(l.outputs(), l.inputs());
        }
        Ok(p)
    }

    pub fn layers(&self) -> Vec<&DenseLayer<T>> {
        let mut v: Vec<&DenseLayer<T>> = self.trunk.layers.iter().collect();
        v.push(&self.density);
        v.push(&self.features);
        v.extend(self.directional.layers.iter());
        v
    }

    pub fn layers_mut(&mut self) -> Vec<&mut DenseLayer<T>> {
        let mut v: Vec<&mut DenseLayer<T>> = self.trunk.layers.iter_mut().collect();
        v.push(&mut self.density);
        v.push(&mut self.features);
        v.extend(self.directional.layers.iter_mut());
        v
    }

    /// Weight and bias of every layer, in [`FieldVars::vars`] order.
    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.layers_mut()
            .into_iter()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn parameters(&self) -> Vec<&Tensor<T>> {
        self.layers().into_iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|t| t.len()).sum()
    }

    pub fn cast<U: Real>(&self) -> FieldParams<U> {
        FieldParams {
            trunk: self.trunk.cast(),
            density: self.density.cast(),
            features: self.features.cast(),
            directional: self.directional.cast(),
        }
    }

    /// Rebuilds handles from a flat list in [`FieldVars::vars`] order, e.g. one
    /// produced by a gradient checker.
    pub fn vars_from(&self, vars: &[Var]) -> Result<FieldVars> {
        let layers = self.layers();
        if vars.len() != 2 * layers.len() {
            return Err(Error::LengthMismatch {
                op: "vars_from",
                left: 2 * layers.len(),
                right: vars.len(),
            });
        }
        let mut lv = layers.iter().zip(vars.chunks(2)).map(|(l, wb)| LayerVars {
            weight: wb[0],
            bias: wb[1],
            activation: l.activation,
        });
        let trunk = NetworkVars {
            layers: lv.by_ref().take(self.trunk.layers.len()).collect(),
        };
        let density = lv.next().expect("counted");
        let features = lv.next().expect("counted");
        let directional = NetworkVars { layers: lv.collect() };
        Ok(FieldVars {
            trunk,
            density,
            features,
            directional,
        })
    }

    pub fn register(&self, tape: &mut Tape<T>, trainable: bool) -> FieldVars {
        FieldVars {
            trunk: self.trunk.register(tape, trainable),
            density: self.density.register(tape, trainable),
            features: self.features.register(tape, trainable),
            directional: self.directional.register(tape, trainable),
        }
    }
}

#[derive(Clone, Debug)]
pub struct FieldVars {
    pub trunk: NetworkVars,
    pub density: LayerVars,
    pub features: LayerVars,
    pub directional: NetworkVars,
}

impl FieldVars {
    /// Same order as [`FieldParams::parameters`].
    pub fn vars(&self) -> Vec<Var> {
        let mut v: Vec<Var> = self.trunk.vars().collect();
        v.extend([self.density.weight, self.density.bias, self.features.weight, self.features.bias]);
        v.extend(self.directional.vars());
        v
    }
}

/// Per-point outputs of [`shade`]; every handle has one row per point.
#[derive(Clone, Copy, Debug)]
pub struct Shaded {
    pub tau: Var,
    /// Tone-mapped color in `[0, 1]`.
    pub color: Var,
    pub diffuse: Var,
    pub tint: Var,
    pub specular: Var,
    pub roughness: Var,
    pub bottleneck: Var,
    pub pred_normal: Var,
    /// `-∇τ / |∇τ|`, when requested or needed for reflection.
    pub density_normal: Option<Var>,
}

fn constant_rows<T: Real>(tape: &mut Tape<T>, rows: usize, value: [f64; 3]) -> Var {
    tape.constant(Tensor::from_fn(rows, 3, |_, c| T::of(value[c])))
}

/// Shades `points` (`n x 3`) seen along unit `view_dirs` (`n x 3`).
///
/// Density normals cost a forward-mode pass through the trunk, so they are only
/// built when `density_normals` is set or the configuration reflects about them.
#[allow(clippy::too_many_arguments)]
pub fn shade<T: Real>(
    tape: &mut Tape<T>,
    vars: &FieldVars,
    cfg: &FieldConfig,
    edit: &EditOverrides,
    points: Var,
    view_dirs: Var,
    mode: Mode<'_>,
    density_normals: bool,
) -> Result<Shaded> {
    if points.cols() != 3 || view_dirs.shape() != points.shape() {
        return Err(Error::ShapeMismatch {
            op: "shade",
            left: points.shape(),
            right: view_dirs.shape(),
        });
    }
    let n = points.rows();
    let reflect_about_density = !cfg.use_predicted_normals && (cfg.use_reflection || cfg.input_ndotwo);
    let enc = tape.pos_enc(points, cfg.pe_levels);
    let (h, tau, density_normal) = if density_normals || reflect_about_density {
        let jac = jacobian_tensor(tape.value(points), cfg.pe_levels);
        let jac = tape.constant(jac);
        let (h, dh) = vars.trunk.forward_with_tangents(tape, enc, jac, 3)?;
        let (tau, dtau) = vars.density.forward_with_tangents(tape, h, dh, 3)?;
        let grad = tape.reshape(dtau, n, 3)?;
        let unit = tape.normalize(grad);
        (h, tau, Some(tape.scale(unit, T::of(-1.0))))
    } else {
        let h = vars.trunk.forward(tape, enc)?;
        let tau = vars.density.forward(tape, h)?;
        (h, tau, None)
    };

    let feat = vars.features.forward(tape, h)?;
    let nb = cfg.bottleneck;
    let bottleneck = if nb > 0 {
        Some(tape.slice_cols(feat, 0, nb)?)
    } else {
        None
    };
    let diffuse = match edit.diffuse_override {
        Some(c) => constant_rows(tape, n, c),
        None if cfg.use_diffuse => {
            let raw = tape.slice_cols(feat, nb, 3)?;
            tape.sigmoid(raw)
        }
        None => constant_rows(tape, n, [0.0; 3]),
    };
    let mut tint = if cfg.use_tint {
        let raw = tape.slice_cols(feat, nb + 3, 3)?;
        tape.sigmoid(raw)
    } else {
        constant_rows(tape, n, [1.0; 3])
    };
    if edit.tint_scale != 1.0 {
        tint = tape.scale(tint, T::of(edit.tint_scale));
    }
    let rho_raw = tape.slice_cols(feat, nb + 6, 1)?;
    let mut roughness = tape.softplus(rho_raw);
    if edit.roughness_scale != 1.0 {
        roughness = tape.scale(roughness, T::of(edit.roughness_scale));
    }
    let n_raw = tape.slice_cols(feat, nb + 7, 3)?;
    let pred_normal = tape.normalize(n_raw);

    // The shading normal only matters for reflection and the n'·ω_o input.
    let oriented = if cfg.use_reflection || cfg.input_ndotwo {
        let normal = if cfg.use_predicted_normals {
            pred_normal
        } else {
            density_normal.expect("density normals built when reflecting about them")
        };
        let wo = tape.scale(view_dirs, T::of(-1.0));
        let ndotwo = tape.row_dot(normal, wo)?;
        Some((normal, wo, ndotwo))
    } else {
        None
    };
    let dir = match oriented {
        Some((normal, wo, ndotwo)) if cfg.use_reflection => {
            let proj = tape.mul_col(normal, ndotwo)?;
            let proj = tape.scale(proj, T::of(2.0));
            tape.sub(proj, wo)?
        }
        _ => view_dirs,
    };

    let terms: Arc<[ShTerm]> = cfg.sh_degrees.terms().into();
    let encode = |tape: &mut Tape<T>, d: Var, kappa: Option<Var>| -> Result<Var> {
        match cfg.encoding {
            DirEncoding::Ide | DirEncoding::Directional => tape.ide(d, kappa, &terms),
            DirEncoding::Positional => Ok(tape.pos_enc(d, cfg.dir_pe_levels)),
        }
    };
    let kappa = if cfg.encoding == DirEncoding::Ide && cfg.use_roughness {
        Some(tape.recip_clamped(roughness, T::of(KAPPA_MAX)))
    } else {
        None
    };
    let mut inputs = vec![encode(tape, dir, kappa)?];
    if let Some((_, _, ndotwo)) = oriented.filter(|_| cfg.input_ndotwo) {
        inputs.push(ndotwo);
    }
    if let Some(b) = bottleneck {
        let b = match mode {
            Mode::Train(rng) if cfg.bottleneck_noise > 0.0 => {
                let std = cfg.bottleneck_noise;
                let noise = Tensor::from_fn(n, nb, |_, _| {
                    let z: f64 = rng.sample(StandardNormal);
                    T::of(std * z)
                });
                let noise = tape.constant(noise);
                tape.add(b, noise)?
            }
            _ => b,
        };
        inputs.push(b);
    }
    if cfg.concat_viewdir {
        inputs.push(encode(tape, view_dirs, None)?);
    }
    let x = tape.concat(&inputs)?;
    let specular = vars.directional.forward(tape, x)?;

    let lit = tape.mul(tint, specular)?;
    let linear = tape.add(diffuse, lit)?;
    let color = tape.tone_map(linear);
    Ok(Shaded {
        tau,
        color,
        diffuse,
        tint,
        specular,
        roughness,
        bottleneck: bottleneck.unwrap_or(feat),
        pred_normal,
        density_normal,
    })
}

/// Spatial-branch outputs at one point.
#[derive(Clone, Debug, PartialEq)]
pub struct SpatialOutput {
    pub tau: f64,
    pub bottleneck: Vec<f64>,
    pub diffuse: [f64; 3],
    pub tint: [f64; 3],
    pub roughness: f64,
    pub normal_raw: Vec3,
}

fn rgb<T: Real>(t: &Tensor<T>) -> [f64; 3] {
    [t.get(0, 0).f64(), t.get(0, 1).f64(), t.get(0, 2).f64()]
}

fn vec_row<T: Real>(t: &Tensor<T>) -> Vec3 {
    Vec3::from_array(rgb(t))
}

fn point_var<T: Real>(tape: &mut Tape<T>, v: Vec3) -> Var {
    tape.constant(Tensor::from_fn(1, 3, |_, c| T::of(v[c])))
}

pub fn spatial_forward<T: Real>(params: &FieldParams<T>, cfg: &FieldConfig, x: Vec3) -> Result<SpatialOutput> {
    let mut tape = Tape::new();
    let vars = params.register(&mut tape, false);
    let p = point_var(&mut tape, x);
    let enc = tape.pos_enc(p, cfg.pe_levels);
    let h = vars.trunk.forward(&mut tape, enc)?;
    let tau = vars.density.forward(&mut tape, h)?;
    let feat = vars.features.forward(&mut tape, h)?;
    let feat = tape.value(feat).to_f64_vec();
    let nb = cfg.bottleneck;
    let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
    let softplus = |v: f64| (-v.abs()).exp().ln_1p() + v.max(0.0);
    Ok(SpatialOutput {
        tau: tape.value(tau).item().f64(),
        bottleneck: feat[..nb].to_vec(),
        diffuse: std::array::from_fn(|i| sig(feat[nb + i])),
        tint: std::array::from_fn(|i| sig(feat[nb + 3 + i])),
        roughness: softplus(feat[nb + 6]),
        normal_raw: Vec3::new(feat[nb + 7], feat[nb + 8], feat[nb + 9]),
    })
}

/// Normalized predicted normal; the zero vector when the raw output vanishes.
pub fn predicted_normal(out: &SpatialOutput) -> Vec3 {
    out.normal_raw.normalize_guarded()
}

/// `-∇τ / |∇τ|` at `x`.
pub fn density_normal<T: Real>(params: &FieldParams<T>, cfg: &FieldConfig, x: Vec3) -> Result<Vec3> {
    let mut tape = Tape::new();
    let vars = params.register(&mut tape, false);
    let p = point_var(&mut tape, x);
    let (h, dh) = {
        let enc = tape.pos_enc(p, cfg.pe_levels);
        let jac = jacobian_tensor(tape.value(p), cfg.pe_levels);
        let jac = tape.constant(jac);
        vars.trunk.forward_with_tangents(&mut tape, enc, jac, 3)?
    };
    let (_, dtau) = vars.density.forward_with_tangents(&mut tape, h, dh, 3)?;
    let grad = Vec3::from_array(std::array::from_fn(|i| tape.value(dtau).get(i, 0).f64()));
    Ok(-grad.normalize_guarded())
}

/// Inputs of the directional branch at one point.
#[derive(Clone, Debug)]
pub struct DirectionalInput {
    pub bottleneck: Vec<f64>,
    /// Reflected direction (or the view direction when reflection is off).
    pub dir: UnitVector3,
    pub kappa: f64,
    pub ndotwo: f64,
    /// Only read when `concat_viewdir` is set.
    pub view_dir: UnitVector3,
}

pub fn directional_forward<T: Real>(
    params: &FieldParams<T>,
    cfg: &FieldConfig,
    input: &DirectionalInput,
) -> Result<[f64; 3]> {
    if input.bottleneck.len() != cfg.bottleneck {
        return Err(Error::LengthMismatch {
            op: "directional_forward bottleneck",
            left: cfg.bottleneck,
            right: input.bottleneck.len(),
        });
    }
    if cfg.encoding == DirEncoding::Ide && cfg.use_roughness && !(input.kappa > 0.0) {
        return Err(Error::InvalidKappa(input.kappa));
    }
    let mut tape = Tape::new();
    let vars = params.register(&mut tape, false);
    let terms: Arc<[ShTerm]> = cfg.sh_degrees.terms().into();
    let dir = point_var(&mut tape, input.dir.vec());
    let kappa = (cfg.encoding == DirEncoding::Ide && cfg.use_roughness)
        .then(|| tape.constant(Tensor::scalar(T::of(input.kappa))));
    let encode = |tape: &mut Tape<T>, d: Var, k: Option<Var>| -> Result<Var> {
        match cfg.encoding {
            DirEncoding::Positional => Ok(tape.pos_enc(d, cfg.dir_pe_levels)),
            _ => tape.ide(d, k, &terms),
        }
    };
    let mut parts = vec![encode(&mut tape, dir, kappa)?];
    if cfg.input_ndotwo {
        parts.push(tape.constant(Tensor::scalar(T::of(input.ndotwo))));
    }
    if cfg.bottleneck > 0 {
        let b = Tensor::from_fn(1, cfg.bottleneck, |_, c| T::of(input.bottleneck[c]));
        parts.push(tape.constant(b));
    }
    if cfg.concat_viewdir {
        let v = point_var(&mut tape, input.view_dir.vec());
        parts.push(encode(&mut tape, v, None)?);
    }
    let x = tape.concat(&parts)?;
    if x.cols() != params.directional.inputs() {
        return Err(Error::ShapeMismatch {
            op: "directional_forward",
            left: x.shape(),
            right: params.directional.layers[0].weight.shape(),
        });
    }
    let y = vars.directional.forward(&mut tape, x)?;
    Ok(rgb(tape.value(y)))
}

/// `γ(c_d + s ⊙ c_s)` with the sRGB transfer and clipping.
pub fn compose_color(diffuse: [f64; 3], tint: [f64; 3], specular: [f64; 3]) -> [f64; 3] {
    std::array::from_fn(|i| srgb_tonemap(diffuse[i] + tint[i] * specular[i]))
}

#[derive(Clone, Debug, PartialEq)]
pub struct PointSample {
    pub tau: f64,
    pub color: [f64; 3],
    pub density_normal: Vec3,
    pub pred_normal: Vec3,
}

pub fn shade_point<T: Real>(
    params: &FieldParams<T>,
    cfg: &FieldConfig,
    x: Vec3,
    view_dir: UnitVector3,
    mode: Mode<'_>,
) -> Result<PointSample> {
    let mut tape = Tape::new();
    let vars = params.register(&mut tape, false);
    let p = point_var(&mut tape, x);
    let d = point_var(&mut tape, view_dir.vec());
    let s = shade(&mut tape, &vars, cfg, &EditOverrides::default(), p, d, mode, true)?;
    Ok(PointSample {
        tau: tape.value(s.tau).item().f64(),
        color: rgb(tape.value(s.color)),
        density_normal: vec_row(tape.value(s.density_normal.expect("requested"))),
        pred_normal: vec_row(tape.value(s.pred_normal)),
    })
}
