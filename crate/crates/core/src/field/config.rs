use serde::{Deserialize, Serialize};

use crate::autodiff::encoding::encoded_len;
use crate::error::{Error, Result};
use crate::sphmath::ShIndexSet;

/// How the directional branch encodes its input direction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirEncoding {
    /// Harmonics damped by the roughness-dependent attenuation.
    Ide,
    /// The same harmonics without attenuation.
    Directional,
    /// Sinusoidal encoding of the raw direction vector.
    Positional,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldConfig {
    /// Number of hidden ReLU layers in the spatial trunk.
    pub spatial_depth: usize,
    pub spatial_width: usize,
    pub directional_depth: usize,
    pub directional_width: usize,
    /// Positional-encoding levels for 3-D points.
    pub pe_levels: usize,
    /// Positional-encoding levels for directions under [`DirEncoding::Positional`].
    pub dir_pe_levels: usize,
    pub sh_degrees: ShIndexSet,
    pub bottleneck: usize,
    pub use_reflection: bool,
    pub encoding: DirEncoding,
    pub concat_viewdir: bool,
    /// Feed `n'·ω_o` to the directional branch; off gives a fixed lobe shape.
    pub input_ndotwo: bool,
    pub use_diffuse: bool,
    pub use_tint: bool,
    pub use_roughness: bool,
    pub use_predicted_normals: bool,
    /// Std of the Gaussian noise added to the bottleneck while training.
    pub bottleneck_noise: f64,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self {
            spatial_depth: 4,
            spatial_width: 64,
            directional_depth: 4,
            directional_width: 64,
            pe_levels: 6,
            dir_pe_levels: 4,
            sh_degrees: ShIndexSet::default(),
            bottleneck: 16,
            use_reflection: true,
            encoding: DirEncoding::Ide,
            concat_viewdir: false,
            input_ndotwo: true,
            use_diffuse: true,
            use_tint: true,
            use_roughness: true,
            use_predicted_normals: true,
            bottleneck_noise: 0.1,
        }
    }
}

impl FieldConfig {
    /// View-direction baseline: no reflection, plain directional encoding, no
    /// diffuse/tint/roughness structure.
    pub fn view_direction_baseline() -> Self {
        Self {
            use_reflection: false,
            encoding: DirEncoding::Directional,
            input_ndotwo: false,
            use_diffuse: false,
            use_tint: false,
            use_roughness: false,
            use_predicted_normals: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("spatial_depth", self.spatial_depth),
            ("spatial_width", self.spatial_width),
            ("directional_depth", self.directional_depth),
            ("directional_width", self.directional_width),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidArgument(format!("{name} must be >= 1")));
        }
        if !(self.bottleneck_noise >= 0.0 && self.bottleneck_noise.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "bottleneck_noise must be >= 0, got {}",
                self.bottleneck_noise
            )));
        }
        Ok(())
    }

    pub fn point_encoding_width(&self) -> usize {
        encoded_len(self.pe_levels)
    }

    pub fn direction_encoding_width(&self) -> usize {
        match self.encoding {
            DirEncoding::Ide | DirEncoding::Directional => self.sh_degrees.len(),
            DirEncoding::Positional => encoded_len(self.dir_pe_levels),
        }
    }

    /// Width of the directional branch input.
    pub fn directional_input_width(&self) -> usize {
        let enc = self.direction_encoding_width();
        enc + usize::from(self.input_ndotwo)
            + self.bottleneck
            + if self.concat_viewdir { enc } else { 0 }
    }

    /// Width of the spatial feature head: `b, c_d, s, rho, n_raw`.
    pub fn feature_width(&self) -> usize {
        self.bottleneck + 3 + 3 + 1 + 3
    }
}

/// Shade-time material overrides. The neutral value leaves rendering unchanged.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EditOverrides {
    /// Multiplies the roughness, so the concentration is divided by it.
    pub roughness_scale: f64,
    /// Replaces the diffuse color everywhere.
    pub diffuse_override: Option<[f64; 3]>,
    /// Multiplies the specular tint.
    pub tint_scale: f64,
}

impl Default for EditOverrides {
    fn default() -> Self {
        Self {
            roughness_scale: 1.0,
            diffuse_override: None,
            tint_scale: 1.0,
        }
    }
}

impl EditOverrides {
    pub fn is_neutral(&self) -> bool {
        *self == Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.roughness_scale > 0.0 && self.roughness_scale.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "roughness_scale must be > 0, got {}",
                self.roughness_scale
            )));
        }
        if !(self.tint_scale >= 0.0 && self.tint_scale.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "tint_scale must be >= 0, got {}",
                self.tint_scale
            )));
        }
        if let Some(c) = self.diffuse_override {
            if c.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::InvalidArgument(format!(
                    "diffuse_override must lie in [0, 1], got {c:?}"
                )));
            }
        }
        Ok(())
    }
}
