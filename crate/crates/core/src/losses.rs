//! Photometric loss and the two normal regularizers.
//!
//! Scalar versions operate on one ray (the data loss on a batch of pixels) and
//! document the arithmetic; [`batch_losses`] builds the same terms on a tape,
//! averaged over the rays of a batch.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Real, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::renderer::BatchRender;
use crate::vec3::{UnitVector3, Vec3};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    /// Weight of the predicted-normal penalty.
    pub lambda_p: f64,
    /// Weight of the orientation penalty.
    pub lambda_o: f64,
    /// Treat compositing weights as constants inside the predicted-normal
    /// penalty. The orientation penalty always acts through the weights.
    pub stop_grad_weights: bool,
    /// Treat density normals as constants inside the predicted-normal penalty.
    pub stop_grad_density_normals: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_p: 3e-4,
            lambda_o: 0.1,
            stop_grad_weights: false,
            stop_grad_density_normals: false,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_p >= 0.0 && self.lambda_o >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "loss weights must be >= 0, got lambda_p={} lambda_o={}",
                self.lambda_p, self.lambda_o
            )));
        }
        Ok(())
    }
}

/// Mean over pixels of `|C - C_gt|^2`.
pub fn data_loss(pred: &[[f64; 3]], gt: &[[f64; 3]]) -> Result<f64> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(Error::LengthMismatch {
            op: "data_loss",
            left: pred.len(),
            right: gt.len(),
        });
    }
    let sum: f64 = pred
        .iter()
        .zip(gt)
        .map(|(p, g)| (0..3).map(|c| (p[c] - g[c]).powi(2)).sum::<f64>())
        .sum();
    Ok(sum / pred.len() as f64)
}

/// `Σ_i w_i |n_i - n'_i|^2` along one ray.
pub fn predicted_normal_loss(weights: &[f64], density_normals: &[Vec3], pred_normals: &[Vec3]) -> Result<f64> {
    if weights.len() != density_normals.len() || weights.len() != pred_normals.len() {
        return Err(Error::LengthMismatch {
            op: "predicted_normal_loss",
            left: weights.len(),
            right: density_normals.len().min(pred_normals.len()),
        });
    }
    Ok(weights
        .iter()
        .zip(density_normals.iter().zip(pred_normals))
        .map(|(w, (n, p))| w * (*n - *p).norm_squared())
        .sum())
}

/// `Σ_i w_i max(0, n'_i · d)^2` along one ray with direction `d`.
pub fn orientation_loss(weights: &[f64], pred_normals: &[Vec3], view_dir: UnitVector3) -> Result<f64> {
    if weights.len() != pred_normals.len() {
        return Err(Error::LengthMismatch {
            op: "orientation_loss",
            left: weights.len(),
            right: pred_normals.len(),
        });
    }
    Ok(weights
        .iter()
        .zip(pred_normals)
        .map(|(w, n)| w * n.dot(view_dir.vec()).max(0.0).powi(2))
        .sum())
}

pub fn total_loss(data: f64, rp: f64, ro: f64, weights: &LossWeights) -> f64 {
    data + weights.lambda_p * rp + weights.lambda_o * ro
}

/// Loss terms of one batch (or one chunk of it) on a tape.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub data: Var,
    /// Present when the render carries density normals.
    pub rp: Option<Var>,
    pub ro: Var,
    pub total: Var,
}

/// Builds the three terms for `render` against `gt` (`rays x 3`). Sums are
/// divided by `denominator`, the number of rays in the whole batch, so the
/// gradients of separately taped chunks add up to the batch mean's.
pub fn batch_losses<T: Real>(
    tape: &mut Tape<T>,
    render: &BatchRender,
    gt: &Tensor<T>,
    weights: &LossWeights,
    denominator: usize,
) -> Result<LossTerms> {
    if gt.shape() != render.color.shape() {
        return Err(Error::ShapeMismatch {
            op: "batch_losses",
            left: render.color.shape(),
            right: gt.shape(),
        });
    }
    let inv = T::of(1.0 / denominator.max(1) as f64);
    let gt = tape.constant(gt.clone());
    let diff = tape.sub(render.color, gt)?;
    let sq = tape.mul(diff, diff)?;
    let data = tape.sum(sq);
    let data = tape.scale(data, inv);

    let w = render.point_weights;
    let pred = render.shaded.pred_normal;

    let rp = match render.shaded.density_normal {
        Some(dn) => {
            let dn = if weights.stop_grad_density_normals {
                tape.stop_grad(dn)
            } else {
                dn
            };
            let wp = if weights.stop_grad_weights { tape.stop_grad(w) } else { w };
            let d = tape.sub(dn, pred)?;
            let d2 = tape.row_dot(d, d)?;
            let wd = tape.mul(wp, d2)?;
            let s = tape.sum(wd);
            Some(tape.scale(s, inv))
        }
        None => None,
    };

    let facing = tape.row_dot(pred, render.view_dirs)?;
    let back = tape.relu(facing);
    let back2 = tape.mul(back, back)?;
    let wb = tape.mul(w, back2)?;
    let ro = tape.sum(wb);
    let ro = tape.scale(ro, inv);

    let mut total = data;
    if let (Some(rp), true) = (rp, weights.lambda_p > 0.0) {
        let t = tape.scale(rp, T::of(weights.lambda_p));
        total = tape.add(total, t)?;
    }
    if weights.lambda_o > 0.0 {
        let t = tape.scale(ro, T::of(weights.lambda_o));
        total = tape.add(total, t)?;
    }
    Ok(LossTerms { data, rp, ro, total })
}
