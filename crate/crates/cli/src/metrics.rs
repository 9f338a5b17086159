//! Image and normal-map error metrics.

use reflfield::Vec3;

use crate::CliError;

/// Reported in place of +∞ for identical images.
pub const PSNR_CAP: f64 = 99.0;

/// `-10 log10(MSE)` over all channels of images in `[0, 1]`.
pub fn psnr(a: &[[f64; 3]], b: &[[f64; 3]]) -> Result<f64, CliError> {
    if a.len() != b.len() || a.is_empty() {
        return Err(CliError::Metric(format!("psnr on images of {} and {} pixels", a.len(), b.len())));
    }
    let se: f64 = a
        .iter()
        .zip(b)
        .flat_map(|(p, q)| (0..3).map(move |c| (p[c] - q[c]).powi(2)))
        .sum();
    let mse = se / (3 * a.len()) as f64;
    Ok(if mse == 0.0 { PSNR_CAP } else { (-10.0 * mse.log10()).min(PSNR_CAP) })
}

/// Angle in degrees between a prediction and a reference normal; zero-length
/// predictions count as 90°. Uses `atan2` so near-identical normals give
/// near-zero angles rather than `acos` round-off.
pub fn angular_error(pred: Vec3, gt: Vec3) -> f64 {
    let (p, g) = (pred.normalize_guarded(), gt.normalize_guarded());
    if p == Vec3::ZERO || g == Vec3::ZERO {
        return 90.0;
    }
    p.cross(g).norm().atan2(p.dot(g)).to_degrees()
}

/// Running sum of angular errors, pooled over every masked pixel it sees.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MaeAccumulator {
    pub sum: f64,
    pub count: usize,
}

impl MaeAccumulator {
    pub fn add(&mut self, pred: &[Vec3], gt: &[Vec3], mask: &[bool]) -> Result<(), CliError> {
        if pred.len() != gt.len() || pred.len() != mask.len() {
            return Err(CliError::Metric(format!(
                "normal maps of {}, {} and mask of {} pixels",
                pred.len(),
                gt.len(),
                mask.len()
            )));
        }
        for ((&p, &g), &m) in pred.iter().zip(gt).zip(mask) {
            if m {
                self.sum += angular_error(p, g);
                self.count += 1;
            }
        }
        Ok(())
    }

    pub fn mean(&self) -> Result<f64, CliError> {
        if self.count == 0 {
            return Err(CliError::Metric("empty normal mask".into()));
        }
        Ok(self.sum / self.count as f64)
    }
}

/// Mean angular error in degrees over the masked pixels.
pub fn normal_mae(pred: &[Vec3], gt: &[Vec3], mask: &[bool]) -> Result<f64, CliError> {
    let mut acc = MaeAccumulator::default();
    acc.add(pred, gt, mask)?;
    acc.mean()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_examples() {
        let a = vec![[0.2, 0.4, 0.6]; 10];
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
        let b: Vec<[f64; 3]> = a.iter().map(|p| p.map(|v| v + 0.1)).collect();
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
        let c: Vec<[f64; 3]> = a.iter().map(|p| p.map(|v| v - 0.001f64.sqrt())).collect();
        assert!((psnr(&a, &c).unwrap() - 30.0).abs() < 1e-9);
        assert!(psnr(&a, &b[..3]).is_err());
    }

    #[test]
    fn mae_examples() {
        let n = vec![Vec3::Z; 4];
        let mask = vec![true; 4];
        assert_eq!(normal_mae(&n, &n, &mask).unwrap(), 0.0);
        let ortho = vec![Vec3::X; 4];
        assert!((normal_mae(&ortho, &n, &mask).unwrap() - 90.0).abs() < 1e-12);
        let half = vec![Vec3::Z, Vec3::Z, -Vec3::Z, -Vec3::Z];
        assert!((normal_mae(&half, &n, &mask).unwrap() - 90.0).abs() < 1e-12);
        assert_eq!(normal_mae(&[Vec3::ZERO], &[Vec3::Z], &[true]).unwrap(), 90.0);
        // Masked-out pixels are ignored; an empty mask is an error.
        assert!(normal_mae(&ortho, &n, &[false, false, false, false]).is_err());
        assert_eq!(normal_mae(&[Vec3::X, Vec3::Z], &[Vec3::Z; 2], &[false, true]).unwrap(), 0.0);
    }

    #[test]
    fn pooled_mae_weights_pixels_not_images() {
        let mut acc = MaeAccumulator::default();
        acc.add(&[Vec3::X], &[Vec3::Z], &[true]).unwrap();
        acc.add(&[Vec3::Z; 3], &[Vec3::Z; 3], &[true; 3]).unwrap();
        assert!((acc.mean().unwrap() - 22.5).abs() < 1e-12);
    }
}
