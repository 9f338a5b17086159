//! Complex spherical harmonics `Y_l^m`, `m >= 0`.
//!
//! Convention: orthonormal on the sphere, Condon–Shortley phase included. Each
//! harmonic is written in Cartesian form
//!
//! ```text
//! Y_l^m(x, y, z) = K_lm (-1)^m Q_lm(z) (x + i y)^m,   Q_lm = d^m P_l / dz^m
//! ```
//!
//! which on the unit sphere equals the usual `K_lm P_l^m(cos θ) e^{i m φ}`. Off the
//! sphere the same polynomial is used, which is what the encoding differentiates.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::legendre::{differentiate, eval_poly, legendre_coefficients};
use crate::error::{Error, Result};
use crate::vec3::{UnitVector3, Vec3};

/// Largest degree accepted in an index set.
pub const MAX_DEGREE: usize = 16;

#[derive(Debug, Clone)]
pub struct ShTerm {
    pub ell: usize,
    pub m: usize,
    scale: f64,
    q: Vec<f64>,
    dq: Vec<f64>,
}

impl ShTerm {
    pub fn new(ell: usize, m: usize) -> Result<Self> {
        if m > ell || ell > MAX_DEGREE {
            return Err(Error::InvalidShIndex { ell, m });
        }
        // (l - m)! / (l + m)!
        let ratio: f64 = ((ell - m + 1)..=(ell + m)).map(|k| 1.0 / k as f64).product();
        let norm = ((2 * ell + 1) as f64 / (4.0 * PI) * ratio).sqrt();
        let sign = if m.is_multiple_of(2) { 1.0 } else { -1.0 };
        let q = differentiate(&legendre_coefficients(ell), m);
        let dq = differentiate(&q, 1);
        Ok(Self {
            ell,
            m,
            scale: norm * sign,
            q,
            dq,
        })
    }

    /// `(x + iy)^k` as a pair.
    fn cpow(x: f64, y: f64, k: usize) -> (f64, f64) {
        let (mut re, mut im) = (1.0, 0.0);
        for _ in 0..k {
            let r = re * x - im * y;
            im = re * y + im * x;
            re = r;
        }
        (re, im)
    }

    /// Real and imaginary parts at `v`.
    pub fn eval(&self, v: Vec3) -> (f64, f64) {
        let q = self.scale * eval_poly(&self.q, v.z);
        let (re, im) = Self::cpow(v.x, v.y, self.m);
        (q * re, q * im)
    }

    /// Value plus gradients of the real and imaginary parts with respect to `v`.
    pub fn eval_with_grad(&self, v: Vec3) -> ((f64, f64), [f64; 3], [f64; 3]) {
        let q = self.scale * eval_poly(&self.q, v.z);
        let dq = self.scale * eval_poly(&self.dq, v.z);
        let (re, im) = Self::cpow(v.x, v.y, self.m);
        let (gx_re, gx_im) = if self.m > 0 {
            let (r, i) = Self::cpow(v.x, v.y, self.m - 1);
            let mf = self.m as f64;
            (mf * r, mf * i)
        } else {
            (0.0, 0.0)
        };
        // d/dy (x+iy)^m = i m (x+iy)^(m-1)
        let grad_re = [q * gx_re, -q * gx_im, dq * re];
        let grad_im = [q * gx_im, q * gx_re, dq * im];
        ((q * re, q * im), grad_re, grad_im)
    }

    /// Number of encoding components this term contributes (real, plus imaginary if `m > 0`).
    pub fn width(&self) -> usize {
        if self.m == 0 {
            1
        } else {
            2
        }
    }
}

/// `Y_ell^m(dir)` as `(re, im)`.
pub fn eval_sh(ell: usize, m: usize, dir: UnitVector3) -> Result<(f64, f64)> {
    Ok(ShTerm::new(ell, m)?.eval(dir.vec()))
}

/// The degrees used by the directional encoding; orders `m = 0..=l` per degree.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct ShIndexSet {
    degrees: Vec<usize>,
}

impl ShIndexSet {
    pub fn new(degrees: Vec<usize>) -> Result<Self> {
        if degrees.is_empty() {
            return Err(Error::InvalidDegrees("empty".into()));
        }
        if degrees[0] < 1 {
            return Err(Error::InvalidDegrees("degrees must be >= 1".into()));
        }
        if degrees.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidDegrees(format!(
                "{degrees:?} is not strictly increasing"
            )));
        }
        if let Some(&d) = degrees.iter().find(|&&d| d > MAX_DEGREE) {
            return Err(Error::InvalidDegrees(format!(
                "degree {d} exceeds {MAX_DEGREE}"
            )));
        }
        Ok(Self { degrees })
    }

    /// Frequency-doubling degrees `1, 2, 4, ..., 2^(levels-1)`.
    pub fn powers_of_two(levels: u32) -> Result<Self> {
        Self::new((0..levels).map(|k| 1usize << k).collect())
    }

    pub fn degrees(&self) -> &[usize] {
        &self.degrees
    }

    /// Encoding width, `sum (2l + 1)`.
    pub fn len(&self) -> usize {
        self.degrees.iter().map(|l| 2 * l + 1).sum()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Terms in encoding order: ascending `l`, then `m = 0..=l`.
    pub fn terms(&self) -> Vec<ShTerm> {
        self.degrees
            .iter()
            .flat_map(|&l| (0..=l).map(move |m| ShTerm::new(l, m).expect("validated degree")))
            .collect()
    }
}

impl Default for ShIndexSet {
    fn default() -> Self {
        Self {
            degrees: vec![1, 2, 4],
        }
    }
}

impl TryFrom<Vec<usize>> for ShIndexSet {
    type Error = Error;
    fn try_from(v: Vec<usize>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ShIndexSet> for Vec<usize> {
    fn from(s: ShIndexSet) -> Vec<usize> {
        s.degrees
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sphmath::legendre::gauss_legendre;

    fn unit(x: f64, y: f64, z: f64) -> UnitVector3 {
        UnitVector3::normalize(Vec3::new(x, y, z)).unwrap()
    }

    #[test]
    fn spec_examples() {
        let (re, im) = eval_sh(1, 0, UnitVector3::Z).unwrap();
        assert!((re - 0.48860).abs() < 1e-5 && im == 0.0);
        let (re, im) = eval_sh(2, 1, UnitVector3::Z).unwrap();
        assert!(re.abs() < 1e-15 && im.abs() < 1e-15);
        let (re, _) = eval_sh(1, 0, -UnitVector3::Z).unwrap();
        assert!((re + 0.48860).abs() < 1e-5);
        assert!(eval_sh(2, 3, UnitVector3::Z).is_err());
    }

    #[test]
    fn matches_closed_forms() {
        // Y_1^1 = -sqrt(3/8pi) sin θ e^{iφ}; Y_2^2 = (1/4) sqrt(15/2pi) sin^2 θ e^{2iφ}
        let d = unit(0.3, -0.5, 0.4);
        let (x, y) = (d.x(), d.y());
        let c11 = -(3.0 / (8.0 * PI)).sqrt();
        let (re, im) = eval_sh(1, 1, d).unwrap();
        assert!((re - c11 * x).abs() < 1e-14 && (im - c11 * y).abs() < 1e-14);
        let c22 = 0.25 * (15.0 / (2.0 * PI)).sqrt();
        let (re, im) = eval_sh(2, 2, d).unwrap();
        assert!((re - c22 * (x * x - y * y)).abs() < 1e-14);
        assert!((im - c22 * 2.0 * x * y).abs() < 1e-14);
    }

    #[test]
    fn orthonormal_on_default_set() {
        // product rule: Gauss–Legendre in cos θ, uniform in φ
        let (u, w) = gauss_legendre(48);
        let nphi = 96;
        for term in ShIndexSet::default().terms() {
            let mut total = 0.0;
            for (&z, &wz) in u.iter().zip(&w) {
                let s = (1.0 - z * z).sqrt();
                for k in 0..nphi {
                    let phi = 2.0 * PI * k as f64 / nphi as f64;
                    let (re, im) = term.eval(Vec3::new(s * phi.cos(), s * phi.sin(), z));
                    total += wz * (2.0 * PI / nphi as f64) * (re * re + im * im);
                }
            }
            assert!(
                (total - 1.0).abs() < 1e-4,
                "l={} m={} norm={total}",
                term.ell,
                term.m
            );
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let v = Vec3::new(0.2, -0.6, 0.7);
        let h = 1e-6;
        for term in ShIndexSet::new(vec![1, 2, 3, 4]).unwrap().terms() {
            let (_, gre, gim) = term.eval_with_grad(v);
            for k in 0..3 {
                let mut e = [0.0; 3];
                e[k] = h;
                let dv = Vec3::from_array(e);
                let (rp, ip) = term.eval(v + dv);
                let (rm, im) = term.eval(v - dv);
                assert!((gre[k] - (rp - rm) / (2.0 * h)).abs() < 1e-7);
                assert!((gim[k] - (ip - im) / (2.0 * h)).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn index_set_validation() {
        assert_eq!(ShIndexSet::default().len(), 17);
        assert_eq!(ShIndexSet::powers_of_two(3).unwrap(), ShIndexSet::default());
        assert!(ShIndexSet::new(vec![]).is_err());
        assert!(ShIndexSet::new(vec![0, 1]).is_err());
        assert!(ShIndexSet::new(vec![2, 2]).is_err());
        assert!(ShIndexSet::new(vec![3, 1]).is_err());
        assert!(ShIndexSet::new(vec![1, 32]).is_err());
        let widths: usize = ShIndexSet::default().terms().iter().map(ShTerm::width).sum();
        assert_eq!(widths, 17);
    }
}
