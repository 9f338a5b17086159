//! Attenuation of a degree-`l` harmonic under a vMF distribution of concentration `κ`.
//!
//! `A_l(κ) = κ / (2 sinh κ) ∫_{-1}^{1} P_l(u) e^{κu} du`, so that
//! `E_{ω ~ vMF(μ, κ)}[Y_l^m(ω)] = A_l(κ) Y_l^m(μ)`.

use super::legendre::{eval_legendre, gauss_legendre_128};
use crate::error::{Error, Result};

fn check_kappa(kappa: f64) -> Result<()> {
    if kappa > 0.0 && kappa.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidKappa(kappa))
    }
}

/// Exact attenuation by 128-point Gauss–Legendre quadrature of the Legendre integral.
///
/// The integrand is rescaled by `e^{-κ}` and divided by the same rule applied to
/// `e^{κ(u-1)}` alone, so `A_0` is exactly one and large `κ` does not overflow.
pub fn attenuation_exact(ell: usize, kappa: f64) -> Result<f64> {
    check_kappa(kappa)?;
    let (nodes, weights) = gauss_legendre_128();
    let mut num = 0.0;
    let mut den = 0.0;
    for (&u, &w) in nodes.iter().zip(weights) {
        let e = w * (kappa * (u - 1.0)).exp();
        num += e * eval_legendre(ell, u);
        den += e;
    }
    Ok(num / den)
}

/// Closed-form polynomial-in-`1/κ` expression with `coth κ` on odd terms.
///
/// Suffers catastrophic cancellation for small `κ` and large `l`; kept as an
/// independent route for moderate arguments only.
pub fn attenuation_closed_form(ell: usize, kappa: f64) -> Result<f64> {
    check_kappa(kappa)?;
    let coth = 1.0 / kappa.tanh();
    let mut total = 0.0;
    for i in 0..=ell {
        // (2l - i)! / (i! (l - i)!) * (-2)^(i - l) * κ^(i - l)
        let mut c = 1.0;
        for k in (ell - i + 1)..=(2 * ell - i) {
            c *= k as f64;
        }
        for k in 1..=i {
            c /= k as f64;
        }
        let p = i as i32 - ell as i32;
        let term = c * (-2.0f64).powi(p) * kappa.powi(p);
        total += if i % 2 == 0 { term } else { term * coth };
    }
    Ok(total)
}

/// The training-path approximation `exp(-l(l+1) / (2κ))`.
pub fn attenuation_approx(ell: usize, kappa: f64) -> Result<f64> {
    check_kappa(kappa)?;
    Ok(attenuation_approx_unchecked(ell, kappa))
}

pub(crate) fn attenuation_approx_unchecked(ell: usize, kappa: f64) -> f64 {
    let l = ell as f64;
    (-l * (l + 1.0) / (2.0 * kappa)).exp()
}

/// `coth κ - 1/κ`, written via a series near zero to avoid cancellation.
pub fn mean_resultant_length(kappa: f64) -> f64 {
    if kappa < 1e-3 {
        kappa / 3.0 - kappa.powi(3) / 45.0
    } else {
        1.0 / kappa.tanh() - 1.0 / kappa
    }
}
