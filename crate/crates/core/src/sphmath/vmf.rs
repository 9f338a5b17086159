//! von Mises–Fisher sampling and a Monte-Carlo estimate of harmonic expectations.

use std::f64::consts::PI;

use rand::Rng;

use super::harmonics::ShTerm;
use crate::error::{Error, Result};
use crate::vec3::{UnitVector3, Vec3};

/// `n` i.i.d. draws from `vMF(mean, κ)`; `κ = 0` is the uniform distribution.
///
/// The cosine to the mean is drawn by inverting its CDF,
/// `w = 1 + ln(u + (1-u) e^{-2κ}) / κ`, and the azimuth uniformly.
pub fn sample_vmf<R: Rng + ?Sized>(
    rng: &mut R,
    mean: UnitVector3,
    kappa: f64,
    n: usize,
) -> Result<Vec<UnitVector3>> {
    if !(kappa >= 0.0 && kappa.is_finite()) {
        return Err(Error::InvalidKappa(kappa));
    }
    let (t, b) = mean.basis();
    let scale = -(-2.0 * kappa).exp_m1();
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let u: f64 = rng.gen();
        let w = if kappa == 0.0 {
            2.0 * u - 1.0
        } else {
            // ln(u + (1-u) e^{-2κ}) = ln1p(-(1-u)(1 - e^{-2κ}))
            (1.0 + (-(1.0 - u) * scale).ln_1p() / kappa).clamp(-1.0, 1.0)
        };
        let phi = 2.0 * PI * rng.gen::<f64>();
        let s = (1.0 - w * w).max(0.0).sqrt();
        let v = t * (s * phi.cos()) + b * (s * phi.sin()) + mean.vec() * w;
        out.push(UnitVector3::new_unchecked(v / v.norm()));
    }
    Ok(out)
}

/// Sample mean of a harmonic with standard errors, per real/imaginary part.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub re: f64,
    pub im: f64,
    pub se_re: f64,
    pub se_im: f64,
}

/// Monte-Carlo `E[Y_l^m(ω)]` for `ω ~ vMF(mean, κ)` over `n` samples.
pub fn mc_sh_expectation<R: Rng + ?Sized>(
    rng: &mut R,
    mean: UnitVector3,
    kappa: f64,
    ell: usize,
    m: usize,
    n: usize,
) -> Result<McEstimate> {
    if !(kappa > 0.0) {
        return Err(Error::InvalidKappa(kappa));
    }
    let term = ShTerm::new(ell, m)?;
    let samples = sample_vmf(rng, mean, kappa, n)?;
    Ok(summarize(samples.iter().map(|s| term.eval(s.vec()))))
}

/// Mean and standard error of a stream of `(re, im)` values.
pub fn summarize(values: impl Iterator<Item = (f64, f64)>) -> McEstimate {
    let (mut n, mut sr, mut si, mut qr, mut qi) = (0usize, 0.0, 0.0, 0.0, 0.0);
    for (re, im) in values {
        n += 1;
        sr += re;
        si += im;
        qr += re * re;
        qi += im * im;
    }
    if n == 0 {
        return McEstimate {
            re: 0.0,
            im: 0.0,
            se_re: 0.0,
            se_im: 0.0,
        };
    }
    let nf = n as f64;
    let (mr, mi) = (sr / nf, si / nf);
    let denom = (nf - 1.0).max(1.0);
    let var_r = ((qr - nf * mr * mr) / denom).max(0.0);
    let var_i = ((qi - nf * mi * mi) / denom).max(0.0);
    McEstimate {
        re: mr,
        im: mi,
        se_re: (var_r / nf).sqrt(),
        se_im: (var_i / nf).sqrt(),
    }
}

/// Arithmetic mean of the sample directions.
pub fn sample_mean(samples: &[UnitVector3]) -> Vec3 {
    let sum = samples.iter().fold(Vec3::ZERO, |acc, s| acc + s.vec());
    sum / samples.len().max(1) as f64
}
