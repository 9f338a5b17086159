use super::attenuation::attenuation_approx;
use super::harmonics::ShIndexSet;
use crate::error::Result;
use crate::vec3::UnitVector3;

/// Flat encoding: per degree ascending, per `m = 0..=l`, real part then (for
/// `m > 0`) imaginary part.
#[derive(Debug, Clone, PartialEq)]
pub struct IdeVector(pub Vec<f64>);

impl IdeVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

fn encode(wr: UnitVector3, idx: &ShIndexSet, atten: impl Fn(usize) -> f64) -> IdeVector {
    let mut out = Vec::with_capacity(idx.len());
    for term in idx.terms() {
        let a = atten(term.ell);
        let (re, im) = term.eval(wr.vec());
        out.push(a * re);
        if term.m > 0 {
            out.push(a * im);
        }
    }
    IdeVector(out)
}

/// Integrated directional encoding: vMF-expected harmonics of the reflection
/// direction, using the exponential attenuation.
pub fn ide(wr: UnitVector3, kappa: f64, idx: &ShIndexSet) -> Result<IdeVector> {
    // validates kappa once
    attenuation_approx(0, kappa)?;
    Ok(encode(wr, idx, |l| {
        attenuation_approx(l, kappa).expect("kappa validated")
    }))
}

/// The same harmonics without attenuation (the `κ → ∞` limit).
pub fn directional_encoding(wr: UnitVector3, idx: &ShIndexSet) -> IdeVector {
    encode(wr, idx, |_| 1.0)
}
