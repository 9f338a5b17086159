//! Spherical-harmonic and reflection math behind the directional encoding.

pub mod attenuation;
pub mod encoding;
pub mod harmonics;
pub mod legendre;
pub mod vmf;

pub use attenuation::{
    attenuation_approx, attenuation_closed_form, attenuation_exact, mean_resultant_length,
};
pub use encoding::{directional_encoding, ide, IdeVector};
pub use harmonics::{eval_sh, ShIndexSet, ShTerm, MAX_DEGREE};
pub use legendre::{eval_legendre, gauss_legendre};
pub use vmf::{mc_sh_expectation, sample_mean, sample_vmf, summarize, McEstimate};

use crate::vec3::{UnitVector3, Vec3};

/// Mirror of `wo` about `n`: `2 (wo·n) n - wo`.
pub fn reflect(wo: UnitVector3, n: UnitVector3) -> UnitVector3 {
    UnitVector3::new_unchecked(reflect_vec(wo.vec(), n.vec()))
}

pub(crate) fn reflect_vec(wo: Vec3, n: Vec3) -> Vec3 {
    n * (2.0 * wo.dot(n)) - wo
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: UnitVector3, b: Vec3) -> bool {
        (a.vec() - b).norm() < 1e-5
    }

    #[test]
    fn reflect_examples() {
        let z = UnitVector3::Z;
        assert!(close(reflect(z, z), Vec3::Z));
        let x = UnitVector3::new(1.0, 0.0, 0.0).unwrap();
        assert!(close(reflect(x, z), Vec3::new(-1.0, 0.0, 0.0)));
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let wo = UnitVector3::new(h, 0.0, h).unwrap();
        assert!(close(reflect(wo, z), Vec3::new(-h, 0.0, h)));
    }

    fn unit() -> impl Strategy<Value = UnitVector3> {
        (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64)
            .prop_filter_map("degenerate", |(x, y, z)| {
                let v = Vec3::new(x, y, z);
                (v.norm() > 1e-3).then(|| UnitVector3::normalize(v).unwrap())
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn reflection_invariants(wo in unit(), n in unit()) {
            let r = reflect(wo, n);
            prop_assert!((r.vec().norm() - 1.0).abs() < 1e-6);
            prop_assert!((n.dot(r) - n.dot(wo)).abs() < 1e-6);
            prop_assert!((reflect(r, n).vec() - wo.vec()).norm() < 1e-6);
        }
    }
}
