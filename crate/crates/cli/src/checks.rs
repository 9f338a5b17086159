//! Numerical self-checks: vMF expectations against Monte Carlo, attenuation
//! identities, gradient checks on tiny fields, and quadrature invariants.
//!
//! Each check returns its measured statistics; thresholds are chosen by the
//! caller (the `verify` command and the acceptance tests pin their own).

use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reflfield::autodiff::gradcheck::check_gradients;
use reflfield::autodiff::{Tape, Tensor, Var};
use reflfield::field::{EditOverrides, FieldConfig, FieldParams, Mode};
use reflfield::losses::{batch_losses, LossTerms, LossWeights};
use reflfield::renderer::{quadrature_weights, render_batch, Ray, RenderSettings, SampleSet};
use reflfield::sphmath::{
    attenuation_approx, attenuation_exact, sample_vmf, summarize, ShIndexSet,
};
use reflfield::{Result, UnitVector3, Vec3};

use crate::CliError;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

pub fn format_table(results: &[CheckResult]) -> String {
    let width = results.iter().map(|r| r.name.len()).max().unwrap_or(0);
    let mut s = String::new();
    for r in results {
        let status = if r.passed { "PASS" } else { "FAIL" };
        let _ = writeln!(s, "{status}  {:width$}  {}", r.name, r.detail);
    }
    s
}

#[derive(Clone, Debug, PartialEq)]
pub struct VmfReport {
    pub comparisons: usize,
    /// Components whose Monte-Carlo estimate is more than `z` standard errors
    /// from the exact expectation.
    pub exceedances: usize,
    pub max_z: f64,
    pub seconds: f64,
}

/// For `draws` random means (uniform) and concentrations (log-uniform in
/// `kappa_range`), compares every component of the exactly attenuated
/// encoding with the Monte-Carlo mean of the raw harmonics over `samples`
/// vMF draws.
pub fn vmf_expectation(
    degrees: &ShIndexSet,
    draws: usize,
    samples: usize,
    kappa_range: (f64, f64),
    z: f64,
    seed: u64,
) -> Result<VmfReport> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let terms = degrees.terms();
    let (mut comparisons, mut exceedances, mut max_z) = (0, 0, 0.0f64);
    for _ in 0..draws {
        let mean = sample_vmf(&mut rng, UnitVector3::Z, 0.0, 1)?[0];
        let kappa = (rng.gen_range(kappa_range.0.ln()..=kappa_range.1.ln())).exp();
        let dirs = sample_vmf(&mut rng, mean, kappa, samples)?;
        for term in &terms {
            let a = attenuation_exact(term.ell, kappa)?;
            let (re, im) = term.eval(mean.vec());
            let est = summarize(dirs.iter().map(|d| term.eval(d.vec())));
            let mut parts = vec![(a * re, est.re, est.se_re)];
            if term.m > 0 {
                parts.push((a * im, est.im, est.se_im));
            }
            for (exact, mc, se) in parts {
                let diff = (exact - mc).abs();
                let zi = if se > 0.0 {
                    diff / se
                } else if diff == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                };
                comparisons += 1;
                max_z = max_z.max(zi);
                if zi > z {
                    exceedances += 1;
                }
            }
        }
    }
    Ok(VmfReport {
        comparisons,
        exceedances,
        max_z,
        seconds: start.elapsed().as_secs_f64(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecurrenceReport {
    /// Max `|A_l - (A_{l-2} - (2l-1)/κ A_{l-1})|` over `2 ≤ l ≤ max_ell`.
    pub max_residual: f64,
    pub a0_error: f64,
    /// Max `|A_1 - (coth κ - 1/κ)|`.
    pub a1_error: f64,
}

pub fn attenuation_recurrence(max_ell: usize, kappas: &[f64]) -> Result<RecurrenceReport> {
    let mut r = RecurrenceReport {
        max_residual: 0.0,
        a0_error: 0.0,
        a1_error: 0.0,
    };
    for &k in kappas {
        let a: Vec<f64> = (0..=max_ell).map(|l| attenuation_exact(l, k)).collect::<Result<_>>()?;
        r.a0_error = r.a0_error.max((a[0] - 1.0).abs());
        r.a1_error = r.a1_error.max((a[1] - (1.0 / k.tanh() - 1.0 / k)).abs());
        for l in 2..=max_ell {
            let rhs = a[l - 2] - (2 * l - 1) as f64 / k * a[l - 1];
            r.max_residual = r.max_residual.max((a[l] - rhs).abs());
        }
    }
    Ok(r)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ApproximationReport {
    /// `|A_1(10) - e^{-0.1}|`.
    pub a1_at_10: f64,
    /// Max over `1 ≤ l ≤ max_ell` and the given κ of `err(2κ) / err(κ)`.
    pub worst_ratio: f64,
}

pub fn approximation_quality(max_ell: usize, kappas: &[f64]) -> Result<ApproximationReport> {
    let err = |l: usize, k: f64| -> Result<f64> { Ok((attenuation_exact(l, k)? - attenuation_approx(l, k)?).abs()) };
    let mut worst = 0.0f64;
    for l in 1..=max_ell {
        for &k in kappas {
            worst = worst.max(err(l, 2.0 * k)? / err(l, k)?);
        }
    }
    Ok(ApproximationReport {
        a1_at_10: (attenuation_exact(1, 10.0)? - (-0.1f64).exp()).abs(),
        worst_ratio: worst,
    })
}

fn tiny_field() -> FieldConfig {
    FieldConfig {
        spatial_depth: 2,
        spatial_width: 8,
        directional_depth: 1,
        directional_width: 8,
        pe_levels: 2,
        sh_degrees: ShIndexSet::new(vec![1, 2]).expect("valid degrees"),
        bottleneck: 3,
        bottleneck_noise: 0.0,
        ..FieldConfig::default()
    }
}

fn tiny_rays() -> Vec<Ray> {
    [(0.1, 0.05), (-0.2, 0.1), (0.05, -0.15)]
        .iter()
        .map(|&(x, y)| {
            let dir = UnitVector3::normalize(Vec3::new(x, y, -1.0)).expect("nonzero");
            Ray::new(Vec3::new(0.0, 0.0, 1.5), dir, 0.5, 2.5).expect("valid ray")
        })
        .collect()
}

/// Max relative finite-difference error (64-bit) of the data loss, R_p
/// (including its second-order density-gradient path), R_o, and composited
/// color with respect to densities, on a randomly initialized tiny field.
pub fn gradient_suite(seed: u64) -> Result<Vec<(&'static str, f64)>> {
    let cfg = tiny_field();
    let params = FieldParams::<f64>::init(&cfg, &mut ChaCha8Rng::seed_from_u64(seed))?;
    let rays = tiny_rays();
    let settings = RenderSettings {
        samples: 6,
        near: 0.5,
        far: 2.5,
        ..RenderSettings::default()
    };
    let gt = Tensor::from_fn(rays.len(), 3, |r, c| 0.2 + 0.15 * (r + c) as f64);
    let inputs: Vec<Tensor<f64>> = params.parameters().into_iter().cloned().collect();
    let loss_check = |pick: fn(&LossTerms) -> Option<Var>| {
        check_gradients(&inputs, 1e-5, |tape: &mut Tape<f64>, vars: &[Var]| {
            let fv = params.vars_from(vars)?;
            let out = render_batch(tape, &fv, &cfg, &EditOverrides::default(), &rays, &settings, Mode::Eval, true)?;
            let terms = batch_losses(tape, &out, &gt, &LossWeights::default(), rays.len())?;
            Ok(pick(&terms).expect("term present"))
        })
        .map(|r| r.max_rel_err)
    };
    let data = loss_check(|t| Some(t.data))?;
    let rp = loss_check(|t| t.rp)?;
    let ro = loss_check(|t| Some(t.ro))?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let (r, s) = (3, 5);
    let tau = Tensor::from_fn(r, s, |_, _| rng.gen_range(0.05..2.0));
    let colors = Tensor::from_fn(r * s, 3, |_, _| rng.gen_range(0.0..1.0));
    let deltas = Tensor::from_fn(r, s, |_, _| rng.gen_range(0.05..0.5));
    let composite = check_gradients(&[tau], 1e-6, |tape, v| {
        let w = tape.volume_weights(v[0], deltas.clone())?;
        let pw = tape.reshape(w, r * s, 1)?;
        let c = tape.constant(colors.clone());
        let weighted = tape.mul_col(c, pw)?;
        let rgb = tape.sum_groups(weighted, s)?;
        let sq = tape.mul(rgb, rgb)?;
        Ok(tape.sum(sq))
    })?
    .max_rel_err;
    Ok(vec![("data", data), ("rp", rp), ("ro", ro), ("composite_wrt_density", composite)])
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuadratureReport {
    pub cases: usize,
    /// Cases with a weight outside `[0, 1]` or a weight sum above one.
    pub violations: usize,
    /// Max error of the hand case τ = (1, 2), δ = (1, 1).
    pub hand_error: f64,
}

pub fn quadrature_invariants(cases: usize, seed: u64) -> Result<QuadratureReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = 0;
    for _ in 0..cases {
        let n = rng.gen_range(1..=64);
        let mut t: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..4.0)).collect();
        t.sort_by(f64::total_cmp);
        let set = SampleSet::from_sorted(t, 4.0 + rng.gen_range(0.0..1.0));
        // Mix of tiny, moderate and very large densities.
        let taus: Vec<f64> = (0..n).map(|_| 10f64.powf(rng.gen_range(-4.0..3.0))).collect();
        let w = quadrature_weights(&taus, &set)?;
        let sum: f64 = w.iter().sum();
        if w.iter().any(|&x| !(0.0..=1.0).contains(&x)) || sum > 1.0 + 1e-12 {
            violations += 1;
        }
    }
    let hand = quadrature_weights(&[1.0, 2.0], &SampleSet::from_sorted(vec![0.0, 1.0], 2.0))?;
    let e1 = (-1.0f64).exp();
    let want = [1.0 - e1, e1 * (1.0 - (-2.0f64).exp())];
    let hand_error = hand.iter().zip(want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Ok(QuadratureReport {
        cases,
        violations,
        hand_error,
    })
}

/// The suite run by `verify`. The Monte-Carlo check is smaller than the
/// acceptance version and uses a 4.5σ threshold, so that a correct build
/// fails it with probability well under 1%.
pub fn verify_suite() -> std::result::Result<Vec<CheckResult>, CliError> {
    let mut out = Vec::new();
    let vmf = vmf_expectation(&ShIndexSet::default(), 20, 20_000, (0.5, 500.0), 4.5, 1)?;
    out.push(CheckResult {
        name: "vmf_expectation".into(),
        passed: vmf.exceedances == 0,
        detail: format!(
            "{} comparisons, {} beyond 4.5 SE, max z {:.2}",
            vmf.comparisons, vmf.exceedances, vmf.max_z
        ),
    });
    let rec = attenuation_recurrence(8, &[0.1, 1.0, 10.0, 100.0])?;
    out.push(CheckResult {
        name: "attenuation_recurrence".into(),
        passed: rec.max_residual < 1e-8 && rec.a0_error < 1e-10 && rec.a1_error < 1e-10,
        detail: format!(
            "residual {:.2e}, A0 err {:.2e}, A1 err {:.2e}",
            rec.max_residual, rec.a0_error, rec.a1_error
        ),
    });
    let approx = approximation_quality(4, &[50.0, 100.0, 200.0])?;
    out.push(CheckResult {
        name: "attenuation_approximation".into(),
        passed: approx.a1_at_10 < 0.006 && approx.worst_ratio <= 0.35,
        detail: format!("|A1(10)-e^-0.1| {:.4}, worst err ratio {:.3}", approx.a1_at_10, approx.worst_ratio),
    });
    for (name, err) in gradient_suite(7)? {
        out.push(CheckResult {
            name: format!("gradcheck_{name}"),
            passed: err < 1e-3,
            detail: format!("max rel err {err:.2e}"),
        });
    }
    let quad = quadrature_invariants(10_000, 3)?;
    out.push(CheckResult {
        name: "quadrature_invariants".into(),
        passed: quad.violations == 0 && quad.hand_error < 1e-6,
        detail: format!(
            "{} cases, {} violations, hand case err {:.1e}",
            quad.cases, quad.violations, quad.hand_error
        ),
    });
    Ok(out)
}
