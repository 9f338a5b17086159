//! Central finite-difference checks of tape gradients (64-bit).

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;

/// Magnitude below which errors are measured absolutely rather than relatively.
/// Finite differences with `h = 1e-5` carry roughly `1e-10` of noise, so a pure
/// relative measure is meaningless for gradients this close to zero.
pub const REL_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// `(input index, flat entry)` of the worst entry.
    pub worst: (usize, usize),
    pub checked: usize,
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| rel_err(a, n))
        .fold(0.0, f64::max)
}

/// Compares the reverse-mode gradient of the scalar built by `f` against central
/// differences with step `h`, for every entry of every input.
pub fn check_gradients<F>(inputs: &[Tensor<f64>], h: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|v| tape.param(v.clone())).collect();
        let loss = f(&mut tape, &vars)?;
        Ok(tape.value(loss).item())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|v| tape.param(v.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: (0, 0),
        checked: 0,
    };
    let mut values = inputs.to_vec();
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads.wrt(*v);
        for k in 0..values[i].len() {
            let orig = values[i].data()[k];
            values[i].data_mut()[k] = orig + h;
            let up = eval(&values)?;
            values[i].data_mut()[k] = orig - h;
            let down = eval(&values)?;
            values[i].data_mut()[k] = orig;
            let err = rel_err(analytic.data()[k], (up - down) / (2.0 * h));
            if err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst = (i, k);
            }
            report.checked += 1;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::sphmath::ShIndexSet;

    fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor<f64> {
        Tensor::from_fn(rows, cols, |_, _| rng.gen_range(lo..hi))
    }

    fn assert_ok(name: &str, inputs: &[Tensor<f64>], f: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var>) {
        let r = check_gradients(inputs, 1e-5, f).unwrap();
        assert!(r.max_rel_err < 1e-4, "{name}: {r:?}");
        assert!(r.checked > 0);
    }

    /// Reduces any tensor to a scalar with non-uniform weights so that every
    /// output entry's adjoint differs.
    fn weigh(tape: &mut Tape<f64>, v: Var) -> Result<Var> {
        let w = Tensor::from_fn(v.rows(), v.cols(), |r, c| 0.3 + 0.17 * r as f64 - 0.11 * c as f64);
        let y = tape.mul_const(v, w)?;
        Ok(tape.sum(y))
    }

    #[test]
    fn elementwise_ops() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random(&mut rng, 3, 4, -2.0, 2.0);
        let b = random(&mut rng, 3, 4, -2.0, 2.0);
        let pos = random(&mut rng, 3, 4, 0.2, 2.0);
        let ab = [a.clone(), b.clone()];
        assert_ok("add", &ab, |t, v| { let y = t.add(v[0], v[1])?; weigh(t, y) });
        assert_ok("sub", &ab, |t, v| { let y = t.sub(v[0], v[1])?; weigh(t, y) });
        assert_ok("mul", &ab, |t, v| { let y = t.mul(v[0], v[1])?; weigh(t, y) });
        assert_ok("scale", std::slice::from_ref(&a), |t, v| { let y = t.scale(v[0], -1.7); weigh(t, y) });
        assert_ok("offset", std::slice::from_ref(&a), |t, v| { let y = t.offset(v[0], 0.4); weigh(t, y) });
        assert_ok("relu", std::slice::from_ref(&a), |t, v| { let y = t.relu(v[0]); weigh(t, y) });
        assert_ok("softplus", std::slice::from_ref(&a), |t, v| { let y = t.softplus(v[0]); weigh(t, y) });
        assert_ok("sigmoid", std::slice::from_ref(&a), |t, v| { let y = t.sigmoid(v[0]); weigh(t, y) });
        assert_ok("exp", std::slice::from_ref(&a), |t, v| { let y = t.exp(v[0]); weigh(t, y) });
        assert_ok("recip", &[pos], |t, v| { let y = t.recip_clamped(v[0], 1e6); weigh(t, y) });
        let m = random(&mut rng, 3, 4, -1.0, 1.0);
        assert_ok("mul_const", std::slice::from_ref(&a), |t, v| { let y = t.mul_const(v[0], m.clone())?; weigh(t, y) });
        let s = random(&mut rng, 3, 1, -1.0, 1.0);
        assert_ok("mul_col", &[a, s], |t, v| { let y = t.mul_col(v[0], v[1])?; weigh(t, y) });
    }

    #[test]
    fn structural_ops() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random(&mut rng, 4, 3, -1.0, 1.0);
        let b = random(&mut rng, 4, 2, -1.0, 1.0);
        let w = random(&mut rng, 5, 3, -1.0, 1.0);
        let bias = random(&mut rng, 1, 5, -1.0, 1.0);
        assert_ok("linear", &[a.clone(), w, bias], |t, v| {
            let y = t.linear(v[0], v[1], Some(v[2]))?;
            weigh(t, y)
        });
        assert_ok("concat", &[a.clone(), b], |t, v| { let y = t.concat(&[v[0], v[1], v[0]])?; weigh(t, y) });
        assert_ok("slice", std::slice::from_ref(&a), |t, v| { let y = t.slice_cols(v[0], 1, 2)?; weigh(t, y) });
        assert_ok("reshape", std::slice::from_ref(&a), |t, v| { let y = t.reshape(v[0], 2, 6)?; weigh(t, y) });
        assert_ok("row_sum", std::slice::from_ref(&a), |t, v| { let y = t.row_sum(v[0]); weigh(t, y) });
        let c = random(&mut rng, 4, 3, -1.0, 1.0);
        assert_ok("row_dot", &[a.clone(), c], |t, v| { let y = t.row_dot(v[0], v[1])?; weigh(t, y) });
        assert_ok("normalize", std::slice::from_ref(&a), |t, v| { let y = t.normalize(v[0]); weigh(t, y) });
        assert_ok("sum_groups", std::slice::from_ref(&a), |t, v| { let y = t.sum_groups(v[0], 2)?; weigh(t, y) });
        assert_ok("repeat_rows", std::slice::from_ref(&a), |t, v| { let y = t.repeat_rows(v[0], 3); weigh(t, y) });
        assert_ok("pos_enc", &[a], |t, v| { let y = t.pos_enc(v[0], 3); weigh(t, y) });
    }

    #[test]
    fn rendering_ops() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let tau = random(&mut rng, 3, 6, 0.0, 3.0);
        let deltas = random(&mut rng, 3, 6, 0.05, 0.5);
        assert_ok("volume_weights", &[tau], |t, v| {
            let y = t.volume_weights(v[0], deltas.clone())?;
            weigh(t, y)
        });
        // Stay away from the clip boundaries and the sRGB knee.
        let lin = random(&mut rng, 3, 3, 0.01, 0.95);
        assert_ok("tone_map", &[lin], |t, v| { let y = t.tone_map(v[0]); weigh(t, y) });
    }

    #[test]
    fn ide_op() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let terms: Arc<[_]> = ShIndexSet::default().terms().into();
        let dir = Tensor::from_fn(3, 3, |_, _| rng.gen_range(-1.0..1.0));
        let kappa = random(&mut rng, 3, 1, 0.5, 20.0);
        assert_ok("ide", &[dir.clone(), kappa], |t, v| {
            let y = t.ide(v[0], Some(v[1]), &terms)?;
            weigh(t, y)
        });
        assert_ok("ide_plain", &[dir], |t, v| { let y = t.ide(v[0], None, &terms)?; weigh(t, y) });
    }

    #[test]
    fn floor_only_affects_tiny_values() {
        assert_eq!(rel_err(2.0, 1.0), 0.5);
        assert!((rel_err(1e-9, 0.0) - 1e-6).abs() < 1e-18);
    }
}
