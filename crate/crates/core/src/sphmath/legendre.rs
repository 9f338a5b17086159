//! Legendre polynomials and Gauss–Legendre quadrature.

use std::sync::OnceLock;

/// `P_ell(u)` by the three-term recurrence `(l+1) P_{l+1} = (2l+1) u P_l - l P_{l-1}`.
pub fn eval_legendre(ell: usize, u: f64) -> f64 {
    let mut prev = 1.0;
    if ell == 0 {
        return prev;
    }
    let mut cur = u;
    for l in 1..ell {
        let lf = l as f64;
        let next = ((2.0 * lf + 1.0) * u * cur - lf * prev) / (lf + 1.0);
        prev = cur;
        cur = next;
    }
    cur
}

/// Monomial coefficients of `P_ell`, lowest degree first.
pub fn legendre_coefficients(ell: usize) -> Vec<f64> {
    let mut prev = vec![1.0];
    if ell == 0 {
        return prev;
    }
    let mut cur = vec![0.0, 1.0];
    for l in 1..ell {
        let lf = l as f64;
        let mut next = vec![0.0; l + 2];
        for (k, c) in cur.iter().enumerate() {
            next[k + 1] += (2.0 * lf + 1.0) * c;
        }
        for (k, c) in prev.iter().enumerate() {
            next[k] -= lf * c;
        }
        for c in &mut next {
            *c /= lf + 1.0;
        }
        prev = cur;
        cur = next;
    }
    cur
}

/// Coefficients of the `order`-th derivative of the polynomial `coeffs`.
pub fn differentiate(coeffs: &[f64], order: usize) -> Vec<f64> {
    let mut out = coeffs.to_vec();
    for _ in 0..order {
        if out.len() <= 1 {
            return vec![0.0];
        }
        out = out
            .iter()
            .enumerate()
            .skip(1)
            .map(|(k, c)| c * k as f64)
            .collect();
    }
    out
}

/// Horner evaluation, coefficients lowest degree first.
pub fn eval_poly(coeffs: &[f64], z: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * z + c)
}

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 1..n {
                let kf = k as f64;
                let p2 = ((2.0 * kf + 1.0) * x * p1 - kf * p0) / (kf + 1.0);
                p0 = p1;
                p1 = p2;
            }
            dp = nf * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = x;
        nodes[n - 1 - i] = -x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

pub(crate) fn gauss_legendre_128() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(128))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn low_orders() {
        assert_eq!(eval_legendre(0, 0.3), 1.0);
        assert_eq!(eval_legendre(1, 0.3), 0.3);
        assert!((eval_legendre(2, 0.5) + 0.125).abs() < 1e-15);
    }

    #[test]
    fn coefficients_match_recurrence() {
        for ell in 0..12 {
            let c = legendre_coefficients(ell);
            for &u in &[-1.0, -0.7, 0.0, 0.2, 0.9, 1.0] {
                assert!((eval_poly(&c, u) - eval_legendre(ell, u)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn endpoint_values() {
        for ell in 0..20 {
            assert!((eval_legendre(ell, 1.0) - 1.0).abs() < 1e-12);
            let sign = if ell % 2 == 0 { 1.0 } else { -1.0 };
            assert!((eval_legendre(ell, -1.0) - sign).abs() < 1e-12);
        }
    }

    #[test]
    fn quadrature_integrates_polynomials() {
        let (x, w) = gauss_legendre(16);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
        // exact up to degree 31
        let integral: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(30)).sum();
        assert!((integral - 2.0 / 31.0).abs() < 1e-14);
        let (x, w) = gauss_legendre_128();
        assert_eq!(x.len(), 128);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-13);
        let odd: f64 = x.iter().zip(w).map(|(x, w)| w * x.powi(7)).sum();
        assert!(odd.abs() < 1e-15);
    }

    #[test]
    fn derivative_of_p2() {
        // P2 = (3z^2 - 1)/2, P2' = 3z
        let d = differentiate(&legendre_coefficients(2), 1);
        assert!((eval_poly(&d, 0.4) - 1.2).abs() < 1e-15);
        assert_eq!(differentiate(&[1.0], 3), vec![0.0]);
    }
}
