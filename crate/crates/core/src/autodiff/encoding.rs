//! Sinusoidal positional encoding of 3-D points.
//!
//! Layout: `[x, y, z, sin(2^0 x), sin(2^0 y), sin(2^0 z), cos(2^0 x), ..., cos(2^{L-1} z)]`,
//! matching [`super::Tape::pos_enc`].

use super::tensor::{Real, Tensor};
use crate::vec3::Vec3;

pub fn encoded_len(levels: usize) -> usize {
    3 + 6 * levels
}

pub fn positional_encoding(x: Vec3, levels: usize) -> Vec<f64> {
    let p = x.to_array();
    let mut out = Vec::with_capacity(encoded_len(levels));
    out.extend_from_slice(&p);
    for k in 0..levels {
        let f = (1u64 << k) as f64;
        out.extend(p.iter().map(|v| (f * v).sin()));
        out.extend(p.iter().map(|v| (f * v).cos()));
    }
    out
}

/// Partial derivatives of the encoding with respect to each coordinate.
pub fn positional_encoding_jacobian(x: Vec3, levels: usize) -> [Vec<f64>; 3] {
    let p = x.to_array();
    let d = encoded_len(levels);
    std::array::from_fn(|j| {
        let mut col = vec![0.0; d];
        col[j] = 1.0;
        for k in 0..levels {
            let f = (1u64 << k) as f64;
            let base = 3 + 6 * k;
            col[base + j] = f * (f * p[j]).cos();
            col[base + 3 + j] = -f * (f * p[j]).sin();
        }
        col
    })
}

/// Jacobians for a batch of points (`n x 3`), stacked as `3n x D` with the three
/// rows of point `i` at `3i..3i+3`.
pub fn jacobian_tensor<T: Real>(points: &Tensor<T>, levels: usize) -> Tensor<T> {
    let d = encoded_len(levels);
    let mut out = Tensor::zeros(points.rows() * 3, d);
    for i in 0..points.rows() {
        let r = points.row(i);
        let jac = positional_encoding_jacobian(Vec3::new(r[0].f64(), r[1].f64(), r[2].f64()), levels);
        for (j, col) in jac.iter().enumerate() {
            for (o, &v) in out.row_mut(3 * i + j).iter_mut().zip(col) {
                *o = T::of(v);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;

    #[test]
    fn zero_levels_is_identity() {
        assert_eq!(positional_encoding(Vec3::new(1.0, 2.0, 3.0), 0), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn origin_sines_and_cosines() {
        let e = positional_encoding(Vec3::ZERO, 4);
        assert_eq!(e.len(), encoded_len(4));
        for k in 0..4 {
            assert_eq!(&e[3 + 6 * k..6 + 6 * k], &[0.0; 3]);
            assert_eq!(&e[6 + 6 * k..9 + 6 * k], &[1.0; 3]);
        }
    }

    #[test]
    fn tape_layout_matches() {
        let x = Vec3::new(0.3, -1.2, 2.5);
        let mut tape = Tape::<f64>::new();
        let v = tape.constant(Tensor::from_f64(1, 3, &x.to_array()).unwrap());
        let e = tape.pos_enc(v, 5);
        let want = positional_encoding(x, 5);
        for (a, b) in tape.value(e).data().iter().zip(&want) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn jacobian_matches_differences() {
        let x = Vec3::new(0.4, 0.1, -0.7);
        let jac = positional_encoding_jacobian(x, 6);
        let h = 1e-6;
        for (j, col) in jac.iter().enumerate() {
            let mut e = [0.0; 3];
            e[j] = h;
            let d = Vec3::from_array(e);
            let (p, m) = (positional_encoding(x + d, 6), positional_encoding(x - d, 6));
            for (k, &c) in col.iter().enumerate() {
                assert!(((p[k] - m[k]) / (2.0 * h) - c).abs() < 1e-6);
            }
        }
    }
}
