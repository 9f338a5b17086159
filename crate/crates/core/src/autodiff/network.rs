//! Dense layers, networks, and forward-mode tangents for input gradients.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::encoding::jacobian_tensor;
use super::tape::{Gradients, Tape, Var};
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Linear,
    Relu,
    Softplus,
    Sigmoid,
}

impl Activation {
    pub fn tag(self) -> u32 {
        match self {
            Activation::Linear => 0,
            Activation::Relu => 1,
            Activation::Softplus => 2,
            Activation::Sigmoid => 3,
        }
    }

    pub fn from_tag(tag: u32) -> Option<Self> {
        Some(match tag {
            0 => Activation::Linear,
            1 => Activation::Relu,
            2 => Activation::Softplus,
            3 => Activation::Sigmoid,
            _ => return None,
        })
    }

    pub fn apply<T: Real>(self, tape: &mut Tape<T>, z: Var) -> Var {
        match self {
            Activation::Linear => z,
            Activation::Relu => tape.relu(z),
            Activation::Softplus => tape.softplus(z),
            Activation::Sigmoid => tape.sigmoid(z),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer<T = f32> {
    /// `out x in`.
    pub weight: Tensor<T>,
    /// `1 x out`.
    pub bias: Tensor<T>,
    pub activation: Activation,
}

impl<T: Real> DenseLayer<T> {
    /// He-uniform weights for ReLU layers, Xavier-uniform otherwise; zero bias.
    pub fn init<R: Rng + ?Sized>(rng: &mut R, inputs: usize, outputs: usize, activation: Activation) -> Self {
        let bound = match activation {
            Activation::Relu => (6.0 / inputs as f64).sqrt(),
            _ => (6.0 / (inputs + outputs) as f64).sqrt(),
        };
        let weight = Tensor::from_fn(outputs, inputs, |_, _| T::of(rng.gen_range(-bound..bound)));
        Self {
            weight,
            bias: Tensor::zeros(1, outputs),
            activation,
        }
    }

    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Self {
            weight: Tensor::zeros(outputs, inputs),
            bias: Tensor::zeros(1, outputs),
            activation,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.rows()
    }

    pub fn cast<U: Real>(&self) -> DenseLayer<U> {
        DenseLayer {
            weight: self.weight.cast(),
            bias: self.bias.cast(),
            activation: self.activation,
        }
    }

    pub fn register(&self, tape: &mut Tape<T>, trainable: bool) -> LayerVars {
        let (weight, bias) = if trainable {
            (tape.param(self.weight.clone()), tape.param(self.bias.clone()))
        } else {
            (tape.constant(self.weight.clone()), tape.constant(self.bias.clone()))
        };
        LayerVars {
            weight,
            bias,
            activation: self.activation,
        }
    }
}

/// Tape handles of one registered layer.
#[derive(Clone, Copy, Debug)]
pub struct LayerVars {
    pub weight: Var,
    pub bias: Var,
    pub activation: Activation,
}

impl LayerVars {
    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, input: Var) -> Result<Var> {
        let z = tape.linear(input, self.weight, Some(self.bias))?;
        Ok(self.activation.apply(tape, z))
    }

    /// Pushes `input` together with `k` tangent rows per input row through the
    /// layer. Activation derivatives enter as tape values (or, for ReLU, a
    /// constant mask) so the tangent stays differentiable in the parameters.
    pub fn forward_with_tangents<T: Real>(
        &self,
        tape: &mut Tape<T>,
        input: Var,
        tangent: Var,
        k: usize,
    ) -> Result<(Var, Var)> {
        if tangent.rows() != input.rows() * k || tangent.cols() != input.cols() {
            return Err(Error::ShapeMismatch {
                op: "tangent",
                left: input.shape(),
                right: tangent.shape(),
            });
        }
        let z = tape.linear(input, self.weight, Some(self.bias))?;
        let dz = tape.linear(tangent, self.weight, None)?;
        let out = self.activation.apply(tape, z);
        let dout = match self.activation {
            Activation::Linear => dz,
            Activation::Relu => {
                let zv = tape.value(z);
                let mask = Tensor::from_fn(dz.rows(), dz.cols(), |r, c| {
                    if zv.get(r / k, c) > T::zero() {
                        T::one()
                    } else {
                        T::zero()
                    }
                });
                tape.mul_const(dz, mask)?
            }
            Activation::Softplus => {
                let s = tape.sigmoid(z);
                let s = tape.repeat_rows(s, k);
                tape.mul(dz, s)?
            }
            Activation::Sigmoid => {
                let one_minus = tape.scale(out, T::of(-1.0));
                let one_minus = tape.offset(one_minus, T::one());
                let d = tape.mul(out, one_minus)?;
                let d = tape.repeat_rows(d, k);
                tape.mul(dz, d)?
            }
        };
        Ok((out, dout))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseNetwork<T = f32> {
    pub layers: Vec<DenseLayer<T>>,
}

impl<T: Real> DenseNetwork<T> {
    /// `dims = [in, h1, ..., out]`; hidden layers use `hidden`, the last `output`.
    pub fn init<R: Rng + ?Sized>(
        rng: &mut R,
        dims: &[usize],
        hidden: Activation,
        output: Activation,
    ) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::InvalidArgument(format!("invalid layer sizes {dims:?}")));
        }
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i + 2 == dims.len() { output } else { hidden };
                DenseLayer::init(rng, w[0], w[1], act)
            })
            .collect();
        Ok(Self { layers })
    }

    /// Rejects layer lists whose dimensions do not chain.
    pub fn from_layers(layers: Vec<DenseLayer<T>>) -> Result<Self> {
        for w in layers.windows(2) {
            if w[0].outputs() != w[1].inputs() {
                return Err(Error::ShapeMismatch {
                    op: "network layers",
                    left: w[0].weight.shape(),
                    right: w[1].weight.shape(),
                });
            }
        }
        for l in &layers {
            if l.bias.shape() != (1, l.outputs()) {
                return Err(Error::ShapeMismatch {
                    op: "layer bias",
                    left: l.weight.shape(),
                    right: l.bias.shape(),
                });
            }
        }
        Ok(Self { layers })
    }

    pub fn inputs(&self) -> usize {
        self.layers.first().map_or(0, DenseLayer::inputs)
    }

    pub fn outputs(&self) -> usize {
        self.layers.last().map_or(0, DenseLayer::outputs)
    }

    pub fn cast<U: Real>(&self) -> DenseNetwork<U> {
        DenseNetwork {
            layers: self.layers.iter().map(DenseLayer::cast).collect(),
        }
    }

    pub fn register(&self, tape: &mut Tape<T>, trainable: bool) -> NetworkVars {
        NetworkVars {
            layers: self.layers.iter().map(|l| l.register(tape, trainable)).collect(),
        }
    }

    /// Forward pass without keeping a tape around.
    pub fn evaluate(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let vars = self.register(&mut tape, false);
        let x = tape.constant(input.clone());
        let y = vars.forward(&mut tape, x)?;
        Ok(tape.value(y).clone())
    }

    pub fn parameters(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    /// Same order as [`DenseNetwork::parameters`] and [`NetworkVars::vars`].
    pub fn parameters_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias])
    }
}

#[derive(Clone, Debug)]
pub struct NetworkVars {
    pub layers: Vec<LayerVars>,
}

impl NetworkVars {
    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, input: Var) -> Result<Var> {
        let mut h = input;
        for l in &self.layers {
            h = l.forward(tape, h)?;
        }
        Ok(h)
    }

    pub fn forward_with_tangents<T: Real>(
        &self,
        tape: &mut Tape<T>,
        input: Var,
        tangent: Var,
        k: usize,
    ) -> Result<(Var, Var)> {
        let (mut h, mut dh) = (input, tangent);
        for l in &self.layers {
            (h, dh) = l.forward_with_tangents(tape, h, dh, k)?;
        }
        Ok((h, dh))
    }

    pub fn vars(&self) -> impl Iterator<Item = Var> + '_ {
        self.layers.iter().flat_map(|l| [l.weight, l.bias])
    }

    pub fn gradients<T: Real>(&self, grads: &Gradients<T>) -> Vec<Tensor<T>> {
        self.vars().map(|v| grads.wrt(v)).collect()
    }
}

/// Density and its spatial gradient for a network mapping the positional
/// encoding of `points` (`n x 3`, a tape constant) to one output per point.
///
/// Returns `(tau: n x 1, grad: n x 3)`; both are ordinary tape values, so a loss
/// on `grad` backpropagates into the parameters.
pub fn spatial_gradient<T: Real>(
    tape: &mut Tape<T>,
    net: &NetworkVars,
    points: Var,
    pe_levels: usize,
) -> Result<(Var, Var)> {
    if points.cols() != 3 {
        return Err(Error::ShapeMismatch {
            op: "spatial_gradient",
            left: points.shape(),
            right: (points.rows(), 3),
        });
    }
    let n = points.rows();
    let enc = tape.pos_enc(points, pe_levels);
    let jac = jacobian_tensor(tape.value(points), pe_levels);
    let jac = tape.constant(jac);
    let (tau, dtau) = net.forward_with_tangents(tape, enc, jac, 3)?;
    if tau.cols() != 1 {
        return Err(Error::ShapeMismatch {
            op: "spatial_gradient output",
            left: tau.shape(),
            right: (n, 1),
        });
    }
    let grad = tape.reshape(dtau, n, 3)?;
    Ok((tau, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck::{check_gradients, max_rel_err};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_layer_passes_input() {
        let mut layer = DenseLayer::<f64>::zeros(3, 3, Activation::Linear);
        for i in 0..3 {
            layer.weight.set(i, i, 1.0);
        }
        let net = DenseNetwork::from_layers(vec![layer]).unwrap();
        let x = Tensor::from_f64(2, 3, &[1.0, -2.0, 3.0, 0.5, 0.0, 7.0]).unwrap();
        assert_eq!(net.evaluate(&x).unwrap().data(), x.data());
    }

    #[test]
    fn zero_weights_give_bias() {
        let mut layer = DenseLayer::<f64>::zeros(4, 2, Activation::Linear);
        layer.bias = Tensor::from_f64(1, 2, &[0.25, -1.5]).unwrap();
        let net = DenseNetwork::from_layers(vec![layer]).unwrap();
        let x = Tensor::from_fn(3, 4, |r, c| (r * 4 + c) as f64);
        let y = net.evaluate(&x).unwrap();
        for r in 0..3 {
            assert_eq!(y.row(r), &[0.25, -1.5]);
        }
    }

    #[test]
    fn width_mismatch_rejected() {
        let net = DenseNetwork::<f64>::init(&mut ChaCha8Rng::seed_from_u64(0), &[3, 4, 1], Activation::Relu, Activation::Linear).unwrap();
        assert!(net.evaluate(&Tensor::zeros(1, 5)).is_err());
        let bad = vec![DenseLayer::<f64>::zeros(3, 4, Activation::Relu), DenseLayer::zeros(5, 1, Activation::Linear)];
        assert!(DenseNetwork::from_layers(bad).is_err());
    }

    #[test]
    fn matches_hand_rolled_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let net = DenseNetwork::<f64>::init(&mut rng, &[3, 5, 2], Activation::Relu, Activation::Sigmoid).unwrap();
        let x = [0.3, -0.8, 1.1];
        let (l0, l1) = (&net.layers[0], &net.layers[1]);
        let h: Vec<f64> = (0..5)
            .map(|o| {
                let z = (0..3).map(|i| l0.weight.get(o, i) * x[i]).sum::<f64>() + l0.bias.get(0, o);
                z.max(0.0)
            })
            .collect();
        let y: Vec<f64> = (0..2)
            .map(|o| {
                let z = (0..5).map(|i| l1.weight.get(o, i) * h[i]).sum::<f64>() + l1.bias.get(0, o);
                1.0 / (1.0 + (-z).exp())
            })
            .collect();
        let got = net.evaluate(&Tensor::from_f64(1, 3, &x).unwrap()).unwrap();
        for (a, b) in got.data().iter().zip(&y) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn linear_density_gradient_is_exact() {
        let mut layer = DenseLayer::<f64>::zeros(3, 1, Activation::Linear);
        layer.weight = Tensor::from_f64(1, 3, &[0.5, -2.0, 3.0]).unwrap();
        let net = DenseNetwork::from_layers(vec![layer]).unwrap();
        let mut tape = Tape::new();
        let vars = net.register(&mut tape, true);
        let pts = tape.constant(Tensor::from_f64(2, 3, &[0.1, 0.2, 0.3, -1.0, 4.0, 2.0]).unwrap());
        let (_, g) = spatial_gradient(&mut tape, &vars, pts, 0).unwrap();
        for r in 0..2 {
            assert_eq!(tape.value(g).row(r), &[0.5, -2.0, 3.0]);
        }
    }

    fn density_net(seed: u64) -> DenseNetwork<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DenseNetwork::init(&mut rng, &[3 + 6 * 2, 8, 8, 1], Activation::Relu, Activation::Softplus).unwrap()
    }

    #[test]
    fn spatial_gradient_matches_differences() {
        let net = density_net(3);
        let pts = [0.21, -0.43, 0.37, -0.6, 0.15, 0.8];
        let mut tape = Tape::new();
        let vars = net.register(&mut tape, false);
        let p = tape.constant(Tensor::from_f64(2, 3, &pts).unwrap());
        let (_, g) = spatial_gradient(&mut tape, &vars, p, 2).unwrap();
        let tau = |q: &[f64]| {
            let enc: Vec<f64> = crate::autodiff::positional_encoding(crate::Vec3::new(q[0], q[1], q[2]), 2);
            net.evaluate(&Tensor::from_f64(1, enc.len(), &enc).unwrap()).unwrap().item()
        };
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for r in 0..2 {
            for j in 0..3 {
                let mut a = pts[3 * r..3 * r + 3].to_vec();
                let mut b = a.clone();
                a[j] += h;
                b[j] -= h;
                let fd = (tau(&a) - tau(&b)) / (2.0 * h);
                worst = worst.max(max_rel_err(&[tape.value(g).get(r, j)], &[fd]));
            }
        }
        assert!(worst < 1e-4, "{worst}");
    }

    #[test]
    fn parameter_gradients_match_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net = DenseNetwork::<f64>::init(&mut rng, &[4, 6, 3], Activation::Softplus, Activation::Sigmoid).unwrap();
        let x = Tensor::from_fn(5, 4, |r, c| ((r * 7 + c * 3) % 11) as f64 / 5.0 - 1.0);
        let params: Vec<Tensor<f64>> = net.parameters().cloned().collect();
        let report = check_gradients(&params, 1e-5, |tape, vars| {
            let xv = tape.constant(x.clone());
            let layers = vars
                .chunks(2)
                .zip(&net.layers)
                .map(|(wb, l)| LayerVars { weight: wb[0], bias: wb[1], activation: l.activation })
                .collect();
            let y = NetworkVars { layers }.forward(tape, xv)?;
            let sq = tape.mul(y, y)?;
            Ok(tape.sum(sq))
        })
        .unwrap();
        assert!(report.max_rel_err < 1e-4, "{report:?}");
    }

    #[test]
    fn second_order_path_matches_differences() {
        let net = density_net(5);
        let pts = Tensor::from_f64(3, 3, &[0.2, 0.1, -0.3, 0.5, -0.45, 0.05, -0.25, 0.33, 0.61]).unwrap();
        let params: Vec<Tensor<f64>> = net.parameters().cloned().collect();
        let report = check_gradients(&params, 1e-5, |tape, vars| {
            let p = tape.constant(pts.clone());
            let layers = vars
                .chunks(2)
                .zip(&net.layers)
                .map(|(wb, l)| LayerVars { weight: wb[0], bias: wb[1], activation: l.activation })
                .collect();
            let (_, g) = spatial_gradient(tape, &NetworkVars { layers }, p, 2)?;
            let sq = tape.mul(g, g)?;
            Ok(tape.sum(sq))
        })
        .unwrap();
        assert!(report.max_rel_err < 1e-3, "{report:?}");
    }

    #[test]
    fn gradients_are_deterministic() {
        let net = density_net(9);
        let run = || {
            let mut tape = Tape::new();
            let vars = net.register(&mut tape, true);
            let p = tape.constant(Tensor::from_fn(4, 3, |r, c| (r as f64 - 1.5) * 0.3 + c as f64 * 0.1));
            let (tau, g) = spatial_gradient(&mut tape, &vars, p, 2).unwrap();
            let s = tape.mul(g, g).unwrap();
            let s = tape.sum(s);
            let t = tape.sum(tau);
            let l = tape.add(s, t).unwrap();
            let grads = tape.backward(l).unwrap();
            vars.gradients(&grads)
        };
        let (a, b) = (run(), run());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.data(), y.data());
            assert!(x.all_finite());
        }
    }
}
