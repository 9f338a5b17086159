//! Reverse-mode tape over dense row-major matrices.
//!
//! Every operation appends a node holding its value and the handles of its
//! inputs; [`Tape::backward`] walks the nodes in reverse and accumulates
//! adjoints. Nodes that do not depend on any parameter are skipped during the
//! reverse sweep. Higher-order derivatives are obtained by building derivative
//! expressions out of ordinary tape operations (see [`super::network`]), so a
//! single reverse sweep suffices.

use std::sync::Arc;

use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};
use crate::sphmath::attenuation::attenuation_approx_unchecked;
use crate::sphmath::ShTerm;
use crate::vec3::Vec3;

/// Guard added to squared norms before normalizing.
pub const NORMALIZE_EPS: f64 = 1e-20;

/// Handle to a tape node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var {
    id: usize,
    rows: usize,
    cols: usize,
}

impl Var {
    pub fn id(self) -> usize {
        self.id
    }

    pub fn rows(self) -> usize {
        self.rows
    }

    pub fn cols(self) -> usize {
        self.cols
    }

    pub fn shape(self) -> (usize, usize) {
        (self.rows, self.cols)
    }
}

enum Op<T> {
    Leaf,
    Linear { x: Var, w: Var, b: Option<Var> },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulCol(Var, Var),
    MulConst(Var, Tensor<T>),
    Scale(Var, T),
    Offset(Var),
    Relu(Var),
    Softplus(Var),
    Sigmoid(Var),
    Exp(Var),
    RecipClamped(Var, T),
    Concat(Vec<Var>),
    SliceCols(Var, usize),
    Reshape(Var),
    RowSum(Var),
    RowDot(Var, Var),
    Normalize(Var),
    Sum(Var),
    SumGroups(Var, usize),
    RepeatRows(Var, usize),
    VolumeWeights(Var, Tensor<T>),
    ToneMap(Var),
    Ide {
        dir: Var,
        kappa: Option<Var>,
        terms: Arc<[ShTerm]>,
    },
    PosEnc(Var, usize),
    StopGrad,
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Adjoints produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    /// `None` when the loss does not depend on `v`.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.id).and_then(Option::as_ref)
    }

    /// Gradient of `v`, zeros when it does not influence the loss.
    pub fn wrt(&self, v: Var) -> Tensor<T> {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(v.rows, v.cols))
    }
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn same_shape(op: &'static str, a: Var, b: Var) -> Result<()> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        Err(Error::ShapeMismatch {
            op,
            left: a.shape(),
            right: b.shape(),
        })
    }
}

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn softplus<T: Real>(x: T) -> T {
    (-x.abs()).exp().ln_1p() + x.max(T::zero())
}

/// Linear-to-sRGB transfer followed by clipping to `[0, 1]`.
pub fn srgb_tonemap(x: f64) -> f64 {
    let y = if x <= 0.003_130_8 {
        12.92 * x
    } else {
        1.055 * x.powf(1.0 / 2.4) - 0.055
    };
    y.clamp(0.0, 1.0)
}

fn srgb_tonemap_grad(x: f64) -> f64 {
    if x < 0.0 {
        0.0
    } else if x <= 0.003_130_8 {
        12.92
    } else if x > 1.0 {
        0.0
    } else {
        1.055 / 2.4 * x.powf(1.0 / 2.4 - 1.0)
    }
}

fn ide_width(terms: &[ShTerm]) -> usize {
    terms.iter().map(ShTerm::width).sum()
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.id].value
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.id].needs_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        let v = Var {
            id: self.nodes.len(),
            rows: value.rows(),
            cols: value.cols(),
        };
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        v
    }

    fn unary(&mut self, a: Var, value: Tensor<T>, op: Op<T>) -> Var {
        let g = self.needs_grad(a);
        self.push(value, op, g)
    }

    /// A differentiable leaf (a parameter or an input whose gradient is wanted).
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// `x W^T + b`, with `x: n x in`, `W: out x in`, `b: 1 x out`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        if x.cols != w.cols {
            return Err(Error::ShapeMismatch {
                op: "linear",
                left: x.shape(),
                right: w.shape(),
            });
        }
        if let Some(b) = b {
            if b.shape() != (1, w.rows) {
                return Err(Error::ShapeMismatch {
                    op: "linear bias",
                    left: w.shape(),
                    right: b.shape(),
                });
            }
        }
        let (n, k, o) = (x.rows, x.cols, w.rows);
        let mut out = match b {
            Some(b) => {
                let bias = self.value(b).data();
                let mut t = Tensor::zeros(n, o);
                for r in 0..n {
                    t.row_mut(r).copy_from_slice(bias);
                }
                t
            }
            None => Tensor::zeros(n, o),
        };
        let beta = if b.is_some() { T::one() } else { T::zero() };
        T::gemm(
            n,
            k,
            o,
            T::one(),
            self.value(x).data(),
            (k as isize, 1),
            self.value(w).data(),
            (1, k as isize),
            beta,
            out.data_mut(),
            (o as isize, 1),
        );
        let g = self.needs_grad(x) || self.needs_grad(w) || b.is_some_and(|b| self.needs_grad(b));
        Ok(self.push(out, Op::Linear { x, w, b }, g))
    }

    fn zip(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        same_shape(op, a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::from_vec(a.rows, a.cols, data)
    }

    fn binary_grad(&self, a: Var, b: Var) -> bool {
        self.needs_grad(a) || self.needs_grad(b)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip("add", a, b, |x, y| x + y)?;
        let g = self.binary_grad(a, b);
        Ok(self.push(v, Op::Add(a, b), g))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip("sub", a, b, |x, y| x - y)?;
        let g = self.binary_grad(a, b);
        Ok(self.push(v, Op::Sub(a, b), g))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip("mul", a, b, |x, y| x * y)?;
        let g = self.binary_grad(a, b);
        Ok(self.push(v, Op::Mul(a, b), g))
    }

    /// Scales each row of `a` (`n x c`) by the matching entry of `s` (`n x 1`).
    pub fn mul_col(&mut self, a: Var, s: Var) -> Result<Var> {
        if s.shape() != (a.rows, 1) {
            return Err(Error::ShapeMismatch {
                op: "mul_col",
                left: a.shape(),
                right: s.shape(),
            });
        }
        let (va, vs) = (self.value(a), self.value(s));
        let out = Tensor::from_fn(a.rows, a.cols, |r, c| va.get(r, c) * vs.get(r, 0));
        let g = self.binary_grad(a, s);
        Ok(self.push(out, Op::MulCol(a, s), g))
    }

    /// Elementwise product with a constant (e.g. an activation mask).
    pub fn mul_const(&mut self, a: Var, m: Tensor<T>) -> Result<Var> {
        if m.shape() != a.shape() {
            return Err(Error::ShapeMismatch {
                op: "mul_const",
                left: a.shape(),
                right: m.shape(),
            });
        }
        let va = self.value(a);
        let data = va.data().iter().zip(m.data()).map(|(&x, &y)| x * y).collect();
        let out = Tensor::from_vec(a.rows, a.cols, data)?;
        Ok(self.unary(a, out, Op::MulConst(a, m)))
    }

    pub fn scale(&mut self, a: Var, k: T) -> Var {
        let out = self.value(a).map(|x| x * k);
        self.unary(a, out, Op::Scale(a, k))
    }

    /// `a + k` elementwise.
    pub fn offset(&mut self, a: Var, k: T) -> Var {
        let out = self.value(a).map(|x| x + k);
        self.unary(a, out, Op::Offset(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(T::zero()));
        self.unary(a, out, Op::Relu(a))
    }

    /// `log1p(e^{-|x|}) + max(x, 0)`.
    pub fn softplus(&mut self, a: Var) -> Var {
        let out = self.value(a).map(softplus);
        self.unary(a, out, Op::Softplus(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.unary(a, out, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(T::exp);
        self.unary(a, out, Op::Exp(a))
    }

    /// `min(1/a, max)` for positive `a`.
    pub fn recip_clamped(&mut self, a: Var, max: T) -> Var {
        let out = self.value(a).map(|x| (T::one() / x).min(max));
        self.unary(a, out, Op::RecipClamped(a, max))
    }

    /// Column-wise concatenation.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts.first().map_or(0, |p| p.rows);
        if let Some(p) = parts.iter().find(|p| p.rows != rows) {
            return Err(Error::ShapeMismatch {
                op: "concat",
                left: parts[0].shape(),
                right: p.shape(),
            });
        }
        let cols: usize = parts.iter().map(|p| p.cols).sum();
        let mut out = Tensor::zeros(rows, cols);
        let mut start = 0;
        for p in parts {
            let v = self.value(*p);
            for r in 0..rows {
                out.row_mut(r)[start..start + p.cols].copy_from_slice(v.row(r));
            }
            start += p.cols;
        }
        let g = parts.iter().any(|p| self.needs_grad(*p));
        Ok(self.push(out, Op::Concat(parts.to_vec()), g))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        if start + len > a.cols || len == 0 {
            return Err(Error::ShapeMismatch {
                op: "slice_cols",
                left: a.shape(),
                right: (start, len),
            });
        }
        let va = self.value(a);
        let out = Tensor::from_fn(a.rows, len, |r, c| va.get(r, start + c));
        Ok(self.unary(a, out, Op::SliceCols(a, start)))
    }

    /// Reinterprets the row-major data with a new shape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        if rows * cols != a.rows * a.cols {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                left: a.shape(),
                right: (rows, cols),
            });
        }
        let out = Tensor::from_vec(rows, cols, self.value(a).data().to_vec())?;
        Ok(self.unary(a, out, Op::Reshape(a)))
    }

    pub fn row_sum(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let out = Tensor::from_fn(a.rows, 1, |r, _| va.row(r).iter().copied().sum());
        self.unary(a, out, Op::RowSum(a))
    }

    /// Per-row dot product, `n x 1`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("row_dot", a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let out = Tensor::from_fn(a.rows, 1, |r, _| {
            va.row(r).iter().zip(vb.row(r)).map(|(&x, &y)| x * y).sum()
        });
        let g = self.binary_grad(a, b);
        Ok(self.push(out, Op::RowDot(a, b), g))
    }

    /// Rows divided by `sqrt(|row|^2 + 1e-20)`.
    pub fn normalize(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let eps = T::of(NORMALIZE_EPS);
        let mut out = va.clone();
        for r in 0..a.rows {
            let row = out.row_mut(r);
            let s = (row.iter().map(|&x| x * x).sum::<T>() + eps).sqrt();
            for x in row {
                *x = *x / s;
            }
        }
        self.unary(a, out, Op::Normalize(a))
    }

    /// Sum of all entries, `1 x 1`.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum();
        self.unary(a, Tensor::scalar(s), Op::Sum(a))
    }

    /// Sums consecutive blocks of `group` rows: `(n * group) x c -> n x c`.
    pub fn sum_groups(&mut self, a: Var, group: usize) -> Result<Var> {
        if group == 0 || !a.rows.is_multiple_of(group) {
            return Err(Error::ShapeMismatch {
                op: "sum_groups",
                left: a.shape(),
                right: (group, 1),
            });
        }
        let va = self.value(a);
        let n = a.rows / group;
        let mut out = Tensor::zeros(n, a.cols);
        for r in 0..a.rows {
            let dst = out.row_mut(r / group);
            for (d, &s) in dst.iter_mut().zip(va.row(r)) {
                *d = *d + s;
            }
        }
        Ok(self.unary(a, out, Op::SumGroups(a, group)))
    }

    /// Repeats every row `times` times consecutively: `n x c -> (n * times) x c`.
    /// The adjoint of [`Tape::sum_groups`].
    pub fn repeat_rows(&mut self, a: Var, times: usize) -> Var {
        let va = self.value(a);
        let out = Tensor::from_fn(a.rows * times, a.cols, |r, c| va.get(r / times, c));
        self.unary(a, out, Op::RepeatRows(a, times))
    }

    /// Quadrature weights `w_i = T_i (1 - e^{-τ_i δ_i})` per row, with
    /// `T_i = exp(-Σ_{j<i} τ_j δ_j)`. `tau` and `deltas` are `rays x samples`.
    pub fn volume_weights(&mut self, tau: Var, deltas: Tensor<T>) -> Result<Var> {
        if deltas.shape() != tau.shape() {
            return Err(Error::ShapeMismatch {
                op: "volume_weights",
                left: tau.shape(),
                right: deltas.shape(),
            });
        }
        let vt = self.value(tau);
        if let Some(&bad) = vt.data().iter().find(|&&t| t < T::zero()) {
            return Err(Error::NegativeDensity(bad.f64()));
        }
        let mut out = Tensor::zeros(tau.rows, tau.cols);
        for r in 0..tau.rows {
            let mut acc = T::zero();
            for c in 0..tau.cols {
                let od = vt.get(r, c) * deltas.get(r, c);
                out.set(r, c, (-acc).exp() * -(-od).exp_m1());
                acc = acc + od;
            }
        }
        Ok(self.unary(tau, out, Op::VolumeWeights(tau, deltas)))
    }

    /// sRGB transfer plus clipping, elementwise.
    pub fn tone_map(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| T::of(srgb_tonemap(x.f64())));
        self.unary(a, out, Op::ToneMap(a))
    }

    /// Harmonic features of each row of `dir` (`n x 3`), each degree damped by
    /// `exp(-l(l+1)/(2κ))` when `kappa` (`n x 1`) is given.
    pub fn ide(&mut self, dir: Var, kappa: Option<Var>, terms: &Arc<[ShTerm]>) -> Result<Var> {
        if dir.cols != 3 {
            return Err(Error::ShapeMismatch {
                op: "ide",
                left: dir.shape(),
                right: (dir.rows, 3),
            });
        }
        if let Some(k) = kappa {
            if k.shape() != (dir.rows, 1) {
                return Err(Error::ShapeMismatch {
                    op: "ide kappa",
                    left: dir.shape(),
                    right: k.shape(),
                });
            }
        }
        let width = ide_width(terms);
        let vd = self.value(dir);
        let mut out = Tensor::zeros(dir.rows, width);
        for r in 0..dir.rows {
            let d = vd.row(r);
            let v = Vec3::new(d[0].f64(), d[1].f64(), d[2].f64());
            let kappa_r = kappa.map(|k| self.value(k).get(r, 0).f64());
            let row = out.row_mut(r);
            let mut c = 0;
            for term in terms.iter() {
                let a = kappa_r.map_or(1.0, |k| attenuation_approx_unchecked(term.ell, k));
                let (re, im) = term.eval(v);
                row[c] = T::of(a * re);
                c += 1;
                if term.m > 0 {
                    row[c] = T::of(a * im);
                    c += 1;
                }
            }
        }
        let g = self.needs_grad(dir) || kappa.is_some_and(|k| self.needs_grad(k));
        let op = Op::Ide {
            dir,
            kappa,
            terms: terms.clone(),
        };
        Ok(self.push(out, op, g))
    }

    /// `[a, sin(2^k a), cos(2^k a) for k in 0..levels]`.
    pub fn pos_enc(&mut self, a: Var, levels: usize) -> Var {
        let va = self.value(a);
        let c = a.cols;
        let out = Tensor::from_fn(a.rows, c * (1 + 2 * levels), |r, j| {
            if j < c {
                return va.get(r, j);
            }
            let j = j - c;
            let (k, rest) = (j / (2 * c), j % (2 * c));
            let x = va.get(r, rest % c) * T::of((1u64 << k) as f64);
            if rest < c {
                x.sin()
            } else {
                x.cos()
            }
        });
        self.unary(a, out, Op::PosEnc(a, levels))
    }

    /// Identity in value, blocks gradient flow.
    pub fn stop_grad(&mut self, a: Var) -> Var {
        let out = self.value(a).clone();
        self.push(out, Op::StopGrad, false)
    }

    /// Reverse sweep from a `1 x 1` loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if loss.shape() != (1, 1) {
            return Err(Error::NonScalarLoss(loss.shape()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(Tensor::scalar(T::one()));
        for id in (0..=loss.id).rev() {
            let node = &self.nodes[id];
            if !node.needs_grad {
                grads[id] = None;
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            if let Op::Leaf = node.op {
                grads[id] = Some(g);
                continue;
            }
            self.backprop_node(node, &g, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, f: impl FnOnce(&mut Tensor<T>)) {
        if !self.nodes[v.id].needs_grad {
            return;
        }
        let g = grads[v.id].get_or_insert_with(|| Tensor::zeros(v.rows, v.cols));
        f(g)
    }

    fn backprop_node(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let y = &node.value;
        match &node.op {
            Op::Leaf | Op::StopGrad => {}
            Op::Linear { x, w, b } => {
                let (n, k, o) = (x.rows, x.cols, w.rows);
                self.accumulate(grads, *x, |gx| {
                    T::gemm(
                        n,
                        o,
                        k,
                        T::one(),
                        g.data(),
                        (o as isize, 1),
                        self.value(*w).data(),
                        (k as isize, 1),
                        T::one(),
                        gx.data_mut(),
                        (k as isize, 1),
                    );
                });
                self.accumulate(grads, *w, |gw| {
                    T::gemm(
                        o,
                        n,
                        k,
                        T::one(),
                        g.data(),
                        (1, o as isize),
                        self.value(*x).data(),
                        (k as isize, 1),
                        T::one(),
                        gw.data_mut(),
                        (k as isize, 1),
                    );
                });
                if let Some(b) = b {
                    self.accumulate(grads, *b, |gb| {
                        let gb = gb.data_mut();
                        for r in 0..n {
                            for (acc, &v) in gb.iter_mut().zip(g.row(r)) {
                                *acc = *acc + v;
                            }
                        }
                    });
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, |ga| ga.add_assign(g));
                self.accumulate(grads, *b, |gb| gb.add_assign(g));
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, |ga| ga.add_assign(g));
                self.accumulate(grads, *b, |gb| {
                    for (acc, &v) in gb.data_mut().iter_mut().zip(g.data()) {
                        *acc = *acc - v;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                self.accumulate(grads, *a, |ga| {
                    for ((acc, &gv), &bv) in ga.data_mut().iter_mut().zip(g.data()).zip(vb.data()) {
                        *acc = *acc + gv * bv;
                    }
                });
                self.accumulate(grads, *b, |gb| {
                    for ((acc, &gv), &av) in gb.data_mut().iter_mut().zip(g.data()).zip(va.data()) {
                        *acc = *acc + gv * av;
                    }
                });
            }
            Op::MulCol(a, s) => {
                let (va, vs) = (self.value(*a), self.value(*s));
                self.accumulate(grads, *a, |ga| {
                    for r in 0..a.rows {
                        let sv = vs.get(r, 0);
                        for (acc, &gv) in ga.row_mut(r).iter_mut().zip(g.row(r)) {
                            *acc = *acc + gv * sv;
                        }
                    }
                });
                self.accumulate(grads, *s, |gs| {
                    for r in 0..a.rows {
                        let d: T = g.row(r).iter().zip(va.row(r)).map(|(&x, &y)| x * y).sum();
                        gs.set(r, 0, gs.get(r, 0) + d);
                    }
                });
            }
            Op::MulConst(a, m) => self.accumulate(grads, *a, |ga| {
                for ((acc, &gv), &mv) in ga.data_mut().iter_mut().zip(g.data()).zip(m.data()) {
                    *acc = *acc + gv * mv;
                }
            }),
            Op::Scale(a, k) => self.accumulate(grads, *a, |ga| {
                for (acc, &gv) in ga.data_mut().iter_mut().zip(g.data()) {
                    *acc = *acc + gv * *k;
                }
            }),
            Op::Offset(a) | Op::Reshape(a) => {
                self.accumulate(grads, *a, |ga| {
                    for (acc, &gv) in ga.data_mut().iter_mut().zip(g.data()) {
                        *acc = *acc + gv;
                    }
                })
            }
            Op::Relu(a) => {
                let va = self.value(*a);
                self.accumulate(grads, *a, |ga| {
                    for ((acc, &gv), &x) in ga.data_mut().iter_mut().zip(g.data()).zip(va.data()) {
                        if x > T::zero() {
                            *acc = *acc + gv;
                        }
                    }
                })
            }
            Op::Softplus(a) => {
                let va = self.value(*a);
                self.accumulate(grads, *a, |ga| {
                    for ((acc, &gv), &x) in ga.data_mut().iter_mut().zip(g.data()).zip(va.data()) {
                        *acc = *acc + gv * sigmoid(x);
                    }
                })
            }
            Op::Sigmoid(a) => self.accumulate(grads, *a, |ga| {
                for ((acc, &gv), &s) in ga.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                    *acc = *acc + gv * s * (T::one() - s);
                }
            }),
            Op::Exp(a) => self.accumulate(grads, *a, |ga| {
                for ((acc, &gv), &e) in ga.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                    *acc = *acc + gv * e;
                }
            }),
            Op::RecipClamped(a, max) => {
                let va = self.value(*a);
                self.accumulate(grads, *a, |ga| {
                    for (((acc, &gv), &x), &r) in ga
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(va.data())
                        .zip(y.data())
                    {
                        if T::one() / x < *max {
                            *acc = *acc - gv * r * r;
                        }
                    }
                })
            }
            Op::Concat(parts) => {
                let mut start = 0;
                for p in parts {
                    self.accumulate(grads, *p, |gp| {
                        for r in 0..p.rows {
                            let src = &g.row(r)[start..start + p.cols];
                            for (acc, &gv) in gp.row_mut(r).iter_mut().zip(src) {
                                *acc = *acc + gv;
                            }
                        }
                    });
                    start += p.cols;
                }
            }
            Op::SliceCols(a, start) => self.accumulate(grads, *a, |ga| {
                for r in 0..a.rows {
                    let dst = &mut ga.row_mut(r)[*start..*start + g.cols()];
                    for (acc, &gv) in dst.iter_mut().zip(g.row(r)) {
                        *acc = *acc + gv;
                    }
                }
            }),
            Op::RowSum(a) => self.accumulate(grads, *a, |ga| {
                for r in 0..a.rows {
                    let gv = g.get(r, 0);
                    for acc in ga.row_mut(r) {
                        *acc = *acc + gv;
                    }
                }
            }),
            Op::RowDot(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                self.accumulate(grads, *a, |ga| {
                    for r in 0..a.rows {
                        let gv = g.get(r, 0);
                        for (acc, &bv) in ga.row_mut(r).iter_mut().zip(vb.row(r)) {
                            *acc = *acc + gv * bv;
                        }
                    }
                });
                self.accumulate(grads, *b, |gb| {
                    for r in 0..a.rows {
                        let gv = g.get(r, 0);
                        for (acc, &av) in gb.row_mut(r).iter_mut().zip(va.row(r)) {
                            *acc = *acc + gv * av;
                        }
                    }
                });
            }
            Op::Normalize(a) => {
                let va = self.value(*a);
                let eps = T::of(NORMALIZE_EPS);
                self.accumulate(grads, *a, |ga| {
                    for r in 0..a.rows {
                        let (x, gr) = (va.row(r), g.row(r));
                        let sq: T = x.iter().map(|&v| v * v).sum::<T>() + eps;
                        let s = sq.sqrt();
                        let xg: T = x.iter().zip(gr).map(|(&u, &v)| u * v).sum();
                        for ((acc, &xv), &gv) in ga.row_mut(r).iter_mut().zip(x).zip(gr) {
                            *acc = *acc + gv / s - xv * xg / (sq * s);
                        }
                    }
                })
            }
            Op::Sum(a) => {
                let gv = g.item();
                self.accumulate(grads, *a, |ga| {
                    for acc in ga.data_mut() {
                        *acc = *acc + gv;
                    }
                })
            }
            Op::SumGroups(a, group) => self.accumulate(grads, *a, |ga| {
                for r in 0..a.rows {
                    for (acc, &gv) in ga.row_mut(r).iter_mut().zip(g.row(r / group)) {
                        *acc = *acc + gv;
                    }
                }
            }),
            Op::RepeatRows(a, times) => self.accumulate(grads, *a, |ga| {
                for r in 0..g.rows() {
                    for (acc, &gv) in ga.row_mut(r / times).iter_mut().zip(g.row(r)) {
                        *acc = *acc + gv;
                    }
                }
            }),
            Op::VolumeWeights(tau, deltas) => {
                let vt = self.value(*tau);
                self.accumulate(grads, *tau, |gt| {
                    for r in 0..tau.rows {
                        let n = tau.cols;
                        // suffix[k] = Σ_{i>k} g_i w_i
                        let mut suffix = T::zero();
                        let mut acc_od: T = (0..n).map(|c| vt.get(r, c) * deltas.get(r, c)).sum();
                        for k in (0..n).rev() {
                            let d = deltas.get(r, k);
                            // T_{k+1} = exp(-Σ_{j<=k} τ_j δ_j)
                            let t_next = (-acc_od).exp();
                            let val = d * t_next * g.get(r, k) - d * suffix;
                            gt.set(r, k, gt.get(r, k) + val);
                            suffix = suffix + g.get(r, k) * y.get(r, k);
                            acc_od = acc_od - vt.get(r, k) * d;
                        }
                    }
                })
            }
            Op::ToneMap(a) => {
                let va = self.value(*a);
                self.accumulate(grads, *a, |ga| {
                    for ((acc, &gv), &x) in ga.data_mut().iter_mut().zip(g.data()).zip(va.data()) {
                        *acc = *acc + gv * T::of(srgb_tonemap_grad(x.f64()));
                    }
                })
            }
            Op::Ide { dir, kappa, terms } => {
                let vd = self.value(*dir);
                let vk = kappa.map(|k| self.value(k));
                let mut gdir = Tensor::<T>::zeros(dir.rows, 3);
                let mut gk = Tensor::<T>::zeros(dir.rows, 1);
                for r in 0..dir.rows {
                    let d = vd.row(r);
                    let v = Vec3::new(d[0].f64(), d[1].f64(), d[2].f64());
                    let kr = vk.map(|k| k.get(r, 0).f64());
                    let gr = g.row(r);
                    let mut c = 0;
                    let mut gd = [0.0; 3];
                    let mut gkr = 0.0;
                    for term in terms.iter() {
                        let ((re, im), dre, dim) = term.eval_with_grad(v);
                        let (a, da) = match kr {
                            Some(k) => {
                                let l = term.ell as f64;
                                let a = attenuation_approx_unchecked(term.ell, k);
                                (a, a * l * (l + 1.0) / (2.0 * k * k))
                            }
                            None => (1.0, 0.0),
                        };
                        let g_re = gr[c].f64();
                        c += 1;
                        let mut acc_val = g_re * re;
                        for j in 0..3 {
                            gd[j] += g_re * a * dre[j];
                        }
                        if term.m > 0 {
                            let g_im = gr[c].f64();
                            c += 1;
                            acc_val += g_im * im;
                            for j in 0..3 {
                                gd[j] += g_im * a * dim[j];
                            }
                        }
                        gkr += acc_val * da;
                    }
                    for (j, &g) in gd.iter().enumerate() {
                        gdir.set(r, j, T::of(g));
                    }
                    gk.set(r, 0, T::of(gkr));
                }
                self.accumulate(grads, *dir, |acc| acc.add_assign(&gdir));
                if let Some(k) = kappa {
                    self.accumulate(grads, *k, |acc| acc.add_assign(&gk));
                }
            }
            Op::PosEnc(a, levels) => {
                let va = self.value(*a);
                let c = a.cols;
                self.accumulate(grads, *a, |ga| {
                    for r in 0..a.rows {
                        let gr = g.row(r);
                        for j in 0..c {
                            let x = va.get(r, j);
                            let mut acc = gr[j];
                            for k in 0..*levels {
                                let f = T::of((1u64 << k) as f64);
                                let base = c + k * 2 * c;
                                acc = acc + gr[base + j] * f * (f * x).cos()
                                    - gr[base + c + j] * f * (f * x).sin();
                            }
                            ga.set(r, j, ga.get(r, j) + acc);
                        }
                    }
                })
            }
        }
    }
}
