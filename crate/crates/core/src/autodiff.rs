//! Reverse-mode automatic differentiation over batched matrices.
//!
//! Every node holds a `rows x cols` matrix where rows index samples. The
//! network's input gradients are built on the tape as ordinary forward-mode
//! tangent products, so a single reverse sweep differentiates losses that
//! depend on `grad_x f` with respect to the parameters.

use crate::linalg::Matrix;
use crate::scalar::Scalar;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    /// `x * w^T`
    MatMulT(Var, Var),
    /// row-broadcast bias add
    AddBias(Var, Var),
    /// `sin(omega * x)`; `deriv` caches `omega * cos(omega * x)`
    Sin { x: Var, deriv: Matrix<T> },
    /// `omega * cos(omega * x)` paired with the `sin` node of the same input
    CosPair { x: Var, sin: Var, omega: T },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    /// elementwise product with a constant
    MulConst(Var, Matrix<T>),
    Relu(Var),
    Abs(Var),
    /// `exp(c * x)`
    Exp(Var, T),
    Square(Var),
    Sqrt(Var),
    HConcat(Var, Var),
    Rows { x: Var, start: usize },
    /// per-row softmax cross entropy; caches the softmax
    CrossEntropy { logits: Var, labels: Vec<u32>, softmax: Matrix<T> },
    Sum(Var),
}

struct Node<T> {
    value: Matrix<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Append-only computation record.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix<T> {
        &self.nodes[v.0].value
    }

    /// Scalar value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> T {
        let m = self.value(v);
        debug_assert_eq!(m.shape(), (1, 1));
        m.as_slice()[0]
    }

    fn push(&mut self, value: Matrix<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Constant input; receives no gradient.
    pub fn constant(&mut self, value: Matrix<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Differentiable leaf (a parameter).
    pub fn param(&mut self, value: Matrix<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn matmul_t(&mut self, x: Var, w: Var) -> Var {
        let value = self.value(x).matmul_t(self.value(w));
        let ng = self.ng(x) || self.ng(w);
        self.push(value, Op::MatMulT(x, w), ng)
    }

    pub fn add_bias(&mut self, x: Var, b: Var) -> Var {
        let mut value = self.value(x).clone();
        value.add_row_broadcast(self.value(b));
        let ng = self.ng(x) || self.ng(b);
        self.push(value, Op::AddBias(x, b), ng)
    }

    /// `x * w^T + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let y = self.matmul_t(x, w);
        self.add_bias(y, b)
    }

    pub fn sin(&mut self, x: Var, omega: T) -> Var {
        let src = self.value(x);
        let mut value = Matrix::zeros(src.rows(), src.cols());
        let mut deriv = Matrix::zeros(src.rows(), src.cols());
        for ((o, d), &v) in value
            .as_mut_slice()
            .iter_mut()
            .zip(deriv.as_mut_slice())
            .zip(src.as_slice())
        {
            (*o, *d) = sine_with_derivative(omega, v);
        }
        let ng = self.ng(x);
        self.push(value, Op::Sin { x, deriv }, ng)
    }

    /// Returns `(sin(omega x), omega cos(omega x))`, the activation and its
    /// derivative, both differentiable.
    pub fn sin_cos(&mut self, x: Var, omega: T) -> (Var, Var) {
        let s = self.sin(x, omega);
        let value = match &self.nodes[s.0].op {
            Op::Sin { deriv, .. } => deriv.clone(),
            _ => unreachable!(),
        };
        let ng = self.ng(x);
        let c = self.push(value, Op::CosPair { x, sin: s, omega }, ng);
        (s, c)
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Var {
        let value = self.value(a).zip_map(self.value(b), f);
        let ng = self.ng(a) || self.ng(b);
        self.push(value, op, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x / y, Op::Div(a, b))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let value = self.value(x).map(|v| v * c);
        let ng = self.ng(x);
        self.push(value, Op::Scale(x, c), ng)
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Var {
        let value = self.value(x).map(|v| v + c);
        let ng = self.ng(x);
        self.push(value, Op::AddScalar(x), ng)
    }

    pub fn mul_const(&mut self, x: Var, c: Matrix<T>) -> Var {
        let value = self.value(x).zip_map(&c, |a, b| a * b);
        let ng = self.ng(x);
        self.push(value, Op::MulConst(x, c), ng)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        let ng = self.ng(x);
        self.push(value, Op::Relu(x), ng)
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.abs());
        let ng = self.ng(x);
        self.push(value, Op::Abs(x), ng)
    }

    /// `exp(c * x)`.
    pub fn exp(&mut self, x: Var, c: T) -> Var {
        let value = self.value(x).map(|v| (c * v).exp());
        let ng = self.ng(x);
        self.push(value, Op::Exp(x, c), ng)
    }

    pub fn square(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v * v);
        let ng = self.ng(x);
        self.push(value, Op::Square(x), ng)
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.sqrt());
        let ng = self.ng(x);
        self.push(value, Op::Sqrt(x), ng)
    }

    pub fn hconcat(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).hconcat(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::HConcat(a, b), ng)
    }

    pub fn rows(&mut self, x: Var, start: usize, len: usize) -> Var {
        let value = self.value(x).row_block(start, len);
        let ng = self.ng(x);
        self.push(value, Op::Rows { x, start }, ng)
    }

    /// Per-row cross entropy of `softmax(logits)` against `labels`,
    /// stabilized by subtracting each row's max logit.
    ///
    /// # Panics
    /// When a label is out of range or the label count differs from the row count.
    pub fn cross_entropy(&mut self, logits: Var, labels: Vec<u32>) -> Var {
        let l = self.value(logits);
        assert_eq!(l.rows(), labels.len(), "one label per logit row");
        let k = l.cols();
        let mut softmax = Matrix::zeros(l.rows(), k);
        let mut value = Matrix::zeros(l.rows(), 1);
        for (r, &label) in labels.iter().enumerate() {
            assert!((label as usize) < k, "label {label} out of range for {k} classes");
            let row = l.row(r);
            let (ce, probs) = softmax_cross_entropy(row, label as usize);
            value.set(r, 0, ce);
            softmax.as_mut_slice()[r * k..(r + 1) * k].copy_from_slice(&probs);
        }
        let ng = self.ng(logits);
        self.push(
            value,
            Op::CrossEntropy {
                logits,
                labels,
                softmax,
            },
            ng,
        )
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Matrix::from_vec(1, 1, vec![self.value(x).sum()]);
        let ng = self.ng(x);
        self.push(value, Op::Sum(x), ng)
    }

    /// Reverse sweep from the `1 x 1` node `root`. The returned gradients are
    /// indexed by [`Var`]; nodes that do not depend on any parameter get none.
    pub fn backward(&self, root: Var) -> Gradients<T> {
        assert_eq!(self.value(root).shape(), (1, 1), "backward root must be scalar");
        let mut grads: Vec<Option<Matrix<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Matrix::filled(1, 1, T::one()));
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            self.propagate(&node.op, &node.value, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn accumulate(&self, grads: &mut [Option<Matrix<T>>], v: Var, g: Matrix<T>) {
        if !self.ng(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn propagate(&self, op: &Op<T>, out: &Matrix<T>, g: &Matrix<T>, grads: &mut [Option<Matrix<T>>]) {
        match op {
            Op::Leaf => {}
            Op::MatMulT(x, w) => {
                if self.ng(*x) {
                    self.accumulate(grads, *x, g.matmul(self.value(*w)));
                }
                if self.ng(*w) {
                    self.accumulate(grads, *w, g.t_matmul(self.value(*x)));
                }
            }
            Op::AddBias(x, b) => {
                if self.ng(*b) {
                    self.accumulate(grads, *b, g.column_sums());
                }
                self.accumulate(grads, *x, g.clone());
            }
            Op::Sin { x, deriv } => {
                self.accumulate(grads, *x, g.zip_map(deriv, |a, d| a * d));
            }
            Op::CosPair { x, sin, omega } => {
                let w2 = *omega * *omega;
                let s = self.value(*sin);
                self.accumulate(grads, *x, g.zip_map(s, |a, sv| -(a * w2 * sv)));
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                if self.ng(*a) {
                    self.accumulate(grads, *a, g.zip_map(self.value(*b), |x, y| x * y));
                }
                if self.ng(*b) {
                    self.accumulate(grads, *b, g.zip_map(self.value(*a), |x, y| x * y));
                }
            }
            Op::Div(a, b) => {
                let bv = self.value(*b);
                if self.ng(*a) {
                    self.accumulate(grads, *a, g.zip_map(bv, |x, y| x / y));
                }
                if self.ng(*b) {
                    // d(a/b)/db = -(a/b)/b
                    let q = out.zip_map(bv, |o, y| o / y);
                    self.accumulate(grads, *b, g.zip_map(&q, |x, y| -(x * y)));
                }
            }
            Op::Scale(x, c) => {
                let c = *c;
                self.accumulate(grads, *x, g.map(|v| v * c));
            }
            Op::AddScalar(x) => self.accumulate(grads, *x, g.clone()),
            Op::MulConst(x, c) => self.accumulate(grads, *x, g.zip_map(c, |a, b| a * b)),
            Op::Relu(x) => {
                let xv = self.value(*x);
                self.accumulate(
                    grads,
                    *x,
                    g.zip_map(xv, |a, v| if v > T::zero() { a } else { T::zero() }),
                );
            }
            Op::Abs(x) => {
                let xv = self.value(*x);
                self.accumulate(grads, *x, g.zip_map(xv, |a, v| a * sign(v)));
            }
            Op::Exp(x, c) => {
                let c = *c;
                self.accumulate(grads, *x, g.zip_map(out, |a, o| a * c * o));
            }
            Op::Square(x) => {
                let two = T::lit(2.0);
                let xv = self.value(*x);
                self.accumulate(grads, *x, g.zip_map(xv, |a, v| two * a * v));
            }
            Op::Sqrt(x) => {
                let half = T::lit(0.5);
                self.accumulate(
                    grads,
                    *x,
                    g.zip_map(out, |a, o| if o > T::zero() { half * a / o } else { T::zero() }),
                );
            }
            Op::HConcat(a, b) => {
                let ca = self.value(*a).cols();
                let cb = self.value(*b).cols();
                let mut ga = Matrix::zeros(g.rows(), ca);
                let mut gb = Matrix::zeros(g.rows(), cb);
                for r in 0..g.rows() {
                    let row = g.row(r);
                    ga.as_mut_slice()[r * ca..(r + 1) * ca].copy_from_slice(&row[..ca]);
                    gb.as_mut_slice()[r * cb..(r + 1) * cb].copy_from_slice(&row[ca..]);
                }
                self.accumulate(grads, *a, ga);
                self.accumulate(grads, *b, gb);
            }
            Op::Rows { x, start } => {
                if !self.ng(*x) {
                    return;
                }
                let xv = self.value(*x);
                let cols = xv.cols();
                let slot = &mut grads[x.0];
                let acc = slot.get_or_insert_with(|| Matrix::zeros(xv.rows(), cols));
                let dst = &mut acc.as_mut_slice()[start * cols..(start + g.rows()) * cols];
                for (d, &s) in dst.iter_mut().zip(g.as_slice()) {
                    *d += s;
                }
            }
            Op::CrossEntropy {
                logits,
                labels,
                softmax,
            } => {
                let k = softmax.cols();
                let mut gl = softmax.clone();
                for (r, &label) in labels.iter().enumerate() {
                    let gr = g.get(r, 0);
                    let row = &mut gl.as_mut_slice()[r * k..(r + 1) * k];
                    row[label as usize] -= T::one();
                    for v in row.iter_mut() {
                        *v *= gr;
                    }
                }
                self.accumulate(grads, *logits, gl);
            }
            Op::Sum(x) => {
                let xv = self.value(*x);
                let s = g.as_slice()[0];
                self.accumulate(grads, *x, Matrix::filled(xv.rows(), xv.cols(), s));
            }
        }
    }
}

/// `(sin(omega v), omega cos(omega v))`. Kept out of line so every caller
/// gets bitwise identical results regardless of how the optimizer would
/// otherwise fuse the two calls.
#[inline(never)]
pub fn sine_with_derivative<T: Scalar>(omega: T, v: T) -> (T, T) {
    let (s, c) = (omega * v).sin_cos();
    (s, omega * c)
}

#[inline]
fn sign<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

/// Cross entropy of `softmax(row)` at `label` and the softmax itself.
pub fn softmax_cross_entropy<T: Scalar>(row: &[T], label: usize) -> (T, Vec<T>) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = row.iter().map(|&v| (v - max).exp()).collect();
    let z: T = exps.iter().copied().sum();
    let ce = z.ln() - (row[label] - max);
    (ce, exps.into_iter().map(|e| e / z).collect())
}

/// Result of [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Matrix<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Matrix<T>> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Matrix<T>> {
        self.grads[v.0].take()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: usize, cols: usize, f: impl Fn(usize) -> f64) -> Matrix<f64> {
        Matrix::from_vec(rows, cols, (0..rows * cols).map(f).collect())
    }

    // Builds a scalar from a parameter matrix through most ops.
    fn build(tape: &mut Tape<f64>, w: Matrix<f64>) -> (Var, Var) {
        let x = tape.constant(m(4, 3, |i| (i as f64 * 0.7).sin()));
        let wv = tape.param(w);
        let b = tape.param(m(1, 2, |i| 0.1 * i as f64 - 0.05));
        let z = tape.linear(x, wv, b);
        let (s, c) = tape.sin_cos(z, 1.7);
        let p = tape.mul(s, c);
        let q = tape.hconcat(p, z);
        let r = tape.rows(q, 1, 3);
        let sq = tape.square(r);
        let e = tape.exp(sq, -0.5);
        let a = tape.abs(r);
        let a1 = tape.add_scalar(a, 1.0);
        let d = tape.div(e, a1);
        let rl = tape.relu(d);
        let sc = tape.scale(rl, 3.0);
        let t = tape.sqrt(a1);
        let u = tape.sub(sc, t);
        let ce = tape.cross_entropy(u, vec![0, 3, 1]);
        let total = tape.sum(ce);
        (total, wv)
    }

    #[test]
    fn reverse_sweep_matches_central_differences() {
        let w0 = m(2, 3, |i| 0.3 * (i as f64 + 1.0).cos());
        let mut tape = Tape::new();
        let (root, wv) = build(&mut tape, w0.clone());
        let g = tape.backward(root);
        let analytic = g.get(wv).unwrap().clone();
        let h = 1e-6;
        for i in 0..w0.len() {
            let mut wp = w0.clone();
            wp.as_mut_slice()[i] += h;
            let mut wm = w0.clone();
            wm.as_mut_slice()[i] -= h;
            let mut tp = Tape::new();
            let (rp, _) = build(&mut tp, wp);
            let mut tm = Tape::new();
            let (rm, _) = build(&mut tm, wm);
            let fd = (tp.scalar(rp) - tm.scalar(rm)) / (2.0 * h);
            let a = analytic.as_slice()[i];
            assert!((fd - a).abs() < 1e-7 * (1.0 + a.abs()), "param {i}: fd {fd} vs {a}");
        }
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(m(2, 2, |i| i as f64));
        let w = tape.param(m(2, 2, |i| 1.0 + i as f64));
        let y = tape.matmul_t(x, w);
        let s = tape.sum(y);
        let g = tape.backward(s);
        assert!(g.get(x).is_none());
        assert!(g.get(w).is_some());
    }

    #[test]
    fn stable_cross_entropy_closed_forms() {
        let (ce, _) = softmax_cross_entropy(&[1.0f64, 0.0], 0);
        assert!((ce - (1.0 + (-1.0f64).exp()).ln()).abs() < 1e-15);
        let (ce, _) = softmax_cross_entropy(&[1000.0f64, 0.0, -1000.0], 0);
        assert!(ce.is_finite() && ce < 1e-20);
    }
}
