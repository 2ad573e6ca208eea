//! Reverse-mode automatic differentiation on a define-by-run tape.
//!
//! Values are computed eagerly as operations are recorded; a single backward
//! pass then fills gradients for every variable created with [`Tape::param`].
//! The op set is exactly what the training losses in this crate need — dense
//! layers, the four activations, power normalization, softmax confidence and
//! a few reductions — not a general tensor library.

use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    /// Input or parameter; `bool` marks whether gradient is tracked.
    Leaf(bool),
    /// `(m, k) @ (k, n)`.
    Matmul(Var, Var),
    /// Broadcast a `(1, n)` bias over rows of `(m, n)`.
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    /// Elementwise product.
    Hadamard(Var, Var),
    /// Add a constant tensor (noise draws, time embeddings).
    AddConst(Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    /// Mean of squared entries -> scalar.
    MeanSquare(Var),
    /// Mean of all entries -> scalar.
    MeanAll(Var),
    /// `1 / sqrt(x + eps)` on a scalar.
    RsqrtScalar(Var, f64),
    /// Broadcast-multiply a tensor by a scalar variable.
    MulScalar(Var, Var),
    /// `[a | b]` along columns.
    ConcatCols(Var, Var),
    /// Per-row softmax probability of a picked class, `(m, M) -> (m, 1)`.
    SoftmaxPick(Var, Vec<usize>),
}

struct Node {
    value: Tensor,
    op: Op,
    /// Whether any trainable leaf feeds this node; backward skips the rest.
    needs_grad: bool,
}

/// Recorded computation graph with eager forward values.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by `Var`.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. `var`. Zero tensor if the var never
    /// influenced the loss.
    pub fn wrt(&self, tape: &Tape, var: Var) -> Tensor {
        match &self.grads[var.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = tape.nodes[var.0].value.shape();
                Tensor::zeros(r, c)
            }
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let needs_grad = match &op {
            Op::Leaf(trainable) => *trainable,
            Op::Matmul(a, b)
            | Op::AddBias(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Hadamard(a, b)
            | Op::MulScalar(a, b)
            | Op::ConcatCols(a, b) => self.nodes[a.0].needs_grad || self.nodes[b.0].needs_grad,
            Op::AddConst(a)
            | Op::Scale(a, _)
            | Op::Relu(a)
            | Op::Sigmoid(a)
            | Op::Tanh(a)
            | Op::MeanSquare(a)
            | Op::MeanAll(a)
            | Op::RsqrtScalar(a, _)
            | Op::SoftmaxPick(a, _) => self.nodes[a.0].needs_grad,
        };
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; no gradient tracked.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf(false))
    }

    /// Trainable leaf; gradient available after `backward`.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf(true))
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.nodes[a.0].value.matmul(&self.nodes[b.0].value);
        self.push(v, Op::Matmul(a, b))
    }

    pub fn add_bias(&mut self, a: Var, bias: Var) -> Var {
        let (m, n) = self.nodes[a.0].value.shape();
        let bv = &self.nodes[bias.0].value;
        assert_eq!(bv.shape(), (1, n), "bias must be (1, {n})");
        let mut out = self.nodes[a.0].value.clone();
        for r in 0..m {
            let row = out.row_slice_mut(r);
            for (o, &b) in row.iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        self.push(out, Op::AddBias(a, bias))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.nodes[a.0].value.add(&self.nodes[b.0].value);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.nodes[a.0].value.sub(&self.nodes[b.0].value);
        self.push(v, Op::Sub(a, b))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Var {
        let v = self.nodes[a.0].value.zip_map(&self.nodes[b.0].value, |x, y| x * y);
        self.push(v, Op::Hadamard(a, b))
    }

    pub fn add_const(&mut self, a: Var, c: &Tensor) -> Var {
        let v = self.nodes[a.0].value.add(c);
        self.push(v, Op::AddConst(a))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.nodes[a.0].value.scale(c);
        self.push(v, Op::Scale(a, c))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.map(|x| if x > 0.0 { x } else { 0.0 });
        self.push(v, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.map(|x| 1.0 / (1.0 + (-x).exp()));
        self.push(v, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.map(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn mean_square(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.nodes[a.0].value.mean_square());
        self.push(v, Op::MeanSquare(a))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.nodes[a.0].value.mean());
        self.push(v, Op::MeanAll(a))
    }

    pub fn rsqrt_scalar(&mut self, a: Var, eps: f64) -> Var {
        let x = self.nodes[a.0].value.item();
        let v = Tensor::scalar(1.0 / (x + eps).sqrt());
        self.push(v, Op::RsqrtScalar(a, eps))
    }

    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Var {
        let sv = self.nodes[s.0].value.item();
        let v = self.nodes[a.0].value.scale(sv);
        self.push(v, Op::MulScalar(a, s))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        assert_eq!(av.rows(), bv.rows(), "concat_cols row mismatch");
        let (m, na, nb) = (av.rows(), av.cols(), bv.cols());
        let mut out = Tensor::zeros(m, na + nb);
        for r in 0..m {
            out.row_slice_mut(r)[..na].copy_from_slice(av.row_slice(r));
            out.row_slice_mut(r)[na..].copy_from_slice(bv.row_slice(r));
        }
        self.push(out, Op::ConcatCols(a, b))
    }

    /// Softmax probability assigned to `labels[r]` per row of logits.
    pub fn softmax_pick(&mut self, logits: Var, labels: &[usize]) -> Var {
        let lv = &self.nodes[logits.0].value;
        assert_eq!(lv.rows(), labels.len(), "one label per row required");
        let mut out = Tensor::zeros(lv.rows(), 1);
        for r in 0..lv.rows() {
            let row = lv.row_slice(r);
            let p = softmax_row(row);
            out.set(r, 0, p[labels[r]]);
        }
        self.push(out, Op::SoftmaxPick(logits, labels.to_vec()))
    }

    /// Mean squared error against a constant target, averaged over all entries.
    pub fn mse(&mut self, a: Var, target: &Tensor) -> Var {
        let neg = target.scale(-1.0);
        let diff = self.add_const(a, &neg);
        self.mean_square(diff)
    }

    /// Scale rows so the batch-mean squared entry is 1: `x * rsqrt(mean(x^2))`.
    pub fn normalize_power(&mut self, a: Var, eps: f64) -> Var {
        let ms = self.mean_square(a);
        let inv = self.rsqrt_scalar(ms, eps);
        self.mul_scalar(a, inv)
    }

    /// Reverse pass from a scalar loss node.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(
            self.nodes[loss.0].value.shape(),
            (1, 1),
            "backward requires a scalar loss"
        );
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].needs_grad {
                continue;
            }
            let Some(g) = grads[idx].clone() else {
                continue;
            };
            let node = &self.nodes[idx];
            let needs = |v: Var| self.nodes[v.0].needs_grad;
            match &node.op {
                Op::Leaf(_) => {}
                Op::Matmul(a, b) => {
                    if needs(*a) {
                        let da = g.matmul_t(&self.nodes[b.0].value);
                        accumulate(&mut grads, *a, da);
                    }
                    if needs(*b) {
                        let db = self.nodes[a.0].value.t_matmul(&g);
                        accumulate(&mut grads, *b, db);
                    }
                }
                Op::AddBias(a, bias) => {
                    if needs(*bias) {
                        let n = g.cols();
                        let mut db = Tensor::zeros(1, n);
                        for r in 0..g.rows() {
                            let row = g.row_slice(r);
                            let acc = db.row_slice_mut(0);
                            for (o, &x) in acc.iter_mut().zip(row) {
                                *o += x;
                            }
                        }
                        accumulate(&mut grads, *bias, db);
                    }
                    if needs(*a) {
                        accumulate(&mut grads, *a, g);
                    }
                }
                Op::Add(a, b) => {
                    if needs(*a) {
                        accumulate(&mut grads, *a, g.clone());
                    }
                    if needs(*b) {
                        accumulate(&mut grads, *b, g);
                    }
                }
                Op::Sub(a, b) => {
                    if needs(*b) {
                        accumulate(&mut grads, *b, g.scale(-1.0));
                    }
                    if needs(*a) {
                        accumulate(&mut grads, *a, g);
                    }
                }
                Op::Hadamard(a, b) => {
                    if needs(*a) {
                        let da = g.zip_map(&self.nodes[b.0].value, |x, y| x * y);
                        accumulate(&mut grads, *a, da);
                    }
                    if needs(*b) {
                        let db = g.zip_map(&self.nodes[a.0].value, |x, y| x * y);
                        accumulate(&mut grads, *b, db);
                    }
                }
                Op::AddConst(a) => accumulate(&mut grads, *a, g),
                Op::Scale(a, c) => accumulate(&mut grads, *a, g.scale(*c)),
                Op::Relu(a) => {
                    let da = g.zip_map(&node.value, |gv, y| if y > 0.0 { gv } else { 0.0 });
                    accumulate(&mut grads, *a, da);
                }
                Op::Sigmoid(a) => {
                    let da = g.zip_map(&node.value, |gv, y| gv * y * (1.0 - y));
                    accumulate(&mut grads, *a, da);
                }
                Op::Tanh(a) => {
                    let da = g.zip_map(&node.value, |gv, y| gv * (1.0 - y * y));
                    accumulate(&mut grads, *a, da);
                }
                Op::MeanSquare(a) => {
                    let av = &self.nodes[a.0].value;
                    let c = 2.0 * g.item() / av.len() as f64;
                    accumulate(&mut grads, *a, av.scale(c));
                }
                Op::MeanAll(a) => {
                    let av = &self.nodes[a.0].value;
                    let c = g.item() / av.len() as f64;
                    accumulate(&mut grads, *a, Tensor::filled(av.rows(), av.cols(), c));
                }
                Op::RsqrtScalar(a, eps) => {
                    let x = self.nodes[a.0].value.item();
                    let d = -0.5 * (x + eps).powf(-1.5);
                    accumulate(&mut grads, *a, Tensor::scalar(g.item() * d));
                }
                Op::MulScalar(a, s) => {
                    if needs(*a) {
                        let sv = self.nodes[s.0].value.item();
                        accumulate(&mut grads, *a, g.scale(sv));
                    }
                    if needs(*s) {
                        let av = &self.nodes[a.0].value;
                        let ds: f64 =
                            g.data().iter().zip(av.data()).map(|(&gv, &x)| gv * x).sum();
                        accumulate(&mut grads, *s, Tensor::scalar(ds));
                    }
                }
                Op::ConcatCols(a, b) => {
                    let na = self.nodes[a.0].value.cols();
                    let nb = self.nodes[b.0].value.cols();
                    let m = g.rows();
                    if needs(*a) {
                        let mut da = Tensor::zeros(m, na);
                        for r in 0..m {
                            da.row_slice_mut(r).copy_from_slice(&g.row_slice(r)[..na]);
                        }
                        accumulate(&mut grads, *a, da);
                    }
                    if needs(*b) {
                        let mut db = Tensor::zeros(m, nb);
                        for r in 0..m {
                            db.row_slice_mut(r).copy_from_slice(&g.row_slice(r)[na..]);
                        }
                        accumulate(&mut grads, *b, db);
                    }
                }
                Op::SoftmaxPick(logits, labels) => {
                    // d p_m / d z_j = p_m (1[j=m] - p_j)
                    let lv = &self.nodes[logits.0].value;
                    let mut dl = Tensor::zeros(lv.rows(), lv.cols());
                    for r in 0..lv.rows() {
                        let p = softmax_row(lv.row_slice(r));
                        let m = labels[r];
                        let gv = g.get(r, 0);
                        let out = dl.row_slice_mut(r);
                        for (j, o) in out.iter_mut().enumerate() {
                            let ind = if j == m { 1.0 } else { 0.0 };
                            *o = gv * p[m] * (ind - p[j]);
                        }
                    }
                    accumulate(&mut grads, *logits, dl);
                }
            }
        }

        Gradients { grads }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], var: Var, delta: Tensor) {
    match &mut grads[var.0] {
        Some(g) => g.add_assign(&delta),
        slot @ None => *slot = Some(delta),
    }
}

pub fn softmax_row(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient_is_input() {
        // loss = mean(x^2) => dloss/dx = 2x/n
        let mut tape = Tape::new();
        let x = tape.param(Tensor::from_vec(1, 3, vec![1.0, -2.0, 3.0]));
        let loss = tape.mean_square(x);
        let grads = tape.backward(loss);
        let g = grads.wrt(&tape, x);
        for (gi, xi) in g.data().iter().zip([1.0, -2.0, 3.0]) {
            assert!((gi - 2.0 * xi / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::from_vec(1, 2, vec![0.3, 0.7]));
        let c = tape.constant(Tensor::scalar(5.0));
        let _ = x;
        let grads = tape.backward(c);
        assert_eq!(grads.wrt(&tape, x).data(), &[0.0, 0.0]);
    }

    #[test]
    fn softmax_pick_sums_to_one() {
        let mut tape = Tape::new();
        let logits = tape.constant(Tensor::from_vec(1, 4, vec![0.1, 2.0, -1.0, 0.5]));
        let mut total = 0.0;
        for m in 0..4 {
            let p = tape.softmax_pick(logits, &[m]);
            total += tape.value(p).item();
        }
        assert!((total - 1.0).abs() < 1e-12);
    }
}
