//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! Every operation appends a node holding its value; nodes are created after
//! their operands, so a reverse sweep over the node list is a valid
//! topological order for back-propagation.

use std::collections::HashMap;

use ndarray::{s, Array2, Axis};

use super::params::{Gradients, ParamId, ParamStore};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;
pub const LAYER_NORM_EPS: f64 = 1e-5;

enum Op {
    Leaf,
    Param,
    Add(Var, Var),
    AddRow(Var, Var),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Transpose(Var),
    Scale(Var, f64),
    MulConst(Var, Array2<f64>),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        xhat: Array2<f64>,
        inv_std: Vec<f64>,
        beta: Var,
    },
    MaskedSoftmax(Var),
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    Cols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    SumScalars(Vec<Var>),
    CrossEntropy {
        logits: Var,
        target: usize,
        probs: Vec<f64>,
    },
}

struct Node {
    value: Array2<f64>,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

fn gelu(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * x * (1.0 + t)
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    /// Scalar value of a 1×1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[[0, 0]]
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Leaf for a trainable parameter; repeated requests share one node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(v) = self.params.get(&id) {
            return *v;
        }
        let v = self.push(store.value(id).clone(), Op::Param);
        self.params.insert(id, v);
        v
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        self.push(value, Op::Add(a, b))
    }

    /// Adds a 1×n row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let value = self.value(a) + self.value(row);
        self.push(value, Op::AddRow(a, row))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        self.push(value, Op::MatMul(a, b))
    }

    /// `a · bᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(&self.value(b).t());
        self.push(value, Op::MatMulT(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).t().to_owned();
        self.push(value, Op::Transpose(a))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a) * factor;
        self.push(value, Op::Scale(a, factor))
    }

    /// Elementwise product with a constant (dropout masks).
    pub fn mul_const(&mut self, a: Var, factor: Array2<f64>) -> Var {
        let value = self.value(a) * &factor;
        self.push(value, Op::MulConst(a, factor))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(gelu);
        self.push(value, Op::Gelu(a))
    }

    /// Row-wise layer normalization with affine 1×n `gamma` and `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let n = xv.ncols() as f64;
        let mut xhat = xv.clone();
        let mut inv_std = Vec::with_capacity(xv.nrows());
        for mut row in xhat.rows_mut() {
            let mean = row.sum() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            row.mapv_inplace(|v| (v - mean) * inv);
            inv_std.push(inv);
        }
        let value = &xhat * self.value(gamma) + self.value(beta);
        self.push(value, Op::LayerNorm { x, gamma, xhat, inv_std, beta })
    }

    /// Row-wise softmax over the positions where `mask` is true; masked
    /// positions get exactly zero weight. A row with no open position is all zeros.
    pub fn masked_softmax(&mut self, x: Var, mask: &Array2<bool>) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.dim(), mask.dim(), "mask shape");
        let mut value = Array2::zeros(xv.dim());
        for ((xr, mr), mut out) in xv.rows().into_iter().zip(mask.rows()).zip(value.rows_mut()) {
            let max = xr
                .iter()
                .zip(mr.iter())
                .filter(|(_, &m)| m)
                .map(|(v, _)| *v)
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                continue;
            }
            let mut total = 0.0;
            for ((o, v), &m) in out.iter_mut().zip(xr.iter()).zip(mr.iter()) {
                if m {
                    *o = (v - max).exp();
                    total += *o;
                }
            }
            out.mapv_inplace(|o| o / total);
        }
        self.push(value, Op::MaskedSoftmax(x))
    }

    /// Rows of `table` selected by `ids`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = self.value(table);
        let mut value = Array2::zeros((ids.len(), t.ncols()));
        for (mut row, &id) in value.rows_mut().into_iter().zip(ids) {
            row.assign(&t.row(id));
        }
        self.push(value, Op::Gather { table, ids: ids.to_vec() })
    }

    /// Columns `start..start + width` of `x`.
    pub fn cols(&mut self, x: Var, start: usize, width: usize) -> Var {
        let value = self.value(x).slice(s![.., start..start + width]).to_owned();
        self.push(value, Op::Cols { x, start })
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let value = ndarray::concatenate(Axis(1), &views).expect("row counts agree");
        self.push(value, Op::ConcatCols(parts.to_vec()))
    }

    /// Sum of 1×1 nodes.
    pub fn sum_scalars(&mut self, parts: &[Var]) -> Var {
        let total: f64 = parts.iter().map(|p| self.scalar(*p)).sum();
        self.push(Array2::from_elem((1, 1), total), Op::SumScalars(parts.to_vec()))
    }

    /// Cross-entropy of a 1×C logit row against `target`. When `allowed` is
    /// given, the softmax runs over the allowed classes only.
    pub fn cross_entropy(&mut self, logits: Var, target: usize, allowed: Option<&[bool]>) -> Var {
        let row = self.value(logits).row(0).to_owned();
        let open = |j: usize| allowed.map_or(true, |a| a[j]);
        debug_assert!(open(target), "target class is masked out");
        let max = (0..row.len()).filter(|&j| open(j)).map(|j| row[j]).fold(f64::NEG_INFINITY, f64::max);
        let mut probs: Vec<f64> = (0..row.len()).map(|j| if open(j) { (row[j] - max).exp() } else { 0.0 }).collect();
        let total: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= total);
        let loss = -(row[target] - max - total.ln());
        self.push(Array2::from_elem((1, 1), loss), Op::CrossEntropy { logits, target, probs })
    }

    /// Back-propagates from a 1×1 `root`, returning gradients for every
    /// parameter in `store` (zeros for parameters not on the tape).
    pub fn backward(&self, root: Var, store: &ParamStore) -> Gradients {
        let grads = self.backward_nodes(root);
        let mut out = Gradients::zeros_like(store);
        for (id, var) in &self.params {
            if let Some(g) = &grads[var.0] {
                *out.get_mut(*id) += g;
            }
        }
        out
    }

    /// Gradient of `root` with respect to every node (`None` when unreachable).
    pub fn backward_nodes(&self, root: Var) -> Vec<Option<Array2<f64>>> {
        let mut grads: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Array2::ones(self.value(root).dim()));

        fn acc(grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
            match &mut grads[v.0] {
                Some(existing) => *existing += &g,
                slot => *slot = Some(g),
            }
        }

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf | Op::Param => {}
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g.clone());
                }
                Op::AddRow(a, row) => {
                    acc(&mut grads, *row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(&mut grads, *a, g.clone());
                }
                Op::MatMul(a, b) => {
                    acc(&mut grads, *a, g.dot(&self.value(*b).t()));
                    acc(&mut grads, *b, self.value(*a).t().dot(&g));
                }
                Op::MatMulT(a, b) => {
                    acc(&mut grads, *a, g.dot(self.value(*b)));
                    acc(&mut grads, *b, g.t().dot(self.value(*a)));
                }
                Op::Transpose(a) => acc(&mut grads, *a, g.t().to_owned()),
                Op::Scale(a, f) => acc(&mut grads, *a, &g * *f),
                Op::MulConst(a, m) => acc(&mut grads, *a, &g * m),
                Op::Gelu(a) => {
                    let d = ndarray::Zip::from(&g).and(self.value(*a)).map_collect(|g, x| g * gelu_grad(*x));
                    acc(&mut grads, *a, d);
                }
                Op::LayerNorm { x, gamma, xhat, inv_std, beta } => {
                    acc(&mut grads, *beta, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(&mut grads, *gamma, (&g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                    let dxhat = &g * self.value(*gamma);
                    let n = xhat.ncols() as f64;
                    let mut dx = Array2::zeros(xhat.dim());
                    for (r, mut out) in dx.rows_mut().into_iter().enumerate() {
                        let dr = dxhat.row(r);
                        let hr = xhat.row(r);
                        let sum_d: f64 = dr.sum();
                        let sum_dh: f64 = dr.iter().zip(hr.iter()).map(|(a, b)| a * b).sum();
                        for j in 0..out.len() {
                            out[j] = inv_std[r] / n * (n * dr[j] - sum_d - hr[j] * sum_dh);
                        }
                    }
                    acc(&mut grads, *x, dx);
                }
                Op::MaskedSoftmax(x) => {
                    let y = &node.value;
                    let mut dx = Array2::zeros(y.dim());
                    for ((yr, gr), mut out) in y.rows().into_iter().zip(g.rows()).zip(dx.rows_mut()) {
                        let dot: f64 = yr.iter().zip(gr.iter()).map(|(a, b)| a * b).sum();
                        for j in 0..out.len() {
                            out[j] = yr[j] * (gr[j] - dot);
                        }
                    }
                    acc(&mut grads, *x, dx);
                }
                Op::Gather { table, ids } => {
                    let mut dt = Array2::zeros(self.value(*table).dim());
                    for (r, &id) in ids.iter().enumerate() {
                        let mut row = dt.row_mut(id);
                        row += &g.row(r);
                    }
                    acc(&mut grads, *table, dt);
                }
                Op::Cols { x, start } => {
                    let mut dx = Array2::zeros(self.value(*x).dim());
                    dx.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    acc(&mut grads, *x, dx);
                }
                Op::ConcatCols(parts) => {
                    let mut at = 0;
                    for p in parts {
                        let w = self.value(*p).ncols();
                        acc(&mut grads, *p, g.slice(s![.., at..at + w]).to_owned());
                        at += w;
                    }
                }
                Op::SumScalars(parts) => {
                    for p in parts {
                        acc(&mut grads, *p, g.clone());
                    }
                }
                Op::CrossEntropy { logits, target, probs } => {
                    let scale = g[[0, 0]];
                    let mut d = Array2::from_shape_vec((1, probs.len()), probs.clone()).expect("row");
                    d[[0, *target]] -= 1.0;
                    acc(&mut grads, *logits, d * scale);
                }
            }
            grads[i] = Some(g);
        }
        grads
    }

    /// Gradient with respect to one node, as computed by [`Tape::backward_nodes`].
    pub fn grad_of(&self, root: Var, of: Var) -> Option<Array2<f64>> {
        self.backward_nodes(root).swap_remove(of.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn numeric_grad(f: impl Fn(&Array2<f64>) -> f64, x: &Array2<f64>) -> Array2<f64> {
        let eps = 1e-6;
        let mut out = Array2::zeros(x.dim());
        for idx in ndarray::indices(x.dim()) {
            let mut p = x.clone();
            p[idx] += eps;
            let mut m = x.clone();
            m[idx] -= eps;
            out[idx] = (f(&p) - f(&m)) / (2.0 * eps);
        }
        out
    }

    fn assert_close(a: &Array2<f64>, b: &Array2<f64>, tol: f64) {
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < tol, "{a:?} vs {b:?}");
        }
    }

    /// Builds a scalar from one input through `build`, returning value and input grad.
    fn run(x: &Array2<f64>, build: &dyn Fn(&mut Tape, Var) -> Var) -> (f64, Array2<f64>) {
        let mut t = Tape::new();
        let v = t.constant(x.clone());
        let out = build(&mut t, v);
        (t.scalar(out), t.grad_of(out, v).unwrap())
    }

    fn check(x: Array2<f64>, build: &dyn Fn(&mut Tape, Var) -> Var) {
        let (_, analytic) = run(&x, build);
        let numeric = numeric_grad(|p| run(p, build).0, &x);
        assert_close(&analytic, &numeric, 1e-7);
    }

    fn reduce(t: &mut Tape, v: Var) -> Var {
        // weighted sum so every entry gets a distinct gradient
        let (r, c) = t.value(v).dim();
        let w = Array2::from_shape_fn((c, 1), |(i, _)| 0.3 + i as f64 * 0.7);
        let w = t.constant(w);
        let col = t.matmul(v, w);
        let ones = t.constant(Array2::from_shape_fn((1, r), |(_, j)| 1.0 + j as f64));
        let s = t.matmul(ones, col);
        t.scale(s, 1.0)
    }

    #[test]
    fn gelu_layer_norm_softmax_grads() {
        let x = array![[0.3, -1.2, 2.0], [0.5, 0.1, -0.4]];
        check(x.clone(), &|t, v| {
            let y = t.gelu(v);
            reduce(t, y)
        });
        check(x.clone(), &|t, v| {
            let g = t.constant(array![[1.5, 0.5, -1.0]]);
            let b = t.constant(array![[0.1, 0.2, 0.3]]);
            let y = t.layer_norm(v, g, b);
            reduce(t, y)
        });
        let mask = array![[true, false, true], [true, true, true]];
        check(x.clone(), &|t, v| {
            let y = t.masked_softmax(v, &mask);
            reduce(t, y)
        });
        check(x, &|t, v| {
            let y = t.cross_entropy(v, 2, None);
            let z = t.cross_entropy(y, 0, None);
            t.add(y, z)
        });
    }

    #[test]
    fn matmul_transpose_cols_concat_grads() {
        let x = array![[0.3, -1.2, 2.0], [0.5, 0.1, -0.4]];
        let w = array![[0.2, 0.1], [-0.3, 0.4], [0.5, -0.6]];
        check(x.clone(), &|t, v| {
            let wv = t.constant(w.clone());
            let y = t.matmul(v, wv);
            let yt = t.transpose(y);
            let z = t.matmul_t(yt, yt);
            reduce(t, z)
        });
        check(x.clone(), &|t, v| {
            let a = t.cols(v, 1, 2);
            let b = t.cols(v, 0, 1);
            let c = t.concat_cols(&[a, b, a]);
            reduce(t, c)
        });
        check(x, &|t, v| {
            let r = t.constant(array![[1.0, 2.0, 3.0]]);
            let y = t.add_row(v, r);
            let y = t.mul_const(y, array![[0.0, 2.0, 1.0], [1.0, 1.0, 0.5]]);
            let ids = [1, 0, 1];
            let g = t.gather(y, &ids);
            reduce(t, g)
        });
    }

    #[test]
    fn masked_softmax_zeroes_closed_positions() {
        let mut t = Tape::new();
        let x = t.constant(array![[0.0, 2f64.ln(), 0.0], [1.0, 1.0, 1.0]]);
        let y = t.masked_softmax(x, &array![[true, false, true], [false, false, false]]);
        assert_eq!(t.value(y), &array![[0.5, 0.0, 0.5], [0.0, 0.0, 0.0]]);
    }

    #[test]
    fn uniform_logits_cross_entropy_is_ln_c() {
        let mut t = Tape::new();
        let x = t.constant(Array2::zeros((1, 5)));
        let l = t.cross_entropy(x, 3, None);
        assert!((t.scalar(l) - 5f64.ln()).abs() < 1e-15);
        let allowed = [true, false, true, false, false];
        let l = t.cross_entropy(x, 2, Some(&allowed));
        assert!((t.scalar(l) - 2f64.ln()).abs() < 1e-15);
    }
}
