//! Reverse-mode differentiation over a linear tape of array ops.
//!
//! Every op appends one node holding its forward value. `backward` walks the
//! nodes once in reverse order and accumulates adjoints into the parameters
//! that were bound from a [`ParameterTree`].

use std::collections::HashMap;

use crate::array::{gemm, RealArray};
use crate::autodiff::params::{Gradients, ParameterTree};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(String),
    Linear { x: Var, w: Var, b: Option<Var> },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Abs(Var),
    Elu(Var),
    ConcatCols(Var, Var),
    ConcatRows(Vec<Var>),
    SliceCols { x: Var, start: usize },
    Reshape(Var),
    MaskedSoftmax(Var),
    GraphAttention { h: Var, probs: Vec<f64>, nodes: usize },
    GatherCols { x: Var, idx: Vec<usize> },
    SumCols(Var),
    Sum(Var),
    MaskedMse { pred: Var, residual: Vec<f64>, denom: f64 },
    RowVecMat { q: Var, w: Var, width: usize },
}

struct Node {
    value: RealArray,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of executed ops.
pub struct Tape {
    nodes: Vec<Node>,
    bound: HashMap<String, Var>,
    frozen: bool,
    consumed: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(op: &'static str, lhs: &RealArray, rhs: &RealArray) -> Error {
    Error::Shape {
        op,
        lhs: lhs.shape().to_vec(),
        rhs: rhs.shape().to_vec(),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            bound: HashMap::new(),
            frozen: false,
            consumed: false,
        }
    }

    /// A tape whose bound parameters never require gradients. Used for
    /// rollouts and target-network evaluation.
    pub fn frozen() -> Self {
        Self {
            frozen: true,
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &RealArray {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: RealArray, op: Op, requires_grad: bool, name: &'static str) -> Result<Var> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        value.ensure_finite(name)?;
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Records a constant input.
    pub fn constant(&mut self, value: RealArray) -> Result<Var> {
        self.push(value, Op::Leaf, false, "constant")
    }

    /// Binds the named parameter of `tree`. Binding the same name twice
    /// returns the same node, so shared parameters accumulate one gradient.
    pub fn param(&mut self, tree: &ParameterTree, name: &str) -> Result<Var> {
        if let Some(&v) = self.bound.get(name) {
            return Ok(v);
        }
        let entry = tree
            .get(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))?;
        let rg = entry.trainable && !self.frozen;
        let v = self.push(entry.value.clone(), Op::Param(name.to_string()), rg, "param")?;
        self.bound.insert(name.to_string(), v);
        Ok(v)
    }

    /// Names of all parameters bound on this tape.
    pub fn bound_params(&self) -> impl Iterator<Item = &str> {
        self.bound.keys().map(String::as_str)
    }

    /// `y = x Wᵀ + bias` for `x: [m×in]`, `W: [out×in]`, `bias: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xv = self.value(x);
        let wv = self.value(w);
        if xv.shape().len() != 2 || wv.shape().len() != 2 || xv.cols() != wv.cols() {
            return Err(shape_err("linear", xv, wv));
        }
        let (m, k, n) = (xv.rows(), xv.cols(), wv.rows());
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, xv.data(), false, wv.data(), true, &mut out, 0.0);
        if let Some(b) = b {
            let bv = self.value(b);
            if bv.len() != n {
                return Err(shape_err("linear(bias)", wv, bv));
            }
            for row in out.chunks_mut(n) {
                for (o, bias) in row.iter_mut().zip(bv.data()) {
                    *o += bias;
                }
            }
        }
        let mut deps = vec![x, w];
        deps.extend(b);
        let rg = self.rg(&deps);
        self.push(RealArray::matrix(m, n, out)?, Op::Linear { x, w, b }, rg, "linear")
    }

    /// Binds `{prefix}.weight` and `{prefix}.bias` and applies them.
    pub fn dense(&mut self, tree: &ParameterTree, prefix: &str, x: Var) -> Result<Var> {
        let w = self.param(tree, &format!("{prefix}.weight"))?;
        let b = self.param(tree, &format!("{prefix}.bias"))?;
        self.linear(x, w, Some(b))
    }

    fn zip_op(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<RealArray> {
        let av = self.value(a);
        let bv = self.value(b);
        if av.shape() != bv.shape() {
            return Err(shape_err(name, av, bv));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| f(*x, *y)).collect();
        RealArray::new(av.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_op(a, b, "add", |x, y| x + y)?;
        let rg = self.rg(&[a, b]);
        self.push(v, Op::Add(a, b), rg, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_op(a, b, "sub", |x, y| x - y)?;
        let rg = self.rg(&[a, b]);
        self.push(v, Op::Sub(a, b), rg, "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_op(a, b, "mul", |x, y| x * y)?;
        let rg = self.rg(&[a, b]);
        self.push(v, Op::Mul(a, b), rg, "mul")
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let v = self.value(x).map(|a| a * factor);
        let rg = self.rg(&[x]);
        self.push(v, Op::Scale(x, factor), rg, "scale")
    }

    fn unary(&mut self, x: Var, op: Op, name: &'static str, f: impl Fn(f64) -> f64) -> Result<Var> {
        let v = self.value(x).map(f);
        let rg = self.rg(&[x]);
        self.push(v, op, rg, name)
    }

    /// Elementwise `max(0, x)`; the subgradient at 0 is 0.
    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Relu(x), "relu", |a| if a > 0.0 { a } else { 0.0 })
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Sigmoid(x), "sigmoid", |a| {
            if a >= 0.0 {
                1.0 / (1.0 + (-a).exp())
            } else {
                let e = a.exp();
                e / (1.0 + e)
            }
        })
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Tanh(x), "tanh", f64::tanh)
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Abs(x), "abs", f64::abs)
    }

    pub fn elu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Elu(x), "elu", |a| if a > 0.0 { a } else { a.exp_m1() })
    }

    /// Row-wise concatenation `[a ‖ b]` of `[n×p]` and `[n×q]`.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let av = self.value(a);
        let bv = self.value(b);
        if av.rows() != bv.rows() {
            return Err(shape_err("concat_cols", av, bv));
        }
        let (n, p, q) = (av.rows(), av.cols(), bv.cols());
        let mut data = Vec::with_capacity(n * (p + q));
        for r in 0..n {
            data.extend_from_slice(av.row(r));
            data.extend_from_slice(bv.row(r));
        }
        let rg = self.rg(&[a, b]);
        self.push(RealArray::matrix(n, p + q, data)?, Op::ConcatCols(a, b), rg, "concat_cols")
    }

    /// Stacks matrices with equal column counts on top of each other.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or(Error::EmptyBatch)?;
        let cols = self.value(*first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let pv = self.value(p);
            if pv.cols() != cols {
                return Err(shape_err("concat_rows", self.value(*first), pv));
            }
            rows += pv.rows();
            data.extend_from_slice(pv.data());
        }
        let rg = self.rg(parts);
        self.push(RealArray::matrix(rows, cols, data)?, Op::ConcatRows(parts.to_vec()), rg, "concat_rows")
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        if start + len > xv.cols() {
            return Err(Error::Shape {
                op: "slice_cols",
                lhs: xv.shape().to_vec(),
                rhs: vec![start, len],
            });
        }
        let rows = xv.rows();
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&xv.row(r)[start..start + len]);
        }
        let rg = self.rg(&[x]);
        self.push(RealArray::matrix(rows, len, data)?, Op::SliceCols { x, start }, rg, "slice_cols")
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).reshaped(shape)?;
        let rg = self.rg(&[x]);
        self.push(v, Op::Reshape(x), rg, "reshape")
    }

    /// Row-wise softmax restricted to entries where `mask` is 1. Masked
    /// entries are exactly 0. Every row needs at least one live entry.
    pub fn masked_softmax(&mut self, logits: Var, mask: &RealArray) -> Result<Var> {
        let lv = self.value(logits);
        if lv.len() != mask.len() || lv.cols() != mask.cols() {
            return Err(shape_err("masked_softmax", lv, mask));
        }
        let cols = lv.cols();
        let mut out = vec![0.0; lv.len()];
        for r in 0..lv.rows() {
            let row = lv.row(r);
            let m = mask.row(r);
            softmax_row(row, m, &mut out[r * cols..(r + 1) * cols])?;
        }
        let rg = self.rg(&[logits]);
        let value = RealArray::new(lv.shape().to_vec(), out)?;
        self.push(value, Op::MaskedSoftmax(logits), rg, "masked_softmax")
    }

    /// Dot-product attention over graph neighbourhoods.
    ///
    /// `h` stacks `blocks` graphs of `nodes` rows each; `adjacency` holds one
    /// `nodes × nodes` {0,1} matrix per block. Node `v` receives
    /// `Σ_u softmax_u(h_v·h_u) h_u` over its neighbours; nodes without
    /// neighbours receive zeros.
    pub fn graph_attention(&mut self, h: Var, adjacency: &[f64], nodes: usize) -> Result<Var> {
        let hv = self.value(h);
        if !hv.is_finite() {
            return Err(Error::NonFinite("graph_attention"));
        }
        let d = hv.cols();
        if nodes == 0 || !hv.rows().is_multiple_of(nodes) || adjacency.len() != (hv.rows() / nodes) * nodes * nodes {
            return Err(Error::Shape {
                op: "graph_attention",
                lhs: hv.shape().to_vec(),
                rhs: vec![adjacency.len(), nodes],
            });
        }
        let blocks = hv.rows() / nodes;
        let mut probs = vec![0.0; adjacency.len()];
        let mut out = vec![0.0; hv.len()];
        let mut logits = vec![0.0; nodes];
        for b in 0..blocks {
            let base = b * nodes;
            let adj = &adjacency[b * nodes * nodes..(b + 1) * nodes * nodes];
            for v in 0..nodes {
                let mask = &adj[v * nodes..(v + 1) * nodes];
                if mask.iter().all(|&m| m == 0.0) {
                    continue;
                }
                let hv_row = hv.row(base + v);
                for u in 0..nodes {
                    logits[u] = if mask[u] != 0.0 {
                        dot(hv_row, hv.row(base + u))
                    } else {
                        0.0
                    };
                }
                let p = &mut probs[(b * nodes + v) * nodes..(b * nodes + v + 1) * nodes];
                softmax_row(&logits, mask, p)?;
                let o = &mut out[(base + v) * d..(base + v + 1) * d];
                for (u, &pu) in p.iter().enumerate() {
                    if pu != 0.0 {
                        for (oi, hi) in o.iter_mut().zip(hv.row(base + u)) {
                            *oi += pu * hi;
                        }
                    }
                }
            }
        }
        let rg = self.rg(&[h]);
        let value = RealArray::new(hv.shape().to_vec(), out)?;
        self.push(value, Op::GraphAttention { h, probs, nodes }, rg, "graph_attention")
    }

    /// Picks `x[r, idx[r]]` for every row, giving `[m×1]`.
    pub fn gather_cols(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        if idx.len() != xv.rows() || idx.iter().any(|&i| i >= xv.cols()) {
            return Err(Error::Shape {
                op: "gather_cols",
                lhs: xv.shape().to_vec(),
                rhs: vec![idx.len()],
            });
        }
        let data = idx.iter().enumerate().map(|(r, &c)| xv.get2(r, c)).collect();
        let rg = self.rg(&[x]);
        let value = RealArray::matrix(idx.len(), 1, data)?;
        self.push(value, Op::GatherCols { x, idx: idx.to_vec() }, rg, "gather_cols")
    }

    /// Sums each row, giving `[m×1]`.
    pub fn sum_cols(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let data: Vec<f64> = (0..xv.rows()).map(|r| xv.row(r).iter().sum()).collect();
        let rg = self.rg(&[x]);
        let value = RealArray::matrix(data.len(), 1, data)?;
        self.push(value, Op::SumCols(x), rg, "sum_cols")
    }

    /// Sum of all entries as a scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).sum();
        let rg = self.rg(&[x]);
        self.push(RealArray::scalar(s), Op::Sum(x), rg, "sum")
    }

    /// `Σ mask·(pred − target)² / Σ mask`, with `target` and `mask` constant.
    pub fn masked_mse(&mut self, pred: Var, target: &RealArray, mask: &RealArray) -> Result<Var> {
        let pv = self.value(pred);
        if pv.len() != target.len() || pv.len() != mask.len() {
            return Err(shape_err("masked_mse", pv, target));
        }
        let denom: f64 = mask.sum();
        if denom <= 0.0 {
            return Err(Error::EmptyBatch);
        }
        let residual: Vec<f64> = pv
            .data()
            .iter()
            .zip(target.data())
            .zip(mask.data())
            .map(|((p, t), m)| m * (p - t))
            .collect();
        let loss = residual.iter().map(|r| r * r).sum::<f64>() / denom;
        let rg = self.rg(&[pred]);
        self.push(RealArray::scalar(loss), Op::MaskedMse { pred, residual, denom }, rg, "masked_mse")
    }

    /// Per-row vector–matrix product: `out[r, j] = Σ_i q[r, i] · w[r, i·width + j]`.
    pub fn row_vec_mat(&mut self, q: Var, w: Var, width: usize) -> Result<Var> {
        let qv = self.value(q);
        let wv = self.value(w);
        if qv.rows() != wv.rows() || qv.cols() * width != wv.cols() {
            return Err(shape_err("row_vec_mat", qv, wv));
        }
        let m = qv.rows();
        let mut out = vec![0.0; m * width];
        for r in 0..m {
            let wr = wv.row(r);
            let o = &mut out[r * width..(r + 1) * width];
            for (i, qi) in qv.row(r).iter().enumerate() {
                for (oj, wij) in o.iter_mut().zip(&wr[i * width..(i + 1) * width]) {
                    *oj += qi * wij;
                }
            }
        }
        let rg = self.rg(&[q, w]);
        self.push(RealArray::matrix(m, width, out)?, Op::RowVecMat { q, w, width }, rg, "row_vec_mat")
    }

    /// Reverse pass from a scalar `output`. Returns a gradient for every
    /// trainable entry of `params`; entries that did not take part get zeros.
    /// A tape supports a single backward pass.
    pub fn backward(&mut self, output: Var, params: &ParameterTree) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        let out_shape = self.value(output).shape().to_vec();
        if self.value(output).len() != 1 {
            return Err(Error::NonScalar(out_shape));
        }
        self.consumed = true;

        let mut grads: Vec<Option<RealArray>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(RealArray::filled(&out_shape, 1.0));
        let mut result = Gradients::new();

        for i in (0..=output.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let nodes = &self.nodes;
            let val = |v: Var| &nodes[v.0].value;
            let needs = |v: Var| nodes[v.0].requires_grad;
            let gd = g.data();
            match &node.op {
                Op::Leaf => {}
                Op::Param(name) => {
                    result.insert(name.clone(), g);
                    continue;
                }
                Op::Linear { x, w, b } => {
                    let (xv, wv) = (val(*x), val(*w));
                    let (m, k, n) = (xv.rows(), xv.cols(), wv.rows());
                    if needs(*x) {
                        accumulate(&mut grads, *x, xv, |dx| gemm(m, n, k, gd, false, wv.data(), false, dx, 1.0));
                    }
                    if needs(*w) {
                        accumulate(&mut grads, *w, wv, |dw| gemm(n, m, k, gd, true, xv.data(), false, dw, 1.0));
                    }
                    if let Some(b) = b.filter(|b| needs(*b)) {
                        accumulate(&mut grads, b, val(b), |db| {
                            for row in gd.chunks(n) {
                                for (d, v) in db.iter_mut().zip(row) {
                                    *d += v;
                                }
                            }
                        });
                    }
                }
                Op::Add(a, b) => {
                    for v in [*a, *b] {
                        if needs(v) {
                            accumulate(&mut grads, v, val(v), |d| add_into(d, gd));
                        }
                    }
                }
                Op::Sub(a, b) => {
                    if needs(*a) {
                        accumulate(&mut grads, *a, val(*a), |d| add_into(d, gd));
                    }
                    if needs(*b) {
                        accumulate(&mut grads, *b, val(*b), |d| {
                            d.iter_mut().zip(gd).for_each(|(d, g)| *d -= g)
                        });
                    }
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (val(*a), val(*b));
                    if needs(*a) {
                        accumulate(&mut grads, *a, av, |d| {
                            for ((d, g), o) in d.iter_mut().zip(gd).zip(bv.data()) {
                                *d += g * o;
                            }
                        });
                    }
                    if needs(*b) {
                        accumulate(&mut grads, *b, bv, |d| {
                            for ((d, g), o) in d.iter_mut().zip(gd).zip(av.data()) {
                                *d += g * o;
                            }
                        });
                    }
                }
                Op::Scale(x, f) => {
                    accumulate(&mut grads, *x, val(*x), |d| {
                        d.iter_mut().zip(gd).for_each(|(d, g)| *d += g * f)
                    });
                }
                Op::Relu(x) => {
                    let xv = val(*x);
                    accumulate(&mut grads, *x, xv, |d| {
                        for ((d, g), a) in d.iter_mut().zip(gd).zip(xv.data()) {
                            if *a > 0.0 {
                                *d += g;
                            }
                        }
                    });
                }
                Op::Sigmoid(x) => {
                    let y = &node.value;
                    accumulate(&mut grads, *x, val(*x), |d| {
                        for ((d, g), s) in d.iter_mut().zip(gd).zip(y.data()) {
                            *d += g * s * (1.0 - s);
                        }
                    });
                }
                Op::Tanh(x) => {
                    let y = &node.value;
                    accumulate(&mut grads, *x, val(*x), |d| {
                        for ((d, g), t) in d.iter_mut().zip(gd).zip(y.data()) {
                            *d += g * (1.0 - t * t);
                        }
                    });
                }
                Op::Abs(x) => {
                    let xv = val(*x);
                    accumulate(&mut grads, *x, xv, |d| {
                        for ((d, g), a) in d.iter_mut().zip(gd).zip(xv.data()) {
                            if *a > 0.0 {
                                *d += g;
                            } else if *a < 0.0 {
                                *d -= g;
                            }
                        }
                    });
                }
                Op::Elu(x) => {
                    let xv = val(*x);
                    accumulate(&mut grads, *x, xv, |d| {
                        for ((d, g), a) in d.iter_mut().zip(gd).zip(xv.data()) {
                            *d += if *a > 0.0 { *g } else { g * a.exp() };
                        }
                    });
                }
                Op::ConcatCols(a, b) => {
                    let (av, bv) = (val(*a), val(*b));
                    let (p, q) = (av.cols(), bv.cols());
                    if needs(*a) {
                        accumulate(&mut grads, *a, av, |d| {
                            for (dr, gr) in d.chunks_mut(p.max(1)).zip(gd.chunks(p + q)) {
                                add_into(dr, &gr[..p]);
                            }
                        });
                    }
                    if needs(*b) && q > 0 {
                        accumulate(&mut grads, *b, bv, |d| {
                            for (dr, gr) in d.chunks_mut(q).zip(gd.chunks(p + q)) {
                                add_into(dr, &gr[p..]);
                            }
                        });
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let pv = val(p);
                        let len = pv.len();
                        if needs(p) {
                            accumulate(&mut grads, p, pv, |d| add_into(d, &gd[offset..offset + len]));
                        }
                        offset += len;
                    }
                }
                Op::SliceCols { x, start } => {
                    let xv = val(*x);
                    let (cols, len) = (xv.cols(), g.cols());
                    accumulate(&mut grads, *x, xv, |d| {
                        for (dr, gr) in d.chunks_mut(cols).zip(gd.chunks(len)) {
                            add_into(&mut dr[*start..*start + len], gr);
                        }
                    });
                }
                Op::Reshape(x) => {
                    accumulate(&mut grads, *x, val(*x), |d| add_into(d, gd));
                }
                Op::MaskedSoftmax(x) => {
                    let y = &node.value;
                    let cols = y.cols();
                    accumulate(&mut grads, *x, val(*x), |d| {
                        for r in 0..y.rows() {
                            let p = y.row(r);
                            let gr = &gd[r * cols..(r + 1) * cols];
                            let dot_pg: f64 = p.iter().zip(gr).map(|(a, b)| a * b).sum();
                            for c in 0..cols {
                                d[r * cols + c] += p[c] * (gr[c] - dot_pg);
                            }
                        }
                    });
                }
                Op::GraphAttention { h, probs, nodes } => {
                    let hv = val(*h);
                    let n = *nodes;
                    let dim = hv.cols();
                    accumulate(&mut grads, *h, hv, |dh| {
                        let mut dp = vec![0.0; n];
                        for b in 0..hv.rows() / n {
                            let base = b * n;
                            for v in 0..n {
                                let p = &probs[(base + v) * n..(base + v + 1) * n];
                                if p.iter().all(|&x| x == 0.0) {
                                    continue;
                                }
                                let ga = &gd[(base + v) * dim..(base + v + 1) * dim];
                                for u in 0..n {
                                    dp[u] = if p[u] != 0.0 { dot(ga, hv.row(base + u)) } else { 0.0 };
                                }
                                let s: f64 = p.iter().zip(&dp).map(|(a, b)| a * b).sum();
                                for u in 0..n {
                                    if p[u] == 0.0 {
                                        continue;
                                    }
                                    // value path
                                    axpy(&mut dh[(base + u) * dim..(base + u + 1) * dim], p[u], ga);
                                    // logit path: s_vu = h_v·h_u
                                    let ds = p[u] * (dp[u] - s);
                                    if ds != 0.0 {
                                        axpy(&mut dh[(base + v) * dim..(base + v + 1) * dim], ds, hv.row(base + u));
                                        axpy(&mut dh[(base + u) * dim..(base + u + 1) * dim], ds, hv.row(base + v));
                                    }
                                }
                            }
                        }
                    });
                }
                Op::GatherCols { x, idx } => {
                    let xv = val(*x);
                    let cols = xv.cols();
                    accumulate(&mut grads, *x, xv, |d| {
                        for (r, &c) in idx.iter().enumerate() {
                            d[r * cols + c] += gd[r];
                        }
                    });
                }
                Op::SumCols(x) => {
                    let xv = val(*x);
                    let cols = xv.cols();
                    accumulate(&mut grads, *x, xv, |d| {
                        for (r, dr) in d.chunks_mut(cols.max(1)).enumerate() {
                            dr.iter_mut().for_each(|v| *v += gd[r]);
                        }
                    });
                }
                Op::Sum(x) => {
                    accumulate(&mut grads, *x, val(*x), |d| d.iter_mut().for_each(|v| *v += gd[0]));
                }
                Op::MaskedMse { pred, residual, denom } => {
                    let scale = 2.0 * gd[0] / denom;
                    accumulate(&mut grads, *pred, val(*pred), |d| {
                        for (d, r) in d.iter_mut().zip(residual) {
                            *d += scale * r;
                        }
                    });
                }
                Op::RowVecMat { q, w, width } => {
                    let (qv, wv) = (val(*q), val(*w));
                    let e = *width;
                    let n = qv.cols();
                    if needs(*q) {
                        accumulate(&mut grads, *q, qv, |d| {
                            for r in 0..qv.rows() {
                                let go = &gd[r * e..(r + 1) * e];
                                let wr = wv.row(r);
                                for i in 0..n {
                                    d[r * n + i] += dot(go, &wr[i * e..(i + 1) * e]);
                                }
                            }
                        });
                    }
                    if needs(*w) {
                        accumulate(&mut grads, *w, wv, |d| {
                            for r in 0..qv.rows() {
                                let go = &gd[r * e..(r + 1) * e];
                                for (i, qi) in qv.row(r).iter().enumerate() {
                                    let off = r * n * e + i * e;
                                    axpy(&mut d[off..off + e], *qi, go);
                                }
                            }
                        });
                    }
                }
            }
        }

        for (name, entry) in params.iter() {
            if entry.trainable && result.get(name).is_none() {
                result.insert(name, RealArray::zeros(entry.value.shape()));
            }
        }
        Ok(result)
    }
}

fn accumulate(grads: &mut [Option<RealArray>], v: Var, like: &RealArray, f: impl FnOnce(&mut [f64])) {
    let slot = grads[v.0].get_or_insert_with(|| RealArray::zeros(like.shape()));
    f(slot.data_mut());
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

fn axpy(dst: &mut [f64], alpha: f64, x: &[f64]) {
    dst.iter_mut().zip(x).for_each(|(d, s)| *d += alpha * s);
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Softmax of `logits` over entries where `mask != 0`, written into `out`
/// (masked entries set to exactly 0). Uses max-subtraction.
pub(crate) fn softmax_row(logits: &[f64], mask: &[f64], out: &mut [f64]) -> Result<()> {
    let max = logits
        .iter()
        .zip(mask)
        .filter(|(_, m)| **m != 0.0)
        .map(|(l, _)| *l)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::DegenerateMask);
    }
    let mut total = 0.0;
    for ((o, l), m) in out.iter_mut().zip(logits).zip(mask) {
        *o = if *m != 0.0 { (l - max).exp() } else { 0.0 };
        total += *o;
    }
    out.iter_mut().for_each(|o| *o /= total);
    Ok(())
}
