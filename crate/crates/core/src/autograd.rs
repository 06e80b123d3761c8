//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Graph`] is a tape: every operation appends a node holding its forward
//! value, and [`Graph::backward`] walks the tape in reverse accumulating
//! gradients. Graphs are built fresh for every step and thrown away.

use ndarray::{s, Array2, Axis};

pub type Tensor = Array2<f64>;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    MulScalar(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Recip(Var),
    Clamp(Var, f64, f64),
    SoftmaxRows(Var),
    SoftmaxCols(Var),
    LogSoftmaxRows(Var),
    LayerNormRows(Var, Tensor),
    NormalizeRows(Var, Vec<f64>),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    PickPerRow(Var, Vec<usize>),
    Element(Var, usize, usize),
    MaxCols(Var, Vec<usize>),
    Sum(Var),
    Mean(Var),
    StraightThrough(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Computation tape.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
}

fn row_argmax(row: ndarray::ArrayView1<f64>) -> usize {
    // first maximum wins
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}

fn softmax_rows(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let z = row.sum();
        row.mapv_inplace(|v| v / z);
    }
    out
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn unary(&mut self, a: Var, value: Tensor, op: Op) -> Var {
        let rg = self.rg(a);
        self.push(value, op, rg)
    }

    fn binary(&mut self, a: Var, b: Var, value: Tensor, op: Op) -> Var {
        let rg = self.rg(a) || self.rg(b);
        self.push(value, op, rg)
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Tensor::from_elem((1, 1), value))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        self.binary(a, b, value, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).t().to_owned();
        self.unary(a, value, Op::Transpose(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add: shape mismatch");
        let value = self.value(a) + self.value(b);
        self.binary(a, b, value, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "sub: shape mismatch");
        let value = self.value(a) - self.value(b);
        self.binary(a, b, value, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mul: shape mismatch");
        let value = self.value(a) * self.value(b);
        self.binary(a, b, value, Op::Mul(a, b))
    }

    /// `a (n×c) + row (1×c)` broadcast over rows.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        assert_eq!(self.shape(row).0, 1);
        let value = self.value(a) + self.value(row);
        self.binary(a, row, value, Op::AddRow(a, row))
    }

    /// `a (n×c) ⊙ row (1×c)` broadcast over rows.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        assert_eq!(self.shape(row).0, 1);
        let value = self.value(a) * self.value(row);
        self.binary(a, row, value, Op::MulRow(a, row))
    }

    /// `a (n×c) ⊙ col (n×1)` broadcast over columns.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Var {
        assert_eq!(self.shape(col).1, 1);
        let value = self.value(a) * self.value(col);
        self.binary(a, col, value, Op::MulCol(a, col))
    }

    /// `a * s` where `s` is 1×1.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Var {
        assert_eq!(self.shape(s), (1, 1));
        let k = self.scalar_value(s);
        let value = self.value(a) * k;
        self.binary(a, s, value, Op::MulScalar(a, s))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a) * k;
        self.unary(a, value, Op::Scale(a, k))
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a) + k;
        self.unary(a, value, Op::AddScalar(a))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    /// `1 - a`
    pub fn one_minus(&mut self, a: Var) -> Var {
        let n = self.neg(a);
        self.add_scalar(n, 1.0)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| 1.0 / (1.0 + (-x).exp()));
        self.unary(a, value, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::tanh);
        self.unary(a, value, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| x.max(0.0));
        self.unary(a, value, Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::exp);
        self.unary(a, value, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::ln);
        self.unary(a, value, Op::Log(a))
    }

    pub fn recip(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| 1.0 / x);
        self.unary(a, value, Op::Recip(a))
    }

    /// Elementwise clamp; gradient is zero where the clamp is active.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let value = self.value(a).mapv(|x| x.clamp(lo, hi));
        self.unary(a, value, Op::Clamp(a, lo, hi))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let value = softmax_rows(self.value(a));
        self.unary(a, value, Op::SoftmaxRows(a))
    }

    pub fn softmax_cols(&mut self, a: Var) -> Var {
        let value = softmax_rows(&self.value(a).t().to_owned()).t().to_owned();
        self.unary(a, value, Op::SoftmaxCols(a))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        for mut row in value.rows_mut() {
            let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let lse = m + row.mapv(|v| (v - m).exp()).sum().ln();
            row.mapv_inplace(|v| v - lse);
        }
        self.unary(a, value, Op::LogSoftmaxRows(a))
    }

    /// Per-row standardisation without affine parameters.
    pub fn layer_norm_rows(&mut self, a: Var, eps: f64) -> Var {
        let x = self.value(a);
        let (n, c) = x.dim();
        let mut value = x.clone();
        let mut inv_std = Tensor::zeros((n, 1));
        for (i, mut row) in value.rows_mut().into_iter().enumerate() {
            let mean = row.sum() / c as f64;
            let var = row.mapv(|v| (v - mean) * (v - mean)).sum() / c as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std[[i, 0]] = inv;
            row.mapv_inplace(|v| (v - mean) * inv);
        }
        self.unary(a, value, Op::LayerNormRows(a, inv_std))
    }

    /// Scales every row to unit L2 norm; zero rows stay zero.
    pub fn normalize_rows(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        let mut norms = Vec::with_capacity(value.nrows());
        for mut row in value.rows_mut() {
            let n = row.dot(&row).sqrt();
            norms.push(n);
            if n > 0.0 {
                row.mapv_inplace(|v| v / n);
            } else {
                row.fill(0.0);
            }
        }
        self.unary(a, value, Op::NormalizeRows(a, norms))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let views: Vec<_> = parts.iter().map(|v| self.value(*v).view()).collect();
        let value = ndarray::concatenate(Axis(0), &views).expect("concat_rows: column mismatch");
        let rg = parts.iter().any(|v| self.rg(*v));
        self.push(value, Op::ConcatRows(parts.to_vec()), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let views: Vec<_> = parts.iter().map(|v| self.value(*v).view()).collect();
        let value = ndarray::concatenate(Axis(1), &views).expect("concat_cols: row mismatch");
        let rg = parts.iter().any(|v| self.rg(*v));
        self.push(value, Op::ConcatCols(parts.to_vec()), rg)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let value = self.value(a).slice(s![start..start + len, ..]).to_owned();
        self.unary(a, value, Op::SliceRows(a, start))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let value = self.value(a).slice(s![.., start..start + len]).to_owned();
        self.unary(a, value, Op::SliceCols(a, start))
    }

    /// Row gather; indices may repeat (embedding lookup).
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let value = self.value(a).select(Axis(0), idx);
        self.unary(a, value, Op::GatherRows(a, idx.to_vec()))
    }

    /// `out[i] = a[i, idx[i]]`, shape n×1.
    pub fn pick_per_row(&mut self, a: Var, idx: &[usize]) -> Var {
        let x = self.value(a);
        assert_eq!(x.nrows(), idx.len());
        let value = Tensor::from_shape_fn((idx.len(), 1), |(i, _)| x[[i, idx[i]]]);
        self.unary(a, value, Op::PickPerRow(a, idx.to_vec()))
    }

    pub fn element(&mut self, a: Var, r: usize, c: usize) -> Var {
        let value = Tensor::from_elem((1, 1), self.value(a)[[r, c]]);
        self.unary(a, value, Op::Element(a, r, c))
    }

    /// Row-wise maximum, n×1. Ties resolve to the first column.
    pub fn max_rows(&mut self, a: Var) -> Var {
        let idx: Vec<usize> = self.value(a).rows().into_iter().map(row_argmax).collect();
        self.pick_per_row(a, &idx)
    }

    /// Column-wise maximum, 1×c. Ties resolve to the first row.
    pub fn max_cols(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let idx: Vec<usize> = x.columns().into_iter().map(row_argmax).collect();
        let value = Tensor::from_shape_fn((1, idx.len()), |(_, j)| x[[idx[j], j]]);
        self.unary(a, value, Op::MaxCols(a, idx))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::from_elem((1, 1), self.value(a).sum());
        self.unary(a, value, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let value = Tensor::from_elem((1, 1), x.sum() / x.len() as f64);
        self.unary(a, value, Op::Mean(a))
    }

    /// Forward value `hard`, backward identity into `soft`.
    pub fn straight_through(&mut self, hard: Tensor, soft: Var) -> Var {
        assert_eq!(hard.dim(), self.shape(soft));
        self.unary(soft, hard, Op::StraightThrough(soft))
    }

    /// Gradient of the most recent [`Graph::backward`] call with respect to
    /// leaf `v`.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Accumulates `d root / d node` for every node that requires a gradient.
    pub fn backward(&mut self, root: Var) {
        assert_eq!(self.shape(root), (1, 1), "backward root must be scalar");
        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor>> = (0..n).map(|_| None).collect();
        grads[root.0] = Some(Tensor::from_elem((1, 1), 1.0));

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            let acc = |v: Var, d: Tensor, grads: &mut Vec<Option<Tensor>>| {
                if !self.nodes[v.0].requires_grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(existing) => *existing += &d,
                    slot => *slot = Some(d),
                }
            };
            let val = |v: Var| &self.nodes[v.0].value;
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::MatMul(a, b) => {
                    acc(*a, g.dot(&val(*b).t()), &mut grads);
                    acc(*b, val(*a).t().dot(&g), &mut grads);
                }
                Op::Transpose(a) => acc(*a, g.t().to_owned(), &mut grads),
                Op::Add(a, b) => {
                    acc(*a, g.clone(), &mut grads);
                    acc(*b, g.clone(), &mut grads);
                }
                Op::Sub(a, b) => {
                    acc(*a, g.clone(), &mut grads);
                    acc(*b, -&g, &mut grads);
                }
                Op::Mul(a, b) => {
                    acc(*a, &g * val(*b), &mut grads);
                    acc(*b, &g * val(*a), &mut grads);
                }
                Op::AddRow(a, r) => {
                    acc(*r, g.sum_axis(Axis(0)).insert_axis(Axis(0)), &mut grads);
                    acc(*a, g.clone(), &mut grads);
                }
                Op::MulRow(a, r) => {
                    acc(*r, (&g * val(*a)).sum_axis(Axis(0)).insert_axis(Axis(0)), &mut grads);
                    acc(*a, &g * val(*r), &mut grads);
                }
                Op::MulCol(a, c) => {
                    acc(*c, (&g * val(*a)).sum_axis(Axis(1)).insert_axis(Axis(1)), &mut grads);
                    acc(*a, &g * val(*c), &mut grads);
                }
                Op::MulScalar(a, s) => {
                    let k = val(*s)[[0, 0]];
                    acc(*s, Tensor::from_elem((1, 1), (&g * val(*a)).sum()), &mut grads);
                    acc(*a, &g * k, &mut grads);
                }
                Op::Scale(a, k) => acc(*a, &g * *k, &mut grads),
                Op::AddScalar(a) => acc(*a, g, &mut grads),
                Op::Sigmoid(a) => {
                    let d = &g * &node.value.mapv(|y| y * (1.0 - y));
                    acc(*a, d, &mut grads);
                }
                Op::Tanh(a) => {
                    let d = &g * &node.value.mapv(|y| 1.0 - y * y);
                    acc(*a, d, &mut grads);
                }
                Op::Relu(a) => {
                    let d = &g * &val(*a).mapv(|x| if x > 0.0 { 1.0 } else { 0.0 });
                    acc(*a, d, &mut grads);
                }
                Op::Exp(a) => acc(*a, &g * &node.value, &mut grads),
                Op::Log(a) => acc(*a, &g / val(*a), &mut grads),
                Op::Recip(a) => {
                    let d = &g * &node.value.mapv(|y| -y * y);
                    acc(*a, d, &mut grads);
                }
                Op::Clamp(a, lo, hi) => {
                    let d = &g * &val(*a).mapv(|x| if x >= *lo && x <= *hi { 1.0 } else { 0.0 });
                    acc(*a, d, &mut grads);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let dot = (&g * y).sum_axis(Axis(1)).insert_axis(Axis(1));
                    acc(*a, y * &(&g - &dot), &mut grads);
                }
                Op::SoftmaxCols(a) => {
                    let y = &node.value;
                    let dot = (&g * y).sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(*a, y * &(&g - &dot), &mut grads);
                }
                Op::LogSoftmaxRows(a) => {
                    let p = node.value.mapv(f64::exp);
                    let gs = g.sum_axis(Axis(1)).insert_axis(Axis(1));
                    acc(*a, &g - &(&p * &gs), &mut grads);
                }
                Op::LayerNormRows(a, inv_std) => {
                    let y = &node.value;
                    let c = y.ncols() as f64;
                    let mean_g = g.sum_axis(Axis(1)).insert_axis(Axis(1)) / c;
                    let mean_gy = (&g * y).sum_axis(Axis(1)).insert_axis(Axis(1)) / c;
                    let d = (&g - &mean_g - &(y * &mean_gy)) * inv_std;
                    acc(*a, d, &mut grads);
                }
                Op::NormalizeRows(a, norms) => {
                    let y = &node.value;
                    let mut d = Tensor::zeros(y.dim());
                    for (r, &nrm) in norms.iter().enumerate() {
                        if nrm > 0.0 {
                            let yr = y.row(r);
                            let gr = g.row(r);
                            let proj = yr.dot(&gr);
                            let mut dr = d.row_mut(r);
                            dr.assign(&((&gr - &(&yr * proj)) / nrm));
                        }
                    }
                    acc(*a, d, &mut grads);
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let r = val(*p).nrows();
                        acc(*p, g.slice(s![off..off + r, ..]).to_owned(), &mut grads);
                        off += r;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let c = val(*p).ncols();
                        acc(*p, g.slice(s![.., off..off + c]).to_owned(), &mut grads);
                        off += c;
                    }
                }
                Op::SliceRows(a, start) => {
                    let mut d = Tensor::zeros(val(*a).dim());
                    d.slice_mut(s![*start..*start + g.nrows(), ..]).assign(&g);
                    acc(*a, d, &mut grads);
                }
                Op::SliceCols(a, start) => {
                    let mut d = Tensor::zeros(val(*a).dim());
                    d.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    acc(*a, d, &mut grads);
                }
                Op::GatherRows(a, idx) => {
                    let mut d = Tensor::zeros(val(*a).dim());
                    for (k, &i) in idx.iter().enumerate() {
                        let mut row = d.row_mut(i);
                        row += &g.row(k);
                    }
                    acc(*a, d, &mut grads);
                }
                Op::PickPerRow(a, idx) => {
                    let mut d = Tensor::zeros(val(*a).dim());
                    for (i, &j) in idx.iter().enumerate() {
                        d[[i, j]] += g[[i, 0]];
                    }
                    acc(*a, d, &mut grads);
                }
                Op::Element(a, r, c) => {
                    let mut d = Tensor::zeros(val(*a).dim());
                    d[[*r, *c]] = g[[0, 0]];
                    acc(*a, d, &mut grads);
                }
                Op::MaxCols(a, idx) => {
                    let mut d = Tensor::zeros(val(*a).dim());
                    for (j, &i) in idx.iter().enumerate() {
                        d[[i, j]] += g[[0, j]];
                    }
                    acc(*a, d, &mut grads);
                }
                Op::Sum(a) => {
                    let d = Tensor::from_elem(val(*a).dim(), g[[0, 0]]);
                    acc(*a, d, &mut grads);
                }
                Op::Mean(a) => {
                    let x = val(*a);
                    let d = Tensor::from_elem(x.dim(), g[[0, 0]] / x.len() as f64);
                    acc(*a, d, &mut grads);
                }
                Op::StraightThrough(soft) => acc(*soft, g, &mut grads),
            }
        }
        // only leaf slots survive the sweep
        self.grads = grads;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    /// Central differences of `f` around `x`, one coordinate at a time.
    fn numeric_grad(x: &Tensor, f: impl Fn(&Tensor) -> f64) -> Tensor {
        let h = 1e-6;
        let mut out = Tensor::zeros(x.dim());
        for idx in 0..x.len() {
            let (r, c) = (idx / x.ncols(), idx % x.ncols());
            let mut xp = x.clone();
            xp[[r, c]] += h;
            let mut xm = x.clone();
            xm[[r, c]] -= h;
            out[[r, c]] = (f(&xp) - f(&xm)) / (2.0 * h);
        }
        out
    }

    fn check(x: Tensor, build: impl Fn(&mut Graph, Var) -> Var) {
        let f = |t: &Tensor| {
            let mut g = Graph::new();
            let v = g.constant(t.clone());
            let out = build(&mut g, v);
            g.scalar_value(out)
        };
        let mut g = Graph::new();
        let v = g.param(x.clone());
        let out = build(&mut g, v);
        g.backward(out);
        let analytic = g.grad(v).unwrap().clone();
        let numeric = numeric_grad(&x, f);
        for (a, n) in analytic.iter().zip(numeric.iter()) {
            assert!((a - n).abs() < 1e-5 * (1.0 + n.abs()), "analytic {a} vs numeric {n}");
        }
    }

    fn sample() -> Tensor {
        array![[0.3, -1.2, 0.7], [1.5, 0.2, -0.4]]
    }

    #[test]
    fn matmul_and_transpose() {
        let w = array![[0.5, -0.3], [0.1, 0.9], [-0.7, 0.4]];
        check(sample(), move |g, x| {
            let w = g.constant(w.clone());
            let y = g.matmul(x, w);
            let t = g.transpose(y);
            let t2 = g.tanh(t);
            g.sum(t2)
        });
    }

    #[test]
    fn softmax_family() {
        check(sample(), |g, x| {
            let s = g.softmax_rows(x);
            let c = g.softmax_cols(x);
            let l = g.log_softmax_rows(x);
            let a = g.mul(s, c);
            let b = g.add(a, l);
            let b = g.mul(b, b);
            g.sum(b)
        });
    }

    #[test]
    fn layer_norm_and_normalize() {
        check(sample(), |g, x| {
            let y = g.layer_norm_rows(x, 1e-5);
            let z = g.normalize_rows(x);
            let w = g.mul(y, z);
            let w = g.exp(w);
            g.mean(w)
        });
    }

    #[test]
    fn broadcast_and_structural_ops() {
        check(sample(), |g, x| {
            let row = g.slice_rows(x, 0, 1);
            let col = g.slice_cols(x, 1, 1);
            let a = g.add_row(x, row);
            let b = g.mul_row(a, row);
            let c = g.mul_col(b, col);
            let d = g.gather_rows(c, &[1, 1, 0]);
            let e = g.concat_rows(&[d, x]);
            let f = g.concat_cols(&[e, e]);
            let m = g.max_rows(f);
            let mc = g.max_cols(f);
            let s1 = g.sum(m);
            let s2 = g.sum(mc);
            let el = g.element(x, 1, 2);
            let t = g.add(s1, s2);
            let t = g.mul_scalar(t, el);
            g.sigmoid(t)
        });
    }

    #[test]
    fn straight_through_passes_soft_gradient() {
        let mut g = Graph::new();
        let soft = g.param(array![[0.3], [0.8]]);
        let st = g.straight_through(array![[0.0], [1.0]], soft);
        assert_eq!(g.value(st), &array![[0.0], [1.0]]);
        let w = g.constant(array![[2.0], [5.0]]);
        let y = g.mul(st, w);
        let y = g.sum(y);
        g.backward(y);
        assert_eq!(g.grad(soft).unwrap(), &array![[2.0], [5.0]]);
    }

    #[test]
    fn constants_do_not_receive_gradients() {
        let mut g = Graph::new();
        let c = g.constant(array![[1.0]]);
        let p = g.param(array![[2.0]]);
        let y = g.mul(c, p);
        g.backward(y);
        assert!(g.grad(c).is_none());
        assert_eq!(g.grad(p).unwrap()[[0, 0]], 1.0);
    }
}
