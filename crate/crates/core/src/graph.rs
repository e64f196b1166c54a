//! Reverse-mode differentiation over a per-forward-pass tape.
//!
//! A [`Graph`] records every op as it is evaluated. Nodes are rank-2; a scalar
//! is `1×1`. The tape is rebuilt for every forward pass and is not shared
//! across threads.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{
    matmul_at_into, matmul_bt_into, matmul_into, sigmoid_scalar, softmax_in_place, Tensor,
};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf {
        param: Option<ParamId>,
    },
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    BroadcastRows(Var),
    ScaleShift(Var, f64),
    Sigmoid(Var),
    Gelu(Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        inv_std: Vec<f64>,
    },
    ConcatCols(Var, Var),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    MeanRows(Var),
    Sum(Var),
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    CrossEntropy {
        logits: Var,
        gold: usize,
        probs: Vec<f64>,
    },
}

struct Node {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
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

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn data(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].data
    }

    pub fn value(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::new(&[n.rows, n.cols], n.data.clone()).expect("node shape is consistent")
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].data[0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(
        &mut self,
        rows: usize,
        cols: usize,
        data: Vec<f64>,
        op: Op,
        op_name: &'static str,
    ) -> Result<Var> {
        debug_assert_eq!(rows * cols, data.len());
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::Numeric {
                op: op_name,
                detail: format!("non-finite value {bad} produced"),
            });
        }
        let requires_grad = match &op {
            Op::Leaf { .. } => false,
            _ => op_inputs(&op).iter().any(|v| self.nodes[v.0].requires_grad),
        };
        self.nodes.push(Node {
            rows,
            cols,
            data,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn leaf(&mut self, t: &Tensor, requires_grad: bool, param: Option<ParamId>) -> Result<Var> {
        let (r, c) = t.dims2()?;
        let v = self.push(r, c, t.data().to_vec(), Op::Leaf { param }, "leaf")?;
        self.nodes[v.0].requires_grad = requires_grad;
        Ok(v)
    }

    /// Detached input: no gradient is ever computed for it.
    pub fn constant(&mut self, t: &Tensor) -> Result<Var> {
        self.leaf(t, false, None)
    }

    /// Input that tracks gradients iff `t.requires_grad`.
    pub fn input(&mut self, t: &Tensor) -> Result<Var> {
        self.leaf(t, t.requires_grad, None)
    }

    /// Leaf bound to a stored parameter. Repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Result<Var> {
        if let Some(v) = self.params.get(&id) {
            return Ok(*v);
        }
        let v = self.leaf(store.get(id), true, Some(id))?;
        self.params.insert(id, v);
        Ok(v)
    }

    fn check_same(&self, op: &'static str, a: Var, b: Var) -> Result<(usize, usize)> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::dim(op, &[sa.0, sa.1], &[sb.0, sb.1]));
        }
        Ok(sa)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (p, q) = self.shape(a);
        let (q2, r) = self.shape(b);
        if q != q2 {
            return Err(Error::dim("matmul", &[p, q], &[q2, r]));
        }
        let mut out = vec![0.0; p * r];
        matmul_into(self.data(a), self.data(b), &mut out, p, q, r);
        self.push(p, r, out, Op::MatMul(a, b), "matmul")
    }

    /// `a · bᵀ`
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (p, q) = self.shape(a);
        let (r, q2) = self.shape(b);
        if q != q2 {
            return Err(Error::dim("matmul_bt", &[p, q], &[r, q2]));
        }
        let mut out = vec![0.0; p * r];
        matmul_bt_into(self.data(a), self.data(b), &mut out, p, q, r);
        self.push(p, r, out, Op::MatMulBt(a, b), "matmul_bt")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.shape(a);
        let src = self.data(a);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        self.push(c, r, out, Op::Transpose(a), "transpose")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.check_same("add", a, b)?;
        let out = zip_map(self.data(a), self.data(b), |x, y| x + y);
        self.push(r, c, out, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.check_same("sub", a, b)?;
        let out = zip_map(self.data(a), self.data(b), |x, y| x - y);
        self.push(r, c, out, Op::Sub(a, b), "sub")
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.check_same("mul", a, b)?;
        let out = zip_map(self.data(a), self.data(b), |x, y| x * y);
        self.push(r, c, out, Op::Mul(a, b), "mul")
    }

    /// `a[n×d] + row[1×d]`, the row broadcast over all `n` rows.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (n, d) = self.shape(a);
        let rs = self.shape(row);
        if rs != (1, d) {
            return Err(Error::dim("add_row", &[n, d], &[rs.0, rs.1]));
        }
        let (ad, rd) = (self.data(a), self.data(row));
        let out = (0..n * d).map(|i| ad[i] + rd[i % d]).collect();
        self.push(n, d, out, Op::AddRow(a, row), "add_row")
    }

    /// `a[n×d] ⊙ col[n×1]`, the column broadcast over all `d` columns.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let (n, d) = self.shape(a);
        let cs = self.shape(col);
        if cs != (n, 1) {
            return Err(Error::dim("mul_col", &[n, d], &[cs.0, cs.1]));
        }
        let (ad, cd) = (self.data(a), self.data(col));
        let out = (0..n * d).map(|i| ad[i] * cd[i / d.max(1)]).collect();
        self.push(n, d, out, Op::MulCol(a, col), "mul_col")
    }

    /// Repeat a `1×d` row `n` times.
    pub fn broadcast_rows(&mut self, x: Var, n: usize) -> Result<Var> {
        let (r, d) = self.shape(x);
        if r != 1 {
            return Err(Error::dim("broadcast_rows", &[r, d], &[1, d]));
        }
        let row = self.data(x).to_vec();
        let out = (0..n).flat_map(|_| row.iter().copied()).collect();
        self.push(n, d, out, Op::BroadcastRows(x), "broadcast_rows")
    }

    /// `scale · a + shift`
    pub fn scale_shift(&mut self, a: Var, scale: f64, shift: f64) -> Result<Var> {
        let (r, c) = self.shape(a);
        let out = self.data(a).iter().map(|x| scale * x + shift).collect();
        self.push(r, c, out, Op::ScaleShift(a, scale), "scale_shift")
    }

    pub fn scale(&mut self, a: Var, scale: f64) -> Result<Var> {
        self.scale_shift(a, scale, 0.0)
    }

    /// `1 - a`
    pub fn one_minus(&mut self, a: Var) -> Result<Var> {
        self.scale_shift(a, -1.0, 1.0)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.shape(a);
        let out = self.data(a).iter().map(|&x| sigmoid_scalar(x)).collect();
        self.push(r, c, out, Op::Sigmoid(a), "sigmoid")
    }

    /// GELU, tanh approximation (smooth everywhere, unlike ReLU).
    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.shape(a);
        let out = self.data(a).iter().map(|&x| gelu(x).0).collect();
        self.push(r, c, out, Op::Gelu(a), "gelu")
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.shape(a);
        let mut out = self.data(a).to_vec();
        for i in 0..r {
            softmax_in_place(&mut out[i * c..(i + 1) * c]);
        }
        self.push(r, c, out, Op::SoftmaxRows(a), "softmax_rows")
    }

    /// Per-row standardisation (no affine part).
    pub fn layer_norm(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.shape(x);
        let src = self.data(x);
        let mut out = vec![0.0; r * c];
        let mut inv_std = Vec::with_capacity(r);
        for i in 0..r {
            let row = &src[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for (o, v) in out[i * c..(i + 1) * c].iter_mut().zip(row) {
                *o = (v - mean) * is;
            }
            inv_std.push(is);
        }
        self.push(r, c, out, Op::LayerNorm { x, inv_std }, "layer_norm")
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (p, q1) = self.shape(a);
        let (p2, q2) = self.shape(b);
        if p != p2 {
            return Err(Error::dim("concat_cols", &[p, q1], &[p2, q2]));
        }
        let (ad, bd) = (self.data(a), self.data(b));
        let mut out = Vec::with_capacity(p * (q1 + q2));
        for i in 0..p {
            out.extend_from_slice(&ad[i * q1..(i + 1) * q1]);
            out.extend_from_slice(&bd[i * q2..(i + 1) * q2]);
        }
        self.push(p, q1 + q2, out, Op::ConcatCols(a, b), "concat_cols")
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (r, c) = self.shape(a);
        if start > end || end > c {
            return Err(Error::dim("slice_cols", &[r, c], &[start, end]));
        }
        let src = self.data(a);
        let out = (0..r)
            .flat_map(|i| src[i * c + start..i * c + end].iter().copied())
            .collect();
        self.push(r, end - start, out, Op::SliceCols(a, start), "slice_cols")
    }

    /// Rows `start..end`.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (r, c) = self.shape(a);
        if start > end || end > r {
            return Err(Error::dim("slice_rows", &[r, c], &[start, end]));
        }
        let out = self.data(a)[start * c..end * c].to_vec();
        self.push(end - start, c, out, Op::SliceRows(a, start), "slice_rows")
    }

    /// Column means, `1×d`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let (m, d) = self.shape(a);
        if m == 0 {
            return Err(Error::EmptyInput("mean_pool_rows over zero rows".into()));
        }
        let src = self.data(a);
        let mut out = vec![0.0; d];
        for i in 0..m {
            out.iter_mut()
                .zip(&src[i * d..(i + 1) * d])
                .for_each(|(o, v)| *o += v);
        }
        out.iter_mut().for_each(|o| *o /= m as f64);
        self.push(1, d, out, Op::MeanRows(a), "mean_pool_rows")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.data(a).iter().sum();
        self.push(1, 1, vec![s], Op::Sum(a), "sum")
    }

    /// Rows of `table` selected by `ids`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, d) = self.shape(table);
        if let Some(bad) = ids.iter().find(|&&i| i >= v) {
            return Err(Error::Contract(format!(
                "gather index {bad} out of range {v}"
            )));
        }
        let src = self.data(table);
        let out = ids
            .iter()
            .flat_map(|&i| src[i * d..(i + 1) * d].iter().copied())
            .collect();
        self.push(
            ids.len(),
            d,
            out,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            "gather",
        )
    }

    /// `-log softmax(logits)[gold]` for a `1×C` logit row.
    pub fn cross_entropy(&mut self, logits: Var, gold: usize) -> Result<Var> {
        let (r, c) = self.shape(logits);
        if r != 1 {
            return Err(Error::dim("cross_entropy", &[r, c], &[1, c]));
        }
        if gold >= c {
            return Err(Error::Label {
                line: None,
                detail: format!("gold index {gold} outside 0..{c}"),
            });
        }
        let x = self.data(logits);
        let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = x.iter().map(|v| (v - max).exp()).sum();
        let lse = max + sum_exp.ln();
        let probs: Vec<f64> = x.iter().map(|v| (v - lse).exp()).collect();
        let loss = lse - x[gold];
        self.push(
            1,
            1,
            vec![loss],
            Op::CrossEntropy {
                logits,
                gold,
                probs,
            },
            "cross_entropy",
        )
    }

    /// Back-propagate from a `1×1` loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.shape(loss) != (1, 1) {
            let (r, c) = self.shape(loss);
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got {r}×{c}"
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        let mut params = Vec::new();
        for (idx, node) in self.nodes.iter().enumerate() {
            if let Op::Leaf { param: Some(id) } = node.op {
                if let Some(g) = &grads[idx] {
                    params.push((id, g.clone()));
                }
            }
        }
        Ok(Gradients { grads, params })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let (rows, cols) = (node.rows, node.cols);
        match &node.op {
            Op::Leaf { .. } => {}
            Op::MatMul(a, b) => {
                let (p, q) = self.shape(*a);
                let r = cols;
                if let Some(ga) = self.slot(grads, *a) {
                    matmul_bt_into(g, self.data(*b), ga, p, r, q);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    matmul_at_into(self.data(*a), g, gb, p, q, r);
                }
            }
            Op::MatMulBt(a, b) => {
                let (p, q) = self.shape(*a);
                let r = cols;
                if let Some(ga) = self.slot(grads, *a) {
                    matmul_into(g, self.data(*b), ga, p, r, q);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    matmul_at_into(g, self.data(*a), gb, p, r, q);
                }
            }
            Op::Transpose(a) => {
                if let Some(ga) = self.slot(grads, *a) {
                    // node is rows×cols, input is cols×rows
                    for i in 0..rows {
                        for j in 0..cols {
                            ga[j * rows + i] += g[i * cols + j];
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                if let Some(ga) = self.slot(grads, *a) {
                    add_into(ga, g);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    add_into(gb, g);
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = self.slot(grads, *a) {
                    add_into(ga, g);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    gb.iter_mut().zip(g).for_each(|(o, v)| *o -= v);
                }
            }
            Op::Mul(a, b) => {
                if let Some(ga) = self.slot(grads, *a) {
                    let bd = self.data(*b);
                    for i in 0..g.len() {
                        ga[i] += g[i] * bd[i];
                    }
                }
                if let Some(gb) = self.slot(grads, *b) {
                    let ad = self.data(*a);
                    for i in 0..g.len() {
                        gb[i] += g[i] * ad[i];
                    }
                }
            }
            Op::AddRow(a, row) => {
                if let Some(ga) = self.slot(grads, *a) {
                    add_into(ga, g);
                }
                if let Some(gr) = self.slot(grads, *row) {
                    for i in 0..g.len() {
                        gr[i % cols] += g[i];
                    }
                }
            }
            Op::MulCol(a, col) => {
                if let Some(ga) = self.slot(grads, *a) {
                    let cd = self.data(*col);
                    for i in 0..g.len() {
                        ga[i] += g[i] * cd[i / cols];
                    }
                }
                if let Some(gc) = self.slot(grads, *col) {
                    let ad = self.data(*a);
                    for i in 0..g.len() {
                        gc[i / cols] += g[i] * ad[i];
                    }
                }
            }
            Op::BroadcastRows(x) => {
                if let Some(gx) = self.slot(grads, *x) {
                    for i in 0..g.len() {
                        gx[i % cols] += g[i];
                    }
                }
            }
            Op::ScaleShift(a, s) => {
                if let Some(ga) = self.slot(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(o, v)| *o += s * v);
                }
            }
            Op::Sigmoid(a) => {
                if let Some(ga) = self.slot(grads, *a) {
                    for i in 0..g.len() {
                        let y = node.data[i];
                        ga[i] += g[i] * y * (1.0 - y);
                    }
                }
            }
            Op::Gelu(a) => {
                if let Some(ga) = self.slot(grads, *a) {
                    let ad = self.data(*a);
                    for i in 0..g.len() {
                        ga[i] += g[i] * gelu(ad[i]).1;
                    }
                }
            }
            Op::SoftmaxRows(a) => {
                if let Some(ga) = self.slot(grads, *a) {
                    for r in 0..rows {
                        let y = &node.data[r * cols..(r + 1) * cols];
                        let gr = &g[r * cols..(r + 1) * cols];
                        let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..cols {
                            ga[r * cols + j] += y[j] * (gr[j] - dot);
                        }
                    }
                }
            }
            Op::LayerNorm { x, inv_std } => {
                if let Some(gx) = self.slot(grads, *x) {
                    let n = cols as f64;
                    for r in 0..rows {
                        let y = &node.data[r * cols..(r + 1) * cols];
                        let gr = &g[r * cols..(r + 1) * cols];
                        let mean_g = gr.iter().sum::<f64>() / n;
                        let mean_gy = gr.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / n;
                        for j in 0..cols {
                            gx[r * cols + j] += inv_std[r] * (gr[j] - mean_g - y[j] * mean_gy);
                        }
                    }
                }
            }
            Op::ConcatCols(a, b) => {
                let q1 = self.shape(*a).1;
                let q2 = cols - q1;
                if let Some(ga) = self.slot(grads, *a) {
                    for r in 0..rows {
                        add_into(&mut ga[r * q1..(r + 1) * q1], &g[r * cols..r * cols + q1]);
                    }
                }
                if let Some(gb) = self.slot(grads, *b) {
                    for r in 0..rows {
                        add_into(
                            &mut gb[r * q2..(r + 1) * q2],
                            &g[r * cols + q1..(r + 1) * cols],
                        );
                    }
                }
            }
            Op::SliceCols(a, start) => {
                let c = self.shape(*a).1;
                if let Some(ga) = self.slot(grads, *a) {
                    for r in 0..rows {
                        add_into(
                            &mut ga[r * c + start..r * c + start + cols],
                            &g[r * cols..(r + 1) * cols],
                        );
                    }
                }
            }
            Op::SliceRows(a, start) => {
                if let Some(ga) = self.slot(grads, *a) {
                    add_into(&mut ga[start * cols..(start + rows) * cols], g);
                }
            }
            Op::MeanRows(a) => {
                let m = self.shape(*a).0;
                if let Some(ga) = self.slot(grads, *a) {
                    for i in 0..m * cols {
                        ga[i] += g[i % cols] / m as f64;
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(ga) = self.slot(grads, *a) {
                    ga.iter_mut().for_each(|o| *o += g[0]);
                }
            }
            Op::Gather { table, ids } => {
                if let Some(gt) = self.slot(grads, *table) {
                    for (r, &id) in ids.iter().enumerate() {
                        add_into(
                            &mut gt[id * cols..(id + 1) * cols],
                            &g[r * cols..(r + 1) * cols],
                        );
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                gold,
                probs,
            } => {
                if let Some(gl) = self.slot(grads, *logits) {
                    for (j, p) in probs.iter().enumerate() {
                        let onehot = if j == *gold { 1.0 } else { 0.0 };
                        gl[j] += g[0] * (p - onehot);
                    }
                }
            }
        }
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut Vec<f64>> {
        let node = &self.nodes[v.0];
        if !node.requires_grad {
            return None;
        }
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; node.data.len()]))
    }
}

/// Result of [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<(ParamId, Vec<f64>)>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. `v`; `None` for nodes that do not track.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0)?.as_deref()
    }

    pub fn param_grads(&self) -> &[(ParamId, Vec<f64>)] {
        &self.params
    }

    /// Add parameter gradients onto `store` (accumulating across calls).
    pub fn accumulate_into(&self, store: &mut ParamStore) {
        for (id, g) in &self.params {
            store.get_mut(*id).accumulate_grad(g);
        }
    }

    /// Same as [`accumulate_into`](Self::accumulate_into) with every gradient scaled.
    pub fn accumulate_scaled(&self, store: &mut ParamStore, scale: f64) {
        for (id, g) in &self.params {
            let scaled: Vec<f64> = g.iter().map(|v| v * scale).collect();
            store.get_mut(*id).accumulate_grad(&scaled);
        }
    }
}

fn op_inputs(op: &Op) -> Vec<Var> {
    match op {
        Op::Leaf { .. } => vec![],
        Op::MatMul(a, b)
        | Op::MatMulBt(a, b)
        | Op::Add(a, b)
        | Op::Sub(a, b)
        | Op::Mul(a, b)
        | Op::AddRow(a, b)
        | Op::MulCol(a, b)
        | Op::ConcatCols(a, b) => vec![*a, *b],
        Op::Transpose(a)
        | Op::BroadcastRows(a)
        | Op::ScaleShift(a, _)
        | Op::Sigmoid(a)
        | Op::Gelu(a)
        | Op::SoftmaxRows(a)
        | Op::SliceCols(a, _)
        | Op::SliceRows(a, _)
        | Op::MeanRows(a)
        | Op::Sum(a) => vec![*a],
        Op::LayerNorm { x, .. } => vec![*x],
        Op::Gather { table, .. } => vec![*table],
        Op::CrossEntropy { logits, .. } => vec![*logits],
    }
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

/// `(gelu(x), gelu'(x))`, tanh approximation.
fn gelu(x: f64) -> (f64, f64) {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    const A: f64 = 0.044_715;
    let inner = C * (x + A * x * x * x);
    let t = inner.tanh();
    let y = 0.5 * x * (1.0 + t);
    let dinner = C * (1.0 + 3.0 * A * x * x);
    let dy = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner;
    (y, dy)
}
