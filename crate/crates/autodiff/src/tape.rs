use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use ndarray::{Array2, Axis, Zip};

use crate::params::{ParamId, ParamStore};
use crate::sparse::CsrMatrix;
use crate::AutodiffError;

/// Floor applied inside logarithms and softmax denominators.
pub const LOG_FLOOR: f64 = 1e-12;

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    idx: usize,
    tape: u64,
}

type CustomBackward = Box<dyn Fn(&Array2<f64>, &Array2<f64>, &Array2<f64>) -> Array2<f64> + Send + Sync>;

enum Op {
    Leaf,
    Param(ParamId),
    MatMul(usize, usize),
    SpMM(Arc<CsrMatrix>, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddBias(usize, usize),
    Relu(usize),
    LeakyRelu(usize, f64),
    Sigmoid(usize),
    RowSoftmax(usize),
    MaskedRowSoftmax(usize),
    EdgeSoftmax(usize, Arc<CsrMatrix>),
    EdgeAggregate {
        pattern: Arc<CsrMatrix>,
        weights: usize,
        h: usize,
    },
    GatherRows(usize, Arc<Vec<usize>>),
    Concat(Vec<usize>),
    Dropout(usize, Array2<f64>),
    Sum(usize),
    Mean(usize),
    WeightedBce {
        pred: usize,
        rows: Arc<Vec<usize>>,
        targets: Arc<Vec<f64>>,
        weights: Vec<f64>,
    },
    Custom {
        input: usize,
        backward: CustomBackward,
    },
}

struct Node {
    value: Array2<f64>,
    op: Op,
}

/// Eager computation graph. Every method that creates a node computes its value immediately.
pub struct Tape {
    id: u64,
    training: bool,
    nodes: Vec<Node>,
}

/// Result of [`Tape::backward`]: one optional gradient per recorded node.
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Array2<f64>>>,
    params: Vec<(ParamId, usize)>,
}

impl Gradients {
    pub fn wrt(&self, var: Var) -> Option<&Array2<f64>> {
        if var.tape != self.tape {
            return None;
        }
        self.grads.get(var.idx).and_then(|g| g.as_ref())
    }

    /// Gradients summed per parameter, in first-use order.
    pub fn param_grads(&self) -> Vec<(ParamId, Array2<f64>)> {
        let mut out: Vec<(ParamId, Array2<f64>)> = Vec::new();
        for &(pid, idx) in &self.params {
            let Some(g) = self.grads[idx].as_ref() else {
                continue;
            };
            match out.iter_mut().find(|(p, _)| *p == pid) {
                Some((_, acc)) => *acc += g,
                None => out.push((pid, g.as_standard_layout().into_owned())),
            }
        }
        out
    }
}

fn mismatch(op: &'static str, a: &Array2<f64>, b: &Array2<f64>) -> AutodiffError {
    AutodiffError::ShapeMismatch {
        op,
        left: a.dim(),
        right: b.dim(),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax_segment(input: &[f64], out: &mut [f64], keep: impl Fn(usize) -> bool) {
    let max = input
        .iter()
        .enumerate()
        .filter(|(j, _)| keep(*j))
        .map(|(_, &v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        out.iter_mut().for_each(|o| *o = 0.0);
        return;
    }
    let mut total = 0.0;
    for (j, (o, &v)) in out.iter_mut().zip(input).enumerate() {
        *o = if keep(j) { (v - max).exp() } else { 0.0 };
        total += *o;
    }
    let total = total.max(LOG_FLOOR);
    out.iter_mut().for_each(|o| *o /= total);
}

impl Tape {
    /// `training` controls dropout: when false, dropout is the identity.
    pub fn new(training: bool) -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            training,
            nodes: Vec::new(),
        }
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Array2<f64>, name: &'static str) -> Result<Var, AutodiffError> {
        if value.iter().any(|v| !v.is_finite()) {
            return Err(AutodiffError::NonFinite { op: name });
        }
        self.nodes.push(Node { value, op });
        Ok(Var {
            idx: self.nodes.len() - 1,
            tape: self.id,
        })
    }

    fn check(&self, v: Var) -> Result<usize, AutodiffError> {
        if v.tape != self.id || v.idx >= self.nodes.len() {
            return Err(AutodiffError::ForeignVar);
        }
        Ok(v.idx)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        assert_eq!(v.tape, self.id, "variable from another tape");
        &self.nodes[v.idx].value
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Result<Var, AutodiffError> {
        self.push(Op::Leaf, value, "constant")
    }

    /// Records a parameter leaf holding a copy of the current value.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let value = store.value(id).clone();
        self.nodes.push(Node {
            value,
            op: Op::Param(id),
        });
        Var {
            idx: self.nodes.len() - 1,
            tape: self.id,
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let (va, vb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        if va.ncols() != vb.nrows() {
            return Err(mismatch("matmul", va, vb));
        }
        let out = va.dot(vb);
        self.push(Op::MatMul(ia, ib), out, "matmul")
    }

    /// Sparse (constant) times dense.
    pub fn spmm(&mut self, op: &Arc<CsrMatrix>, x: Var) -> Result<Var, AutodiffError> {
        let ix = self.check(x)?;
        let out = op.matmul_dense(self.nodes[ix].value.view())?;
        self.push(Op::SpMM(Arc::clone(op), ix), out, "spmm")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let (va, vb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        if va.dim() != vb.dim() {
            return Err(mismatch("add", va, vb));
        }
        let out = va + vb;
        self.push(Op::Add(ia, ib), out, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let (va, vb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        if va.dim() != vb.dim() {
            return Err(mismatch("sub", va, vb));
        }
        let out = va - vb;
        self.push(Op::Sub(ia, ib), out, "sub")
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let (va, vb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        if va.dim() != vb.dim() {
            return Err(mismatch("mul", va, vb));
        }
        let out = va * vb;
        self.push(Op::Mul(ia, ib), out, "mul")
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var, AutodiffError> {
        let ia = self.check(a)?;
        let out = &self.nodes[ia].value * factor;
        self.push(Op::Scale(ia, factor), out, "scale")
    }

    /// Adds a `1 x c` bias row to every row of an `n x c` input.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var, AutodiffError> {
        let (ix, ib) = (self.check(x)?, self.check(bias)?);
        let (vx, vb) = (&self.nodes[ix].value, &self.nodes[ib].value);
        if vb.nrows() != 1 || vb.ncols() != vx.ncols() {
            return Err(mismatch("add_bias", vx, vb));
        }
        let out = vx + vb;
        self.push(Op::AddBias(ix, ib), out, "add_bias")
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let ix = self.check(x)?;
        let out = self.nodes[ix].value.mapv(|v| v.max(0.0));
        self.push(Op::Relu(ix), out, "relu")
    }

    pub fn leaky_relu(&mut self, x: Var, alpha: f64) -> Result<Var, AutodiffError> {
        let ix = self.check(x)?;
        let out = self.nodes[ix].value.mapv(|v| if v > 0.0 { v } else { alpha * v });
        self.push(Op::LeakyRelu(ix, alpha), out, "leaky_relu")
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let ix = self.check(x)?;
        let out = self.nodes[ix].value.mapv(sigmoid);
        self.push(Op::Sigmoid(ix), out, "sigmoid")
    }

    pub fn row_softmax(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let ix = self.check(x)?;
        let input = &self.nodes[ix].value;
        let mut out = Array2::zeros(input.dim());
        for (src, mut dst) in input.outer_iter().zip(out.outer_iter_mut()) {
            let src = src.to_vec();
            let mut buf = vec![0.0; src.len()];
            softmax_segment(&src, &mut buf, |_| true);
            dst.iter_mut().zip(buf).for_each(|(d, b)| *d = b);
        }
        self.push(Op::RowSoftmax(ix), out, "row_softmax")
    }

    /// Row softmax restricted to entries where `mask` is true. Fully masked rows yield zeros.
    pub fn masked_row_softmax(&mut self, x: Var, mask: &Array2<bool>) -> Result<Var, AutodiffError> {
        let ix = self.check(x)?;
        let input = &self.nodes[ix].value;
        if mask.dim() != input.dim() {
            return Err(AutodiffError::ShapeMismatch {
                op: "masked_row_softmax",
                left: input.dim(),
                right: mask.dim(),
            });
        }
        let mut out = Array2::zeros(input.dim());
        for ((src, m), mut dst) in input.outer_iter().zip(mask.outer_iter()).zip(out.outer_iter_mut()) {
            let src = src.to_vec();
            let mut buf = vec![0.0; src.len()];
            softmax_segment(&src, &mut buf, |j| m[j]);
            dst.iter_mut().zip(buf).for_each(|(d, b)| *d = b);
        }
        self.push(Op::MaskedRowSoftmax(ix), out, "masked_row_softmax")
    }

    /// Softmax of per-edge scores (`nnz x 1`) within each row of `pattern`.
    ///
    /// This is the sparse form of a masked row softmax whose mask is the sparsity pattern.
    pub fn edge_softmax(&mut self, scores: Var, pattern: &Arc<CsrMatrix>) -> Result<Var, AutodiffError> {
        let is = self.check(scores)?;
        let input = &self.nodes[is].value;
        if input.dim() != (pattern.nnz(), 1) {
            return Err(AutodiffError::ShapeMismatch {
                op: "edge_softmax",
                left: (pattern.nnz(), 1),
                right: input.dim(),
            });
        }
        let src = input.as_slice().expect("standard layout").to_vec();
        let mut out = vec![0.0; src.len()];
        let ptr = pattern.indptr();
        for r in 0..pattern.n_rows() {
            let span = ptr[r]..ptr[r + 1];
            softmax_segment(&src[span.clone()], &mut out[span], |_| true);
        }
        let out = Array2::from_shape_vec((src.len(), 1), out).expect("shape");
        self.push(Op::EdgeSoftmax(is, Arc::clone(pattern)), out, "edge_softmax")
    }

    /// `out[r] = Σ_e weights[e] · h[col(e)]` over the entries `e` of row `r` in `pattern`.
    pub fn edge_aggregate(
        &mut self,
        pattern: &Arc<CsrMatrix>,
        weights: Var,
        h: Var,
    ) -> Result<Var, AutodiffError> {
        let (iw, ih) = (self.check(weights)?, self.check(h)?);
        let (vw, vh) = (&self.nodes[iw].value, &self.nodes[ih].value);
        if vw.dim() != (pattern.nnz(), 1) || vh.nrows() != pattern.n_cols() {
            return Err(mismatch("edge_aggregate", vw, vh));
        }
        let weighted = pattern.with_values(vw.iter().copied().collect())?;
        let out = weighted.matmul_dense(vh.view())?;
        self.push(
            Op::EdgeAggregate {
                pattern: Arc::clone(pattern),
                weights: iw,
                h: ih,
            },
            out,
            "edge_aggregate",
        )
    }

    pub fn gather_rows(&mut self, x: Var, rows: &Arc<Vec<usize>>) -> Result<Var, AutodiffError> {
        let ix = self.check(x)?;
        let input = &self.nodes[ix].value;
        if let Some(&bad) = rows.iter().find(|&&r| r >= input.nrows()) {
            return Err(AutodiffError::IndexOutOfBounds {
                op: "gather_rows",
                index: bad,
                bound: input.nrows(),
            });
        }
        let out = input.select(Axis(0), rows);
        self.push(Op::GatherRows(ix, Arc::clone(rows)), out, "gather_rows")
    }

    /// Column-wise concatenation.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let idx: Vec<usize> = parts.iter().map(|&p| self.check(p)).collect::<Result<_, _>>()?;
        let Some(&first) = idx.first() else {
            return Err(AutodiffError::ShapeMismatch {
                op: "concat",
                left: (0, 0),
                right: (0, 0),
            });
        };
        let rows = self.nodes[first].value.nrows();
        for &i in &idx {
            if self.nodes[i].value.nrows() != rows {
                return Err(mismatch("concat", &self.nodes[first].value, &self.nodes[i].value));
            }
        }
        let views: Vec<_> = idx.iter().map(|&i| self.nodes[i].value.view()).collect();
        let out = ndarray::concatenate(Axis(1), &views).expect("row counts checked");
        self.push(Op::Concat(idx), out, "concat")
    }

    /// Inverted dropout. `keep(row, col)` decides which entries survive; it is only
    /// consulted in training mode, and evaluation mode returns `x` unchanged.
    pub fn dropout(
        &mut self,
        x: Var,
        p: f64,
        keep: impl Fn(usize, usize) -> bool,
    ) -> Result<Var, AutodiffError> {
        let ix = self.check(x)?;
        if !self.training || p <= 0.0 {
            return Ok(x);
        }
        let scale = 1.0 / (1.0 - p);
        let input = &self.nodes[ix].value;
        let mask = Array2::from_shape_fn(input.dim(), |(r, c)| if keep(r, c) { scale } else { 0.0 });
        let out = input * &mask;
        self.push(Op::Dropout(ix, mask), out, "dropout")
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let ix = self.check(x).expect("foreign var");
        let total = self.nodes[ix].value.sum();
        self.push(Op::Sum(ix), Array2::from_elem((1, 1), total), "sum")
            .expect("sum of finite values")
    }

    pub fn mean(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let ix = self.check(x)?;
        let value = &self.nodes[ix].value;
        let mean = if value.is_empty() { 0.0 } else { value.sum() / value.len() as f64 };
        self.push(Op::Mean(ix), Array2::from_elem((1, 1), mean), "mean")
    }

    /// Class-weighted binary cross-entropy on probabilities `pred` (`n x 1`), averaged
    /// over `rows`. Positive rows weigh `pos_weight`, negative rows weigh 1.
    pub fn weighted_bce(
        &mut self,
        pred: Var,
        rows: &Arc<Vec<usize>>,
        targets: &Arc<Vec<f64>>,
        pos_weight: f64,
    ) -> Result<Var, AutodiffError> {
        let ip = self.check(pred)?;
        let p = &self.nodes[ip].value;
        if p.ncols() != 1 || targets.len() != p.nrows() {
            return Err(AutodiffError::ShapeMismatch {
                op: "weighted_bce",
                left: p.dim(),
                right: (targets.len(), 1),
            });
        }
        if rows.is_empty() {
            return Err(AutodiffError::ShapeMismatch {
                op: "weighted_bce",
                left: p.dim(),
                right: (0, 1),
            });
        }
        let mut weights = Vec::with_capacity(rows.len());
        let mut total = 0.0;
        for &r in rows.iter() {
            if r >= p.nrows() {
                return Err(AutodiffError::IndexOutOfBounds {
                    op: "weighted_bce",
                    index: r,
                    bound: p.nrows(),
                });
            }
            let y = targets[r];
            let w = if y > 0.5 { pos_weight } else { 1.0 };
            let q = p[[r, 0]];
            total -= w * (y * q.max(LOG_FLOOR).ln() + (1.0 - y) * (1.0 - q).max(LOG_FLOOR).ln());
            weights.push(w);
        }
        let loss = total / rows.len() as f64;
        self.push(
            Op::WeightedBce {
                pred: ip,
                rows: Arc::clone(rows),
                targets: Arc::clone(targets),
                weights,
            },
            Array2::from_elem((1, 1), loss),
            "weighted_bce",
        )
    }

    /// Elementwise user-defined operation. `backward(input, output, upstream)` must
    /// return the gradient with respect to `input`.
    pub fn custom_unary(
        &mut self,
        x: Var,
        forward: impl Fn(&Array2<f64>) -> Array2<f64>,
        backward: impl Fn(&Array2<f64>, &Array2<f64>, &Array2<f64>) -> Array2<f64> + Send + Sync + 'static,
    ) -> Result<Var, AutodiffError> {
        let ix = self.check(x)?;
        let out = forward(&self.nodes[ix].value);
        self.push(
            Op::Custom {
                input: ix,
                backward: Box::new(backward),
            },
            out,
            "custom",
        )
    }

    /// Reverse pass from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients, AutodiffError> {
        if self.nodes.is_empty() {
            return Err(AutodiffError::NoForward);
        }
        let il = self.check(loss)?;
        let dim = self.nodes[il].value.dim();
        if dim != (1, 1) {
            return Err(AutodiffError::NotScalar(dim));
        }
        let mut grads: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[il] = Some(Array2::ones((1, 1)));

        fn acc(grads: &mut [Option<Array2<f64>>], i: usize, g: Array2<f64>) {
            match &mut grads[i] {
                Some(existing) => *existing += &g,
                slot => *slot = Some(g),
            }
        }

        for i in (0..=il).rev() {
            let Some(up) = grads[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf | Op::Param(_) => {}
                Op::MatMul(a, b) => {
                    let va = &self.nodes[*a].value;
                    let vb = &self.nodes[*b].value;
                    acc(&mut grads, *a, up.dot(&vb.t()));
                    acc(&mut grads, *b, va.t().dot(&up));
                }
                Op::SpMM(op, x) => {
                    acc(&mut grads, *x, op.transpose_matmul_dense(up.view())?);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, up.clone());
                    acc(&mut grads, *b, up.clone());
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *a, up.clone());
                    acc(&mut grads, *b, -&up);
                }
                Op::Mul(a, b) => {
                    let va = &self.nodes[*a].value;
                    let vb = &self.nodes[*b].value;
                    acc(&mut grads, *a, &up * vb);
                    acc(&mut grads, *b, &up * va);
                }
                Op::Scale(a, f) => acc(&mut grads, *a, &up * *f),
                Op::AddBias(x, b) => {
                    let row = up.sum_axis(Axis(0));
                    let width = row.len();
                    acc(&mut grads, *b, row.into_shape_with_order((1, width)).expect("bias row"));
                    acc(&mut grads, *x, up.clone());
                }
                Op::Relu(x) => {
                    let vx = &self.nodes[*x].value;
                    let mut g = up.clone();
                    Zip::from(&mut g).and(vx).for_each(|g, &v| {
                        if v <= 0.0 {
                            *g = 0.0
                        }
                    });
                    acc(&mut grads, *x, g);
                }
                Op::LeakyRelu(x, alpha) => {
                    let vx = &self.nodes[*x].value;
                    let mut g = up.clone();
                    Zip::from(&mut g).and(vx).for_each(|g, &v| {
                        if v <= 0.0 {
                            *g *= alpha
                        }
                    });
                    acc(&mut grads, *x, g);
                }
                Op::Sigmoid(x) => {
                    let s = &node.value;
                    let g = Zip::from(&up).and(s).map_collect(|&u, &s| u * s * (1.0 - s));
                    acc(&mut grads, *x, g);
                }
                Op::RowSoftmax(x) | Op::MaskedRowSoftmax(x) => {
                    let s = &node.value;
                    let mut g = Array2::zeros(s.dim());
                    for ((srow, urow), mut grow) in s.outer_iter().zip(up.outer_iter()).zip(g.outer_iter_mut()) {
                        let dotp: f64 = srow.iter().zip(urow.iter()).map(|(a, b)| a * b).sum();
                        for ((gv, &sv), &uv) in grow.iter_mut().zip(srow.iter()).zip(urow.iter()) {
                            *gv = sv * (uv - dotp);
                        }
                    }
                    acc(&mut grads, *x, g);
                }
                Op::EdgeSoftmax(x, pattern) => {
                    let s = node.value.as_slice().expect("column vector");
                    let u = up.as_slice().expect("column vector");
                    let ptr = pattern.indptr();
                    let mut g = vec![0.0; s.len()];
                    for r in 0..pattern.n_rows() {
                        let span = ptr[r]..ptr[r + 1];
                        let dotp: f64 = span.clone().map(|e| s[e] * u[e]).sum();
                        for e in span {
                            g[e] = s[e] * (u[e] - dotp);
                        }
                    }
                    acc(&mut grads, *x, Array2::from_shape_vec((s.len(), 1), g).expect("shape"));
                }
                Op::EdgeAggregate { pattern, weights, h } => {
                    let vw = &self.nodes[*weights].value;
                    let vh = &self.nodes[*h].value;
                    let rows = pattern.row_of_entries();
                    let cols = pattern.indices();
                    let mut gw = Array2::zeros((pattern.nnz(), 1));
                    for e in 0..pattern.nnz() {
                        gw[[e, 0]] = up.row(rows[e]).dot(&vh.row(cols[e]));
                    }
                    let weighted = pattern.with_values(vw.iter().copied().collect())?;
                    acc(&mut grads, *weights, gw);
                    acc(&mut grads, *h, weighted.transpose_matmul_dense(up.view())?);
                }
                Op::GatherRows(x, rows) => {
                    let vx = &self.nodes[*x].value;
                    let mut g = Array2::zeros(vx.dim());
                    for (k, &r) in rows.iter().enumerate() {
                        let mut dst = g.row_mut(r);
                        dst += &up.row(k);
                    }
                    acc(&mut grads, *x, g);
                }
                Op::Concat(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let width = self.nodes[p].value.ncols();
                        let slice = up.slice(ndarray::s![.., start..start + width]).to_owned();
                        acc(&mut grads, p, slice);
                        start += width;
                    }
                }
                Op::Dropout(x, mask) => acc(&mut grads, *x, &up * mask),
                Op::Sum(x) => {
                    let dim = self.nodes[*x].value.dim();
                    acc(&mut grads, *x, Array2::from_elem(dim, up[[0, 0]]));
                }
                Op::Mean(x) => {
                    let dim = self.nodes[*x].value.dim();
                    let n = (dim.0 * dim.1).max(1) as f64;
                    acc(&mut grads, *x, Array2::from_elem(dim, up[[0, 0]] / n));
                }
                Op::WeightedBce {
                    pred,
                    rows,
                    targets,
                    weights,
                } => {
                    let p = &self.nodes[*pred].value;
                    let m = rows.len() as f64;
                    let mut g = Array2::zeros(p.dim());
                    for (&r, &w) in rows.iter().zip(weights) {
                        let y = targets[r];
                        let q = p[[r, 0]];
                        let d_pos = if q > LOG_FLOOR { y / q } else { 0.0 };
                        let d_neg = if 1.0 - q > LOG_FLOOR { (1.0 - y) / (1.0 - q) } else { 0.0 };
                        g[[r, 0]] += -w * (d_pos - d_neg) / m * up[[0, 0]];
                    }
                    acc(&mut grads, *pred, g);
                }
                Op::Custom { input, backward } => {
                    let g = backward(&self.nodes[*input].value, &node.value, &up);
                    acc(&mut grads, *input, g);
                }
            }
            grads[i] = Some(up);
        }

        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n.op {
                Op::Param(pid) => Some((pid, i)),
                _ => None,
            })
            .collect();
        Ok(Gradients {
            tape: self.id,
            grads,
            params,
        })
    }
}
