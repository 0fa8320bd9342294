//! Reverse-mode differentiation over a fixed set of dense ops.
//!
//! A [`Tape`] records every op applied during one forward pass. Values are
//! computed eagerly; [`Tape::backward`] then walks the record in reverse and
//! returns a [`Grads`] table holding the gradient of a scalar output with
//! respect to every recorded node. Each op's backward rule is hand-derived
//! and verified against central finite differences in the test suite.

use std::sync::Arc;

use super::params::{ParamId, ParamStore};
use super::tensor::{gemm_nn, gemm_nt, gemm_tn, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Row partition for grouped attention: each group is an ordered list of row
/// indices that attend to one another and to nothing else.
pub type RowGroups = Arc<Vec<Vec<usize>>>;

enum Op {
    Leaf,
    Param,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    ScaleBy(Var, Var),
    Recip(Var),
    AddBias(Var, Var),
    AddRowBias(Var, Var),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Gelu {
        x: Var,
        /// `tanh` of the inner polynomial, reused by the backward rule.
        t: Vec<f64>,
    },
    Sigmoid(Var),
    Sqrt(Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    GatherRows(Var, Arc<[usize]>),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GroupMax {
        x: Var,
        argmax: Vec<usize>,
    },
    EdgeGeluMax {
        u: Var,
        v: Var,
        bias: Var,
        nbr: Arc<[usize]>,
        /// Winning edge row `l·k + m` per output entry.
        argmax: Vec<usize>,
        /// Pre-activation of the winner.
        pre: Vec<f64>,
    },
    GroupMean {
        x: Var,
        group: usize,
    },
    Sum(Var),
    RowNorm(Var),
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        groups: RowGroups,
        probs: Vec<f64>,
    },
    StraightThrough(Var),
    Bce {
        p: Var,
        label: f64,
    },
    Reshape(Var),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Recorded forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(ParamId, Var)>,
    max_choices: Vec<Vec<usize>>,
    max_replay: Option<(Vec<Vec<usize>>, usize)>,
}

/// Gradients of one scalar output with respect to every tape node.
pub struct Grads {
    grads: Vec<Option<Tensor>>,
}

impl Grads {
    /// Gradient for `v`; `None` when `v` does not influence the output.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient for `v`, or zeros shaped like `like` if `v` is disconnected.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(like.shape()))
    }
}

pub(crate) const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// `tanh` of the GELU polynomial. Only absolute accuracy matters here (the
/// result enters as `1 + t`), so one `exp` replaces the slower libm `tanh`.
fn gelu_tanh(x: f64) -> f64 {
    let z = GELU_C * (x + GELU_A * x * x * x);
    let e = (-2.0 * z.abs()).exp();
    ((1.0 - e) / (1.0 + e)).copysign(z)
}

pub fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + gelu_tanh(x))
}

fn gelu_grad(x: f64, t: f64) -> f64 {
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn mismatch(op: &str, a: &Tensor, b: &Tensor) -> Error {
    Error::ShapeMismatch(format!("{op}: {:?} vs {:?}", a.shape(), b.shape()))
}

fn out_shape_with_cols(src: &Tensor, cols: usize) -> Vec<usize> {
    let mut s = src.shape().to_vec();
    if s.len() <= 1 {
        vec![src.rows(), cols]
    } else {
        *s.last_mut().unwrap() = cols;
        s
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// A tape whose [`Tape::group_max`] calls reuse, in call order, the row
    /// choices recorded by an earlier forward pass instead of comparing values.
    /// With the choices fixed, each pool becomes a gather and the recorded
    /// function is smooth everywhere.
    pub fn replaying_max(choices: Vec<Vec<usize>>) -> Self {
        Self {
            max_replay: Some((choices, 0)),
            ..Self::default()
        }
    }

    /// Row choices made by every `group_max` call so far, in call order.
    pub fn max_choices(&self) -> &[Vec<usize>] {
        &self.max_choices
    }

    pub fn into_max_choices(self) -> Vec<Vec<usize>> {
        self.max_choices
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        debug_assert!(value.all_finite(), "non-finite value produced by tape op");
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    /// Records an input or constant.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Records a parameter; repeated calls with the same id share one node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&(_, v)) = self.params.iter().find(|(p, _)| *p == id) {
            return v;
        }
        let v = self.push(store.value(id).clone(), Op::Param);
        self.params.push((id, v));
        v
    }

    /// Parameters touched by this tape with their nodes.
    pub fn params(&self) -> &[(ParamId, Var)] {
        &self.params
    }

    fn same_shape(&self, op: &str, a: Var, b: Var) -> Result<()> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.len() != tb.len() {
            return Err(mismatch(op, ta, tb));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let ta = self.value(a);
        let tb = self.value(b);
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::new(ta.shape().to_vec(), data).expect("same length");
        self.push(value, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        Ok(self.zip_with(a, b, |x, y| x + y, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip_with(a, b, |x, y| x - y, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        Ok(self.zip_with(a, b, |x, y| x * y, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a).map(|x| x * k);
        self.push(value, Op::Scale(a, k))
    }

    /// Multiplies every entry of `a` by the single-entry tensor `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var> {
        if self.value(s).len() != 1 {
            return Err(Error::ShapeMismatch("scale_by expects a scalar".into()));
        }
        let k = self.scalar(s);
        let value = self.value(a).map(|x| x * k);
        Ok(self.push(value, Op::ScaleBy(a, s)))
    }

    pub fn recip(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| 1.0 / x);
        self.push(value, Op::Recip(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::sqrt);
        self.push(value, Op::Sqrt(a))
    }

    /// `x[R×C] + b[C]`, broadcasting `b` over rows.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(b));
        let c = tx.cols();
        if tb.len() != c {
            return Err(mismatch("add_bias", tx, tb));
        }
        let mut value = tx.clone();
        for row in value.data_mut().chunks_mut(c) {
            for (o, &bv) in row.iter_mut().zip(tb.data()) {
                *o += bv;
            }
        }
        Ok(self.push(value, Op::AddBias(x, b)))
    }

    /// `x[R×C] + b[R]`, broadcasting `b` over columns.
    pub fn add_row_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(b));
        let c = tx.cols();
        if tb.len() != tx.rows() {
            return Err(mismatch("add_row_bias", tx, tb));
        }
        let mut value = tx.clone();
        for (row, &bv) in value.data_mut().chunks_mut(c).zip(tb.data()) {
            for o in row {
                *o += bv;
            }
        }
        Ok(self.push(value, Op::AddRowBias(x, b)))
    }

    /// `a[m×k] · b[k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = (ta.rows(), ta.cols());
        if tb.shape().len() > 2 || tb.rows() != k {
            return Err(mismatch("matmul", ta, tb));
        }
        let n = tb.cols();
        let mut out = vec![0.0; m * n];
        gemm_nn(ta.data(), tb.data(), &mut out, m, k, n);
        Ok(self.push(Tensor::matrix(m, n, out), Op::MatMul(a, b)))
    }

    /// `a[…×k] · b[n×k]ᵀ`, keeping `a`'s leading extents.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = (ta.rows(), ta.cols());
        if tb.cols() != k {
            return Err(mismatch("matmul_t", ta, tb));
        }
        let n = tb.rows();
        let mut out = vec![0.0; m * n];
        gemm_nt(ta.data(), tb.data(), &mut out, m, k, n);
        let shape = out_shape_with_cols(ta, n);
        let value = Tensor::new(shape, out).expect("shape");
        Ok(self.push(value, Op::MatMulT(a, b)))
    }

    /// `x·Wᵀ + b` along the trailing axis, `W: [d_out×d_in]`, `b: [d_out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul_t(x, w)?;
        self.add_bias(y, b)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        let t: Vec<f64> = value.data().iter().map(|&v| gelu_tanh(v)).collect();
        for (v, t) in value.data_mut().iter_mut().zip(&t) {
            *v *= 0.5 * (1.0 + t);
        }
        self.push(value, Op::Gelu { x: a, t })
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid_scalar);
        self.push(value, Op::Sigmoid(a))
    }

    /// Numerically stable softmax over the trailing axis.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        let c = value.cols();
        for row in value.data_mut().chunks_mut(c) {
            softmax_in_place(row);
        }
        self.push(value, Op::SoftmaxRows(a))
    }

    /// Per-row layer normalization with population variance.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (tx, tg, tb) = (self.value(x), self.value(gamma), self.value(beta));
        let c = tx.cols();
        if tg.len() != c || tb.len() != c {
            return Err(mismatch("layer_norm", tx, tg));
        }
        let rows = tx.rows();
        let mut xhat = vec![0.0; rows * c];
        let mut inv_std = vec![0.0; rows];
        let mut out = tx.clone();
        for r in 0..rows {
            let row = tx.row(r);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            inv_std[r] = inv;
            for j in 0..c {
                let h = (row[j] - mean) * inv;
                xhat[r * c + j] = h;
                out.data_mut()[r * c + j] = h * tg.data()[j] + tb.data()[j];
            }
        }
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        ))
    }

    /// Selects rows of a matrix (repeats allowed).
    pub fn gather_rows(&mut self, a: Var, idx: impl Into<Arc<[usize]>>) -> Result<Var> {
        let idx: Arc<[usize]> = idx.into();
        let ta = self.value(a);
        let (rows, c) = (ta.rows(), ta.cols());
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx.iter() {
            if i >= rows {
                return Err(Error::ShapeMismatch(format!(
                    "gather_rows: index {i} out of {rows} rows"
                )));
            }
            out.extend_from_slice(ta.row(i));
        }
        Ok(self.push(Tensor::matrix(idx.len(), c, out), Op::GatherRows(a, idx)))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let t = self.value(p);
            if t.rows() != rows {
                return Err(mismatch("concat_cols", self.value(parts[0]), t));
            }
            widths.push(t.cols());
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; rows * total];
        let mut offset = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let t = self.value(p);
            for r in 0..rows {
                out[r * total + offset..r * total + offset + w].copy_from_slice(t.row(r));
            }
            offset += w;
        }
        Ok(self.push(
            Tensor::matrix(rows, total, out),
            Op::ConcatCols(parts.to_vec()),
        ))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let c = self.value(parts[0]).cols();
        let mut out = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if t.cols() != c {
                return Err(mismatch("concat_rows", self.value(parts[0]), t));
            }
            out.extend_from_slice(t.data());
        }
        let rows = out.len() / c.max(1);
        Ok(self.push(Tensor::matrix(rows, c, out), Op::ConcatRows(parts.to_vec())))
    }

    /// Column-wise max over consecutive groups of `group` rows:
    /// `[G·group × C] → [G × C]`. Ties resolve to the first row.
    /// Next recorded max choice when replaying, checked against the shape of
    /// the pooling it is about to drive.
    fn replayed_max(
        &mut self,
        what: &str,
        groups: usize,
        group: usize,
        c: usize,
    ) -> Result<Option<Vec<usize>>> {
        let Some((choices, next)) = &mut self.max_replay else {
            return Ok(None);
        };
        let rec = choices.get(*next).ok_or_else(|| {
            Error::Precondition(format!("{what} replay: no recorded choice #{next}"))
        })?;
        if rec.len() != groups * c || rec.iter().enumerate().any(|(i, &r)| r / group != i / c) {
            return Err(Error::Precondition(format!(
                "{what} replay: choice #{next} does not fit {groups} groups of {group} rows × {c}"
            )));
        }
        *next += 1;
        Ok(Some(rec.clone()))
    }

    pub fn group_max(&mut self, x: Var, group: usize) -> Result<Var> {
        let (rows, c) = (self.value(x).rows(), self.value(x).cols());
        if group == 0 || rows % group != 0 {
            return Err(Error::ShapeMismatch(format!(
                "group_max: {rows} rows not divisible into groups of {group}"
            )));
        }
        let g = rows / group;
        let replay = self.replayed_max("group_max", g, group, c)?;
        let tx = &self.nodes[x.0].value;
        let mut out = vec![f64::NEG_INFINITY; g * c];
        let arg = match replay {
            Some(arg) => {
                for (i, &r) in arg.iter().enumerate() {
                    out[i] = tx.data()[r * c + i % c];
                }
                arg
            }
            None => {
                let mut arg = vec![0usize; g * c];
                for gi in 0..g {
                    for r in gi * group..(gi + 1) * group {
                        let row = tx.row(r);
                        for j in 0..c {
                            if row[j] > out[gi * c + j] {
                                out[gi * c + j] = row[j];
                                arg[gi * c + j] = r;
                            }
                        }
                    }
                }
                arg
            }
        };
        self.max_choices.push(arg.clone());
        Ok(self.push(Tensor::matrix(g, c, out), Op::GroupMax { x, argmax: arg }))
    }

    /// Edge convolution pooled over neighbours:
    /// `out[l] = max_m gelu(u[nbr[l·k + m]] − v[l] + bias)`, column-wise.
    ///
    /// Equal to gathering, subtracting, adding the bias, applying GELU and
    /// `group_max(·, k)`, without materializing the `L·k × d` edge tensors.
    /// Winners are recorded and replayed like [`Tape::group_max`].
    pub fn edge_gelu_max(
        &mut self,
        u: Var,
        v: Var,
        bias: Var,
        nbr: impl Into<Arc<[usize]>>,
        k: usize,
    ) -> Result<Var> {
        let nbr: Arc<[usize]> = nbr.into();
        let (tu, tv, tb) = (self.value(u), self.value(v), self.value(bias));
        let (l, d) = (tv.rows(), tv.cols());
        if tu.cols() != d
            || tb.len() != d
            || k == 0
            || nbr.len() != l * k
            || nbr.iter().any(|&j| j >= tu.rows())
        {
            return Err(Error::ShapeMismatch(format!(
                "edge_gelu_max: u {:?}, v {:?}, bias {:?}, {} neighbours for k = {k}",
                tu.shape(),
                tv.shape(),
                tb.shape(),
                nbr.len()
            )));
        }
        let replay = self.replayed_max("edge_gelu_max", l, k, d)?;
        let (ud, vd, bd) = (
            self.nodes[u.0].value.data(),
            self.nodes[v.0].value.data(),
            self.nodes[bias.0].value.data(),
        );
        let pre_at = |r: usize, c: usize| ud[nbr[r] * d + c] - vd[(r / k) * d + c] + bd[c];
        let mut argmax = vec![0usize; l * d];
        let mut pre = vec![0.0; l * d];
        let mut out = vec![0.0; l * d];
        match replay {
            Some(rec) => {
                for (i, &r) in rec.iter().enumerate() {
                    pre[i] = pre_at(r, i % d);
                    out[i] = gelu_scalar(pre[i]);
                }
                argmax = rec;
            }
            None => {
                for li in 0..l {
                    for c in 0..d {
                        let i = li * d + c;
                        let rows = li * k..(li + 1) * k;
                        let (mut best_r, mut best_p) = (li * k, pre_at(li * k, c));
                        for r in rows.clone().skip(1) {
                            let p = pre_at(r, c);
                            if p > best_p {
                                (best_r, best_p) = (r, p);
                            }
                        }
                        // GELU is negative below 0 and increasing above it,
                        // so a non-negative largest input is also the
                        // largest output.
                        if best_p < 0.0 {
                            let mut best_y = f64::NEG_INFINITY;
                            for r in rows {
                                let p = pre_at(r, c);
                                let y = gelu_scalar(p);
                                if y > best_y {
                                    (best_r, best_p, best_y) = (r, p, y);
                                }
                            }
                        }
                        argmax[i] = best_r;
                        pre[i] = best_p;
                        out[i] = gelu_scalar(best_p);
                    }
                }
            }
        }
        self.max_choices.push(argmax.clone());
        Ok(self.push(
            Tensor::matrix(l, d, out),
            Op::EdgeGeluMax {
                u,
                v,
                bias,
                nbr,
                argmax,
                pre,
            },
        ))
    }

    /// Column-wise mean over consecutive groups of `group` rows.
    pub fn group_mean(&mut self, x: Var, group: usize) -> Result<Var> {
        let tx = self.value(x);
        let (rows, c) = (tx.rows(), tx.cols());
        if group == 0 || rows % group != 0 {
            return Err(Error::ShapeMismatch(format!(
                "group_mean: {rows} rows not divisible into groups of {group}"
            )));
        }
        let g = rows / group;
        let mut out = vec![0.0; g * c];
        for r in 0..rows {
            let gi = r / group;
            for (o, v) in out[gi * c..(gi + 1) * c].iter_mut().zip(tx.row(r)) {
                *o += v;
            }
        }
        for o in &mut out {
            *o /= group as f64;
        }
        Ok(self.push(Tensor::matrix(g, c, out), Op::GroupMean { x, group }))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    /// Euclidean norm of every row: `[R×C] → [R×1]`.
    pub fn row_norm(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let out: Vec<f64> = (0..ta.rows())
            .map(|r| ta.row(r).iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        let n = out.len();
        self.push(Tensor::matrix(n, 1, out), Op::RowNorm(a))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape(a)))
    }

    /// Multi-head scaled dot-product attention within row groups.
    ///
    /// `q`, `k`, `v` are `[R×d]`. The channel axis is split into `heads`
    /// contiguous slices; within each group every row attends to the rows of
    /// the same group with weights `softmax(q·kᵀ/√d_head)`.
    pub fn grouped_attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        groups: RowGroups,
    ) -> Result<Var> {
        let (tq, tk, tv) = (self.value(q), self.value(k), self.value(v));
        let d = tq.cols();
        if tk.cols() != d || tv.cols() != d || tk.rows() != tv.rows() {
            return Err(mismatch("attention", tq, tk));
        }
        if heads == 0 || d % heads != 0 {
            return Err(Error::IndivisibleHeads { d, heads });
        }
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut out = vec![0.0; tq.rows() * d];
        let mut probs = Vec::new();
        for g in groups.iter() {
            let t = g.len();
            for h in 0..heads {
                let cs = h * dh;
                for &qi in g {
                    let qrow = &tq.row(qi)[cs..cs + dh];
                    let start = probs.len();
                    for &kj in g {
                        let krow = &tk.row(kj)[cs..cs + dh];
                        probs.push(qrow.iter().zip(krow).map(|(a, b)| a * b).sum::<f64>() * scale);
                    }
                    softmax_in_place(&mut probs[start..start + t]);
                    let orow = &mut out[qi * d + cs..qi * d + cs + dh];
                    for (p, &kj) in probs[start..start + t].iter().zip(g) {
                        let vrow = &tv.row(kj)[cs..cs + dh];
                        for (o, vv) in orow.iter_mut().zip(vrow) {
                            *o += p * vv;
                        }
                    }
                }
            }
        }
        let value = Tensor::new(tq.shape().to_vec(), out).expect("shape");
        Ok(self.push(
            value,
            Op::Attention {
                q,
                k,
                v,
                heads,
                groups,
                probs,
            },
        ))
    }

    /// Forward: one-hot of each row's argmax (ties to the lowest index).
    /// Backward: identity, so gradients flow to the soft input unchanged.
    pub fn straight_through(&mut self, soft: Var) -> Var {
        let mut value = self.value(soft).clone();
        let c = value.cols();
        for row in value.data_mut().chunks_mut(c) {
            let a = argmax(row);
            row.iter_mut().for_each(|v| *v = 0.0);
            row[a] = 1.0;
        }
        self.push(value, Op::StraightThrough(soft))
    }

    /// Binary cross-entropy of a single probability against `label`.
    pub fn bce(&mut self, p: Var, label: f64) -> Result<Var> {
        if self.value(p).len() != 1 {
            return Err(Error::ShapeMismatch(
                "bce expects a scalar prediction".into(),
            ));
        }
        let loss = super::loss::bce_loss(self.scalar(p), label);
        Ok(self.push(Tensor::scalar(loss), Op::Bce { p, label }))
    }

    /// Reverse pass from the scalar `out`.
    pub fn backward(&self, out: Var) -> Grads {
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(out.0 + 1);
        grads.resize_with(out.0 + 1, || None);
        let seed = Tensor::full(self.value(out).shape(), 1.0);
        grads[out.0] = Some(seed);

        for i in (0..=out.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Grads { grads }
    }

    fn backward_node(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let val = |v: Var| &self.nodes[v.0].value;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            let slot = &mut grads[v.0];
            let t = slot.get_or_insert_with(|| Tensor::zeros(self.nodes[v.0].value.shape()));
            f(t.data_mut());
        };
        let gd = g.data();
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::Add(a, b) => {
                acc(*a, &mut |ga| add_into(ga, gd));
                acc(*b, &mut |gb| add_into(gb, gd));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |ga| add_into(ga, gd));
                acc(*b, &mut |gb| {
                    gb.iter_mut().zip(gd).for_each(|(o, g)| *o -= g)
                });
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (val(*a).data(), val(*b).data());
                acc(*a, &mut |ga| {
                    for ((o, g), y) in ga.iter_mut().zip(gd).zip(tb) {
                        *o += g * y;
                    }
                });
                acc(*b, &mut |gb| {
                    for ((o, g), x) in gb.iter_mut().zip(gd).zip(ta) {
                        *o += g * x;
                    }
                });
            }
            Op::Scale(a, k) => acc(*a, &mut |ga| {
                ga.iter_mut().zip(gd).for_each(|(o, g)| *o += g * k)
            }),
            Op::ScaleBy(a, s) => {
                let k = val(*s).data()[0];
                let ta = val(*a).data();
                acc(*a, &mut |ga| {
                    ga.iter_mut().zip(gd).for_each(|(o, g)| *o += g * k)
                });
                let ds: f64 = gd.iter().zip(ta).map(|(g, x)| g * x).sum();
                acc(*s, &mut |gs| gs[0] += ds);
            }
            Op::Recip(a) => {
                let y = node.value.data();
                acc(*a, &mut |ga| {
                    for ((o, g), y) in ga.iter_mut().zip(gd).zip(y) {
                        *o -= g * y * y;
                    }
                });
            }
            Op::Sqrt(a) => {
                let y = node.value.data();
                acc(*a, &mut |ga| {
                    for ((o, g), y) in ga.iter_mut().zip(gd).zip(y) {
                        *o += g / (2.0 * y);
                    }
                });
            }
            Op::AddBias(x, b) => {
                acc(*x, &mut |gx| add_into(gx, gd));
                let c = node.value.cols();
                acc(*b, &mut |gb| {
                    for row in gd.chunks(c) {
                        add_into(gb, row);
                    }
                });
            }
            Op::AddRowBias(x, b) => {
                acc(*x, &mut |gx| add_into(gx, gd));
                let c = node.value.cols();
                acc(*b, &mut |gb| {
                    for (o, row) in gb.iter_mut().zip(gd.chunks(c)) {
                        *o += row.iter().sum::<f64>();
                    }
                });
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                acc(*a, &mut |ga| gemm_nt(gd, tb.data(), ga, m, n, k));
                acc(*b, &mut |gb| gemm_tn(ta.data(), gd, gb, m, k, n));
            }
            Op::MatMulT(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.rows());
                acc(*a, &mut |ga| gemm_nn(gd, tb.data(), ga, m, n, k));
                acc(*b, &mut |gb| gemm_tn(gd, ta.data(), gb, m, n, k));
            }
            Op::Gelu { x: a, t } => {
                let x = val(*a).data();
                acc(*a, &mut |ga| {
                    for (((o, g), x), t) in ga.iter_mut().zip(gd).zip(x).zip(t) {
                        *o += g * gelu_grad(*x, *t);
                    }
                });
            }
            Op::Sigmoid(a) => {
                let y = node.value.data();
                acc(*a, &mut |ga| {
                    for ((o, g), y) in ga.iter_mut().zip(gd).zip(y) {
                        *o += g * y * (1.0 - y);
                    }
                });
            }
            Op::SoftmaxRows(a) => {
                let y = node.value.data();
                let c = node.value.cols();
                acc(*a, &mut |ga| {
                    for ((go, gr), yr) in ga.chunks_mut(c).zip(gd.chunks(c)).zip(y.chunks(c)) {
                        let dot: f64 = gr.iter().zip(yr).map(|(g, y)| g * y).sum();
                        for ((o, g), y) in go.iter_mut().zip(gr).zip(yr) {
                            *o += y * (g - dot);
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let c = node.value.cols();
                let gam = val(*gamma).data();
                acc(*gamma, &mut |gg| {
                    for (gr, hr) in gd.chunks(c).zip(xhat.chunks(c)) {
                        for ((o, g), h) in gg.iter_mut().zip(gr).zip(hr) {
                            *o += g * h;
                        }
                    }
                });
                acc(*beta, &mut |gb| {
                    for gr in gd.chunks(c) {
                        add_into(gb, gr);
                    }
                });
                acc(*x, &mut |gx| {
                    let n = c as f64;
                    for (r, (gxr, (gr, hr))) in gx
                        .chunks_mut(c)
                        .zip(gd.chunks(c).zip(xhat.chunks(c)))
                        .enumerate()
                    {
                        let mut s1 = 0.0;
                        let mut s2 = 0.0;
                        for j in 0..c {
                            let gh = gr[j] * gam[j];
                            s1 += gh;
                            s2 += gh * hr[j];
                        }
                        let inv = inv_std[r];
                        for j in 0..c {
                            let gh = gr[j] * gam[j];
                            gxr[j] += inv / n * (n * gh - s1 - hr[j] * s2);
                        }
                    }
                });
            }
            Op::GatherRows(a, idx) => {
                let c = node.value.cols();
                acc(*a, &mut |ga| {
                    for (k, &r) in idx.iter().enumerate() {
                        add_into(&mut ga[r * c..(r + 1) * c], &gd[k * c..(k + 1) * c]);
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let rows = node.value.rows();
                let total = node.value.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = val(p).cols();
                    acc(p, &mut |gp| {
                        for r in 0..rows {
                            add_into(
                                &mut gp[r * w..(r + 1) * w],
                                &gd[r * total + offset..r * total + offset + w],
                            );
                        }
                    });
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = val(p).len();
                    acc(p, &mut |gp| add_into(gp, &gd[offset..offset + n]));
                    offset += n;
                }
            }
            Op::GroupMax { x, argmax } => {
                let c = node.value.cols();
                acc(*x, &mut |gx| {
                    for (k, (&r, g)) in argmax.iter().zip(gd).enumerate() {
                        gx[r * c + k % c] += g;
                    }
                });
            }
            Op::EdgeGeluMax {
                u,
                v,
                bias,
                nbr,
                argmax,
                pre,
            } => {
                let d = node.value.cols();
                let dpre: Vec<f64> = gd
                    .iter()
                    .zip(pre)
                    .map(|(g, &p)| g * gelu_grad(p, gelu_tanh(p)))
                    .collect();
                acc(*u, &mut |gu| {
                    for (i, (&r, g)) in argmax.iter().zip(&dpre).enumerate() {
                        gu[nbr[r] * d + i % d] += g;
                    }
                });
                acc(*v, &mut |gv| {
                    gv.iter_mut().zip(&dpre).for_each(|(o, g)| *o -= g)
                });
                acc(*bias, &mut |gb| {
                    for row in dpre.chunks(d) {
                        add_into(gb, row);
                    }
                });
            }
            Op::GroupMean { x, group } => {
                let c = node.value.cols();
                let inv = 1.0 / *group as f64;
                acc(*x, &mut |gx| {
                    for (r, row) in gx.chunks_mut(c).enumerate() {
                        let gi = r / group;
                        for (o, g) in row.iter_mut().zip(&gd[gi * c..(gi + 1) * c]) {
                            *o += g * inv;
                        }
                    }
                });
            }
            Op::Sum(a) => {
                let g0 = gd[0];
                acc(*a, &mut |ga| ga.iter_mut().for_each(|o| *o += g0));
            }
            Op::RowNorm(a) => {
                let ta = val(*a);
                let c = ta.cols();
                let y = node.value.data();
                acc(*a, &mut |ga| {
                    for (r, row) in ga.chunks_mut(c).enumerate() {
                        if y[r] > 0.0 {
                            let s = gd[r] / y[r];
                            for (o, x) in row.iter_mut().zip(ta.row(r)) {
                                *o += s * x;
                            }
                        }
                    }
                });
            }
            Op::Attention {
                q,
                k,
                v,
                heads,
                groups,
                probs,
            } => {
                let (tq, tk, tv) = (val(*q), val(*k), val(*v));
                let d = tq.cols();
                let dh = d / heads;
                let scale = 1.0 / (dh as f64).sqrt();
                let mut gq = vec![0.0; tq.len()];
                let mut gk = vec![0.0; tk.len()];
                let mut gv = vec![0.0; tv.len()];
                let mut dp = Vec::new();
                let mut pos = 0;
                for grp in groups.iter() {
                    let t = grp.len();
                    for h in 0..*heads {
                        let cs = h * dh;
                        for &qi in grp {
                            let p = &probs[pos..pos + t];
                            pos += t;
                            let go = &gd[qi * d + cs..qi * d + cs + dh];
                            dp.clear();
                            for (pj, &kj) in p.iter().zip(grp) {
                                let vrow = &tv.row(kj)[cs..cs + dh];
                                dp.push(go.iter().zip(vrow).map(|(a, b)| a * b).sum::<f64>());
                                for (o, g) in gv[kj * d + cs..kj * d + cs + dh].iter_mut().zip(go) {
                                    *o += pj * g;
                                }
                            }
                            let dot: f64 = dp.iter().zip(p).map(|(a, b)| a * b).sum();
                            let qrow = &tq.row(qi)[cs..cs + dh];
                            for ((&pj, &dpj), &kj) in p.iter().zip(&dp).zip(grp) {
                                let ds = pj * (dpj - dot) * scale;
                                if ds == 0.0 {
                                    continue;
                                }
                                let krow = &tk.row(kj)[cs..cs + dh];
                                for (o, kv) in
                                    gq[qi * d + cs..qi * d + cs + dh].iter_mut().zip(krow)
                                {
                                    *o += ds * kv;
                                }
                                for (o, qv) in
                                    gk[kj * d + cs..kj * d + cs + dh].iter_mut().zip(qrow)
                                {
                                    *o += ds * qv;
                                }
                            }
                        }
                    }
                }
                acc(*q, &mut |g| add_into(g, &gq));
                acc(*k, &mut |g| add_into(g, &gk));
                acc(*v, &mut |g| add_into(g, &gv));
            }
            Op::StraightThrough(a) | Op::Reshape(a) => acc(*a, &mut |ga| add_into(ga, gd)),
            Op::Bce { p, label } => {
                let pv = val(*p).data()[0];
                let d = super::loss::bce_grad(pv, *label) * gd[0];
                acc(*p, &mut |gp| gp[0] += d);
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (o, s) in dst.iter_mut().zip(src) {
        *o += s;
    }
}
