//! Parameterised building blocks composed from tape ops.

use std::sync::Arc;

use rand::Rng;

use super::params::{ParamId, ParamStore};
use super::tape::{softmax_in_place, RowGroups, Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct LinearParams {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl LinearParams {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        d_out: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            w: store.uniform(format!("{name}.weight"), &[d_out, d_in], d_in, rng),
            b: Some(store.zeros(format!("{name}.bias"), &[d_out])),
        }
    }

    /// `y = x·Wᵀ` with no bias.
    pub fn without_bias<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        d_out: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            w: store.uniform(format!("{name}.weight"), &[d_out, d_in], d_in, rng),
            b: None,
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        std::iter::once(self.w).chain(self.b).collect()
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        linear(tape, store, x, self)
    }

    pub fn d_in(&self, store: &ParamStore) -> usize {
        store.value(self.w).cols()
    }

    pub fn d_out(&self, store: &ParamStore) -> usize {
        store.value(self.w).rows()
    }
}

/// `y = x·Wᵀ + b` along the trailing axis.
pub fn linear(tape: &mut Tape, store: &ParamStore, x: Var, p: &LinearParams) -> Result<Var> {
    let w = tape.param(store, p.w);
    match p.b {
        Some(b) => {
            let b = tape.param(store, b);
            tape.linear(x, w, b)
        }
        None => tape.matmul_t(x, w),
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LayerNormParams {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNormParams {
    pub fn new(store: &mut ParamStore, name: &str, d: usize) -> Self {
        Self {
            gamma: store.ones(format!("{name}.gamma"), &[d]),
            beta: store.zeros(format!("{name}.beta"), &[d]),
        }
    }
}

pub fn layer_norm(tape: &mut Tape, store: &ParamStore, x: Var, p: &LayerNormParams) -> Result<Var> {
    let g = tape.param(store, p.gamma);
    let b = tape.param(store, p.beta);
    tape.layer_norm(x, g, b)
}

/// Scaled dot-product attention `softmax(Q·Kᵀ/√d)·V`.
pub fn attention(tape: &mut Tape, q: Var, k: Var, v: Var) -> Result<Var> {
    let d = tape.value(q).cols();
    if tape.value(k).cols() != d || tape.value(v).rows() != tape.value(k).rows() {
        return Err(Error::ShapeMismatch(format!(
            "attention: Q {:?}, K {:?}, V {:?}",
            tape.value(q).shape(),
            tape.value(k).shape(),
            tape.value(v).shape()
        )));
    }
    let s = tape.matmul_t(q, k)?;
    let s = tape.scale(s, 1.0 / (d as f64).sqrt());
    let a = tape.softmax_rows(s);
    tape.matmul(a, v)
}

/// Attention weight matrix `softmax(Q·Kᵀ/√d)` for plain tensors.
pub fn attention_weights(q: &Tensor, k: &Tensor) -> Tensor {
    let (tq, tk, d) = (q.rows(), k.rows(), q.cols());
    let scale = 1.0 / (d as f64).sqrt();
    let mut out = vec![0.0; tq * tk];
    for i in 0..tq {
        let row = &mut out[i * tk..(i + 1) * tk];
        for (j, o) in row.iter_mut().enumerate() {
            *o = q
                .row(i)
                .iter()
                .zip(k.row(j))
                .map(|(a, b)| a * b)
                .sum::<f64>()
                * scale;
        }
        softmax_in_place(row);
    }
    Tensor::matrix(tq, tk, out)
}

/// One group containing every row.
pub fn single_group(rows: usize) -> RowGroups {
    Arc::new(vec![(0..rows).collect()])
}

#[derive(Clone, Copy, Debug)]
pub struct MultiHeadParams {
    pub q: LinearParams,
    pub k: LinearParams,
    pub v: LinearParams,
    pub out: LinearParams,
}

impl MultiHeadParams {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, d: usize, rng: &mut R) -> Self {
        Self {
            q: LinearParams::new(store, &format!("{name}.q"), d, d, rng),
            // A key bias shifts every score of a softmax row equally, so it
            // could never receive gradient.
            k: LinearParams::without_bias(store, &format!("{name}.k"), d, d, rng),
            v: LinearParams::new(store, &format!("{name}.v"), d, d, rng),
            out: LinearParams::new(store, &format!("{name}.out"), d, d, rng),
        }
    }
}

/// Multi-head self-attention of all rows of `x` with each other.
pub fn multi_head_attention(
    tape: &mut Tape,
    store: &ParamStore,
    x: Var,
    p: &MultiHeadParams,
    heads: usize,
) -> Result<Var> {
    let rows = tape.value(x).rows();
    grouped_multi_head_attention(tape, store, x, p, heads, single_group(rows))
}

/// Multi-head self-attention restricted to row groups.
pub fn grouped_multi_head_attention(
    tape: &mut Tape,
    store: &ParamStore,
    x: Var,
    p: &MultiHeadParams,
    heads: usize,
    groups: RowGroups,
) -> Result<Var> {
    let d = tape.value(x).cols();
    if heads == 0 || !d.is_multiple_of(heads) {
        return Err(Error::IndivisibleHeads { d, heads });
    }
    let q = p.q.forward(tape, store, x)?;
    let k = p.k.forward(tape, store, x)?;
    let v = p.v.forward(tape, store, x)?;
    let o = tape.grouped_attention(q, k, v, heads, groups)?;
    p.out.forward(tape, store, o)
}

#[derive(Clone, Copy, Debug)]
pub struct TransformerBlockParams {
    pub ln1: LayerNormParams,
    pub attn: MultiHeadParams,
    pub ln2: LayerNormParams,
    pub fc1: LinearParams,
    pub fc2: LinearParams,
}

impl TransformerBlockParams {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, d: usize, rng: &mut R) -> Self {
        Self {
            ln1: LayerNormParams::new(store, &format!("{name}.ln1"), d),
            attn: MultiHeadParams::new(store, &format!("{name}.attn"), d, rng),
            ln2: LayerNormParams::new(store, &format!("{name}.ln2"), d),
            fc1: LinearParams::new(store, &format!("{name}.fc1"), d, 4 * d, rng),
            fc2: LinearParams::new(store, &format!("{name}.fc2"), 4 * d, d, rng),
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut v = vec![self.ln1.gamma, self.ln1.beta, self.ln2.gamma, self.ln2.beta];
        for p in [
            &self.attn.q,
            &self.attn.k,
            &self.attn.v,
            &self.attn.out,
            &self.fc1,
            &self.fc2,
        ] {
            v.extend(p.param_ids());
        }
        v
    }
}

/// Pre-norm residual block: `x + MHA(LN(x))`, then `+ MLP(LN(·))` with a
/// `4d` GELU hidden layer. Attention is confined to `groups`.
pub fn transformer_block(
    tape: &mut Tape,
    store: &ParamStore,
    x: Var,
    p: &TransformerBlockParams,
    heads: usize,
    groups: RowGroups,
) -> Result<Var> {
    let h = layer_norm(tape, store, x, &p.ln1)?;
    let a = grouped_multi_head_attention(tape, store, h, &p.attn, heads, groups)?;
    let x = tape.add(x, a)?;
    let h = layer_norm(tape, store, x, &p.ln2)?;
    let h = p.fc1.forward(tape, store, h)?;
    let h = tape.gelu(h);
    let h = p.fc2.forward(tape, store, h)?;
    tape.add(x, h)
}
