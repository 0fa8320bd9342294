//! Relativity network: per-frame local geometry features.
//!
//! Four CIC layers map a frame's `L×3` landmark coordinates to `L×d`
//! features. Every CIC layer aggregates edge messages over the `k_nn`
//! nearest landmarks; layers 2 and 4 additionally group landmarks into
//! curves. A curve starts at one of the top-`c` scoring landmarks and walks
//! `s − 1` steps through unvisited neighbours; the walked features are pooled
//! into one descriptor per curve and fused back into every landmark with
//! attention weights.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::layers::LinearParams;
use crate::numerics::select::{gumbel_noise, gumbel_softmax, top_k_select};
use crate::numerics::tape::argmax;
use crate::numerics::{ParamId, ParamStore, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurveConfig {
    /// Curves per grouping stage.
    pub n_curves: usize,
    /// Landmarks per curve, including the start.
    pub curve_len: usize,
    /// Neighbourhood size for edge messages and walk candidates.
    pub knn: usize,
    pub d: usize,
    /// Gumbel-Softmax temperature for training-mode walks.
    pub tau: f64,
}

impl CurveConfig {
    pub fn validate(&self, landmarks: usize) -> Result<()> {
        if self.n_curves == 0 || self.n_curves > landmarks {
            return Err(Error::COutOfRange {
                c: self.n_curves,
                n: landmarks,
            });
        }
        if self.curve_len == 0 {
            return Err(Error::ConfigInvalid("curve_len must be at least 1".into()));
        }
        if self.knn == 0 || self.knn >= landmarks {
            return Err(Error::KOutOfRange {
                k: self.knn,
                n: landmarks.saturating_sub(1),
            });
        }
        if !(self.tau > 0.0) {
            return Err(Error::NonPositiveTemperature(self.tau));
        }
        Ok(())
    }
}

/// Per-landmark features with the coordinates they were computed from.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameFeatures {
    /// `[L × d]`
    pub features: Tensor,
    /// `[L × 3]`
    pub coords: Tensor,
}

/// Result of one curve walk.
#[derive(Clone, Debug, PartialEq)]
pub struct Curve {
    pub indices: Vec<usize>,
    /// `[curve_len × d]`; rows past an early stop repeat the last step.
    pub step_features: Tensor,
}

/// Edge-conv weights. The message for edge `(l, j)` is
/// `GELU(W·[f_j ; f_j − f_l ; p_j − p_l] + b)` with `W = [w_feat | w_rel | w_pos]`.
#[derive(Clone, Copy, Debug)]
pub struct CicParams {
    pub w_feat: ParamId,
    pub w_rel: ParamId,
    pub w_pos: ParamId,
    pub bias: ParamId,
}

impl CicParams {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        d: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = 2 * c_in + 3;
        Self {
            w_feat: store.uniform(format!("{name}.w_feat"), &[d, c_in], fan_in, rng),
            w_rel: store.uniform(format!("{name}.w_rel"), &[d, c_in], fan_in, rng),
            w_pos: store.uniform(format!("{name}.w_pos"), &[d, 3], fan_in, rng),
            bias: store.zeros(format!("{name}.bias"), &[d]),
        }
    }
}

/// Learned pieces of one curve-grouping stage.
#[derive(Clone, Copy, Debug)]
pub struct GroupingParams {
    /// Start score projection, `d → 1`.
    pub scorer: LinearParams,
    /// Walk state projection, `d → d`.
    pub phi: LinearParams,
    /// Candidate projection, `d → d`.
    pub psi: LinearParams,
    /// State update from `[state ; picked]`, `2d → d`.
    pub update: LinearParams,
    /// Descriptor MLP over `[max-pool ; mean-pool]`, `2d → d → d`.
    pub desc_in: LinearParams,
    pub desc_out: LinearParams,
}

impl GroupingParams {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, d: usize, rng: &mut R) -> Self {
        Self {
            scorer: LinearParams::new(store, &format!("{name}.scorer"), d, 1, rng),
            phi: LinearParams::new(store, &format!("{name}.phi"), d, d, rng),
            psi: LinearParams::new(store, &format!("{name}.psi"), d, d, rng),
            update: LinearParams::new(store, &format!("{name}.update"), 2 * d, d, rng),
            desc_in: LinearParams::new(store, &format!("{name}.desc_in"), 2 * d, d, rng),
            desc_out: LinearParams::new(store, &format!("{name}.desc_out"), d, d, rng),
        }
    }
}

#[derive(Clone, Debug)]
pub struct RelativityParams {
    pub cic: [CicParams; 4],
    /// Grouping after CIC layers 2 and 4; `None` when curves are disabled.
    pub grouping: Option<[GroupingParams; 2]>,
}

impl RelativityParams {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        d: usize,
        curves: bool,
        rng: &mut R,
    ) -> Self {
        let cic = [
            CicParams::new(store, "relativity.cic1", 3, d, rng),
            CicParams::new(store, "relativity.cic2", d, d, rng),
            CicParams::new(store, "relativity.cic3", d, d, rng),
            CicParams::new(store, "relativity.cic4", d, d, rng),
        ];
        let grouping = curves.then(|| {
            [
                GroupingParams::new(store, "relativity.group2", d, rng),
                GroupingParams::new(store, "relativity.group4", d, rng),
            ]
        });
        Self { cic, grouping }
    }
}

/// Discrete choices made in one grouping stage.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct StageTrace {
    pub starts: Vec<usize>,
    pub walks: Vec<Vec<usize>>,
}

/// Discrete choices made for one frame; replaying it freezes every
/// non-differentiable selection.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FrameTrace {
    pub knn: Vec<Vec<usize>>,
    pub stages: Vec<StageTrace>,
}

/// How curve walks choose their next landmark.
pub enum WalkMode<'a> {
    /// Deterministic argmax, no noise.
    Eval,
    /// Hard Gumbel-Softmax with straight-through gradients.
    Train(&'a mut ChaCha8Rng),
    /// Re-use recorded choices.
    Replay(&'a FrameTrace),
}

/// One CIC layer: kNN edge messages max-pooled per landmark, with a residual
/// connection when input and output widths agree.
pub fn cic_layer(
    tape: &mut Tape,
    store: &ParamStore,
    feats: Var,
    coords: Var,
    knn: &[Vec<usize>],
    p: &CicParams,
) -> Result<Var> {
    let l = tape.value(feats).rows();
    if tape.value(coords).rows() != l || knn.len() != l {
        return Err(Error::ShapeMismatch(format!(
            "cic_layer: {l} feature rows, {} coordinate rows, {} neighbour lists",
            tape.value(coords).rows(),
            knn.len()
        )));
    }
    let k = knn.first().map_or(0, Vec::len);
    if k == 0 || k >= l || knn.iter().any(|n| n.len() != k) {
        return Err(Error::KOutOfRange {
            k,
            n: l.saturating_sub(1),
        });
    }
    let w_feat = tape.param(store, p.w_feat);
    let w_rel = tape.param(store, p.w_rel);
    let w_pos = tape.param(store, p.w_pos);
    let bias = tape.param(store, p.bias);
    // W·[f_j; f_j − f_l; p_j − p_l] = U_j − V_l with
    // U = F·(W_feat + W_rel)ᵀ + P·W_posᵀ and V = F·W_relᵀ + P·W_posᵀ.
    let a = tape.matmul_t(feats, w_feat)?;
    let b = tape.matmul_t(feats, w_rel)?;
    let c = tape.matmul_t(coords, w_pos)?;
    let v = tape.add(b, c)?;
    let u = tape.add(a, v)?;
    let nbr: Vec<usize> = knn.iter().flatten().copied().collect();
    let pooled = tape.edge_gelu_max(u, v, bias, nbr, k)?;
    if tape.value(feats).cols() == tape.value(pooled).cols() {
        tape.add(feats, pooled)
    } else {
        Ok(pooled)
    }
}

/// Top-`c` landmarks by projected score, plus the score column `[L×1]`.
pub fn select_curve_starts(
    tape: &mut Tape,
    store: &ParamStore,
    feats: Var,
    p: &GroupingParams,
    c: usize,
) -> Result<(Vec<usize>, Var)> {
    let l = tape.value(feats).rows();
    if c == 0 || c > l {
        return Err(Error::COutOfRange { c, n: l });
    }
    let scores = p.scorer.forward(tape, store, feats)?;
    let starts = top_k_select(tape.value(scores).data(), c)?;
    Ok((starts, scores))
}

/// Start feature scaled by `sigmoid(score)` so the scorer receives gradient.
fn gated_start(tape: &mut Tape, feats: Var, scores: Var, start: usize) -> Result<Var> {
    let f = tape.gather_rows(feats, vec![start])?;
    let s = tape.gather_rows(scores, vec![start])?;
    let g = tape.sigmoid(s);
    tape.scale_by(f, g)
}

/// Candidate with the highest logit; exact ties go to the lowest landmark
/// index.
fn best_candidate(cands: &[usize], logits: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..cands.len() {
        if logits[i] > logits[best] || (logits[i] == logits[best] && cands[i] < cands[best]) {
            best = i;
        }
    }
    best
}

/// Walks one curve. Returns the visited indices and the per-step state
/// vars, padded to `cfg.curve_len` by repeating the last state.
#[allow(clippy::too_many_arguments)]
fn walk_vars(
    tape: &mut Tape,
    store: &ParamStore,
    feats: Var,
    psi_feats: Var,
    start: usize,
    start_state: Var,
    knn: &[Vec<usize>],
    p: &GroupingParams,
    cfg: &CurveConfig,
    mode: &mut WalkMode<'_>,
    replay: Option<&[usize]>,
) -> Result<(Vec<usize>, Vec<Var>)> {
    let l = tape.value(feats).rows();
    if start >= l {
        return Err(Error::ShapeMismatch(format!(
            "curve start {start} out of {l} landmarks"
        )));
    }
    let d = tape.value(feats).cols();
    let mut visited = vec![false; l];
    visited[start] = true;
    let mut indices = vec![start];
    let mut state = start_state;
    let mut steps = vec![state];
    for step in 1..cfg.curve_len {
        let cur = *indices.last().expect("non-empty");
        let cands: Vec<usize> = knn[cur].iter().copied().filter(|&j| !visited[j]).collect();
        if cands.is_empty() {
            break;
        }
        let (next, picked) = if let Some(rec) = replay {
            let Some(&next) = rec.get(step) else { break };
            (next, tape.gather_rows(feats, vec![next])?)
        } else {
            let phi = p.phi.forward(tape, store, state)?;
            let cand_psi = tape.gather_rows(psi_feats, cands.clone())?;
            let logits = tape.matmul_t(phi, cand_psi)?;
            let logits = tape.scale(logits, 1.0 / (d as f64).sqrt());
            match mode {
                WalkMode::Train(rng) => {
                    let noise = gumbel_noise(cands.len(), &mut **rng);
                    let y = gumbel_softmax(tape, logits, cfg.tau, true, &noise)?;
                    let next = cands[argmax(tape.value(y).data())];
                    let cand_f = tape.gather_rows(feats, cands.clone())?;
                    (next, tape.matmul(y, cand_f)?)
                }
                _ => {
                    let next = cands[best_candidate(&cands, tape.value(logits).data())];
                    (next, tape.gather_rows(feats, vec![next])?)
                }
            }
        };
        visited[next] = true;
        indices.push(next);
        let joined = tape.concat_cols(&[state, picked])?;
        let h = p.update.forward(tape, store, joined)?;
        state = tape.gelu(h);
        steps.push(state);
    }
    while steps.len() < cfg.curve_len {
        steps.push(*steps.last().expect("non-empty"));
    }
    Ok((indices, steps))
}

/// Walks one curve from `start` over `feats`.
#[allow(clippy::too_many_arguments)]
pub fn walk_curve(
    tape: &mut Tape,
    store: &ParamStore,
    feats: Var,
    start: usize,
    knn: &[Vec<usize>],
    p: &GroupingParams,
    cfg: &CurveConfig,
    mode: &mut WalkMode<'_>,
) -> Result<(Curve, Vec<Var>)> {
    let psi = p.psi.forward(tape, store, feats)?;
    let s0 = tape.gather_rows(feats, vec![start])?;
    let (indices, steps) = walk_vars(tape, store, feats, psi, start, s0, knn, p, cfg, mode, None)?;
    let stacked = tape.concat_rows(&steps)?;
    Ok((
        Curve {
            indices,
            step_features: tape.value(stacked).clone(),
        },
        steps,
    ))
}

/// Pools each curve into a descriptor and fuses the descriptors into every
/// landmark: `h'_l = f_l + Σ_c α_{l,c}·D_c`, `α_{l,·} = softmax(⟨f_l, D_c⟩/√d)`.
///
/// `curves` holds per-curve step states, each `curve_len` vars of `[1×d]`.
pub fn aggregate_curves(
    tape: &mut Tape,
    store: &ParamStore,
    feats: Var,
    curves: &[Vec<Var>],
    p: &GroupingParams,
) -> Result<Var> {
    if curves.is_empty() {
        return Err(Error::NoCurves);
    }
    let s = curves[0].len();
    let all: Vec<Var> = curves.iter().flatten().copied().collect();
    let stacked = tape.concat_rows(&all)?;
    let mx = tape.group_max(stacked, s)?;
    let mean = tape.group_mean(stacked, s)?;
    let pooled = tape.concat_cols(&[mx, mean])?;
    let h = p.desc_in.forward(tape, store, pooled)?;
    let h = tape.gelu(h);
    let desc = p.desc_out.forward(tape, store, h)?;
    fuse_descriptors(tape, feats, desc)
}

/// `F + softmax(F·Dᵀ/√d)·D`.
pub fn fuse_descriptors(tape: &mut Tape, feats: Var, desc: Var) -> Result<Var> {
    let d = tape.value(feats).cols();
    let scores = tape.matmul_t(feats, desc)?;
    let scores = tape.scale(scores, 1.0 / (d as f64).sqrt());
    let alpha = tape.softmax_rows(scores);
    let mixed = tape.matmul(alpha, desc)?;
    tape.add(feats, mixed)
}

/// Curve grouping stage: select starts, walk, aggregate.
#[allow(clippy::too_many_arguments)]
fn group_stage(
    tape: &mut Tape,
    store: &ParamStore,
    feats: Var,
    knn: &[Vec<usize>],
    p: &GroupingParams,
    cfg: &CurveConfig,
    mode: &mut WalkMode<'_>,
    stage: usize,
) -> Result<(Var, StageTrace)> {
    let (mut starts, scores) = select_curve_starts(tape, store, feats, p, cfg.n_curves)?;
    let recorded = match mode {
        WalkMode::Replay(t) => Some(t.stages.get(stage).cloned().ok_or_else(|| {
            Error::ShapeMismatch(format!("replay trace has no grouping stage {stage}"))
        })?),
        _ => None,
    };
    if let Some(rec) = &recorded {
        starts = rec.starts.clone();
    }
    let psi = if recorded.is_none() {
        p.psi.forward(tape, store, feats)?
    } else {
        feats
    };
    let mut trace = StageTrace {
        starts: starts.clone(),
        walks: Vec::with_capacity(starts.len()),
    };
    let mut curves = Vec::with_capacity(starts.len());
    for (ci, &start) in starts.iter().enumerate() {
        let s0 = gated_start(tape, feats, scores, start)?;
        let replay = recorded.as_ref().map(|r| r.walks[ci].as_slice());
        let (idx, steps) = walk_vars(
            tape, store, feats, psi, start, s0, knn, p, cfg, mode, replay,
        )?;
        trace.walks.push(idx);
        curves.push(steps);
    }
    let out = aggregate_curves(tape, store, feats, &curves, p)?;
    Ok((out, trace))
}

/// Relativity network for one frame: `coords [L×3] → features [L×d]`.
///
/// `knn` must hold the `cfg.knn` nearest neighbours of each landmark.
pub fn relativity_forward(
    tape: &mut Tape,
    store: &ParamStore,
    coords: Var,
    knn: &[Vec<usize>],
    params: &RelativityParams,
    cfg: &CurveConfig,
    mode: &mut WalkMode<'_>,
) -> Result<(Var, FrameTrace)> {
    let l = tape.value(coords).rows();
    cfg.validate(l)?;
    let mut trace = FrameTrace {
        knn: knn.to_vec(),
        stages: Vec::new(),
    };
    let mut h = coords;
    for (layer, cic) in params.cic.iter().enumerate() {
        h = cic_layer(tape, store, h, coords, knn, cic)?;
        if let (Some(groups), 1 | 3) = (&params.grouping, layer) {
            let stage = layer / 2;
            let (out, st) = group_stage(tape, store, h, knn, &groups[stage], cfg, mode, stage)?;
            h = out;
            trace.stages.push(st);
        }
    }
    Ok((h, trace))
}
