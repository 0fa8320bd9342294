//! Whole-model composition: normalization, relativity per frame, trajectory,
//! and the pooled sigmoid head.

use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::landmark_io::{sample_eval_clips, Clip, Label, LandmarkSequence, NormalizeMode};
use crate::numerics::layers::{layer_norm, LayerNormParams, LinearParams};
use crate::numerics::{knn_indices, ParamId, ParamStore, Tape, Tensor, Var};
use crate::relativity::{relativity_forward, CurveConfig, FrameTrace, RelativityParams, WalkMode};
use crate::trajectory::{trajectory_forward, BlockOrder, TrajectoryParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pool {
    Mean,
    Max,
}

impl FromStr for Pool {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Self::Mean),
            "max" => Ok(Self::Max),
            other => Err(Error::ConfigInvalid(format!(
                "pool must be mean|max, got `{other}`"
            ))),
        }
    }
}

impl Pool {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Mean => "mean",
            Self::Max => "max",
        }
    }
}

/// Architecture and input settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub landmarks: usize,
    pub d: usize,
    pub tokens: usize,
    pub heads: usize,
    pub n_curves: usize,
    pub curve_len: usize,
    pub knn: usize,
    pub spatial_blocks: usize,
    pub temporal_blocks: usize,
    pub block_order: BlockOrder,
    pub pool: Pool,
    pub tau: f64,
    /// Curve grouping in CIC layers 2 and 4; off gives plain edge-conv layers.
    pub use_curves: bool,
    pub clip_len: usize,
    pub normalize: NormalizeMode,
    pub eval_clips: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            landmarks: 478,
            d: 64,
            tokens: 32,
            heads: 4,
            n_curves: 8,
            curve_len: 16,
            knn: 8,
            spatial_blocks: 6,
            temporal_blocks: 3,
            block_order: BlockOrder::Sequential,
            pool: Pool::Mean,
            tau: 1.0,
            use_curves: true,
            clip_len: 16,
            normalize: NormalizeMode::Frame,
            eval_clips: 5,
        }
    }
}

impl ModelConfig {
    pub fn curve_config(&self) -> CurveConfig {
        CurveConfig {
            n_curves: self.n_curves,
            curve_len: self.curve_len,
            knn: self.knn,
            d: self.d,
            tau: self.tau,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::ConfigInvalid(m));
        if self.landmarks < crate::landmark_io::MIN_LANDMARKS {
            return bad(format!(
                "landmarks must be at least 4, got {}",
                self.landmarks
            ));
        }
        if self.d == 0 || self.tokens == 0 || self.clip_len == 0 || self.eval_clips == 0 {
            return bad("d, tokens, clip_len and eval_clips must be positive".into());
        }
        if self.heads == 0 || !self.d.is_multiple_of(self.heads) {
            return Err(Error::IndivisibleHeads {
                d: self.d,
                heads: self.heads,
            });
        }
        if self.use_curves {
            self.curve_config().validate(self.landmarks)
        } else if self.knn == 0 || self.knn >= self.landmarks {
            Err(Error::KOutOfRange {
                k: self.knn,
                n: self.landmarks - 1,
            })
        } else {
            Ok(())
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct HeadParams {
    pub ln: LayerNormParams,
    pub out: LinearParams,
}

/// Probability that a video is posed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prediction {
    pub score: f64,
}

impl Prediction {
    /// `score ≥ 0.5` is posed.
    pub fn label(self) -> Label {
        Label::from_score(self.score)
    }
}

/// Discrete-choice policy for one clip forward pass.
#[derive(Clone, Copy, Debug)]
pub enum ClipMode<'a> {
    Eval,
    /// Gumbel walks; frame `n` draws from stream `n` of a generator seeded
    /// with `seed`.
    Train {
        seed: u64,
    },
    /// Re-run recorded choices (one trace per frame).
    Replay(&'a [FrameTrace]),
}

/// Vars of one recorded clip pass.
pub struct ClipGraph {
    /// Raw coordinate leaves, one `[L×3]` per frame.
    pub coords: Vec<Var>,
    /// Trajectory output `[N·T × d]`.
    pub tokens: Var,
    /// Pre-sigmoid value `[1×1]`.
    pub logit: Var,
    /// `sigmoid(logit)`.
    pub score: Var,
    pub traces: Vec<FrameTrace>,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub cfg: ModelConfig,
    pub store: ParamStore,
    pub relativity: RelativityParams,
    pub trajectory: TrajectoryParams,
    pub head: HeadParams,
}

/// Mean-or-max pool over all rows, layer norm, `d → 1` linear.
pub fn head_logit(
    tape: &mut Tape,
    store: &ParamStore,
    z: Var,
    head: &HeadParams,
    pool: Pool,
) -> Result<Var> {
    let rows = tape.value(z).rows();
    let pooled = match pool {
        Pool::Mean => tape.group_mean(z, rows)?,
        Pool::Max => tape.group_max(z, rows)?,
    };
    let h = layer_norm(tape, store, pooled, &head.ln)?;
    head.out.forward(tape, store, h)
}

/// Classification head: `sigmoid(head_logit(z))`.
pub fn classify_head(
    tape: &mut Tape,
    store: &ParamStore,
    z: Var,
    head: &HeadParams,
    pool: Pool,
) -> Result<Var> {
    let logit = head_logit(tape, store, z, head, pool)?;
    Ok(tape.sigmoid(logit))
}

/// Centroid `[1×3]` and reciprocal mean radius `[1×1]` of a frame.
fn frame_stats(tape: &mut Tape, x: Var) -> Result<(Var, Var)> {
    let l = tape.value(x).rows();
    let centroid = tape.group_mean(x, l)?;
    let centred = centred(tape, x, centroid)?;
    let radii = tape.row_norm(centred);
    let mean = tape.group_mean(radii, l)?;
    if !(tape.scalar(mean) > 0.0) {
        return Err(Error::DegenerateFrame);
    }
    Ok((centroid, tape.recip(mean)))
}

fn centred(tape: &mut Tape, x: Var, centroid: Var) -> Result<Var> {
    let l = tape.value(x).rows();
    let rep = tape.gather_rows(centroid, vec![0; l])?;
    tape.sub(x, rep)
}

/// Normalization inside the graph so coordinate gradients refer to the raw
/// input.
pub fn normalize_vars(tape: &mut Tape, frames: &[Var], mode: NormalizeMode) -> Result<Vec<Var>> {
    match mode {
        NormalizeMode::Off => Ok(frames.to_vec()),
        NormalizeMode::Frame => frames
            .iter()
            .map(|&x| {
                let (c, inv) = frame_stats(tape, x)?;
                let y = centred(tape, x, c)?;
                tape.scale_by(y, inv)
            })
            .collect(),
        NormalizeMode::Video => {
            let Some(&first) = frames.first() else {
                return Ok(Vec::new());
            };
            let (c, inv) = frame_stats(tape, first)?;
            frames
                .iter()
                .map(|&x| {
                    let y = centred(tape, x, c)?;
                    tape.scale_by(y, inv)
                })
                .collect()
        }
    }
}

fn points_of(t: &Tensor) -> Vec<[f64; 3]> {
    (0..t.rows())
        .map(|r| [t.at(r, 0), t.at(r, 1), t.at(r, 2)])
        .collect()
}

/// `[L×3]` coordinate tensors of a clip.
pub fn clip_tensors(clip: &Clip) -> Vec<Tensor> {
    clip.frames
        .iter()
        .map(|f| Tensor::matrix(f.len(), 3, f.to_f64().into_iter().flatten().collect()))
        .collect()
}

impl Model {
    /// Fresh model with weights drawn from `seed`.
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let relativity = RelativityParams::new(&mut store, cfg.d, cfg.use_curves, &mut rng);
        let trajectory = TrajectoryParams::new(
            &mut store,
            cfg.landmarks,
            cfg.tokens,
            cfg.clip_len,
            cfg.d,
            cfg.heads,
            cfg.spatial_blocks,
            cfg.temporal_blocks,
            cfg.block_order,
            &mut rng,
        )?;
        let head = HeadParams {
            ln: LayerNormParams::new(&mut store, "head.ln", cfg.d),
            out: LinearParams::new(&mut store, "head.out", cfg.d, 1, &mut rng),
        };
        Ok(Self {
            cfg,
            store,
            relativity,
            trajectory,
            head,
        })
    }

    /// Rebuilds the architecture for `cfg` and loads weights from an MSWT file.
    pub fn load(cfg: ModelConfig, path: &Path) -> Result<Self> {
        let mut m = Self::new(cfg, 0)?;
        m.store.load_checkpoint(path)?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.store.save_checkpoint(path)
    }

    /// Records one clip forward pass on `tape`.
    pub fn build_graph(
        &self,
        tape: &mut Tape,
        coords: &[Tensor],
        mode: ClipMode<'_>,
    ) -> Result<ClipGraph> {
        let n = coords.len();
        if n != self.cfg.clip_len {
            return Err(Error::ShapeMismatch(format!(
                "clip has {n} frames, model expects {}",
                self.cfg.clip_len
            )));
        }
        if let ClipMode::Replay(tr) = mode {
            if tr.len() != n {
                return Err(Error::ShapeMismatch(format!(
                    "{} traces for {n} frames",
                    tr.len()
                )));
            }
        }
        for c in coords {
            if c.shape() != [self.cfg.landmarks, 3] {
                return Err(Error::ShapeMismatch(format!(
                    "frame shape {:?}, expected [{}, 3]",
                    c.shape(),
                    self.cfg.landmarks
                )));
            }
        }
        let leaves: Vec<Var> = coords.iter().map(|c| tape.leaf(c.clone())).collect();
        let normed = normalize_vars(tape, &leaves, self.cfg.normalize)?;
        let curve_cfg = self.cfg.curve_config();
        let mut feats = Vec::with_capacity(n);
        let mut traces = Vec::with_capacity(n);
        for (i, &x) in normed.iter().enumerate() {
            let knn = match mode {
                ClipMode::Replay(tr) => tr[i].knn.clone(),
                _ => knn_indices(&points_of(tape.value(x)), self.cfg.knn)?,
            };
            let mut rng;
            let mut walk = match mode {
                ClipMode::Eval => WalkMode::Eval,
                ClipMode::Train { seed } => {
                    rng = ChaCha8Rng::seed_from_u64(seed);
                    rng.set_stream(i as u64);
                    WalkMode::Train(&mut rng)
                }
                ClipMode::Replay(tr) => WalkMode::Replay(&tr[i]),
            };
            let (h, trace) = relativity_forward(
                tape,
                &self.store,
                x,
                &knn,
                &self.relativity,
                &curve_cfg,
                &mut walk,
            )?;
            feats.push(h);
            traces.push(trace);
        }
        let tokens = trajectory_forward(tape, &self.store, &feats, &self.trajectory)?;
        let logit = head_logit(tape, &self.store, tokens, &self.head, self.cfg.pool)?;
        let score = tape.sigmoid(logit);
        Ok(ClipGraph {
            coords: leaves,
            tokens,
            logit,
            score,
            traces,
        })
    }

    pub fn forward_clip(&self, clip: &Clip, mode: ClipMode<'_>) -> Result<Prediction> {
        let mut tape = Tape::new();
        let g = self.build_graph(&mut tape, &clip_tensors(clip), mode)?;
        Ok(Prediction {
            score: tape.scalar(g.score),
        })
    }

    /// Scores of the evenly spaced evaluation clips.
    pub fn clip_scores(&self, seq: &LandmarkSequence) -> Result<Vec<f64>> {
        sample_eval_clips(seq, self.cfg.clip_len, self.cfg.eval_clips)?
            .iter()
            .map(|c| self.forward_clip(c, ClipMode::Eval).map(|p| p.score))
            .collect()
    }

    /// Mean score over the evaluation clips.
    pub fn predict_video(&self, seq: &LandmarkSequence) -> Result<Prediction> {
        let scores = self.clip_scores(seq)?;
        Ok(Prediction {
            score: scores.iter().sum::<f64>() / scores.len() as f64,
        })
    }

    /// Training-mode BCE loss of one clip and its parameter gradients.
    pub fn loss_and_grads(
        &self,
        clip: &Clip,
        label: Label,
        seed: u64,
    ) -> Result<(f64, Vec<(ParamId, Tensor)>)> {
        let mut tape = Tape::new();
        let g = self.build_graph(&mut tape, &clip_tensors(clip), ClipMode::Train { seed })?;
        let loss = tape.bce(g.score, label.as_f64())?;
        let grads = tape.backward(loss);
        let out = tape
            .params()
            .iter()
            .filter_map(|&(id, v)| grads.get(v).map(|gr| (id, gr.clone())))
            .collect();
        Ok((tape.scalar(loss), out))
    }

    /// Eval-mode score and `∂score/∂coords`, one `[L×3]` tensor per frame.
    pub fn coordinate_gradient(&self, coords: &[Tensor]) -> Result<(f64, Vec<Tensor>)> {
        let mut tape = Tape::new();
        let g = self.build_graph(&mut tape, coords, ClipMode::Eval)?;
        let grads = tape.backward(g.score);
        let per_frame = g
            .coords
            .iter()
            .zip(coords)
            .map(|(&v, c)| grads.get_or_zeros(v, c))
            .collect();
        Ok((tape.scalar(g.score), per_frame))
    }
}
