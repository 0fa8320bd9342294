//! Trajectory network: token mixing plus axial attention.
//!
//! Each frame's `L×d` landmark features are mixed down to `T` tokens by a
//! learned map over the landmark axis. The resulting `[N·T × d]` matrix (row
//! `n·T + t` is token `t` of frame `n`) goes through spatial blocks, where
//! tokens of one frame attend to each other, and temporal blocks, where each
//! token attends to itself across frames.

use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::layers::{transformer_block, TransformerBlockParams};
use crate::numerics::{ParamId, ParamStore, RowGroups, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockOrder {
    /// All spatial blocks, then all temporal blocks.
    Sequential,
    /// Temporal blocks spread evenly between the spatial ones.
    Interleaved,
}

impl FromStr for BlockOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sequential" => Ok(Self::Sequential),
            "interleaved" => Ok(Self::Interleaved),
            other => Err(Error::ConfigInvalid(format!(
                "block_order must be sequential|interleaved, got `{other}`"
            ))),
        }
    }
}

impl BlockOrder {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Sequential => "sequential",
            Self::Interleaved => "interleaved",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Spatial,
    Temporal,
}

/// Block schedule for `spatial` + `temporal` blocks.
pub fn block_schedule(spatial: usize, temporal: usize, order: BlockOrder) -> Vec<Axis> {
    match order {
        BlockOrder::Sequential => std::iter::repeat_n(Axis::Spatial, spatial)
            .chain(std::iter::repeat_n(Axis::Temporal, temporal))
            .collect(),
        BlockOrder::Interleaved => {
            // temporal block j goes after spatial block ceil((j+1)·S/Tm)
            let mut out = Vec::with_capacity(spatial + temporal);
            let mut placed = 0;
            for s in 1..=spatial {
                out.push(Axis::Spatial);
                while placed < temporal && (placed + 1) * spatial <= s * temporal {
                    out.push(Axis::Temporal);
                    placed += 1;
                }
            }
            out.extend(std::iter::repeat_n(Axis::Temporal, temporal - placed));
            out
        }
    }
}

/// Token features of one clip, `[N·T × d]` with frame-major rows.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenFeatures {
    pub n_frames: usize,
    pub tokens: usize,
    pub features: Tensor,
}

impl TokenFeatures {
    pub fn d(&self) -> usize {
        self.features.cols()
    }

    pub fn token(&self, frame: usize, token: usize) -> &[f64] {
        self.features.row(frame * self.tokens + token)
    }
}

#[derive(Clone, Debug)]
pub struct TrajectoryParams {
    /// Mixing weights `[T × L]`.
    pub mix_w: ParamId,
    /// Mixing bias `[T]`.
    pub mix_b: ParamId,
    /// Temporal position embedding `[N_clip × d]`, zero at init.
    pub pos: ParamId,
    pub spatial: Vec<TransformerBlockParams>,
    pub temporal: Vec<TransformerBlockParams>,
    pub order: BlockOrder,
    pub heads: usize,
}

impl TrajectoryParams {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        landmarks: usize,
        tokens: usize,
        clip_len: usize,
        d: usize,
        heads: usize,
        spatial: usize,
        temporal: usize,
        order: BlockOrder,
        rng: &mut R,
    ) -> Result<Self> {
        if heads == 0 || !d.is_multiple_of(heads) {
            return Err(Error::IndivisibleHeads { d, heads });
        }
        let mix_w = store.uniform(
            "trajectory.mix.weight",
            &[tokens, landmarks],
            landmarks,
            rng,
        );
        let mix_b = store.zeros("trajectory.mix.bias", &[tokens]);
        let pos = store.zeros("trajectory.pos", &[clip_len, d]);
        let spatial = (0..spatial)
            .map(|i| TransformerBlockParams::new(store, &format!("trajectory.spatial{i}"), d, rng))
            .collect();
        let temporal = (0..temporal)
            .map(|i| TransformerBlockParams::new(store, &format!("trajectory.temporal{i}"), d, rng))
            .collect();
        Ok(Self {
            mix_w,
            mix_b,
            pos,
            spatial,
            temporal,
            order,
            heads,
        })
    }

    pub fn tokens(&self, store: &ParamStore) -> usize {
        store.value(self.mix_w).rows()
    }

    pub fn block_count(&self) -> usize {
        self.spatial.len() + self.temporal.len()
    }
}

/// Rows of each frame: `{n·T, …, n·T + T − 1}`.
pub fn frame_groups(n_frames: usize, tokens: usize) -> RowGroups {
    Arc::new(
        (0..n_frames)
            .map(|n| (n * tokens..(n + 1) * tokens).collect())
            .collect(),
    )
}

/// Rows of each token across frames: `{t, T + t, 2T + t, …}`.
pub fn token_groups(n_frames: usize, tokens: usize) -> RowGroups {
    Arc::new(
        (0..tokens)
            .map(|t| (0..n_frames).map(|n| n * tokens + t).collect())
            .collect(),
    )
}

/// Mixes each `[L×d]` frame to `[T×d]` tokens and stacks frames.
pub fn mix_tokens(
    tape: &mut Tape,
    store: &ParamStore,
    frames: &[Var],
    p: &TrajectoryParams,
) -> Result<Var> {
    if frames.is_empty() {
        return Err(Error::ShapeMismatch("mix_tokens: no frames".into()));
    }
    let l = store.value(p.mix_w).cols();
    let w = tape.param(store, p.mix_w);
    let b = tape.param(store, p.mix_b);
    let mut out = Vec::with_capacity(frames.len());
    for &h in frames {
        if tape.value(h).rows() != l {
            return Err(Error::ShapeMismatch(format!(
                "mix_tokens: frame has {} landmarks, mixing expects {l}",
                tape.value(h).rows()
            )));
        }
        let m = tape.matmul(w, h)?;
        out.push(tape.add_row_bias(m, b)?);
    }
    tape.concat_rows(&out)
}

fn check_frames(tape: &Tape, x: Var, n_frames: usize, tokens: usize) -> Result<()> {
    if tape.value(x).rows() != n_frames * tokens {
        return Err(Error::ShapeMismatch(format!(
            "token matrix has {} rows, expected {n_frames}×{tokens}",
            tape.value(x).rows()
        )));
    }
    Ok(())
}

/// Adds the positional row of each token's frame.
fn add_positions(
    tape: &mut Tape,
    store: &ParamStore,
    x: Var,
    n_frames: usize,
    tokens: usize,
    p: &TrajectoryParams,
) -> Result<Var> {
    let max = store.value(p.pos).rows();
    if n_frames > max {
        return Err(Error::ShapeMismatch(format!(
            "{n_frames} frames exceed the {max} learned temporal positions"
        )));
    }
    let pos = tape.param(store, p.pos);
    let idx: Vec<usize> = (0..n_frames)
        .flat_map(|n| std::iter::repeat_n(n, tokens))
        .collect();
    let rows = tape.gather_rows(pos, idx)?;
    tape.add(x, rows)
}

/// All spatial blocks, each frame independently.
pub fn spatial_pass(
    tape: &mut Tape,
    store: &ParamStore,
    x: Var,
    n_frames: usize,
    p: &TrajectoryParams,
) -> Result<Var> {
    let tokens = p.tokens(store);
    check_frames(tape, x, n_frames, tokens)?;
    let groups = frame_groups(n_frames, tokens);
    p.spatial.iter().try_fold(x, |h, b| {
        transformer_block(tape, store, h, b, p.heads, groups.clone())
    })
}

/// Positional embedding, then all temporal blocks, each token independently.
pub fn temporal_pass(
    tape: &mut Tape,
    store: &ParamStore,
    x: Var,
    n_frames: usize,
    p: &TrajectoryParams,
) -> Result<Var> {
    let tokens = p.tokens(store);
    check_frames(tape, x, n_frames, tokens)?;
    let groups = token_groups(n_frames, tokens);
    let h = add_positions(tape, store, x, n_frames, tokens, p)?;
    p.temporal.iter().try_fold(h, |h, b| {
        transformer_block(tape, store, h, b, p.heads, groups.clone())
    })
}

/// Mixing followed by the block schedule. Positions are added right before
/// the first temporal block.
pub fn trajectory_forward(
    tape: &mut Tape,
    store: &ParamStore,
    frames: &[Var],
    p: &TrajectoryParams,
) -> Result<Var> {
    let x = mix_tokens(tape, store, frames, p)?;
    let n = frames.len();
    if p.order == BlockOrder::Sequential {
        let x = spatial_pass(tape, store, x, n, p)?;
        return temporal_pass(tape, store, x, n, p);
    }
    let tokens = p.tokens(store);
    let (fg, tg) = (frame_groups(n, tokens), token_groups(n, tokens));
    let mut h = x;
    let (mut si, mut ti) = (0, 0);
    for axis in block_schedule(p.spatial.len(), p.temporal.len(), p.order) {
        match axis {
            Axis::Spatial => {
                h = transformer_block(tape, store, h, &p.spatial[si], p.heads, fg.clone())?;
                si += 1;
            }
            Axis::Temporal => {
                if ti == 0 {
                    h = add_positions(tape, store, h, n, tokens, p)?;
                }
                h = transformer_block(tape, store, h, &p.temporal[ti], p.heads, tg.clone())?;
                ti += 1;
            }
        }
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(
        l: usize,
        t: usize,
        n: usize,
        d: usize,
        seed: u64,
    ) -> (ParamStore, TrajectoryParams, Vec<Tensor>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let p = TrajectoryParams::new(
            &mut store,
            l,
            t,
            n,
            d,
            2,
            2,
            2,
            BlockOrder::Sequential,
            &mut rng,
        )
        .unwrap();
        let frames = (0..n)
            .map(|_| {
                Tensor::matrix(
                    l,
                    d,
                    (0..l * d).map(|_| rng.random_range(-1.0..1.0)).collect(),
                )
            })
            .collect();
        (store, p, frames)
    }

    fn leaves(tape: &mut Tape, frames: &[Tensor]) -> Vec<Var> {
        frames.iter().map(|f| tape.leaf(f.clone())).collect()
    }

    fn zero_blocks(store: &mut ParamStore, blocks: &[TransformerBlockParams]) {
        for b in blocks {
            for id in b.param_ids() {
                store
                    .value_mut(id)
                    .data_mut()
                    .iter_mut()
                    .for_each(|v| *v = 0.0);
            }
        }
    }

    #[test]
    fn schedules() {
        use Axis::{Spatial as S, Temporal as T};
        assert_eq!(
            block_schedule(6, 3, BlockOrder::Sequential),
            vec![S, S, S, S, S, S, T, T, T]
        );
        assert_eq!(
            block_schedule(6, 3, BlockOrder::Interleaved),
            vec![S, S, T, S, S, T, S, S, T]
        );
        assert_eq!(block_schedule(1, 2, BlockOrder::Interleaved), vec![S, T, T]);
        assert_eq!(block_schedule(0, 2, BlockOrder::Interleaved), vec![T, T]);
    }

    #[test]
    fn mixing_identity_and_zero() {
        let (mut store, p, frames) = setup(4, 4, 3, 4, 1);
        *store.value_mut(p.mix_w) = Tensor::eye(4);
        let mut tape = Tape::new();
        let fs = leaves(&mut tape, &frames);
        let x = mix_tokens(&mut tape, &store, &fs, &p).unwrap();
        let stacked: Vec<f64> = frames.iter().flat_map(|f| f.data().to_vec()).collect();
        assert_eq!(tape.value(x).data(), &stacked[..]);

        store
            .value_mut(p.mix_w)
            .data_mut()
            .iter_mut()
            .for_each(|v| *v = 0.0);
        let mut tape = Tape::new();
        let fs = leaves(&mut tape, &frames);
        let x = mix_tokens(&mut tape, &store, &fs, &p).unwrap();
        assert!(tape.value(x).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_blocks_are_identity() {
        let (mut store, p, frames) = setup(6, 3, 4, 4, 2);
        zero_blocks(&mut store, &p.spatial);
        zero_blocks(&mut store, &p.temporal);
        let mut tape = Tape::new();
        let fs = leaves(&mut tape, &frames);
        let x = mix_tokens(&mut tape, &store, &fs, &p).unwrap();
        let s = spatial_pass(&mut tape, &store, x, 4, &p).unwrap();
        let t = temporal_pass(&mut tape, &store, x, 4, &p).unwrap();
        assert_eq!(tape.value(s), tape.value(x));
        assert_eq!(tape.value(t), tape.value(x));
    }

    #[test]
    fn composition_matches_passes() {
        let (store, p, frames) = setup(6, 3, 4, 4, 3);
        let mut tape = Tape::new();
        let fs = leaves(&mut tape, &frames);
        let full = trajectory_forward(&mut tape, &store, &fs, &p).unwrap();
        let x = mix_tokens(&mut tape, &store, &fs, &p).unwrap();
        let s = spatial_pass(&mut tape, &store, x, 4, &p).unwrap();
        let t = temporal_pass(&mut tape, &store, s, 4, &p).unwrap();
        assert_eq!(tape.value(full), tape.value(t));
    }

    #[test]
    fn spatial_pass_keeps_frames_apart() {
        let (store, p, frames) = setup(5, 3, 4, 4, 4);
        let run = |frames: &[Tensor]| {
            let mut tape = Tape::new();
            let fs = leaves(&mut tape, frames);
            let x = mix_tokens(&mut tape, &store, &fs, &p).unwrap();
            let s = spatial_pass(&mut tape, &store, x, 4, &p).unwrap();
            tape.value(s).clone()
        };
        let base = run(&frames);
        let mut zeroed = frames.clone();
        zeroed[2] = Tensor::zeros(&[5, 4]);
        let other = run(&zeroed);
        for r in 0..12 {
            let same = base.row(r) == other.row(r);
            assert_eq!(same, r / 3 != 2, "row {r}");
        }
        let mut swapped = frames.clone();
        swapped.swap(0, 3);
        let sw = run(&swapped);
        for t in 0..3 {
            assert_eq!(sw.row(t), base.row(9 + t));
            assert_eq!(sw.row(9 + t), base.row(t));
        }
    }

    #[test]
    fn temporal_pass_keeps_tokens_apart_and_sees_order() {
        let (mut store, p, _) = setup(5, 3, 4, 4, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        store
            .value_mut(p.pos)
            .data_mut()
            .iter_mut()
            .for_each(|v| *v = rng.random_range(-1.0..1.0));
        let x: Vec<f64> = (0..12 * 4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let run = |x: &[f64]| {
            let mut tape = Tape::new();
            let xv = tape.leaf(Tensor::matrix(12, 4, x.to_vec()));
            let t = temporal_pass(&mut tape, &store, xv, 4, &p).unwrap();
            tape.value(t).clone()
        };
        let base = run(&x);
        let mut zeroed = x.clone();
        for n in 0..4 {
            let r = n * 3 + 1;
            zeroed[r * 4..(r + 1) * 4].iter_mut().for_each(|v| *v = 0.0);
        }
        let other = run(&zeroed);
        for r in 0..12 {
            assert_eq!(base.row(r) == other.row(r), r % 3 != 1, "row {r}");
        }

        // reversing frames does not merely reverse the output once positions matter
        let mut reversed = Vec::new();
        for n in (0..4).rev() {
            reversed.extend_from_slice(&x[n * 12..(n + 1) * 12]);
        }
        let rev = run(&reversed);
        let mut max_gap: f64 = 0.0;
        for n in 0..4 {
            for t in 0..3 {
                let a = base.row(n * 3 + t);
                let b = rev.row((3 - n) * 3 + t);
                max_gap = a
                    .iter()
                    .zip(b)
                    .fold(max_gap, |m, (u, v)| m.max((u - v).abs()));
            }
        }
        assert!(max_gap > 1e-3, "{max_gap}");
    }

    #[test]
    fn default_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let p = TrajectoryParams::new(
            &mut store,
            478,
            32,
            16,
            64,
            4,
            6,
            3,
            BlockOrder::Sequential,
            &mut rng,
        )
        .unwrap();
        assert_eq!(p.block_count(), 9);
        let mut tape = Tape::new();
        let frames: Vec<Var> = (0..16)
            .map(|_| tape.leaf(Tensor::full(&[478, 64], 0.01)))
            .collect();
        let z = trajectory_forward(&mut tape, &store, &frames, &p).unwrap();
        assert_eq!(tape.value(z).shape(), &[16 * 32, 64]);
    }

    #[test]
    fn heads_must_divide_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let r = TrajectoryParams::new(
            &mut store,
            8,
            4,
            4,
            6,
            4,
            1,
            1,
            BlockOrder::Sequential,
            &mut rng,
        );
        assert!(matches!(r, Err(Error::IndivisibleHeads { d: 6, heads: 4 })));
    }
}
