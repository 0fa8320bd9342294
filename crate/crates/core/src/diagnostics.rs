//! Finite-difference verification of the whole model.
//!
//! Discrete choices (neighbour lists, curve starts, walk steps, max-pool
//! winners) are recorded once in eval mode and replayed for every probe, so
//! the checked function is smooth in the parameters and the input
//! coordinates.
//!
//! The two-point central rule has an absolute noise floor near
//! `ulp(loss) / eps`, about 1e-11 at `eps = 1e-5`. Against the 1e-8
//! denominator floor of the relative error that already fails any entry whose
//! true gradient is close to zero, and a model with thousands of parameters
//! always has some. The suite therefore uses the fourth-order rule at
//! `eps = 3e-4`, where rounding noise is near 5e-13 and the `O(eps⁴)`
//! truncation stays below it; fixing the pool winners keeps the wider step
//! off the kinks.

use std::fmt;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::classifier::{ClipMode, Model, ModelConfig};
use crate::error::Result;
use crate::landmark_io::Label;
use crate::numerics::{compare_with_stencil, GradCheckReport, Stencil, Tape, Tensor};
use crate::relativity::FrameTrace;

#[derive(Clone, Debug)]
pub struct GradcheckOptions {
    pub model: ModelConfig,
    pub seed: u64,
    pub eps: f64,
    pub tol: f64,
    pub stencil: Stencil,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            model: tiny_config(),
            seed: 0,
            eps: 3e-4,
            tol: 1e-4,
            stencil: Stencil::Central4,
        }
    }
}

/// 12 landmarks, 4 tokens, 4 frames, width 8, 2 curves of 3 steps, 3 neighbours.
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        landmarks: 12,
        d: 8,
        tokens: 4,
        n_curves: 2,
        curve_len: 3,
        knn: 3,
        clip_len: 4,
        ..ModelConfig::default()
    }
}

#[derive(Clone, Debug)]
pub struct SuiteReport {
    /// One entry per parameter tensor plus one for the input coordinates.
    pub entries: Vec<(String, GradCheckReport)>,
    pub elapsed: Duration,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|(_, r)| r.passed())
    }

    pub fn checked(&self) -> usize {
        self.entries.iter().map(|(_, r)| r.checked).sum()
    }

    pub fn worst(&self) -> Option<&(String, GradCheckReport)> {
        self.entries
            .iter()
            .max_by(|a, b| a.1.max_rel_err.total_cmp(&b.1.max_rel_err))
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (name, r) in &self.entries {
            writeln!(f, "{name:<40} {r}")?;
        }
        let worst = self.worst().map_or(0.0, |w| w.1.max_rel_err);
        write!(
            f,
            "{} values in {} tensors, worst rel err {worst:.3e}, {:.1}s: {}",
            self.checked(),
            self.entries.len(),
            self.elapsed.as_secs_f64(),
            if self.passed() { "PASS" } else { "FAIL" }
        )
    }
}

/// Face-sized random clip: a fixed cloud plus small per-frame motion.
pub fn random_clip(landmarks: usize, frames: usize, rng: &mut impl Rng) -> Vec<Tensor> {
    let base: Vec<f64> = (0..landmarks * 3)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    (0..frames)
        .map(|_| {
            let data = base
                .iter()
                .map(|v| v + rng.random_range(-0.1..0.1))
                .collect();
            Tensor::matrix(landmarks, 3, data)
        })
        .collect()
}

struct Frozen {
    traces: Vec<FrameTrace>,
    pools: Vec<Vec<usize>>,
}

fn replay_loss(model: &Model, coords: &[Tensor], frozen: &Frozen, label: Label) -> Result<f64> {
    let traces = &frozen.traces;
    let mut tape = Tape::replaying_max(frozen.pools.clone());
    let g = model.build_graph(&mut tape, coords, ClipMode::Replay(traces))?;
    let loss = tape.bce(g.score, label.as_f64())?;
    Ok(tape.scalar(loss))
}

/// Checks every parameter and input-coordinate gradient of the BCE loss.
pub fn model_gradcheck(opts: &GradcheckOptions) -> Result<SuiteReport> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut model = Model::new(opts.model.clone(), rng.random())?;
    // Small random head and positions so every path carries gradient.
    for id in [model.trajectory.pos, model.head.ln.beta] {
        model
            .store
            .value_mut(id)
            .data_mut()
            .iter_mut()
            .for_each(|v| *v = rng.random_range(-0.5..0.5));
    }
    let coords = random_clip(opts.model.landmarks, opts.model.clip_len, &mut rng);
    let label = Label::Posed;

    let mut tape = Tape::new();
    let traces = model
        .build_graph(&mut tape, &coords, ClipMode::Eval)?
        .traces;
    let mut tape = Tape::new();
    let g = model.build_graph(&mut tape, &coords, ClipMode::Replay(&traces))?;
    let loss = tape.bce(g.score, label.as_f64())?;
    let grads = tape.backward(loss);
    let param_vars: Vec<_> = tape.params().to_vec();
    let frozen = Frozen {
        traces,
        pools: tape.max_choices().to_vec(),
    };
    let coord_grads: Vec<f64> = g
        .coords
        .iter()
        .zip(&coords)
        .flat_map(|(&v, c)| grads.get_or_zeros(v, c).into_data())
        .collect();

    let mut entries = Vec::new();
    let ids: Vec<_> = model.store.ids().collect();
    for id in ids {
        let value = model.store.value(id).clone();
        let analytic = param_vars.iter().find(|(p, _)| *p == id).map_or_else(
            || Tensor::zeros(value.shape()),
            |&(_, v)| grads.get_or_zeros(v, &value),
        );
        let name = model.store.get(id).name.clone();
        let mut err = None;
        let report = compare_with_stencil(
            |x| {
                model.store.value_mut(id).data_mut().copy_from_slice(x);
                replay_loss(&model, &coords, &frozen, label).unwrap_or_else(|e| {
                    err.get_or_insert(e);
                    f64::NAN
                })
            },
            value.data(),
            analytic.data(),
            opts.eps,
            opts.tol,
            opts.stencil,
        );
        model
            .store
            .value_mut(id)
            .data_mut()
            .copy_from_slice(value.data());
        if let Some(e) = err {
            return Err(e);
        }
        entries.push((name, report));
    }

    let flat: Vec<f64> = coords.iter().flat_map(|c| c.data().to_vec()).collect();
    let (l, n) = (opts.model.landmarks, opts.model.clip_len);
    let unflatten = |x: &[f64]| -> Vec<Tensor> {
        (0..n)
            .map(|i| Tensor::matrix(l, 3, x[i * l * 3..(i + 1) * l * 3].to_vec()))
            .collect()
    };
    let report = compare_with_stencil(
        |x| replay_loss(&model, &unflatten(x), &frozen, label).unwrap_or(f64::NAN),
        &flat,
        &coord_grads,
        opts.eps,
        opts.tol,
        opts.stencil,
    );
    entries.push(("input.coords".to_string(), report));
    Ok(SuiteReport {
        entries,
        elapsed: start.elapsed(),
    })
}
