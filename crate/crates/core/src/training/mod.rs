//! Training loop and cross-validation protocol.
//!
//! All randomness comes from one seed. Sub-seeds are drawn with
//! [`stream_seed`]: fold `f` of trial `t` trains with
//! `stream_seed(seed, t·1000 + f)`, and fold assignment with
//! re-randomized folds uses `stream_seed(seed, FOLD_STREAM + t)`.

mod saliency;
mod stats;

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{Model, ModelConfig};
use crate::error::{Error, Result};
use crate::landmark_io::{
    make_folds, resample_fps, sample_train_clip, DatasetManifest, Fold, Label, LandmarkSequence,
    VideoRecord,
};
use crate::numerics::{AdamW, AdamWConfig, ParamId, Tensor};

pub use saliency::{
    saliency, write_saliency_csv, write_saliency_svg, CoordinateScorer, SaliencyMap,
};
pub use stats::{paired_t_test, TTest};

const FOLD_STREAM: u64 = 1 << 32;

/// Deterministic sub-seed: the first draw of stream `stream` of a generator
/// seeded with `seed`.
pub fn stream_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.random()
}

/// Learning-rate schedule over all optimizer steps of one fold.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Half-cosine decay from `lr` to 0.
    Cosine,
}

impl LrSchedule {
    /// Rate for 0-based `step` of `total`.
    pub fn rate(self, lr: f64, step: usize, total: usize) -> f64 {
        match self {
            Self::Constant => lr,
            Self::Cosine => {
                0.5 * lr * (1.0 + (std::f64::consts::PI * step as f64 / total.max(1) as f64).cos())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    #[serde(default)]
    pub lr_schedule: LrSchedule,
    pub weight_decay: f64,
    /// Target frame rate applied at load time; `None` keeps the source rate.
    pub fps: Option<f64>,
    pub seed: u64,
    pub folds: usize,
    pub trials: usize,
    /// Draw new subject folds for every trial instead of only new weights.
    pub reseed_folds: bool,
    /// Folds trained concurrently.
    pub jobs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            batch_size: 16,
            epochs: 300,
            lr: 5e-4,
            lr_schedule: LrSchedule::Constant,
            weight_decay: 0.01,
            fps: None,
            seed: 0,
            folds: 10,
            trials: 1,
            reseed_folds: false,
            jobs: 1,
        }
    }
}

impl TrainConfig {
    /// Small model for the bundled synthetic generator: width 32, one
    /// temporal and two spatial blocks, 8-frame clips at 2.5 fps so a clip
    /// spans the whole smile, cosine learning-rate decay, 5 folds.
    pub fn synthetic() -> Self {
        Self {
            model: ModelConfig {
                d: 32,
                tokens: 8,
                heads: 4,
                n_curves: 4,
                curve_len: 6,
                knn: 6,
                spatial_blocks: 2,
                temporal_blocks: 1,
                clip_len: 8,
                ..ModelConfig::default()
            },
            batch_size: 8,
            epochs: 60,
            lr: 1e-3,
            lr_schedule: LrSchedule::Cosine,
            fps: Some(2.5),
            folds: 5,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 || self.trials == 0 || self.jobs == 0 {
            return Err(Error::ConfigInvalid(
                "batch_size, epochs, trials and jobs must be at least 1".into(),
            ));
        }
        if !(self.lr >= 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::ConfigInvalid(
                "lr and weight_decay must be non-negative".into(),
            ));
        }
        if let Some(f) = self.fps {
            if !(f > 0.0) {
                return Err(Error::ConfigInvalid(format!(
                    "fps must be positive, got {f}"
                )));
            }
        }
        Ok(())
    }
}

/// Videos held in memory, already at the training frame rate.
#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub videos: Vec<LandmarkSequence>,
}

impl Dataset {
    /// Checks that every video shares one landmark count and ids are unique.
    pub fn new(videos: Vec<LandmarkSequence>) -> Result<Self> {
        let mut ids = BTreeSet::new();
        for v in &videos {
            v.validate()?;
            if !ids.insert(v.video_id.as_str()) {
                return Err(Error::Manifest(format!(
                    "duplicate video id `{}`",
                    v.video_id
                )));
            }
        }
        if let Some(first) = videos.first() {
            let l = first.num_landmarks();
            if let Some(bad) = videos.iter().find(|v| v.num_landmarks() != l) {
                return Err(Error::ShapeMismatch(format!(
                    "`{}` has {} landmarks, `{}` has {l}",
                    bad.video_id,
                    bad.num_landmarks(),
                    first.video_id
                )));
            }
        }
        Ok(Self { videos })
    }

    /// Loads every manifest entry and resamples to `fps` when given.
    pub fn load(manifest: &DatasetManifest, fps: Option<f64>) -> Result<Self> {
        let videos = manifest.load_all()?;
        Self::new(match fps {
            Some(f) => videos
                .iter()
                .map(|v| resample_fps(v, f as f32))
                .collect::<Result<_>>()?,
            None => videos,
        })
    }

    pub fn resampled(&self, fps: f64) -> Result<Self> {
        Self::new(
            self.videos
                .iter()
                .map(|v| resample_fps(v, fps as f32))
                .collect::<Result<_>>()?,
        )
    }

    pub fn landmarks(&self) -> usize {
        self.videos
            .first()
            .map_or(0, LandmarkSequence::num_landmarks)
    }

    /// Manifest view used for fold assignment.
    pub fn manifest(&self) -> Result<DatasetManifest> {
        DatasetManifest::new(
            self.videos
                .iter()
                .map(|v| VideoRecord {
                    id: v.video_id.clone(),
                    subject: v.subject_id.clone(),
                    label: v.label,
                    fps: f64::from(v.fps),
                    path: String::new(),
                })
                .collect(),
        )
    }

    pub fn train_split<'a>(&'a self, fold: &Fold) -> Vec<&'a LandmarkSequence> {
        self.videos
            .iter()
            .filter(|v| !fold.subjects.contains(&v.subject_id))
            .collect()
    }

    pub fn test_split<'a>(&'a self, fold: &Fold) -> Vec<&'a LandmarkSequence> {
        self.videos
            .iter()
            .filter(|v| fold.subjects.contains(&v.subject_id))
            .collect()
    }
}

/// Trained model with its per-epoch mean loss.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub losses: Vec<f64>,
    pub steps: usize,
}

/// Model config with the landmark count taken from the data.
pub fn model_config_for(cfg: &TrainConfig, data: &Dataset) -> ModelConfig {
    ModelConfig {
        landmarks: data.landmarks(),
        ..cfg.model.clone()
    }
}

fn add_grads(acc: &mut Vec<(ParamId, Tensor)>, grads: Vec<(ParamId, Tensor)>) {
    for (id, g) in grads {
        match acc.iter_mut().find(|(a, _)| *a == id) {
            Some((_, t)) => t.add_assign(&g),
            None => acc.push((id, g)),
        }
    }
}

/// Trains a fresh model on every video outside `fold`'s subjects.
///
/// Each epoch shuffles the training videos, draws one random clip per video,
/// and takes one AdamW step per batch on the batch-mean BCE loss.
pub fn train_fold(
    data: &Dataset,
    fold: &Fold,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let train = data.train_split(fold);
    if train.is_empty() {
        return Err(Error::EmptyTrainSet);
    }
    if let Some(v) = train.iter().find(|v| fold.subjects.contains(&v.subject_id)) {
        return Err(Error::SubjectLeakage(v.subject_id.clone()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = Model::new(model_config_for(cfg, data), rng.random())?;
    let mut opt = AdamW::new(
        &model.store,
        AdamWConfig {
            lr: cfg.lr,
            weight_decay: cfg.weight_decay,
            ..AdamWConfig::default()
        },
    );
    let clip_len = model.cfg.clip_len;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut losses = Vec::with_capacity(cfg.epochs);
    let total_steps = cfg.epochs * train.len().div_ceil(cfg.batch_size);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let jobs = batch
                .iter()
                .map(|&i| {
                    Ok((
                        sample_train_clip(train[i], clip_len, &mut rng)?,
                        train[i].label,
                        rng.random::<u64>(),
                    ))
                })
                .collect::<Result<Vec<_>>>()?;
            let results = jobs
                .par_iter()
                .map(|(clip, label, walk_seed)| model.loss_and_grads(clip, *label, *walk_seed))
                .collect::<Result<Vec<_>>>()?;
            let mut total = Vec::new();
            for (loss, grads) in results {
                epoch_loss += loss;
                add_grads(&mut total, grads);
            }
            model.store.zero_grad();
            let scale = 1.0 / batch.len() as f64;
            for (id, g) in &total {
                model.store.accumulate_grad(*id, &g.map(|v| v * scale));
            }
            opt.cfg.lr = cfg
                .lr_schedule
                .rate(cfg.lr, opt.steps() as usize, total_steps);
            opt.step(&mut model.store)?;
            if !model.store.all_finite() {
                return Err(Error::NonFiniteValue(format!(
                    "parameters after step {}",
                    opt.steps()
                )));
            }
        }
        losses.push(epoch_loss / train.len() as f64);
    }
    Ok(TrainOutcome {
        model,
        losses,
        steps: opt.steps() as usize,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoScore {
    pub id: String,
    pub label: Label,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub accuracy: f64,
    pub scores: Vec<VideoScore>,
}

/// Fraction of videos whose thresholded score matches the label.
pub fn accuracy(scores: &[VideoScore]) -> f64 {
    let correct = scores
        .iter()
        .filter(|s| Label::from_score(s.score) == s.label)
        .count();
    correct as f64 / scores.len() as f64
}

/// Accuracy of a trained model on the fold's test videos.
pub fn evaluate_fold(model: &Model, data: &Dataset, fold: &Fold) -> Result<FoldResult> {
    let test = data.test_split(fold);
    if test.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    let scores = test
        .par_iter()
        .map(|v| {
            model.predict_video(v).map(|p| VideoScore {
                id: v.video_id.clone(),
                label: v.label,
                score: p.score,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FoldResult {
        fold: fold.index,
        accuracy: accuracy(&scores),
        scores,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldEntry {
    pub fold: usize,
    pub accuracy: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trial: Option<usize>,
}

/// Cross-validation summary as written to the results file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub folds: Vec<FoldEntry>,
    pub mean: f64,
}

impl CvReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Full results of [`cross_validate`], including per-video scores.
#[derive(Clone, Debug)]
pub struct CvRun {
    /// `trials × folds` results, trial-major.
    pub results: Vec<Vec<FoldResult>>,
    pub losses: Vec<Vec<Vec<f64>>>,
}

impl CvRun {
    pub fn mean_accuracy(&self) -> f64 {
        let all: Vec<f64> = self.results.iter().flatten().map(|r| r.accuracy).collect();
        all.iter().sum::<f64>() / all.len() as f64
    }

    /// Per-fold accuracies averaged over trials.
    pub fn fold_accuracies(&self) -> Vec<f64> {
        let k = self.results[0].len();
        (0..k)
            .map(|f| {
                self.results.iter().map(|t| t[f].accuracy).sum::<f64>() / self.results.len() as f64
            })
            .collect()
    }

    pub fn report(&self) -> CvReport {
        let multi = self.results.len() > 1;
        CvReport {
            folds: self
                .results
                .iter()
                .enumerate()
                .flat_map(|(t, rs)| {
                    rs.iter().map(move |r| FoldEntry {
                        fold: r.fold,
                        accuracy: r.accuracy,
                        trial: multi.then_some(t),
                    })
                })
                .collect(),
            mean: self.mean_accuracy(),
        }
    }
}

/// Subject-disjoint k-fold cross-validation with a fresh model per fold.
pub fn cross_validate(data: &Dataset, cfg: &TrainConfig) -> Result<CvRun> {
    cfg.validate()?;
    if cfg.folds < 2 {
        return Err(Error::Precondition(format!(
            "cross-validation needs at least 2 folds, got {}",
            cfg.folds
        )));
    }
    let manifest = data.manifest()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| Error::Precondition(format!("thread pool: {e}")))?;
    let mut results = Vec::with_capacity(cfg.trials);
    let mut losses = Vec::with_capacity(cfg.trials);
    for trial in 0..cfg.trials {
        let fold_seed = if cfg.reseed_folds {
            stream_seed(cfg.seed, FOLD_STREAM + trial as u64)
        } else {
            cfg.seed
        };
        let folds = make_folds(&manifest, cfg.folds, fold_seed)?;
        let run_fold = |fold: &Fold| -> Result<(FoldResult, Vec<f64>)> {
            let seed = stream_seed(cfg.seed, trial as u64 * 1000 + fold.index as u64);
            let out = train_fold(data, fold, cfg, seed)?;
            Ok((evaluate_fold(&out.model, data, fold)?, out.losses))
        };
        let per_fold: Vec<(FoldResult, Vec<f64>)> = if cfg.jobs > 1 {
            pool.install(|| folds.par_iter().map(run_fold).collect::<Result<_>>())?
        } else {
            folds.iter().map(run_fold).collect::<Result<_>>()?
        };
        let (r, l): (Vec<_>, Vec<_>) = per_fold.into_iter().unzip();
        results.push(r);
        losses.push(l);
    }
    Ok(CvRun { results, losses })
}
