//! Landmark data model, on-disk formats, frame-rate resampling, clip
//! sampling, normalization, and subject-disjoint folds.

mod csv_import;
mod folds;
mod format;
mod manifest;
mod sampling;

use serde::{Deserialize, Serialize};

pub use csv_import::{read_landmark_csv, read_landmark_csv_from};
pub use folds::{make_folds, Fold};
pub use format::{
    decode_landmark_bytes, encode_landmark_bytes, read_landmark_file, write_landmark_file,
    HEADER_LEN, MSLM_MAGIC, MSLM_VERSION,
};
pub use manifest::{DatasetManifest, VideoRecord};
pub use sampling::{
    normalize_frame, resample_fps, sample_eval_clips, sample_train_clip, NormalizeMode,
};

use crate::error::{Error, Result};

/// Smile class. Spontaneous is 0, posed is 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Label {
    Spontaneous,
    Posed,
}

impl Label {
    pub fn value(self) -> u8 {
        match self {
            Label::Spontaneous => 0,
            Label::Posed => 1,
        }
    }

    pub fn as_f64(self) -> f64 {
        f64::from(self.value())
    }

    /// Decision at threshold 0.5; a score of exactly 0.5 counts as posed.
    pub fn from_score(score: f64) -> Self {
        if score >= 0.5 {
            Label::Posed
        } else {
            Label::Spontaneous
        }
    }
}

impl TryFrom<u8> for Label {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            0 => Ok(Label::Spontaneous),
            1 => Ok(Label::Posed),
            other => Err(format!("label must be 0 or 1, got {other}")),
        }
    }
}

impl From<Label> for u8 {
    fn from(l: Label) -> u8 {
        l.value()
    }
}

/// One frame of `L` landmarks, each an `(x, y, z)` triple.
#[derive(Clone, Debug, PartialEq)]
pub struct LandmarkFrame {
    pub points: Vec<[f32; 3]>,
}

impl LandmarkFrame {
    pub fn new(points: Vec<[f32; 3]>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn to_f64(&self) -> Vec<[f64; 3]> {
        self.points
            .iter()
            .map(|p| [f64::from(p[0]), f64::from(p[1]), f64::from(p[2])])
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.points.iter().flatten().all(|v| v.is_finite())
    }
}

/// Landmark representation of one video.
#[derive(Clone, Debug, PartialEq)]
pub struct LandmarkSequence {
    pub frames: Vec<LandmarkFrame>,
    pub fps: f32,
    pub video_id: String,
    pub subject_id: String,
    pub label: Label,
}

/// Minimum landmark count per frame.
pub const MIN_LANDMARKS: usize = 4;

impl LandmarkSequence {
    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn num_landmarks(&self) -> usize {
        self.frames.first().map_or(0, LandmarkFrame::len)
    }

    /// Checks the structural invariants: non-empty, constant `L ≥ 4`,
    /// positive fps, finite coordinates.
    pub fn validate(&self) -> Result<()> {
        let Some(first) = self.frames.first() else {
            return Err(Error::InvalidSequence(format!(
                "`{}` has no frames",
                self.video_id
            )));
        };
        let l = first.len();
        if l < MIN_LANDMARKS {
            return Err(Error::InvalidSequence(format!(
                "`{}` has {l} landmarks per frame, need at least {MIN_LANDMARKS}",
                self.video_id
            )));
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(Error::InvalidSequence(format!(
                "fps must be positive, got {}",
                self.fps
            )));
        }
        for (n, f) in self.frames.iter().enumerate() {
            if f.len() != l {
                return Err(Error::InvalidSequence(format!(
                    "frame {n} has {} landmarks, frame 0 has {l}",
                    f.len()
                )));
            }
            if !f.is_finite() {
                return Err(Error::NonFiniteValue(format!("frame {n}")));
            }
        }
        Ok(())
    }
}

/// Fixed-length run of consecutive frames fed to the model.
#[derive(Clone, Debug, PartialEq)]
pub struct Clip {
    pub frames: Vec<LandmarkFrame>,
    pub source_id: String,
}

impl Clip {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn num_landmarks(&self) -> usize {
        self.frames.first().map_or(0, LandmarkFrame::len)
    }
}
