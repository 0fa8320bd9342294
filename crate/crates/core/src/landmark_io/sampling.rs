use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Clip, LandmarkFrame, LandmarkSequence};
use crate::error::{Error, Result};

/// Keeps frames `floor(i · fps / target_fps)` for `i = 0, 1, …`.
pub fn resample_fps(seq: &LandmarkSequence, target_fps: f32) -> Result<LandmarkSequence> {
    if !(target_fps > 0.0) {
        return Err(Error::InvalidSequence(format!(
            "target fps must be positive, got {target_fps}"
        )));
    }
    if target_fps > seq.fps {
        return Err(Error::UpsampleRequested {
            source_fps: f64::from(seq.fps),
            target: f64::from(target_fps),
        });
    }
    let ratio = f64::from(seq.fps) / f64::from(target_fps);
    let mut frames = Vec::new();
    for i in 0.. {
        let idx = (i as f64 * ratio).floor() as usize;
        if idx >= seq.frames.len() {
            break;
        }
        frames.push(seq.frames[idx].clone());
    }
    Ok(LandmarkSequence {
        frames,
        fps: target_fps,
        video_id: seq.video_id.clone(),
        subject_id: seq.subject_id.clone(),
        label: seq.label,
    })
}

/// `clip_len` frames starting at `start`, wrapping cyclically past the end.
fn clip_at(seq: &LandmarkSequence, start: usize, clip_len: usize) -> Clip {
    let n = seq.frames.len();
    let frames = (0..clip_len)
        .map(|i| seq.frames[(start + i) % n].clone())
        .collect();
    Clip {
        frames,
        source_id: seq.video_id.clone(),
    }
}

/// Uniformly placed training window. Videos shorter than `clip_len` are
/// repeated cyclically from frame 0.
pub fn sample_train_clip<R: Rng + ?Sized>(
    seq: &LandmarkSequence,
    clip_len: usize,
    rng: &mut R,
) -> Result<Clip> {
    if seq.frames.is_empty() || clip_len == 0 {
        return Err(Error::InvalidSequence(
            "empty sequence or zero clip length".into(),
        ));
    }
    let n = seq.frames.len();
    let start = if n > clip_len {
        rng.random_range(0..=n - clip_len)
    } else {
        0
    };
    Ok(clip_at(seq, start, clip_len))
}

/// `n_clips` evenly spaced windows over `[0, max(0, N − clip_len)]`, starts
/// rounded to the nearest frame.
pub fn sample_eval_clips(
    seq: &LandmarkSequence,
    clip_len: usize,
    n_clips: usize,
) -> Result<Vec<Clip>> {
    if seq.frames.is_empty() || clip_len == 0 || n_clips == 0 {
        return Err(Error::InvalidSequence(
            "eval clips need a non-empty sequence, clip_len ≥ 1 and n_clips ≥ 1".into(),
        ));
    }
    let last = seq.frames.len().saturating_sub(clip_len);
    Ok((0..n_clips)
        .map(|i| {
            let start = if n_clips == 1 {
                0
            } else {
                (i as f64 * last as f64 / (n_clips - 1) as f64).round() as usize
            };
            clip_at(seq, start, clip_len)
        })
        .collect())
}

/// Centroid and mean landmark-to-centroid distance.
fn frame_stats(points: &[[f64; 3]]) -> ([f64; 3], f64) {
    let n = points.len() as f64;
    let mut c = [0.0; 3];
    for p in points {
        for k in 0..3 {
            c[k] += p[k] / n;
        }
    }
    let radius = points
        .iter()
        .map(|p| ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2) + (p[2] - c[2]).powi(2)).sqrt())
        .sum::<f64>()
        / n;
    (c, radius)
}

/// Recentres to the centroid and rescales to unit mean radius.
pub fn normalize_frame(frame: &LandmarkFrame) -> Result<LandmarkFrame> {
    let pts = frame.to_f64();
    let (c, r) = frame_stats(&pts);
    if pts.len() < 2 || !(r > 0.0) {
        return Err(Error::DegenerateFrame);
    }
    Ok(LandmarkFrame {
        points: pts
            .iter()
            .map(|p| {
                [
                    ((p[0] - c[0]) / r) as f32,
                    ((p[1] - c[1]) / r) as f32,
                    ((p[2] - c[2]) / r) as f32,
                ]
            })
            .collect(),
    })
}

/// Coordinate normalization applied to a clip before the model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormalizeMode {
    /// Each frame uses its own centroid and mean radius.
    Frame,
    /// Every frame uses the first frame's centroid and mean radius.
    Video,
    Off,
}

impl FromStr for NormalizeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "frame" => Ok(Self::Frame),
            "video" => Ok(Self::Video),
            "off" => Ok(Self::Off),
            other => Err(Error::ConfigInvalid(format!(
                "normalize must be frame|video|off, got `{other}`"
            ))),
        }
    }
}

impl NormalizeMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Frame => "frame",
            Self::Video => "video",
            Self::Off => "off",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::landmark_io::Label;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn indexed_seq(n: usize, fps: f32) -> LandmarkSequence {
        LandmarkSequence {
            frames: (0..n)
                .map(|i| LandmarkFrame {
                    points: vec![
                        [i as f32, 0.0, 0.0],
                        [0.0, 1.0, 0.0],
                        [0.0, 0.0, 1.0],
                        [1.0, 1.0, 1.0],
                    ],
                })
                .collect(),
            fps,
            video_id: "v".into(),
            subject_id: "s".into(),
            label: Label::Posed,
        }
    }

    fn frame_ids(frames: &[LandmarkFrame]) -> Vec<usize> {
        frames.iter().map(|f| f.points[0][0] as usize).collect()
    }

    #[test]
    fn resample_examples() {
        let s = indexed_seq(100, 50.0);
        let r = resample_fps(&s, 10.0).unwrap();
        assert_eq!(
            frame_ids(&r.frames),
            (0..20).map(|i| i * 5).collect::<Vec<_>>()
        );
        assert_eq!(r.fps, 10.0);
        assert_eq!(resample_fps(&s, 50.0).unwrap(), s);
        let s = indexed_seq(80, 25.0);
        assert_eq!(
            frame_ids(&resample_fps(&s, 1.0).unwrap().frames),
            vec![0, 25, 50, 75]
        );
        assert!(matches!(
            resample_fps(&s, 30.0),
            Err(Error::UpsampleRequested { .. })
        ));
    }

    #[test]
    fn train_clip_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = indexed_seq(100, 25.0);
        for _ in 0..200 {
            let ids = frame_ids(&sample_train_clip(&s, 16, &mut rng).unwrap().frames);
            assert!(ids[0] <= 84);
            assert!(ids.windows(2).all(|w| w[1] == w[0] + 1));
        }
        let short = indexed_seq(12, 25.0);
        let ids = frame_ids(&sample_train_clip(&short, 16, &mut rng).unwrap().frames);
        assert_eq!(ids, (0..12).chain(0..4).collect::<Vec<_>>());
        let exact = indexed_seq(16, 25.0);
        assert_eq!(
            frame_ids(&sample_train_clip(&exact, 16, &mut rng).unwrap().frames),
            (0..16).collect::<Vec<_>>()
        );
    }

    #[test]
    fn eval_clip_examples() {
        let s = indexed_seq(100, 25.0);
        let starts: Vec<usize> = sample_eval_clips(&s, 16, 5)
            .unwrap()
            .iter()
            .map(|c| frame_ids(&c.frames)[0])
            .collect();
        assert_eq!(starts, vec![0, 21, 42, 63, 84]);
        let s16 = indexed_seq(16, 25.0);
        let clips = sample_eval_clips(&s16, 16, 5).unwrap();
        assert!(clips.iter().all(|c| *c == clips[0]));
        let one = sample_eval_clips(&s16, 16, 1).unwrap();
        assert_eq!(frame_ids(&one[0].frames)[0], 0);
        assert_eq!(
            sample_eval_clips(&s, 16, 5).unwrap(),
            sample_eval_clips(&s, 16, 5).unwrap()
        );
    }

    #[test]
    fn normalize_examples() {
        let f = LandmarkFrame::new(vec![[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]]);
        assert_eq!(normalize_frame(&f).unwrap(), f);
        let f = LandmarkFrame::new(vec![[2.0, 0.0, 0.0], [0.0, 0.0, 0.0]]);
        assert_eq!(
            normalize_frame(&f).unwrap().points,
            vec![[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]]
        );
        let f = LandmarkFrame::new(vec![[0.3, 0.3, 0.3]; 5]);
        assert!(matches!(normalize_frame(&f), Err(Error::DegenerateFrame)));
    }

    proptest! {
        #[test]
        fn normalize_is_translation_and_scale_invariant(
            pts in prop::collection::vec(prop::array::uniform3(-5.0f32..5.0), 4..12),
            shift in prop::array::uniform3(-10.0f32..10.0),
            scale in 0.2f32..5.0,
        ) {
            let f = LandmarkFrame::new(pts.clone());
            prop_assume!(normalize_frame(&f).is_ok());
            let (_, r) = frame_stats(&f.to_f64());
            prop_assume!(r > 1e-2);
            let a = normalize_frame(&f).unwrap();
            let moved = LandmarkFrame::new(pts.iter().map(|p| [
                p[0] * scale + shift[0], p[1] * scale + shift[1], p[2] * scale + shift[2],
            ]).collect());
            let b = normalize_frame(&moved).unwrap();
            let (c, r) = frame_stats(&a.to_f64());
            prop_assert!(c.iter().all(|v| v.abs() < 1e-6));
            prop_assert!((r - 1.0).abs() < 1e-6);
            for (p, q) in a.points.iter().zip(&b.points) {
                for k in 0..3 {
                    // f32 storage bounds the achievable agreement
                    prop_assert!((p[k] - q[k]).abs() < 1e-4);
                }
            }
        }

        #[test]
        fn resample_is_idempotent(n in 1usize..200, src in 1u32..60, tgt in 1u32..60) {
            prop_assume!(tgt <= src);
            let s = indexed_seq(n, src as f32);
            let once = resample_fps(&s, tgt as f32).unwrap();
            prop_assert_eq!(resample_fps(&once, tgt as f32).unwrap(), once);
        }
    }
}
