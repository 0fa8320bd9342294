use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classifier::{clip_tensors, Model};
use crate::error::{Error, Result};
use crate::landmark_io::{normalize_frame, sample_eval_clips, LandmarkSequence};
use crate::numerics::Tensor;

/// Anything that maps a clip of raw `[L×3]` frames to a score with a
/// coordinate gradient.
pub trait CoordinateScorer {
    fn clip_len(&self) -> usize;
    fn eval_clips(&self) -> usize;
    fn score_and_gradient(&self, coords: &[Tensor]) -> Result<(f64, Vec<Tensor>)>;
}

impl CoordinateScorer for Model {
    fn clip_len(&self) -> usize {
        self.cfg.clip_len
    }

    fn eval_clips(&self) -> usize {
        self.cfg.eval_clips
    }

    fn score_and_gradient(&self, coords: &[Tensor]) -> Result<(f64, Vec<Tensor>)> {
        self.coordinate_gradient(coords)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaliencyMap {
    /// Per-landmark importance, scaled so the largest entry is 1.
    pub importance: Vec<f64>,
    /// Mean normalized position of each landmark, used as the plot background.
    pub mean_positions: Vec<[f64; 3]>,
}

impl SaliencyMap {
    /// Share of the total importance carried by landmark `l`.
    pub fn mass_fraction(&self, l: usize) -> f64 {
        let total: f64 = self.importance.iter().sum();
        if total > 0.0 {
            self.importance[l] / total
        } else {
            0.0
        }
    }
}

/// Mean over videos, eval clips and frames of `‖∂score/∂x_l‖₂`, normalized
/// to a maximum of 1.
pub fn saliency<S: CoordinateScorer + ?Sized>(
    scorer: &S,
    seqs: &[LandmarkSequence],
) -> Result<SaliencyMap> {
    let first = seqs
        .first()
        .ok_or_else(|| Error::Precondition("saliency needs at least one sequence".into()))?;
    let l = first.num_landmarks();
    if let Some(bad) = seqs.iter().find(|s| s.num_landmarks() != l) {
        return Err(Error::ShapeMismatch(format!(
            "`{}` has {} landmarks, expected {l}",
            bad.video_id,
            bad.num_landmarks()
        )));
    }

    let mut importance = vec![0.0; l];
    let mut positions = vec![[0.0; 3]; l];
    let mut grad_frames = 0usize;
    let mut pos_frames = 0usize;
    for seq in seqs {
        for frame in &seq.frames {
            for (acc, p) in positions.iter_mut().zip(normalize_frame(frame)?.to_f64()) {
                acc.iter_mut().zip(p).for_each(|(a, v)| *a += v);
            }
            pos_frames += 1;
        }
        for clip in sample_eval_clips(seq, scorer.clip_len(), scorer.eval_clips())? {
            let (_, grads) = scorer.score_and_gradient(&clip_tensors(&clip))?;
            for g in &grads {
                for (acc, row) in importance.iter_mut().zip(g.data().chunks_exact(3)) {
                    *acc += row.iter().map(|v| v * v).sum::<f64>().sqrt();
                }
                grad_frames += 1;
            }
        }
    }

    let n = grad_frames.max(1) as f64;
    importance.iter_mut().for_each(|v| *v /= n);
    let max = importance.iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        importance.iter_mut().for_each(|v| *v /= max);
    }
    let n = pos_frames.max(1) as f64;
    positions.iter_mut().flatten().for_each(|v| *v /= n);
    Ok(SaliencyMap {
        importance,
        mean_positions: positions,
    })
}

pub fn write_saliency_csv(map: &SaliencyMap, path: &Path) -> Result<()> {
    let mut out = String::from("landmark_index,importance\n");
    for (i, v) in map.importance.iter().enumerate() {
        let _ = writeln!(out, "{i},{v}");
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Front view of the mean landmark positions, dot colour and size by
/// importance.
pub fn write_saliency_svg(map: &SaliencyMap, path: &Path) -> Result<()> {
    const SIZE: f64 = 480.0;
    const MARGIN: f64 = 24.0;
    let xs = map.mean_positions.iter().map(|p| p[0]);
    let ys = map.mean_positions.iter().map(|p| p[1]);
    let (x0, x1) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
        (a.min(v), b.max(v))
    });
    let (y0, y1) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
        (a.min(v), b.max(v))
    });
    let span = (x1 - x0).max(y1 - y0).max(1e-9);
    let scale = (SIZE - 2.0 * MARGIN) / span;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(
        svg,
        r##"<rect width="100%" height="100%" fill="#ffffff"/>"##
    );
    // least important first so hot points are drawn on top
    let mut order: Vec<usize> = (0..map.importance.len()).collect();
    order.sort_by(|&a, &b| map.importance[a].total_cmp(&map.importance[b]));
    for i in order {
        let p = map.mean_positions[i];
        let v = map.importance[i].clamp(0.0, 1.0);
        let cx = MARGIN + (p[0] - x0) * scale;
        // image y grows downwards
        let cy = SIZE - MARGIN - (p[1] - y0) * scale;
        let (r, g, b) = heat(v);
        let _ = writeln!(
            svg,
            r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="{:.2}" fill="rgb({r},{g},{b})"><title>{i}: {v:.4}</title></circle>"#,
            2.0 + 4.0 * v
        );
    }
    svg.push_str("</svg>\n");
    fs::write(path, svg).map_err(|e| Error::io(path, e))
}

/// Blue to red through white.
fn heat(v: f64) -> (u8, u8, u8) {
    let lerp = |a: f64, b: f64, t: f64| (a + (b - a) * t).round() as u8;
    if v < 0.5 {
        let t = v * 2.0;
        (lerp(40.0, 255.0, t), lerp(80.0, 255.0, t), 255)
    } else {
        let t = (v - 0.5) * 2.0;
        (255, lerp(255.0, 30.0, t), lerp(255.0, 30.0, t))
    }
}
