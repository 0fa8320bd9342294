//! Synthetic smile kinematics with a known decision boundary.
//!
//! Every subject has a fixed neutral face. A video applies a smile
//! deformation (mouth corners and cheeks) scaled by an amplitude curve with
//! lead-in, onset ramp, apex plateau and offset ramp. The label changes only
//! the distribution of the onset rise time: spontaneous smiles rise slowly,
//! posed ones quickly.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::landmark_io::{
    write_landmark_file, DatasetManifest, Label, LandmarkFrame, LandmarkSequence, VideoRecord,
};

/// Fraction of a raised-cosine ramp spent between 10% and 90% of its height:
/// `(acos(−0.8) − acos(0.8)) / π`.
pub fn rise_fraction() -> f64 {
    ((-0.8f64).acos() - 0.8f64.acos()) / PI
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KinematicsConfig {
    pub n_landmarks: usize,
    pub fps: f64,
    pub duration_s: f64,
    /// 10–90% rise time of the onset, seconds.
    pub onset_range_spontaneous: (f64, f64),
    pub onset_range_posed: (f64, f64),
    /// Apex displacement in face-radius units.
    pub amplitude_range: (f64, f64),
    pub noise_sd: f64,
    /// Left-side gain relative to the right side.
    pub asymmetry_range: (f64, f64),
    pub lead_in_range: (f64, f64),
    pub apex_range: (f64, f64),
    pub offset_range: (f64, f64),
}

impl Default for KinematicsConfig {
    fn default() -> Self {
        Self {
            n_landmarks: 68,
            fps: 25.0,
            duration_s: 5.0,
            onset_range_spontaneous: (0.8, 1.5),
            onset_range_posed: (0.2, 0.5),
            amplitude_range: (0.15, 0.25),
            noise_sd: 0.01,
            asymmetry_range: (0.85, 1.15),
            lead_in_range: (0.1, 0.3),
            apex_range: (0.4, 0.8),
            offset_range: (0.5, 0.9),
        }
    }
}

impl KinematicsConfig {
    /// Both labels share one onset range, so labels carry no signal.
    pub fn null_mode(mut self) -> Self {
        let (s, p) = (self.onset_range_spontaneous, self.onset_range_posed);
        let joint = (s.0.min(p.0), s.1.max(p.1));
        self.onset_range_spontaneous = joint;
        self.onset_range_posed = joint;
        self
    }

    pub fn onset_range(&self, label: Label) -> (f64, f64) {
        match label {
            Label::Spontaneous => self.onset_range_spontaneous,
            Label::Posed => self.onset_range_posed,
        }
    }

    pub fn n_frames(&self) -> usize {
        (self.duration_s * self.fps).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::ConfigInvalid(m));
        if self.n_landmarks < crate::landmark_io::MIN_LANDMARKS {
            return bad(format!(
                "synthetic faces need at least 4 landmarks, got {}",
                self.n_landmarks
            ));
        }
        if !(self.fps > 0.0) || !(self.duration_s > 0.0) {
            return bad("fps and duration must be positive".into());
        }
        if self.n_frames() < 20 {
            return bad(format!(
                "duration × fps gives {} frames, need at least 20",
                self.n_frames()
            ));
        }
        if !(self.noise_sd >= 0.0) {
            return bad(format!(
                "noise_sd must be non-negative, got {}",
                self.noise_sd
            ));
        }
        let ranges = [
            (
                "onset_range_spontaneous",
                self.onset_range_spontaneous,
                true,
            ),
            ("onset_range_posed", self.onset_range_posed, true),
            ("amplitude_range", self.amplitude_range, false),
            ("asymmetry_range", self.asymmetry_range, false),
            ("lead_in_range", self.lead_in_range, false),
            ("apex_range", self.apex_range, false),
            ("offset_range", self.offset_range, true),
        ];
        for (name, (lo, hi), positive) in ranges {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi && lo >= 0.0)
                || (positive && lo <= 0.0)
            {
                return bad(format!(
                    "{name} must satisfy 0 ≤ lo ≤ hi (lo > 0 for durations), got ({lo}, {hi})"
                ));
            }
        }
        let longest_onset =
            self.onset_range_spontaneous.1.max(self.onset_range_posed.1) / rise_fraction();
        if self.lead_in_range.1 + longest_onset > self.duration_s {
            return bad(format!(
                "lead-in plus longest onset ramp ({:.2}s) exceeds the {}s duration",
                self.lead_in_range.1 + longest_onset,
                self.duration_s
            ));
        }
        Ok(())
    }
}

/// Phase timings of one video, seconds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SmileTiming {
    pub lead_in: f64,
    /// 10–90% rise time.
    pub rise: f64,
    pub apex: f64,
    pub offset: f64,
}

impl SmileTiming {
    pub fn draw<R: Rng + ?Sized>(cfg: &KinematicsConfig, label: Label, rng: &mut R) -> Self {
        let u = |(lo, hi): (f64, f64), rng: &mut R| {
            if hi > lo {
                rng.random_range(lo..=hi)
            } else {
                lo
            }
        };
        Self {
            lead_in: u(cfg.lead_in_range, rng),
            rise: u(cfg.onset_range(label), rng),
            apex: u(cfg.apex_range, rng),
            offset: u(cfg.offset_range, rng),
        }
    }

    /// Length of the full onset ramp.
    pub fn onset_ramp(&self) -> f64 {
        self.rise / rise_fraction()
    }

    /// Normalized amplitude `a(t) ∈ [0, 1]`.
    pub fn amplitude(&self, t: f64) -> f64 {
        let ease = |u: f64| 0.5 * (1.0 - (PI * u.clamp(0.0, 1.0)).cos());
        let ramp = self.onset_ramp();
        let t1 = self.lead_in;
        let t2 = t1 + ramp;
        let t3 = t2 + self.apex;
        let t4 = t3 + self.offset;
        if t <= t1 {
            0.0
        } else if t < t2 {
            ease((t - t1) / ramp)
        } else if t <= t3 {
            1.0
        } else if t < t4 {
            1.0 - ease((t - t3) / self.offset)
        } else {
            0.0
        }
    }
}

/// Time for a sampled curve to climb from 10% to 90% of its maximum, with
/// linear interpolation between samples. `None` if it never gets there.
pub fn measure_rise_time(values: &[f64], fps: f64) -> Option<f64> {
    let peak = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(peak > 0.0) {
        return None;
    }
    let crossing = |level: f64| {
        let target = level * peak;
        values.windows(2).enumerate().find_map(|(i, w)| {
            (w[0] < target && w[1] >= target)
                .then(|| (i as f64 + (target - w[0]) / (w[1] - w[0])) / fps)
        })
    };
    Some(crossing(0.9)? - crossing(0.1)?)
}

/// Subject-specific neutral face and smile displacement field.
#[derive(Clone, Debug, PartialEq)]
pub struct SubjectFace {
    pub template: Vec<[f64; 3]>,
    /// Unit-amplitude displacement of the right half of the face.
    pub field_right: Vec<[f64; 3]>,
    /// Displacement of the left half (`x < 0`).
    pub field_left: Vec<[f64; 3]>,
}

impl SubjectFace {
    /// Sunflower layout inside an ellipse, jittered and scaled per subject.
    pub fn new(n_landmarks: usize, subject_seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(subject_seed);
        let jitter = Normal::new(0.0, 0.03).expect("valid sd");
        let sx = rng.random_range(0.9..1.1);
        let sy = rng.random_range(0.9..1.1);
        let golden = PI * (3.0 - 5f64.sqrt());
        let template: Vec<[f64; 3]> = (0..n_landmarks)
            .map(|i| {
                let r = ((i as f64 + 0.5) / n_landmarks as f64).sqrt();
                let th = i as f64 * golden;
                [
                    0.8 * sx * r * th.cos() + jitter.sample(&mut rng),
                    sy * r * th.sin() + jitter.sample(&mut rng),
                    0.3 * (1.0 - r * r) + jitter.sample(&mut rng),
                ]
            })
            .collect();

        // (centre, direction) of each bump on the right side; mirrored left.
        let bumps: [([f64; 2], [f64; 3]); 2] = [
            ([0.35, -0.45], [0.6, 0.8, 0.1]),
            ([0.45, -0.1], [0.2, 1.0, 0.2]),
        ];
        let sigma2 = 2.0 * 0.2f64.powi(2);
        let mut field_right = vec![[0.0; 3]; n_landmarks];
        let mut field_left = vec![[0.0; 3]; n_landmarks];
        for (i, p) in template.iter().enumerate() {
            let side = if p[0] >= 0.0 { 1.0 } else { -1.0 };
            let mut v = [0.0; 3];
            for (c, dir) in &bumps {
                let dx = p[0] - side * c[0] * sx;
                let dy = p[1] - c[1] * sy;
                let w = (-(dx * dx + dy * dy) / sigma2).exp();
                let n = (dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]).sqrt();
                v[0] += w * side * dir[0] / n;
                v[1] += w * dir[1] / n;
                v[2] += w * dir[2] / n;
            }
            if side > 0.0 {
                field_right[i] = v;
            } else {
                field_left[i] = v;
            }
        }
        Self {
            template,
            field_right,
            field_left,
        }
    }
}

/// Per-video draws beyond the subject's face.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VideoDraw {
    pub timing: SmileTiming,
    pub amplitude: f64,
    pub asymmetry: f64,
}

/// One synthetic video and the draws that produced it.
pub fn generate_video_with_draw<R: Rng + ?Sized>(
    label: Label,
    subject_seed: u64,
    cfg: &KinematicsConfig,
    rng: &mut R,
) -> Result<(LandmarkSequence, VideoDraw)> {
    cfg.validate()?;
    let face = SubjectFace::new(cfg.n_landmarks, subject_seed);
    let timing = SmileTiming::draw(cfg, label, rng);
    let pick = |(lo, hi): (f64, f64), rng: &mut R| {
        if hi > lo {
            rng.random_range(lo..=hi)
        } else {
            lo
        }
    };
    let amplitude = pick(cfg.amplitude_range, rng);
    let asymmetry = pick(cfg.asymmetry_range, rng);
    let noise = (cfg.noise_sd > 0.0).then(|| Normal::new(0.0, cfg.noise_sd).expect("valid sd"));
    let frames = (0..cfg.n_frames())
        .map(|n| {
            let a = amplitude * timing.amplitude(n as f64 / cfg.fps);
            let points = (0..cfg.n_landmarks)
                .map(|i| {
                    let mut p = [0f32; 3];
                    for k in 0..3 {
                        let disp = face.field_right[i][k] + asymmetry * face.field_left[i][k];
                        let eps = noise.map_or(0.0, |d| d.sample(rng));
                        p[k] = (face.template[i][k] + a * disp + eps) as f32;
                    }
                    p
                })
                .collect();
            LandmarkFrame { points }
        })
        .collect();
    let seq = LandmarkSequence {
        frames,
        fps: cfg.fps as f32,
        video_id: format!("subject{subject_seed}"),
        subject_id: format!("subject{subject_seed}"),
        label,
    };
    Ok((
        seq,
        VideoDraw {
            timing,
            amplitude,
            asymmetry,
        },
    ))
}

pub fn generate_video<R: Rng + ?Sized>(
    label: Label,
    subject_seed: u64,
    cfg: &KinematicsConfig,
    rng: &mut R,
) -> Result<LandmarkSequence> {
    generate_video_with_draw(label, subject_seed, cfg, rng).map(|(s, _)| s)
}

/// Per-frame smile amplitude recovered from landmark displacements by
/// projecting onto the subject's displacement field. Exact without noise.
pub fn recovered_amplitude(seq: &LandmarkSequence, subject_seed: u64, asymmetry: f64) -> Vec<f64> {
    let face = SubjectFace::new(seq.num_landmarks(), subject_seed);
    let field: Vec<f64> = (0..face.template.len())
        .flat_map(|i| (0..3).map(move |k| (i, k)))
        .map(|(i, k)| face.field_right[i][k] + asymmetry * face.field_left[i][k])
        .collect();
    let norm2: f64 = field.iter().map(|v| v * v).sum();
    seq.frames
        .iter()
        .map(|f| {
            let dot: f64 = f
                .points
                .iter()
                .zip(&face.template)
                .flat_map(|(p, t)| (0..3).map(move |k| f64::from(p[k]) - t[k]))
                .zip(&field)
                .map(|(d, v)| d * v)
                .sum();
            dot / norm2
        })
        .collect()
}

fn subject_seed(seed: u64, subject: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(subject as u64 + 1)
}

/// `n_subjects × 2 × per_class` sequences, balanced per subject. Video `i`
/// draws from stream `i` of a generator seeded with `seed`.
pub fn generate_sequences(
    n_subjects: usize,
    per_class: usize,
    cfg: &KinematicsConfig,
    seed: u64,
) -> Result<Vec<LandmarkSequence>> {
    cfg.validate()?;
    let mut out = Vec::with_capacity(n_subjects * 2 * per_class);
    for s in 0..n_subjects {
        let sseed = subject_seed(seed, s);
        for label in [Label::Spontaneous, Label::Posed] {
            for v in 0..per_class {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(out.len() as u64);
                let mut seq = generate_video(label, sseed, cfg, &mut rng)?;
                let tag = match label {
                    Label::Spontaneous => "spont",
                    Label::Posed => "posed",
                };
                seq.subject_id = format!("s{s:03}");
                seq.video_id = format!("s{s:03}_{tag}_{v}");
                out.push(seq);
            }
        }
    }
    Ok(out)
}

/// Writes every video as MSLM under `out_dir/videos/` plus
/// `out_dir/manifest.json`.
pub fn generate_dataset(
    n_subjects: usize,
    per_class: usize,
    cfg: &KinematicsConfig,
    seed: u64,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    let seqs = generate_sequences(n_subjects, per_class, cfg, seed)?;
    let videos_dir = out_dir.join("videos");
    std::fs::create_dir_all(&videos_dir).map_err(|e| Error::io(&videos_dir, e))?;
    let mut records = Vec::with_capacity(seqs.len());
    for seq in &seqs {
        let rel = format!("videos/{}.mslm", seq.video_id);
        write_landmark_file(seq, &out_dir.join(&rel))?;
        records.push(VideoRecord {
            id: seq.video_id.clone(),
            subject: seq.subject_id.clone(),
            label: seq.label,
            fps: cfg.fps,
            path: rel,
        });
    }
    let mut manifest = DatasetManifest::new(records)?;
    manifest.base_dir = out_dir.to_path_buf();
    manifest.save(&out_dir.join("manifest.json"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::landmark_io::make_folds;

    fn quiet() -> KinematicsConfig {
        KinematicsConfig {
            noise_sd: 0.0,
            ..KinematicsConfig::default()
        }
    }

    #[test]
    fn rise_fraction_value() {
        let f = rise_fraction();
        let ease = |u: f64| 0.5 * (1.0 - (PI * u).cos());
        let u10 = 0.8f64.acos() / PI;
        assert!((ease(u10) - 0.1).abs() < 1e-12);
        assert!((ease(u10 + f) - 0.9).abs() < 1e-12);
    }

    #[test]
    fn zero_amplitude_is_template() {
        let cfg = KinematicsConfig {
            amplitude_range: (0.0, 0.0),
            ..quiet()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let seq = generate_video(Label::Posed, 3, &cfg, &mut rng).unwrap();
        let face = SubjectFace::new(68, 3);
        for f in &seq.frames {
            for (p, t) in f.points.iter().zip(&face.template) {
                for k in 0..3 {
                    assert_eq!(p[k], t[k] as f32);
                }
            }
        }
    }

    #[test]
    fn ramps_are_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for label in [Label::Spontaneous, Label::Posed] {
            let t = SmileTiming::draw(&quiet(), label, &mut rng);
            let onset_end = t.lead_in + t.onset_ramp();
            let offset_start = onset_end + t.apex;
            let samples: Vec<f64> = (0..=2000).map(|i| i as f64 * 0.0025).collect();
            for w in samples.windows(2) {
                let (a, b) = (t.amplitude(w[0]), t.amplitude(w[1]));
                if w[1] <= onset_end {
                    assert!(b >= a);
                } else if w[0] >= offset_start {
                    assert!(b <= a);
                }
            }
        }
    }

    #[test]
    fn measured_onset_in_label_range() {
        let cfg = quiet();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for i in 0..40 {
            let label = if i % 2 == 0 {
                Label::Posed
            } else {
                Label::Spontaneous
            };
            let (seq, draw) = generate_video_with_draw(label, i, &cfg, &mut rng).unwrap();
            let a = recovered_amplitude(&seq, i, draw.asymmetry);
            let rise = measure_rise_time(&a, cfg.fps).unwrap();
            let (lo, hi) = cfg.onset_range(label);
            // linear interpolation between 25 fps samples is good to a few ms
            assert!(
                rise >= lo - 0.01 && rise <= hi + 0.01,
                "{label:?} rise {rise}"
            );
            assert!((rise - draw.timing.rise).abs() < 0.01);
        }
    }

    #[test]
    fn onset_threshold_separates_labels() {
        let cfg = quiet();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let threshold = 0.5 * (cfg.onset_range_posed.1 + cfg.onset_range_spontaneous.0);
        for i in 0..60 {
            let label = if i % 3 == 0 {
                Label::Posed
            } else {
                Label::Spontaneous
            };
            let (seq, draw) = generate_video_with_draw(label, i, &cfg, &mut rng).unwrap();
            let rise =
                measure_rise_time(&recovered_amplitude(&seq, i, draw.asymmetry), cfg.fps).unwrap();
            let guess = if rise < threshold {
                Label::Posed
            } else {
                Label::Spontaneous
            };
            assert_eq!(guess, label);
        }
    }

    #[test]
    fn subject_template_is_shared() {
        let cfg = quiet();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = generate_video(Label::Posed, 11, &cfg, &mut rng).unwrap();
        let b = generate_video(Label::Spontaneous, 11, &cfg, &mut rng).unwrap();
        // the first frame precedes any smile onset
        assert_eq!(a.frames[0], b.frames[0]);
        let c = generate_video(Label::Posed, 12, &cfg, &mut rng).unwrap();
        assert_ne!(a.frames[0], c.frames[0]);
    }

    #[test]
    fn dataset_counts_and_determinism() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = KinematicsConfig::default();
        let m = generate_dataset(40, 1, &cfg, 7, dir.path()).unwrap();
        assert_eq!(m.videos.len(), 80);
        assert_eq!(
            m.videos.iter().filter(|v| v.label == Label::Posed).count(),
            40
        );
        let folds = make_folds(&m, 5, 0).unwrap();
        for (i, a) in folds.iter().enumerate() {
            for b in &folds[i + 1..] {
                assert!(a.subjects.is_disjoint(&b.subjects));
            }
        }
        let dir2 = tempfile::tempdir().unwrap();
        generate_dataset(40, 1, &cfg, 7, dir2.path()).unwrap();
        for v in &m.videos {
            let x = std::fs::read(dir.path().join(&v.path)).unwrap();
            let y = std::fs::read(dir2.path().join(&v.path)).unwrap();
            assert_eq!(x, y);
        }
        let loaded = DatasetManifest::load(&dir.path().join("manifest.json")).unwrap();
        assert_eq!(
            loaded.load_video(&loaded.videos[3]).unwrap().num_frames(),
            125
        );
    }

    #[test]
    fn config_errors() {
        let short = KinematicsConfig {
            duration_s: 0.5,
            ..KinematicsConfig::default()
        };
        assert!(matches!(short.validate(), Err(Error::ConfigInvalid(_))));
        let noisy = KinematicsConfig {
            noise_sd: -1.0,
            ..KinematicsConfig::default()
        };
        assert!(matches!(noisy.validate(), Err(Error::ConfigInvalid(_))));
        let null = KinematicsConfig::default().null_mode();
        assert_eq!(null.onset_range_posed, null.onset_range_spontaneous);
    }
}
