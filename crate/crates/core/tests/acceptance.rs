//! End-to-end acceptance checks, one test per criterion.
//!
//! Tests share a lock so timed criteria run alone on the machine.

use std::sync::Mutex;
use std::time::{Duration, Instant};

use meshsmile::classifier::{ClipMode, Model, ModelConfig};
use meshsmile::diagnostics::{model_gradcheck, random_clip, tiny_config, GradcheckOptions};
use meshsmile::landmark_io::{
    make_folds, read_landmark_file, resample_fps, write_landmark_file, DatasetManifest, Label,
    LandmarkFrame, LandmarkSequence, VideoRecord,
};
use meshsmile::numerics::tape::gelu_scalar;
use meshsmile::numerics::{
    attention, attention_weights, compare_with_stencil, gumbel_softmax, knn_indices,
    multi_head_attention, MultiHeadParams, ParamStore, Stencil, Tape, Tensor,
};
use meshsmile::relativity::{walk_curve, CurveConfig, GroupingParams, WalkMode};
use meshsmile::synthetic::{generate_sequences, KinematicsConfig};
use meshsmile::training::{
    cross_validate, paired_t_test, saliency, CoordinateScorer, Dataset, TrainConfig,
};
use meshsmile::trajectory::{block_schedule, Axis, BlockOrder};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(criterion: &str, pass: bool, detail: impl std::fmt::Display) {
    println!(
        "[{}] {criterion}: {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
}

fn rand_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect(),
    )
}

#[test]
fn criterion_01_gradient_integrity() {
    let _g = serial();
    let opts = GradcheckOptions::default();
    let r = model_gradcheck(&opts).expect("gradcheck runs");
    let worst = r.worst().map_or(0.0, |w| w.1.max_rel_err);
    let fast = r.elapsed < Duration::from_secs(120);
    report(
        "01 gradient integrity",
        r.passed() && fast,
        format!(
            "{} values, worst rel err {worst:.2e}, {:.1}s",
            r.checked(),
            r.elapsed.as_secs_f64()
        ),
    );
    assert!(r.passed(), "{r}");
    assert!(fast, "took {:?}", r.elapsed);
    assert!(r.entries.iter().any(|(n, _)| n == "input.coords"));
}

fn check_equivariance(seed: u64, rows: usize, heads: usize) -> Result<(), TestCaseError> {
    let d = 8;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let p = MultiHeadParams::new(&mut store, "mha", d, &mut rng);
    for id in [p.q.b, p.v.b, p.out.b].into_iter().flatten() {
        store
            .value_mut(id)
            .data_mut()
            .iter_mut()
            .for_each(|v| *v = rng.random_range(-0.5..0.5));
    }
    let x = rand_tensor(&mut rng, rows, d);
    let mut perm: Vec<usize> = (0..rows).collect();
    rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut rng);
    let px = Tensor::from_rows(&perm.iter().map(|&i| x.row(i).to_vec()).collect::<Vec<_>>());

    let mut tape = Tape::new();
    let xv = tape.leaf(x);
    let y = multi_head_attention(&mut tape, &store, xv, &p, heads).unwrap();
    let mut tape2 = Tape::new();
    let pv = tape2.leaf(px);
    let py = multi_head_attention(&mut tape2, &store, pv, &p, heads).unwrap();
    for (out_row, &src) in perm.iter().enumerate() {
        for (a, b) in tape2
            .value(py)
            .row(out_row)
            .iter()
            .zip(tape.value(y).row(src))
        {
            prop_assert!((a - b).abs() < 1e-12, "row {out_row}: {a} vs {b}");
        }
    }
    Ok(())
}

#[test]
fn criterion_02_attention_invariants() {
    let _g = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let (tq, tk, d) = (
            rng.random_range(1..12),
            rng.random_range(1..12),
            rng.random_range(1..9),
        );
        let q = rand_tensor(&mut rng, tq, d).map(|v| v * 5.0);
        let k = rand_tensor(&mut rng, tk, d).map(|v| v * 5.0);
        let w = attention_weights(&q, &k);
        for r in 0..tq {
            worst = worst.max((w.row(r).iter().sum::<f64>() - 1.0).abs());
        }
    }
    assert!(worst <= 1e-9, "row sum off by {worst}");

    for _ in 0..50 {
        let (tq, d) = (rng.random_range(1..8), rng.random_range(1..8));
        let mut tape = Tape::new();
        let q = tape.leaf(rand_tensor(&mut rng, tq, d));
        let k = tape.leaf(rand_tensor(&mut rng, 1, d));
        let vt = rand_tensor(&mut rng, 1, d);
        let v = tape.leaf(vt.clone());
        let o = attention(&mut tape, q, k, v).unwrap();
        for r in 0..tq {
            assert_eq!(tape.value(o).row(r), vt.row(0));
        }
    }

    let mut runner = proptest::test_runner::TestRunner::new(ProptestConfig::with_cases(128));
    runner
        .run(
            &(
                any::<u64>(),
                2usize..10,
                prop::sample::select(vec![1usize, 2, 4]),
            ),
            |(seed, rows, heads)| check_equivariance(seed, rows, heads),
        )
        .unwrap();
    report(
        "02 attention invariants",
        true,
        format!("max row-sum error {worst:.1e}, single key exact, 128 permutation cases"),
    );
}

#[test]
fn criterion_03_gumbel_softmax() {
    let _g = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_sharp = 0.0f64;
    let mut worst_st = 0.0f64;
    for _ in 0..50 {
        let n = rng.random_range(2..8);
        let logits: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let noise: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let tau = rng.random_range(0.3..2.0);

        let mut tape = Tape::new();
        let l = tape.leaf(Tensor::matrix(1, n, logits.clone()));
        let hard = gumbel_softmax(&mut tape, l, tau, true, &noise).unwrap();
        let h = tape.value(hard).data().to_vec();
        assert_eq!(h.iter().filter(|&&v| v == 1.0).count(), 1);
        assert_eq!(h.iter().filter(|&&v| v == 0.0).count(), n - 1);

        // sharp limit: logits spaced at least 0.1 apart
        let mut spaced: Vec<f64> = (0..n)
            .map(|i| i as f64 * 0.15 + rng.random_range(0.0..0.05))
            .collect();
        rand::seq::SliceRandom::shuffle(spaced.as_mut_slice(), &mut rng);
        let mut tape = Tape::new();
        let s = tape.leaf(Tensor::matrix(1, n, spaced.clone()));
        let soft = gumbel_softmax(&mut tape, s, 0.01, false, &vec![0.0; n]).unwrap();
        let best = (0..n)
            .max_by(|&a, &b| spaced[a].total_cmp(&spaced[b]))
            .unwrap();
        for (i, &v) in tape.value(soft).data().iter().enumerate() {
            let want = if i == best { 1.0 } else { 0.0 };
            worst_sharp = worst_sharp.max((v - want).abs());
        }

        // straight-through gradient against finite differences of the soft path
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut tape = Tape::new();
        let l = tape.leaf(Tensor::matrix(1, n, logits.clone()));
        let hard = gumbel_softmax(&mut tape, l, tau, true, &noise).unwrap();
        let wv = tape.leaf(Tensor::matrix(1, n, w.clone()));
        let prod = tape.mul(hard, wv).unwrap();
        let out = tape.sum(prod);
        let analytic = tape.backward(out).get(l).unwrap().data().to_vec();
        let soft_loss = |x: &[f64]| {
            let mut t = Tape::new();
            let lv = t.leaf(Tensor::matrix(1, n, x.to_vec()));
            let y = gumbel_softmax(&mut t, lv, tau, false, &noise).unwrap();
            t.value(y)
                .data()
                .iter()
                .zip(&w)
                .map(|(a, b)| a * b)
                .sum::<f64>()
        };
        let r = compare_with_stencil(soft_loss, &logits, &analytic, 1e-5, 1e-6, Stencil::Central);
        assert!(r.passed(), "{r}");
        worst_st = worst_st.max(r.max_rel_err);
    }
    assert!(
        worst_sharp <= 1e-3,
        "tau 0.01 output off one-hot by {worst_sharp}"
    );
    report(
        "03 gumbel-softmax",
        true,
        format!("one-hot exact, tau 0.01 deviation {worst_sharp:.1e}, straight-through rel err {worst_st:.1e}"),
    );
}

fn lin(store: &ParamStore, p: &meshsmile::numerics::LinearParams, x: &[f64]) -> Vec<f64> {
    let w = store.value(p.w);
    (0..w.rows())
        .map(|o| {
            let b = p.b.map_or(0.0, |b| store.value(b).data()[o]);
            w.row(o).iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + b
        })
        .collect()
}

/// Greedy walk computed by enumerating every candidate logit by hand.
fn oracle_walk(
    store: &ParamStore,
    p: &GroupingParams,
    f: &[Vec<f64>],
    knn: &[Vec<usize>],
    start: usize,
    s: usize,
) -> Vec<usize> {
    let d = f[0].len();
    let psi: Vec<Vec<f64>> = f.iter().map(|row| lin(store, &p.psi, row)).collect();
    let mut path = vec![start];
    let mut state = f[start].clone();
    while path.len() < s {
        let cur = *path.last().unwrap();
        let phi = lin(store, &p.phi, &state);
        let mut best: Option<(f64, usize)> = None;
        for &j in &knn[cur] {
            if path.contains(&j) {
                continue;
            }
            let logit =
                phi.iter().zip(&psi[j]).map(|(a, b)| a * b).sum::<f64>() / (d as f64).sqrt();
            if best.is_none_or(|(bl, bj)| logit > bl || (logit == bl && j < bj)) {
                best = Some((logit, j));
            }
        }
        let Some((_, next)) = best else { break };
        path.push(next);
        let mut joined = state.clone();
        joined.extend_from_slice(&f[next]);
        state = lin(store, &p.update, &joined)
            .into_iter()
            .map(gelu_scalar)
            .collect();
    }
    path
}

#[test]
fn criterion_04_curve_walk_oracle() {
    let _g = serial();
    let (l, k, s, d) = (6, 2, 4, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut walks = 0;
    let mut early = 0;
    for _ in 0..60 {
        let mut store = ParamStore::new();
        let p = GroupingParams::new(&mut store, "g", d, &mut rng);
        let pts: Vec<[f64; 3]> = (0..l)
            .map(|_| {
                [
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                ]
            })
            .collect();
        let knn = knn_indices(&pts, k).unwrap();
        let f: Vec<Vec<f64>> = (0..l)
            .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let cfg = CurveConfig {
            n_curves: 1,
            curve_len: s,
            knn: k,
            d,
            tau: 1.0,
        };
        for start in 0..l {
            let mut tape = Tape::new();
            let fv = tape.leaf(Tensor::from_rows(&f));
            let (curve, _) = walk_curve(
                &mut tape,
                &store,
                fv,
                start,
                &knn,
                &p,
                &cfg,
                &mut WalkMode::Eval,
            )
            .unwrap();
            let want = oracle_walk(&store, &p, &f, &knn, start, s);
            assert_eq!(curve.indices, want, "start {start}");
            walks += 1;
            early += usize::from(want.len() < s);
        }
    }
    report(
        "04 curve-walk oracle",
        true,
        format!("{walks} walks over 60 instances match exactly ({early} stopped early)"),
    );
}

#[test]
fn criterion_05_shape_contract() {
    let _g = serial();
    let cfg = ModelConfig::default();
    assert_eq!((cfg.landmarks, cfg.clip_len, cfg.tokens), (478, 16, 32));
    let model = Model::new(cfg.clone(), 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let coords = random_clip(478, 16, &mut rng);
    let mut tape = Tape::new();
    let g = model
        .build_graph(&mut tape, &coords, ClipMode::Eval)
        .unwrap();
    assert_eq!(tape.value(g.tokens).shape(), [16 * 32, cfg.d]);
    let schedule = block_schedule(
        cfg.spatial_blocks,
        cfg.temporal_blocks,
        BlockOrder::Sequential,
    );
    let spatial = schedule.iter().filter(|a| **a == Axis::Spatial).count();
    let temporal = schedule.iter().filter(|a| **a == Axis::Temporal).count();
    assert_eq!(
        (spatial, temporal, model.trajectory.block_count()),
        (6, 3, 9)
    );
    assert_eq!(tape.value(g.score).shape(), [1, 1]);
    let score = tape.scalar(g.score);
    assert!((0.0..=1.0).contains(&score));
    report(
        "05 shape contract",
        true,
        format!(
            "16x478x3 -> tokens 16x32x{}, 6+3 blocks, score {score:.4}",
            cfg.d
        ),
    );
}

fn toy_sequence(
    id: &str,
    subject: &str,
    label: Label,
    frames: usize,
    landmarks: usize,
    fps: f32,
) -> LandmarkSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(frames as u64 * 31 + id.len() as u64);
    LandmarkSequence {
        video_id: id.into(),
        subject_id: subject.into(),
        label,
        fps,
        frames: (0..frames)
            .map(|_| {
                LandmarkFrame::new(
                    (0..landmarks)
                        .map(|_| {
                            [
                                rng.random_range(-1.0..1.0),
                                rng.random_range(-1.0..1.0),
                                rng.random_range(-1.0..1.0),
                            ]
                        })
                        .collect(),
                )
            })
            .collect(),
    }
}

#[test]
fn criterion_06_protocol() {
    let _g = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for trial in 0..20u64 {
        let subjects = rng.random_range(5..30);
        let k = rng.random_range(2..=subjects.min(10));
        let mut videos = Vec::new();
        for s in 0..subjects {
            for v in 0..rng.random_range(1..4) {
                videos.push(VideoRecord {
                    id: format!("s{s}_v{v}"),
                    subject: format!("s{s}"),
                    label: if v % 2 == 0 {
                        Label::Spontaneous
                    } else {
                        Label::Posed
                    },
                    fps: 25.0,
                    path: format!("s{s}_v{v}.mslm"),
                });
            }
        }
        let manifest = DatasetManifest::new(videos).unwrap();
        let folds = make_folds(&manifest, k, trial).unwrap();
        assert_eq!(folds.len(), k);
        for (i, a) in folds.iter().enumerate() {
            for b in &folds[i + 1..] {
                assert!(a.subjects.is_disjoint(&b.subjects));
                assert!(a.video_ids.is_disjoint(&b.video_ids));
            }
        }
        let covered: usize = folds.iter().map(|f| f.video_ids.len()).sum();
        assert_eq!(covered, manifest.videos.len());
        let subjects_covered: usize = folds.iter().map(|f| f.subjects.len()).sum();
        assert_eq!(subjects_covered, subjects);
        for v in &manifest.videos {
            let fold = folds.iter().find(|f| f.video_ids.contains(&v.id)).unwrap();
            assert!(fold.subjects.contains(&v.subject));
        }
    }

    let model = Model::new(tiny_config(), 6).unwrap();
    for frames in [4, 9, 23] {
        let seq = toy_sequence("v", "s", Label::Posed, frames, 12, 25.0);
        let clips = model.clip_scores(&seq).unwrap();
        assert_eq!(clips.len(), 5);
        let mean = clips.iter().sum::<f64>() / 5.0;
        assert_eq!(model.predict_video(&seq).unwrap().score, mean);
    }

    for frames in [50, 53, 101] {
        let seq = toy_sequence("r", "s", Label::Posed, frames, 3, 50.0);
        let out = resample_fps(&seq, 10.0).unwrap();
        assert_eq!(out.fps, 10.0);
        assert_eq!(out.num_frames(), frames.div_ceil(5));
        for (i, f) in out.frames.iter().enumerate() {
            assert_eq!(f, &seq.frames[5 * i]);
        }
    }
    report("06 protocol", true, "folds disjoint and covering, video score = mean of 5 clips, 50->10 fps keeps every 5th frame");
}

fn synthetic_data(kin: &KinematicsConfig, seed: u64) -> Dataset {
    Dataset::new(generate_sequences(40, 1, kin, seed).unwrap()).unwrap()
}

#[test]
fn criterion_07_synthetic_discriminability() {
    let _g = serial();
    let cfg = TrainConfig::synthetic();
    assert_eq!(cfg.model.d, 32);
    assert!(cfg.epochs <= 60);
    assert_eq!(cfg.folds, 5);
    let kin = KinematicsConfig::default();
    assert_eq!(kin.noise_sd, 0.01);
    let data = synthetic_data(&kin, 0);
    let data = match cfg.fps {
        Some(fps) => data.resampled(fps).unwrap(),
        None => data,
    };
    let start = Instant::now();
    let run = cross_validate(&data, &cfg).unwrap();
    let elapsed = start.elapsed();
    let mean = run.mean_accuracy();
    let fast = elapsed <= Duration::from_secs(600);
    let pass = mean >= 0.90 && fast;
    report(
        "07 synthetic discriminability",
        pass,
        format!(
            "folds {:?}, mean {mean:.4}, {:.0}s",
            run.fold_accuracies(),
            elapsed.as_secs_f64()
        ),
    );
    assert!(mean >= 0.90, "mean accuracy {mean}");
    assert!(fast, "took {elapsed:?}");
}

#[test]
fn criterion_08_null_mode_guard() {
    let _g = serial();
    let cfg = TrainConfig::synthetic();
    let kin = KinematicsConfig::default().null_mode();
    assert_eq!(kin.onset_range_spontaneous, kin.onset_range_posed);
    let mut means = Vec::new();
    for seed in 0..3u64 {
        let data = synthetic_data(&kin, 100 + seed);
        let data = match cfg.fps {
            Some(fps) => data.resampled(fps).unwrap(),
            None => data,
        };
        let run = cross_validate(
            &data,
            &TrainConfig {
                seed,
                ..cfg.clone()
            },
        )
        .unwrap();
        means.push(run.mean_accuracy());
    }
    let pass = means.iter().all(|m| (0.35..=0.65).contains(m));
    report("08 null-mode guard", pass, format!("means {means:?}"));
    assert!(pass, "{means:?}");
}

/// Score depends only on the x-coordinate of landmark 0.
struct Planted;

impl CoordinateScorer for Planted {
    fn clip_len(&self) -> usize {
        4
    }

    fn eval_clips(&self) -> usize {
        5
    }

    fn score_and_gradient(&self, coords: &[Tensor]) -> meshsmile::Result<(f64, Vec<Tensor>)> {
        let n = coords.len() as f64;
        let z = coords.iter().map(|c| c.at(0, 0)).sum::<f64>() / n;
        let s = 1.0 / (1.0 + (-z).exp());
        let grads = coords
            .iter()
            .map(|c| {
                let mut g = Tensor::zeros(c.shape());
                g.data_mut()[0] = s * (1.0 - s) / n;
                g
            })
            .collect();
        Ok((s, grads))
    }
}

#[test]
fn criterion_09_saliency() {
    let _g = serial();
    let mut worst = 0.0f64;
    for seed in 0..3u64 {
        let cfg = tiny_config();
        let model = Model::new(cfg.clone(), seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coords = random_clip(cfg.landmarks, cfg.clip_len, &mut rng);
        let (_, analytic) = model.coordinate_gradient(&coords).unwrap();

        // freeze every discrete choice made by the eval pass
        let mut tape = Tape::new();
        let g = model
            .build_graph(&mut tape, &coords, ClipMode::Eval)
            .unwrap();
        let traces = g.traces.clone();
        let pools = tape.into_max_choices();
        let (l, n) = (cfg.landmarks, cfg.clip_len);
        let score = |x: &[f64]| {
            let frames: Vec<Tensor> = (0..n)
                .map(|i| Tensor::matrix(l, 3, x[i * l * 3..(i + 1) * l * 3].to_vec()))
                .collect();
            let mut t = Tape::replaying_max(pools.clone());
            let g = model
                .build_graph(&mut t, &frames, ClipMode::Replay(&traces))
                .unwrap();
            t.scalar(g.score)
        };
        let flat: Vec<f64> = coords.iter().flat_map(|c| c.data().to_vec()).collect();
        let grad: Vec<f64> = analytic.iter().flat_map(|t| t.data().to_vec()).collect();
        let r = compare_with_stencil(score, &flat, &grad, 3e-4, 1e-4, Stencil::Central4);
        assert!(r.passed(), "seed {seed}: {r}");
        worst = worst.max(r.max_rel_err);
    }

    let seqs: Vec<LandmarkSequence> = (0..4)
        .map(|i| toy_sequence(&format!("v{i}"), "s", Label::Posed, 10 + i, 20, 25.0))
        .collect();
    let map = saliency(&Planted, &seqs).unwrap();
    let mass = map.mass_fraction(0);
    report(
        "09 saliency",
        mass >= 0.9,
        format!("coordinate gradient rel err {worst:.1e}, landmark-0 mass {mass:.3}"),
    );
    assert!(mass >= 0.9, "mass {mass}");
}

#[test]
fn criterion_10_statistics() {
    let _g = serial();
    let t = paired_t_test(&[1.0, 0.0, 2.0], &[0.0, 0.0, 0.0]).unwrap();
    assert!((t.t - 3f64.sqrt()).abs() <= 1e-9, "t = {}", t.t);
    assert_eq!(t.df, 2);
    let shifted = paired_t_test(&[3.5, 2.0, 4.25], &[2.5, 2.0, 2.25]).unwrap();
    assert!((shifted.t - 3f64.sqrt()).abs() <= 1e-9);
    let same = paired_t_test(&[0.8, 0.9, 0.7], &[0.8, 0.9, 0.7]).unwrap();
    assert_eq!(same.t, 0.0);
    report(
        "10 statistics",
        true,
        format!("t = {:.12}, df = {}, equal samples t = 0", t.t, t.df),
    );
}

#[test]
fn criterion_11_determinism() {
    let _g = serial();
    let kin = KinematicsConfig {
        n_landmarks: 12,
        duration_s: 3.5,
        fps: 8.0,
        ..KinematicsConfig::default()
    };
    let data = Dataset::new(generate_sequences(6, 1, &kin, 11).unwrap()).unwrap();
    let cfg = TrainConfig {
        model: ModelConfig {
            landmarks: 12,
            clip_len: 4,
            eval_clips: 2,
            ..tiny_config()
        },
        batch_size: 4,
        epochs: 2,
        folds: 3,
        seed: 11,
        ..TrainConfig::default()
    };
    let a = cross_validate(&data, &cfg)
        .unwrap()
        .report()
        .to_json()
        .unwrap();
    let b = cross_validate(&data, &cfg)
        .unwrap()
        .report()
        .to_json()
        .unwrap();
    assert_eq!(a, b);

    let dir = tempfile::tempdir().unwrap();
    let mut seq = toy_sequence("rt", "s", Label::Spontaneous, 7, 9, 29.97);
    seq.frames[0].points[0] = [f32::MIN_POSITIVE, -0.0, f32::MAX];
    seq.frames[1].points[1] = [1e-40, -1e-40, std::f32::consts::PI];
    let path = dir.path().join("rt.mslm");
    write_landmark_file(&seq, &path).unwrap();
    let back = read_landmark_file(&path).unwrap();
    assert_eq!(back.fps.to_bits(), seq.fps.to_bits());
    assert_eq!(back.frames.len(), seq.frames.len());
    for (fa, fb) in seq.frames.iter().zip(&back.frames) {
        for (pa, pb) in fa.points.iter().zip(&fb.points) {
            for (x, y) in pa.iter().zip(pb) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }
    report(
        "11 determinism",
        true,
        format!(
            "identical results JSON ({} bytes), MSLM round trip bit-exact",
            a.len()
        ),
    );
}
