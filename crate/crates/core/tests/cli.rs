use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn meshsmile(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_meshsmile"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

const TINY: &str = r#"{"model.d": 8, "model.tokens": 4, "model.heads": 2, "model.n_curves": 2,
 "model.curve_len": 3, "model.knn": 3, "model.spatial_blocks": 1, "model.temporal_blocks": 1,
 "model.eval_clips": 2, "data.clip_len": 4, "data.fps": 8, "train.batch_size": 4, "train.folds": 3,
 "synth.n_landmarks": 12, "synth.fps": 8, "synth.duration_s": 3.5}"#;

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    let out = meshsmile(&["cross-validate", "--manifest", s(&missing)]);
    assert_eq!(code(&out), 2);
    assert!(!out.stderr.is_empty());

    let out = meshsmile(&[
        "gen-synthetic",
        "--out",
        s(dir.path()),
        "--set",
        "model.width=3",
    ]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("model.width"));

    let out = meshsmile(&[
        "gen-synthetic",
        "--out",
        s(dir.path()),
        "--set",
        "train.epochs=many",
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn keys_lists_defaults() {
    let out = meshsmile(&["keys"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8_lossy(&out.stdout);
    for key in ["model.d", "data.fps", "train.epochs", "synth.null_mode"] {
        assert!(text.contains(key), "{key} missing");
    }
}

#[test]
fn gradcheck_mismatch_exits_with_one() {
    let out = meshsmile(&["gradcheck", "--tol", "1e-300", "--eps", "1e-2"]);
    assert_eq!(code(&out), 1, "{}", String::from_utf8_lossy(&out.stdout));
}

#[test]
fn generate_train_evaluate_and_explain() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.json");
    fs::write(&cfg, TINY).unwrap();
    let data = dir.path().join("data");
    let out = meshsmile(&[
        "gen-synthetic",
        "--out",
        s(&data),
        "--subjects",
        "6",
        "--config",
        s(&cfg),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = data.join("manifest.json");
    assert!(manifest.exists());

    let run = dir.path().join("run");
    let out = meshsmile(&[
        "train",
        "--manifest",
        s(&manifest),
        "--config",
        s(&cfg),
        "--fold",
        "0",
        "--epochs",
        "2",
        "--out",
        s(&run),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let losses = fs::read_to_string(run.join("loss.csv")).unwrap();
    assert_eq!(losses.lines().next(), Some("epoch,mean_loss"));
    assert_eq!(losses.lines().count(), 3);
    assert!(run.join("model.mswt").exists() && run.join("config.json").exists());

    // eval picks up the model shape from the checkpoint's config.json
    let ckpt = run.join("model.mswt");
    let out = meshsmile(&[
        "eval",
        "--manifest",
        s(&manifest),
        "--checkpoint",
        s(&ckpt),
        "--fold",
        "0",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let sal = dir.path().join("sal");
    let out = meshsmile(&[
        "saliency",
        "--manifest",
        s(&manifest),
        "--checkpoint",
        s(&ckpt),
        "--out",
        s(&sal),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(sal.join("saliency.csv")).unwrap();
    assert_eq!(csv.lines().count(), 13);
    assert!(sal.join("saliency.svg").exists());

    let missing = dir.path().join("absent.mswt");
    let out = meshsmile(&[
        "eval",
        "--manifest",
        s(&manifest),
        "--checkpoint",
        s(&missing),
    ]);
    assert_eq!(code(&out), 2);

    let results = dir.path().join("cv.json");
    let out = meshsmile(&[
        "cross-validate",
        "--manifest",
        s(&manifest),
        "--config",
        s(&cfg),
        "--epochs",
        "1",
        "--out",
        s(&results),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&results).unwrap()).unwrap();
    assert_eq!(report["folds"].as_array().unwrap().len(), 3);
}
