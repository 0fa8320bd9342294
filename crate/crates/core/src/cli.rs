//! `meshsmile` command-line interface.
//!
//! Settings resolve as flags, then `--config` file, then built-in defaults.
//! Every random draw derives from `--seed` (key `train.seed`).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::classifier::Model;
use crate::config::{describe_keys, RunConfig};
use crate::diagnostics::{model_gradcheck, GradcheckOptions};
use crate::error::{Error, Result};
use crate::landmark_io::{
    make_folds, read_landmark_csv, write_landmark_file, DatasetManifest, Fold, Label,
};
use crate::synthetic::generate_dataset;
use crate::training::{
    cross_validate, evaluate_fold, model_config_for, saliency, train_fold, write_saliency_csv,
    write_saliency_svg, Dataset,
};

#[derive(Debug, Parser)]
#[command(
    name = "meshsmile",
    version,
    about = "Spontaneous vs posed smile classification from face landmarks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert a landmark CSV to MSLM.
    Import(ImportArgs),
    /// Write a synthetic landmark dataset and its manifest.
    GenSynthetic(GenArgs),
    /// Train one model and write its checkpoint, loss log and config.
    Train(TrainArgs),
    /// Subject-disjoint k-fold cross-validation.
    CrossValidate(CvArgs),
    /// Accuracy of a checkpoint on one fold or the whole manifest.
    Eval(EvalArgs),
    /// Per-landmark gradient importance as CSV and SVG.
    Saliency(SaliencyArgs),
    /// Finite-difference check of every gradient in a tiny model.
    Gradcheck(GradcheckArgs),
    /// List every configuration key with its default.
    Keys,
}

/// Settings shared by every command that reads a configuration.
#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Flat JSON configuration file (see `meshsmile keys`).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Root seed [key train.seed, default 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Resample videos to this frame rate on load [key data.fps, default: source rate].
    #[arg(long)]
    pub fps: Option<f64>,
    /// Frames per clip [key data.clip_len, default 16].
    #[arg(long)]
    pub clip_len: Option<usize>,
    /// Training epochs [key train.epochs, default 300].
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Cross-validation folds [key train.folds, default 10].
    #[arg(long)]
    pub folds: Option<usize>,
    /// Folds trained in parallel [key train.jobs, default 1].
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Any other key, as key=value; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

impl ConfigArgs {
    /// Defaults, then `fallback` file when no `--config` is given, then
    /// `--config`, then flags.
    pub fn resolve_with(&self, fallback: Option<&Path>) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        let file = self.config.as_deref().or(fallback.filter(|p| p.exists()));
        if let Some(path) = file {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            cfg.apply_json(&text)?;
        }
        if let Some(v) = self.seed {
            cfg.train.seed = v;
        }
        if let Some(v) = self.fps {
            cfg.train.fps = Some(v);
        }
        if let Some(v) = self.clip_len {
            cfg.train.model.clip_len = v;
        }
        if let Some(v) = self.epochs {
            cfg.train.epochs = v;
        }
        if let Some(v) = self.folds {
            cfg.train.folds = v;
        }
        if let Some(v) = self.jobs {
            cfg.train.jobs = v;
        }
        for s in &self.set {
            cfg.set_str(s)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve(&self) -> Result<RunConfig> {
        self.resolve_with(None)
    }
}

#[derive(Debug, Args)]
pub struct ImportArgs {
    /// Header row, then one row per frame with x,y,z per landmark.
    #[arg(long)]
    pub csv: PathBuf,
    /// Frame rate of the CSV.
    #[arg(long)]
    pub fps: f32,
    #[arg(long)]
    pub out: PathBuf,
    /// Subject id [default: file stem].
    #[arg(long)]
    pub subject: Option<String>,
    #[arg(long, default_value = "spontaneous", value_parser = parse_label)]
    pub label: Label,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Output directory for videos/ and manifest.json.
    #[arg(long)]
    pub out: PathBuf,
    /// Subjects [key synth.subjects, default 40].
    #[arg(long)]
    pub subjects: Option<usize>,
    /// Videos per subject and label [key synth.per_class, default 1].
    #[arg(long)]
    pub per_class: Option<usize>,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory for model.mswt, loss.csv and config.json.
    #[arg(long)]
    pub out: PathBuf,
    /// Hold out this fold's subjects [default: train on every video].
    #[arg(long)]
    pub fold: Option<usize>,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct CvArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Results JSON.
    #[arg(long, default_value = "results.json")]
    pub out: PathBuf,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Checkpoint written by `train`; its config.json is used when no
    /// `--config` is given.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Evaluate on this fold's test videos [default: every video].
    #[arg(long)]
    pub fold: Option<usize>,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct SaliencyArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Output directory for saliency.csv and saliency.svg.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Finite-difference step.
    #[arg(long, default_value_t = GradcheckOptions::default().eps)]
    pub eps: f64,
    /// Largest accepted relative error.
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    /// Print every tensor, not only failures.
    #[arg(long)]
    pub verbose: bool,
}

fn parse_label(s: &str) -> std::result::Result<Label, String> {
    match s {
        "spontaneous" | "0" => Ok(Label::Spontaneous),
        "posed" | "1" => Ok(Label::Posed),
        _ => Err(format!("expected spontaneous or posed, got `{s}`")),
    }
}

/// Parses `args` and runs the command. Exit status 2 means a data or
/// configuration error, 1 a failed gradient check.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match execute(&cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

pub fn execute(command: &Command) -> Result<ExitCode> {
    match command {
        Command::Import(a) => cmd_import(a),
        Command::GenSynthetic(a) => cmd_gen_synthetic(a),
        Command::Train(a) => cmd_train(a),
        Command::CrossValidate(a) => cmd_cross_validate(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Saliency(a) => cmd_saliency(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Keys => {
            print!("{}", describe_keys());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn cmd_import(a: &ImportArgs) -> Result<ExitCode> {
    let mut seq = read_landmark_csv(&a.csv, a.fps)?;
    if let Some(s) = &a.subject {
        seq.subject_id = s.clone();
    }
    seq.label = a.label;
    write_landmark_file(&seq, &a.out)?;
    println!(
        "{}: {} frames × {} landmarks",
        a.out.display(),
        seq.num_frames(),
        seq.num_landmarks()
    );
    Ok(ExitCode::SUCCESS)
}

pub fn cmd_gen_synthetic(a: &GenArgs) -> Result<ExitCode> {
    let mut cfg = a.cfg.resolve()?;
    if let Some(n) = a.subjects {
        cfg.synth_subjects = n;
    }
    if let Some(n) = a.per_class {
        cfg.synth_per_class = n;
    }
    cfg.validate()?;
    let manifest = generate_dataset(
        cfg.synth_subjects,
        cfg.synth_per_class,
        &cfg.kinematics(),
        cfg.train.seed,
        &a.out,
    )?;
    println!(
        "{} ({} videos)",
        a.out.join("manifest.json").display(),
        manifest.videos.len()
    );
    Ok(ExitCode::SUCCESS)
}

fn load_data(manifest: &Path, cfg: &RunConfig) -> Result<Dataset> {
    Dataset::load(&DatasetManifest::load(manifest)?, cfg.train.fps)
}

/// Fold `index` of the configured split, or an empty hold-out.
fn select_fold(data: &Dataset, cfg: &RunConfig, index: Option<usize>) -> Result<Fold> {
    let Some(i) = index else {
        return Ok(Fold {
            index: 0,
            subjects: Default::default(),
            video_ids: Default::default(),
        });
    };
    let folds = make_folds(&data.manifest()?, cfg.train.folds, cfg.train.seed)?;
    folds.into_iter().nth(i).ok_or_else(|| {
        Error::ConfigInvalid(format!(
            "fold {i} out of range for {} folds",
            cfg.train.folds
        ))
    })
}

pub fn cmd_train(a: &TrainArgs) -> Result<ExitCode> {
    let cfg = a.cfg.resolve()?;
    let data = load_data(&a.manifest, &cfg)?;
    let fold = select_fold(&data, &cfg, a.fold)?;
    let out = train_fold(&data, &fold, &cfg.train, cfg.train.seed)?;
    create_dir(&a.out)?;
    out.model.save(&a.out.join("model.mswt"))?;
    let mut log = String::from("epoch,mean_loss\n");
    for (e, l) in out.losses.iter().enumerate() {
        log.push_str(&format!("{},{l}\n", e + 1));
    }
    write_text(&a.out.join("loss.csv"), &log)?;
    write_text(&a.out.join("config.json"), &cfg.to_json()?)?;
    println!(
        "{} steps, final loss {:.4}, wrote {}",
        out.steps,
        out.losses.last().copied().unwrap_or(f64::NAN),
        a.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

pub fn cmd_cross_validate(a: &CvArgs) -> Result<ExitCode> {
    let cfg = a.cfg.resolve()?;
    let data = load_data(&a.manifest, &cfg)?;
    let run = cross_validate(&data, &cfg.train)?;
    let report = run.report();
    for f in &report.folds {
        println!("fold {}: {:.4}", f.fold, f.accuracy);
    }
    println!("mean: {:.4}", report.mean);
    if let Some(dir) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_text(&a.out, &report.to_json()?)?;
    Ok(ExitCode::SUCCESS)
}

fn load_checkpoint(path: &Path, cfg: &RunConfig, data: &Dataset) -> Result<Model> {
    if !path.is_file() {
        return Err(Error::Checkpoint(format!(
            "no checkpoint at {}",
            path.display()
        )));
    }
    Model::load(model_config_for(&cfg.train, data), path)
}

fn sibling_config(checkpoint: &Path) -> Option<PathBuf> {
    checkpoint.parent().map(|d| d.join("config.json"))
}

pub fn cmd_eval(a: &EvalArgs) -> Result<ExitCode> {
    let cfg = a
        .cfg
        .resolve_with(sibling_config(&a.checkpoint).as_deref())?;
    let data = load_data(&a.manifest, &cfg)?;
    let model = load_checkpoint(&a.checkpoint, &cfg, &data)?;
    let fold = match a.fold {
        Some(_) => select_fold(&data, &cfg, a.fold)?,
        None => Fold {
            index: 0,
            subjects: data.videos.iter().map(|v| v.subject_id.clone()).collect(),
            video_ids: data.videos.iter().map(|v| v.video_id.clone()).collect(),
        },
    };
    let r = evaluate_fold(&model, &data, &fold)?;
    println!("accuracy {:.4} on {} videos", r.accuracy, r.scores.len());
    Ok(ExitCode::SUCCESS)
}

pub fn cmd_saliency(a: &SaliencyArgs) -> Result<ExitCode> {
    let cfg = a
        .cfg
        .resolve_with(sibling_config(&a.checkpoint).as_deref())?;
    let data = load_data(&a.manifest, &cfg)?;
    let model = load_checkpoint(&a.checkpoint, &cfg, &data)?;
    let map = saliency(&model, &data.videos)?;
    create_dir(&a.out)?;
    write_saliency_csv(&map, &a.out.join("saliency.csv"))?;
    write_saliency_svg(&map, &a.out.join("saliency.svg"))?;
    let top = map
        .importance
        .iter()
        .enumerate()
        .max_by(|x, y| x.1.total_cmp(y.1))
        .map_or(0, |(i, _)| i);
    println!("most important landmark {top}; wrote {}", a.out.display());
    Ok(ExitCode::SUCCESS)
}

pub fn cmd_gradcheck(a: &GradcheckArgs) -> Result<ExitCode> {
    let opts = GradcheckOptions {
        seed: a.seed,
        eps: a.eps,
        tol: a.tol,
        ..GradcheckOptions::default()
    };
    let report = model_gradcheck(&opts)?;
    for (name, r) in &report.entries {
        if a.verbose || !r.passed() {
            println!("{name:<40} {r}");
        }
    }
    let worst = report.worst().map_or(0.0, |w| w.1.max_rel_err);
    println!(
        "{} values in {} tensors, worst rel err {worst:.3e}, {:.1}s: {}",
        report.checked(),
        report.entries.len(),
        report.elapsed.as_secs_f64(),
        if report.passed() { "PASS" } else { "FAIL" }
    );
    Ok(if report.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}
