//! Five-fold subject-disjoint cross-validation on the synthetic set, plus the
//! same run with labels made uninformative.
//!
//! cargo run --release --example cross_validate [seed]

use meshsmile::synthetic::{generate_sequences, KinematicsConfig};
use meshsmile::training::{cross_validate, Dataset, TrainConfig};

fn run(kin: &KinematicsConfig, cfg: &TrainConfig) -> Result<f64, Box<dyn std::error::Error>> {
    let data = Dataset::new(generate_sequences(40, 1, kin, cfg.seed)?)?
        .resampled(cfg.fps.unwrap_or(kin.fps))?;
    let run = cross_validate(&data, cfg)?;
    println!("{}", run.report().to_json()?);
    Ok(run.mean_accuracy())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = TrainConfig::synthetic();
    cfg.seed = std::env::args()
        .nth(1)
        .map(|s| s.parse())
        .transpose()?
        .unwrap_or(0);
    cfg.jobs = std::thread::available_parallelism().map_or(1, |n| n.get().min(cfg.folds));

    let kin = KinematicsConfig::default();
    let real = run(&kin, &cfg)?;
    let null = run(&kin.clone().null_mode(), &cfg)?;
    println!("mean accuracy: informative labels {real:.3}, null mode {null:.3}");
    Ok(())
}
