//! Train on four fifths of the synthetic subjects and test on the rest.
//!
//! cargo run --release --example train_and_evaluate [epochs] [seed]

use meshsmile::landmark_io::make_folds;
use meshsmile::synthetic::{generate_sequences, KinematicsConfig};
use meshsmile::training::{evaluate_fold, train_fold, Dataset, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let mut cfg = TrainConfig::synthetic();
    if let Some(e) = args.next() {
        cfg.epochs = e.parse()?;
    }
    if let Some(s) = args.next() {
        cfg.seed = s.parse()?;
    }

    let videos = generate_sequences(40, 1, &KinematicsConfig::default(), cfg.seed)?;
    let data = Dataset::new(videos)?.resampled(cfg.fps.unwrap_or(25.0))?;
    let folds = make_folds(&data.manifest()?, 5, cfg.seed)?;
    let fold = &folds[0];
    println!(
        "{} training videos, {} test videos, {} epochs",
        data.train_split(fold).len(),
        data.test_split(fold).len(),
        cfg.epochs
    );

    let out = train_fold(&data, fold, &cfg, cfg.seed)?;
    for (e, l) in out.losses.iter().enumerate().step_by(5) {
        println!("epoch {:>3}  loss {l:.4}", e + 1);
    }
    let result = evaluate_fold(&out.model, &data, fold)?;
    for s in &result.scores {
        println!("{:<24} {:?}  score {:.3}", s.id, s.label, s.score);
    }
    println!("test accuracy {:.3}", result.accuracy);
    Ok(())
}
