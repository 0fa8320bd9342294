//! Train briefly, then rank landmarks by the gradient of the score with
//! respect to their coordinates.
//!
//! cargo run --release --example saliency_map [out_dir]

use std::path::PathBuf;

use meshsmile::landmark_io::Fold;
use meshsmile::synthetic::{generate_sequences, KinematicsConfig};
use meshsmile::training::{
    saliency, train_fold, write_saliency_csv, write_saliency_svg, Dataset, TrainConfig,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let tmp = tempfile::tempdir()?;
    let out = std::env::args()
        .nth(1)
        .map_or_else(|| tmp.path().to_path_buf(), PathBuf::from);
    std::fs::create_dir_all(&out)?;

    let cfg = TrainConfig::synthetic();
    let kin = KinematicsConfig::default();
    let data =
        Dataset::new(generate_sequences(12, 1, &kin, 3)?)?.resampled(cfg.fps.unwrap_or(kin.fps))?;
    let everyone = Fold {
        index: 0,
        subjects: Default::default(),
        video_ids: Default::default(),
    };
    let trained = train_fold(&data, &everyone, &cfg, cfg.seed)?;
    println!(
        "trained {} steps, final loss {:.3}",
        trained.steps,
        trained.losses.last().unwrap_or(&f64::NAN)
    );

    let map = saliency(&trained.model, &data.videos)?;
    let mut order: Vec<usize> = (0..map.importance.len()).collect();
    order.sort_by(|&a, &b| map.importance[b].total_cmp(&map.importance[a]));
    println!("most important landmarks:");
    for &l in &order[..8] {
        let p = map.mean_positions[l];
        println!(
            "  {l:>3}  {:.3}  at ({:+.2}, {:+.2})",
            map.importance[l], p[0], p[1]
        );
    }
    write_saliency_csv(&map, &out.join("saliency.csv"))?;
    write_saliency_svg(&map, &out.join("saliency.svg"))?;
    println!("wrote {}", out.display());
    Ok(())
}
