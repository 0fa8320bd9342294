//! Generate the synthetic smile dataset and check its onset timing.
//!
//! cargo run --release --example synthetic_dataset [out_dir]

use std::path::PathBuf;

use meshsmile::landmark_io::Label;
use meshsmile::synthetic::{
    generate_dataset, generate_video_with_draw, measure_rise_time, KinematicsConfig,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let tmp = tempfile::tempdir()?;
    let out = std::env::args()
        .nth(1)
        .map_or_else(|| tmp.path().join("synthetic"), PathBuf::from);
    let cfg = KinematicsConfig::default();

    let manifest = generate_dataset(10, 1, &cfg, 7, &out)?;
    let posed = manifest
        .videos
        .iter()
        .filter(|v| v.label == Label::Posed)
        .count();
    println!(
        "{} videos ({posed} posed) from {} subjects in {}",
        manifest.videos.len(),
        manifest.subjects().len(),
        out.display()
    );

    // Noise-free draws expose the ground-truth amplitude curve.
    let clean = KinematicsConfig {
        noise_sd: 0.0,
        ..cfg
    };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    println!("label        drawn rise  measured rise");
    for label in [
        Label::Spontaneous,
        Label::Posed,
        Label::Spontaneous,
        Label::Posed,
    ] {
        let (_, draw) = generate_video_with_draw(label, 3, &clean, &mut rng)?;
        let curve: Vec<f64> = (0..clean.n_frames())
            .map(|i| draw.timing.amplitude(i as f64 / clean.fps))
            .collect();
        let measured = measure_rise_time(&curve, clean.fps).unwrap_or(f64::NAN);
        println!(
            "{:<12} {:>9.3}s  {:>12.3}s",
            format!("{label:?}"),
            draw.timing.rise,
            measured
        );
    }
    Ok(())
}
