//! Grow curves over one synthetic face frame and print where they walk.
//!
//! cargo run --release --example curve_walk [seed]

use meshsmile::numerics::{knn_indices, ParamStore, Tape, Tensor};
use meshsmile::relativity::{relativity_forward, CurveConfig, RelativityParams, WalkMode};
use meshsmile::synthetic::SubjectFace;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed: u64 = std::env::args()
        .nth(1)
        .map(|s| s.parse())
        .transpose()?
        .unwrap_or(0);
    let face = SubjectFace::new(68, seed);
    let cfg = CurveConfig {
        n_curves: 4,
        curve_len: 8,
        knn: 6,
        d: 32,
        tau: 1.0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let params = RelativityParams::new(&mut store, cfg.d, true, &mut rng);
    let knn = knn_indices(&face.template, cfg.knn)?;

    let coords = Tensor::matrix(68, 3, face.template.iter().flatten().copied().collect());
    let mut tape = Tape::new();
    let x = tape.leaf(coords.clone());
    let (feats, eval) = relativity_forward(
        &mut tape,
        &store,
        x,
        &knn,
        &params,
        &cfg,
        &mut WalkMode::Eval,
    )?;
    println!(
        "features {:?}, {} tape nodes",
        tape.value(feats).shape(),
        tape.len()
    );
    for (i, stage) in eval.stages.iter().enumerate() {
        println!("grouping stage {}:", i + 1);
        for walk in &stage.walks {
            println!("  {walk:?}");
        }
    }

    // Training mode samples each step with hard Gumbel-Softmax instead.
    let mut tape = Tape::new();
    let x = tape.leaf(coords);
    let mut noise = ChaCha8Rng::seed_from_u64(seed + 1);
    let (_, train) = relativity_forward(
        &mut tape,
        &store,
        x,
        &knn,
        &params,
        &cfg,
        &mut WalkMode::Train(&mut noise),
    )?;
    let same = train.stages[0].walks == eval.stages[0].walks;
    println!("sampled first-stage walks match argmax walks: {same}");
    println!("  {:?}", train.stages[0].walks[0]);
    Ok(())
}
