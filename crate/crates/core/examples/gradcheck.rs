//! Finite-difference check of every gradient in a tiny model.
//!
//! cargo run --release --example gradcheck [eps] [seed]

use meshsmile::diagnostics::{model_gradcheck, GradcheckOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut opts = GradcheckOptions::default();
    let mut args = std::env::args().skip(1);
    if let Some(eps) = args.next() {
        opts.eps = eps.parse()?;
    }
    if let Some(seed) = args.next() {
        opts.seed = seed.parse()?;
    }
    let report = model_gradcheck(&opts)?;
    println!("{report}");
    if !report.passed() {
        std::process::exit(1);
    }
    Ok(())
}
