//! Import a landmark CSV, store it as MSLM and read it back.
//!
//! cargo run --release --example import_csv [path.csv] [fps]
//!
//! Without arguments a small spinning tetrahedron is written to a temporary
//! CSV first.

use std::io::Write;
use std::path::PathBuf;

use meshsmile::landmark_io::{
    normalize_frame, read_landmark_csv, read_landmark_file, resample_fps, write_landmark_file,
};

fn demo_csv(dir: &std::path::Path) -> std::io::Result<PathBuf> {
    let path = dir.join("tetra.csv");
    let mut f = std::fs::File::create(&path)?;
    let header: Vec<String> = (0..4)
        .flat_map(|i| ["x", "y", "z"].map(|a| format!("{a}{i}")))
        .collect();
    writeln!(f, "{}", header.join(","))?;
    let base = [
        [1.0, 1.0, 1.0],
        [1.0, -1.0, -1.0],
        [-1.0, 1.0, -1.0],
        [-1.0, -1.0, 1.0f64],
    ];
    for t in 0..30 {
        let a = t as f64 * 0.1;
        let (s, c) = a.sin_cos();
        let row: Vec<String> = base
            .iter()
            .flat_map(|p| [c * p[0] - s * p[1], s * p[0] + c * p[1], p[2]])
            .map(|v| format!("{v:.6}"))
            .collect();
        writeln!(f, "{}", row.join(","))?;
    }
    Ok(path)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let mut args = std::env::args().skip(1);
    let csv = match args.next() {
        Some(p) => PathBuf::from(p),
        None => demo_csv(dir.path())?,
    };
    let fps: f32 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(30.0);

    let seq = read_landmark_csv(&csv, fps)?;
    println!(
        "{}: {} frames × {} landmarks at {fps} fps",
        seq.video_id,
        seq.num_frames(),
        seq.num_landmarks()
    );

    let out = dir.path().join(format!("{}.mslm", seq.video_id));
    write_landmark_file(&seq, &out)?;
    let back = read_landmark_file(&out)?;
    println!("MSLM round trip exact: {}", back.frames == seq.frames);
    println!("file size: {} bytes", std::fs::metadata(&out)?.len());

    let slow = resample_fps(&seq, fps / 3.0)?;
    println!(
        "resampled to {} fps: {} frames",
        slow.fps,
        slow.num_frames()
    );

    let n = normalize_frame(&seq.frames[0])?;
    println!("first frame after normalization: {:?}", &n.points[..2]);
    Ok(())
}
