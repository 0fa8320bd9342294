//! CSV import: a header row followed by one row per frame holding `3·L`
//! coordinates in `(x, y, z)` order per landmark.

use std::io::Read;
use std::path::Path;

use super::{Label, LandmarkFrame, LandmarkSequence};
use crate::error::{Error, Result};

pub fn read_landmark_csv(path: &Path, fps: f32) -> Result<LandmarkSequence> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    read_landmark_csv_from(file, fps, &id)
}

/// Row numbers in errors are 1-based file lines (the header is line 1).
pub fn read_landmark_csv_from<R: Read>(
    reader: R,
    fps: f32,
    video_id: &str,
) -> Result<LandmarkSequence> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Csv {
            row: 1,
            message: e.to_string(),
        })?
        .clone();
    let cols = headers.len();
    if cols == 0 || cols % 3 != 0 {
        return Err(Error::Csv {
            row: 1,
            message: format!("header has {cols} columns, expected a multiple of 3"),
        });
    }
    let l = cols / 3;
    let mut frames = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| Error::Csv {
            row,
            message: e.to_string(),
        })?;
        if rec.len() != cols {
            return Err(Error::Csv {
                row,
                message: format!("row has {} columns, header has {cols}", rec.len()),
            });
        }
        let mut points = Vec::with_capacity(l);
        for li in 0..l {
            let mut p = [0f32; 3];
            for (c, slot) in p.iter_mut().enumerate() {
                let col = li * 3 + c;
                let field = &rec[col];
                let v: f32 = field.parse().map_err(|_| Error::Csv {
                    row,
                    message: format!(
                        "column {} (`{}`): cannot parse `{field}`",
                        col + 1,
                        &headers[col]
                    ),
                })?;
                if !v.is_finite() {
                    return Err(Error::Csv {
                        row,
                        message: format!(
                            "column {} (`{}`): non-finite value",
                            col + 1,
                            &headers[col]
                        ),
                    });
                }
                *slot = v;
            }
            points.push(p);
        }
        frames.push(LandmarkFrame { points });
    }
    if frames.is_empty() {
        return Err(Error::Csv {
            row: 1,
            message: "no data rows (empty sequence)".into(),
        });
    }
    let seq = LandmarkSequence {
        frames,
        fps,
        video_id: video_id.to_string(),
        subject_id: video_id.to_string(),
        label: Label::Spontaneous,
    };
    seq.validate()?;
    Ok(seq)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(l: usize) -> String {
        (0..l)
            .flat_map(|i| [format!("f{i}_x"), format!("f{i}_y"), format!("f{i}_z")])
            .collect::<Vec<_>>()
            .join(",")
    }

    #[test]
    fn two_frames_four_landmarks() {
        let text = format!(
            "{}\n{}\n{}\n",
            header(4),
            (0..12).map(|v| v.to_string()).collect::<Vec<_>>().join(","),
            (0..12)
                .map(|v| (v * 2).to_string())
                .collect::<Vec<_>>()
                .join(",")
        );
        let s = read_landmark_csv_from(text.as_bytes(), 30.0, "clip").unwrap();
        assert_eq!(s.num_frames(), 2);
        assert_eq!(s.frames[1].points[3], [18.0, 20.0, 22.0]);
    }

    #[test]
    fn ragged_row_names_the_row() {
        let row = (0..12).map(|v| v.to_string()).collect::<Vec<_>>().join(",");
        let text = format!("{}\n{row}\n1,2,3\n", header(4));
        match read_landmark_csv_from(text.as_bytes(), 30.0, "c") {
            Err(Error::Csv { row, .. }) => assert_eq!(row, 3),
            other => panic!("expected csv error, got {other:?}"),
        }
    }

    #[test]
    fn header_only_is_an_error() {
        let text = format!("{}\n", header(4));
        assert!(matches!(
            read_landmark_csv_from(text.as_bytes(), 30.0, "c"),
            Err(Error::Csv { row: 1, .. })
        ));
    }
}
