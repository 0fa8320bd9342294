//! MSLM binary landmark format.
//!
//! ```text
//! "MSLM" | version u16 = 1 | N u32 | L u32 | fps f32 | N·L·3 × f32
//! ```
//!
//! All fields little-endian; the payload is frame-major, then
//! landmark-major, then `(x, y, z)`.

use std::fs;
use std::path::Path;

use super::{Label, LandmarkFrame, LandmarkSequence};
use crate::error::{Error, Result};

pub const MSLM_MAGIC: &[u8; 4] = b"MSLM";
pub const MSLM_VERSION: u16 = 1;
/// Bytes before the payload.
pub const HEADER_LEN: usize = 4 + 2 + 4 + 4 + 4;

pub fn encode_landmark_bytes(seq: &LandmarkSequence) -> Result<Vec<u8>> {
    seq.validate()?;
    let n = seq.num_frames();
    let l = seq.num_landmarks();
    let mut out = Vec::with_capacity(HEADER_LEN + n * l * 12);
    out.extend_from_slice(MSLM_MAGIC);
    out.extend_from_slice(&MSLM_VERSION.to_le_bytes());
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.extend_from_slice(&(l as u32).to_le_bytes());
    out.extend_from_slice(&seq.fps.to_le_bytes());
    for f in &seq.frames {
        for p in &f.points {
            for v in p {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(out)
}

/// Decodes MSLM bytes. The returned sequence carries `video_id` as its id and
/// subject, and a spontaneous label; callers attach manifest metadata.
pub fn decode_landmark_bytes(bytes: &[u8], video_id: &str) -> Result<LandmarkSequence> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::MalformedHeader(format!(
            "{} bytes is shorter than the {HEADER_LEN}-byte header",
            bytes.len()
        )));
    }
    if &bytes[..4] != MSLM_MAGIC {
        return Err(Error::MalformedHeader("missing MSLM magic".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != MSLM_VERSION {
        return Err(Error::MalformedHeader(format!(
            "unsupported version {version}"
        )));
    }
    let u32_at =
        |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes")) as usize;
    let n = u32_at(6);
    let l = u32_at(10);
    let fps = f32::from_le_bytes(bytes[14..18].try_into().expect("4 bytes"));
    let expected = n
        .checked_mul(l)
        .and_then(|v| v.checked_mul(3))
        .ok_or_else(|| Error::MalformedHeader("frame/landmark counts overflow".into()))?;
    let payload = &bytes[HEADER_LEN..];
    let found = payload.len() / 4;
    if found < expected {
        return Err(Error::TruncatedPayload { expected, found });
    }
    let mut floats = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")));
    let mut frames = Vec::with_capacity(n);
    for fi in 0..n {
        let mut points = Vec::with_capacity(l);
        for li in 0..l {
            let p = [
                floats.next().expect("length checked"),
                floats.next().expect("length checked"),
                floats.next().expect("length checked"),
            ];
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteValue(format!("frame {fi}, landmark {li}")));
            }
            points.push(p);
        }
        frames.push(LandmarkFrame { points });
    }
    Ok(LandmarkSequence {
        frames,
        fps,
        video_id: video_id.to_string(),
        subject_id: video_id.to_string(),
        label: Label::Spontaneous,
    })
}

pub fn read_landmark_file(path: &Path) -> Result<LandmarkSequence> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    decode_landmark_bytes(&bytes, &id)
}

pub fn write_landmark_file(seq: &LandmarkSequence, path: &Path) -> Result<()> {
    let bytes = encode_landmark_bytes(seq)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
