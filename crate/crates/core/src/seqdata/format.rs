//! Binary frame (`PTC1`) and motion (`MOT1`) files. All values little-endian.
//!
//! ```text
//! PTC1: "PTC1" | u32 N | N x [f32; 3]
//! MOT1: "MOT1" | u32 F | F x [f32; 72] theta | F x [f32; 3] translation
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use super::SeqDataError;
use crate::smpl_body::POSE_DIM;

pub const PTC_MAGIC: &[u8; 4] = b"PTC1";
pub const MOT_MAGIC: &[u8; 4] = b"MOT1";

/// Poses and root translations of one recording, as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Motion {
    pub theta: Vec<[f32; POSE_DIM]>,
    pub translation: Vec<[f32; 3]>,
}

impl Motion {
    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }
}

fn malformed(path: &Path, reason: impl Into<String>) -> SeqDataError {
    SeqDataError::Malformed { path: path.to_path_buf(), reason: reason.into() }
}

fn io_err(path: &Path, e: std::io::Error) -> SeqDataError {
    SeqDataError::Io { path: path.to_path_buf(), message: e.to_string() }
}

fn read_header(bytes: &[u8], magic: &[u8; 4], path: &Path) -> Result<usize, SeqDataError> {
    if bytes.len() < 8 {
        return Err(malformed(path, "file shorter than header"));
    }
    if &bytes[..4] != magic {
        return Err(malformed(path, format!("bad magic, expected {}", String::from_utf8_lossy(magic))));
    }
    Ok(u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize)
}

fn read_f32s(bytes: &[u8]) -> impl Iterator<Item = f32> + '_ {
    bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()))
}

pub fn encode_ptc(points: &[[f32; 3]]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + points.len() * 12);
    out.extend_from_slice(PTC_MAGIC);
    out.extend_from_slice(&(points.len() as u32).to_le_bytes());
    for p in points {
        for v in p {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Decodes a frame; rejects truncated files, trailing bytes and NaN/inf.
pub fn decode_ptc(bytes: &[u8], path: &Path) -> Result<Vec<[f32; 3]>, SeqDataError> {
    let n = read_header(bytes, PTC_MAGIC, path)?;
    let expected = 8 + n * 12;
    if bytes.len() != expected {
        return Err(malformed(path, format!("expected {expected} bytes for {n} points, found {}", bytes.len())));
    }
    let vals: Vec<f32> = read_f32s(&bytes[8..]).collect();
    if let Some(i) = vals.iter().position(|v| !v.is_finite()) {
        return Err(SeqDataError::NonFinite { path: path.to_path_buf(), index: i / 3 });
    }
    Ok(vals.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
}

pub fn encode_mot(motion: &Motion) -> Vec<u8> {
    let f = motion.theta.len();
    let mut out = Vec::with_capacity(8 + f * 75 * 4);
    out.extend_from_slice(MOT_MAGIC);
    out.extend_from_slice(&(f as u32).to_le_bytes());
    for th in &motion.theta {
        for v in th {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    for tr in &motion.translation {
        for v in tr {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_mot(bytes: &[u8], path: &Path) -> Result<Motion, SeqDataError> {
    let f = read_header(bytes, MOT_MAGIC, path)?;
    let expected = 8 + f * (POSE_DIM + 3) * 4;
    if bytes.len() != expected {
        return Err(malformed(path, format!("expected {expected} bytes for {f} poses, found {}", bytes.len())));
    }
    let vals: Vec<f32> = read_f32s(&bytes[8..]).collect();
    if let Some(i) = vals.iter().position(|v| !v.is_finite()) {
        let frame = if i < f * POSE_DIM { i / POSE_DIM } else { (i - f * POSE_DIM) / 3 };
        return Err(SeqDataError::NonFinite { path: path.to_path_buf(), index: frame });
    }
    let (th, tr) = vals.split_at(f * POSE_DIM);
    Ok(Motion {
        theta: th.chunks_exact(POSE_DIM).map(|c| c.try_into().unwrap()).collect(),
        translation: tr.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
    })
}

pub fn write_ptc(path: &Path, points: &[[f32; 3]]) -> Result<(), SeqDataError> {
    fs::write(path, encode_ptc(points)).map_err(|e| io_err(path, e))
}

pub fn read_ptc(path: &Path) -> Result<Vec<[f32; 3]>, SeqDataError> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    decode_ptc(&bytes, path)
}

pub fn write_mot(path: &Path, motion: &Motion) -> Result<(), SeqDataError> {
    if motion.theta.len() != motion.translation.len() {
        return Err(malformed(path, "theta and translation lengths differ"));
    }
    fs::write(path, encode_mot(motion)).map_err(|e| io_err(path, e))
}

pub fn read_mot(path: &Path) -> Result<Motion, SeqDataError> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    decode_mot(&bytes, path)
}

pub fn frame_file_name(index: usize) -> String {
    format!("{index:06}.ptc")
}

/// Frame files of a recording directory in ascending file-name order.
pub fn list_frame_files(frames_dir: &Path) -> Result<Vec<PathBuf>, SeqDataError> {
    let entries = fs::read_dir(frames_dir).map_err(|e| io_err(frames_dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| io_err(frames_dir, e))?;
        let path = entry.path();
        if path.extension().is_some_and(|x| x == "ptc") {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}
