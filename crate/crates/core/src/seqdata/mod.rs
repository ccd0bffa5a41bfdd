//! Point-cloud sequence datasets: ingestion, 512-point resampling, per-frame
//! centering, windowing, and a synthetic range-sensor generator.
//!
//! On-disk layout of a dataset root:
//!
//! ```text
//! root/<recording_id>/frames/000000.ptc, 000001.ptc, ...
//! root/<recording_id>/gt.mot
//! ```

pub mod format;
pub mod synth;

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;
use crate::smpl_body::{BodyModel, PoseParams, ShapeParams, NUM_JOINTS, POSE_DIM};
pub use format::Motion;

pub const NUM_POINTS: usize = 512;
pub const DEFAULT_WINDOW: usize = 16;
pub const DEFAULT_STRIDE: usize = 8;
pub const DEFAULT_FRAME_RATE: f64 = 10.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SeqDataError {
    #[error("empty frame{}", .0.as_ref().map(|s| format!(" ({s})")).unwrap_or_default())]
    EmptyFrame(Option<String>),
    #[error("{}: {message}", path.display())]
    Io { path: PathBuf, message: String },
    #[error("{}: malformed file: {reason}", path.display())]
    Malformed { path: PathBuf, reason: String },
    #[error("{}: non-finite value at record {index}", path.display())]
    NonFinite { path: PathBuf, index: usize },
    #[error("recording {recording}: {frames} frame files but {poses} poses")]
    CountMismatch { recording: String, frames: usize, poses: usize },
    #[error("invalid synthetic config: {0}")]
    InvalidConfig(String),
    #[error("synthetic sensor produced no points in any frame")]
    ZeroHits,
    #[error("{} dataset error(s):\n  {}", .0.len(), .0.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("\n  "))]
    Dataset(Vec<SeqDataError>),
}

/// Sub-sampling strategy for frames with more than 512 points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    #[default]
    Uniform,
    Farthest,
}

/// One raw sensor frame in sensor coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct RawFrame<T: Scalar> {
    pub points: Vec<Vector3<T>>,
    pub frame_index: usize,
    /// Distance from the sensor to the frame centroid (meters).
    pub subject_distance: T,
}

impl<T: Scalar> RawFrame<T> {
    pub fn new(points: Vec<Vector3<T>>, frame_index: usize) -> Result<Self, SeqDataError> {
        if points.is_empty() {
            return Err(SeqDataError::EmptyFrame(Some(format!("frame {frame_index}"))));
        }
        if points.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(SeqDataError::NonFinite { path: PathBuf::new(), index: frame_index });
        }
        let subject_distance = mean(&points).norm();
        Ok(Self { points, frame_index, subject_distance })
    }
}

/// Centered, fixed-size frames of one recording or window.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSequence<T: Scalar> {
    pub frames: Vec<Vec<Vector3<T>>>,
    pub centroids: Vec<Vector3<T>>,
    pub distances: Vec<T>,
    pub frame_rate: f64,
}

impl<T: Scalar> PointSequence<T> {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Point sequence with its ground truth. Joints are posed at zero shape and
/// include the root translation (sensor frame).
#[derive(Debug, Clone, PartialEq)]
pub struct MotionSample<T: Scalar> {
    pub recording_id: String,
    pub start_frame: usize,
    pub sequence: PointSequence<T>,
    pub gt_theta: Vec<[T; POSE_DIM]>,
    pub gt_translation: Vec<Vector3<T>>,
    pub gt_joints: Vec<Vec<Vector3<T>>>,
}

impl<T: Scalar> MotionSample<T> {
    pub fn len(&self) -> usize {
        self.gt_theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gt_theta.is_empty()
    }

    fn slice(&self, start: usize, len: usize) -> Self {
        let r = start..start + len;
        Self {
            recording_id: self.recording_id.clone(),
            start_frame: self.start_frame + start,
            sequence: PointSequence {
                frames: self.sequence.frames[r.clone()].to_vec(),
                centroids: self.sequence.centroids[r.clone()].to_vec(),
                distances: self.sequence.distances[r.clone()].to_vec(),
                frame_rate: self.sequence.frame_rate,
            },
            gt_theta: self.gt_theta[r.clone()].to_vec(),
            gt_translation: self.gt_translation[r.clone()].to_vec(),
            gt_joints: self.gt_joints[r].to_vec(),
        }
    }
}

/// A recording as stored on disk: raw variable-size frames plus motion.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub id: String,
    pub frames: Vec<Vec<[f32; 3]>>,
    pub motion: Motion,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadOptions {
    pub seed: u64,
    pub sampling: Sampling,
    pub frame_rate: f64,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self { seed: 0, sampling: Sampling::Uniform, frame_rate: DEFAULT_FRAME_RATE }
    }
}

fn mean<T: Scalar>(points: &[Vector3<T>]) -> Vector3<T> {
    points.iter().fold(Vector3::zeros(), |a, p| a + p) / T::from_count(points.len())
}

/// SplitMix64 finalizer; used to derive independent stream seeds.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(a << 6).wrapping_add(a >> 2);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a hash of a recording id.
pub fn id_hash(id: &str) -> u64 {
    id.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Brings a frame to exactly 512 points: unchanged at 512, seeded uniform
/// subset (input order kept) above, cyclic repetition below.
pub fn resample_frame<T: Scalar>(points: &[Vector3<T>], seed: u64) -> Result<Vec<Vector3<T>>, SeqDataError> {
    resample_frame_with(points, seed, Sampling::Uniform)
}

pub fn resample_frame_with<T: Scalar>(
    points: &[Vector3<T>],
    seed: u64,
    sampling: Sampling,
) -> Result<Vec<Vector3<T>>, SeqDataError> {
    let n = points.len();
    if n == 0 {
        return Err(SeqDataError::EmptyFrame(None));
    }
    if n == NUM_POINTS {
        return Ok(points.to_vec());
    }
    if n < NUM_POINTS {
        return Ok((0..NUM_POINTS).map(|i| points[i % n]).collect());
    }
    let mut idx = match sampling {
        Sampling::Uniform => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            index::sample(&mut rng, n, NUM_POINTS).into_vec()
        }
        Sampling::Farthest => farthest_point_indices(points, NUM_POINTS),
    };
    idx.sort_unstable();
    Ok(idx.into_iter().map(|i| points[i]).collect())
}

/// Greedy farthest-point selection starting from the first point.
pub fn farthest_point_indices<T: Scalar>(points: &[Vector3<T>], k: usize) -> Vec<usize> {
    let k = k.min(points.len());
    let mut chosen = Vec::with_capacity(k);
    let mut dist = vec![T::max_value().unwrap(); points.len()];
    let mut cur = 0;
    for _ in 0..k {
        chosen.push(cur);
        let c = points[cur];
        let mut best = (T::zero(), cur);
        for (i, p) in points.iter().enumerate() {
            let d = (p - c).norm_squared();
            if d < dist[i] {
                dist[i] = d;
            }
            if dist[i] > best.0 {
                best = (dist[i], i);
            }
        }
        cur = best.1;
    }
    chosen
}

/// Subtracts the frame mean; returns the centered points and the mean.
pub fn center_frame<T: Scalar>(points: &[Vector3<T>]) -> (Vec<Vector3<T>>, Vector3<T>) {
    let c = mean(points);
    (points.iter().map(|p| p - c).collect(), c)
}

/// Sliding windows of `len` frames every `stride` frames; the tail that does
/// not fill a window is dropped.
pub fn window_sequences<T: Scalar>(samples: &[MotionSample<T>], len: usize, stride: usize) -> Vec<MotionSample<T>> {
    assert!(len >= 1 && stride >= 1, "window length and stride must be positive");
    let mut out = Vec::new();
    for s in samples {
        let mut start = 0;
        while start + len <= s.len() {
            out.push(s.slice(start, len));
            start += stride;
        }
    }
    out
}

/// Ground-truth joints at zero shape for each frame.
pub fn joints_for_motion<T: Scalar>(model: &BodyModel<T>, theta: &[[T; POSE_DIM]], translation: &[Vector3<T>]) -> Vec<Vec<Vector3<T>>> {
    let beta = ShapeParams::zero();
    theta
        .iter()
        .zip(translation)
        .map(|(th, tr)| {
            let pose = PoseParams { theta: *th, translation: Some([tr.x, tr.y, tr.z]) };
            let j = model.joints_from_params(&pose, &beta);
            debug_assert_eq!(j.len(), NUM_JOINTS);
            j
        })
        .collect()
}

/// Validates, resamples and centers raw frames. `id` seeds the resampling
/// and names the frame in errors.
pub fn prepare_frames<T: Scalar>(id: &str, frames: &[Vec<[f32; 3]>], opts: &LoadOptions) -> Result<PointSequence<T>, SeqDataError> {
    let rec_seed = mix_seed(opts.seed, id_hash(id));
    let mut sequence =
        PointSequence { frames: Vec::new(), centroids: Vec::new(), distances: Vec::new(), frame_rate: opts.frame_rate };
    for (t, pts) in frames.iter().enumerate() {
        let pts: Vec<Vector3<T>> = pts.iter().map(|p| Vector3::new(T::lit(p[0] as f64), T::lit(p[1] as f64), T::lit(p[2] as f64))).collect();
        let raw = RawFrame::new(pts, t).map_err(|e| match e {
            SeqDataError::EmptyFrame(_) => SeqDataError::EmptyFrame(Some(format!("recording {id}, frame {t}"))),
            other => other,
        })?;
        let fixed = resample_frame_with(&raw.points, mix_seed(rec_seed, t as u64), opts.sampling)?;
        let (centered, c) = center_frame(&fixed);
        sequence.frames.push(centered);
        sequence.centroids.push(c);
        sequence.distances.push(raw.subject_distance);
    }
    Ok(sequence)
}

/// Validates, resamples and centers a recording, attaching ground truth.
pub fn prepare_recording<T: Scalar>(
    rec: &Recording,
    model: &BodyModel<T>,
    opts: &LoadOptions,
) -> Result<MotionSample<T>, SeqDataError> {
    if rec.frames.len() != rec.motion.len() || rec.motion.translation.len() != rec.motion.len() {
        return Err(SeqDataError::CountMismatch {
            recording: rec.id.clone(),
            frames: rec.frames.len(),
            poses: rec.motion.len(),
        });
    }
    let sequence = prepare_frames(&rec.id, &rec.frames, opts)?;
    let gt_theta: Vec<[T; POSE_DIM]> = rec.motion.theta.iter().map(|th| th.map(|v| T::lit(v as f64))).collect();
    let gt_translation: Vec<Vector3<T>> =
        rec.motion.translation.iter().map(|t| Vector3::new(T::lit(t[0] as f64), T::lit(t[1] as f64), T::lit(t[2] as f64))).collect();
    let gt_joints = joints_for_motion(model, &gt_theta, &gt_translation);
    Ok(MotionSample { recording_id: rec.id.clone(), start_frame: 0, sequence, gt_theta, gt_translation, gt_joints })
}

/// Writes recordings in the dataset layout (existing files are overwritten).
pub fn write_dataset(root: &Path, recordings: &[Recording]) -> Result<(), SeqDataError> {
    for rec in recordings {
        let dir = root.join(&rec.id).join("frames");
        fs::create_dir_all(&dir).map_err(|e| SeqDataError::Io { path: dir.clone(), message: e.to_string() })?;
        for (t, f) in rec.frames.iter().enumerate() {
            format::write_ptc(&dir.join(format::frame_file_name(t)), f)?;
        }
        format::write_mot(&root.join(&rec.id).join("gt.mot"), &rec.motion)?;
    }
    Ok(())
}

fn read_recording(dir: &Path) -> Result<Recording, Vec<SeqDataError>> {
    let id = dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let mut errors = Vec::new();
    let motion = format::read_mot(&dir.join("gt.mot")).map_err(|e| errors.push(e)).ok();
    let mut frames = Vec::new();
    match format::list_frame_files(&dir.join("frames")) {
        Ok(files) => {
            for f in files {
                match format::read_ptc(&f) {
                    Ok(p) if p.is_empty() => errors.push(SeqDataError::EmptyFrame(Some(f.display().to_string()))),
                    Ok(p) => frames.push(p),
                    Err(e) => errors.push(e),
                }
            }
        }
        Err(e) => errors.push(e),
    }
    if let Some(m) = &motion {
        if errors.is_empty() && m.len() != frames.len() {
            errors.push(SeqDataError::CountMismatch { recording: id.clone(), frames: frames.len(), poses: m.len() });
        }
    }
    match (errors.is_empty(), motion) {
        (true, Some(motion)) => Ok(Recording { id, frames, motion }),
        _ => Err(errors),
    }
}

/// Reads every recording directory under `root` (sorted by name). Errors
/// from all files are collected and returned together.
pub fn read_recordings(root: &Path) -> Result<Vec<Recording>, SeqDataError> {
    let entries = fs::read_dir(root).map_err(|e| SeqDataError::Io { path: root.to_path_buf(), message: e.to_string() })?;
    let mut dirs: Vec<PathBuf> = entries.filter_map(|e| e.ok()).map(|e| e.path()).filter(|p| p.is_dir()).collect();
    dirs.sort();
    let mut recs = Vec::new();
    let mut errors = Vec::new();
    for d in dirs {
        match read_recording(&d) {
            Ok(r) => recs.push(r),
            Err(mut e) => errors.append(&mut e),
        }
    }
    if !errors.is_empty() {
        return Err(SeqDataError::Dataset(errors));
    }
    Ok(recs)
}

/// Loads and prepares a dataset: one full-length sample per recording.
pub fn load_dataset<T: Scalar>(root: &Path, model: &BodyModel<T>, opts: &LoadOptions) -> Result<Vec<MotionSample<T>>, SeqDataError> {
    let recs = read_recordings(root)?;
    let mut out = Vec::with_capacity(recs.len());
    let mut errors = Vec::new();
    for r in &recs {
        match prepare_recording(r, model, opts) {
            Ok(s) => out.push(s),
            Err(e) => errors.push(e),
        }
    }
    if !errors.is_empty() {
        return Err(SeqDataError::Dataset(errors));
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
