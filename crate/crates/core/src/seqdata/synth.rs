//! Synthetic single-viewpoint range-sensor recordings.
//!
//! The sensor sits at the origin (y up) and casts rays on a fixed
//! azimuth/elevation grid. A posed body mesh is placed in front of it (+z),
//! each ray keeps its first mesh intersection, then Gaussian noise and
//! dropout are applied. Besides the uniform `dropout`, returns are kept with
//! probability `1 / (1 + (r / range_falloff_m)^4)` to mimic the loss of weak
//! returns at range.
//!
//! Every recording draws from its own ChaCha8 stream seeded from
//! `(seed, recording index)`, so output is bit-reproducible.

use std::f64::consts::PI;
use std::path::PathBuf;

use nalgebra::{Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{format, mix_seed, Motion, Recording, SeqDataError};
use crate::rot3d::{matrix_to_axis_angle, AxisAngle, RotMat};
use crate::smpl_body::{BodyModel, PoseParams, ShapeParams, POSE_DIM};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMode {
    /// Each recording at a uniform random distance in the range.
    Random,
    /// Recordings evenly spaced over the range.
    Spaced,
    /// Every recording moves linearly from the near to the far end.
    Sweep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionKind {
    Walk,
    Run,
    Wave,
    Squat,
    Stand,
}

pub const ALL_MOTIONS: [MotionKind; 5] = [MotionKind::Walk, MotionKind::Run, MotionKind::Wave, MotionKind::Squat, MotionKind::Stand];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MotionSource {
    /// Parametric motions assigned round-robin to recordings, with per-recording
    /// amplitude (`1 +- amplitude_jitter`) and phase randomization.
    Procedural { motions: Vec<MotionKind>, amplitude_jitter: f64 },
    /// Poses from a MOT1 file, cycled to the recording length. Placement and
    /// heading are applied on top; stored translations are ignored.
    PoseFile { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub recordings: usize,
    pub frames_per_recording: usize,
    pub frame_rate: f64,
    pub distance_min: f64,
    pub distance_max: f64,
    pub distance_mode: DistanceMode,
    /// Sensor height above the ground plane.
    pub sensor_height: f64,
    pub horizontal_resolution_deg: f64,
    pub vertical_resolution_deg: f64,
    pub dropout: f64,
    /// Range where the range-dependent keep probability drops to 0.5; `0` disables it.
    pub range_falloff_m: f64,
    pub noise_sigma: f64,
    /// Headings are drawn from `[-max_heading_deg, max_heading_deg]` about +y.
    pub max_heading_deg: f64,
    /// Azimuth of the subject position is drawn from `[-lateral_spread_deg, lateral_spread_deg]`.
    pub lateral_spread_deg: f64,
    /// Forward drift along the heading, m/s.
    pub drift_speed: f64,
    pub motion: MotionSource,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            recordings: 8,
            frames_per_recording: 32,
            frame_rate: super::DEFAULT_FRAME_RATE,
            distance_min: 12.0,
            distance_max: 28.0,
            distance_mode: DistanceMode::Random,
            sensor_height: 1.5,
            horizontal_resolution_deg: 0.175,
            vertical_resolution_deg: 0.115,
            dropout: 0.05,
            range_falloff_m: 25.0,
            noise_sigma: 0.01,
            max_heading_deg: 140.0,
            lateral_spread_deg: 10.0,
            drift_speed: 0.1,
            motion: MotionSource::Procedural { motions: ALL_MOTIONS.to_vec(), amplitude_jitter: 0.2 },
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SeqDataError> {
        let bad = |m: &str| Err(SeqDataError::InvalidConfig(m.to_string()));
        if self.recordings == 0 || self.frames_per_recording == 0 {
            return bad("recordings and frames_per_recording must be positive");
        }
        if !(self.frame_rate > 0.0) {
            return bad("frame_rate must be positive");
        }
        if !(self.distance_min > 1.0) || !(self.distance_max >= self.distance_min) {
            return bad("distance range must satisfy 1 < distance_min <= distance_max");
        }
        if !(self.horizontal_resolution_deg > 0.0) || !(self.vertical_resolution_deg > 0.0) {
            return bad("angular resolutions must be positive");
        }
        if !(0.0..=1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1]");
        }
        if !(self.noise_sigma >= 0.0) || !(self.range_falloff_m >= 0.0) || !(self.drift_speed >= 0.0) {
            return bad("noise_sigma, range_falloff_m and drift_speed must be non-negative");
        }
        if !(0.0..=170.0).contains(&self.max_heading_deg) || !(0.0..=45.0).contains(&self.lateral_spread_deg) {
            return bad("max_heading_deg must lie in [0, 170] and lateral_spread_deg in [0, 45]");
        }
        if let MotionSource::Procedural { motions, amplitude_jitter } = &self.motion {
            if motions.is_empty() || !(0.0..1.0).contains(amplitude_jitter) {
                return bad("procedural motion needs at least one kind and jitter in [0, 1)");
            }
        }
        Ok(())
    }
}

struct MotionParams {
    kind: MotionKind,
    amplitude: f64,
    phase: f64,
}

fn add(th: &mut [f64; POSE_DIM], joint: usize, axis: usize, v: f64) {
    th[3 * joint + axis] += v;
}

/// Local joint rotations (root excluded) and a small root sway angle about y.
fn procedural_pose(p: &MotionParams, time: f64) -> ([f64; POSE_DIM], f64) {
    let mut th = [0.0; POSE_DIM];
    let a = p.amplitude;
    // arms lowered from the rest T-pose
    let arm_l = -1.2;
    let mut arm_r = 1.2;
    let sway;
    match p.kind {
        MotionKind::Walk | MotionKind::Run => {
            let (freq, hip, knee, elbow, lean) =
                if p.kind == MotionKind::Walk { (0.9, 0.45, 0.35, 0.3, 0.05) } else { (1.4, 0.8, 0.7, 1.2, 0.25) };
            let w = 2.0 * PI * freq * time + p.phase;
            let s = w.sin();
            add(&mut th, 1, 0, -hip * a * s);
            add(&mut th, 2, 0, hip * a * s);
            add(&mut th, 4, 0, knee * a * (1.0 + (w + 1.2).sin()));
            add(&mut th, 5, 0, knee * a * (1.0 - (w + 1.2).sin()));
            add(&mut th, 16, 0, 0.4 * a * s);
            add(&mut th, 17, 0, -0.4 * a * s);
            add(&mut th, 18, 1, -elbow);
            add(&mut th, 19, 1, elbow);
            add(&mut th, 3, 0, lean);
            add(&mut th, 9, 1, 0.1 * a * s);
            sway = 0.05 * a * s;
        }
        MotionKind::Wave => {
            let w = 2.0 * PI * 1.5 * time + p.phase;
            arm_r = -0.9;
            add(&mut th, 19, 2, -0.9 - 0.5 * a * w.sin());
            add(&mut th, 18, 1, -0.2);
            add(&mut th, 15, 1, 0.2 * a * (0.5 * w).sin());
            sway = 0.03 * a * (0.3 * w).sin();
        }
        MotionKind::Squat => {
            let w = 2.0 * PI * 0.4 * time + p.phase;
            let c = 0.5 * a * (1.0 - w.cos());
            for hip in [1, 2] {
                add(&mut th, hip, 0, -1.2 * c);
            }
            for knee in [4, 5] {
                add(&mut th, knee, 0, 2.0 * c);
            }
            for ankle in [7, 8] {
                add(&mut th, ankle, 0, -0.6 * c);
            }
            add(&mut th, 3, 0, 0.4 * c);
            add(&mut th, 16, 0, -1.2 * c);
            add(&mut th, 17, 0, -1.2 * c);
            sway = 0.0;
        }
        MotionKind::Stand => {
            let w = 2.0 * PI * 0.3 * time + p.phase;
            add(&mut th, 3, 2, 0.05 * a * w.sin());
            add(&mut th, 12, 1, 0.3 * a * (0.7 * w).sin());
            add(&mut th, 18, 1, -0.2 * a);
            add(&mut th, 19, 1, 0.2 * a);
            sway = 0.1 * a * (0.5 * w).sin();
        }
    }
    add(&mut th, 16, 2, arm_l * if p.kind == MotionKind::Squat { 1.0 - 0.5 * a } else { 1.0 });
    add(&mut th, 17, 2, arm_r * if p.kind == MotionKind::Squat { 1.0 - 0.5 * a } else { 1.0 });
    (th, sway)
}

/// Sets the root orientation to `R_y(heading) * R_y(sway) * R_file`.
fn with_heading(mut th: [f64; POSE_DIM], heading: f64) -> [f64; POSE_DIM] {
    let base = AxisAngle::new(th[0], th[1], th[2]).to_matrix();
    let r = Rotation3::from_axis_angle(&Vector3::y_axis(), heading).into_inner() * base.matrix();
    let aa = matrix_to_axis_angle(&RotMat::new(r, 1e-6).expect("product of rotations")).expect("valid rotation");
    th[..3].copy_from_slice(aa.0.as_slice());
    th
}

fn ray_direction(az: f64, el: f64) -> Vector3<f64> {
    let (se, ce) = el.sin_cos();
    let (sa, ca) = az.sin_cos();
    Vector3::new(ce * sa, se, ce * ca)
}

/// Two-sided ray/triangle test for rays from the origin; returns the range.
fn intersect(dir: &Vector3<f64>, v0: &Vector3<f64>, e1: &Vector3<f64>, e2: &Vector3<f64>) -> Option<f64> {
    let p = dir.cross(e2);
    let det = e1.dot(&p);
    if det.abs() < 1e-12 {
        return None;
    }
    let inv = 1.0 / det;
    let s = -v0;
    let u = s.dot(&p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = s.cross(e1);
    let v = dir.dot(&q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(&q) * inv;
    (t > 0.0).then_some(t)
}

/// First-hit ranges on the sensor grid, in (elevation, azimuth) row order.
pub fn cast_rays(vertices: &[Vector3<f64>], faces: &[[u32; 3]], h_res: f64, v_res: f64) -> Vec<Vector3<f64>> {
    let ang: Vec<(f64, f64)> = vertices.iter().map(|v| (v.x.atan2(v.z), v.y.atan2((v.x * v.x + v.z * v.z).sqrt()))).collect();
    let (mut kmin, mut kmax, mut mmin, mut mmax) = (i64::MAX, i64::MIN, i64::MAX, i64::MIN);
    for (az, el) in &ang {
        kmin = kmin.min((az / h_res).floor() as i64);
        kmax = kmax.max((az / h_res).ceil() as i64);
        mmin = mmin.min((el / v_res).floor() as i64);
        mmax = mmax.max((el / v_res).ceil() as i64);
    }
    let width = (kmax - kmin + 1) as usize;
    let height = (mmax - mmin + 1) as usize;
    let mut best = vec![f64::INFINITY; width * height];
    for f in faces {
        let [a, b, c] = f.map(|i| i as usize);
        let az_lo = ang[a].0.min(ang[b].0).min(ang[c].0);
        let az_hi = ang[a].0.max(ang[b].0).max(ang[c].0);
        let el_lo = ang[a].1.min(ang[b].1).min(ang[c].1);
        let el_hi = ang[a].1.max(ang[b].1).max(ang[c].1);
        let (k0, k1) = ((az_lo / h_res).ceil() as i64, (az_hi / h_res).floor() as i64);
        let (m0, m1) = ((el_lo / v_res).ceil() as i64, (el_hi / v_res).floor() as i64);
        if k0 > k1 || m0 > m1 {
            continue;
        }
        let v0 = vertices[a];
        let e1 = vertices[b] - v0;
        let e2 = vertices[c] - v0;
        for m in m0..=m1 {
            for k in k0..=k1 {
                let dir = ray_direction(k as f64 * h_res, m as f64 * v_res);
                if let Some(t) = intersect(&dir, &v0, &e1, &e2) {
                    let cell = &mut best[(m - mmin) as usize * width + (k - kmin) as usize];
                    if t < *cell {
                        *cell = t;
                    }
                }
            }
        }
    }
    let mut hits = Vec::new();
    for (i, t) in best.iter().enumerate() {
        if t.is_finite() {
            let m = (i / width) as i64 + mmin;
            let k = (i % width) as i64 + kmin;
            hits.push(ray_direction(k as f64 * h_res, m as f64 * v_res) * *t);
        }
    }
    hits
}

fn to_f32(v: &Vector3<f64>) -> [f32; 3] {
    [v.x as f32, v.y as f32, v.z as f32]
}

/// Generates `cfg.recordings` recordings named `rec_000`, `rec_001`, ...
pub fn synth_generate(cfg: &SynthConfig, model: &BodyModel<f64>) -> Result<Vec<Recording>, SeqDataError> {
    cfg.validate()?;
    let faces = model.faces().ok_or_else(|| SeqDataError::InvalidConfig("body model has no faces".into()))?;
    let pose_file = match &cfg.motion {
        MotionSource::PoseFile { path } => {
            let m = format::read_mot(path)?;
            if m.is_empty() {
                return Err(SeqDataError::InvalidConfig(format!("{} holds no poses", path.display())));
            }
            Some(m)
        }
        MotionSource::Procedural { .. } => None,
    };
    let h_res = cfg.horizontal_resolution_deg.to_radians();
    let v_res = cfg.vertical_resolution_deg.to_radians();
    let noise = Normal::new(0.0, cfg.noise_sigma.max(0.0)).expect("finite sigma");
    let beta = ShapeParams::zero();
    let n = cfg.recordings;
    let frames_n = cfg.frames_per_recording;

    let mut recordings = Vec::with_capacity(n);
    let mut any_points = false;
    for r in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, r as u64));
        let base_distance = match cfg.distance_mode {
            DistanceMode::Random => rng.random_range(cfg.distance_min..=cfg.distance_max),
            DistanceMode::Spaced if n > 1 => cfg.distance_min + (cfg.distance_max - cfg.distance_min) * r as f64 / (n - 1) as f64,
            _ => cfg.distance_min,
        };
        let heading = rng.random_range(-1.0..=1.0) * cfg.max_heading_deg.to_radians();
        let azimuth = rng.random_range(-1.0..=1.0) * cfg.lateral_spread_deg.to_radians();
        let params = match &cfg.motion {
            MotionSource::Procedural { motions, amplitude_jitter } => Some(MotionParams {
                kind: motions[r % motions.len()],
                amplitude: 1.0 + amplitude_jitter * rng.random_range(-1.0..=1.0),
                phase: rng.random_range(0.0..2.0 * PI),
            }),
            MotionSource::PoseFile { .. } => None,
        };
        let forward = Vector3::new(heading.sin(), 0.0, heading.cos());

        let mut motion = Motion { theta: Vec::with_capacity(frames_n), translation: Vec::with_capacity(frames_n) };
        let mut frames = Vec::with_capacity(frames_n);
        for t in 0..frames_n {
            let time = t as f64 / cfg.frame_rate;
            let distance = match cfg.distance_mode {
                DistanceMode::Sweep if frames_n > 1 => {
                    cfg.distance_min + (cfg.distance_max - cfg.distance_min) * t as f64 / (frames_n - 1) as f64
                }
                _ => base_distance,
            };
            let (local, sway) = match (&params, &pose_file) {
                (Some(p), _) => procedural_pose(p, time),
                (None, Some(m)) => (m.theta[t % m.len()].map(|v| v as f64), 0.0),
                (None, None) => unreachable!(),
            };
            let theta = with_heading(local, heading + sway);
            // quantize first so stored ground truth and the scanned mesh agree
            let theta32 = theta.map(|v| v as f32);
            let theta = theta32.map(|v| v as f64);

            let pose = PoseParams { theta, translation: None };
            let unplaced = model.forward(&pose, &beta);
            let lowest = unplaced.vertices.iter().map(|v| v.y).fold(f64::INFINITY, f64::min);
            let ground = Vector3::new(azimuth.sin() * distance, -cfg.sensor_height - lowest, azimuth.cos() * distance);
            let trans = ground + forward * (cfg.drift_speed * time);
            let trans32 = to_f32(&trans);
            let trans = Vector3::new(trans32[0] as f64, trans32[1] as f64, trans32[2] as f64);
            let vertices: Vec<Vector3<f64>> = unplaced.vertices.iter().map(|v| v + trans).collect();
            if vertices.iter().any(|v| v.z < 0.5) {
                return Err(SeqDataError::InvalidConfig("subject is not in front of the sensor".into()));
            }

            let hits = cast_rays(&vertices, faces, h_res, v_res);
            let mut kept = Vec::with_capacity(hits.len());
            for h in &hits {
                let range = h.norm();
                let mut keep = 1.0 - cfg.dropout;
                if cfg.range_falloff_m > 0.0 {
                    keep /= 1.0 + (range / cfg.range_falloff_m).powi(4);
                }
                let u: f64 = rng.random();
                let jitter = Vector3::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng));
                if u < keep {
                    kept.push(to_f32(&(h + jitter)));
                }
            }
            frames.push((kept, hits));
            motion.theta.push(theta32);
            motion.translation.push(trans32);
        }
        any_points |= frames.iter().any(|(k, _)| !k.is_empty());
        recordings.push((motion, frames));
    }
    if !any_points {
        return Err(SeqDataError::ZeroHits);
    }

    let mut out = Vec::with_capacity(n);
    for (r, (motion, frames)) in recordings.into_iter().enumerate() {
        let mut rec_frames = Vec::with_capacity(frames.len());
        for (kept, hits) in frames {
            let f = if !kept.is_empty() {
                kept
            } else if let Some(nearest) = hits.iter().min_by(|a, b| a.norm().total_cmp(&b.norm())) {
                vec![to_f32(nearest)]
            } else {
                return Err(SeqDataError::EmptyFrame(Some(format!("synthetic recording {r}: subject outside the sensor grid"))));
            };
            rec_frames.push(f);
        }
        out.push(Recording { id: format!("rec_{r:03}"), frames: rec_frames, motion });
    }
    Ok(out)
}
