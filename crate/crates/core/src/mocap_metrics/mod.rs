//! Pose-estimation metrics: MPJPE, Procrustes-aligned MPJPE, PCK, per-vertex
//! error and acceleration error, with optional per-distance bucketing.
//!
//! Inputs are meters; MPJPE/PA-MPJPE/PVE are reported in millimeters and the
//! acceleration error in m/s^2. MPJPE, PCK and PVE translate prediction and
//! ground truth so their root joints coincide in every frame; global
//! orientation is still scored.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Vector3};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::rot3d::RotMat;
use crate::scalar::Scalar;
use crate::smpl_body::{BodyModel, PoseParams, ShapeParams, POSE_DIM};

pub const DEFAULT_PCK_THRESHOLDS: [f64; 5] = [0.05, 0.10, 0.15, 0.30, 0.50];
pub const DEFAULT_BUCKET_EDGES: [f64; 4] = [14.0, 17.0, 20.0, 23.0];
pub const DEFAULT_FPS: f64 = 10.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("degenerate point set: {0}")]
    Degenerate(&'static str),
    #[error("acceleration error needs at least 3 frames, got {0}")]
    TooShort(usize),
    #[error("prediction/ground-truth length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("invalid pose: {0}")]
    InvalidPose(String),
}

/// `x -> scale * rotation * x + translation`.
#[derive(Debug, Clone, Copy)]
pub struct SimilarityTransform<T: Scalar> {
    pub scale: T,
    pub rotation: RotMat<T>,
    pub translation: Vector3<T>,
}

impl<T: Scalar> SimilarityTransform<T> {
    pub fn apply(&self, p: &Vector3<T>) -> Vector3<T> {
        self.rotation.matrix() * p * self.scale + self.translation
    }
}

fn check_frames<T: Scalar>(pred: &[Vec<Vector3<T>>], gt: &[Vec<Vector3<T>>]) -> Result<(), MetricsError> {
    if pred.len() != gt.len() {
        return Err(MetricsError::ShapeMismatch(format!("{} frames vs {}", pred.len(), gt.len())));
    }
    for (t, (p, g)) in pred.iter().zip(gt).enumerate() {
        if p.len() != g.len() || p.is_empty() {
            return Err(MetricsError::ShapeMismatch(format!("frame {t}: {} joints vs {}", p.len(), g.len())));
        }
    }
    Ok(())
}

/// Closed-form least-squares similarity (Umeyama) mapping `pred` onto `gt`.
pub fn procrustes_align<T: Scalar>(
    pred: &[Vector3<T>],
    gt: &[Vector3<T>],
) -> Result<(SimilarityTransform<T>, Vec<Vector3<T>>), MetricsError> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(MetricsError::ShapeMismatch(format!("{} points vs {}", pred.len(), gt.len())));
    }
    let n = T::from_count(pred.len());
    let mp = pred.iter().fold(Vector3::zeros(), |a, p| a + p) / n;
    let mg = gt.iter().fold(Vector3::zeros(), |a, p| a + p) / n;
    let var_p = pred.iter().map(|p| (p - mp).norm_squared()).fold(T::zero(), |a, b| a + b) / n;
    let var_g = gt.iter().map(|p| (p - mg).norm_squared()).fold(T::zero(), |a, b| a + b) / n;
    let tiny = T::lit(1e-12);
    if var_p <= tiny {
        return Err(MetricsError::Degenerate("prediction points coincide"));
    }
    if var_g <= tiny {
        return Err(MetricsError::Degenerate("ground-truth points coincide"));
    }
    let mut cov = Matrix3::zeros();
    for (p, g) in pred.iter().zip(gt) {
        cov += (g - mg) * (p - mp).transpose();
    }
    cov /= n;
    let svd = cov.svd(true, true);
    let (u, vt) = match (svd.u, svd.v_t) {
        (Some(u), Some(vt)) => (u, vt),
        _ => return Err(MetricsError::Degenerate("svd failed")),
    };
    let mut s = Matrix3::identity();
    if u.determinant() * vt.determinant() < T::zero() {
        s[(2, 2)] = -T::one();
    }
    let rotation = u * s * vt;
    let trace_ds = (0..3).fold(T::zero(), |acc, i| acc + svd.singular_values[i] * s[(i, i)]);
    let scale = trace_ds / var_p;
    let translation = mg - rotation * mp * scale;
    let tf = SimilarityTransform { scale, rotation: RotMat::from_matrix_unchecked(rotation), translation };
    let aligned = pred.iter().map(|p| tf.apply(p)).collect();
    Ok((tf, aligned))
}

fn root_aligned<T: Scalar>(frame: &[Vector3<T>]) -> Vec<Vector3<T>> {
    let root = frame[0];
    frame.iter().map(|p| p - root).collect()
}

fn frame_mean_error<T: Scalar>(a: &[Vector3<T>], b: &[Vector3<T>]) -> T {
    let sum = a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(T::zero(), |s, d| s + d);
    sum / T::from_count(a.len())
}

/// Mean per-joint position error in millimeters after root alignment.
pub fn mpjpe<T: Scalar>(pred: &[Vec<Vector3<T>>], gt: &[Vec<Vector3<T>>]) -> Result<f64, MetricsError> {
    check_frames(pred, gt)?;
    if pred.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = pred
        .iter()
        .zip(gt)
        .map(|(p, g)| frame_mean_error(&root_aligned(p), &root_aligned(g)).as_f64())
        .sum();
    Ok(sum / pred.len() as f64 * 1000.0)
}

/// MPJPE after per-frame similarity alignment of the prediction.
pub fn pa_mpjpe<T: Scalar>(pred: &[Vec<Vector3<T>>], gt: &[Vec<Vector3<T>>]) -> Result<f64, MetricsError> {
    check_frames(pred, gt)?;
    if pred.is_empty() {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for (p, g) in pred.iter().zip(gt) {
        let (_, aligned) = procrustes_align(p, g)?;
        sum += frame_mean_error(&aligned, g).as_f64();
    }
    Ok(sum / pred.len() as f64 * 1000.0)
}

/// Fraction of (frame, joint) pairs whose root-aligned error is below `tau` meters.
pub fn pck<T: Scalar>(pred: &[Vec<Vector3<T>>], gt: &[Vec<Vector3<T>>], tau: f64) -> Result<f64, MetricsError> {
    check_frames(pred, gt)?;
    let (mut hit, mut total) = (0usize, 0usize);
    for (p, g) in pred.iter().zip(gt) {
        for (x, y) in root_aligned(p).iter().zip(root_aligned(g).iter()) {
            total += 1;
            if (x - y).norm().as_f64() < tau {
                hit += 1;
            }
        }
    }
    Ok(if total == 0 { 1.0 } else { hit as f64 / total as f64 })
}

fn posed_vertices_root_aligned<T: Scalar>(model: &BodyModel<T>, theta: &[T]) -> Result<Vec<Vector3<T>>, MetricsError> {
    let pose = PoseParams::from_slice(theta, None).map_err(|e| MetricsError::InvalidPose(e.to_string()))?;
    let out = model.forward(&pose, &ShapeParams::zero());
    let root = out.joints[0];
    Ok(out.vertices.iter().map(|v| v - root).collect())
}

/// Mean per-vertex error (mm) of meshes posed at zero shape, root aligned.
pub fn pve<T: Scalar>(pred_theta: &[Vec<T>], gt_theta: &[Vec<T>], model: &BodyModel<T>) -> Result<f64, MetricsError> {
    if pred_theta.len() != gt_theta.len() {
        return Err(MetricsError::ShapeMismatch(format!("{} frames vs {}", pred_theta.len(), gt_theta.len())));
    }
    if pred_theta.is_empty() {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for (p, g) in pred_theta.iter().zip(gt_theta) {
        if p.len() != POSE_DIM || g.len() != POSE_DIM {
            return Err(MetricsError::ShapeMismatch("theta must have 72 entries".into()));
        }
        let vp = posed_vertices_root_aligned(model, p)?;
        let vg = posed_vertices_root_aligned(model, g)?;
        sum += frame_mean_error(&vp, &vg).as_f64();
    }
    Ok(sum / pred_theta.len() as f64 * 1000.0)
}

fn second_difference<T: Scalar>(seq: &[Vec<Vector3<T>>], t: usize, j: usize, fps2: T) -> Vector3<T> {
    (seq[t + 1][j] - seq[t][j] * T::lit(2.0) + seq[t - 1][j]) * fps2
}

/// Mean norm of the difference between discrete accelerations (m/s^2).
pub fn accel_error<T: Scalar>(pred: &[Vec<Vector3<T>>], gt: &[Vec<Vector3<T>>], fps: f64) -> Result<f64, MetricsError> {
    check_frames(pred, gt)?;
    if pred.len() < 3 {
        return Err(MetricsError::TooShort(pred.len()));
    }
    let fps2 = T::lit(fps * fps);
    let mut sum = 0.0;
    let mut count = 0usize;
    for t in 1..pred.len() - 1 {
        for j in 0..pred[t].len() {
            let d = second_difference(pred, t, j, fps2) - second_difference(gt, t, j, fps2);
            sum += d.norm().as_f64();
            count += 1;
        }
    }
    Ok(sum / count as f64)
}

/// One sequence to score. `theta` enables PVE, `distances` enables bucketing.
#[derive(Debug, Clone)]
pub struct EvalSequence<T: Scalar> {
    pub joints: Vec<Vec<Vector3<T>>>,
    pub theta: Option<Vec<Vec<T>>>,
    pub distances: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct EvalConfig {
    pub pck_thresholds: Vec<f64>,
    pub fps: f64,
    pub bucket_edges: Option<Vec<f64>>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { pck_thresholds: DEFAULT_PCK_THRESHOLDS.to_vec(), fps: DEFAULT_FPS, bucket_edges: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub mpjpe: f64,
    pub pa_mpjpe: f64,
    /// (threshold in meters, fraction), ascending thresholds.
    pub pck: Vec<(f64, f64)>,
    pub pve: Option<f64>,
    pub accel_err: Option<f64>,
    pub n_frames: usize,
    pub distance_buckets: Option<BTreeMap<String, MetricsReport>>,
}

impl MetricsReport {
    pub fn pck_at(&self, tau: f64) -> Option<f64> {
        self.pck.iter().find(|(t, _)| (*t - tau).abs() < 1e-12).map(|(_, v)| *v)
    }

    /// Flat JSON object with units in the key names.
    pub fn to_json(&self) -> Value {
        let mut m = Map::new();
        m.insert("mpjpe_mm".into(), json!(self.mpjpe));
        m.insert("pa_mpjpe_mm".into(), json!(self.pa_mpjpe));
        for (t, v) in &self.pck {
            m.insert(format!("pck@{t}m"), json!(v));
        }
        if let Some(p) = self.pve {
            m.insert("pve_mm".into(), json!(p));
        }
        if let Some(a) = self.accel_err {
            m.insert("accel_err_mps2".into(), json!(a));
        }
        m.insert("n_frames".into(), json!(self.n_frames));
        if let Some(b) = &self.distance_buckets {
            let buckets: Map<String, Value> = b.iter().map(|(k, r)| (k.clone(), r.to_json())).collect();
            m.insert("buckets".into(), Value::Object(buckets));
        }
        Value::Object(m)
    }
}

#[derive(Debug, Clone, Default)]
struct Accumulator {
    frames: usize,
    mpjpe_sum: f64,
    pa_sum: f64,
    pck_hits: Vec<usize>,
    joints: usize,
    pve_sum: f64,
    pve_frames: usize,
    accel_sum: f64,
    accel_count: usize,
}

impl Accumulator {
    fn new(n_thresholds: usize) -> Self {
        Self { pck_hits: vec![0; n_thresholds], ..Default::default() }
    }

    fn report(&self, cfg: &EvalConfig) -> MetricsReport {
        let f = self.frames.max(1) as f64;
        let pck = cfg
            .pck_thresholds
            .iter()
            .zip(&self.pck_hits)
            .map(|(t, h)| (*t, if self.joints == 0 { 1.0 } else { *h as f64 / self.joints as f64 }))
            .collect();
        MetricsReport {
            mpjpe: self.mpjpe_sum / f * 1000.0,
            pa_mpjpe: self.pa_sum / f * 1000.0,
            pck,
            pve: (self.pve_frames > 0).then(|| self.pve_sum / self.pve_frames as f64 * 1000.0),
            accel_err: (self.accel_count > 0).then(|| self.accel_sum / self.accel_count as f64),
            n_frames: self.frames,
            distance_buckets: None,
        }
    }
}

pub fn bucket_label(edges: &[f64], d: f64) -> String {
    let i = edges.iter().position(|e| d < *e).unwrap_or(edges.len());
    if i == 0 {
        format!("<{}m", edges[0])
    } else if i == edges.len() {
        format!(">={}m", edges[edges.len() - 1])
    } else {
        format!("{}-{}m", edges[i - 1], edges[i])
    }
}

/// Pools every metric over all frames of all sequences; adds per-bucket
/// sub-reports when bucket edges are configured and distances are present.
pub fn evaluate<T: Scalar>(
    preds: &[EvalSequence<T>],
    gts: &[EvalSequence<T>],
    model: Option<&BodyModel<T>>,
    cfg: &EvalConfig,
) -> Result<MetricsReport, MetricsError> {
    if preds.len() != gts.len() {
        return Err(MetricsError::LengthMismatch(preds.len(), gts.len()));
    }
    let mut thresholds = cfg.pck_thresholds.clone();
    thresholds.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let cfg = EvalConfig { pck_thresholds: thresholds, ..cfg.clone() };
    let nt = cfg.pck_thresholds.len();
    let mut total = Accumulator::new(nt);
    let mut buckets: BTreeMap<String, Accumulator> = BTreeMap::new();
    let fps2 = T::lit(cfg.fps * cfg.fps);

    for (pred, gt) in preds.iter().zip(gts) {
        check_frames(&pred.joints, &gt.joints)?;
        let distances = gt.distances.as_ref().or(pred.distances.as_ref());
        if let Some(d) = distances {
            if d.len() != gt.joints.len() {
                return Err(MetricsError::ShapeMismatch("distance tags vs frames".into()));
            }
        }
        let pa: Vec<Vec<Vector3<T>>> = pred.joints.iter().map(|f| root_aligned(f)).collect();
        let ga: Vec<Vec<Vector3<T>>> = gt.joints.iter().map(|f| root_aligned(f)).collect();
        let pve_inputs = match (model, &pred.theta, &gt.theta) {
            (Some(m), Some(pt), Some(gtt)) => {
                if pt.len() != gtt.len() || pt.len() != pa.len() {
                    return Err(MetricsError::ShapeMismatch("theta frames".into()));
                }
                Some((m, pt, gtt))
            }
            _ => None,
        };
        for t in 0..pa.len() {
            let mut frame = Accumulator::new(nt);
            frame.frames = 1;
            frame.mpjpe_sum = frame_mean_error(&pa[t], &ga[t]).as_f64();
            let (_, aligned) = procrustes_align(&pred.joints[t], &gt.joints[t])?;
            frame.pa_sum = frame_mean_error(&aligned, &gt.joints[t]).as_f64();
            frame.joints = pa[t].len();
            for (x, y) in pa[t].iter().zip(&ga[t]) {
                let e = (x - y).norm().as_f64();
                for (k, tau) in cfg.pck_thresholds.iter().enumerate() {
                    if e < *tau {
                        frame.pck_hits[k] += 1;
                    }
                }
            }
            if let Some((m, pt, gtt)) = pve_inputs {
                let vp = posed_vertices_root_aligned(m, &pt[t])?;
                let vg = posed_vertices_root_aligned(m, &gtt[t])?;
                frame.pve_sum = frame_mean_error(&vp, &vg).as_f64();
                frame.pve_frames = 1;
            }
            if t >= 1 && t + 1 < pa.len() {
                for j in 0..pa[t].len() {
                    let d = second_difference(&pa, t, j, fps2) - second_difference(&ga, t, j, fps2);
                    frame.accel_sum += d.norm().as_f64();
                    frame.accel_count += 1;
                }
            }
            merge(&mut total, &frame);
            if let (Some(edges), Some(d)) = (&cfg.bucket_edges, distances) {
                let key = bucket_label(edges, d[t]);
                merge(buckets.entry(key).or_insert_with(|| Accumulator::new(nt)), &frame);
            }
        }
    }
    let mut report = total.report(&cfg);
    if cfg.bucket_edges.is_some() && !buckets.is_empty() {
        report.distance_buckets = Some(buckets.iter().map(|(k, a)| (k.clone(), a.report(&cfg))).collect());
    }
    Ok(report)
}

fn merge(into: &mut Accumulator, frame: &Accumulator) {
    into.frames += frame.frames;
    into.mpjpe_sum += frame.mpjpe_sum;
    into.pa_sum += frame.pa_sum;
    into.joints += frame.joints;
    for (a, b) in into.pck_hits.iter_mut().zip(&frame.pck_hits) {
        *a += b;
    }
    into.pve_sum += frame.pve_sum;
    into.pve_frames += frame.pve_frames;
    into.accel_sum += frame.accel_sum;
    into.accel_count += frame.accel_count;
}

#[cfg(test)]
mod tests;
