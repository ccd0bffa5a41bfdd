//! Entry points behind the CLI subcommands.

use std::collections::BTreeMap;
use std::fs::File;
use std::path::Path;

use lidarcap::mocap_metrics::{bucket_label, EvalConfig, MetricsReport, DEFAULT_BUCKET_EDGES};
use lidarcap::scalar::Scalar;
use lidarcap::seqdata::format::write_mot;
use lidarcap::seqdata::synth::{synth_generate, SynthConfig};
use lidarcap::seqdata::{write_dataset, Recording};
use lidarcap::smpl_body::synthetic::synthetic_body_model;
use lidarcap::smpl_body::{BodyModel, BodyModelArrays, NUM_BETAS, NUM_JOINTS};
use ndarray::{ArrayD, IxDyn};
use ndarray_npy::NpzReader;

use crate::config::{read_toml, seed_override, Precision, TrainConfig};
use crate::error::{CliError, Result};
use crate::pipeline::{self, checkpoint_precision, Model, RunManifest};

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn load_train_config(path: &Path) -> Result<TrainConfig> {
    let mut cfg: TrainConfig = read_toml(path)?;
    if let Some(seed) = seed_override()? {
        cfg.seed = seed;
    }
    if cfg.data.is_relative() {
        if let Some(parent) = path.parent() {
            cfg.data = parent.join(&cfg.data);
        }
    }
    if let Some(bm) = &cfg.body_model {
        if bm.is_relative() {
            cfg.body_model = path.parent().map(|p| p.join(bm));
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn train(config: &Path, out: &Path) -> Result<RunManifest> {
    let cfg = load_train_config(config)?;
    ensure_dir(out)?;
    let mut log = |r: &pipeline::EpochRecord| {
        let smpl = r.loss_smpl.map(|v| format!(" L_smpl {v:.5}")).unwrap_or_default();
        eprintln!("epoch {:>4} it {:>6}  L_J {:.5}  L_theta {:.5}{smpl}  total {:.5}", r.epoch, r.iterations, r.loss_joints, r.loss_pose, r.loss_total);
    };
    let manifest = match cfg.precision {
        Precision::F32 => pipeline::train::<f32>(&cfg, Some(out), &mut log)?.manifest,
        Precision::F64 => pipeline::train::<f64>(&cfg, Some(out), &mut log)?.manifest,
    };
    Ok(manifest)
}

fn eval_typed<T: Scalar>(ckpt: &Path, data: &Path, buckets: bool, body_path: Option<&Path>) -> Result<MetricsReport> {
    let model = Model::<T>::load(ckpt)?;
    let body = pipeline::body_model::<T>(body_path)?;
    let cfg = EvalConfig {
        fps: model.settings.frame_rate,
        bucket_edges: buckets.then(|| DEFAULT_BUCKET_EDGES.to_vec()),
        ..EvalConfig::default()
    };
    pipeline::evaluate_dataset(&model, data, &body, &cfg)
}

pub fn eval(ckpt: &Path, data: &Path, buckets: bool, body_path: Option<&Path>) -> Result<MetricsReport> {
    match checkpoint_precision(ckpt)? {
        Precision::F32 => eval_typed::<f32>(ckpt, data, buckets, body_path),
        Precision::F64 => eval_typed::<f64>(ckpt, data, buckets, body_path),
    }
}

fn infer_typed<T: Scalar>(ckpt: &Path, frames: &Path, out: &Path, body_path: Option<&Path>) -> Result<usize> {
    let model = Model::<T>::load(ckpt)?;
    let body = pipeline::body_model::<T>(body_path)?;
    let seq = pipeline::read_frames::<T>(frames, &model.settings)?;
    let pred = pipeline::infer_sequence(&model, &seq, &body)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    write_mot(out, &pred.to_motion())?;
    Ok(pred.theta.len())
}

/// Writes a MOT1 pose file; returns the frame count.
pub fn infer(ckpt: &Path, frames: &Path, out: &Path, body_path: Option<&Path>) -> Result<usize> {
    match checkpoint_precision(ckpt)? {
        Precision::F32 => infer_typed::<f32>(ckpt, frames, out, body_path),
        Precision::F64 => infer_typed::<f64>(ckpt, frames, out, body_path),
    }
}

pub fn load_synth_config(path: &Path) -> Result<SynthConfig> {
    let mut cfg: SynthConfig = read_toml(path)?;
    if let Some(seed) = seed_override()? {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Point-count statistics of generated recordings.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSummary {
    pub frames: usize,
    pub min_points: usize,
    pub max_points: usize,
    pub mean_points: f64,
    /// Distance bucket -> (frames, mean points).
    pub buckets: BTreeMap<String, (usize, f64)>,
}

pub fn summarize(recs: &[Recording]) -> SynthSummary {
    let mut counts = Vec::new();
    let mut buckets: BTreeMap<String, (usize, f64)> = BTreeMap::new();
    for r in recs {
        for f in &r.frames {
            let n = f.len();
            counts.push(n);
            let c = f.iter().fold([0.0f64; 3], |a, p| [a[0] + p[0] as f64, a[1] + p[1] as f64, a[2] + p[2] as f64]);
            let d = (c.iter().map(|v| (v / n.max(1) as f64).powi(2)).sum::<f64>()).sqrt();
            let e = buckets.entry(bucket_label(&DEFAULT_BUCKET_EDGES, d)).or_default();
            e.0 += 1;
            e.1 += n as f64;
        }
    }
    for v in buckets.values_mut() {
        v.1 /= v.0 as f64;
    }
    SynthSummary {
        frames: counts.len(),
        min_points: counts.iter().copied().min().unwrap_or(0),
        max_points: counts.iter().copied().max().unwrap_or(0),
        mean_points: counts.iter().sum::<usize>() as f64 / counts.len().max(1) as f64,
        buckets,
    }
}

pub fn synth(config: &Path, out: &Path) -> Result<SynthSummary> {
    let cfg = load_synth_config(config)?;
    synth_with(&cfg, out)
}

pub fn synth_with(cfg: &SynthConfig, out: &Path) -> Result<SynthSummary> {
    let recs = synth_generate(cfg, &synthetic_body_model())?;
    ensure_dir(out)?;
    write_dataset(out, &recs)?;
    Ok(summarize(&recs))
}

pub fn make_model(out: &Path) -> Result<()> {
    Ok(synthetic_body_model().save(out)?)
}

fn npz_float(npz: &mut NpzReader<File>, name: &str) -> Result<ArrayD<f64>> {
    let bad = |e: String| CliError::Config(format!("npz array `{name}`: {e}"));
    let key = format!("{name}.npy");
    if let Ok(a) = npz.by_name::<ndarray::OwnedRepr<f64>, IxDyn>(&key) {
        return Ok(a);
    }
    npz.by_name::<ndarray::OwnedRepr<f32>, IxDyn>(&key).map(|a| a.mapv(|v| v as f64)).map_err(|e| bad(e.to_string()))
}

fn npz_int(npz: &mut NpzReader<File>, name: &str) -> Result<ArrayD<i64>> {
    let key = format!("{name}.npy");
    if let Ok(a) = npz.by_name::<ndarray::OwnedRepr<i64>, IxDyn>(&key) {
        return Ok(a);
    }
    if let Ok(a) = npz.by_name::<ndarray::OwnedRepr<u32>, IxDyn>(&key) {
        return Ok(a.mapv(|v| if v == u32::MAX { -1 } else { v as i64 }));
    }
    if let Ok(a) = npz.by_name::<ndarray::OwnedRepr<i32>, IxDyn>(&key) {
        return Ok(a.mapv(|v| v as i64));
    }
    npz.by_name::<ndarray::OwnedRepr<u64>, IxDyn>(&key)
        .map(|a| a.mapv(|v| if v > i64::MAX as u64 { -1 } else { v as i64 }))
        .map_err(|e| CliError::Config(format!("npz array `{name}`: {e}")))
}

/// Converts an SMPL `.npz` (keys `v_template`, `shapedirs`, `posedirs`,
/// `J_regressor`, `weights`, `kintree_table`, optional `f`) into a body-model
/// container. Extra shape components beyond the first ten are dropped.
pub fn convert_model(npz_path: &Path, out: &Path) -> Result<BodyModel<f64>> {
    let file = File::open(npz_path).map_err(|e| CliError::io(npz_path, e))?;
    let mut npz = NpzReader::new(file).map_err(|e| CliError::io(npz_path, e))?;
    let flat = |a: ArrayD<f64>| a.as_standard_layout().iter().copied().collect::<Vec<f64>>();
    let v = npz_float(&mut npz, "v_template")?;
    let n = v.shape()[0];
    let shapedirs = npz_float(&mut npz, "shapedirs")?;
    if shapedirs.ndim() != 3 || shapedirs.shape()[2] < NUM_BETAS {
        return Err(CliError::Config(format!("shapedirs has shape {:?}", shapedirs.shape())));
    }
    let shape_dirs = shapedirs.slice_each_axis(|ax| if ax.axis.index() == 2 { (0..NUM_BETAS).into() } else { (..).into() }).to_owned();
    let kintree = npz_int(&mut npz, "kintree_table")?;
    if kintree.shape() != [2, NUM_JOINTS] {
        return Err(CliError::Config(format!("kintree_table has shape {:?}", kintree.shape())));
    }
    let parents: Vec<i64> = (0..NUM_JOINTS).map(|j| if j == 0 { -1 } else { kintree[[0, j]] }).collect();
    let faces = match npz_int(&mut npz, "f") {
        Ok(f) => Some(f.as_standard_layout().iter().copied().collect::<Vec<i64>>().chunks(3).map(|c| [c[0] as u32, c[1] as u32, c[2] as u32]).collect()),
        Err(_) => None,
    };
    let arrays = BodyModelArrays {
        template_vertices: flat(v),
        shape_dirs: flat(shape_dirs.into_dyn()),
        pose_dirs: flat(npz_float(&mut npz, "posedirs")?),
        joint_regressor: flat(npz_float(&mut npz, "J_regressor")?),
        skin_weights: flat(npz_float(&mut npz, "weights")?),
        parents,
        faces,
    };
    let model = BodyModel::from_arrays(arrays)?;
    debug_assert_eq!(model.num_vertices(), n);
    model.save(out)?;
    Ok(model)
}
