//! Training, inference and evaluation over datasets in the recording layout.

use std::path::{Path, PathBuf};
use std::time::Instant;

use lidarcap::lidarcap_net::checkpoint::{self, CheckpointInfo};
use lidarcap::lidarcap_net::{train_step, FrameGroups, LossValues, Net, NetConfig, NetInput, Targets};
use lidarcap::mocap_metrics::{evaluate, EvalConfig, EvalSequence, MetricsReport};
use lidarcap::nn::Adam;
use lidarcap::rot3d::{matrix_from_row_major, matrix_to_axis_angle, project_to_rotation};
use lidarcap::scalar::Scalar;
use lidarcap::seqdata::format::Motion;
use lidarcap::seqdata::{
    mix_seed, prepare_frames, prepare_recording, read_recordings, window_sequences, LoadOptions, MotionSample,
    PointSequence, Sampling,
};
use lidarcap::smpl_body::synthetic::synthetic_body_model;
use lidarcap::smpl_body::{load_body_model, BodyModel, PoseParams, ShapeParams, NUM_JOINTS, POSE_DIM};
use nalgebra::{Matrix3, Vector3};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{Precision, TrainConfig};
use crate::error::{CliError, Result};

const INFERENCE_KEY: &str = "inference";
const PRECISION_KEY: &str = "precision";

pub fn body_model<T: Scalar>(path: Option<&Path>) -> Result<BodyModel<T>> {
    match path {
        Some(p) => Ok(load_body_model(p)?),
        None => Ok(synthetic_body_model().cast()),
    }
}

/// Preprocessing and windowing a checkpoint was trained with; inference and
/// evaluation replay it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceSettings {
    pub window: usize,
    pub stride: usize,
    pub batch_size: usize,
    pub sampling: Sampling,
    pub frame_rate: f64,
    pub seed: u64,
}

impl InferenceSettings {
    pub fn from_train(cfg: &TrainConfig) -> Self {
        Self {
            window: cfg.window,
            stride: cfg.stride,
            batch_size: cfg.batch_size,
            sampling: cfg.sampling,
            frame_rate: cfg.frame_rate,
            seed: cfg.seed,
        }
    }

    pub fn load_options(&self) -> LoadOptions {
        LoadOptions { seed: self.seed, sampling: self.sampling, frame_rate: self.frame_rate }
    }
}

/// Network plus inference settings, as stored in a checkpoint file.
#[derive(Debug, Clone)]
pub struct Model<T: Scalar> {
    pub net: Net<T>,
    pub settings: InferenceSettings,
    pub info: CheckpointInfo,
}

impl<T: Scalar> Model<T> {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut c = checkpoint::to_container(&self.net, self.info);
        c.metadata.insert(INFERENCE_KEY.into(), serde_json::to_string(&self.settings).expect("settings serialize"));
        c.metadata.insert(PRECISION_KEY.into(), T::DTYPE.into());
        let tmp = path.with_extension("tmp");
        c.save(&tmp)?;
        std::fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c = lidarcap::container::ArrayContainer::load(path)?;
        let (net, info) = checkpoint::from_container::<T>(&c)?;
        let settings = c
            .metadata
            .get(INFERENCE_KEY)
            .ok_or_else(|| CliError::Net(lidarcap::lidarcap_net::NetError::Checkpoint("missing inference settings".into())))?;
        let settings = serde_json::from_str(settings)
            .map_err(|e| CliError::Net(lidarcap::lidarcap_net::NetError::Checkpoint(format!("inference settings: {e}"))))?;
        Ok(Self { net, settings, info })
    }
}

/// Stored precision of a checkpoint file.
pub fn checkpoint_precision(path: &Path) -> Result<Precision> {
    let c = lidarcap::container::ArrayContainer::load(path)?;
    Ok(match c.metadata.get(PRECISION_KEY).map(String::as_str) {
        Some("f64") => Precision::F64,
        _ => Precision::F32,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub iterations: u64,
    pub loss_joints: f64,
    pub loss_pose: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss_smpl: Option<f64>,
    pub loss_total: f64,
    pub wall_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub config: TrainConfig,
    pub status: String,
    pub train_recordings: Vec<String>,
    pub val_recordings: Vec<String>,
    pub train_windows: usize,
    pub val_windows: usize,
    pub num_params: usize,
    pub epochs: Vec<EpochRecord>,
    pub checkpoints: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation: Option<serde_json::Value>,
    pub wall_clock_s: f64,
}

impl RunManifest {
    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, text).map_err(|e| CliError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

/// Training windows of a dataset split, with their precomputed groupings.
pub struct WindowSet<T: Scalar> {
    pub windows: Vec<MotionSample<T>>,
    pub groups: Vec<Vec<FrameGroups<T>>>,
}

impl<T: Scalar> WindowSet<T> {
    pub fn new(net: &NetConfig, samples: &[MotionSample<T>], window: usize, stride: usize, limit: Option<usize>) -> Result<Self> {
        let mut windows = window_sequences(samples, window, stride);
        if let Some(n) = limit {
            windows.truncate(n);
        }
        let groups = windows
            .iter()
            .map(|w| NetInput::from_frames(net, &w.sequence.frames, 1).map(|i| i.groups))
            .collect::<std::result::Result<_, _>>()?;
        Ok(Self { windows, groups })
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn batch(&self, idx: &[usize]) -> (NetInput<T>, Targets<T>) {
        let frames = self.windows[idx[0]].len();
        let groups = idx.iter().flat_map(|&i| self.groups[i].iter().cloned()).collect();
        let points = self.windows[idx[0]].sequence.frames[0].len();
        let samples: Vec<&MotionSample<T>> = idx.iter().map(|&i| &self.windows[i]).collect();
        (NetInput { batch: idx.len(), frames, points, groups }, Targets::from_samples(&samples))
    }

    /// Consecutive batches in index order.
    pub fn batches(&self, batch_size: usize) -> Vec<Vec<usize>> {
        (0..self.len()).collect::<Vec<_>>().chunks(batch_size).map(|c| c.to_vec()).collect()
    }
}

/// Loaded and split dataset.
pub struct Prepared<T: Scalar> {
    pub train: WindowSet<T>,
    pub val: WindowSet<T>,
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
    pub val_samples: Vec<MotionSample<T>>,
}

pub fn prepare_data<T: Scalar>(cfg: &TrainConfig, model: &BodyModel<T>) -> Result<Prepared<T>> {
    let recs = read_recordings(&cfg.data)?;
    if recs.is_empty() {
        return Err(CliError::Config(format!("no recordings under {}", cfg.data.display())));
    }
    let opts = InferenceSettings::from_train(cfg).load_options();
    let samples = recs.iter().map(|r| prepare_recording(r, model, &opts)).collect::<std::result::Result<Vec<_>, _>>()?;
    let ids: Vec<String> = samples.iter().map(|s| s.recording_id.clone()).collect();
    let (tr, va) = cfg.split.apply(&ids);
    let pick = |ix: &[usize]| ix.iter().map(|&i| samples[i].clone()).collect::<Vec<_>>();
    let (train_s, val_s) = (pick(&tr), pick(&va));
    let net = cfg.net_config();
    let train = WindowSet::new(&net, &train_s, cfg.window, cfg.stride, cfg.max_windows)?;
    if train.is_empty() {
        return Err(CliError::Config(format!("no training windows of {} frames", cfg.window)));
    }
    let val = WindowSet::new(&net, &val_s, cfg.window, cfg.stride, None)?;
    Ok(Prepared {
        train,
        val,
        train_ids: tr.iter().map(|&i| ids[i].clone()).collect(),
        val_ids: va.iter().map(|&i| ids[i].clone()).collect(),
        val_samples: val_s,
    })
}

fn mean_losses(v: &[LossValues]) -> (f64, f64, Option<f64>, f64) {
    let n = v.len() as f64;
    let s = |f: &dyn Fn(&LossValues) -> f64| v.iter().map(f).sum::<f64>() / n;
    let smpl = v.iter().map(|l| l.smpl).collect::<Option<Vec<f64>>>().map(|x| x.iter().sum::<f64>() / n);
    (s(&|l| l.joints), s(&|l| l.pose), smpl, s(&|l| l.total))
}

/// Outcome of a training run.
pub struct TrainOutcome<T: Scalar> {
    pub model: Model<T>,
    pub manifest: RunManifest,
}

/// Runs the full recipe. With `out`, writes the manifest after every epoch and
/// checkpoints into that directory.
pub fn train<T: Scalar>(cfg: &TrainConfig, out: Option<&Path>, log: &mut dyn FnMut(&EpochRecord)) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    let start = Instant::now();
    let body = body_model::<T>(cfg.body_model.as_deref())?;
    let data = prepare_data(cfg, &body)?;
    train_prepared(cfg, &body, &data, out, start, log)
}

pub fn train_prepared<T: Scalar>(
    cfg: &TrainConfig,
    body: &BodyModel<T>,
    data: &Prepared<T>,
    out: Option<&Path>,
    start: Instant,
    log: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome<T>> {
    let mut net = Net::from_body_model(cfg.net_config(), body, cfg.seed)?;
    let mut opt = Adam::new(cfg.learning_rate, cfg.weight_decay);
    opt.beta1 = cfg.adam_beta1;
    opt.beta2 = cfg.adam_beta2;
    opt.eps = cfg.adam_eps;
    let settings = InferenceSettings::from_train(cfg);
    let mut manifest = RunManifest {
        version: format!("capctl {}", env!("CARGO_PKG_VERSION")),
        config: cfg.clone(),
        status: "running".into(),
        train_recordings: data.train_ids.clone(),
        val_recordings: data.val_ids.clone(),
        train_windows: data.train.len(),
        val_windows: data.val.len(),
        num_params: net.store.num_params(),
        epochs: Vec::new(),
        checkpoints: Vec::new(),
        validation: None,
        wall_clock_s: 0.0,
    };
    let manifest_path = out.map(|d| d.join("manifest.json"));
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 0x5348_5546));
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut iteration = 0u64;
    let snapshot = |net: &Net<T>, it: u64| -> Result<Model<T>> {
        let mut n = net.clone();
        let inputs: Vec<NetInput<T>> = data.train.batches(cfg.batch_size).iter().map(|b| data.train.batch(b).0).collect();
        n.recalibrate_bn(&inputs.iter().collect::<Vec<_>>())?;
        Ok(Model { net: n, settings: settings.clone(), info: CheckpointInfo { seed: cfg.seed, iteration: it } })
    };
    // pre-update weights of the last step with a finite loss
    let mut last_good = (net.clone(), 0u64);
    let mut epoch = 0;

    let mut run = |manifest: &mut RunManifest, last_good: &mut (Net<T>, u64), epoch: &mut usize| -> Result<Model<T>> {
        while *epoch < cfg.epochs {
            *epoch += 1;
            if cfg.shuffle {
                order.shuffle(&mut shuffle_rng);
            }
            let mut losses = Vec::new();
            for idx in order.chunks(cfg.batch_size) {
                let (input, targets) = data.train.batch(idx);
                let before = net.clone();
                losses.push(train_step(&mut net, &mut opt, &input, &targets, mix_seed(cfg.seed ^ 0xD80F, iteration))?);
                *last_good = (before, iteration);
                iteration += 1;
            }
            let (lj, lp, ls, lt) = mean_losses(&losses);
            let rec = EpochRecord {
                epoch: *epoch,
                iterations: iteration,
                loss_joints: lj,
                loss_pose: lp,
                loss_smpl: ls,
                loss_total: lt,
                wall_s: start.elapsed().as_secs_f64(),
            };
            log(&rec);
            manifest.epochs.push(rec);
            if let Some(dir) = out {
                if cfg.checkpoint_every > 0 && *epoch % cfg.checkpoint_every == 0 && *epoch < cfg.epochs {
                    let path = dir.join(format!("epoch_{:04}.safetensors", *epoch));
                    snapshot(&net, iteration)?.save(&path)?;
                    manifest.checkpoints.push(path.display().to_string());
                }
                manifest.wall_clock_s = start.elapsed().as_secs_f64();
                manifest.write(manifest_path.as_ref().unwrap())?;
            }
        }
        snapshot(&net, iteration)
    };

    let model = match run(&mut manifest, &mut last_good, &mut epoch) {
        Ok(m) => m,
        Err(e) => {
            if let (Some(dir), Some(mp)) = (out, &manifest_path) {
                let path = dir.join("last_good.safetensors");
                let (good, it) = last_good;
                Model { net: good, settings: settings.clone(), info: CheckpointInfo { seed: cfg.seed, iteration: it } }.save(&path)?;
                manifest.checkpoints.push(path.display().to_string());
                manifest.status = format!("failed at epoch {epoch}: {e}");
                manifest.wall_clock_s = start.elapsed().as_secs_f64();
                manifest.write(mp)?;
            }
            return Err(e);
        }
    };
    if !data.val_samples.is_empty() {
        let report = evaluate_samples(&model, &data.val_samples, Some(body), &EvalConfig::default())?;
        manifest.validation = Some(report.to_json());
    }
    manifest.status = "completed".into();
    manifest.wall_clock_s = start.elapsed().as_secs_f64();
    if let Some(dir) = out {
        let path = dir.join("final.safetensors");
        model.save(&path)?;
        manifest.checkpoints.push(path.display().to_string());
        manifest.write(manifest_path.as_ref().unwrap())?;
    }
    Ok(TrainOutcome { model, manifest })
}

/// Per-frame output of sequence inference.
#[derive(Debug, Clone, PartialEq)]
pub struct SequencePrediction<T> {
    pub theta: Vec<[T; POSE_DIM]>,
    pub translation: Vec<Vector3<T>>,
    /// Body-model joints posed by `theta` at `translation`.
    pub joints: Vec<Vec<Vector3<T>>>,
}

impl<T: Scalar> SequencePrediction<T> {
    pub fn to_motion(&self) -> Motion {
        Motion {
            theta: self.theta.iter().map(|t| t.map(|v| v.as_f64() as f32)).collect(),
            translation: self.translation.iter().map(|t| [t.x.as_f64() as f32, t.y.as_f64() as f32, t.z.as_f64() as f32]).collect(),
        }
    }
}

/// Window start frames covering `n` frames (the last window ends at `n`).
pub fn window_starts(n: usize, window: usize, stride: usize) -> Vec<usize> {
    if n <= window {
        return vec![0];
    }
    let mut starts: Vec<usize> = (0..=n - window).step_by(stride).collect();
    if *starts.last().unwrap() != n - window {
        starts.push(n - window);
    }
    starts
}

/// Full-sequence inference. Sequences shorter than the window are left-padded
/// with their first frame; overlapping windows are merged by averaging
/// rotation matrices and projecting back onto rotations.
pub fn infer_sequence<T: Scalar>(model: &Model<T>, seq: &PointSequence<T>, body: &BodyModel<T>) -> Result<SequencePrediction<T>> {
    let n = seq.frames.len();
    if n == 0 {
        return Err(CliError::Data(lidarcap::seqdata::SeqDataError::EmptyFrame(Some("sequence has no frames".into()))));
    }
    let s = &model.settings;
    let w = s.window;
    let pad = w.saturating_sub(n);
    let frames: Vec<&Vec<Vector3<T>>> = std::iter::repeat_n(&seq.frames[0], pad).chain(seq.frames.iter()).collect();
    let total = frames.len();
    let starts = window_starts(total, w, s.stride);
    let mut rot_sum = vec![[Matrix3::<T>::zeros(); NUM_JOINTS]; total];
    let mut root_sum = vec![Vector3::<T>::zeros(); total];
    let mut count = vec![0usize; total];
    for chunk in starts.chunks(s.batch_size.max(1)) {
        let batch_frames: Vec<Vec<Vector3<T>>> = chunk.iter().flat_map(|&st| frames[st..st + w].iter().map(|f| (*f).clone())).collect();
        let input = NetInput::from_frames(&model.net.config, &batch_frames, chunk.len())?;
        let p = model.net.predict(&input)?;
        for (b, &st) in chunk.iter().enumerate() {
            for t in 0..w {
                let f = st + t;
                let k = b * w + t;
                for j in 0..NUM_JOINTS {
                    let o = (k * NUM_JOINTS + j) * 9;
                    rot_sum[f][j] += matrix_from_row_major(&p.rotmats.data[o..o + 9]);
                }
                let o = k * NUM_JOINTS * 3;
                root_sum[f] += Vector3::new(p.joints_stage1.data[o], p.joints_stage1.data[o + 1], p.joints_stage1.data[o + 2]);
                count[f] += 1;
            }
        }
    }
    let rest_root = model.net.rest_joints()[0];
    let zero = ShapeParams::zero();
    let mut out = SequencePrediction { theta: Vec::new(), translation: Vec::new(), joints: Vec::new() };
    for f in pad..total {
        let c = T::from_count(count[f]);
        let mut theta = [T::zero(); POSE_DIM];
        for j in 0..NUM_JOINTS {
            let r = project_to_rotation(&(rot_sum[f][j] / c)).map_err(|e| CliError::Config(format!("rotation averaging failed: {e}")))?;
            let aa = matrix_to_axis_angle(&r).map_err(|e| CliError::Config(format!("rotation averaging failed: {e}")))?;
            theta[j * 3..j * 3 + 3].copy_from_slice(aa.0.as_slice());
        }
        let tr = seq.centroids[f - pad] + root_sum[f] / c - rest_root;
        let pose = PoseParams { theta, translation: Some([tr.x, tr.y, tr.z]) };
        out.joints.push(body.joints_from_params(&pose, &zero));
        out.theta.push(theta);
        out.translation.push(tr);
    }
    Ok(out)
}

/// Loads PTC1 frames from `dir` (or `dir/frames`) and prepares them like training data.
pub fn read_frames<T: Scalar>(dir: &Path, settings: &InferenceSettings) -> Result<PointSequence<T>> {
    let frames_dir: PathBuf = if dir.join("frames").is_dir() { dir.join("frames") } else { dir.to_path_buf() };
    let files = lidarcap::seqdata::format::list_frame_files(&frames_dir)?;
    if files.is_empty() {
        return Err(CliError::Data(lidarcap::seqdata::SeqDataError::EmptyFrame(Some(format!("no frames in {}", frames_dir.display())))));
    }
    let raw = files.iter().map(|f| lidarcap::seqdata::format::read_ptc(f)).collect::<std::result::Result<Vec<_>, _>>()?;
    let id = dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    Ok(prepare_frames(&id, &raw, &settings.load_options())?)
}

pub fn evaluate_samples<T: Scalar>(
    model: &Model<T>,
    samples: &[MotionSample<T>],
    body: Option<&BodyModel<T>>,
    cfg: &EvalConfig,
) -> Result<MetricsReport> {
    let fallback;
    let b = match body {
        Some(b) => b,
        None => {
            fallback = synthetic_body_model().cast::<T>();
            &fallback
        }
    };
    let mut preds = Vec::new();
    let mut gts = Vec::new();
    for s in samples {
        let p = infer_sequence(model, &s.sequence, b)?;
        let d: Vec<f64> = s.sequence.distances.iter().map(|v| v.as_f64()).collect();
        preds.push(EvalSequence { joints: p.joints, theta: Some(p.theta.iter().map(|t| t.to_vec()).collect()), distances: None });
        gts.push(EvalSequence {
            joints: s.gt_joints.clone(),
            theta: Some(s.gt_theta.iter().map(|t| t.to_vec()).collect()),
            distances: Some(d),
        });
    }
    Ok(evaluate(&preds, &gts, body, cfg)?)
}

/// Evaluates every recording under `root` with the checkpoint's preprocessing.
pub fn evaluate_dataset<T: Scalar>(model: &Model<T>, root: &Path, body: &BodyModel<T>, cfg: &EvalConfig) -> Result<MetricsReport> {
    let opts = model.settings.load_options();
    let recs = read_recordings(root)?;
    if recs.is_empty() {
        return Err(CliError::Config(format!("no recordings under {}", root.display())));
    }
    let samples = recs.iter().map(|r| prepare_recording(r, body, &opts)).collect::<std::result::Result<Vec<_>, _>>()?;
    evaluate_samples(model, &samples, Some(body), cfg)
}

/// Root-aligned MPJPE (mm) of the body-model joints over training windows,
/// each window predicted on its own.
pub fn window_mpjpe<T: Scalar>(model: &Model<T>, set: &WindowSet<T>) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for idx in set.batches(model.settings.batch_size.max(1)) {
        let (input, targets) = set.batch(&idx);
        let p = model.net.predict(&input)?;
        for (pf, gf) in p.joints_smpl.data.chunks(NUM_JOINTS * 3).zip(targets.joints_model.chunks(NUM_JOINTS * 3)) {
            for j in 0..NUM_JOINTS {
                let d: f64 = (0..3).map(|k| ((pf[j * 3 + k] - pf[k]) - (gf[j * 3 + k] - gf[k])).as_f64().powi(2)).sum();
                sum += d.sqrt();
                n += 1;
            }
        }
    }
    Ok(sum / n as f64 * 1000.0)
}
