//! Three-stage pose network over point-cloud sequences.
//!
//! 1. Temporal encoder: per-frame PointNet++ (single-scale grouping) global
//!    descriptor, bidirectional GRU fusion, MLP joint decoder (joints in the
//!    centered frame).
//! 2. Inverse-kinematics solver: joints concatenated with the fused frame
//!    feature, spatio-temporal graph convolution over the kinematic tree,
//!    per-joint 6D rotation regression (residual on the identity).
//! 3. Rotations drive forward kinematics of the body model (zero shape).
//!
//! # Tensor names
//!
//! Weights are `[in, out]`, stored by name (`{l}` = level/layer index):
//!
//! ```text
//! encoder.sa{l}.conv{i}.weight/.bias     encoder.sa{l}.bn{i}.gamma/.beta/.running_mean/.running_var
//! encoder.global.conv{i}.weight/.bias    encoder.global.bn{i}.*   (no bn on the last conv)
//! temporal.gru.{fwd,bwd}.w_ih [D,3H] / w_hh [H,3H] / b_ih / b_hh   (gate order r, z, n)
//! temporal.proj.weight/.bias
//! decoder.fc{i}.weight/.bias  decoder.bn{i}.*  decoder.out.weight/.bias
//! ik.input.weight/.bias  ik.joint_bias [24,C]  ik.input_bn.*
//! ik.gcn{l}.spatial.weight/.bias  ik.gcn{l}.spatial_bn.*
//! ik.gcn{l}.temporal.weight [3C,C]/.bias  ik.gcn{l}.temporal_bn.*
//! ik.out.weight [24C,144]/.bias                       (enable_ik_stage = true, reads all joints)
//! rot_head.fc0.weight/.bias  rot_head.bn0.*  rot_head.out.weight/.bias   (enable_ik_stage = false)
//! body.rest_joints [24,3]                             (buffer, zero-shape rest joints)
//! ```

pub mod checkpoint;
pub mod grouping;

use std::collections::BTreeMap;
use std::rc::Rc;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autograd::{Graph, Tensor, Var};
use crate::nn::{Adam, Ctx, Mode, ParamStore};
use crate::rot3d::Rot6D;
use crate::scalar::Scalar;
use crate::seqdata::{MotionSample, NUM_POINTS};
use crate::smpl_body::{BodyModel, ShapeParams, NUM_JOINTS, POSE_DIM, SMPL_PARENTS};
pub use grouping::FrameGroups;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error("invalid network config: {0}")]
    InvalidConfig(String),
    #[error("non-finite activations in {0}")]
    NonFinite(&'static str),
    #[error("input mismatch: {0}")]
    Input(String),
    #[error("loss toggles require {0} but it was not computed")]
    Toggle(&'static str),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// One sampled set-abstraction level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SaLevel {
    pub npoint: usize,
    pub radius: f64,
    pub nsample: usize,
    pub mlp: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub sa_levels: Vec<SaLevel>,
    /// Group-all level; the last width is the frame descriptor size.
    pub global_mlp: Vec<usize>,
    /// Hidden width per GRU direction.
    pub gru_hidden: usize,
    /// Width of the projected bidirectional state `g`.
    pub fused_dim: usize,
    pub decoder_hidden: Vec<usize>,
    pub gcn_channels: usize,
    pub gcn_layers: usize,
    /// Hidden width of the rotation head used when the IK stage is off.
    pub rot_head_hidden: usize,
    pub dropout: f64,
    pub enable_ik_stage: bool,
    pub enable_smpl_loss: bool,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            sa_levels: vec![
                SaLevel { npoint: 128, radius: 0.2, nsample: 32, mlp: vec![64, 64, 128] },
                SaLevel { npoint: 32, radius: 0.4, nsample: 32, mlp: vec![128, 128, 256] },
            ],
            global_mlp: vec![256, 512, 1024],
            gru_hidden: 1024,
            fused_dim: 1024,
            decoder_hidden: vec![512, 256],
            gcn_channels: 64,
            gcn_layers: 4,
            rot_head_hidden: 512,
            dropout: 0.5,
            enable_ik_stage: true,
            enable_smpl_loss: true,
        }
    }
}

impl NetConfig {
    /// Narrow configuration that trains in minutes on one CPU core.
    pub fn small() -> Self {
        Self {
            sa_levels: vec![
                SaLevel { npoint: 32, radius: 0.25, nsample: 16, mlp: vec![16, 16, 32] },
                SaLevel { npoint: 8, radius: 0.5, nsample: 8, mlp: vec![32, 64] },
            ],
            global_mlp: vec![64, 128],
            gru_hidden: 64,
            fused_dim: 128,
            decoder_hidden: vec![128],
            gcn_channels: 32,
            gcn_layers: 2,
            rot_head_hidden: 128,
            dropout: 0.1,
            enable_ik_stage: true,
            enable_smpl_loss: true,
        }
    }

    pub fn descriptor_dim(&self) -> usize {
        *self.global_mlp.last().unwrap_or(&0)
    }

    pub fn validate(&self) -> Result<(), NetError> {
        let bad = |m: String| Err(NetError::InvalidConfig(m));
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        let mut available = NUM_POINTS;
        for (i, l) in self.sa_levels.iter().enumerate() {
            if l.npoint == 0 || l.nsample == 0 || l.mlp.is_empty() || l.mlp.contains(&0) || !(l.radius > 0.0) {
                return bad(format!("set-abstraction level {i} needs positive npoint, nsample, radius and widths"));
            }
            if l.npoint > available {
                return bad(format!("level {i} samples {} centers from {available} points", l.npoint));
            }
            available = l.npoint;
        }
        if self.global_mlp.is_empty() || self.global_mlp.contains(&0) {
            return bad("global_mlp needs positive widths".into());
        }
        if self.gru_hidden == 0 || self.fused_dim == 0 || self.decoder_hidden.contains(&0) {
            return bad("gru_hidden, fused_dim and decoder widths must be positive".into());
        }
        if self.enable_ik_stage && (self.gcn_channels == 0 || self.gcn_layers == 0) {
            return bad("the IK stage needs gcn_channels and gcn_layers > 0".into());
        }
        if !self.enable_ik_stage && self.rot_head_hidden == 0 {
            return bad("rot_head_hidden must be positive".into());
        }
        Ok(())
    }
}

/// Symmetric-normalized `D^-1/2 (A + I) D^-1/2` of a kinematic tree, row-major.
pub fn normalized_adjacency(parents: &[Option<usize>]) -> Vec<f64> {
    let n = parents.len();
    let mut a = vec![0.0; n * n];
    for j in 0..n {
        a[j * n + j] = 1.0;
        if let Some(p) = parents[j] {
            a[j * n + p] = 1.0;
            a[p * n + j] = 1.0;
        }
    }
    let deg: Vec<f64> = (0..n).map(|i| a[i * n..(i + 1) * n].iter().sum()).collect();
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] /= (deg[i] * deg[j]).sqrt();
        }
    }
    a
}

/// Grouped frames of a batch (`batch` windows of `frames` frames, window-major).
#[derive(Debug, Clone)]
pub struct NetInput<T: Scalar> {
    pub batch: usize,
    pub frames: usize,
    /// Points per frame (512 for data from `seqdata`).
    pub points: usize,
    pub groups: Vec<FrameGroups<T>>,
}

impl<T: Scalar> NetInput<T> {
    /// Groups centered frames; every frame needs the same point count, at
    /// least the first level's center count.
    pub fn from_frames(config: &NetConfig, frames: &[Vec<Vector3<T>>], batch: usize) -> Result<Self, NetError> {
        if batch == 0 || frames.is_empty() || frames.len() % batch != 0 {
            return Err(NetError::Input(format!("{} frames do not split into {batch} windows", frames.len())));
        }
        let n = frames[0].len();
        let need = config.sa_levels.first().map_or(1, |l| l.npoint);
        for (i, f) in frames.iter().enumerate() {
            if f.len() != n || n < need {
                return Err(NetError::Input(format!("frame {i} has {} points, expected {n} (at least {need})", f.len())));
            }
            if f.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
                return Err(NetError::Input(format!("frame {i} has non-finite coordinates")));
            }
        }
        let groups = frames.iter().map(|f| grouping::build_groups(f, &config.sa_levels)).collect();
        Ok(Self { batch, frames: frames.len() / batch, points: n, groups })
    }

    /// Windows of equal length, frames taken from each sample's point sequence.
    pub fn from_samples(config: &NetConfig, samples: &[&MotionSample<T>]) -> Result<Self, NetError> {
        let t = samples.first().map(|s| s.len()).unwrap_or(0);
        if samples.iter().any(|s| s.len() != t) {
            return Err(NetError::Input("windows of a batch must have equal length".into()));
        }
        let frames: Vec<Vec<Vector3<T>>> = samples.iter().flat_map(|s| s.sequence.frames.iter().cloned()).collect();
        Self::from_frames(config, &frames, samples.len())
    }

    pub fn num_frames(&self) -> usize {
        self.groups.len()
    }
}

/// Training targets for a batch, flattened in the network's output order.
#[derive(Debug, Clone)]
pub struct Targets<T> {
    /// Ground-truth joints minus each frame's point centroid, `[B*T*24*3]`.
    pub joints_centered: Rc<Vec<T>>,
    /// Axis-angle pose, `[B*T*72]`.
    pub theta: Rc<Vec<T>>,
    /// Ground-truth joints minus the root translation (body-model frame).
    pub joints_model: Rc<Vec<T>>,
}

impl<T: Scalar> Targets<T> {
    pub fn from_samples(samples: &[&MotionSample<T>]) -> Self {
        let mut jc = Vec::new();
        let mut th = Vec::new();
        let mut jm = Vec::new();
        for s in samples {
            for t in 0..s.len() {
                let c = s.sequence.centroids[t];
                let tr = s.gt_translation[t];
                for j in &s.gt_joints[t] {
                    jc.extend_from_slice((j - c).as_slice());
                    jm.extend_from_slice((j - tr).as_slice());
                }
                th.extend_from_slice(&s.gt_theta[t]);
            }
        }
        Self { joints_centered: Rc::new(jc), theta: Rc::new(th), joints_model: Rc::new(jm) }
    }
}

/// Graph handles of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct StageVars {
    pub descriptors: Var,
    pub fused: Var,
    pub joints_stage1: Var,
    pub rot6d: Var,
    pub rotmats: Var,
    pub theta_hat: Var,
    pub joints_smpl: Var,
}

/// Forward outputs as plain tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct StagePredictions<T> {
    /// `[B, T, 24, 3]`, centered frame.
    pub joints_stage1: Tensor<T>,
    /// `[B, T, 24, 6]`.
    pub rot6d: Tensor<T>,
    /// `[B, T, 24, 3, 3]` row-major.
    pub rotmats: Tensor<T>,
    /// `[B, T, 72]`.
    pub theta_hat: Tensor<T>,
    /// `[B, T, 24, 3]`, body-model frame.
    pub joints_smpl: Tensor<T>,
}

#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub joints: Var,
    pub pose: Var,
    pub smpl: Option<Var>,
    pub total: Var,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValues {
    pub joints: f64,
    pub pose: f64,
    pub smpl: Option<f64>,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct Net<T: Scalar> {
    pub config: NetConfig,
    pub store: ParamStore<T>,
    adjacency: Rc<Vec<T>>,
    parents: Rc<Vec<Option<usize>>>,
}

fn add_mlp<T: Scalar>(store: &mut ParamStore<T>, rng: &mut ChaCha8Rng, prefix: &str, mut din: usize, widths: &[usize], bn_last: bool) -> usize {
    for (i, &w) in widths.iter().enumerate() {
        store.add_linear(rng, &format!("{prefix}.conv{i}"), din, w, 1.0);
        if bn_last || i + 1 < widths.len() {
            store.add_batch_norm(&format!("{prefix}.bn{i}"), w);
        }
        din = w;
    }
    din
}

impl<T: Scalar> Net<T> {
    /// Fresh weights from `seed`; `rest_joints` are the zero-shape rest joints.
    pub fn new(config: NetConfig, rest_joints: &[Vector3<T>], seed: u64) -> Result<Self, NetError> {
        config.validate()?;
        if rest_joints.len() != NUM_JOINTS {
            return Err(NetError::Input(format!("{} rest joints, expected {NUM_JOINTS}", rest_joints.len())));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let mut din = 3;
        for (l, level) in config.sa_levels.iter().enumerate() {
            din = add_mlp(&mut s, &mut rng, &format!("encoder.sa{l}"), din + if l == 0 { 0 } else { 3 }, &level.mlp, true);
        }
        let d = add_mlp(&mut s, &mut rng, "encoder.global", din + if config.sa_levels.is_empty() { 0 } else { 3 }, &config.global_mlp, false);

        let h = config.gru_hidden;
        for dir in ["fwd", "bwd"] {
            let b = 1.0 / (h as f64).sqrt();
            s.params.insert(format!("temporal.gru.{dir}.w_ih"), crate::nn::uniform(&mut rng, &[d, 3 * h], b));
            s.params.insert(format!("temporal.gru.{dir}.w_hh"), crate::nn::uniform(&mut rng, &[h, 3 * h], b));
            s.params.insert(format!("temporal.gru.{dir}.b_ih"), crate::nn::uniform(&mut rng, &[3 * h], b));
            s.params.insert(format!("temporal.gru.{dir}.b_hh"), crate::nn::uniform(&mut rng, &[3 * h], b));
        }
        s.add_linear(&mut rng, "temporal.proj", 2 * h, config.fused_dim, 1.0);

        let mut din = config.fused_dim;
        for (i, &w) in config.decoder_hidden.iter().enumerate() {
            s.add_linear(&mut rng, &format!("decoder.fc{i}"), din, w, 1.0);
            s.add_batch_norm(&format!("decoder.bn{i}"), w);
            din = w;
        }
        s.add_linear(&mut rng, "decoder.out", din, NUM_JOINTS * 3, 1.0);

        if config.enable_ik_stage {
            let c = config.gcn_channels;
            s.add_linear(&mut rng, "ik.input", 3 + config.fused_dim, c, 1.0);
            s.params.insert("ik.joint_bias".into(), Tensor::zeros(&[NUM_JOINTS, c]));
            s.add_batch_norm("ik.input_bn", c);
            for l in 0..config.gcn_layers {
                s.add_linear(&mut rng, &format!("ik.gcn{l}.spatial"), c, c, 1.0);
                s.add_batch_norm(&format!("ik.gcn{l}.spatial_bn"), c);
                s.add_linear(&mut rng, &format!("ik.gcn{l}.temporal"), 3 * c, c, 1.0);
                s.add_batch_norm(&format!("ik.gcn{l}.temporal_bn"), c);
            }
            s.add_linear(&mut rng, "ik.out", NUM_JOINTS * c, NUM_JOINTS * 6, 0.01);
        } else {
            s.add_linear(&mut rng, "rot_head.fc0", config.fused_dim, config.rot_head_hidden, 1.0);
            s.add_batch_norm("rot_head.bn0", config.rot_head_hidden);
            s.add_linear(&mut rng, "rot_head.out", config.rot_head_hidden, NUM_JOINTS * 6, 0.01);
        }
        let rest: Vec<T> = rest_joints.iter().flat_map(|p| [p.x, p.y, p.z]).collect();
        s.buffers.insert("body.rest_joints".into(), Tensor::new(vec![NUM_JOINTS, 3], rest));
        Ok(Self::from_parts(config, s))
    }

    pub fn from_body_model(config: NetConfig, model: &BodyModel<T>, seed: u64) -> Result<Self, NetError> {
        Self::new(config, &model.rest_joints(&ShapeParams::zero()), seed)
    }

    fn from_parts(config: NetConfig, store: ParamStore<T>) -> Self {
        let adjacency = Rc::new(normalized_adjacency(&SMPL_PARENTS).into_iter().map(T::lit).collect());
        Self { config, store, adjacency, parents: Rc::new(SMPL_PARENTS.to_vec()) }
    }

    pub fn rest_joints(&self) -> Vec<Vector3<T>> {
        self.store.buffer("body.rest_joints").data.chunks_exact(3).map(|c| Vector3::new(c[0], c[1], c[2])).collect()
    }

    /// Sorted names of all stored tensors (parameters and buffers).
    pub fn tensor_names(&self) -> Vec<String> {
        let mut v: Vec<String> = self.store.params.keys().chain(self.store.buffers.keys()).cloned().collect();
        v.sort();
        v
    }

    /// Replaces the running normalization statistics with the mean batch
    /// statistics of dropout-free training-mode passes over `inputs`.
    pub fn recalibrate_bn(&mut self, inputs: &[&NetInput<T>]) -> Result<(), NetError> {
        let mut acc: BTreeMap<String, (Vec<T>, Vec<T>)> = BTreeMap::new();
        for input in inputs {
            let g = Graph::new();
            let ctx = Ctx::new(&g, &self.store, Mode::Train, 0.0, 0, false);
            self.forward(&ctx, input)?;
            for (prefix, mean, var) in ctx.batch_stats() {
                let e = acc.entry(prefix).or_insert_with(|| (vec![T::zero(); mean.len()], vec![T::zero(); var.len()]));
                e.0.iter_mut().zip(&mean).for_each(|(a, b)| *a += *b);
                e.1.iter_mut().zip(&var).for_each(|(a, b)| *a += *b);
            }
        }
        let n = T::from_count(inputs.len().max(1));
        for (prefix, (mean, var)) in acc {
            self.store.buffers.get_mut(&format!("{prefix}.running_mean")).expect("running mean").data = mean.into_iter().map(|v| v / n).collect();
            self.store.buffers.get_mut(&format!("{prefix}.running_var")).expect("running var").data = var.into_iter().map(|v| v / n).collect();
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> Net<U> {
        Net::from_parts(self.config.clone(), self.store.cast())
    }

    fn check(&self, g: &Graph<T>, v: Var, stage: &'static str) -> Result<(), NetError> {
        if g.value(v).is_finite() {
            Ok(())
        } else {
            Err(NetError::NonFinite(stage))
        }
    }

    fn mlp(&self, ctx: &Ctx<T>, mut x: Var, prefix: &str, layers: usize, bn_last: bool) -> Var {
        for i in 0..layers {
            x = ctx.linear(x, &format!("{prefix}.conv{i}"));
            if bn_last || i + 1 < layers {
                x = ctx.graph.relu(ctx.batch_norm(x, &format!("{prefix}.bn{i}")));
            }
        }
        x
    }

    /// Per-frame global descriptors `[F, D]`.
    pub fn encode_frames(&self, ctx: &Ctx<T>, input: &NetInput<T>) -> Result<Var, NetError> {
        let g = ctx.graph;
        let f = input.num_frames();
        let mut feats: Option<Var> = None;
        let mut prev_np = input.points;
        for (l, level) in self.config.sa_levels.iter().enumerate() {
            let (np, k) = (level.npoint, level.nsample);
            let local: Vec<T> = input.groups.iter().flat_map(|fg| fg.levels[l].local.iter().copied()).collect();
            let mut x = g.constant(Tensor::new(vec![f * np * k, 3], local));
            if let Some(prev) = feats {
                let idx: Vec<usize> =
                    input.groups.iter().enumerate().flat_map(|(fi, fg)| fg.levels[l].neighbors.iter().map(move |n| fi * prev_np + n)).collect();
                let gathered = g.gather_rows(prev, Rc::new(idx), &[f * np * k]);
                x = g.concat_last(&[x, gathered]);
            }
            x = self.mlp(ctx, x, &format!("encoder.sa{l}"), level.mlp.len(), true);
            feats = Some(g.max_pool_rows(x, k, &[f * np]));
            prev_np = np;
        }
        let xyz: Vec<T> = input.groups.iter().flat_map(|fg| fg.final_xyz.iter().flat_map(|p| [p.x, p.y, p.z])).collect();
        let npts = xyz.len() / (3 * f);
        let mut x = g.constant(Tensor::new(vec![f * npts, 3], xyz));
        if let Some(prev) = feats {
            x = g.concat_last(&[x, prev]);
        }
        x = self.mlp(ctx, x, "encoder.global", self.config.global_mlp.len(), false);
        let out = g.max_pool_rows(x, npts, &[f]);
        self.check(g, out, "point encoder")?;
        Ok(out)
    }

    fn gru_direction(&self, ctx: &Ctx<T>, x: Var, b: usize, t: usize, dir: &str) -> Var {
        let g = ctx.graph;
        let h = self.config.gru_hidden;
        let p = |n: &str| ctx.p(&format!("temporal.gru.{dir}.{n}"));
        let gx = g.linear(x, p("w_ih"), Some(p("b_ih")));
        let gx = g.reshape(gx, &[b * t, 3 * h]);
        let (w_hh, b_hh) = (p("w_hh"), p("b_hh"));
        let mut state = g.constant(Tensor::zeros(&[b, h]));
        let mut outs = vec![state; t];
        let order: Vec<usize> = if dir == "fwd" { (0..t).collect() } else { (0..t).rev().collect() };
        for step in order {
            let xt = g.gather_rows(gx, Rc::new((0..b).map(|bi| bi * t + step).collect()), &[b]);
            let gh = g.linear(state, w_hh, Some(b_hh));
            let r = g.sigmoid(g.add(g.narrow_last(xt, 0, h), g.narrow_last(gh, 0, h)));
            let z = g.sigmoid(g.add(g.narrow_last(xt, h, h), g.narrow_last(gh, h, h)));
            let n = g.tanh(g.add(g.narrow_last(xt, 2 * h, h), g.mul(r, g.narrow_last(gh, 2 * h, h))));
            state = g.add(n, g.mul(z, g.sub(state, n)));
            outs[step] = state;
        }
        g.stack_time(&outs)
    }

    /// Bidirectional fusion: `[B, T, D] -> [B, T, fused_dim]`.
    pub fn fuse_temporal(&self, ctx: &Ctx<T>, descriptors: Var, b: usize, t: usize) -> Result<Var, NetError> {
        let g = ctx.graph;
        let x = g.reshape(descriptors, &[b, t, self.config.descriptor_dim()]);
        let fwd = self.gru_direction(ctx, x, b, t, "fwd");
        let bwd = self.gru_direction(ctx, x, b, t, "bwd");
        let both = ctx.dropout(g.concat_last(&[fwd, bwd]));
        let out = ctx.linear(both, "temporal.proj");
        self.check(g, out, "temporal fusion")?;
        Ok(out)
    }

    /// Per-frame joints `[B, T, 24, 3]` from `g`.
    pub fn decode_joints(&self, ctx: &Ctx<T>, fused: Var, b: usize, t: usize) -> Var {
        let g = ctx.graph;
        let mut x = g.reshape(fused, &[b * t, self.config.fused_dim]);
        for i in 0..self.config.decoder_hidden.len() {
            x = ctx.linear(x, &format!("decoder.fc{i}"));
            x = g.relu(ctx.batch_norm(x, &format!("decoder.bn{i}")));
        }
        let out = ctx.linear(x, "decoder.out");
        g.reshape(out, &[b, t, NUM_JOINTS, 3])
    }

    fn identity_6d(n: usize) -> Vec<T> {
        let id = Rot6D::<T>::identity().0;
        (0..n).flat_map(|_| id).collect()
    }

    /// One spatial graph convolution `A X W + b` on `[.., 24, C]`.
    pub fn graph_conv(&self, ctx: &Ctx<T>, x: Var, prefix: &str) -> Var {
        ctx.linear(ctx.graph.mix_nodes(x, self.adjacency.clone()), prefix)
    }

    /// 6D rotations `[B, T, 24, 6]` from stage-1 joints and `g`.
    pub fn ik_solve(&self, ctx: &Ctx<T>, joints: Var, fused: Var, b: usize, t: usize) -> Var {
        let g = ctx.graph;
        let c = self.config.gcn_channels;
        let j = g.reshape(joints, &[b * t, NUM_JOINTS, 3]);
        let gg = g.repeat_mid(g.reshape(fused, &[b * t, self.config.fused_dim]), NUM_JOINTS);
        let q = g.concat_last(&[j, gg]);
        let x = g.add_tiled(ctx.linear(q, "ik.input"), ctx.p("ik.joint_bias"));
        let mut h = g.relu(ctx.batch_norm(x, "ik.input_bn"));
        h = g.reshape(h, &[b, t, NUM_JOINTS, c]);
        for l in 0..self.config.gcn_layers {
            let s = self.graph_conv(ctx, h, &format!("ik.gcn{l}.spatial"));
            let s = g.relu(ctx.batch_norm(s, &format!("ik.gcn{l}.spatial_bn")));
            let tc = g.concat_last(&[g.time_shift(s, 1), s, g.time_shift(s, -1)]);
            let u = ctx.batch_norm(ctx.linear(tc, &format!("ik.gcn{l}.temporal")), &format!("ik.gcn{l}.temporal_bn"));
            h = g.relu(g.add(ctx.dropout(u), h));
        }
        let out = ctx.linear(g.reshape(h, &[b * t, NUM_JOINTS * c]), "ik.out");
        let out = g.reshape(out, &[b, t, NUM_JOINTS, 6]);
        g.add_const(out, &Self::identity_6d(b * t * NUM_JOINTS))
    }

    /// Direct rotation head from `g` (IK stage disabled).
    fn rotation_head(&self, ctx: &Ctx<T>, fused: Var, b: usize, t: usize) -> Var {
        let g = ctx.graph;
        let x = g.reshape(fused, &[b * t, self.config.fused_dim]);
        let x = g.relu(ctx.batch_norm(ctx.linear(x, "rot_head.fc0"), "rot_head.bn0"));
        let out = g.reshape(ctx.linear(x, "rot_head.out"), &[b, t, NUM_JOINTS, 6]);
        g.add_const(out, &Self::identity_6d(b * t * NUM_JOINTS))
    }

    pub fn forward(&self, ctx: &Ctx<T>, input: &NetInput<T>) -> Result<StageVars, NetError> {
        let g = ctx.graph;
        let (b, t) = (input.batch, input.frames);
        let descriptors = self.encode_frames(ctx, input)?;
        let fused = self.fuse_temporal(ctx, descriptors, b, t)?;
        let joints_stage1 = self.decode_joints(ctx, fused, b, t);
        self.check(g, joints_stage1, "joint decoder")?;
        let rot6d = if self.config.enable_ik_stage {
            self.ik_solve(ctx, joints_stage1, fused, b, t)
        } else {
            self.rotation_head(ctx, fused, b, t)
        };
        self.check(g, rot6d, "rotation regressor")?;
        let rotmats = g.sixd_to_rotmat(rot6d);
        let theta_hat = g.reshape(g.rotmat_to_axis_angle(rotmats), &[b, t, POSE_DIM]);
        let joints_smpl = g.forward_kinematics(rotmats, Rc::new(self.rest_joints()), self.parents.clone());
        Ok(StageVars { descriptors, fused, joints_stage1, rot6d, rotmats, theta_hat, joints_smpl })
    }

    /// Eval-mode forward without gradient tracking.
    pub fn predict(&self, input: &NetInput<T>) -> Result<StagePredictions<T>, NetError> {
        let g = Graph::new();
        let ctx = Ctx::new(&g, &self.store, Mode::Eval, 0.0, 0, false);
        let v = self.forward(&ctx, input)?;
        let get = |x: Var| (*g.value(x)).clone();
        Ok(StagePredictions {
            joints_stage1: get(v.joints_stage1),
            rot6d: get(v.rot6d),
            rotmats: get(v.rotmats),
            theta_hat: get(v.theta_hat),
            joints_smpl: get(v.joints_smpl),
        })
    }
}

/// `sum_t sum_j ||J_gt - J_hat||^2`, averaged over the batch.
pub fn loss_stage1<T: Scalar>(g: &Graph<T>, joints: Var, target: Rc<Vec<T>>, batch: usize) -> Var {
    g.scale(g.sq_err_sum(joints, target), T::one() / T::from_count(batch))
}

/// `sum_t ||theta_gt - theta_hat||^2` (axis-angle), averaged over the batch.
pub fn loss_stage2<T: Scalar>(g: &Graph<T>, theta_hat: Var, target: Rc<Vec<T>>, batch: usize) -> Var {
    g.scale(g.sq_err_sum(theta_hat, target), T::one() / T::from_count(batch))
}

/// `sum_t ||J_gt - FK(theta_hat)||^2` in the body-model frame, averaged over the batch.
pub fn loss_stage3<T: Scalar>(g: &Graph<T>, joints_smpl: Var, target: Rc<Vec<T>>, batch: usize) -> Var {
    g.scale(g.sq_err_sum(joints_smpl, target), T::one() / T::from_count(batch))
}

/// Unweighted sum of the enabled components.
pub fn total_loss<T: Scalar>(g: &Graph<T>, joints: Var, pose: Var, smpl: Option<Var>, enable_smpl_loss: bool) -> Result<Var, NetError> {
    let base = g.add(joints, pose);
    match (enable_smpl_loss, smpl) {
        (true, Some(s)) => Ok(g.add(base, s)),
        (true, None) => Err(NetError::Toggle("the body-model joint loss")),
        (false, _) => Ok(base),
    }
}

/// All loss terms of a forward pass under the net's toggles.
pub fn compute_losses<T: Scalar>(g: &Graph<T>, net: &Net<T>, vars: &StageVars, targets: &Targets<T>, batch: usize) -> Result<LossVars, NetError> {
    let joints = loss_stage1(g, vars.joints_stage1, targets.joints_centered.clone(), batch);
    let pose = loss_stage2(g, vars.theta_hat, targets.theta.clone(), batch);
    let smpl = net.config.enable_smpl_loss.then(|| loss_stage3(g, vars.joints_smpl, targets.joints_model.clone(), batch));
    let total = total_loss(g, joints, pose, smpl, net.config.enable_smpl_loss)?;
    Ok(LossVars { joints, pose, smpl, total })
}

impl LossVars {
    pub fn values<T: Scalar>(&self, g: &Graph<T>) -> LossValues {
        let v = |x: Var| g.value(x).item().as_f64();
        LossValues { joints: v(self.joints), pose: v(self.pose), smpl: self.smpl.map(v), total: v(self.total) }
    }
}

/// One optimizer step on a batch: train-mode forward, backward, Adam update,
/// running-statistics update. `dropout_seed` drives the dropout masks.
pub fn train_step<T: Scalar>(
    net: &mut Net<T>,
    opt: &mut Adam<T>,
    input: &NetInput<T>,
    targets: &Targets<T>,
    dropout_seed: u64,
) -> Result<LossValues, NetError> {
    let g = Graph::new();
    let (values, grads, ctx_updates) = {
        let ctx = Ctx::new(&g, &net.store, Mode::Train, net.config.dropout, dropout_seed, true);
        let vars = net.forward(&ctx, input)?;
        let losses = compute_losses(&g, net, &vars, targets, input.batch)?;
        let values = losses.values(&g);
        if !values.total.is_finite() {
            return Err(NetError::NonFinite("loss"));
        }
        let mut grads = g.backward(losses.total);
        let pg = ctx.param_grads(&mut grads);
        let mut bn = ParamStore { params: Default::default(), buffers: net.store.buffers.clone() };
        ctx.apply_bn_updates(&mut bn);
        (values, pg, bn.buffers)
    };
    if grads.values().any(|t| !t.is_finite()) {
        return Err(NetError::NonFinite("gradients"));
    }
    net.store.buffers = ctx_updates;
    opt.update(&mut net.store, &grads);
    Ok(values)
}
