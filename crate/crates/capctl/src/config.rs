use std::path::{Path, PathBuf};

use lidarcap::lidarcap_net::NetConfig;
use lidarcap::seqdata::{Sampling, DEFAULT_FRAME_RATE, DEFAULT_STRIDE, DEFAULT_WINDOW};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const SEED_ENV: &str = "CAPCTL_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

/// Recording-level train/validation split: windows of one recording never
/// land on both sides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    /// Recording ids held out for validation; when empty, the last
    /// `val_fraction` of the sorted ids is held out.
    pub val_recordings: Vec<String>,
    pub val_fraction: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { val_recordings: Vec::new(), val_fraction: 0.25 }
    }
}

impl SplitSpec {
    /// Indices of training and validation recordings among sorted `ids`.
    pub fn apply(&self, ids: &[String]) -> (Vec<usize>, Vec<usize>) {
        let n_val = if self.val_recordings.is_empty() { (ids.len() as f64 * self.val_fraction).floor() as usize } else { 0 };
        let mut order: Vec<usize> = (0..ids.len()).collect();
        order.sort_by(|&a, &b| ids[a].cmp(&ids[b]));
        let held: Vec<usize> = if self.val_recordings.is_empty() {
            order[ids.len() - n_val.min(ids.len())..].to_vec()
        } else {
            order.iter().copied().filter(|&i| self.val_recordings.contains(&ids[i])).collect()
        };
        let train = order.iter().copied().filter(|i| !held.contains(i)).collect();
        (train, held)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Coupled L2 weight decay of the optimizer.
    pub weight_decay: f64,
    /// Dropout ratio; replaces `net.dropout`.
    pub dropout: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    /// Dataset root in the recording layout.
    pub data: PathBuf,
    /// Body-model container; the built-in procedural model when absent.
    pub body_model: Option<PathBuf>,
    pub window: usize,
    pub stride: usize,
    /// Keep only the first N training windows.
    pub max_windows: Option<usize>,
    pub shuffle: bool,
    pub sampling: Sampling,
    pub frame_rate: f64,
    pub precision: Precision,
    /// Write a checkpoint every N epochs (0: final only).
    pub checkpoint_every: usize,
    pub split: SplitSpec,
    pub net: NetConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 8,
            learning_rate: 1e-4,
            weight_decay: 1e-4,
            dropout: 0.5,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            data: PathBuf::from("data"),
            body_model: None,
            window: DEFAULT_WINDOW,
            stride: DEFAULT_STRIDE,
            max_windows: None,
            shuffle: true,
            sampling: Sampling::Uniform,
            frame_rate: DEFAULT_FRAME_RATE,
            precision: Precision::F32,
            checkpoint_every: 50,
            split: SplitSpec::default(),
            net: NetConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Narrow network with a faster optimizer; trains on one CPU core.
    pub fn smoke() -> Self {
        Self {
            epochs: 500,
            learning_rate: 3e-3,
            dropout: 0.0,
            max_windows: Some(8),
            checkpoint_every: 0,
            split: SplitSpec { val_recordings: Vec::new(), val_fraction: 0.0 },
            net: NetConfig::small(),
            ..Self::default()
        }
    }

    /// Network config with the training dropout applied.
    pub fn net_config(&self) -> NetConfig {
        NetConfig { dropout: self.dropout, ..self.net.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CliError::Config(m.to_string()));
        if self.epochs == 0 || self.batch_size == 0 || self.window == 0 || self.stride == 0 {
            return bad("epochs, batch_size, window and stride must be positive");
        }
        if !(self.learning_rate > 0.0) || !(self.weight_decay >= 0.0) || !(self.frame_rate > 0.0) {
            return bad("learning_rate and frame_rate must be positive, weight_decay nonnegative");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || !(self.adam_eps > 0.0) {
            return bad("adam coefficients must lie in [0, 1) with positive eps");
        }
        if !(0.0..1.0).contains(&self.split.val_fraction) {
            return bad("split.val_fraction must lie in [0, 1)");
        }
        if self.max_windows == Some(0) {
            return bad("max_windows must be positive");
        }
        self.net_config().validate().map_err(|e| CliError::Config(e.to_string()))
    }
}

/// Seed from `CAPCTL_SEED` when set.
pub fn seed_override() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s.trim().parse().map(Some).map_err(|_| CliError::Config(format!("{SEED_ENV}={s} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

pub fn read_toml<C: DeserializeOwned>(path: &Path) -> Result<C> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}
