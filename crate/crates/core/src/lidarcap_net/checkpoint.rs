//! Weight files: every parameter and buffer as a named array, plus string
//! metadata (`format`, `version`, `net_config` as JSON, `seed`, `iteration`).

use std::path::Path;

use nalgebra::Vector3;

use super::{Net, NetConfig, NetError};
use crate::container::{ArrayContainer, ContainerError};
use crate::scalar::Scalar;
use crate::smpl_body::NUM_JOINTS;

pub const FORMAT_NAME: &str = "lidarcap-weights";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CheckpointInfo {
    pub seed: u64,
    pub iteration: u64,
}

fn cerr(e: ContainerError) -> NetError {
    NetError::Checkpoint(e.to_string())
}

pub fn to_container<T: Scalar>(net: &Net<T>, info: CheckpointInfo) -> ArrayContainer {
    let mut c = ArrayContainer::new();
    for (name, t) in net.store.params.iter().chain(net.store.buffers.iter()) {
        c.insert_scalar(name.clone(), t.shape.clone(), &t.data);
    }
    let m = &mut c.metadata;
    m.insert("format".into(), FORMAT_NAME.into());
    m.insert("version".into(), FORMAT_VERSION.to_string());
    m.insert("net_config".into(), serde_json::to_string(&net.config).expect("config serializes"));
    m.insert("seed".into(), info.seed.to_string());
    m.insert("iteration".into(), info.iteration.to_string());
    c
}

/// Rebuilds a network, checking every expected tensor name and shape against
/// a fresh initialization of the stored config.
pub fn from_container<T: Scalar>(c: &ArrayContainer) -> Result<(Net<T>, CheckpointInfo), NetError> {
    let meta = |k: &str| c.metadata.get(k).ok_or_else(|| NetError::Checkpoint(format!("missing metadata `{k}`")));
    if meta("format")? != FORMAT_NAME {
        return Err(NetError::Checkpoint(format!("unknown format `{}`", meta("format")?)));
    }
    let version: u32 = meta("version")?.parse().map_err(|_| NetError::Checkpoint("bad version".into()))?;
    if version != FORMAT_VERSION {
        return Err(NetError::Checkpoint(format!("unsupported version {version}")));
    }
    let config: NetConfig =
        serde_json::from_str(meta("net_config")?).map_err(|e| NetError::Checkpoint(format!("net_config: {e}")))?;
    let parse = |k: &str| -> Result<u64, NetError> {
        meta(k)?.parse().map_err(|_| NetError::Checkpoint(format!("bad `{k}`")))
    };
    let info = CheckpointInfo { seed: parse("seed")?, iteration: parse("iteration")? };

    let placeholder = vec![Vector3::zeros(); NUM_JOINTS];
    let mut net = Net::<T>::new(config, &placeholder, 0)?;
    let expected: Vec<String> = net.tensor_names();
    for name in c.arrays.keys() {
        if !expected.contains(name) {
            return Err(NetError::Checkpoint(format!("unexpected tensor `{name}`")));
        }
    }
    let store = &mut net.store;
    for (name, t) in store.params.iter_mut().chain(store.buffers.iter_mut()) {
        let (shape, data) = c.floats::<T>(name).map_err(cerr)?;
        if shape != t.shape {
            return Err(NetError::Checkpoint(format!("`{name}` has shape {shape:?}, expected {:?}", t.shape)));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(NetError::Checkpoint(format!("`{name}` has non-finite values")));
        }
        t.data = data;
    }
    Ok((net, info))
}

pub fn save<T: Scalar>(net: &Net<T>, info: CheckpointInfo, path: &Path) -> Result<(), NetError> {
    to_container(net, info).save(path).map_err(cerr)
}

pub fn load<T: Scalar>(path: &Path) -> Result<(Net<T>, CheckpointInfo), NetError> {
    from_container(&ArrayContainer::load(path).map_err(cerr)?)
}
