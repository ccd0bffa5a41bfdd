//! Named-array container used for body models and checkpoints.
//!
//! The on-disk layout is the safetensors format:
//!
//! ```text
//! u64 LE   header length H (multiple of 8, space padded)
//! H bytes  JSON object: { "<name>": {"dtype": "F64"|"F32"|"I64", "shape": [..],
//!                                    "data_offsets": [begin, end]}, ...,
//!                         "__metadata__": {"lidarcap": "<JSON string>"} }
//! data     little-endian array bytes; offsets are relative to the end of the header
//! ```
//!
//! Arrays are stored sorted by (dtype alignment, name) and all free-form
//! metadata is folded into the single `lidarcap` entry, so identical inputs
//! produce byte-identical files.

use std::borrow::Cow;
use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use safetensors::tensor::{Dtype, SafeTensors, View};
use thiserror::Error;

use crate::scalar::Scalar;

const META_KEY: &str = "lidarcap";

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("file not found: {0}")]
    NotFound(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed container: {0}")]
    Malformed(String),
    #[error("missing array `{0}`")]
    MissingArray(String),
    #[error("array `{name}` has dtype {found}, expected {expected}")]
    DtypeMismatch { name: String, expected: &'static str, found: String },
}

#[derive(Debug, Clone, PartialEq)]
pub enum ArrayData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    I64(Vec<i64>),
}

impl ArrayData {
    fn len(&self) -> usize {
        match self {
            ArrayData::F32(v) => v.len(),
            ArrayData::F64(v) => v.len(),
            ArrayData::I64(v) => v.len(),
        }
    }

    fn dtype(&self) -> Dtype {
        match self {
            ArrayData::F32(_) => Dtype::F32,
            ArrayData::F64(_) => Dtype::F64,
            ArrayData::I64(_) => Dtype::I64,
        }
    }

    fn to_bytes(&self) -> Vec<u8> {
        match self {
            ArrayData::F32(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            ArrayData::F64(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            ArrayData::I64(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub shape: Vec<usize>,
    pub data: ArrayData,
}

struct ByteView {
    dtype: Dtype,
    shape: Vec<usize>,
    bytes: Vec<u8>,
}

impl View for &ByteView {
    fn dtype(&self) -> Dtype {
        self.dtype
    }
    fn shape(&self) -> &[usize] {
        &self.shape
    }
    fn data(&self) -> Cow<'_, [u8]> {
        Cow::Borrowed(&self.bytes)
    }
    fn data_len(&self) -> usize {
        self.bytes.len()
    }
}

/// In-memory set of named arrays plus string metadata.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ArrayContainer {
    pub arrays: BTreeMap<String, NamedArray>,
    pub metadata: BTreeMap<String, String>,
}

impl ArrayContainer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, shape: Vec<usize>, data: ArrayData) {
        let name = name.into();
        assert_eq!(shape.iter().product::<usize>(), data.len(), "shape/data mismatch for {name}");
        self.arrays.insert(name, NamedArray { shape, data });
    }

    /// Stores a scalar-typed array in its native dtype.
    pub fn insert_scalar<T: Scalar>(&mut self, name: impl Into<String>, shape: Vec<usize>, data: &[T]) {
        let arr = if T::DTYPE == "f32" {
            ArrayData::F32(data.iter().map(|v| v.as_f64() as f32).collect())
        } else {
            ArrayData::F64(data.iter().map(|v| v.as_f64()).collect())
        };
        self.insert(name, shape, arr);
    }

    pub fn get(&self, name: &str) -> Result<&NamedArray, ContainerError> {
        self.arrays.get(name).ok_or_else(|| ContainerError::MissingArray(name.to_string()))
    }

    /// Float array converted to `T` (either float dtype is accepted).
    pub fn floats<T: Scalar>(&self, name: &str) -> Result<(Vec<usize>, Vec<T>), ContainerError> {
        let arr = self.get(name)?;
        let data = match &arr.data {
            ArrayData::F32(v) => v.iter().map(|x| T::lit(*x as f64)).collect(),
            ArrayData::F64(v) => v.iter().map(|x| T::lit(*x)).collect(),
            ArrayData::I64(_) => {
                return Err(ContainerError::DtypeMismatch {
                    name: name.to_string(),
                    expected: "F32|F64",
                    found: "I64".into(),
                })
            }
        };
        Ok((arr.shape.clone(), data))
    }

    pub fn ints(&self, name: &str) -> Result<(Vec<usize>, Vec<i64>), ContainerError> {
        let arr = self.get(name)?;
        match &arr.data {
            ArrayData::I64(v) => Ok((arr.shape.clone(), v.clone())),
            other => Err(ContainerError::DtypeMismatch {
                name: name.to_string(),
                expected: "I64",
                found: format!("{:?}", other.dtype()),
            }),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, ContainerError> {
        let views: Vec<(String, ByteView)> = self
            .arrays
            .iter()
            .map(|(name, arr)| {
                (
                    name.clone(),
                    ByteView { dtype: arr.data.dtype(), shape: arr.shape.clone(), bytes: arr.data.to_bytes() },
                )
            })
            .collect();
        let meta = serde_json::to_string(&self.metadata).map_err(|e| ContainerError::Malformed(e.to_string()))?;
        let mut info = HashMap::new();
        info.insert(META_KEY.to_string(), meta);
        safetensors::tensor::serialize(views.iter().map(|(n, v)| (n.as_str(), v)), Some(info))
            .map_err(|e| ContainerError::Malformed(e.to_string()))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ContainerError> {
        let st = SafeTensors::deserialize(bytes).map_err(|e| ContainerError::Malformed(e.to_string()))?;
        let (_, header) = SafeTensors::read_metadata(bytes).map_err(|e| ContainerError::Malformed(e.to_string()))?;
        let mut out = ArrayContainer::new();
        if let Some(meta) = header.metadata() {
            if let Some(s) = meta.get(META_KEY) {
                out.metadata = serde_json::from_str(s).map_err(|e| ContainerError::Malformed(e.to_string()))?;
            }
        }
        for (name, view) in st.tensors() {
            let raw = view.data();
            let data = match view.dtype() {
                Dtype::F32 => ArrayData::F32(
                    raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect(),
                ),
                Dtype::F64 => ArrayData::F64(
                    raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
                ),
                Dtype::I64 => ArrayData::I64(
                    raw.chunks_exact(8).map(|c| i64::from_le_bytes(c.try_into().unwrap())).collect(),
                ),
                other => {
                    return Err(ContainerError::Malformed(format!("unsupported dtype {other:?} for `{name}`")))
                }
            };
            out.arrays.insert(name, NamedArray { shape: view.shape().to_vec(), data });
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<(), ContainerError> {
        let bytes = self.to_bytes()?;
        std::fs::write(path, bytes).map_err(|source| ContainerError::Io { path: path.display().to_string(), source })
    }

    pub fn load(path: &Path) -> Result<Self, ContainerError> {
        if !path.exists() {
            return Err(ContainerError::NotFound(path.display().to_string()));
        }
        let bytes =
            std::fs::read(path).map_err(|source| ContainerError::Io { path: path.display().to_string(), source })?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact_and_deterministic() {
        let mut c = ArrayContainer::new();
        c.insert("b", vec![2, 2], ArrayData::F64(vec![1.0, -0.0, f64::MIN_POSITIVE, 3.5]));
        c.insert("a", vec![3], ArrayData::I64(vec![-1, 0, 7]));
        c.insert("z", vec![1], ArrayData::F32(vec![0.1]));
        c.metadata.insert("k2".into(), "v2".into());
        c.metadata.insert("k1".into(), "v1".into());
        let bytes = c.to_bytes().unwrap();
        assert_eq!(bytes, c.clone().to_bytes().unwrap());
        let back = ArrayContainer::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn dtype_mismatch_is_reported() {
        let mut c = ArrayContainer::new();
        c.insert("p", vec![1], ArrayData::I64(vec![1]));
        assert!(matches!(c.floats::<f64>("p"), Err(ContainerError::DtypeMismatch { .. })));
        assert!(matches!(c.floats::<f64>("q"), Err(ContainerError::MissingArray(_))));
    }

    #[test]
    fn truncated_bytes_are_malformed() {
        let mut c = ArrayContainer::new();
        c.insert("x", vec![4], ArrayData::F64(vec![1.0; 4]));
        let bytes = c.to_bytes().unwrap();
        assert!(matches!(ArrayContainer::from_bytes(&bytes[..bytes.len() - 3]), Err(ContainerError::Malformed(_))));
    }
}
