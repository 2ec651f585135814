//! Parameter persistence: a JSON manifest of named tensor shapes next to a flat
//! little-endian f64 buffer.

use serde::{Deserialize, Serialize};

use super::NnError;
use crate::Scalar;

pub const PARAM_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the buffer, in elements.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamManifest {
    pub format_version: u32,
    pub dtype: String,
    pub tensors: Vec<TensorEntry>,
}

impl ParamManifest {
    pub fn get(&self, name: &str) -> Option<&TensorEntry> {
        self.tensors.iter().find(|t| t.name == name)
    }
}

/// Serialize named tensors. Values are widened to f64, so f32 models round-trip
/// exactly as well.
pub fn encode_params<T: Scalar>(tensors: &[(&str, Vec<usize>, &[T])]) -> (ParamManifest, Vec<u8>) {
    let mut entries = Vec::with_capacity(tensors.len());
    let mut bytes = Vec::new();
    let mut offset = 0;
    for (name, shape, data) in tensors {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        entries.push(TensorEntry {
            name: name.to_string(),
            shape: shape.clone(),
            offset,
        });
        for v in data.iter() {
            bytes.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
        }
        offset += data.len();
    }
    let manifest = ParamManifest {
        format_version: PARAM_FORMAT_VERSION,
        dtype: "f64-le".into(),
        tensors: entries,
    };
    (manifest, bytes)
}

/// Inverse of [`encode_params`]; returns tensors in manifest order.
pub fn decode_params<T: Scalar>(
    manifest: &ParamManifest,
    bytes: &[u8],
) -> Result<Vec<(String, Vec<usize>, Vec<T>)>, NnError> {
    if manifest.format_version != PARAM_FORMAT_VERSION {
        return Err(NnError::Format(format!(
            "unsupported format version {}",
            manifest.format_version
        )));
    }
    if manifest.dtype != "f64-le" {
        return Err(NnError::Format(format!(
            "unsupported dtype {}",
            manifest.dtype
        )));
    }
    if !bytes.len().is_multiple_of(8) {
        return Err(NnError::Format(
            "buffer length is not a multiple of 8".into(),
        ));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let mut out = Vec::with_capacity(manifest.tensors.len());
    for t in &manifest.tensors {
        let len: usize = t.shape.iter().product();
        let slice = values.get(t.offset..t.offset + len).ok_or_else(|| {
            NnError::Format(format!(
                "tensor '{}' runs past the end of the buffer",
                t.name
            ))
        })?;
        out.push((
            t.name.clone(),
            t.shape.clone(),
            slice.iter().map(|&v| T::of(v)).collect(),
        ));
    }
    Ok(out)
}
