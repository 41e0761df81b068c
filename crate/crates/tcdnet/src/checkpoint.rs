//! Weight checkpoints.
//!
//! Layout: the magic `TCDN`, a little-endian `u32` format version, a
//! little-endian `u32` header length, a JSON header naming the model
//! configuration, element type and every tensor's name and shape, then the
//! tensors' values back to back as little-endian floats.

use std::fs;
use std::io::Write;
use std::path::Path;

use darts_core::pipeline::PipelineConfig;
use serde::{Deserialize, Serialize};

use crate::model::{Model, ModelConfig};
use crate::tensor::Scalar;
use crate::TcdError;

pub const MAGIC: &[u8; 4] = b"TCDN";
pub const FORMAT_VERSION: u32 = 1;
const MAX_HEADER: usize = 1 << 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub dtype: String,
    pub model: ModelConfig,
    /// Image settings the weights were trained on.
    #[serde(default)]
    pub pipeline: Option<PipelineConfig>,
    pub tensors: Vec<TensorEntry>,
}

fn err(msg: impl Into<String>) -> TcdError {
    TcdError::Checkpoint(msg.into())
}

/// Parameter count implied by a configuration, without allocating.
pub fn param_count(config: &ModelConfig) -> Option<usize> {
    let mul = |a: usize, b: usize| a.checked_mul(b);
    let mut total = 0usize;
    let mut add = |v: Option<usize>| -> Option<()> {
        total = total.checked_add(v?)?;
        Some(())
    };
    let mut in_c = config.input_channels;
    for &w in &config.block_widths {
        let per = w / config.multiscale_kernels.len().max(1);
        for &k in &config.multiscale_kernels {
            add(mul(mul(in_c, per)?, mul(k, k)?).and_then(|v| v.checked_add(per)))?;
        }
        let hid = (w / config.attention_reduction.max(1)).max(1);
        add(mul(hid, w).and_then(|v| v.checked_mul(2)).and_then(|v| v.checked_add(hid + w)))?;
        add(mul(config.attention_kernel, config.attention_kernel).and_then(|v| v.checked_mul(2)).map(|v| v + 1))?;
        add(mul(mul(w, w)?, 9).and_then(|v| v.checked_add(w)))?;
        in_c = w;
    }
    let grids: usize = config.spp_grids.iter().try_fold(0usize, |a, &g| a.checked_add(g.checked_mul(g)?))?;
    let mut width = mul(in_c, grids)?;
    for &d in config.dense_widths.iter().chain(std::iter::once(&config.classes)) {
        add(mul(width, d).and_then(|v| v.checked_add(d)))?;
        width = d;
    }
    Some(total)
}

pub fn write_checkpoint<T: Scalar>(
    model: &Model<T>,
    pipeline: Option<&PipelineConfig>,
    out: &mut impl Write,
) -> Result<(), TcdError> {
    let params = model.params();
    let header = CheckpointHeader {
        dtype: T::DTYPE.to_string(),
        model: model.config.clone(),
        pipeline: pipeline.cloned(),
        tensors: params.iter().map(|p| TensorEntry { name: p.name.clone(), shape: p.shape.clone() }).collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| err(e.to_string()))?;
    out.write_all(MAGIC)?;
    out.write_all(&FORMAT_VERSION.to_le_bytes())?;
    out.write_all(&(json.len() as u32).to_le_bytes())?;
    out.write_all(&json)?;
    let mut buf = Vec::with_capacity(model.num_params() * std::mem::size_of::<T>());
    for p in params {
        for v in &p.value {
            match T::DTYPE {
                "f64" => buf.extend_from_slice(&v.f64().to_le_bytes()),
                _ => buf.extend_from_slice(&(v.f64() as f32).to_le_bytes()),
            }
        }
    }
    out.write_all(&buf)?;
    Ok(())
}

/// Decodes a checkpoint into a model of element type `T`, converting
/// precision when the stored type differs.
pub fn read_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<(Model<T>, CheckpointHeader), TcdError> {
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(err("missing TCDN magic"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(err(format!("unsupported format version {version}")));
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    if hlen > MAX_HEADER || 12 + hlen > bytes.len() {
        return Err(err(format!("header length {hlen} out of range")));
    }
    let header: CheckpointHeader =
        serde_json::from_slice(&bytes[12..12 + hlen]).map_err(|e| err(format!("header: {e}")))?;
    header.model.validate()?;
    let width = match header.dtype.as_str() {
        "f32" => 4,
        "f64" => 8,
        other => return Err(err(format!("unknown dtype {other:?}"))),
    };
    let data = &bytes[12 + hlen..];
    let expected = param_count(&header.model).ok_or_else(|| err("parameter count overflows"))?;
    if expected.checked_mul(width) != Some(data.len()) {
        return Err(err(format!("expected {expected} {} values, found {} bytes", header.dtype, data.len())));
    }
    let mut model = Model::<T>::build(header.model.clone(), 0)?;
    let mut values = data.chunks_exact(width).map(|c| match width {
        8 => f64::from_le_bytes(c.try_into().expect("8 bytes")),
        _ => f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64,
    });
    let params = model.params_mut();
    if params.len() != header.tensors.len() {
        return Err(err(format!("expected {} tensors, header lists {}", params.len(), header.tensors.len())));
    }
    for (p, entry) in params.into_iter().zip(&header.tensors) {
        if p.name != entry.name || p.shape != entry.shape {
            return Err(err(format!("tensor {} {:?} does not match {} {:?}", entry.name, entry.shape, p.name, p.shape)));
        }
        for slot in &mut p.value {
            let v = values.next().ok_or_else(|| err("truncated tensor data"))?;
            if !v.is_finite() {
                return Err(err(format!("non-finite value in {}", entry.name)));
            }
            *slot = T::of(v);
        }
    }
    Ok((model, header))
}

pub fn save_checkpoint<T: Scalar>(model: &Model<T>, pipeline: Option<&PipelineConfig>, path: &Path) -> Result<(), TcdError> {
    let mut buf = Vec::new();
    write_checkpoint(model, pipeline, &mut buf)?;
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, &buf)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<(Model<T>, CheckpointHeader), TcdError> {
    read_checkpoint(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn param_count_matches_built_models() {
        for c in [ModelConfig::default(), ModelConfig::reduced(3), ModelConfig { attention_reduction: 64, ..ModelConfig::reduced(1) }] {
            let m = Model::<f32>::build(c.clone(), 1).unwrap();
            assert_eq!(param_count(&c), Some(m.num_params()));
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let m = Model::<f32>::build(ModelConfig::reduced(1), 7).unwrap();
        let pipe = PipelineConfig::default();
        let mut buf = Vec::new();
        write_checkpoint(&m, Some(&pipe), &mut buf).unwrap();
        let (back, header) = read_checkpoint::<f32>(&buf).unwrap();
        assert_eq!(back, m);
        assert_eq!(header.pipeline, Some(pipe));
        assert_eq!(header.dtype, "f32");
        // widening keeps every value
        let (wide, _) = read_checkpoint::<f64>(&buf).unwrap();
        assert_eq!(wide.cast::<f32>(), m);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let m = Model::<f32>::build(ModelConfig::reduced(1), 7).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&m, None, &mut buf).unwrap();
        assert!(read_checkpoint::<f32>(&buf[..buf.len() - 1]).is_err());
        assert!(read_checkpoint::<f32>(b"TCDX").is_err());
        let mut bad = buf.clone();
        bad[4] = 9;
        assert!(read_checkpoint::<f32>(&bad).is_err());
        let mut nan = buf.clone();
        let n = nan.len();
        nan[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(read_checkpoint::<f32>(&nan).is_err());
    }
}
