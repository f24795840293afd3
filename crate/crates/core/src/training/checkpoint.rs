//! Checkpoints are safetensors files. Every parameter is stored under its
//! model name (`encoder.*`, `matching.bias`, `ensembler.*`) and the header
//! metadata carries:
//!
//! - `format`: always `cfbi-checkpoint`
//! - `version`: layout version, currently `1`; readers accept equal versions
//! - `model_config`: the [`ModelConfig`] as JSON
//! - `step`: number of optimizer updates applied

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use candle::{DType, Device};
use safetensors::SafeTensors;

use crate::error::{Error, Result};
use crate::model::{Cfbi, ModelConfig};

pub const CHECKPOINT_FORMAT: &str = "cfbi-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Header fields of a checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointInfo {
    pub config: ModelConfig,
    pub step: usize,
}

pub fn save_checkpoint(model: &Cfbi, step: usize, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let metadata = HashMap::from([
        ("format".to_string(), CHECKPOINT_FORMAT.to_string()),
        ("version".to_string(), CHECKPOINT_VERSION.to_string()),
        ("model_config".to_string(), serde_json::to_string(model.config())?),
        ("step".to_string(), step.to_string()),
    ]);
    let bytes = safetensors::serialize(model.named_tensors(), Some(metadata))
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    fs::write(path, sorted_header(bytes)?)?;
    Ok(())
}

/// Rewrites the header with its metadata keys sorted. The metadata map is
/// written in hash order, so without this two saves of the same model differ.
/// Reordering keeps the header length, so tensor offsets are untouched.
fn sorted_header(mut bytes: Vec<u8>) -> Result<Vec<u8>> {
    let n = u64::from_le_bytes(bytes[..8].try_into().expect("8-byte length prefix")) as usize;
    let mut header: BTreeMap<String, serde_json::Value> = serde_json::from_slice(&bytes[8..8 + n])?;
    if let Some(meta) = header.remove("__metadata__") {
        let sorted: BTreeMap<String, String> = serde_json::from_value(meta)?;
        header.insert("__metadata__".into(), serde_json::to_value(sorted)?);
    }
    let mut text = serde_json::to_vec(&header)?;
    if text.len() > n {
        return Err(Error::Checkpoint("header grew when sorted".into()));
    }
    text.resize(n, b' ');
    bytes[8..8 + n].copy_from_slice(&text);
    Ok(bytes)
}

fn read_info(buffer: &[u8]) -> Result<CheckpointInfo> {
    let (_, header) = SafeTensors::read_metadata(buffer).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let meta = header
        .metadata()
        .as_ref()
        .ok_or_else(|| Error::Checkpoint("missing header metadata".into()))?;
    let field = |k: &str| {
        meta.get(k)
            .map(String::as_str)
            .ok_or_else(|| Error::Checkpoint(format!("missing `{k}` metadata")))
    };
    if field("format")? != CHECKPOINT_FORMAT {
        return Err(Error::Checkpoint(format!("unexpected format `{}`", field("format")?)));
    }
    let version: u32 = field("version")?
        .parse()
        .map_err(|_| Error::Checkpoint("unreadable version".into()))?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "checkpoint version {version} is not supported (expected {CHECKPOINT_VERSION})"
        )));
    }
    Ok(CheckpointInfo {
        config: serde_json::from_str(field("model_config")?)?,
        step: field("step")?
            .parse()
            .map_err(|_| Error::Checkpoint("unreadable step".into()))?,
    })
}

/// Reads only the header of a checkpoint.
pub fn checkpoint_info(path: &Path) -> Result<CheckpointInfo> {
    read_info(&read(path)?)
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::NotFound(format!("checkpoint {}", path.display())),
        _ => e.into(),
    })
}

/// Rebuilds the model stored at `path`.
pub fn load_checkpoint(path: &Path, device: &Device, dtype: DType) -> Result<(Cfbi, CheckpointInfo)> {
    let buffer = read(path)?;
    let info = read_info(&buffer)?;
    let tensors = candle::safetensors::load_buffer(&buffer, device)?;
    let model = Cfbi::from_tensors(&info.config, &tensors, device, dtype)?;
    Ok((model, info))
}
