//! Self-describing binary checkpoint: magic + version, a JSON header with
//! the full configuration and tensor directory, little-endian f64 tensor
//! data, and a trailing SHA-256 checksum. Round trips are bit-exact.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::flow::{FlowModel, ModelConfig};
use crate::preprocess::Standardizer;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"TVADFLOW";

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config: ModelConfig,
    init_seed: u64,
    traj_actnorm_initialized: bool,
    pose_actnorm_initialized: bool,
    standardizer_mask: Vec<bool>,
    standardizer_constant: Vec<bool>,
    feature_names: Vec<String>,
    tensors: Vec<TensorEntry>,
}

pub fn save_model(model: &FlowModel, path: &Path) -> Result<()> {
    let mut tensors: Vec<TensorEntry> = model
        .store
        .specs()
        .iter()
        .map(|s| TensorEntry {
            name: s.name.clone(),
            shape: s.shape.clone(),
        })
        .collect();
    tensors.push(TensorEntry {
        name: "standardizer.mean".into(),
        shape: vec![model.standardizer.mean.len()],
    });
    tensors.push(TensorEntry {
        name: "standardizer.std".into(),
        shape: vec![model.standardizer.std.len()],
    });

    let header = Header {
        format_version: CHECKPOINT_VERSION,
        config: model.config.clone(),
        init_seed: 0,
        traj_actnorm_initialized: model.traj.actnorm.initialized,
        pose_actnorm_initialized: model
            .pose
            .as_ref()
            .map(|f| f.actnorm.initialized)
            .unwrap_or(false),
        standardizer_mask: model.standardizer.mask.clone(),
        standardizer_constant: model.standardizer.constant.clone(),
        feature_names: crate::features::FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
        tensors,
    };
    let header_json = serde_json::to_vec(&header)
        .map_err(|e| Error::CheckpointFormat(format!("header serialization failed: {e}")))?;

    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&header_json);
    for spec in model.store.specs() {
        for &v in &model.store.data()[spec.offset..spec.offset + spec.len] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    for &v in model.standardizer.mean.iter().chain(model.standardizer.std.iter()) {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);

    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<FlowModel> {
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .map_err(|e| Error::io(path, e))?
        .read_to_end(&mut buf)
        .map_err(|e| Error::io(path, e))?;
    if buf.len() < MAGIC.len() + 4 + 8 + 32 {
        return Err(Error::CheckpointChecksum);
    }
    let (body, checksum) = buf.split_at(buf.len() - 32);
    if Sha256::digest(body).as_slice() != checksum {
        return Err(Error::CheckpointChecksum);
    }
    if &body[..8] != MAGIC {
        return Err(Error::CheckpointFormat("bad magic bytes".into()));
    }
    let version = u32::from_le_bytes(body[8..12].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointVersion {
            found: version,
            supported: CHECKPOINT_VERSION,
        });
    }
    let header_len = u64::from_le_bytes(body[12..20].try_into().unwrap()) as usize;
    let header_end = 20 + header_len;
    if body.len() < header_end {
        return Err(Error::CheckpointChecksum);
    }
    let header: Header = serde_json::from_slice(&body[20..header_end])
        .map_err(|e| Error::CheckpointFormat(format!("bad header JSON: {e}")))?;

    let d = header.standardizer_mask.len();
    let mut standardizer = Standardizer {
        mean: vec![0.0; d],
        std: vec![1.0; d],
        mask: header.standardizer_mask.clone(),
        constant: header.standardizer_constant.clone(),
    };
    let mut model = FlowModel::new(header.config, standardizer.clone(), header.init_seed)?;

    // tensor data follows the directory order exactly
    let mut off = header_end;
    let mut read_tensor = |len: usize| -> Result<Vec<f64>> {
        let bytes = len * 8;
        if body.len() < off + bytes {
            return Err(Error::CheckpointChecksum);
        }
        let out = body[off..off + bytes]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        off += bytes;
        Ok(out)
    };
    for entry in &header.tensors {
        let len: usize = entry.shape.iter().product();
        let values = read_tensor(len)?;
        match entry.name.as_str() {
            "standardizer.mean" => standardizer.mean = values,
            "standardizer.std" => standardizer.std = values,
            name => {
                let id = model.store.find(name).ok_or_else(|| {
                    Error::CheckpointFormat(format!("unexpected tensor {name:?}"))
                })?;
                let spec = model.store.spec(id);
                if spec.shape != entry.shape {
                    return Err(Error::CheckpointFormat(format!(
                        "tensor {name:?} shape mismatch: file {:?}, model {:?}",
                        entry.shape, spec.shape
                    )));
                }
                model.store.get_mut(id).copy_from_slice(&values);
            }
        }
    }
    model.standardizer = standardizer;
    model.traj.actnorm.initialized = header.traj_actnorm_initialized;
    if let Some(pose) = model.pose.as_mut() {
        pose.actnorm.initialized = header.pose_actnorm_initialized;
    }
    Ok(model)
}
