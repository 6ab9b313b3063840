//! Checkpoint archive: one safetensors file holding every parameter,
//! optimizer moments, and a metadata block with the network config, the
//! global step, and a schema version. Loading rejects mismatched schemas.

use crate::network::{Network, NetworkConfig, ParamStore};
use candle_core::{Device, Tensor};
use safetensors::tensor::TensorView;
use safetensors::{Dtype, SafeTensors};
use std::collections::HashMap;
use std::path::Path;

use super::{Adam, HarnessError};

pub const CHECKPOINT_SCHEMA: u32 = 1;

fn to_bytes(t: &Tensor) -> Result<Vec<u8>, HarnessError> {
    let flat: Vec<f32> = t
        .flatten_all()
        .map_err(crate::network::NetError::from)?
        .to_vec1()
        .map_err(crate::network::NetError::from)?;
    let mut bytes = Vec::with_capacity(flat.len() * 4);
    for v in flat {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    Ok(bytes)
}

fn from_view(view: &TensorView, device: &Device) -> Result<Tensor, HarnessError> {
    if view.dtype() != Dtype::F32 {
        return Err(HarnessError::Checkpoint(format!(
            "unsupported tensor dtype {:?}",
            view.dtype()
        )));
    }
    let data = view.data();
    let mut flat = Vec::with_capacity(data.len() / 4);
    for chunk in data.chunks_exact(4) {
        flat.push(f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]));
    }
    Ok(Tensor::from_vec(flat, view.shape().to_vec(), device)
        .map_err(crate::network::NetError::from)?)
}

/// Serializes the network (and optionally the optimizer) to `path`.
pub fn save_checkpoint(
    path: &Path,
    net: &Network,
    optimizer: Option<&Adam>,
    step: usize,
) -> Result<(), HarnessError> {
    let mut buffers: Vec<(String, Vec<usize>, Vec<u8>)> = Vec::new();
    for (name, var) in net.store().named_vars() {
        buffers.push((
            format!("param.{name}"),
            var.dims().to_vec(),
            to_bytes(var.as_tensor())?,
        ));
    }
    if let Some(opt) = optimizer {
        for (name, m, v) in opt.moments() {
            buffers.push((format!("opt_m.{name}"), m.dims().to_vec(), to_bytes(m)?));
            buffers.push((format!("opt_v.{name}"), v.dims().to_vec(), to_bytes(v)?));
        }
    }
    let views: Vec<(String, TensorView)> = buffers
        .iter()
        .map(|(name, dims, bytes)| {
            TensorView::new(Dtype::F32, dims.clone(), bytes)
                .map(|v| (name.clone(), v))
                .map_err(|e| HarnessError::Checkpoint(format!("tensor view {name}: {e}")))
        })
        .collect::<Result<_, _>>()?;

    let mut metadata = HashMap::new();
    metadata.insert("schema_version".to_string(), CHECKPOINT_SCHEMA.to_string());
    metadata.insert(
        "network_config".to_string(),
        serde_json::to_string(&net.config)?,
    );
    metadata.insert("step".to_string(), step.to_string());
    metadata.insert(
        "adam_t".to_string(),
        optimizer.map(|o| o.t()).unwrap_or(0).to_string(),
    );

    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    safetensors::serialize_to_file(views, Some(metadata), path)
        .map_err(|e| HarnessError::Checkpoint(format!("serialize {}: {e}", path.display())))?;
    Ok(())
}

/// Deserialized checkpoint contents.
pub struct Checkpoint {
    pub config: NetworkConfig,
    pub step: usize,
    pub adam_t: usize,
    pub params: HashMap<String, Tensor>,
    pub opt_m: HashMap<String, Tensor>,
    pub opt_v: HashMap<String, Tensor>,
}

pub fn load_checkpoint(path: &Path, device: &Device) -> Result<Checkpoint, HarnessError> {
    let bytes = std::fs::read(path)
        .map_err(|e| HarnessError::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
    let (_, meta) = SafeTensors::read_metadata(&bytes)
        .map_err(|e| HarnessError::Checkpoint(format!("read {}: {e}", path.display())))?;
    let metadata = meta
        .metadata()
        .clone()
        .ok_or_else(|| HarnessError::Checkpoint("checkpoint has no metadata".into()))?;
    let schema: u32 = metadata
        .get("schema_version")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| HarnessError::Checkpoint("missing schema_version".into()))?;
    if schema != CHECKPOINT_SCHEMA {
        return Err(HarnessError::Checkpoint(format!(
            "checkpoint schema {schema} does not match expected {CHECKPOINT_SCHEMA}"
        )));
    }
    let config: NetworkConfig = serde_json::from_str(
        metadata
            .get("network_config")
            .ok_or_else(|| HarnessError::Checkpoint("missing network_config".into()))?,
    )?;
    let step = metadata
        .get("step")
        .and_then(|s| s.parse().ok())
        .unwrap_or(0);
    let adam_t = metadata
        .get("adam_t")
        .and_then(|s| s.parse().ok())
        .unwrap_or(0);

    let st = SafeTensors::deserialize(&bytes)
        .map_err(|e| HarnessError::Checkpoint(format!("parse {}: {e}", path.display())))?;
    let mut params = HashMap::new();
    let mut opt_m = HashMap::new();
    let mut opt_v = HashMap::new();
    for (name, view) in st.tensors() {
        let tensor = from_view(&view, device)?;
        if let Some(stripped) = name.strip_prefix("param.") {
            params.insert(stripped.to_string(), tensor);
        } else if let Some(stripped) = name.strip_prefix("opt_m.") {
            opt_m.insert(stripped.to_string(), tensor);
        } else if let Some(stripped) = name.strip_prefix("opt_v.") {
            opt_v.insert(stripped.to_string(), tensor);
        }
    }
    Ok(Checkpoint {
        config,
        step,
        adam_t,
        params,
        opt_m,
        opt_v,
    })
}

/// Rebuilds a network from a checkpoint, restoring every parameter.
pub fn network_from_checkpoint(ckpt: &Checkpoint, device: &Device) -> Result<Network, HarnessError> {
    let mut net = Network::new(ckpt.config.clone(), device)?;
    net.store_mut().load(&ckpt.params)?;
    Ok(net)
}

/// Restores Adam moments recorded in a checkpoint.
pub fn adam_from_checkpoint(
    ckpt: &Checkpoint,
    store: &ParamStore,
    lr: f64,
    beta1: f64,
    beta2: f64,
) -> Result<Adam, HarnessError> {
    let mut adam = Adam::new(store, lr, beta1, beta2)?;
    if !ckpt.opt_m.is_empty() {
        adam.restore(store, &ckpt.opt_m, &ckpt.opt_v, ckpt.adam_t)?;
    }
    Ok(adam)
}
