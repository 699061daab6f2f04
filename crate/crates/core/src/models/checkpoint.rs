use std::collections::HashMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use safetensors::tensor::{Dtype as StDtype, TensorView};
use safetensors::SafeTensors;
use serde::{Deserialize, Serialize};

use super::backbone::BackboneKind;
use super::params::ParamStore;
use super::{AnyModel, ModelKind, ModelSpec};
use crate::error::{Error, Result};

const HEADER_KEY: &str = "sketchssl_header";

/// JSON header stored in the checkpoint's safetensors metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub model_kind: ModelKind,
    pub backbone: BackboneKind,
    pub latent_dim: usize,
    pub embed_dim: usize,
    pub tau: f64,
    pub config_hash: String,
    pub seed: u64,
    pub spec: ModelSpec,
    pub manifest_hash: String,
    pub pretrained_loaded: bool,
    pub epoch: usize,
    pub train_loss: Option<f64>,
    pub bce_reduction: String,
}

impl CheckpointHeader {
    pub fn new(spec: &ModelSpec, config_hash: &str, seed: u64, manifest_hash: &str) -> Self {
        CheckpointHeader {
            model_kind: spec.model_kind,
            backbone: spec.backbone.kind,
            latent_dim: spec.latent_dim,
            embed_dim: spec.embed_dim(),
            tau: spec.tau,
            config_hash: config_hash.to_string(),
            seed,
            spec: spec.clone(),
            manifest_hash: manifest_hash.to_string(),
            pretrained_loaded: false,
            epoch: 0,
            train_loss: None,
            bce_reduction: "sum_pixels_mean_batch".into(),
        }
    }
}

fn tensor_bytes(t: &Tensor) -> Result<(StDtype, Vec<u8>)> {
    let flat = t.flatten_all()?;
    Ok(match t.dtype() {
        DType::F64 => (
            StDtype::F64,
            flat.to_vec1::<f64>()?.iter().flat_map(|v| v.to_le_bytes()).collect(),
        ),
        _ => (
            StDtype::F32,
            flat.to_dtype(DType::F32)?
                .to_vec1::<f32>()?
                .iter()
                .flat_map(|v| v.to_le_bytes())
                .collect(),
        ),
    })
}

/// Write every entry of `store` plus the JSON header to one safetensors file.
pub fn save_checkpoint(path: &Path, store: &ParamStore, header: &CheckpointHeader) -> Result<()> {
    let all = store.all();
    let mut owned = Vec::with_capacity(all.len());
    for (name, var) in &all {
        let (dtype, bytes) = tensor_bytes(var.as_tensor())?;
        owned.push((name.clone(), dtype, var.dims().to_vec(), bytes));
    }
    let views = owned
        .iter()
        .map(|(name, dtype, shape, bytes)| {
            TensorView::new(*dtype, shape.clone(), bytes)
                .map(|v| (name.clone(), v))
                .map_err(|e| Error::Checkpoint(e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut metadata = HashMap::new();
    metadata.insert(HEADER_KEY.to_string(), serde_json::to_string(header)?);
    let bytes = safetensors::serialize(views, Some(metadata))
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    crate::util::write_file(path, &bytes)
}

fn view_to_tensor(view: &TensorView<'_>, device: &Device) -> Result<Tensor> {
    let shape = view.shape().to_vec();
    let data = view.data();
    Ok(match view.dtype() {
        StDtype::F32 => {
            let v: Vec<f32> = data
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            Tensor::from_vec(v, shape, device)?
        }
        StDtype::F64 => {
            let v: Vec<f64> = data
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            Tensor::from_vec(v, shape, device)?
        }
        other => {
            return Err(Error::Checkpoint(format!("unsupported tensor dtype {other:?}")));
        }
    })
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn read_header(path: &Path) -> Result<CheckpointHeader> {
    let bytes = read_file(path)?;
    header_from_bytes(&bytes)
}

fn header_from_bytes(bytes: &[u8]) -> Result<CheckpointHeader> {
    let (_, meta) =
        SafeTensors::read_metadata(bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let text = meta
        .metadata()
        .as_ref()
        .and_then(|m| m.get(HEADER_KEY))
        .ok_or_else(|| Error::Checkpoint("file has no checkpoint header".into()))?;
    Ok(serde_json::from_str(text)?)
}

/// Rebuild the model described by the header and fill in every parameter.
pub fn load_checkpoint(
    path: &Path,
    dtype: DType,
    device: &Device,
) -> Result<(AnyModel, ParamStore, CheckpointHeader)> {
    let bytes = read_file(path)?;
    let header = header_from_bytes(&bytes)?;
    let tensors = SafeTensors::deserialize(&bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let store = ParamStore::new(dtype, device, header.seed);
    let model = header.spec.build(&store)?;
    for (name, var) in store.all() {
        let view = tensors
            .tensor(&name)
            .map_err(|_| Error::Checkpoint(format!("checkpoint lacks parameter {name}")))?;
        if view.shape() != var.dims() {
            return Err(Error::Checkpoint(format!(
                "parameter {name}: checkpoint shape {:?}, model shape {:?}",
                view.shape(),
                var.dims()
            )));
        }
        var.set(&view_to_tensor(&view, device)?.to_dtype(dtype)?)?;
    }
    Ok((model, store, header))
}

/// Copy torchvision-named encoder weights into the parameters under `prefix`.
///
/// Entries are matched by name after the prefix; a 3-channel first convolution
/// is folded onto the single sketch channel by summing over input channels.
/// Returns the number of tensors loaded.
pub fn load_pretrained(path: &Path, store: &ParamStore, prefix: &str) -> Result<usize> {
    let bytes = read_file(path)?;
    let tensors = SafeTensors::deserialize(&bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut loaded = 0;
    for (name, view) in tensors.tensors() {
        let Some(var) = store.get(&format!("{prefix}{name}")) else {
            continue;
        };
        let mut t = view_to_tensor(&view, store.device())?;
        if t.rank() == 4 && t.dim(1)? == 3 && var.dims().get(1) == Some(&1) {
            t = t.sum_keepdim(1)?;
        }
        if t.dims() != var.dims() {
            log::warn!("pretrained {name}: shape {:?} does not fit {:?}", t.dims(), var.dims());
            continue;
        }
        var.set(&t.to_dtype(store.dtype())?)?;
        loaded += 1;
    }
    if loaded == 0 {
        return Err(Error::Checkpoint(format!(
            "{} contains no tensors matching the encoder",
            path.display()
        )));
    }
    Ok(loaded)
}
