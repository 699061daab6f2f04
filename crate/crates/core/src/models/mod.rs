//! Network assemblies: VAE, M2, SSVAE, sketch-BYOL and the supervised baseline,
//! built from a swappable convolutional backbone.

mod backbone;
mod byol;
mod checkpoint;
mod decoder;
pub mod layers;
mod params;
mod semi;
mod supervised;
mod vae;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

pub use backbone::{Backbone, BackboneConfig, BackboneKind};
pub use byol::{Byol, ByolOutput, Mlp, ONLINE_PREFIXES, TARGET_PREFIX};
pub use checkpoint::{load_checkpoint, load_pretrained, read_header, save_checkpoint, CheckpointHeader};
pub use decoder::Decoder;
pub use layers::Mode;
pub use params::{Init, ParamStore};
pub use semi::{SemiOutput, Ssvae, M2};
pub use supervised::Supervised;
pub use vae::{
    reparameterize, reparameterize_with, sample_noise, GaussianEncoder, LatentPair, Sampling, Vae,
    VaeOutput,
};

use crate::data::{rasterize_default, Polarity, RasterSketch, StrokeSketch};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Vae,
    M2,
    Ssvae,
    Byol,
    Supervised,
}

impl ModelKind {
    pub fn polarity(self) -> Polarity {
        match self {
            ModelKind::Vae | ModelKind::M2 | ModelKind::Ssvae => Polarity::BinaryStroke0,
            ModelKind::Byol | ModelKind::Supervised => Polarity::Gray0255,
        }
    }

    pub fn default_resolution(self) -> usize {
        match self.polarity() {
            Polarity::BinaryStroke0 => 256,
            Polarity::Gray0255 => 224,
        }
    }

    pub fn is_generative(self) -> bool {
        self.polarity() == Polarity::BinaryStroke0
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = serde_json::to_value(self).unwrap();
        write!(f, "{}", s.as_str().unwrap())
    }
}

/// Everything needed to rebuild a network's parameter layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub model_kind: ModelKind,
    pub backbone: BackboneConfig,
    pub latent_dim: usize,
    pub n_classes: usize,
    /// Square input side; `None` selects 256 for VAE-family models and 224 otherwise.
    pub resolution: Option<usize>,
    pub proj_hidden: usize,
    pub proj_out: usize,
    pub tau: f64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            model_kind: ModelKind::Vae,
            backbone: BackboneConfig::default(),
            latent_dim: 32,
            n_classes: 128,
            resolution: None,
            proj_hidden: 4096,
            proj_out: 256,
            tau: 0.996,
        }
    }
}

impl ModelSpec {
    pub fn side(&self) -> usize {
        self.resolution
            .unwrap_or_else(|| self.model_kind.default_resolution())
    }

    pub fn resolution(&self) -> (usize, usize) {
        (self.side(), self.side())
    }

    pub fn polarity(&self) -> Polarity {
        self.model_kind.polarity()
    }

    pub fn embed_dim(&self) -> usize {
        match self.model_kind {
            ModelKind::Vae | ModelKind::Ssvae => self.latent_dim,
            ModelKind::M2 => self.latent_dim + self.n_classes,
            ModelKind::Byol | ModelKind::Supervised => self.backbone.feat_dim(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        if self.latent_dim == 0 || self.n_classes == 0 || self.side() == 0 {
            return Err(Error::Config("latent_dim, n_classes and resolution must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::Config(format!("tau {} outside [0, 1]", self.tau)));
        }
        Ok(())
    }

    /// Build the network with parameters drawn from `store`.
    pub fn build(&self, store: &ParamStore) -> Result<AnyModel> {
        self.validate()?;
        let res = self.resolution();
        let b = &self.backbone;
        Ok(match self.model_kind {
            ModelKind::Vae => AnyModel::Vae(Vae::new(store, b, self.latent_dim, res)?),
            ModelKind::M2 => AnyModel::M2(M2::new(store, b, self.latent_dim, self.n_classes, res)?),
            ModelKind::Ssvae => {
                AnyModel::Ssvae(Ssvae::new(store, b, self.latent_dim, self.n_classes, res)?)
            }
            ModelKind::Byol => AnyModel::Byol(Byol::new(
                store,
                b,
                self.proj_hidden,
                self.proj_out,
                self.tau,
                res,
            )?),
            ModelKind::Supervised => {
                AnyModel::Supervised(Supervised::new(store, b, self.n_classes, res)?)
            }
        })
    }

    /// Prefix under which the primary encoder trunk's parameters live.
    pub fn encoder_prefix(&self) -> &'static str {
        match self.model_kind {
            ModelKind::Vae | ModelKind::M2 | ModelKind::Ssvae => "encoder.backbone.",
            ModelKind::Byol => "online.encoder.",
            ModelKind::Supervised => "encoder.",
        }
    }
}

#[derive(Clone)]
pub enum AnyModel {
    Vae(Vae),
    M2(M2),
    Ssvae(Ssvae),
    Byol(Byol),
    Supervised(Supervised),
}

impl AnyModel {
    /// Evaluation-mode retrieval embedding of a `(B, 1, H, W)` batch.
    pub fn embed(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            AnyModel::Vae(m) => m.embed(x),
            AnyModel::M2(m) => m.embed(x),
            AnyModel::Ssvae(m) => m.embed(x),
            AnyModel::Byol(m) => m.embed(x),
            AnyModel::Supervised(m) => m.embed(x),
        }
    }
}

/// Rasterize sketches at the resolution and polarity `spec`'s network expects.
pub fn render_for(sketches: &[&StrokeSketch], spec: &ModelSpec) -> Vec<RasterSketch> {
    use rayon::prelude::*;
    let res = spec.resolution();
    let polarity = spec.polarity();
    sketches
        .par_iter()
        .map(|s| rasterize_default(s, res, polarity))
        .collect()
}

/// Network input: `(B, 1, H, W)` with strokes at 1 and background at 0.
pub fn images_to_tensor(images: &[&RasterSketch], dtype: DType, device: &Device) -> Result<Tensor> {
    let first = images
        .first()
        .ok_or_else(|| Error::Precondition("empty image batch".into()))?;
    let (h, w) = first.resolution();
    let mut data = Vec::with_capacity(images.len() * h * w);
    for img in images {
        if img.resolution() != (h, w) {
            return Err(Error::Config("images in a batch differ in resolution".into()));
        }
        data.extend(img.to_ink());
    }
    Ok(Tensor::from_vec(data, (images.len(), 1, h, w), device)?.to_dtype(dtype)?)
}

/// Reconstruction target: the binary raster itself (strokes 0, background 1).
pub fn images_to_target(images: &[&RasterSketch], dtype: DType, device: &Device) -> Result<Tensor> {
    let first = images
        .first()
        .ok_or_else(|| Error::Precondition("empty image batch".into()))?;
    let (h, w) = first.resolution();
    let mut data = Vec::with_capacity(images.len() * h * w);
    for img in images {
        if img.polarity != Polarity::BinaryStroke0 {
            return Err(Error::Config("reconstruction targets must be binary".into()));
        }
        data.extend(img.to_f32());
    }
    Ok(Tensor::from_vec(data, (images.len(), 1, h, w), device)?.to_dtype(dtype)?)
}
