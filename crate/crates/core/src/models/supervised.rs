use candle_core::Tensor;

use super::backbone::{Backbone, BackboneConfig};
use super::layers::{Linear, Mode};
use super::params::ParamStore;
use super::vae::check_image;
use crate::error::Result;

/// Plain classifier; the embedding is the pooled penultimate feature vector.
#[derive(Clone)]
pub struct Supervised {
    trunk: Backbone,
    fc: Linear,
    pub resolution: (usize, usize),
}

impl Supervised {
    pub fn new(
        ps: &ParamStore,
        backbone: &BackboneConfig,
        n_classes: usize,
        resolution: (usize, usize),
    ) -> Result<Self> {
        Ok(Supervised {
            trunk: Backbone::new(&ps.pp("encoder"), backbone)?,
            fc: Linear::head(&ps.pp("fc"), backbone.feat_dim(), n_classes)?,
            resolution,
        })
    }

    /// Returns `(logits, embedding)`.
    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<(Tensor, Tensor)> {
        check_image(x, self.resolution)?;
        let feat = self.trunk.forward(x, mode)?;
        Ok((self.fc.forward(&feat)?, feat))
    }

    pub fn embed(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward(x, Mode::Eval)?.1)
    }
}
