use candle_core::Tensor;

use super::backbone::{Backbone, BackboneConfig};
use super::decoder::Decoder;
use super::layers::{softmax, Linear, Mode};
use super::params::ParamStore;
use super::vae::{check_image, concat_features, GaussianEncoder, LatentPair, Sampling};
use crate::error::{Error, Result};

pub struct SemiOutput {
    pub latent: LatentPair,
    pub probs: Tensor,
    pub z: Tensor,
    pub recon: Tensor,
}

/// Class-conditioned VAE: separate encoder and classifier trunks, decoder fed
/// `[z || y]`.
#[derive(Clone)]
pub struct M2 {
    pub encoder: GaussianEncoder,
    classifier: Backbone,
    classifier_head: Linear,
    pub decoder: Decoder,
    pub n_classes: usize,
    pub resolution: (usize, usize),
}

impl M2 {
    pub fn new(
        ps: &ParamStore,
        backbone: &BackboneConfig,
        latent: usize,
        n_classes: usize,
        resolution: (usize, usize),
    ) -> Result<Self> {
        Ok(M2 {
            encoder: GaussianEncoder::new(&ps.pp("encoder"), backbone, latent)?,
            classifier: Backbone::new(&ps.pp("classifier.backbone"), backbone)?,
            classifier_head: Linear::head(&ps.pp("classifier.fc"), backbone.feat_dim(), n_classes)?,
            decoder: Decoder::new(&ps.pp("decoder"), backbone, latent + n_classes, resolution)?,
            n_classes,
            resolution,
        })
    }

    pub fn classify(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let feat = self.classifier.forward(x, mode)?;
        softmax(&self.classifier_head.forward(&feat)?)
    }

    pub fn decode(&self, z: &Tensor, class_vector: &Tensor, mode: Mode) -> Result<Tensor> {
        if class_vector.dims().last() != Some(&self.n_classes) {
            return Err(Error::Config(format!(
                "class vector must have {} entries, got {:?}",
                self.n_classes,
                class_vector.dims()
            )));
        }
        self.decoder.forward(&concat_features(z, class_vector)?, mode)
    }

    /// Decode every `(sample, class)` pair: rows ordered sample-major, so row
    /// `b * C + c` reconstructs sample `b` conditioned on class `c`.
    pub fn decode_all_classes(&self, z: &Tensor, mode: Mode) -> Result<Tensor> {
        let (b, l) = z.dims2()?;
        let c = self.n_classes;
        let z_rep = z.unsqueeze(1)?.broadcast_as((b, c, l))?.reshape((b * c, l))?;
        let eye = Tensor::eye(c, z.dtype(), z.device())?;
        let y_rep = eye.unsqueeze(0)?.broadcast_as((b, c, c))?.reshape((b * c, c))?;
        self.decoder.forward(&concat_features(&z_rep, &y_rep)?, mode)
    }

    /// Forward pass; the decoder is conditioned on `class_vector` when given,
    /// otherwise on the classifier's own posterior.
    pub fn forward(
        &self,
        x: &Tensor,
        class_vector: Option<&Tensor>,
        sampling: Sampling,
        mode: Mode,
    ) -> Result<SemiOutput> {
        check_image(x, self.resolution)?;
        let (latent, _) = self.encoder.forward(x, mode)?;
        let probs = self.classify(x, mode)?;
        let z = sampling.latent(&latent)?;
        let recon = self.decode(&z, class_vector.unwrap_or(&probs), mode)?;
        Ok(SemiOutput {
            latent,
            probs,
            z,
            recon,
        })
    }

    /// Retrieval embedding `[mu || classifier posterior]`.
    pub fn embed(&self, x: &Tensor) -> Result<Tensor> {
        check_image(x, self.resolution)?;
        let (latent, _) = self.encoder.forward(x, Mode::Eval)?;
        concat_features(&latent.mu, &self.classify(x, Mode::Eval)?)
    }
}

/// VAE with a single softmax layer on the encoder trunk; the decoder sees `z` only.
#[derive(Clone)]
pub struct Ssvae {
    pub encoder: GaussianEncoder,
    classifier_head: Linear,
    pub decoder: Decoder,
    pub n_classes: usize,
    pub resolution: (usize, usize),
}

impl Ssvae {
    pub fn new(
        ps: &ParamStore,
        backbone: &BackboneConfig,
        latent: usize,
        n_classes: usize,
        resolution: (usize, usize),
    ) -> Result<Self> {
        Ok(Ssvae {
            encoder: GaussianEncoder::new(&ps.pp("encoder"), backbone, latent)?,
            classifier_head: Linear::head(&ps.pp("classifier"), backbone.feat_dim(), n_classes)?,
            decoder: Decoder::new(&ps.pp("decoder"), backbone, latent, resolution)?,
            n_classes,
            resolution,
        })
    }

    pub fn forward(&self, x: &Tensor, sampling: Sampling, mode: Mode) -> Result<SemiOutput> {
        check_image(x, self.resolution)?;
        let (latent, feat) = self.encoder.forward(x, mode)?;
        let probs = softmax(&self.classifier_head.forward(&feat)?)?;
        let z = sampling.latent(&latent)?;
        let recon = self.decoder.forward(&z, mode)?;
        Ok(SemiOutput {
            latent,
            probs,
            z,
            recon,
        })
    }

    /// Retrieval embedding: the posterior mean only.
    pub fn embed(&self, x: &Tensor) -> Result<Tensor> {
        check_image(x, self.resolution)?;
        Ok(self.encoder.forward(x, Mode::Eval)?.0.mu)
    }
}
