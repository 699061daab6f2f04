use candle_core::{Tensor, D};
use rand_distr::{Distribution, StandardNormal};

use super::backbone::{Backbone, BackboneConfig};
use super::decoder::Decoder;
use super::layers::{Linear, Mode};
use super::params::ParamStore;
use crate::error::{Error, Result};
use crate::util::Rng;

/// Posterior mean and log-variance, `(B, latent)` each.
#[derive(Clone, Debug)]
pub struct LatentPair {
    pub mu: Tensor,
    pub logvar: Tensor,
}

impl LatentPair {
    pub fn new(mu: Tensor, logvar: Tensor) -> Result<Self> {
        if mu.dims() != logvar.dims() {
            return Err(Error::Config(format!(
                "mu {:?} and logvar {:?} differ in shape",
                mu.dims(),
                logvar.dims()
            )));
        }
        Ok(LatentPair { mu, logvar })
    }

    pub fn dim(&self) -> usize {
        self.mu.dims().last().copied().unwrap_or(0)
    }
}

/// Standard-normal noise of the given shape from a seeded stream.
pub fn sample_noise(shape: &[usize], like: &Tensor, rng: &mut Rng) -> Result<Tensor> {
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    Ok(Tensor::from_vec(v, shape, like.device())?.to_dtype(like.dtype())?)
}

/// `z = mu + exp(0.5 * logvar) * eps`.
pub fn reparameterize_with(lp: &LatentPair, eps: &Tensor) -> Result<Tensor> {
    let std = (&lp.logvar * 0.5)?.exp()?;
    Ok((&lp.mu + (std * eps)?)?)
}

pub fn reparameterize(lp: &LatentPair, rng: &mut Rng) -> Result<Tensor> {
    let eps = sample_noise(lp.mu.dims(), &lp.mu, rng)?;
    reparameterize_with(lp, &eps)
}

/// Latent sampling policy for a forward pass.
#[derive(Clone, Copy)]
pub enum Sampling<'a> {
    /// `z = mu`.
    Mean,
    /// Fixed noise tensor shaped like `mu`.
    Noise(&'a Tensor),
}

impl Sampling<'_> {
    pub fn latent(&self, lp: &LatentPair) -> Result<Tensor> {
        match self {
            Sampling::Mean => Ok(lp.mu.clone()),
            Sampling::Noise(eps) => reparameterize_with(lp, eps),
        }
    }
}

/// Encoder trunk with parallel mean / log-variance heads.
#[derive(Clone)]
pub struct GaussianEncoder {
    pub trunk: Backbone,
    fc_mu: Linear,
    fc_logvar: Linear,
}

impl GaussianEncoder {
    pub fn new(ps: &ParamStore, backbone: &BackboneConfig, latent: usize) -> Result<Self> {
        let feat = backbone.feat_dim();
        Ok(GaussianEncoder {
            trunk: Backbone::new(&ps.pp("backbone"), backbone)?,
            fc_mu: Linear::head(&ps.pp("fc_mu"), feat, latent)?,
            fc_logvar: Linear::head(&ps.pp("fc_logvar"), feat, latent)?,
        })
    }

    /// Returns the latent pair and the pooled trunk features.
    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<(LatentPair, Tensor)> {
        let feat = self.trunk.forward(x, mode)?;
        let lp = LatentPair::new(self.fc_mu.forward(&feat)?, self.fc_logvar.forward(&feat)?)?;
        Ok((lp, feat))
    }
}

pub(crate) fn check_image(x: &Tensor, resolution: (usize, usize)) -> Result<()> {
    let dims = x.dims();
    if dims.len() != 4 || dims[1] != 1 || (dims[2], dims[3]) != resolution {
        return Err(Error::Config(format!(
            "expected (B, 1, {}, {}) input, got {dims:?}",
            resolution.0, resolution.1
        )));
    }
    Ok(())
}

pub struct VaeOutput {
    pub latent: LatentPair,
    pub z: Tensor,
    pub recon: Tensor,
}

#[derive(Clone)]
pub struct Vae {
    pub encoder: GaussianEncoder,
    pub decoder: Decoder,
    pub resolution: (usize, usize),
}

impl Vae {
    pub fn new(
        ps: &ParamStore,
        backbone: &BackboneConfig,
        latent: usize,
        resolution: (usize, usize),
    ) -> Result<Self> {
        Ok(Vae {
            encoder: GaussianEncoder::new(&ps.pp("encoder"), backbone, latent)?,
            decoder: Decoder::new(&ps.pp("decoder"), backbone, latent, resolution)?,
            resolution,
        })
    }

    pub fn forward(&self, x: &Tensor, sampling: Sampling, mode: Mode) -> Result<VaeOutput> {
        check_image(x, self.resolution)?;
        let (latent, _) = self.encoder.forward(x, mode)?;
        let z = sampling.latent(&latent)?;
        let recon = self.decoder.forward(&z, mode)?;
        Ok(VaeOutput { latent, z, recon })
    }

    /// Retrieval embedding: the posterior mean.
    pub fn embed(&self, x: &Tensor) -> Result<Tensor> {
        check_image(x, self.resolution)?;
        Ok(self.encoder.forward(x, Mode::Eval)?.0.mu)
    }
}

/// Concatenate along the feature axis.
pub(crate) fn concat_features(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    Ok(Tensor::cat(&[a, b], D::Minus1)?)
}
