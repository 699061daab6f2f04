use std::collections::BTreeMap;

use candle_core::{DType, Tensor, Var, D};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rayon::prelude::*;

use super::config::OptimizerConfig;
use crate::augment::{make_view_pair, AugmentationConfig};
use crate::data::{RasterSketch, StrokeSketch};
use crate::error::{Error, Result};
use crate::losses::{
    bce_per_sample, bce_reconstruction, byol_loss, entropy_per_sample, kld, kld_per_sample,
    m2_labeled_loss, m2_unlabeled_loss, ssvae_loss, vae_loss_per_sample, LossWeights,
    M2Marginalization,
};
use crate::models::layers::log_softmax;
use crate::models::{
    images_to_tensor, reparameterize_with, Byol, LatentPair, Mode, Sampling, Ssvae, Supervised,
    Vae, M2,
};
use crate::util::derived_rng;

/// One batch for a generative model. `eps` is the reparameterization noise.
pub struct GenBatch {
    pub x: Tensor,
    pub target: Tensor,
    pub eps: Tensor,
    pub one_hot: Option<Tensor>,
}

/// Scalar loss graph plus its named parts.
pub struct StepLoss {
    pub total: Tensor,
    pub components: Vec<(&'static str, Tensor)>,
}

pub fn scalar_f64(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

impl StepLoss {
    pub fn values(&self) -> Result<(f64, BTreeMap<String, f64>)> {
        let mut parts = BTreeMap::new();
        for (name, t) in &self.components {
            parts.insert(name.to_string(), scalar_f64(t)?);
        }
        Ok((scalar_f64(&self.total)?, parts))
    }
}

pub fn vae_step_loss(m: &Vae, b: &GenBatch, w: &LossWeights, mode: Mode) -> Result<StepLoss> {
    let out = m.forward(&b.x, Sampling::Noise(&b.eps), mode)?;
    let bce = bce_reconstruction(&out.recon, &b.target)?;
    let kl = kld(&out.latent.mu, &out.latent.logvar)?;
    let total = (&bce + (&kl * w.beta)?)?;
    Ok(StepLoss {
        total,
        components: vec![("bce", bce), ("kld", kl)],
    })
}

/// SSVAE loss; the classifier term applies when the batch carries labels.
pub fn ssvae_step_loss(m: &Ssvae, b: &GenBatch, w: &LossWeights, mode: Mode) -> Result<StepLoss> {
    let out = m.forward(&b.x, Sampling::Noise(&b.eps), mode)?;
    let total = ssvae_loss(
        &out.recon,
        &b.target,
        &out.latent.mu,
        &out.latent.logvar,
        b.one_hot.as_ref(),
        &out.probs,
        w,
    )?;
    Ok(StepLoss {
        total,
        components: Vec::new(),
    })
}

/// Labeled M2 loss with the true class fed to the decoder.
pub fn m2_labeled_step_loss(m: &M2, b: &GenBatch, w: &LossWeights, mode: Mode) -> Result<StepLoss> {
    let one_hot = b
        .one_hot
        .as_ref()
        .ok_or_else(|| Error::Precondition("labeled M2 batch without labels".into()))?;
    let out = m.forward(&b.x, Some(one_hot), Sampling::Noise(&b.eps), mode)?;
    let gen = vae_loss_per_sample(&out.recon, &b.target, &out.latent.mu, &out.latent.logvar, w)?;
    let total = m2_labeled_loss(&gen, one_hot, &out.probs, w)?;
    Ok(StepLoss {
        total,
        components: Vec::new(),
    })
}

/// `(B, C)` matrix of per-sample VAE losses with each class fed to the decoder.
pub fn m2_per_class_generative(
    m: &M2,
    latent: &LatentPair,
    z: &Tensor,
    target: &Tensor,
    w: &LossWeights,
    mode: Mode,
) -> Result<Tensor> {
    let b = target.dim(0)?;
    let c = m.n_classes;
    let recon = m.decode_all_classes(z, mode)?;
    let mut rep_shape = vec![b, c];
    rep_shape.extend_from_slice(&target.dims()[1..]);
    let mut flat_shape = vec![b * c];
    flat_shape.extend_from_slice(&target.dims()[1..]);
    let target_rep = target.unsqueeze(1)?.broadcast_as(rep_shape)?.reshape(flat_shape)?;
    let bce = bce_per_sample(&recon, &target_rep)?.reshape((b, c))?;
    let kl = kld_per_sample(&latent.mu, &latent.logvar)?;
    Ok(bce.broadcast_add(&(kl * w.beta)?.unsqueeze(1)?)?)
}

/// Unlabeled M2 loss, marginalizing the class per the configured mode.
pub fn m2_unlabeled_step_loss(
    m: &M2,
    b: &GenBatch,
    w: &LossWeights,
    mode: Mode,
) -> Result<StepLoss> {
    let (latent, _) = m.encoder.forward(&b.x, mode)?;
    let probs = m.classify(&b.x, mode)?;
    let z = reparameterize_with(&latent, &b.eps)?;
    let total = match w.m2_marginalization {
        M2Marginalization::Exact => {
            let per_class = m2_per_class_generative(m, &latent, &z, &b.target, w, mode)?;
            m2_unlabeled_loss(&per_class, &probs, w)?
        }
        M2Marginalization::SoftLabel => {
            let recon = m.decode(&z, &probs, mode)?;
            let gen = vae_loss_per_sample(&recon, &b.target, &latent.mu, &latent.logvar, w)?;
            let h = entropy_per_sample(&probs)?;
            (gen + (h * w.m2_entropy_sign)?)?.mean_all()?
        }
    };
    Ok(StepLoss {
        total,
        components: Vec::new(),
    })
}

/// Semi-supervised model handled by [`semi_batch_step`].
#[derive(Clone, Copy)]
pub enum SemiModel<'a> {
    M2(&'a M2),
    Ssvae(&'a Ssvae),
}

/// Sum of the labeled and unlabeled objectives for one labeled and one
/// unlabeled batch. Either batch may be absent, not both.
pub fn semi_batch_step(
    model: SemiModel<'_>,
    labeled: Option<&GenBatch>,
    unlabeled: Option<&GenBatch>,
    w: &LossWeights,
    mode: Mode,
) -> Result<StepLoss> {
    let mut components = Vec::new();
    let mut total: Option<Tensor> = None;
    if let Some(b) = labeled {
        let l = match model {
            SemiModel::M2(m) => m2_labeled_step_loss(m, b, w, mode)?,
            SemiModel::Ssvae(m) => ssvae_step_loss(m, b, w, mode)?,
        };
        components.push(("labeled", l.total.clone()));
        total = Some(l.total);
    }
    if let Some(b) = unlabeled {
        if b.one_hot.is_some() {
            return Err(Error::Precondition("unlabeled batch carries labels".into()));
        }
        let u = match model {
            SemiModel::M2(m) => m2_unlabeled_step_loss(m, b, w, mode)?,
            SemiModel::Ssvae(m) => ssvae_step_loss(m, b, w, mode)?,
        };
        components.push(("unlabeled", u.total.clone()));
        total = Some(match total {
            Some(t) => (t + u.total)?,
            None => u.total,
        });
    }
    let total = total.ok_or_else(|| Error::Precondition("semi-supervised step without data".into()))?;
    Ok(StepLoss { total, components })
}

/// Softmax cross-entropy of the supervised classifier.
pub fn supervised_step_loss(
    m: &Supervised,
    x: &Tensor,
    one_hot: &Tensor,
    mode: Mode,
) -> Result<StepLoss> {
    let (logits, _) = m.forward(x, mode)?;
    let ce = (one_hot * log_softmax(&logits)?)?.sum(D::Minus1)?.neg()?.mean_all()?;
    Ok(StepLoss {
        total: ce.clone(),
        components: vec![("ce", ce)],
    })
}

pub fn byol_step_loss(m: &Byol, view_a: &Tensor, view_b: &Tensor, mode: Mode) -> Result<StepLoss> {
    let out = m.forward(view_a, view_b, mode)?;
    let total = byol_loss(&out.pred_a, &out.targ_b, &out.pred_b, &out.targ_a)?;
    Ok(StepLoss {
        total,
        components: Vec::new(),
    })
}

/// Two augmented views per sketch. Sketch `i` draws from its own random
/// stream derived from `(seed, tag, i)`, so the result does not depend on
/// how the work is scheduled across threads.
pub fn make_view_batch(
    sketches: &[&StrokeSketch],
    aug: &AugmentationConfig,
    resolution: (usize, usize),
    seed: u64,
    tag: &str,
) -> (Vec<RasterSketch>, Vec<RasterSketch>) {
    sketches
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let mut rng = derived_rng(seed, &format!("{tag}/{i}"));
            make_view_pair(s, aug, resolution, &mut rng)
        })
        .unzip()
}

/// Gradient-based optimizer over a fixed set of variables.
pub struct Optim {
    inner: AdamW,
}

impl Optim {
    pub fn new(vars: Vec<Var>, cfg: &OptimizerConfig) -> Result<Self> {
        let params = ParamsAdamW {
            lr: cfg.lr,
            weight_decay: cfg.weight_decay,
            ..ParamsAdamW::default()
        };
        Ok(Optim {
            inner: AdamW::new(vars, params)?,
        })
    }

    pub fn step(&mut self, loss: &Tensor) -> Result<()> {
        Ok(self.inner.backward_step(loss)?)
    }
}

/// Views -> BYOL forward -> loss -> online gradient step -> target EMA.
/// Returns the loss before the update.
pub fn byol_step(
    m: &Byol,
    opt: &mut Optim,
    sketches: &[&StrokeSketch],
    aug: &AugmentationConfig,
    seed: u64,
    tag: &str,
) -> Result<StepLoss> {
    let (a, b) = make_view_batch(sketches, aug, m.resolution, seed, tag);
    let dtype = m.dtype();
    let device = m.device();
    let va = images_to_tensor(&a.iter().collect::<Vec<_>>(), dtype, &device)?;
    let vb = images_to_tensor(&b.iter().collect::<Vec<_>>(), dtype, &device)?;
    let loss = byol_step_loss(m, &va, &vb, Mode::Train)?;
    opt.step(&loss.total)?;
    m.ema_update()?;
    Ok(loss)
}
