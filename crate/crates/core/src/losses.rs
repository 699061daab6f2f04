//! Training objectives on batched tensors.
//!
//! Per-sample variants return a `(B,)` tensor; the unsuffixed variants average
//! over the batch. Every logarithm is taken of a probability clamped to
//! `[EPS, 1 - EPS]`.

use candle_core::{Tensor, D};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const EPS: f64 = 1e-7;

/// Which training-set size binds `N` in the labeled M2 objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum M2SizeSource {
    /// Number of records with visible labels.
    #[default]
    Labeled,
    /// All training records.
    All,
}

/// How the unlabeled M2 objective treats the unknown class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum M2Marginalization {
    /// Decode once per class and weight each loss by the posterior.
    #[default]
    Exact,
    /// Decode once, conditioned on the posterior itself.
    SoftLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    /// KLD weight.
    pub beta: f64,
    /// SSVAE classification weight.
    pub alpha: f64,
    /// Coefficient of `N * CE` in the labeled M2 objective.
    pub m2_ce_scale: f64,
    /// `N` for the labeled M2 objective; filled from the split when absent.
    pub n_train: Option<usize>,
    pub m2_n_source: M2SizeSource,
    /// Sign on the entropy term of the unlabeled M2 objective.
    pub m2_entropy_sign: f64,
    pub m2_marginalization: M2Marginalization,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            beta: 0.1,
            alpha: 0.1,
            m2_ce_scale: 0.1,
            n_train: None,
            m2_n_source: M2SizeSource::Labeled,
            m2_entropy_sign: 1.0,
            m2_marginalization: M2Marginalization::Exact,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.beta < 0.0 || self.alpha < 0.0 || self.m2_ce_scale < 0.0 {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        if self.n_train == Some(0) {
            return Err(Error::Config("n_train must be at least 1".into()));
        }
        if self.m2_entropy_sign.abs() != 1.0 {
            return Err(Error::Config("m2_entropy_sign must be +1 or -1".into()));
        }
        Ok(())
    }

    pub fn n_train(&self) -> Result<usize> {
        self.n_train
            .ok_or_else(|| Error::Config("n_train has not been set".into()))
    }
}

fn check_same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Config(format!(
            "{what}: shapes {:?} and {:?} differ",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}

fn sum_per_sample(x: &Tensor) -> Result<Tensor> {
    let b = x.dim(0)?;
    Ok(x.reshape((b, ()))?.sum(1)?)
}

fn clamp_prob(p: &Tensor) -> Result<Tensor> {
    Ok(p.clamp(EPS, 1.0 - EPS)?)
}

/// `-sum_pixels [t ln p + (1 - t) ln(1 - p)]` per sample.
pub fn bce_per_sample(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    check_same_shape(pred, target, "binary cross-entropy")?;
    let p = clamp_prob(pred)?;
    let one_minus_t = target.affine(-1.0, 1.0)?;
    let one_minus_p = p.affine(-1.0, 1.0)?;
    let ll = ((target * p.log()?)? + (one_minus_t * one_minus_p.log()?)?)?;
    sum_per_sample(&ll.neg()?)
}

/// Pixel-summed, batch-averaged binary cross-entropy.
pub fn bce_reconstruction(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    Ok(bce_per_sample(pred, target)?.mean_all()?)
}

/// `-0.5 * sum_d (1 + logvar - mu^2 - exp(logvar))` per sample.
pub fn kld_per_sample(mu: &Tensor, logvar: &Tensor) -> Result<Tensor> {
    check_same_shape(mu, logvar, "KL divergence")?;
    let inner = ((logvar.affine(1.0, 1.0)? - mu.sqr()?)? - logvar.exp()?)?;
    Ok((sum_per_sample(&inner)? * -0.5)?)
}

pub fn kld(mu: &Tensor, logvar: &Tensor) -> Result<Tensor> {
    Ok(kld_per_sample(mu, logvar)?.mean_all()?)
}

pub fn vae_loss_per_sample(
    pred: &Tensor,
    target: &Tensor,
    mu: &Tensor,
    logvar: &Tensor,
    w: &LossWeights,
) -> Result<Tensor> {
    Ok((bce_per_sample(pred, target)? + (kld_per_sample(mu, logvar)? * w.beta)?)?)
}

/// Reconstruction plus `beta`-weighted KLD.
pub fn vae_loss(
    pred: &Tensor,
    target: &Tensor,
    mu: &Tensor,
    logvar: &Tensor,
    w: &LossWeights,
) -> Result<Tensor> {
    Ok(vae_loss_per_sample(pred, target, mu, logvar, w)?.mean_all()?)
}

/// `-ln probs[y]` per sample, with `y` given as one-hot rows.
pub fn cross_entropy_per_sample(one_hot: &Tensor, probs: &Tensor) -> Result<Tensor> {
    check_same_shape(one_hot, probs, "cross-entropy")?;
    let picked = (one_hot * probs)?.sum(D::Minus1)?;
    Ok(clamp_prob(&picked)?.log()?.neg()?)
}

pub fn cross_entropy(one_hot: &Tensor, probs: &Tensor) -> Result<Tensor> {
    Ok(cross_entropy_per_sample(one_hot, probs)?.mean_all()?)
}

/// `-sum_c p_c ln p_c` per sample, with `0 ln 0 = 0`.
pub fn entropy_per_sample(probs: &Tensor) -> Result<Tensor> {
    let plogp = (probs * probs.clamp(EPS, 1.0)?.log()?)?;
    Ok(plogp.sum(D::Minus1)?.neg()?)
}

pub fn entropy(probs: &Tensor) -> Result<Tensor> {
    Ok(entropy_per_sample(probs)?.mean_all()?)
}

/// Labeled M2 objective: `L + scale * N * CE(y, probs)`, averaged over the batch.
///
/// `generative` is the per-sample VAE loss with the true one-hot label fed to
/// the decoder.
pub fn m2_labeled_loss(
    generative: &Tensor,
    one_hot: &Tensor,
    probs: &Tensor,
    w: &LossWeights,
) -> Result<Tensor> {
    let coeff = w.m2_ce_scale * w.n_train()? as f64;
    let ce = cross_entropy_per_sample(one_hot, probs)?;
    Ok((generative + (ce * coeff)?)?.mean_all()?)
}

/// Unlabeled M2 objective `sum_c probs_c * L_c + H(probs)`, averaged over the batch.
///
/// `per_class_generative` is `(B, C)`: entry `(b, c)` is sample `b`'s VAE loss
/// with class `c` fed to the decoder.
pub fn m2_unlabeled_loss(
    per_class_generative: &Tensor,
    probs: &Tensor,
    w: &LossWeights,
) -> Result<Tensor> {
    check_same_shape(per_class_generative, probs, "M2 unlabeled loss")?;
    let expected = (probs * per_class_generative)?.sum(D::Minus1)?;
    let h = entropy_per_sample(probs)?;
    Ok((expected + (h * w.m2_entropy_sign)?)?.mean_all()?)
}

/// SSVAE objective. Labeled rows add `alpha * CE`; pass `None` for an unlabeled batch.
pub fn ssvae_loss(
    pred: &Tensor,
    target: &Tensor,
    mu: &Tensor,
    logvar: &Tensor,
    one_hot: Option<&Tensor>,
    probs: &Tensor,
    w: &LossWeights,
) -> Result<Tensor> {
    let base = vae_loss_per_sample(pred, target, mu, logvar, w)?;
    let total = match one_hot {
        Some(y) => (base + (cross_entropy_per_sample(y, probs)? * w.alpha)?)?,
        None => base,
    };
    Ok(total.mean_all()?)
}

fn l2_normalize(x: &Tensor) -> Result<Tensor> {
    let norm = x.sqr()?.sum_keepdim(D::Minus1)?.affine(1.0, 1e-24)?.sqrt()?;
    Ok(x.broadcast_div(&norm)?)
}

/// `||p - t||^2` between L2-normalized rows, per sample. `t` is detached.
pub fn normalized_sq_distance(pred: &Tensor, targ: &Tensor) -> Result<Tensor> {
    check_same_shape(pred, targ, "BYOL regression")?;
    let diff = (l2_normalize(pred)? - l2_normalize(&targ.detach())?)?;
    Ok(diff.sqr()?.sum(D::Minus1)?)
}

/// Symmetrized BYOL regression loss, averaged over the batch. Targets carry no gradient.
pub fn byol_loss(
    pred_a: &Tensor,
    targ_b: &Tensor,
    pred_b: &Tensor,
    targ_a: &Tensor,
) -> Result<Tensor> {
    let ab = normalized_sq_distance(pred_a, targ_b)?;
    let ba = normalized_sq_distance(pred_b, targ_a)?;
    Ok((ab + ba)?.mean_all()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{Device, Var};

    fn t1(v: &[f64]) -> Tensor {
        Tensor::new(v, &Device::Cpu).unwrap().unsqueeze(0).unwrap()
    }

    fn scalar(t: Tensor) -> f64 {
        t.to_scalar::<f64>().unwrap()
    }

    fn weights(n: usize) -> LossWeights {
        LossWeights {
            n_train: Some(n),
            ..LossWeights::default()
        }
    }

    #[test]
    fn bce_examples() {
        assert!((scalar(bce_reconstruction(&t1(&[0.5]), &t1(&[1.0])).unwrap()) - 2f64.ln()).abs() < 1e-9);
        let two = scalar(bce_reconstruction(&t1(&[0.5, 0.5]), &t1(&[1.0, 0.0])).unwrap());
        assert!((two - 2.0 * 2f64.ln()).abs() < 1e-9);
        let perfect = scalar(bce_reconstruction(&t1(&[1.0, 0.0, 1.0]), &t1(&[1.0, 0.0, 1.0])).unwrap());
        assert!(perfect / 3.0 <= 1e-5);
    }

    #[test]
    fn bce_averages_over_batch() {
        let pred = Tensor::new(&[[0.5f64, 0.5], [0.5, 0.5]], &Device::Cpu).unwrap();
        let targ = Tensor::new(&[[1.0f64, 0.0], [1.0, 1.0]], &Device::Cpu).unwrap();
        let v = scalar(bce_reconstruction(&pred, &targ).unwrap());
        assert!((v - 2.0 * 2f64.ln()).abs() < 1e-9);
        assert!(bce_reconstruction(&pred, &t1(&[1.0])).is_err());
    }

    #[test]
    fn kld_examples() {
        assert_eq!(scalar(kld(&t1(&[0.0, 0.0]), &t1(&[0.0, 0.0])).unwrap()), 0.0);
        assert!((scalar(kld(&t1(&[1.0]), &t1(&[0.0])).unwrap()) - 0.5).abs() < 1e-12);
        assert!((scalar(kld(&t1(&[1.0, 1.0]), &t1(&[0.0, 0.0])).unwrap()) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn vae_loss_combines_terms() {
        // bce = 2 ln 2 with zero KLD
        let v = scalar(
            vae_loss(&t1(&[0.5, 0.5]), &t1(&[1.0, 0.0]), &t1(&[0.0]), &t1(&[0.0]), &weights(1))
                .unwrap(),
        );
        assert!((v - 2.0 * 2f64.ln()).abs() < 1e-9);
        // perfect reconstruction leaves beta * kld = 0.1 * 0.5
        let v = scalar(vae_loss(&t1(&[1.0]), &t1(&[1.0]), &t1(&[1.0]), &t1(&[0.0]), &weights(1)).unwrap());
        assert!((v - 0.05).abs() < 1e-5);
    }

    #[test]
    fn cross_entropy_examples() {
        let uniform = vec![1.0 / 128.0; 128];
        let mut onehot = vec![0.0; 128];
        onehot[17] = 1.0;
        let v = scalar(cross_entropy(&t1(&onehot), &t1(&uniform)).unwrap());
        assert!((v - 128f64.ln()).abs() < 1e-9);
        assert!((v - 4.8520).abs() < 1e-4);
        assert!(scalar(cross_entropy(&t1(&onehot), &t1(&onehot)).unwrap()) <= 1e-5);
        let v = scalar(cross_entropy(&t1(&[0.0, 1.0, 0.0]), &t1(&[0.5, 0.25, 0.25])).unwrap());
        assert!((v - 4f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn entropy_examples() {
        assert!(scalar(entropy(&t1(&[0.0, 1.0, 0.0])).unwrap()).abs() < 1e-12);
        assert!((scalar(entropy(&t1(&[0.5, 0.5])).unwrap()) - 2f64.ln()).abs() < 1e-12);
        let c = 10;
        assert!((scalar(entropy(&t1(&vec![0.1; c])).unwrap()) - (c as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn m2_examples() {
        // L = 1, CE = 2 (probs[y] = e^-2), N = 1000
        let p = (-2f64).exp();
        let probs = t1(&[p, 1.0 - p]);
        let v = scalar(m2_labeled_loss(&Tensor::new(&[1.0f64], &Device::Cpu).unwrap(), &t1(&[1.0, 0.0]), &probs, &weights(1000)).unwrap());
        assert!((v - 201.0).abs() < 1e-9);
        let u = scalar(m2_unlabeled_loss(&t1(&[2.0, 4.0]), &t1(&[0.5, 0.5]), &weights(1)).unwrap());
        assert!((u - (3.0 + 2f64.ln())).abs() < 1e-12);
        let u = scalar(m2_unlabeled_loss(&t1(&[2.0, 4.0, 9.0]), &t1(&[0.0, 0.0, 1.0]), &weights(1)).unwrap());
        assert!((u - 9.0).abs() < 1e-12);
    }

    #[test]
    fn m2_n_missing_is_config_error() {
        let err = m2_labeled_loss(
            &Tensor::new(&[1.0f64], &Device::Cpu).unwrap(),
            &t1(&[1.0, 0.0]),
            &t1(&[0.5, 0.5]),
            &LossWeights::default(),
        );
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn ssvae_examples() {
        // choose inputs with bce = 1, kld = 2, CE = 3
        let pred = t1(&[(-1f64).exp()]);
        let target = t1(&[1.0]);
        let mu = t1(&[2.0]);
        let logvar = t1(&[0.0]);
        let probs = t1(&[(-3f64).exp(), 1.0 - (-3f64).exp()]);
        let y = t1(&[1.0, 0.0]);
        let w = weights(1);
        let labeled = scalar(ssvae_loss(&pred, &target, &mu, &logvar, Some(&y), &probs, &w).unwrap());
        assert!((labeled - 1.5).abs() < 1e-9, "{labeled}");
        let unlabeled = scalar(ssvae_loss(&pred, &target, &mu, &logvar, None, &probs, &w).unwrap());
        let vae = scalar(vae_loss(&pred, &target, &mu, &logvar, &w).unwrap());
        assert_eq!(unlabeled, vae);
        let w0 = LossWeights { alpha: 0.0, ..w };
        let a0 = scalar(ssvae_loss(&pred, &target, &mu, &logvar, Some(&y), &probs, &w0).unwrap());
        assert_eq!(a0, unlabeled);
    }

    #[test]
    fn byol_examples() {
        let a = t1(&[1.0, 2.0, 3.0]);
        let a2 = t1(&[2.0, 4.0, 6.0]);
        assert!(scalar(byol_loss(&a, &a2, &a2, &a).unwrap()).abs() < 1e-12);
        let x = t1(&[1.0, 0.0]);
        let y = t1(&[0.0, 3.0]);
        assert!((scalar(byol_loss(&x, &y, &y, &x).unwrap()) - 4.0).abs() < 1e-12);
        let s = 3f64.sqrt() / 2.0;
        let p = t1(&[1.0, 0.0]);
        let q = t1(&[0.5, s]);
        // one pair at 60 degrees, the other aligned
        assert!((scalar(byol_loss(&p, &q, &p, &p).unwrap()) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn byol_targets_get_no_gradient() {
        let dev = Device::Cpu;
        let pa = Var::new(&[[0.3f64, -1.0, 2.0]], &dev).unwrap();
        let tb = Var::new(&[[1.0f64, 0.5, 0.1]], &dev).unwrap();
        let pb = Var::new(&[[-0.2f64, 0.7, 0.9]], &dev).unwrap();
        let ta = Var::new(&[[0.4f64, 0.4, -2.0]], &dev).unwrap();
        let loss = byol_loss(pa.as_tensor(), tb.as_tensor(), pb.as_tensor(), ta.as_tensor()).unwrap();
        let grads = loss.backward().unwrap();
        assert!(grads.get(tb.as_tensor()).is_none());
        assert!(grads.get(ta.as_tensor()).is_none());
        let g = grads.get(pa.as_tensor()).unwrap().sqr().unwrap().sum_all().unwrap();
        assert!(scalar(g) > 0.0);
    }
}
