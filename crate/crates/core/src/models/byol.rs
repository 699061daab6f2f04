use candle_core::{DType, Device, Tensor, Var};

use super::backbone::{Backbone, BackboneConfig};
use super::layers::{relu, BatchNorm, Linear, Mode};
use super::params::ParamStore;
use super::vae::check_image;
use crate::error::{Error, Result};

/// `fc -> batch norm -> ReLU -> fc`.
#[derive(Clone)]
pub struct Mlp {
    fc1: Linear,
    bn: BatchNorm,
    fc2: Linear,
}

impl Mlp {
    pub fn new(ps: &ParamStore, in_dim: usize, hidden: usize, out: usize) -> Result<Self> {
        Ok(Mlp {
            fc1: Linear::new(&ps.pp("fc1"), in_dim, hidden)?,
            bn: BatchNorm::new(&ps.pp("bn"), hidden)?,
            fc2: Linear::head(&ps.pp("fc2"), hidden, out)?,
        })
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let h = relu(&self.bn.forward(&self.fc1.forward(x)?, mode)?)?;
        self.fc2.forward(&h)
    }
}

#[derive(Clone)]
struct Branch {
    encoder: Backbone,
    projector: Mlp,
}

impl Branch {
    fn new(ps: &ParamStore, backbone: &BackboneConfig, hidden: usize, out: usize) -> Result<Self> {
        Ok(Branch {
            encoder: Backbone::new(&ps.pp("encoder"), backbone)?,
            projector: Mlp::new(&ps.pp("projector"), backbone.feat_dim(), hidden, out)?,
        })
    }

    fn project(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        self.projector.forward(&self.encoder.forward(x, mode)?, mode)
    }
}

/// Predictions of the online branch and detached projections of the target branch.
pub struct ByolOutput {
    pub pred_a: Tensor,
    pub targ_b: Tensor,
    pub pred_b: Tensor,
    pub targ_a: Tensor,
}

/// Online encoder + projector + predictor, and an EMA target encoder + projector.
///
/// Parameters live in one store under the `online.`, `predictor.` and `target.`
/// prefixes; only the first two are handed to the optimizer.
#[derive(Clone)]
pub struct Byol {
    store: ParamStore,
    online: Branch,
    predictor: Mlp,
    target: Branch,
    pub tau: f64,
    pub resolution: (usize, usize),
}

pub const ONLINE_PREFIXES: [&str; 2] = ["online.", "predictor."];
pub const TARGET_PREFIX: &str = "target.";

impl Byol {
    pub fn new(
        ps: &ParamStore,
        backbone: &BackboneConfig,
        hidden: usize,
        out: usize,
        tau: f64,
        resolution: (usize, usize),
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&tau) {
            return Err(Error::Config(format!("tau {tau} outside [0, 1]")));
        }
        let online = Branch::new(&ps.pp("online"), backbone, hidden, out)?;
        let predictor = Mlp::new(&ps.pp("predictor"), out, hidden, out)?;
        let target = Branch::new(&ps.pp("target"), backbone, hidden, out)?;
        let byol = Byol {
            store: ps.clone(),
            online,
            predictor,
            target,
            tau,
            resolution,
        };
        byol.copy_online_to_target()?;
        Ok(byol)
    }

    fn pairs(&self) -> Result<Vec<(String, Var, Var)>> {
        let all = self.store.all();
        let mut out = Vec::new();
        for (name, target) in all.iter().filter(|(n, _)| n.starts_with(TARGET_PREFIX)) {
            let online_name = format!("online.{}", &name[TARGET_PREFIX.len()..]);
            let online = all.get(&online_name).ok_or_else(|| {
                Error::Config(format!("target parameter {name} has no online counterpart"))
            })?;
            if online.dims() != target.dims() {
                return Err(Error::Config(format!("shape mismatch for {name}")));
            }
            out.push((name.clone(), target.clone(), online.clone()));
        }
        Ok(out)
    }

    /// Target parameters and buffers become exact copies of the online ones.
    pub fn copy_online_to_target(&self) -> Result<()> {
        for (_, target, online) in self.pairs()? {
            target.set(online.as_tensor())?;
        }
        Ok(())
    }

    /// `target <- tau * target + (1 - tau) * online` for every trainable target
    /// parameter. Batch-norm running statistics of the target are its own.
    pub fn ema_update(&self) -> Result<()> {
        let tau = self.tau;
        for (name, target, online) in self.pairs()? {
            if self.store.is_buffer(&name) {
                continue;
            }
            let blended = ((target.as_tensor() * tau)? + (online.as_tensor() * (1.0 - tau))?)?;
            target.set(&blended)?;
        }
        Ok(())
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype()
    }

    pub fn device(&self) -> Device {
        self.store.device().clone()
    }

    /// Parameters updated by gradient descent.
    pub fn online_vars(&self) -> Vec<Var> {
        self.store
            .trainable(&ONLINE_PREFIXES)
            .into_iter()
            .map(|(_, v)| v)
            .collect()
    }

    pub fn target_vars(&self) -> Vec<(String, Var)> {
        self.store.trainable(&[TARGET_PREFIX])
    }

    /// Symmetrized pass: each view goes through both branches.
    pub fn forward(&self, view_a: &Tensor, view_b: &Tensor, mode: Mode) -> Result<ByolOutput> {
        check_image(view_a, self.resolution)?;
        check_image(view_b, self.resolution)?;
        let pred_a = self.predictor.forward(&self.online.project(view_a, mode)?, mode)?;
        let pred_b = self.predictor.forward(&self.online.project(view_b, mode)?, mode)?;
        let targ_a = self.target.project(view_a, mode)?.detach();
        let targ_b = self.target.project(view_b, mode)?.detach();
        Ok(ByolOutput {
            pred_a,
            targ_b,
            pred_b,
            targ_a,
        })
    }

    /// Retrieval embedding: pooled output of the online encoder.
    pub fn embed(&self, x: &Tensor) -> Result<Tensor> {
        check_image(x, self.resolution)?;
        self.online.encoder.forward(x, Mode::Eval)
    }
}
