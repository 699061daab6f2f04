use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use candle_core::{DType, Device, Tensor, Var};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::util;

/// How a fresh parameter is filled.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    Const(f64),
    /// He-uniform: `U(-sqrt(6/fan_in), sqrt(6/fan_in))`.
    HeUniform { fan_in: usize },
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    LeCunUniform { fan_in: usize },
    Normal { std: f64 },
}

struct Inner {
    vars: BTreeMap<String, Var>,
    buffers: BTreeMap<String, bool>,
    rng: util::Rng,
}

/// Hierarchically named parameters with seeded initialization.
///
/// Cloning shares the underlying storage; [`ParamStore::pp`] returns a view
/// with an extended name prefix. Buffers (batch-norm running statistics) live
/// alongside parameters but are excluded from [`ParamStore::trainable`].
#[derive(Clone)]
pub struct ParamStore {
    inner: Arc<Mutex<Inner>>,
    prefix: String,
    dtype: DType,
    device: Device,
}

impl ParamStore {
    pub fn new(dtype: DType, device: &Device, seed: u64) -> Self {
        ParamStore {
            inner: Arc::new(Mutex::new(Inner {
                vars: BTreeMap::new(),
                buffers: BTreeMap::new(),
                rng: util::derived_rng(seed, "param-init"),
            })),
            prefix: String::new(),
            dtype,
            device: device.clone(),
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn pp(&self, name: &str) -> ParamStore {
        let prefix = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        };
        ParamStore {
            prefix,
            ..self.clone()
        }
    }

    fn full_name(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    fn create(&self, name: &str, shape: &[usize], init: Init, buffer: bool) -> Result<Var> {
        let full = self.full_name(name);
        let mut inner = self.inner.lock().unwrap();
        if let Some(v) = inner.vars.get(&full) {
            if v.dims() != shape {
                return Err(Error::Config(format!(
                    "parameter {full} requested with shape {shape:?}, exists as {:?}",
                    v.dims()
                )));
            }
            return Ok(v.clone());
        }
        let n: usize = shape.iter().product();
        let values: Vec<f64> = match init {
            Init::Const(c) => vec![c; n],
            Init::HeUniform { fan_in } => {
                let b = (6.0 / fan_in.max(1) as f64).sqrt();
                (0..n).map(|_| inner.rng.gen_range(-b..b)).collect()
            }
            Init::LeCunUniform { fan_in } => {
                let b = 1.0 / (fan_in.max(1) as f64).sqrt();
                (0..n).map(|_| inner.rng.gen_range(-b..b)).collect()
            }
            Init::Normal { std } => {
                let d = Normal::new(0.0, std).map_err(|e| Error::Config(e.to_string()))?;
                (0..n).map(|_| d.sample(&mut inner.rng)).collect()
            }
        };
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        inner.vars.insert(full.clone(), var.clone());
        inner.buffers.insert(full, buffer);
        Ok(var)
    }

    /// Trainable parameter; returns the existing one if already created.
    pub fn param(&self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        Ok(self.create(name, shape, init, false)?.as_tensor().clone())
    }

    /// Non-trainable state updated in place.
    pub fn buffer(&self, name: &str, shape: &[usize], value: f64) -> Result<Var> {
        self.create(name, shape, Init::Const(value), true)
    }

    /// All named entries (parameters and buffers), sorted by name.
    pub fn all(&self) -> BTreeMap<String, Var> {
        self.inner.lock().unwrap().vars.clone()
    }

    pub fn is_buffer(&self, name: &str) -> bool {
        self.inner
            .lock()
            .unwrap()
            .buffers
            .get(name)
            .copied()
            .unwrap_or(false)
    }

    /// Trainable parameters whose full name starts with one of `prefixes`
    /// (all trainable parameters when `prefixes` is empty).
    pub fn trainable(&self, prefixes: &[&str]) -> Vec<(String, Var)> {
        let inner = self.inner.lock().unwrap();
        inner
            .vars
            .iter()
            .filter(|(name, _)| !inner.buffers[*name])
            .filter(|(name, _)| prefixes.is_empty() || prefixes.iter().any(|p| name.starts_with(p)))
            .map(|(n, v)| (n.clone(), v.clone()))
            .collect()
    }

    pub fn get(&self, full_name: &str) -> Option<Var> {
        self.inner.lock().unwrap().vars.get(full_name).cloned()
    }

    pub fn num_parameters(&self) -> usize {
        self.trainable(&[]).iter().map(|(_, v)| v.elem_count()).sum()
    }
}
