//! Minimal layer set built directly on tensor ops.

use candle_core::{DType, Tensor, D};

use super::params::{Init, ParamStore};
use crate::error::{Error, Result};

/// Training mode uses batch statistics and updates running estimates;
/// evaluation mode uses the running estimates and never samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone)]
pub struct Linear {
    weight: Tensor,
    bias: Option<Tensor>,
}

impl Linear {
    pub fn new(ps: &ParamStore, in_dim: usize, out_dim: usize) -> Result<Self> {
        Ok(Linear {
            weight: ps.param("weight", &[out_dim, in_dim], Init::HeUniform { fan_in: in_dim })?,
            bias: Some(ps.param("bias", &[out_dim], Init::Const(0.0))?),
        })
    }

    /// Linear map initialized with the smaller LeCun bound (for output heads).
    pub fn head(ps: &ParamStore, in_dim: usize, out_dim: usize) -> Result<Self> {
        Ok(Linear {
            weight: ps.param("weight", &[out_dim, in_dim], Init::LeCunUniform { fan_in: in_dim })?,
            bias: Some(ps.param("bias", &[out_dim], Init::Const(0.0))?),
        })
    }

    pub fn out_dim(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.matmul(&self.weight.t()?)?;
        Ok(match &self.bias {
            Some(b) => y.broadcast_add(b)?,
            None => y,
        })
    }
}

#[derive(Clone)]
pub struct Conv2d {
    weight: Tensor,
    bias: Option<Tensor>,
    stride: usize,
    padding: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        ps: &ParamStore,
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
    ) -> Result<Self> {
        let fan_in = in_c * kernel * kernel;
        Ok(Conv2d {
            weight: ps.param("weight", &[out_c, in_c, kernel, kernel], Init::HeUniform { fan_in })?,
            bias: if bias {
                Some(ps.param("bias", &[out_c], Init::Const(0.0))?)
            } else {
                None
            },
            stride,
            padding,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv2d(&self.weight, self.padding, self.stride, 1, 1)?;
        Ok(match &self.bias {
            Some(b) => y.broadcast_add(&b.reshape((1, b.dim(0)?, 1, 1))?)?,
            None => y,
        })
    }
}

/// Transposed convolution, kernel 4 / stride 2 / padding 1: doubles H and W.
#[derive(Clone)]
pub struct Upsample2x {
    weight: Tensor,
    bias: Tensor,
}

impl Upsample2x {
    pub fn new(ps: &ParamStore, in_c: usize, out_c: usize) -> Result<Self> {
        let fan_in = in_c * 4;
        Ok(Upsample2x {
            weight: ps.param("weight", &[in_c, out_c, 4, 4], Init::HeUniform { fan_in })?,
            bias: ps.param("bias", &[out_c], Init::Const(0.0))?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv_transpose2d(&self.weight, 1, 0, 2, 1)?;
        Ok(y.broadcast_add(&self.bias.reshape((1, self.bias.dim(0)?, 1, 1))?)?)
    }
}

/// Batch normalization over the channel axis of `(B, C)` or `(B, C, H, W)` input.
#[derive(Clone)]
pub struct BatchNorm {
    weight: Tensor,
    bias: Tensor,
    running_mean: candle_core::Var,
    running_var: candle_core::Var,
    momentum: f64,
    eps: f64,
}

impl BatchNorm {
    pub fn new(ps: &ParamStore, channels: usize) -> Result<Self> {
        Ok(BatchNorm {
            weight: ps.param("weight", &[channels], Init::Const(1.0))?,
            bias: ps.param("bias", &[channels], Init::Const(0.0))?,
            running_mean: ps.buffer("running_mean", &[channels], 0.0)?,
            running_var: ps.buffer("running_var", &[channels], 1.0)?,
            momentum: 0.1,
            eps: 1e-5,
        })
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let c = self.weight.dim(0)?;
        let rank = x.rank();
        let bshape: Vec<usize> = (0..rank).map(|i| if i == 1 { c } else { 1 }).collect();
        let (mean, var) = match mode {
            Mode::Train => {
                // channels last so statistics reduce over a single flattened axis
                let flat = if rank == 4 {
                    x.permute((1, 0, 2, 3))?.reshape((c, ()))?
                } else {
                    x.t()?
                };
                let n = flat.dim(1)?;
                let mean = flat.mean_keepdim(1)?;
                let centered = flat.broadcast_sub(&mean)?;
                let var = centered.sqr()?.mean_keepdim(1)?;
                let mean = mean.flatten_all()?;
                let var = var.flatten_all()?;
                let m = self.momentum;
                let unbiased = if n > 1 {
                    (var.detach() * (n as f64 / (n as f64 - 1.0)))?
                } else {
                    var.detach()
                };
                self.running_mean.set(
                    &((self.running_mean.as_tensor() * (1.0 - m))? + (mean.detach() * m)?)?,
                )?;
                self.running_var
                    .set(&((self.running_var.as_tensor() * (1.0 - m))? + (unbiased * m)?)?)?;
                (mean, var)
            }
            Mode::Eval => (
                self.running_mean.as_tensor().clone(),
                self.running_var.as_tensor().clone(),
            ),
        };
        let inv_std = (var + self.eps)?.sqrt()?.recip()?;
        let scale = (inv_std * &self.weight)?;
        let shift = (&self.bias - (mean * &scale)?)?;
        Ok(x
            .broadcast_mul(&scale.reshape(bshape.clone())?)?
            .broadcast_add(&shift.reshape(bshape)?)?)
    }
}

pub fn relu(x: &Tensor) -> Result<Tensor> {
    Ok(x.relu()?)
}

pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok(candle_nn::ops::sigmoid(x)?)
}

/// Numerically stable log-softmax over the last axis.
pub fn log_softmax(x: &Tensor) -> Result<Tensor> {
    let max = x.max_keepdim(D::Minus1)?.detach();
    let shifted = x.broadcast_sub(&max)?;
    let lse = shifted.exp()?.sum_keepdim(D::Minus1)?.log()?;
    Ok(shifted.broadcast_sub(&lse)?)
}

pub fn softmax(x: &Tensor) -> Result<Tensor> {
    Ok(log_softmax(x)?.exp()?)
}

/// Mean over the spatial axes of `(B, C, H, W)`.
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    Ok(x.mean(D::Minus1)?.mean(D::Minus1)?)
}

/// Adaptive average pooling to `out x out` bins (PyTorch bin boundaries).
pub fn adaptive_avg_pool(x: &Tensor, out: usize) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    if h == out && w == out {
        return Ok(x.clone());
    }
    let bins = |n: usize| -> Vec<(usize, usize)> {
        (0..out)
            .map(|i| {
                let start = i * n / out;
                let end = ((i + 1) * n).div_ceil(out);
                (start, end - start)
            })
            .collect()
    };
    let mut rows = Vec::with_capacity(out);
    for (r0, rl) in bins(h) {
        let band = x.narrow(2, r0, rl)?.mean_keepdim(2)?;
        let mut cols = Vec::with_capacity(out);
        for &(c0, cl) in &bins(w) {
            cols.push(band.narrow(3, c0, cl)?.mean_keepdim(3)?);
        }
        rows.push(Tensor::cat(&cols, 3)?);
    }
    Ok(Tensor::cat(&rows, 2)?)
}

/// 3x3 / stride 2 / padding 1 max pooling. Only valid on non-negative input,
/// where zero padding is equivalent to `-inf` padding.
pub fn max_pool_3x3_s2_p1(x: &Tensor) -> Result<Tensor> {
    let x = x.pad_with_zeros(2, 1, 1)?.pad_with_zeros(3, 1, 1)?;
    max_pool_3x3_s2(&x)
}

/// 3x3 max pool with stride 2 built from strided gathers, so it has a backward pass.
pub fn max_pool_3x3_s2(x: &Tensor) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    if h < 3 || w < 3 {
        return Err(Error::Precondition(format!("max pool input {h}x{w} is smaller than 3x3")));
    }
    let taps = |len: usize, offset: usize| -> Result<Tensor> {
        let out = (len - 3) / 2 + 1;
        let idx: Vec<u32> = (0..out).map(|i| (2 * i + offset) as u32).collect();
        Ok(Tensor::from_vec(idx, out, x.device())?)
    };
    let mut acc: Option<Tensor> = None;
    for dy in 0..3 {
        let rows = x.index_select(&taps(h, dy)?, 2)?;
        for dx in 0..3 {
            let t = rows.index_select(&taps(w, dx)?, 3)?;
            acc = Some(match acc {
                Some(a) => a.maximum(&t)?,
                None => t,
            });
        }
    }
    Ok(acc.expect("nine taps"))
}

/// One-hot rows for class indices.
pub fn one_hot(labels: &[usize], classes: usize, dtype: DType, device: &candle_core::Device) -> Result<Tensor> {
    let mut v = vec![0f32; labels.len() * classes];
    for (i, &l) in labels.iter().enumerate() {
        v[i * classes + l] = 1.0;
    }
    Ok(Tensor::from_vec(v, (labels.len(), classes), device)?.to_dtype(dtype)?)
}
