use candle_core::Tensor;

use super::backbone::BackboneConfig;
use super::layers::{relu, sigmoid, BatchNorm, Linear, Mode, Upsample2x};
use super::params::ParamStore;
use crate::error::{Error, Result};

/// Mirror of a backbone: a linear map to the deepest feature map, then one
/// transposed-convolution doubling stage per encoder downsampling stage, ending
/// in a sigmoid over a single channel.
#[derive(Clone)]
pub struct Decoder {
    fc: Linear,
    stages: Vec<(Upsample2x, Option<BatchNorm>)>,
    start_channels: usize,
    start_side: (usize, usize),
}

impl Decoder {
    pub fn new(
        ps: &ParamStore,
        backbone: &BackboneConfig,
        in_dim: usize,
        resolution: (usize, usize),
    ) -> Result<Self> {
        let widths = backbone.decoder_widths();
        let stride = backbone.total_stride();
        if resolution.0 % stride != 0 || resolution.1 % stride != 0 {
            return Err(Error::Config(format!(
                "resolution {resolution:?} is not divisible by the decoder stride {stride}"
            )));
        }
        let start_side = (resolution.0 / stride, resolution.1 / stride);
        let start_channels = widths[0];
        let fc = Linear::new(
            &ps.pp("fc"),
            in_dim,
            start_channels * start_side.0 * start_side.1,
        )?;
        let mut stages = Vec::new();
        for i in 0..widths.len() {
            let in_c = widths[i];
            let last = i + 1 == widths.len();
            let out_c = if last { 1 } else { widths[i + 1] };
            let sp = ps.pp(&format!("up{i}"));
            let bn = if last {
                None
            } else {
                Some(BatchNorm::new(&sp.pp("bn"), out_c)?)
            };
            stages.push((Upsample2x::new(&sp.pp("deconv"), in_c, out_c)?, bn));
        }
        Ok(Decoder {
            fc,
            stages,
            start_channels,
            start_side,
        })
    }

    /// Decode `(B, in_dim)` codes to `(B, 1, H, W)` values in `[0, 1]`.
    pub fn forward(&self, code: &Tensor, mode: Mode) -> Result<Tensor> {
        let b = code.dim(0)?;
        let h = relu(&self.fc.forward(code)?)?;
        let mut h = h.reshape((b, self.start_channels, self.start_side.0, self.start_side.1))?;
        for (up, bn) in &self.stages {
            h = up.forward(&h)?;
            if let Some(bn) = bn {
                h = relu(&bn.forward(&h, mode)?)?;
            }
        }
        sigmoid(&h)
    }
}
