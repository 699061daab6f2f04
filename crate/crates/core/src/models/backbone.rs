use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use super::layers::{
    adaptive_avg_pool, global_avg_pool, max_pool_3x3_s2, max_pool_3x3_s2_p1, relu, BatchNorm,
    Conv2d, Linear, Mode,
};
use super::params::ParamStore;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum BackboneKind {
    Resnet50,
    Alexnet,
    SmallCnn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackboneConfig {
    pub kind: BackboneKind,
    /// Request ImageNet weights; honoured only when `weights` points at a file.
    pub pretrained: bool,
    /// Safetensors file with torchvision-named encoder weights.
    pub weights: Option<String>,
    /// Output width of `SMALL_CNN` (ignored by the other backbones).
    pub width: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            kind: BackboneKind::Resnet50,
            pretrained: false,
            weights: None,
            width: 64,
        }
    }
}

impl BackboneConfig {
    pub fn small(width: usize) -> Self {
        BackboneConfig {
            kind: BackboneKind::SmallCnn,
            width,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == BackboneKind::SmallCnn {
            if self.pretrained {
                return Err(Error::Config("SMALL_CNN has no pretrained weights".into()));
            }
            if self.width < 4 {
                return Err(Error::Config("SMALL_CNN width must be at least 4".into()));
            }
        }
        Ok(())
    }

    /// Pooled feature width.
    pub fn feat_dim(&self) -> usize {
        match self.kind {
            BackboneKind::Resnet50 => 2048,
            BackboneKind::Alexnet => 4096,
            BackboneKind::SmallCnn => self.width,
        }
    }

    /// Channel widths of the mirrored decoder, deepest first. The decoder has one
    /// 2x upsampling stage per entry, the last one emitting the single image channel.
    pub fn decoder_widths(&self) -> Vec<usize> {
        match self.kind {
            BackboneKind::Resnet50 => vec![2048, 1024, 512, 256, 64],
            BackboneKind::Alexnet => vec![256, 256, 384, 192, 64],
            BackboneKind::SmallCnn => {
                let [c1, c2, c3, c4] = small_channels(self.width);
                vec![c4, c3, c2, c1]
            }
        }
    }

    pub fn total_stride(&self) -> usize {
        1 << self.decoder_widths().len()
    }
}

fn small_channels(width: usize) -> [usize; 4] {
    [(width / 4).max(1), (width / 2).max(1), width, width]
}

/// Convolutional trunk producing pooled `(B, feat_dim)` features.
#[derive(Clone)]
pub enum Backbone {
    Small(SmallCnn),
    Alex(AlexNet),
    Res(ResNet50),
}

impl Backbone {
    pub fn new(ps: &ParamStore, cfg: &BackboneConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(match cfg.kind {
            BackboneKind::SmallCnn => Backbone::Small(SmallCnn::new(ps, cfg.width)?),
            BackboneKind::Alexnet => Backbone::Alex(AlexNet::new(ps)?),
            BackboneKind::Resnet50 => Backbone::Res(ResNet50::new(ps)?),
        })
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        match self {
            Backbone::Small(m) => m.forward(x, mode),
            Backbone::Alex(m) => m.forward(x),
            Backbone::Res(m) => m.forward(x, mode),
        }
    }
}

/// Four stride-2 `conv3x3 -> BN -> ReLU` blocks followed by global average pooling.
#[derive(Clone)]
pub struct SmallCnn {
    blocks: Vec<(Conv2d, BatchNorm)>,
}

impl SmallCnn {
    pub fn new(ps: &ParamStore, width: usize) -> Result<Self> {
        let mut blocks = Vec::new();
        let mut in_c = 1;
        for (i, &c) in small_channels(width).iter().enumerate() {
            let p = ps.pp(&format!("block{i}"));
            blocks.push((
                Conv2d::new(&p.pp("conv"), in_c, c, 3, 2, 1, false)?,
                BatchNorm::new(&p.pp("bn"), c)?,
            ));
            in_c = c;
        }
        Ok(SmallCnn { blocks })
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let mut h = x.clone();
        for (conv, bn) in &self.blocks {
            h = relu(&bn.forward(&conv.forward(&h)?, mode)?)?;
        }
        global_avg_pool(&h)
    }
}

/// AlexNet with torchvision parameter names, single input channel, classifier
/// truncated before the final layer (dropout omitted).
#[derive(Clone)]
pub struct AlexNet {
    convs: Vec<Conv2d>,
    fc6: Linear,
    fc7: Linear,
}

impl AlexNet {
    pub fn new(ps: &ParamStore) -> Result<Self> {
        let f = ps.pp("features");
        let convs = vec![
            Conv2d::new(&f.pp("0"), 1, 64, 11, 4, 2, true)?,
            Conv2d::new(&f.pp("3"), 64, 192, 5, 1, 2, true)?,
            Conv2d::new(&f.pp("6"), 192, 384, 3, 1, 1, true)?,
            Conv2d::new(&f.pp("8"), 384, 256, 3, 1, 1, true)?,
            Conv2d::new(&f.pp("10"), 256, 256, 3, 1, 1, true)?,
        ];
        let c = ps.pp("classifier");
        Ok(AlexNet {
            convs,
            fc6: Linear::new(&c.pp("1"), 256 * 6 * 6, 4096)?,
            fc7: Linear::new(&c.pp("4"), 4096, 4096)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = relu(&self.convs[0].forward(x)?)?;
        h = max_pool_3x3_s2(&h)?;
        h = relu(&self.convs[1].forward(&h)?)?;
        h = max_pool_3x3_s2(&h)?;
        for conv in &self.convs[2..] {
            h = relu(&conv.forward(&h)?)?;
        }
        h = max_pool_3x3_s2(&h)?;
        let h = adaptive_avg_pool(&h, 6)?.flatten_from(1)?;
        let h = relu(&self.fc6.forward(&h)?)?;
        relu(&self.fc7.forward(&h)?)
    }
}

#[derive(Clone)]
struct Bottleneck {
    conv1: Conv2d,
    bn1: BatchNorm,
    conv2: Conv2d,
    bn2: BatchNorm,
    conv3: Conv2d,
    bn3: BatchNorm,
    downsample: Option<(Conv2d, BatchNorm)>,
}

impl Bottleneck {
    fn new(ps: &ParamStore, in_c: usize, width: usize, stride: usize) -> Result<Self> {
        let out_c = width * 4;
        let downsample = if stride != 1 || in_c != out_c {
            let d = ps.pp("downsample");
            Some((
                Conv2d::new(&d.pp("0"), in_c, out_c, 1, stride, 0, false)?,
                BatchNorm::new(&d.pp("1"), out_c)?,
            ))
        } else {
            None
        };
        Ok(Bottleneck {
            conv1: Conv2d::new(&ps.pp("conv1"), in_c, width, 1, 1, 0, false)?,
            bn1: BatchNorm::new(&ps.pp("bn1"), width)?,
            conv2: Conv2d::new(&ps.pp("conv2"), width, width, 3, stride, 1, false)?,
            bn2: BatchNorm::new(&ps.pp("bn2"), width)?,
            conv3: Conv2d::new(&ps.pp("conv3"), width, out_c, 1, 1, 0, false)?,
            bn3: BatchNorm::new(&ps.pp("bn3"), out_c)?,
            downsample,
        })
    }

    fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let h = relu(&self.bn1.forward(&self.conv1.forward(x)?, mode)?)?;
        let h = relu(&self.bn2.forward(&self.conv2.forward(&h)?, mode)?)?;
        let h = self.bn3.forward(&self.conv3.forward(&h)?, mode)?;
        let skip = match &self.downsample {
            Some((conv, bn)) => bn.forward(&conv.forward(x)?, mode)?,
            None => x.clone(),
        };
        relu(&(h + skip)?)
    }
}

/// ResNet-50 (stride on the 3x3 convolution) with torchvision parameter names
/// and a single input channel; returns globally pooled 2048-D features.
#[derive(Clone)]
pub struct ResNet50 {
    conv1: Conv2d,
    bn1: BatchNorm,
    layers: Vec<Vec<Bottleneck>>,
}

impl ResNet50 {
    pub fn new(ps: &ParamStore) -> Result<Self> {
        let mut layers = Vec::new();
        let mut in_c = 64;
        for (i, (&blocks, &width)) in [3usize, 4, 6, 3].iter().zip(&[64usize, 128, 256, 512]).enumerate() {
            let lp = ps.pp(&format!("layer{}", i + 1));
            let mut layer = Vec::new();
            for b in 0..blocks {
                let stride = if b == 0 && i > 0 { 2 } else { 1 };
                layer.push(Bottleneck::new(&lp.pp(&b.to_string()), in_c, width, stride)?);
                in_c = width * 4;
            }
            layers.push(layer);
        }
        Ok(ResNet50 {
            conv1: Conv2d::new(&ps.pp("conv1"), 1, 64, 7, 2, 3, false)?,
            bn1: BatchNorm::new(&ps.pp("bn1"), 64)?,
            layers,
        })
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let h = relu(&self.bn1.forward(&self.conv1.forward(x)?, mode)?)?;
        let mut h = max_pool_3x3_s2_p1(&h)?;
        for layer in &self.layers {
            for block in layer {
                h = block.forward(&h, mode)?;
            }
        }
        global_avg_pool(&h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};

    fn input(side: usize) -> Tensor {
        Tensor::ones((1, 1, side, side), DType::F32, &Device::Cpu).unwrap()
    }

    #[test]
    fn small_cnn_width_is_embedding_dim() {
        let ps = ParamStore::new(DType::F32, &Device::Cpu, 0);
        let cfg = BackboneConfig::small(24);
        let b = Backbone::new(&ps, &cfg).unwrap();
        let y = b.forward(&input(64), Mode::Eval).unwrap();
        assert_eq!(y.dims(), &[1, 24]);
        assert_eq!(cfg.total_stride(), 16);
    }

    #[test]
    fn small_cnn_never_pretrained() {
        let mut cfg = BackboneConfig::small(16);
        cfg.pretrained = true;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn resnet50_emits_2048_features() {
        let ps = ParamStore::new(DType::F32, &Device::Cpu, 0);
        let b = Backbone::new(&ps, &BackboneConfig::default()).unwrap();
        let y = b.forward(&input(64), Mode::Eval).unwrap();
        assert_eq!(y.dims(), &[1, 2048]);
        // torchvision-sized parameter count minus the RGB input channels and fc
        let n = ps.num_parameters();
        assert_eq!(n, 25_557_032 - 2 * 64 * 49 - (2048 * 1000 + 1000));
        assert!(ps.get("layer3.5.bn3.running_var").is_some());
        assert!(ps.get("layer1.0.downsample.1.weight").is_some());
    }

    #[test]
    fn alexnet_emits_4096_features() {
        let ps = ParamStore::new(DType::F32, &Device::Cpu, 0);
        let cfg = BackboneConfig {
            kind: BackboneKind::Alexnet,
            ..BackboneConfig::default()
        };
        let b = Backbone::new(&ps, &cfg).unwrap();
        for side in [224, 256] {
            assert_eq!(b.forward(&input(side), Mode::Eval).unwrap().dims(), &[1, 4096]);
        }
        assert!(ps.get("features.10.weight").is_some());
        assert!(ps.get("classifier.4.bias").is_some());
    }
}
