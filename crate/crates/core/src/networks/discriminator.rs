use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradfilters::LabelMap;
use crate::networks::params::{BoundParams, Init, ParamSet};
use crate::networks::IMAGE_CHANNELS;
use crate::tensor::{kernels, Graph, Padding, Shape, Tensor, Var};

const LEAKY_SLOPE: f32 = 0.2;
const NORM_EPS: f32 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    /// Number of stride-2 conv blocks in the trunk.
    pub blocks: usize,
    pub base_width: usize,
    /// Semantic classes, i.e. output channels of the last layer.
    pub num_classes: usize,
    pub seed: u64,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            blocks: 4,
            base_width: 32,
            num_classes: 8,
            seed: 1,
        }
    }
}

impl DiscriminatorConfig {
    pub fn block_width(&self, block: usize) -> usize {
        self.base_width * (1usize << (block - 1).min(3))
    }
}

/// Patch-score spatial dims `(h_k, w_k)` produced by `blocks` stride-2
/// 4×4 convolutions with padding 1 followed by a same-size 3×3 conv.
pub fn discriminator_receptive_dims(blocks: usize, input_h: usize, input_w: usize) -> (usize, usize) {
    let step = |n: usize| if n + 2 >= 4 { (n + 2 - 4) / 2 + 1 } else { 0 };
    (0..blocks).fold((input_h, input_w), |(h, w), _| (step(h), step(w)))
}

/// One-hot class mask of shape (N, s, h, w); every pixel has exactly one 1.
#[derive(Clone, Debug, PartialEq)]
pub struct SemanticMask(Tensor);

impl SemanticMask {
    /// Wrap a {0, 1} tensor with at most one active class per location.
    /// Locations with no active class score zero. [`one_hot_mask`] always
    /// produces exactly one class per location.
    pub fn from_tensor(t: Tensor) -> Result<Self> {
        let s = t.shape();
        if t.data().iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::invalid("semantic_mask", "values must be 0 or 1"));
        }
        for n in 0..s.batch {
            for y in 0..s.height {
                for x in 0..s.width {
                    if (0..s.channels).filter(|&c| t.at(n, c, y, x) == 1.0).count() > 1 {
                        return Err(Error::invalid(
                            "semantic_mask",
                            format!("more than one class at sample {n}, ({y}, {x})"),
                        ));
                    }
                }
            }
        }
        Ok(Self(t))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn num_classes(&self) -> usize {
        self.0.shape().channels
    }
}

/// One-hot encode `labels` into `s` channels and nearest-resize to
/// `target_h × target_w`.
pub fn one_hot_mask(labels: &LabelMap, s: usize, target_h: usize, target_w: usize) -> Result<SemanticMask> {
    if let Some(&bad) = labels.values().iter().find(|&&v| v as usize >= s) {
        return Err(Error::LabelOutOfRange {
            value: bad,
            num_classes: s,
        });
    }
    let shape = Shape::new(labels.batch(), s, labels.height(), labels.width());
    let one_hot = Tensor::from_fn(shape, |n, c, y, x| if labels.at(n, y, x) as usize == c { 1.0 } else { 0.0 });
    Ok(SemanticMask(kernels::resize_nearest(&one_hot, target_h, target_w)?))
}

/// PatchGAN-style trunk whose last layer emits one score map per semantic
/// class; the class mask then picks, at every patch, the channel of the class
/// found there.
#[derive(Clone, Debug, PartialEq)]
pub struct SemanticDiscriminatorNet {
    cfg: DiscriminatorConfig,
    params: ParamSet,
}

impl SemanticDiscriminatorNet {
    pub fn new(cfg: DiscriminatorConfig) -> Result<Self> {
        if cfg.num_classes == 0 || cfg.base_width == 0 {
            return Err(Error::invalid(
                "build_discriminator",
                "num_classes and base_width must be >= 1",
            ));
        }
        let mut init = Init::new(cfg.seed);
        let mut params = ParamSet::new();
        let mut in_ch = IMAGE_CHANNELS;
        for block in 1..=cfg.blocks {
            let out = cfg.block_width(block);
            params.push(format!("block{block}.weight"), init.weight(Shape::new(out, in_ch, 4, 4)));
            if block == 1 {
                params.push(format!("block{block}.bias"), init.zeros(out));
            } else {
                params.push(format!("block{block}.norm.scale"), init.ones(out));
                params.push(format!("block{block}.norm.shift"), init.zeros(out));
            }
            in_ch = out;
        }
        params.push("head.weight", init.weight(Shape::new(cfg.num_classes, in_ch, 3, 3)));
        params.push("head.bias", init.zeros(cfg.num_classes));
        Ok(Self { cfg, params })
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn output_dims(&self, input_h: usize, input_w: usize) -> (usize, usize) {
        discriminator_receptive_dims(self.cfg.blocks, input_h, input_w)
    }

    /// Per-class score maps `T_k`, shape (N, s, h_k, w_k).
    pub fn trunk(&self, g: &mut Graph, bound: &BoundParams, image: Var) -> Result<Var> {
        let (h, w) = {
            let s = g.shape(image);
            (s.height, s.width)
        };
        let (oh, ow) = self.output_dims(h, w);
        if oh == 0 || ow == 0 {
            return Err(Error::shape(
                "sd_forward",
                format!("{h}x{w} input is too small for {} stride-2 blocks", self.cfg.blocks),
            ));
        }
        let mut i = 0;
        let mut x = image;
        for block in 1..=self.cfg.blocks {
            x = g.conv2d(x, bound.var(i), 2, Padding::Zero(1))?;
            i += 1;
            if block == 1 {
                x = g.add_bias(x, bound.var(i))?;
                i += 1;
            } else {
                x = g.instance_norm(x, bound.var(i), bound.var(i + 1), NORM_EPS)?;
                i += 2;
            }
            x = g.leaky_relu(x, LEAKY_SLOPE)?;
        }
        x = g.conv2d(x, bound.var(i), 1, Padding::Zero(1))?;
        g.add_bias(x, bound.var(i + 1))
    }

    /// Masked score map, shape (N, 1, h_k, w_k).
    pub fn forward(&self, g: &mut Graph, bound: &BoundParams, image: Var, mask: &SemanticMask) -> Result<Var> {
        let t = self.trunk(g, bound, image)?;
        let (ts, ms) = (g.shape(t), mask.0.shape());
        if ts != ms {
            return Err(Error::shape(
                "sd_forward",
                format!("mask {ms} does not match trunk output {ts}"),
            ));
        }
        let m = g.constant(mask.0.clone());
        let masked = g.mul(t, m)?;
        Ok(g.sum_channels(masked))
    }

    /// Mask for `labels` sized to this trunk's output on `input_h × input_w`.
    pub fn mask_for(&self, labels: &LabelMap) -> Result<SemanticMask> {
        let (h, w) = self.output_dims(labels.height(), labels.width());
        one_hot_mask(labels, self.cfg.num_classes, h, w)
    }
}
