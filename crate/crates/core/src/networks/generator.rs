use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::networks::params::{BoundParams, Init, ParamSet};
use crate::tensor::{Graph, Padding, Shape, Var};

pub const IMAGE_CHANNELS: usize = 3;
const LEAKY_SLOPE: f32 = 0.2;
const NORM_EPS: f32 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub depth: usize,
    pub base_width: usize,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            depth: 4,
            base_width: 32,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    /// Channel width of encoder level `level` (1-based), capped at 8× base.
    pub fn encoder_width(&self, level: usize) -> usize {
        self.base_width * (1usize << (level - 1).min(3))
    }

    /// Height and width must be multiples of this.
    pub fn divisor(&self) -> usize {
        1 << self.depth
    }
}

struct EncLevel {
    weight: usize,
    /// Bias for the unnormalized first level, norm (scale, shift) otherwise.
    bias: Option<usize>,
    norm: Option<(usize, usize)>,
}

struct DecLevel {
    weight: usize,
    norm: (usize, usize),
}

/// U-Net: `depth` stride-2 encoder levels (conv 4×4, instance norm, leaky
/// ReLU), mirrored by 2×2 stride-2 transposed-conv decoder levels (instance
/// norm, ReLU) each concatenated with the encoder output of the same
/// resolution, the input image being level 0. A 3×3 conv and tanh produce
/// the output image.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorNet {
    cfg: GeneratorConfig,
    params: ParamSet,
}

impl GeneratorNet {
    pub fn new(cfg: GeneratorConfig) -> Result<Self> {
        if cfg.depth < 2 {
            return Err(Error::invalid("build_generator", format!("depth must be >= 2, got {}", cfg.depth)));
        }
        if cfg.base_width == 0 {
            return Err(Error::invalid("build_generator", "base_width must be >= 1"));
        }
        let mut init = Init::new(cfg.seed);
        let mut params = ParamSet::new();
        let mut in_ch = IMAGE_CHANNELS;
        for level in 1..=cfg.depth {
            let out = cfg.encoder_width(level);
            params.push(format!("enc{level}.weight"), init.weight(Shape::new(out, in_ch, 4, 4)));
            if level == 1 {
                params.push(format!("enc{level}.bias"), init.zeros(out));
            } else {
                params.push(format!("enc{level}.norm.scale"), init.ones(out));
                params.push(format!("enc{level}.norm.shift"), init.zeros(out));
            }
            in_ch = out;
        }
        for level in (0..cfg.depth).rev() {
            let out = if level == 0 { cfg.base_width } else { cfg.encoder_width(level) };
            params.push(format!("dec{level}.weight"), init.weight(Shape::new(in_ch, out, 2, 2)));
            params.push(format!("dec{level}.norm.scale"), init.ones(out));
            params.push(format!("dec{level}.norm.shift"), init.zeros(out));
            let skip = if level == 0 { IMAGE_CHANNELS } else { cfg.encoder_width(level) };
            in_ch = out + skip;
        }
        params.push("out.weight", init.weight(Shape::new(IMAGE_CHANNELS, in_ch, 3, 3)));
        params.push("out.bias", init.zeros(IMAGE_CHANNELS));
        Ok(Self { cfg, params })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn layout(&self) -> (Vec<EncLevel>, Vec<DecLevel>, (usize, usize)) {
        let mut i = 0;
        let mut next = || {
            i += 1;
            i - 1
        };
        let enc = (1..=self.cfg.depth)
            .map(|level| {
                let weight = next();
                if level == 1 {
                    EncLevel {
                        weight,
                        bias: Some(next()),
                        norm: None,
                    }
                } else {
                    EncLevel {
                        weight,
                        bias: None,
                        norm: Some((next(), next())),
                    }
                }
            })
            .collect();
        let dec = (0..self.cfg.depth)
            .map(|_| DecLevel {
                weight: next(),
                norm: (next(), next()),
            })
            .collect();
        let out = (next(), next());
        (enc, dec, out)
    }

    pub fn check_input(&self, shape: Shape) -> Result<()> {
        let d = self.cfg.divisor();
        if shape.channels != IMAGE_CHANNELS {
            return Err(Error::shape(
                "generator_forward",
                format!("expected {IMAGE_CHANNELS} channels, got {shape}"),
            ));
        }
        if shape.height % d != 0 || shape.width % d != 0 || shape.height == 0 || shape.width == 0 {
            return Err(Error::shape(
                "generator_forward",
                format!(
                    "image {}x{} is not divisible by 2^depth = {d}; height and width must be multiples of {d}",
                    shape.height, shape.width
                ),
            ));
        }
        Ok(())
    }

    /// Forward pass over `image` with parameters already bound into `g`.
    pub fn forward(&self, g: &mut Graph, bound: &BoundParams, image: Var) -> Result<Var> {
        self.check_input(g.shape(image))?;
        let (enc, dec, out) = self.layout();
        let mut skips = vec![image];
        let mut x = image;
        for level in &enc {
            x = g.conv2d(x, bound.var(level.weight), 2, Padding::Zero(1))?;
            if let Some(b) = level.bias {
                x = g.add_bias(x, bound.var(b))?;
            }
            if let Some((scale, shift)) = level.norm {
                x = g.instance_norm(x, bound.var(scale), bound.var(shift), NORM_EPS)?;
            }
            x = g.leaky_relu(x, LEAKY_SLOPE)?;
            skips.push(x);
        }
        skips.pop();
        for level in &dec {
            x = g.conv_transpose2d(x, bound.var(level.weight), 2)?;
            x = g.instance_norm(x, bound.var(level.norm.0), bound.var(level.norm.1), NORM_EPS)?;
            x = g.relu(x);
            let skip = skips.pop().expect("one skip per decoder level");
            x = g.concat_channels(&[x, skip])?;
        }
        x = g.conv2d(x, bound.var(out.0), 1, Padding::Zero(1))?;
        x = g.add_bias(x, bound.var(out.1))?;
        Ok(g.tanh(x))
    }

    /// Convenience: bind frozen parameters into a fresh graph and return the
    /// adapted image.
    pub fn adapt(&self, image: &crate::tensor::Tensor) -> Result<crate::tensor::Tensor> {
        let mut g = Graph::new();
        let bound = self.params.bind(&mut g, false);
        let x = g.constant(image.clone());
        let y = self.forward(&mut g, &bound, x)?;
        Ok(g.value(y).clone())
    }
}
