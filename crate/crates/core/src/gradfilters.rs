//! Fixed 3×3 derivative filters, image gradient responses and the 0/1
//! semantic-boundary mask derived from a label map.

use crate::error::{Error, Result};
use crate::tensor::{kernels, Graph, Padding, Shape, Tensor, Var};

pub type Kernel3 = [[f32; 3]; 3];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FilterRole {
    /// Applied to images.
    Image,
    /// Applied to label maps.
    Label,
}

/// A horizontal/vertical pair of 3×3 derivative kernels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FilterPair {
    cx: Kernel3,
    cy: Kernel3,
    role: FilterRole,
}

impl FilterPair {
    pub fn cx(&self) -> &Kernel3 {
        &self.cx
    }

    pub fn cy(&self) -> &Kernel3 {
        &self.cy
    }

    pub fn role(&self) -> FilterRole {
        self.role
    }

    /// Depthwise kernel of shape (2C, C, 3, 3): output channel `2c` is `cx`
    /// applied to input channel `c`, `2c + 1` is `cy`.
    pub fn depthwise_kernel(&self, channels: usize) -> Tensor {
        let shape = Shape::new(2 * channels, channels, 3, 3);
        Tensor::from_fn(shape, |o, c, y, x| {
            if o / 2 != c {
                0.0
            } else if o % 2 == 0 {
                self.cx[y][x]
            } else {
                self.cy[y][x]
            }
        })
    }
}

/// Sobel pair used on images.
pub fn sobel_pair() -> FilterPair {
    FilterPair {
        cx: [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]],
        cy: [[1.0, 2.0, 1.0], [0.0, 0.0, 0.0], [-1.0, -2.0, -1.0]],
        role: FilterRole::Image,
    }
}

/// Central-difference pair used on label maps. It has no corner taps, so
/// under reflect padding a border pixel never sees a fake class change.
pub fn label_grad_pair() -> FilterPair {
    FilterPair {
        cx: [[0.0, 0.0, 0.0], [-1.0, 0.0, 1.0], [0.0, 0.0, 0.0]],
        cy: [[0.0, 1.0, 0.0], [0.0, 0.0, 0.0], [0.0, -1.0, 0.0]],
        role: FilterRole::Label,
    }
}

/// Per-pixel integer class ids, laid out (batch, height, width).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    batch: usize,
    height: usize,
    width: usize,
    num_classes: usize,
    values: Vec<u32>,
}

impl LabelMap {
    pub fn new(
        batch: usize,
        height: usize,
        width: usize,
        num_classes: usize,
        values: Vec<u32>,
    ) -> Result<Self> {
        if values.len() != batch * height * width {
            return Err(Error::shape(
                "LabelMap::new",
                format!("{} values for {batch}x{height}x{width}", values.len()),
            ));
        }
        if let Some(&bad) = values.iter().find(|&&v| v as usize >= num_classes) {
            return Err(Error::LabelOutOfRange {
                value: bad,
                num_classes,
            });
        }
        Ok(Self {
            batch,
            height,
            width,
            num_classes,
            values,
        })
    }

    pub fn uniform(batch: usize, height: usize, width: usize, num_classes: usize, class: u32) -> Result<Self> {
        Self::new(batch, height, width, num_classes, vec![class; batch * height * width])
    }

    pub fn from_fn(
        batch: usize,
        height: usize,
        width: usize,
        num_classes: usize,
        mut f: impl FnMut(usize, usize, usize) -> u32,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(batch * height * width);
        for n in 0..batch {
            for y in 0..height {
                for x in 0..width {
                    values.push(f(n, y, x));
                }
            }
        }
        Self::new(batch, height, width, num_classes, values)
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn values(&self) -> &[u32] {
        &self.values
    }

    #[inline]
    pub fn at(&self, n: usize, y: usize, x: usize) -> u32 {
        self.values[(n * self.height + y) * self.width + x]
    }

    pub fn sample(&self, n: usize) -> LabelMap {
        let per = self.height * self.width;
        LabelMap {
            batch: 1,
            height: self.height,
            width: self.width,
            num_classes: self.num_classes,
            values: self.values[n * per..(n + 1) * per].to_vec(),
        }
    }

    pub fn stack(parts: &[&LabelMap]) -> Result<LabelMap> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("LabelMap::stack", "no label maps"))?;
        let mut values = Vec::new();
        let mut batch = 0;
        for p in parts {
            if (p.height, p.width, p.num_classes) != (first.height, first.width, first.num_classes) {
                return Err(Error::shape(
                    "LabelMap::stack",
                    format!(
                        "{}x{} ({} classes) vs {}x{} ({} classes)",
                        p.height, p.width, p.num_classes, first.height, first.width, first.num_classes
                    ),
                ));
            }
            batch += p.batch;
            values.extend_from_slice(&p.values);
        }
        Ok(LabelMap {
            batch,
            values,
            ..first.sample(0)
        })
    }

    /// Class ids as floats, shape (N, 1, H, W).
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            Shape::new(self.batch, 1, self.height, self.width),
            self.values.iter().map(|&v| v as f32).collect(),
        )
        .expect("label map dims")
    }
}

/// `Σ_c |cx ∗ x_c| + |cy ∗ x_c|` as a (N, 1, H, W) response, zero padded.
pub fn gradient_magnitude(image: &Tensor, filters: &FilterPair) -> Tensor {
    let kernel = filters.depthwise_kernel(image.shape().channels);
    let resp = kernels::conv2d(image, &kernel, 1, Padding::Zero(1)).expect("3x3 filters fit any padded image");
    kernels::sum_channels(&resp.map(f32::abs))
}

/// Differentiable variant of [`gradient_magnitude`] for use inside a graph.
pub fn gradient_magnitude_var(g: &mut Graph, image: Var, filters: &FilterPair) -> Result<Var> {
    let kernel = g.constant(filters.depthwise_kernel(g.shape(image).channels));
    let resp = g.conv2d(image, kernel, 1, Padding::Zero(1))?;
    let mag = g.abs(resp);
    Ok(g.sum_channels(mag))
}

/// 0/1 map, shape (N, 1, H, W), that is 1 where the filtered label map is
/// nonzero in either direction. Borders are reflect padded; a single-pixel
/// axis contributes no change along that axis.
pub fn boundary_mask(labels: &LabelMap, filters: &FilterPair) -> Tensor {
    let (h, w) = (labels.height, labels.width);
    let shape = Shape::new(labels.batch, 1, h, w);
    let reflect = |i: isize, n: usize| -> usize {
        let n = n as isize;
        let r = if n == 1 {
            0
        } else if i < 0 {
            -i
        } else if i >= n {
            2 * (n - 1) - i
        } else {
            i
        };
        r as usize
    };
    let respond = |k: &Kernel3, b: usize, y: usize, x: usize| -> f32 {
        let mut acc = 0.0f32;
        for (ky, row) in k.iter().enumerate() {
            for (kx, &tap) in row.iter().enumerate() {
                if tap == 0.0 {
                    continue;
                }
                let sy = reflect(y as isize + ky as isize - 1, h);
                let sx = reflect(x as isize + kx as isize - 1, w);
                acc += tap * labels.at(b, sy, sx) as f32;
            }
        }
        acc
    };
    Tensor::from_fn(shape, |b, _, y, x| {
        let hx = respond(&filters.cx, b, y, x) != 0.0;
        let hy = respond(&filters.cy, b, y, x) != 0.0;
        if hx || hy {
            1.0
        } else {
            0.0
        }
    })
}
