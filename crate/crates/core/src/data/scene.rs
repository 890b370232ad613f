use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::spec::*;
use crate::error::{Error, Result};
use crate::gradfilters::LabelMap;
use crate::tensor::{Shape, Tensor};

pub const MIN_SCENE_DIM: usize = 16;

/// One rendered image (1, 3, H, W) in [-1, 1] with its label map.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenePair {
    pub image: Tensor,
    pub labels: LabelMap,
}

impl ScenePair {
    pub fn new(image: Tensor, labels: LabelMap) -> Result<Self> {
        let s = image.shape();
        if s.batch != 1 || s.channels != 3 || s.height != labels.height() || s.width != labels.width() {
            return Err(Error::shape(
                "scene_pair",
                format!(
                    "image {s} does not match labels {}x{}",
                    labels.height(),
                    labels.width()
                ),
            ));
        }
        Ok(Self { image, labels })
    }

    pub fn height(&self) -> usize {
        self.labels.height()
    }

    pub fn width(&self) -> usize {
        self.labels.width()
    }
}

/// Geometry and appearance draw from separate streams of the same seed, so
/// two specs with the same class count give identical label maps per seed.
const GEOMETRY_STREAM: u64 = 0;
const APPEARANCE_STREAM: u64 = 1;

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

struct Canvas {
    h: usize,
    w: usize,
    labels: Vec<u32>,
}

impl Canvas {
    fn fill_rows(&mut self, y0: usize, y1: usize, class: u32) {
        self.fill_rect(y0, y1, 0, self.w, class);
    }

    fn fill_rect(&mut self, y0: usize, y1: usize, x0: usize, x1: usize, class: u32) {
        for y in y0.min(self.h)..y1.min(self.h) {
            self.labels[y * self.w + x0.min(self.w)..y * self.w + x1.min(self.w)].fill(class);
        }
    }
}

fn layout(seed: u64, num_classes: usize, h: usize, w: usize) -> Vec<u32> {
    let mut r = rng(seed, GEOMETRY_STREAM);
    let mut c = Canvas {
        h,
        w,
        labels: vec![CONSTRUCTION; h * w],
    };
    let horizon = r.random_range(h / 4..=h * 2 / 5);
    let road_top = r.random_range(h * 3 / 5..=h * 3 / 4);
    c.fill_rows(0, horizon, SKY);
    c.fill_rows(road_top, h, ROAD);

    let eight = num_classes == 8;
    if eight {
        let walk = (h / 16).max(2);
        c.fill_rows(road_top, road_top + walk, SIDEWALK);
        for _ in 0..r.random_range(1..=2) {
            let tw = r.random_range(w / 10..=w / 5);
            let x0 = r.random_range(0..w - tw);
            let top = r.random_range(horizon / 2..=horizon + (road_top - horizon) / 2);
            c.fill_rect(top, road_top, x0, x0 + tw, VEGETATION);
        }
    }

    // Buildings rising from the middle band into the sky.
    for _ in 0..r.random_range(2..=4) {
        let bw = r.random_range(w / 8..=w / 4);
        let x0 = r.random_range(0..w - bw);
        let top = r.random_range(h / 10..horizon.max(h / 10 + 1));
        c.fill_rect(top, horizon, x0, x0 + bw, CONSTRUCTION);
    }

    if eight {
        let pw = (w / 64).max(1);
        for _ in 0..r.random_range(1..=2) {
            let x0 = r.random_range(0..w - pw);
            let top = r.random_range(h / 8..=horizon);
            c.fill_rect(top, road_top, x0, x0 + pw, POLE);
        }
    }

    // Vehicles straddling the road edge.
    for _ in 0..r.random_range(1..=3) {
        let vw = r.random_range(w / 8..=w / 4);
        let vh = r.random_range(h / 8..=h / 5).max(3);
        let x0 = r.random_range(0..w - vw);
        let y0 = r.random_range(road_top.saturating_sub(vh * 2 / 3)..=road_top + (h - road_top) / 3);
        c.fill_rect(y0, y0 + vh, x0, x0 + vw, VEHICLE);
    }

    if eight {
        let ph = (h / 6).max(3);
        let pw = (w / 40).max(2);
        for _ in 0..r.random_range(1..=2) {
            let x0 = r.random_range(0..w - pw);
            let y0 = road_top.saturating_sub(ph / 2);
            c.fill_rect(y0, y0 + ph, x0, x0 + pw, PERSON);
        }
    }
    c.labels
}

/// Value noise in [-1, 1]: uniform samples on a lattice with spacing
/// `scale`, bilinearly interpolated.
fn value_noise(r: &mut ChaCha8Rng, h: usize, w: usize, scale: usize) -> Vec<f32> {
    let gh = h / scale + 2;
    let gw = w / scale + 2;
    let lattice: Vec<f32> = (0..gh * gw).map(|_| r.random_range(-1.0f32..=1.0)).collect();
    let mut out = vec![0.0; h * w];
    let s = scale as f32;
    for y in 0..h {
        let fy = y as f32 / s;
        let (iy, ty) = (fy as usize, fy.fract());
        for x in 0..w {
            let fx = x as f32 / s;
            let (ix, tx) = (fx as usize, fx.fract());
            let at = |yy: usize, xx: usize| lattice[yy * gw + xx];
            let top = at(iy, ix) * (1.0 - tx) + at(iy, ix + 1) * tx;
            let bottom = at(iy + 1, ix) * (1.0 - tx) + at(iy + 1, ix + 1) * tx;
            out[y * w + x] = top * (1.0 - ty) + bottom * ty;
        }
    }
    out
}

/// Render one scene. Labels depend only on `(seed, spec.num_classes(), h, w)`.
pub fn generate_scene(seed: u64, spec: &DomainSpec, h: usize, w: usize) -> Result<ScenePair> {
    if h < MIN_SCENE_DIM || w < MIN_SCENE_DIM {
        return Err(Error::invalid(
            "generate_scene",
            format!("scene must be at least {MIN_SCENE_DIM}x{MIN_SCENE_DIM}, got {h}x{w}"),
        ));
    }
    spec.validate()?;
    let s = spec.num_classes();
    let labels = layout(seed, s, h, w);

    let mut r = rng(seed, APPEARANCE_STREAM);
    let mut image = Tensor::zeros(Shape::new(1, 3, h, w));
    for (c, a) in spec.classes.iter().enumerate() {
        let jitter = Normal::new(0.0, a.jitter).expect("validated jitter");
        let offset: [f32; 3] = std::array::from_fn(|_| jitter.sample(&mut r));
        // Drawn for every class so appearance draws do not depend on layout.
        let texture = value_noise(&mut r, h, w, a.texture_scale);
        for (i, _) in labels.iter().enumerate().filter(|(_, &l)| l as usize == c) {
            let (y, x) = (i / w, i % w);
            for ch in 0..3 {
                let v = a.mean[ch] + spec.illumination + offset[ch] + a.texture_amplitude * texture[i];
                image.set(0, ch, y, x, v.clamp(-1.0, 1.0));
            }
        }
    }
    let labels = LabelMap::new(1, h, w, s, labels)?;
    ScenePair::new(image, labels)
}
