use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Class ids of the 4-class desk-scale layout. The 8-class layout keeps these
/// and adds [`VEGETATION`], [`SIDEWALK`], [`POLE`] and [`PERSON`].
pub const SKY: u32 = 0;
pub const ROAD: u32 = 1;
pub const CONSTRUCTION: u32 = 2;
pub const VEHICLE: u32 = 3;
pub const VEGETATION: u32 = 4;
pub const SIDEWALK: u32 = 5;
pub const POLE: u32 = 6;
pub const PERSON: u32 = 7;

pub const CLASS_NAMES: [&str; 8] = [
    "sky",
    "road",
    "construction",
    "vehicle",
    "vegetation",
    "sidewalk",
    "pole",
    "person",
];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassAppearance {
    /// RGB in [-1, 1], before the global illumination offset.
    pub mean: [f32; 3],
    /// Std of a per-region color offset drawn once per scene.
    pub jitter: f32,
    /// Peak amplitude of the smoothed-noise texture.
    pub texture_amplitude: f32,
    /// Spacing in pixels of the texture's noise lattice; larger is smoother.
    pub texture_scale: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub name: String,
    pub classes: Vec<ClassAppearance>,
    /// Added to every channel of every pixel.
    pub illumination: f32,
}

const fn class(mean: [f32; 3], jitter: f32, texture_amplitude: f32, texture_scale: usize) -> ClassAppearance {
    ClassAppearance {
        mean,
        jitter,
        texture_amplitude,
        texture_scale,
    }
}

const VIRTUAL_CLASSES: [ClassAppearance; 8] = [
    class([0.15, 0.45, 0.85], 0.04, 0.03, 16),
    class([-0.25, -0.25, -0.3], 0.04, 0.12, 2),
    class([0.5, 0.2, -0.15], 0.04, 0.08, 4),
    class([-0.55, 0.5, -0.45], 0.04, 0.02, 16),
    class([-0.2, 0.55, 0.1], 0.04, 0.1, 3),
    class([0.3, 0.3, 0.35], 0.04, 0.05, 4),
    class([0.8, 0.8, 0.0], 0.04, 0.0, 8),
    class([0.85, -0.3, 0.6], 0.04, 0.02, 8),
];

const REAL_CLASSES: [ClassAppearance; 8] = [
    class([0.5, 0.55, 0.6], 0.04, 0.03, 16),
    class([-0.5, -0.45, -0.4], 0.04, 0.15, 2),
    class([0.1, 0.05, 0.15], 0.04, 0.1, 4),
    class([0.75, -0.5, -0.5], 0.04, 0.02, 16),
    class([0.0, 0.35, -0.35], 0.04, 0.12, 3),
    class([-0.05, -0.1, 0.0], 0.04, 0.05, 4),
    class([0.4, 0.45, 0.5], 0.04, 0.0, 8),
    class([0.2, -0.2, 0.9], 0.04, 0.02, 8),
];

impl DomainSpec {
    /// Default "virtual" appearance: saturated colors, neutral illumination.
    pub fn virtual_default(num_classes: usize) -> Result<Self> {
        Self::from_table("virtual", &VIRTUAL_CLASSES, num_classes, 0.0)
    }

    /// Default "real" appearance: darker overall, with class colors shifted
    /// in class-specific directions (the vehicle class changes hue outright).
    pub fn real_default(num_classes: usize) -> Result<Self> {
        Self::from_table("real", &REAL_CLASSES, num_classes, -0.1)
    }

    /// Named default spec: `virtual` or `real`.
    pub fn by_name(name: &str, num_classes: usize) -> Result<Self> {
        match name {
            "virtual" => Self::virtual_default(num_classes),
            "real" => Self::real_default(num_classes),
            other => Err(Error::invalid(
                "domain_spec",
                format!("unknown domain {other:?} (expected virtual or real)"),
            )),
        }
    }

    fn from_table(name: &str, table: &[ClassAppearance; 8], num_classes: usize, illumination: f32) -> Result<Self> {
        if num_classes != 4 && num_classes != 8 {
            return Err(Error::invalid(
                "domain_spec",
                format!("scene layouts exist for 4 or 8 classes, got {num_classes}"),
            ));
        }
        let spec = Self {
            name: name.to_owned(),
            classes: table[..num_classes].to_vec(),
            illumination,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.num_classes() != 4 && self.num_classes() != 8 {
            problems.push(format!("spec has {} classes; layouts exist for 4 or 8", self.num_classes()));
        }
        for (c, a) in self.classes.iter().enumerate() {
            if a.mean.iter().any(|m| !(-1.0..=1.0).contains(m)) {
                problems.push(format!("class {c}: mean {:?} outside [-1, 1]", a.mean));
            }
            if !(a.jitter >= 0.0) || !(a.texture_amplitude >= 0.0) {
                problems.push(format!("class {c}: jitter and texture amplitude must be >= 0"));
            }
            if a.texture_scale == 0 {
                problems.push(format!("class {c}: texture scale must be >= 1"));
            }
        }
        if !self.illumination.is_finite() {
            problems.push("illumination must be finite".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }

    /// Expected color of class `c`: mean plus illumination, clamped.
    pub fn class_color(&self, c: usize) -> [f32; 3] {
        self.classes[c].mean.map(|m| (m + self.illumination).clamp(-1.0, 1.0))
    }
}
