//! Flat `key = value` training configuration.
//!
//! Blank lines and `#` comments are ignored. Every key must be one of the
//! field names of [`TrainConfig`]; unknown keys are rejected.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::losses::{LossWeights, SoftnessParams};
use crate::networks::{DiscriminatorConfig, GeneratorConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lambda_c: f32,
    pub lambda_g: f32,
    /// (α, β) for epochs 1..=`schedule_switch_epoch`.
    pub alpha_start: f32,
    pub beta_start: f32,
    /// (α, β) for every later epoch.
    pub alpha_end: f32,
    pub beta_end: f32,
    pub schedule_switch_epoch: u64,
    pub learning_rate: f32,
    pub adam_beta1: f32,
    pub adam_beta2: f32,
    pub adam_eps: f32,
    pub batch_size: usize,
    pub epochs: u64,
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    pub history_capacity: usize,
    pub gen_depth: usize,
    pub gen_base_width: usize,
    pub disc_blocks: usize,
    pub disc_base_width: usize,
    /// `false` replaces the per-class head by a single-channel PatchGAN head
    /// and ignores masks.
    pub semantic_discriminator: bool,
    pub seed: u64,
    /// Write a numbered checkpoint every this many steps (0: final only).
    pub checkpoint_every: u64,
    pub metrics_file: String,
    pub checkpoint_file: String,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_c: 10.0,
            lambda_g: 5.0,
            alpha_start: 1.0,
            beta_start: 0.0,
            alpha_end: 0.9,
            beta_end: 0.1,
            schedule_switch_epoch: 3,
            learning_rate: 0.0002,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 1,
            epochs: 10,
            height: 64,
            width: 128,
            num_classes: 4,
            history_capacity: 50,
            gen_depth: 4,
            gen_base_width: 32,
            disc_blocks: 4,
            disc_base_width: 32,
            semantic_discriminator: true,
            seed: 0,
            checkpoint_every: 0,
            metrics_file: "metrics.csv".into(),
            checkpoint_file: "checkpoint.sack".into(),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("{key}: cannot parse {value:?} as {}", std::any::type_name::<T>()))
}

macro_rules! fields {
    ($($name:ident),* $(,)?) => {
        /// Every accepted key, in canonical order.
        pub const KEYS: &'static [&'static str] = &[$(stringify!($name)),*];

        /// Set one field from its text form.
        pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
            match key {
                $(stringify!($name) => self.$name = parse(key, value)?,)*
                _ => return Err(format!("unknown key {key:?}")),
            }
            Ok(())
        }

        /// Canonical text form; parsing it yields an identical config.
        pub fn to_text(&self) -> String {
            let mut out = String::new();
            $(let _ = writeln!(out, "{} = {}", stringify!($name), self.$name);)*
            out
        }
    };
}

impl TrainConfig {
    fields!(
        lambda_c,
        lambda_g,
        alpha_start,
        beta_start,
        alpha_end,
        beta_end,
        schedule_switch_epoch,
        learning_rate,
        adam_beta1,
        adam_beta2,
        adam_eps,
        batch_size,
        epochs,
        height,
        width,
        num_classes,
        history_capacity,
        gen_depth,
        gen_base_width,
        disc_blocks,
        disc_base_width,
        semantic_discriminator,
        seed,
        checkpoint_every,
        metrics_file,
        checkpoint_file,
    );

    /// Apply `key = value` lines on top of `self`, collecting every problem.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut problems = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            match line.split_once('=') {
                Some((k, v)) => {
                    if let Err(e) = self.set(k.trim(), v.trim()) {
                        problems.push(format!("line {}: {e}", i + 1));
                    }
                }
                None => problems.push(format!("line {}: expected key = value, got {line:?}", i + 1)),
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }

    /// Defaults overridden by `text`, then validated.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    /// Every violated constraint, or `Ok`.
    pub fn validate(&self) -> Result<()> {
        let mut p = Vec::new();
        for (name, a, b) in [
            ("start", self.alpha_start, self.beta_start),
            ("end", self.alpha_end, self.beta_end),
        ] {
            for v in SoftnessParams::violations(a, b) {
                p.push(format!("schedule {name}: {v}"));
            }
        }
        if !(self.lambda_c >= 0.0 && self.lambda_c.is_finite()) {
            p.push(format!("lambda_c must be finite and >= 0, got {}", self.lambda_c));
        }
        if !(self.lambda_g >= 0.0 && self.lambda_g.is_finite()) {
            p.push(format!("lambda_g must be finite and >= 0, got {}", self.lambda_g));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            p.push(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                p.push(format!("{name} must be in [0, 1), got {b}"));
            }
        }
        if !(self.adam_eps > 0.0) {
            p.push(format!("adam_eps must be > 0, got {}", self.adam_eps));
        }
        if self.batch_size == 0 {
            p.push("batch_size must be >= 1".into());
        }
        if self.num_classes == 0 {
            p.push("num_classes must be >= 1".into());
        }
        if self.gen_depth < 2 {
            p.push(format!("gen_depth must be >= 2, got {}", self.gen_depth));
        }
        if self.gen_base_width == 0 || self.disc_base_width == 0 {
            p.push("gen_base_width and disc_base_width must be >= 1".into());
        }
        if self.gen_depth < 2 || self.gen_depth > 16 {
            // Reported above; avoid a meaningless divisibility message.
        } else {
            let d = 1usize << self.gen_depth;
            if self.height == 0 || self.width == 0 || self.height % d != 0 || self.width % d != 0 {
                p.push(format!(
                    "height and width must be positive multiples of 2^gen_depth = {d}, got {}x{}",
                    self.height, self.width
                ));
            }
        }
        let (hk, wk) = crate::networks::discriminator_receptive_dims(self.disc_blocks, self.height, self.width);
        if hk == 0 || wk == 0 {
            p.push(format!(
                "{}x{} images are too small for {} discriminator blocks",
                self.height, self.width, self.disc_blocks
            ));
        }
        if !self.semantic_discriminator && self.num_classes != 1 {
            // Plain PatchGAN ignores class ids but still needs them for the
            // gradient-sensitive loss; any class count is fine.
        }
        if self.metrics_file.is_empty() || self.checkpoint_file.is_empty() {
            p.push("metrics_file and checkpoint_file must be non-empty".into());
        }
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(p))
        }
    }

    /// (α, β) in effect during 1-based `epoch`.
    pub fn softness(&self, epoch: u64) -> SoftnessParams {
        let (a, b) = if epoch <= self.schedule_switch_epoch {
            (self.alpha_start, self.beta_start)
        } else {
            (self.alpha_end, self.beta_end)
        };
        SoftnessParams::new(a, b).expect("validated schedule")
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights::new(self.lambda_c, self.lambda_g).expect("validated weights")
    }

    pub fn generator_config(&self, which: u64) -> GeneratorConfig {
        GeneratorConfig {
            depth: self.gen_depth,
            base_width: self.gen_base_width,
            seed: derive_seed(self.seed, which),
        }
    }

    pub fn discriminator_config(&self, which: u64) -> DiscriminatorConfig {
        DiscriminatorConfig {
            blocks: self.disc_blocks,
            base_width: self.disc_base_width,
            num_classes: if self.semantic_discriminator { self.num_classes } else { 1 },
            seed: derive_seed(self.seed, which),
        }
    }
}

/// Independent sub-seed `which` of `seed`.
pub fn derive_seed(seed: u64, which: u64) -> u64 {
    crate::data::sample_seed(seed, which as usize)
}
