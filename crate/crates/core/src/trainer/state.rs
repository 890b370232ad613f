use std::path::Path;

use crate::data::ScenePair;
use crate::error::{Error, Result};
use crate::gradfilters::LabelMap;
use crate::losses::{
    cycle_loss, discriminator_loss_ls, full_grad_objective, generator_adv_loss_ls, generator_objective,
    total_objective, LossParts, LossReport, SoftnessParams,
};
use crate::networks::{
    restore_params, store_params, BoundParams, Container, GeneratorNet, SemanticDiscriminatorNet,
};
use crate::tensor::{Graph, Shape, Tensor, Var};
use crate::trainer::adam::{Adam, AdamParams};
use crate::trainer::config::{derive_seed, TrainConfig};
use crate::trainer::history::{HistoryBuffer, HistoryItem, RngState};

/// Sub-seed indices of the independently initialized components.
const SEED_G_V2R: u64 = 1;
const SEED_G_R2V: u64 = 2;
const SEED_D_R: u64 = 3;
const SEED_D_V: u64 = 4;
const SEED_HISTORY_R: u64 = 5;
const SEED_HISTORY_V: u64 = 6;

/// One training batch: virtual images with labels, real images with labels.
#[derive(Clone, Debug)]
pub struct Batch {
    pub v: Tensor,
    pub s_v: LabelMap,
    pub r: Tensor,
    pub s_r: LabelMap,
}

impl Batch {
    pub fn from_scenes(virt: &[&ScenePair], real: &[&ScenePair]) -> Result<Self> {
        let stack = |s: &[&ScenePair]| -> Result<(Tensor, LabelMap)> {
            let imgs: Vec<&Tensor> = s.iter().map(|p| &p.image).collect();
            let labs: Vec<&LabelMap> = s.iter().map(|p| &p.labels).collect();
            Ok((Tensor::stack(&imgs)?, LabelMap::stack(&labs)?))
        };
        let (v, s_v) = stack(virt)?;
        let (r, s_r) = stack(real)?;
        Ok(Self { v, s_v, r, s_r })
    }
}

/// Values produced by one generator half-step.
#[derive(Clone, Debug)]
pub struct GeneratorStep {
    pub parts: LossParts,
    pub objective: f32,
    /// `G_{V→R}(v)` and `G_{R→V}(r)` before the update.
    pub fake_r: Tensor,
    pub fake_v: Tensor,
}

/// Everything needed to continue training.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub config: TrainConfig,
    pub g_v2r: GeneratorNet,
    pub g_r2v: GeneratorNet,
    pub d_r: SemanticDiscriminatorNet,
    pub d_v: SemanticDiscriminatorNet,
    pub adam_g_v2r: Adam,
    pub adam_g_r2v: Adam,
    pub adam_d_r: Adam,
    pub adam_d_v: Adam,
    /// Fakes shown to the real-domain discriminator.
    pub history_r: HistoryBuffer,
    /// Fakes shown to the virtual-domain discriminator.
    pub history_v: HistoryBuffer,
    /// Completed training steps.
    pub step: u64,
}

struct GenGraph {
    objective: Var,
    adv_v2r: Var,
    adv_r2v: Var,
    cycle: Var,
    grad: Var,
    fake_r: Var,
    fake_v: Var,
    bound_v2r: BoundParams,
    bound_r2v: BoundParams,
}

fn shapes(p: &crate::networks::ParamSet) -> Vec<Shape> {
    p.iter().map(|(_, t)| t.shape()).collect()
}

impl TrainState {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let hp = AdamParams {
            lr: config.learning_rate,
            beta1: config.adam_beta1,
            beta2: config.adam_beta2,
            eps: config.adam_eps,
        };
        let g_v2r = GeneratorNet::new(config.generator_config(SEED_G_V2R))?;
        let g_r2v = GeneratorNet::new(config.generator_config(SEED_G_R2V))?;
        let d_r = SemanticDiscriminatorNet::new(config.discriminator_config(SEED_D_R))?;
        let d_v = SemanticDiscriminatorNet::new(config.discriminator_config(SEED_D_V))?;
        Ok(Self {
            adam_g_v2r: Adam::new(hp, shapes(g_v2r.params())),
            adam_g_r2v: Adam::new(hp, shapes(g_r2v.params())),
            adam_d_r: Adam::new(hp, shapes(d_r.params())),
            adam_d_v: Adam::new(hp, shapes(d_v.params())),
            history_r: HistoryBuffer::new(config.history_capacity, derive_seed(config.seed, SEED_HISTORY_R)),
            history_v: HistoryBuffer::new(config.history_capacity, derive_seed(config.seed, SEED_HISTORY_V)),
            g_v2r,
            g_r2v,
            d_r,
            d_v,
            step: 0,
            config,
        })
    }

    fn score(&self, d: &SemanticDiscriminatorNet, g: &mut Graph, bound: &BoundParams, image: Var, labels: &LabelMap) -> Result<Var> {
        if self.config.semantic_discriminator {
            let mask = d.mask_for(labels)?;
            d.forward(g, bound, image, &mask)
        } else {
            d.trunk(g, bound, image)
        }
    }

    fn build_generator_graph(&self, g: &mut Graph, batch: &Batch, p: SoftnessParams, trainable: bool) -> Result<GenGraph> {
        let bound_v2r = self.g_v2r.params().bind(g, trainable);
        let bound_r2v = self.g_r2v.params().bind(g, trainable);
        let bound_dr = self.d_r.params().bind(g, false);
        let bound_dv = self.d_v.params().bind(g, false);
        let v = g.constant(batch.v.clone());
        let r = g.constant(batch.r.clone());
        let fake_r = self.g_v2r.forward(g, &bound_v2r, v)?;
        let fake_v = self.g_r2v.forward(g, &bound_r2v, r)?;
        let v_cyc = self.g_r2v.forward(g, &bound_r2v, fake_r)?;
        let r_cyc = self.g_v2r.forward(g, &bound_v2r, fake_v)?;
        let score_r = self.score(&self.d_r, g, &bound_dr, fake_r, &batch.s_v)?;
        let score_v = self.score(&self.d_v, g, &bound_dv, fake_v, &batch.s_r)?;
        let adv_v2r = generator_adv_loss_ls(g, score_r)?;
        let adv_r2v = generator_adv_loss_ls(g, score_v)?;
        let cycle = cycle_loss(g, v, v_cyc, r, r_cyc)?;
        let grad = full_grad_objective(g, v, fake_r, &batch.s_v, r, fake_v, &batch.s_r, p)?;
        let objective = generator_objective(g, adv_v2r, adv_r2v, cycle, grad, self.config.weights())?;
        Ok(GenGraph {
            objective,
            adv_v2r,
            adv_r2v,
            cycle,
            grad,
            fake_r,
            fake_v,
            bound_v2r,
            bound_r2v,
        })
    }

    /// Generator objective at the current parameters, without updating.
    pub fn generator_objective_value(&self, batch: &Batch, p: SoftnessParams) -> Result<f32> {
        let mut g = Graph::new();
        let gg = self.build_generator_graph(&mut g, batch, p, false)?;
        Ok(g.value(gg.objective).item())
    }

    /// Update both generators against the current (frozen) discriminators.
    pub fn generator_update(&mut self, batch: &Batch, p: SoftnessParams) -> Result<GeneratorStep> {
        let mut g = Graph::new();
        let gg = self.build_generator_graph(&mut g, batch, p, true)?;
        let objective = g.value(gg.objective).item();
        if !objective.is_finite() {
            return Err(Error::NonFinite {
                context: format!("step {}: generator objective is {objective}", self.step),
            });
        }
        g.backward(gg.objective)?;
        let grads_v2r = self.g_v2r.params().take_grads(&mut g, &gg.bound_v2r);
        let grads_r2v = self.g_r2v.params().take_grads(&mut g, &gg.bound_r2v);
        let ctx = format!("step {}", self.step);
        self.adam_g_v2r
            .update(self.g_v2r.params_mut().tensors_mut(), &grads_v2r, &format!("{ctx} G_v2r"))?;
        self.adam_g_r2v
            .update(self.g_r2v.params_mut().tensors_mut(), &grads_r2v, &format!("{ctx} G_r2v"))?;
        let item = |v: Var| g.value(v).item();
        Ok(GeneratorStep {
            parts: LossParts {
                adv_g_v2r: item(gg.adv_v2r),
                adv_g_r2v: item(gg.adv_r2v),
                cycle: item(gg.cycle),
                grad_sens: item(gg.grad),
                ..LossParts::default()
            },
            objective,
            fake_r: g.value(gg.fake_r).clone(),
            fake_v: g.value(gg.fake_v).clone(),
        })
    }

    /// Update both discriminators on real images versus the given fakes.
    /// Returns `(adv_d_r, adv_d_v)`.
    pub fn discriminator_update(&mut self, batch: &Batch, fake_r: &HistoryItem, fake_v: &HistoryItem) -> Result<(f32, f32)> {
        let mut g = Graph::new();
        let bound_r = self.d_r.params().bind(&mut g, true);
        let bound_v = self.d_v.params().bind(&mut g, true);
        let r = g.constant(batch.r.clone());
        let v = g.constant(batch.v.clone());
        let fr = g.constant(fake_r.image.clone());
        let fv = g.constant(fake_v.image.clone());
        let real_r = self.score(&self.d_r, &mut g, &bound_r, r, &batch.s_r)?;
        let fake_score_r = self.score(&self.d_r, &mut g, &bound_r, fr, &fake_r.labels)?;
        let real_v = self.score(&self.d_v, &mut g, &bound_v, v, &batch.s_v)?;
        let fake_score_v = self.score(&self.d_v, &mut g, &bound_v, fv, &fake_v.labels)?;
        let loss_r = discriminator_loss_ls(&mut g, real_r, fake_score_r)?;
        let loss_v = discriminator_loss_ls(&mut g, real_v, fake_score_v)?;
        let total = g.add(loss_r, loss_v)?;
        let (lr, lv) = (g.value(loss_r).item(), g.value(loss_v).item());
        if !(lr.is_finite() && lv.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("step {}: discriminator losses {lr}, {lv}", self.step),
            });
        }
        g.backward(total)?;
        let grads_r = self.d_r.params().take_grads(&mut g, &bound_r);
        let grads_v = self.d_v.params().take_grads(&mut g, &bound_v);
        let ctx = format!("step {}", self.step);
        self.adam_d_r
            .update(self.d_r.params_mut().tensors_mut(), &grads_r, &format!("{ctx} D_r"))?;
        self.adam_d_v
            .update(self.d_v.params_mut().tensors_mut(), &grads_v, &format!("{ctx} D_v"))?;
        Ok((lr, lv))
    }

    /// Generators, then history, then discriminators.
    pub fn train_step(&mut self, batch: &Batch, p: SoftnessParams) -> Result<LossReport> {
        let gs = self.generator_update(batch, p)?;
        let hr = self.history_r.push_sample(HistoryItem {
            image: gs.fake_r,
            labels: batch.s_v.clone(),
        });
        let hv = self.history_v.push_sample(HistoryItem {
            image: gs.fake_v,
            labels: batch.s_r.clone(),
        });
        let (adv_d_r, adv_d_v) = self.discriminator_update(batch, &hr, &hv)?;
        let report = total_objective(
            &LossParts {
                adv_d_r,
                adv_d_v,
                ..gs.parts
            },
            self.config.weights(),
        );
        if !report.is_finite() {
            return Err(Error::NonFinite {
                context: format!("step {}: {report:?}", self.step),
            });
        }
        self.step += 1;
        Ok(report)
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new();
        push_text(&mut c, "config", &self.config.to_text());
        c.push_u64("state/step", self.step);
        for (name, net) in [("g_v2r", &self.g_v2r), ("g_r2v", &self.g_r2v)] {
            store_params(&mut c, name, net.params());
        }
        for (name, net) in [("d_r", &self.d_r), ("d_v", &self.d_v)] {
            store_params(&mut c, name, net.params());
        }
        for (name, a) in self.adams() {
            c.push_u64(format!("adam/{name}/step"), a.step);
            for (i, (m, v)) in a.m.iter().zip(&a.v).enumerate() {
                c.push(format!("adam/{name}/m/{i}"), m.clone());
                c.push(format!("adam/{name}/v/{i}"), v.clone());
            }
        }
        for (name, h) in [("r", &self.history_r), ("v", &self.history_v)] {
            c.push_words(format!("history/{name}/rng"), &h.rng_state().to_words());
            c.push_u64(format!("history/{name}/len"), h.len() as u64);
            for (i, item) in h.items().iter().enumerate() {
                c.push(format!("history/{name}/{i}/image"), item.image.clone());
                let l = &item.labels;
                let dims = [l.batch(), l.height(), l.width(), l.num_classes()].map(|d| d as u32);
                c.push_words(format!("history/{name}/{i}/dims"), &dims);
                c.push_words(format!("history/{name}/{i}/labels"), l.values());
            }
        }
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let config = TrainConfig::from_text(&read_text(c, "config")?)?;
        let mut s = Self::new(config)?;
        s.step = c.u64("state/step")?;
        restore_params(c, "g_v2r", s.g_v2r.params_mut())?;
        restore_params(c, "g_r2v", s.g_r2v.params_mut())?;
        restore_params(c, "d_r", s.d_r.params_mut())?;
        restore_params(c, "d_v", s.d_v.params_mut())?;
        for (name, a) in s.adams_mut() {
            a.step = c.u64(&format!("adam/{name}/step"))?;
            for i in 0..a.m.len() {
                for (kind, slot) in [("m", &mut a.m[i]), ("v", &mut a.v[i])] {
                    let t = c.require(&format!("adam/{name}/{kind}/{i}"))?;
                    if t.shape() != slot.shape() {
                        return Err(Error::Checkpoint(format!("adam/{name}/{kind}/{i}: shape mismatch")));
                    }
                    *slot = t.clone();
                }
            }
        }
        let cap = s.config.history_capacity;
        for (name, h) in [("r", &mut s.history_r), ("v", &mut s.history_v)] {
            let rng = RngState::from_words(&c.words(&format!("history/{name}/rng"))?)
                .ok_or_else(|| Error::Checkpoint(format!("history/{name}/rng: malformed")))?;
            let len = c.u64(&format!("history/{name}/len"))? as usize;
            if len > cap {
                return Err(Error::Checkpoint(format!("history/{name}: {len} items exceed capacity {cap}")));
            }
            let mut items = Vec::with_capacity(len);
            for i in 0..len {
                let image = c.require(&format!("history/{name}/{i}/image"))?.clone();
                let dims = c.words(&format!("history/{name}/{i}/dims"))?;
                let [b, hh, ww, nc] = <[u32; 4]>::try_from(dims)
                    .map_err(|_| Error::Checkpoint(format!("history/{name}/{i}/dims: malformed")))?
                    .map(|d| d as usize);
                let labels = LabelMap::new(b, hh, ww, nc, c.words(&format!("history/{name}/{i}/labels"))?)
                    .map_err(|e| Error::Checkpoint(format!("history/{name}/{i}/labels: {e}")))?;
                items.push(HistoryItem { image, labels });
            }
            *h = HistoryBuffer::from_parts(cap, items, rng);
        }
        Ok(s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::load(path)?)
    }

    fn adams(&self) -> [(&'static str, &Adam); 4] {
        [
            ("g_v2r", &self.adam_g_v2r),
            ("g_r2v", &self.adam_g_r2v),
            ("d_r", &self.adam_d_r),
            ("d_v", &self.adam_d_v),
        ]
    }

    fn adams_mut(&mut self) -> [(&'static str, &mut Adam); 4] {
        [
            ("g_v2r", &mut self.adam_g_v2r),
            ("g_r2v", &mut self.adam_g_r2v),
            ("d_r", &mut self.adam_d_r),
            ("d_v", &mut self.adam_d_v),
        ]
    }
}

/// Which generator to extract from a training checkpoint.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    VirtualToReal,
    RealToVirtual,
}

impl std::str::FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "v2r" => Ok(Self::VirtualToReal),
            "r2v" => Ok(Self::RealToVirtual),
            other => Err(Error::Config(vec![format!("direction must be v2r or r2v, got {other:?}")])),
        }
    }
}

/// Load one generator from a checkpoint written by [`TrainState::save`].
pub fn load_generator(path: &Path, direction: Direction) -> Result<GeneratorNet> {
    let c = Container::load(path)?;
    let config = TrainConfig::from_text(&read_text(&c, "config")?)?;
    let (prefix, which) = match direction {
        Direction::VirtualToReal => ("g_v2r", SEED_G_V2R),
        Direction::RealToVirtual => ("g_r2v", SEED_G_R2V),
    };
    let mut net = GeneratorNet::new(config.generator_config(which))?;
    restore_params(&c, prefix, net.params_mut())?;
    Ok(net)
}

fn push_text(c: &mut Container, name: &str, text: &str) {
    let bytes = text.as_bytes();
    let mut words = vec![bytes.len() as u32];
    words.extend(bytes.chunks(4).map(|ch| {
        let mut b = [0u8; 4];
        b[..ch.len()].copy_from_slice(ch);
        u32::from_le_bytes(b)
    }));
    c.push_words(name, &words);
}

fn read_text(c: &Container, name: &str) -> Result<String> {
    let words = c.words(name)?;
    let bad = || Error::Checkpoint(format!("record {name} is not text"));
    let (&len, rest) = words.split_first().ok_or_else(bad)?;
    let mut bytes: Vec<u8> = rest.iter().flat_map(|w| w.to_le_bytes()).collect();
    if (len as usize) > bytes.len() {
        return Err(bad());
    }
    bytes.truncate(len as usize);
    String::from_utf8(bytes).map_err(|_| bad())
}
