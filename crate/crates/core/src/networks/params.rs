use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{Graph, Shape, Tensor, Var};

const INIT_STD: f32 = 0.02;

/// Named parameters in registration order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet {
    entries: Vec<(String, Tensor)>,
}

/// The graph handles of a [`ParamSet`] bound into one [`Graph`].
#[derive(Clone, Debug)]
pub struct BoundParams {
    vars: Vec<Var>,
}

impl BoundParams {
    /// Wrap handles already in a graph, in the owning set's registration order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self { vars }
    }

    pub fn var(&self, index: usize) -> Var {
        self.vars[index]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

impl ParamSet {
    pub(crate) fn new() -> Self {
        Self { entries: Vec::new() }
    }

    pub(crate) fn push(&mut self, name: impl Into<String>, value: Tensor) -> usize {
        self.entries.push((name.into(), value));
        self.entries.len() - 1
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.entries.iter_mut().map(|(_, t)| t)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.iter_mut().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Insert every parameter into `g`, as trainable leaves or as constants.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundParams {
        let vars = self
            .entries
            .iter()
            .map(|(_, t)| {
                if trainable {
                    g.param(t.clone())
                } else {
                    g.constant(t.clone())
                }
            })
            .collect();
        BoundParams { vars }
    }

    /// Gradients in registration order; parameters the loss does not reach
    /// get zeros.
    pub fn take_grads(&self, g: &mut Graph, bound: &BoundParams) -> Vec<Tensor> {
        self.entries
            .iter()
            .zip(&bound.vars)
            .map(|((_, t), &v)| g.take_grad(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect()
    }

    /// Replace values from `(name, tensor)` pairs; every name must be present
    /// with a matching shape.
    pub fn load_from<'a>(&mut self, mut lookup: impl FnMut(&str) -> Option<&'a Tensor>) -> Result<()> {
        for (name, t) in &mut self.entries {
            let src = lookup(name).ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
            if src.shape() != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name}: stored shape {} does not match {}",
                    src.shape(),
                    t.shape()
                )));
            }
            *t = src.clone();
        }
        Ok(())
    }

    /// Order-sensitive digest of all parameter bits.
    pub fn fingerprint(&self) -> u32 {
        let mut h = crc32fast::Hasher::new();
        for (name, t) in &self.entries {
            h.update(name.as_bytes());
            for v in t.data() {
                h.update(&v.to_le_bytes());
            }
        }
        h.finalize()
    }
}

/// Deterministic initializer: N(0, 0.02) weights, unit norm scales, zero
/// shifts and biases, all drawn from one seeded stream in registration order.
pub(crate) struct Init {
    rng: ChaCha8Rng,
    normal: Normal<f32>,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            normal: Normal::new(0.0, INIT_STD).expect("positive std"),
        }
    }

    pub fn weight(&mut self, shape: Shape) -> Tensor {
        let data = (0..shape.numel()).map(|_| self.normal.sample(&mut self.rng)).collect();
        Tensor::new(shape, data).expect("sized")
    }

    pub fn ones(&self, channels: usize) -> Tensor {
        Tensor::full(Shape::new(1, channels, 1, 1), 1.0)
    }

    pub fn zeros(&self, channels: usize) -> Tensor {
        Tensor::zeros(Shape::new(1, channels, 1, 1))
    }
}
