use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamParams {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            lr: 0.0002,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected adaptive-moment state for one parameter set. Moments are
/// stored in f32; each element update is evaluated in f64.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub hp: AdamParams,
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl Adam {
    pub fn new(hp: AdamParams, shapes: impl IntoIterator<Item = crate::tensor::Shape>) -> Self {
        let (m, v) = shapes.into_iter().map(|s| (Tensor::zeros(s), Tensor::zeros(s))).unzip();
        Self { hp, step: 0, m, v }
    }

    /// Apply one update to `params` (in the order the moments were created).
    /// Nothing is modified if any gradient is non-finite.
    pub fn update<'a>(&mut self, params: impl Iterator<Item = &'a mut Tensor>, grads: &[Tensor], context: &str) -> Result<()> {
        if grads.len() != self.m.len() {
            return Err(Error::invalid(
                "adam_update",
                format!("{} gradients for {} parameters", grads.len(), self.m.len()),
            ));
        }
        for (i, g) in grads.iter().enumerate() {
            if g.shape() != self.m[i].shape() {
                return Err(Error::shape(
                    "adam_update",
                    format!("gradient {i} has shape {}, expected {}", g.shape(), self.m[i].shape()),
                ));
            }
            if let Some(bad) = g.data().iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    context: format!("{context}: gradient of parameter {i}, element {bad}"),
                });
            }
        }
        self.step += 1;
        let AdamParams { lr, beta1, beta2, eps } = self.hp;
        let (lr, b1, b2, eps) = (lr as f64, beta1 as f64, beta2 as f64, eps as f64);
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        for (i, p) in params.enumerate() {
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            let (m, v) = (m as &mut [f32], v as &mut [f32]);
            for (k, (pk, &gk)) in p.data_mut().iter_mut().zip(grads[i].data()).enumerate() {
                let g = gk as f64;
                let mk = b1 * m[k] as f64 + (1.0 - b1) * g;
                let vk = b2 * v[k] as f64 + (1.0 - b2) * g * g;
                m[k] = mk as f32;
                v[k] = vk as f32;
                let upd = lr * (mk / c1) / ((vk / c2).sqrt() + eps);
                *pk = (*pk as f64 - upd) as f32;
            }
        }
        Ok(())
    }
}
