//! Objective terms: least-squares adversarial losses, cycle reconstruction,
//! the soft gradient-sensitive term, and their weighted total.
//!
//! Expectations and L1 norms are realized as means over every element, so
//! loss scales do not depend on image size.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradfilters::{boundary_mask, gradient_magnitude_var, label_grad_pair, sobel_pair, LabelMap};
use crate::tensor::{Graph, Shape, Tensor, Var};

const SUM_TOLERANCE: f32 = 1e-6;

/// Weights of boundary pixels (`alpha`) and of every pixel (`beta`) in the
/// soft gradient-sensitive loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoftnessParams {
    alpha: f32,
    beta: f32,
}

impl SoftnessParams {
    /// Requires `alpha, beta >= 0` and `alpha + beta == 1`.
    pub fn new(alpha: f32, beta: f32) -> Result<Self> {
        let problems = Self::violations(alpha, beta);
        if problems.is_empty() {
            Ok(Self { alpha, beta })
        } else {
            Err(Error::Config(problems))
        }
    }

    pub(crate) fn violations(alpha: f32, beta: f32) -> Vec<String> {
        let mut v = Vec::new();
        if !(alpha >= 0.0) {
            v.push(format!("alpha must be >= 0, got {alpha}"));
        }
        if !(beta >= 0.0) {
            v.push(format!("beta must be >= 0, got {beta}"));
        }
        if !((alpha + beta - 1.0).abs() <= SUM_TOLERANCE) {
            v.push(format!("alpha + beta must equal 1, got {alpha} + {beta} = {}", alpha + beta));
        }
        v
    }

    /// Pure boundary weighting, `(1, 0)`.
    pub fn hard() -> Self {
        Self { alpha: 1.0, beta: 0.0 }
    }

    pub fn alpha(&self) -> f32 {
        self.alpha
    }

    pub fn beta(&self) -> f32 {
        self.beta
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    lambda_c: f32,
    lambda_g: f32,
}

impl LossWeights {
    pub fn new(lambda_c: f32, lambda_g: f32) -> Result<Self> {
        let mut v = Vec::new();
        if !(lambda_c >= 0.0) {
            v.push(format!("lambda_c must be >= 0, got {lambda_c}"));
        }
        if !(lambda_g >= 0.0) {
            v.push(format!("lambda_g must be >= 0, got {lambda_g}"));
        }
        if v.is_empty() {
            Ok(Self { lambda_c, lambda_g })
        } else {
            Err(Error::Config(v))
        }
    }

    pub fn lambda_c(&self) -> f32 {
        self.lambda_c
    }

    pub fn lambda_g(&self) -> f32 {
        self.lambda_g
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_c: 10.0,
            lambda_g: 5.0,
        }
    }
}

/// Scalar values of every objective term for one training step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub adv_g_v2r: f32,
    pub adv_g_r2v: f32,
    pub adv_d_r: f32,
    pub adv_d_v: f32,
    pub cycle: f32,
    pub grad_sens: f32,
    pub total: f32,
}

impl LossReport {
    pub const CSV_HEADER: &'static str = "step,adv_g_v2r,adv_g_r2v,adv_d_r,adv_d_v,cycle,grad_sens,total";

    pub fn csv_row(&self, step: u64) -> String {
        format!(
            "{step},{},{},{},{},{},{},{}",
            self.adv_g_v2r, self.adv_g_r2v, self.adv_d_r, self.adv_d_v, self.cycle, self.grad_sens, self.total
        )
    }

    pub fn is_finite(&self) -> bool {
        [
            self.adv_g_v2r,
            self.adv_g_r2v,
            self.adv_d_r,
            self.adv_d_v,
            self.cycle,
            self.grad_sens,
            self.total,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// Component values that feed [`total_objective`].
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    pub adv_g_v2r: f32,
    pub adv_g_r2v: f32,
    pub adv_d_r: f32,
    pub adv_d_v: f32,
    pub cycle: f32,
    pub grad_sens: f32,
}

/// `mean((real - 1)²) + mean(fake²)`.
pub fn discriminator_loss_ls(g: &mut Graph, d_on_real: Var, d_on_fake: Var) -> Result<Var> {
    let (sr, sf) = (g.shape(d_on_real), g.shape(d_on_fake));
    if sr != sf {
        return Err(Error::shape("discriminator_loss_ls", format!("real {sr} vs fake {sf}")));
    }
    let real_err = g.add_scalar(d_on_real, -1.0);
    let real_sq = g.square(real_err);
    let real_term = g.mean(real_sq)?;
    let fake_sq = g.square(d_on_fake);
    let fake_term = g.mean(fake_sq)?;
    g.add(real_term, fake_term)
}

/// `mean((fake - 1)²)`.
pub fn generator_adv_loss_ls(g: &mut Graph, d_on_fake: Var) -> Result<Var> {
    let err = g.add_scalar(d_on_fake, -1.0);
    let sq = g.square(err);
    g.mean(sq)
}

fn mean_abs_diff(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    let d = g.sub(a, b)?;
    let d = g.abs(d);
    g.mean(d)
}

/// `mean|v_cycled - v| + mean|r_cycled - r|`.
pub fn cycle_loss(g: &mut Graph, v: Var, v_cycled: Var, r: Var, r_cycled: Var) -> Result<Var> {
    let lv = mean_abs_diff(g, v_cycled, v)?;
    let lr = mean_abs_diff(g, r_cycled, r)?;
    g.add(lv, lr)
}

/// Pixel weights `alpha · boundary + beta`, shape (N, 1, H, W).
pub fn soft_weight_map(labels: &LabelMap, p: SoftnessParams) -> Tensor {
    boundary_mask(labels, &label_grad_pair()).map(|m| p.alpha * m + p.beta)
}

/// Mean over pixels of `| |C∗x| - |C∗x_adapted| | ⊙ (alpha·mask + beta)`,
/// with Sobel filters on the images and the label filters on `labels`.
pub fn soft_grad_loss(g: &mut Graph, x: Var, x_adapted: Var, labels: &LabelMap, p: SoftnessParams) -> Result<Var> {
    const OP: &str = "soft_grad_loss";
    let (sx, sa) = (g.shape(x), g.shape(x_adapted));
    if sx != sa {
        return Err(Error::shape(OP, format!("image {sx} vs adapted {sa}")));
    }
    let expect = Shape::new(sx.batch, 1, sx.height, sx.width);
    let label_shape = Shape::new(labels.batch(), 1, labels.height(), labels.width());
    if label_shape != expect {
        return Err(Error::shape(OP, format!("labels {label_shape} vs image {sx}")));
    }
    let sobel = sobel_pair();
    let gx = gradient_magnitude_var(g, x, &sobel)?;
    let ga = gradient_magnitude_var(g, x_adapted, &sobel)?;
    let diff = g.sub(gx, ga)?;
    let diff = g.abs(diff);
    let weight = g.constant(soft_weight_map(labels, p));
    let weighted = g.mul(diff, weight)?;
    g.mean(weighted)
}

/// Sum of the per-domain soft gradient-sensitive terms.
#[allow(clippy::too_many_arguments)]
pub fn full_grad_objective(
    g: &mut Graph,
    v: Var,
    v_adapted: Var,
    s_v: &LabelMap,
    r: Var,
    r_adapted: Var,
    s_r: &LabelMap,
    p: SoftnessParams,
) -> Result<Var> {
    let lv = soft_grad_loss(g, v, v_adapted, s_v, p)?;
    let lr = soft_grad_loss(g, r, r_adapted, s_r, p)?;
    g.add(lv, lr)
}

/// Generator-side objective in the graph:
/// `adv_v2r + adv_r2v + λc·cycle + λg·grad`.
pub fn generator_objective(g: &mut Graph, adv_v2r: Var, adv_r2v: Var, cycle: Var, grad: Var, w: LossWeights) -> Result<Var> {
    let adv = g.add(adv_v2r, adv_r2v)?;
    let c = g.mul_scalar(cycle, w.lambda_c);
    let gr = g.mul_scalar(grad, w.lambda_g);
    let t = g.add(adv, c)?;
    g.add(t, gr)
}

/// Fill a [`LossReport`] from already-computed parts.
pub fn total_objective(parts: &LossParts, w: LossWeights) -> LossReport {
    let total = parts.adv_g_v2r + parts.adv_g_r2v + w.lambda_c * parts.cycle + w.lambda_g * parts.grad_sens;
    LossReport {
        adv_g_v2r: parts.adv_g_v2r,
        adv_g_r2v: parts.adv_g_r2v,
        adv_d_r: parts.adv_d_r,
        adv_d_v: parts.adv_d_v,
        cycle: parts.cycle,
        grad_sens: parts.grad_sens,
        total,
    }
}
