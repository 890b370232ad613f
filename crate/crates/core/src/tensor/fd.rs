use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Central-difference estimate of `∂f/∂x` for every element of `x`.
pub fn finite_diff_grad(mut f: impl FnMut(&Tensor) -> f64, x: &Tensor, step: f32) -> Result<Tensor> {
    if !(step > 0.0) {
        return Err(Error::invalid("finite_diff_grad", format!("step must be > 0, got {step}")));
    }
    let mut probe = x.clone();
    let mut grad = Tensor::zeros(x.shape());
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + step;
        let up = f(&probe);
        probe.data_mut()[i] = orig - step;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        // The perturbation actually representable in f32.
        let h = (orig + step) as f64 - (orig - step) as f64;
        grad.data_mut()[i] = ((up - down) / h) as f32;
    }
    Ok(grad)
}

/// Largest element-wise deviation, relative to the larger of the two
/// gradients' max-abs scale.
pub fn max_relative_error(analytic: &Tensor, numeric: &Tensor) -> f64 {
    let scale = analytic.max_abs().max(numeric.max_abs()) as f64;
    if scale == 0.0 {
        return 0.0;
    }
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(&a, &n)| (a as f64 - n as f64).abs())
        .fold(0.0, f64::max)
        / scale
}
