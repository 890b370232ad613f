//! Corpus-level adaptation metrics.

use serde::Serialize;

use crate::data::{domain_stats, DomainSpec, DomainStats, ScenePair};
use crate::error::{Error, Result};
use crate::gradfilters::{boundary_mask, gradient_magnitude, label_grad_pair, sobel_pair, LabelMap};
use crate::losses::{soft_grad_loss, SoftnessParams};
use crate::tensor::{Graph, Tensor};

/// Euclidean RGB distance between per-class means; `None` where a class is
/// absent from either side.
pub fn color_distances(a: &DomainStats, b: &DomainStats) -> Vec<Option<f64>> {
    a.classes
        .iter()
        .zip(&b.classes)
        .map(|(x, y)| {
            let (x, y) = (x.as_ref()?, y.as_ref()?);
            Some((0..3).map(|c| (x.mean[c] - y.mean[c]).powi(2)).sum::<f64>().sqrt())
        })
        .collect()
}

/// Mean of the present entries.
pub fn mean_present(values: &[Option<f64>]) -> Option<f64> {
    let present: Vec<f64> = values.iter().flatten().copied().collect();
    (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64)
}

/// How closely `y` keeps the gradient magnitudes of `x` on the label
/// boundaries: `1 - Σ M|gx - gy| / Σ M(gx + gy)`, in [0, 1], 1 when equal.
/// `None` when the labels have no boundary or neither image has gradient
/// there.
pub fn boundary_agreement(x: &Tensor, y: &Tensor, labels: &LabelMap) -> Result<Option<f64>> {
    if x.shape() != y.shape() {
        return Err(Error::shape("boundary_agreement", format!("{} vs {}", x.shape(), y.shape())));
    }
    let mask = boundary_mask(labels, &label_grad_pair());
    let s = x.shape();
    if mask.shape().height != s.height || mask.shape().width != s.width || mask.shape().batch != s.batch {
        return Err(Error::shape(
            "boundary_agreement",
            format!("labels {} vs images {}", mask.shape(), s),
        ));
    }
    let sobel = sobel_pair();
    let (gx, gy) = (gradient_magnitude(x, &sobel), gradient_magnitude(y, &sobel));
    let (mut diff, mut total) = (0.0f64, 0.0f64);
    for ((&m, &a), &b) in mask.data().iter().zip(gx.data()).zip(gy.data()) {
        if m != 0.0 {
            diff += (a as f64 - b as f64).abs();
            total += a as f64 + b as f64;
        }
    }
    Ok((total > 0.0).then(|| 1.0 - diff / total))
}

/// Class of the nearest `spec` color for every pixel (ties to the lower id).
pub fn nearest_color_labels(image: &Tensor, spec: &DomainSpec) -> Result<LabelMap> {
    let s = image.shape();
    if s.channels != 3 {
        return Err(Error::shape("nearest_color_labels", format!("expected 3 channels, got {s}")));
    }
    let colors: Vec<[f32; 3]> = (0..spec.num_classes()).map(|c| spec.class_color(c)).collect();
    LabelMap::from_fn(s.batch, s.height, s.width, colors.len(), |n, y, x| {
        let px = [0, 1, 2].map(|c| image.at(n, c, y, x));
        let d = |col: &[f32; 3]| (0..3).map(|c| (px[c] - col[c]).powi(2)).sum::<f32>();
        let mut best = 0;
        for (k, col) in colors.iter().enumerate().skip(1) {
            if d(col) < d(&colors[best]) {
                best = k;
            }
        }
        best as u32
    })
}

/// Fraction of boundary-band pixels of `truth` where `pred` agrees.
pub fn boundary_band_accuracy(pred: &LabelMap, truth: &LabelMap) -> Option<f64> {
    let mask = boundary_mask(truth, &label_grad_pair());
    let (mut hit, mut total) = (0u64, 0u64);
    for ((&m, &p), &t) in mask.data().iter().zip(pred.values()).zip(truth.values()) {
        if m != 0.0 {
            total += 1;
            hit += (p == t) as u64;
        }
    }
    (total > 0).then(|| hit as f64 / total as f64)
}

/// Soft gradient-sensitive loss between two images as a plain number.
pub fn soft_grad_value(x: &Tensor, y: &Tensor, labels: &LabelMap, p: SoftnessParams) -> Result<f64> {
    let mut g = Graph::new();
    let (vx, vy) = (g.constant(x.clone()), g.constant(y.clone()));
    let l = soft_grad_loss(&mut g, vx, vy, labels, p)?;
    Ok(g.value(l).item() as f64)
}

/// Order-independent mean: values are sorted before summation.
fn stable_mean(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    Some(v.iter().sum::<f64>() / v.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub pairs: usize,
    pub num_classes: usize,
    /// Per-class distance between the mean colors of corpus A and corpus B.
    pub class_color_distance: Vec<Option<f64>>,
    pub mean_color_distance: Option<f64>,
    /// Mean [`boundary_agreement`] over pairs that have boundaries.
    pub boundary_preservation: Option<f64>,
    /// Mean soft gradient-sensitive loss over pairs.
    pub soft_grad_loss: f64,
    pub alpha: f32,
    pub beta: f32,
}

/// Compare two aligned corpora: `b[i]` is paired with `a[i]`, and pair
/// metrics use the labels of `a[i]`.
pub fn evaluate(a: &[ScenePair], b: &[ScenePair], num_classes: usize, p: SoftnessParams) -> Result<EvalReport> {
    if a.len() != b.len() {
        return Err(Error::Corpus(format!(
            "misaligned corpora: {} vs {} entries",
            a.len(),
            b.len()
        )));
    }
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        if x.image.shape() != y.image.shape() {
            return Err(Error::Corpus(format!(
                "misaligned corpora: entry {i} is {} vs {}",
                x.image.shape(),
                y.image.shape()
            )));
        }
    }
    let class_color_distance = color_distances(&domain_stats(a, num_classes)?, &domain_stats(b, num_classes)?);
    let mut agreement = Vec::with_capacity(a.len());
    let mut sgl = Vec::with_capacity(a.len());
    for (x, y) in a.iter().zip(b) {
        if let Some(s) = boundary_agreement(&x.image, &y.image, &x.labels)? {
            agreement.push(s);
        }
        sgl.push(soft_grad_value(&x.image, &y.image, &x.labels, p)?);
    }
    Ok(EvalReport {
        pairs: a.len(),
        num_classes,
        mean_color_distance: mean_present(&class_color_distance),
        class_color_distance,
        boundary_preservation: stable_mean(agreement),
        soft_grad_loss: stable_mean(sgl).unwrap_or(0.0),
        alpha: p.alpha(),
        beta: p.beta(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_scene;
    use crate::tensor::Shape;

    fn scenes(spec: &DomainSpec, n: u64) -> Vec<ScenePair> {
        (0..n).map(|s| generate_scene(s, spec, 32, 64).unwrap()).collect()
    }

    #[test]
    fn corpus_against_itself_is_perfect() {
        let a = scenes(&DomainSpec::virtual_default(4).unwrap(), 5);
        let r = evaluate(&a, &a, 4, SoftnessParams::new(0.9, 0.1).unwrap()).unwrap();
        assert_eq!(r.mean_color_distance, Some(0.0));
        assert_eq!(r.boundary_preservation, Some(1.0));
        assert_eq!(r.soft_grad_loss, 0.0);
    }

    #[test]
    fn same_geometry_distance_tracks_domain_means() {
        // Without jitter or texture each region is its flat class color, so
        // the stats distance is exactly the spec color distance.
        let flat = |mut s: DomainSpec| {
            for c in &mut s.classes {
                c.jitter = 0.0;
                c.texture_amplitude = 0.0;
            }
            s
        };
        let va = flat(DomainSpec::virtual_default(4).unwrap());
        let re = flat(DomainSpec::real_default(4).unwrap());
        let (a, b) = (scenes(&va, 6), scenes(&re, 6));
        let r = evaluate(&a, &b, 4, SoftnessParams::hard()).unwrap();
        for c in 0..4 {
            let (x, y) = (va.class_color(c), re.class_color(c));
            let want = (0..3).map(|k| ((x[k] - y[k]) as f64).powi(2)).sum::<f64>().sqrt();
            assert!((r.class_color_distance[c].unwrap() - want).abs() < 1e-6, "class {c}");
        }
    }

    #[test]
    fn report_ignores_pair_order() {
        let a = scenes(&DomainSpec::virtual_default(4).unwrap(), 6);
        let b = scenes(&DomainSpec::real_default(4).unwrap(), 6);
        let p = SoftnessParams::new(0.9, 0.1).unwrap();
        let r1 = evaluate(&a, &b, 4, p).unwrap();
        let order = [3, 0, 5, 1, 4, 2];
        let a2: Vec<_> = order.iter().map(|&i| a[i].clone()).collect();
        let b2: Vec<_> = order.iter().map(|&i| b[i].clone()).collect();
        assert_eq!(evaluate(&a2, &b2, 4, p).unwrap(), r1);
    }

    #[test]
    fn misaligned_corpora_are_rejected() {
        let a = scenes(&DomainSpec::virtual_default(4).unwrap(), 3);
        assert!(matches!(evaluate(&a, &a[..2], 4, SoftnessParams::hard()), Err(Error::Corpus(_))));
    }

    #[test]
    fn flattened_image_loses_boundary_agreement() {
        let a = scenes(&DomainSpec::virtual_default(4).unwrap(), 1);
        let flat = Tensor::zeros(a[0].image.shape());
        assert_eq!(boundary_agreement(&a[0].image, &flat, &a[0].labels).unwrap(), Some(0.0));
    }

    #[test]
    fn nearest_color_recovers_flat_scene_labels() {
        let mut spec = DomainSpec::real_default(4).unwrap();
        for c in &mut spec.classes {
            c.jitter = 0.0;
            c.texture_amplitude = 0.0;
        }
        let s = generate_scene(4, &spec, 32, 64).unwrap();
        assert_eq!(nearest_color_labels(&s.image, &spec).unwrap(), s.labels);
        assert_eq!(boundary_band_accuracy(&s.labels, &s.labels), Some(1.0));
        let uniform = LabelMap::uniform(1, 4, 4, 4, 0).unwrap();
        assert_eq!(boundary_band_accuracy(&uniform, &uniform), None);
        assert!(nearest_color_labels(&Tensor::zeros(Shape::new(1, 1, 2, 2)), &spec).is_err());
    }
}
