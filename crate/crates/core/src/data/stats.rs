use serde::Serialize;

use crate::data::scene::ScenePair;
use crate::error::{Error, Result};
use crate::gradfilters::{gradient_magnitude, sobel_pair};

/// Appearance statistics of one class over every pixel carrying its label.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassStats {
    pub pixels: u64,
    pub mean: [f64; 3],
    /// Population standard deviation per channel.
    pub std: [f64; 3],
    /// Mean Sobel gradient magnitude (summed over channels).
    pub gradient_energy: f64,
}

/// Per-class statistics; `None` marks a class absent from the corpus.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DomainStats {
    pub classes: Vec<Option<ClassStats>>,
}

impl DomainStats {
    pub fn absent(&self) -> Vec<usize> {
        (0..self.classes.len()).filter(|&c| self.classes[c].is_none()).collect()
    }
}

#[derive(Clone, Copy, Default)]
struct Partial {
    count: u64,
    sum: [f64; 3],
    sum_sq: [f64; 3],
    grad: f64,
}

impl Partial {
    fn key(&self) -> [u64; 8] {
        let mut k = [0; 8];
        k[0] = self.count;
        for c in 0..3 {
            k[1 + c] = self.sum[c].to_bits();
            k[4 + c] = self.sum_sq[c].to_bits();
        }
        k[7] = self.grad.to_bits();
        k
    }
}

/// Statistics over `corpus`. Per-scene partial sums are combined in a
/// canonical order, so the result does not depend on corpus order.
pub fn domain_stats(corpus: &[ScenePair], num_classes: usize) -> Result<DomainStats> {
    if corpus.is_empty() {
        return Err(Error::invalid("domain_stats", "corpus is empty"));
    }
    let sobel = sobel_pair();
    let mut partials: Vec<Vec<Partial>> = vec![Vec::with_capacity(corpus.len()); num_classes];
    for scene in corpus {
        let gm = gradient_magnitude(&scene.image, &sobel);
        let mut per = vec![Partial::default(); num_classes];
        for y in 0..scene.height() {
            for x in 0..scene.width() {
                let l = scene.labels.at(0, y, x) as usize;
                let p = per.get_mut(l).ok_or(Error::LabelOutOfRange {
                    value: l as u32,
                    num_classes,
                })?;
                p.count += 1;
                for c in 0..3 {
                    let v = scene.image.at(0, c, y, x) as f64;
                    p.sum[c] += v;
                    p.sum_sq[c] += v * v;
                }
                p.grad += gm.at(0, 0, y, x) as f64;
            }
        }
        for (all, p) in partials.iter_mut().zip(per) {
            if p.count > 0 {
                all.push(p);
            }
        }
    }
    let classes = partials
        .into_iter()
        .map(|mut ps| {
            if ps.is_empty() {
                return None;
            }
            ps.sort_by_key(Partial::key);
            let total = ps.iter().fold(Partial::default(), |mut acc, p| {
                acc.count += p.count;
                for c in 0..3 {
                    acc.sum[c] += p.sum[c];
                    acc.sum_sq[c] += p.sum_sq[c];
                }
                acc.grad += p.grad;
                acc
            });
            let n = total.count as f64;
            let mean = total.sum.map(|s| s / n);
            let std = std::array::from_fn(|c| (total.sum_sq[c] / n - mean[c] * mean[c]).max(0.0).sqrt());
            Some(ClassStats {
                pixels: total.count,
                mean,
                std,
                gradient_energy: total.grad / n,
            })
        })
        .collect();
    Ok(DomainStats { classes })
}
