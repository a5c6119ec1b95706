use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::netzoo::{Dataset, Sample};

/// Deterministic images made of a linear colour ramp plus a few Gaussian
/// blobs, so neighbouring pixels are correlated. Labels are uniform over
/// `0..classes`, or all different when `distinct_labels` is set.
pub fn make_synthetic(seed: u64, count: usize, shape: &[usize], classes: usize, distinct_labels: bool) -> Result<Dataset> {
    if shape.len() != 3 || shape.contains(&0) {
        return Err(Error::InvalidShape(format!("synthetic images need a [C, H, W] shape, got {shape:?}")));
    }
    if classes == 0 {
        return Err(Error::InvalidArgument("need at least one class".into()));
    }
    if distinct_labels && count > classes {
        return Err(Error::InvalidArgument(format!("{count} distinct labels requested from {classes} classes")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<usize> = if distinct_labels {
        let mut all: Vec<usize> = (0..classes).collect();
        all.shuffle(&mut rng);
        all.truncate(count);
        all
    } else {
        (0..count).map(|_| rng.random_range(0..classes)).collect()
    };
    let samples = labels
        .into_iter()
        .map(|label| Ok(Sample::new(blob_image(&mut rng, shape)?, label)))
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(samples, classes)
}

fn blob_image(rng: &mut impl Rng, shape: &[usize]) -> Result<Tensor> {
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let base: Vec<f64> = (0..c).map(|_| rng.random_range(0.2..0.8)).collect();
    let ramp: Vec<(f64, f64)> = (0..c).map(|_| (rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3))).collect();
    let blobs: Vec<(f64, f64, f64, Vec<f64>)> = (0..rng.random_range(2..=4))
        .map(|_| {
            let cy = rng.random_range(0.0..h as f64);
            let cx = rng.random_range(0.0..w as f64);
            let radius = rng.random_range(0.12..0.35) * h.max(w) as f64;
            let colour = (0..c).map(|_| rng.random_range(-0.6..0.6)).collect();
            (cy, cx, radius, colour)
        })
        .collect();
    let mut data = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        for i in 0..h {
            for j in 0..w {
                let (u, v) = (i as f64 / h as f64 - 0.5, j as f64 / w as f64 - 0.5);
                let mut value = base[ch] + ramp[ch].0 * u + ramp[ch].1 * v;
                for (cy, cx, radius, colour) in &blobs {
                    let d2 = (i as f64 - cy).powi(2) + (j as f64 - cx).powi(2);
                    value += colour[ch] * (-d2 / (2.0 * radius * radius)).exp();
                }
                data.push(value.clamp(0.0, 1.0));
            }
        }
    }
    Tensor::new(vec![c, h, w], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_in_range() {
        let a = make_synthetic(5, 6, &[3, 16, 16], 10, false).unwrap();
        let b = make_synthetic(5, 6, &[3, 16, 16], 10, false).unwrap();
        assert_eq!(a, b);
        assert!(a.samples().iter().all(|s| s.image.data().iter().all(|v| (0.0..=1.0).contains(v))));
        assert_ne!(a, make_synthetic(6, 6, &[3, 16, 16], 10, false).unwrap());
    }

    #[test]
    fn distinct_labels_form_a_permutation() {
        let d = make_synthetic(1, 10, &[1, 8, 8], 10, true).unwrap();
        let mut labels: Vec<usize> = d.samples().iter().map(|s| s.label).collect();
        labels.sort();
        assert_eq!(labels, (0..10).collect::<Vec<_>>());
        assert!(make_synthetic(1, 11, &[1, 8, 8], 10, true).is_err());
    }

    #[test]
    fn images_are_smooth() {
        // neighbouring pixels differ far less than independent uniform noise would
        let d = make_synthetic(2, 4, &[1, 16, 16], 3, false).unwrap();
        for s in d.samples() {
            let v = s.image.data();
            let tv: f64 = (0..16).flat_map(|i| (0..15).map(move |j| (i, j))).map(|(i, j)| (v[i * 16 + j + 1] - v[i * 16 + j]).abs()).sum();
            assert!(tv / 240.0 < 0.1);
        }
    }
}
