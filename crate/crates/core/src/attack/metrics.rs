use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Value reported for identical images.
pub const PSNR_CAP: f64 = 100.0;

pub fn mse(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch { op: "mse", lhs: a.shape().to_vec(), rhs: b.shape().to_vec() });
    }
    Ok(a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64)
}

/// Peak signal-to-noise ratio on a `[0, 1]` range, capped at [`PSNR_CAP`].
pub fn psnr(a: &Tensor, b: &Tensor) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / m).log10()).min(PSNR_CAP))
}

/// PSNR of every ground-truth image against a reconstruction slot carrying
/// the same label. Within a label, slots are assigned greedily in truth order
/// to the best remaining match. Truth images without a same-label slot score
/// `None`.
pub fn matched_psnr(
    recon: &[Tensor],
    recon_labels: &[usize],
    truth: &[Tensor],
    truth_labels: &[usize],
) -> Result<Vec<Option<f64>>> {
    if recon.len() != recon_labels.len() || truth.len() != truth_labels.len() {
        return Err(Error::InvalidArgument("images and labels differ in length".into()));
    }
    let mut used = vec![false; recon.len()];
    let mut out = Vec::with_capacity(truth.len());
    for (t, &label) in truth.iter().zip(truth_labels) {
        let mut best: Option<(usize, f64)> = None;
        for (k, r) in recon.iter().enumerate() {
            if used[k] || recon_labels[k] != label {
                continue;
            }
            let p = psnr(r, t)?;
            if best.is_none_or(|(_, bp)| p > bp) {
                best = Some((k, p));
            }
        }
        if let Some((k, _)) = best {
            used[k] = true;
        }
        out.push(best.map(|(_, p)| p));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_forms() {
        let a = Tensor::full(&[1, 4, 4], 0.3);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
        let b = a.map(|v| v + 0.1);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
        let zero = Tensor::zeros(&[2]);
        let one = Tensor::ones(&[2]);
        assert_eq!(psnr(&zero, &one).unwrap(), 0.0);
        assert!(psnr(&zero, &Tensor::zeros(&[3])).is_err());
    }

    #[test]
    fn matching_follows_labels() {
        let dark = Tensor::zeros(&[4]);
        let light = Tensor::ones(&[4]);
        let got = matched_psnr(&[light.clone(), dark.clone()], &[1, 0], &[dark, light], &[0, 1]).unwrap();
        assert_eq!(got, vec![Some(PSNR_CAP), Some(PSNR_CAP)]);
    }
}
