//! Closed-form recovery of fully-connected layer inputs and of the label from
//! single-sample parameter gradients.
//!
//! For a layer `y = A x + b` the weight gradient is the outer product
//! `dL/dA = (dL/dy) x^T` and `dL/db = dL/dy`, so any row with a nonzero bias
//! gradient reveals `x`. Without a bias, `dL/dy` of a layer can still be
//! obtained from the layer above once that layer's input is known.

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::netzoo::{FcSlot, Model};

/// Entries at or below this magnitude count as zero.
pub const TAU0: f64 = 1e-12;

/// Relative tolerance of the cross-row consistency check.
const ROW_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AnalyticError {
    #[error("every bias gradient entry is below the nondegeneracy threshold")]
    AllBiasGradientsZero,
    #[error("weight-gradient rows disagree (row {row}, deviation {deviation:e}); the gradient is probably averaged over several inputs")]
    InconsistentRows { row: usize, deviation: f64 },
    #[error("layer {layer} has no nonzero output derivative")]
    DeadLayer { layer: usize },
    #[error("model is not a cascade of fully-connected layers: {0}")]
    NotFullyConnected(String),
    #[error("no biased fully-connected layer to start from")]
    NoBiasedLayer,
    #[error("label is ambiguous ({negatives} negative entries)")]
    Ambiguous { negatives: usize },
    #[error("gradient shapes: {0}")]
    Shape(String),
}

/// Weight gradient (`m x n`) and optional bias gradient (`m`) of one linear
/// layer.
#[derive(Debug, Clone, PartialEq)]
pub struct FcGradient {
    pub dl_da: Tensor,
    pub dl_db: Option<Tensor>,
}

impl FcGradient {
    pub fn new(dl_da: Tensor, dl_db: Option<Tensor>) -> Result<Self> {
        let g = Self { dl_da, dl_db };
        g.dims()?;
        if !g.dl_da.is_finite() || g.dl_db.as_ref().is_some_and(|b| !b.is_finite()) {
            return Err(Error::NonFinite { op: "fc_gradient" });
        }
        Ok(g)
    }

    fn dims(&self) -> Result<(usize, usize)> {
        let shape = self.dl_da.shape();
        if shape.len() != 2 {
            return Err(AnalyticError::Shape(format!("weight gradient must be 2-D, got {shape:?}")).into());
        }
        if let Some(b) = &self.dl_db {
            if b.len() != shape[0] {
                return Err(AnalyticError::Shape(format!("bias gradient has {} entries for {} rows", b.len(), shape[0])).into());
            }
        }
        Ok((shape[0], shape[1]))
    }

    fn row(&self, i: usize) -> &[f64] {
        let n = self.dl_da.shape()[1];
        &self.dl_da.data()[i * n..(i + 1) * n]
    }
}

/// Input of a layer from its weight gradient and the derivative of the loss
/// w.r.t. the layer output.
fn divide_out(g: &FcGradient, dl_dy: &[f64]) -> Result<Tensor, AnalyticError> {
    let (pivot, &scale) = dl_dy
        .iter()
        .enumerate()
        .fold((0, &0.0f64), |best, cur| if cur.1.abs() > best.1.abs() { cur } else { best });
    if scale.abs() <= TAU0 {
        return Err(AnalyticError::AllBiasGradientsZero);
    }
    let x: Vec<f64> = g.row(pivot).iter().map(|v| v / scale).collect();
    let magnitude = g.dl_da.data().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    for (row, &d) in dl_dy.iter().enumerate() {
        if d.abs() <= TAU0 {
            continue;
        }
        let deviation = g.row(row).iter().zip(&x).map(|(a, xi)| (a - d * xi).abs()).fold(0.0, f64::max) / magnitude;
        if deviation > ROW_TOL {
            return Err(AnalyticError::InconsistentRows { row, deviation });
        }
    }
    Ok(Tensor::from_vec(x))
}

/// Input of a biased linear layer: `dL/dA[i,:] / dL/db[i]` for the row with the
/// largest bias gradient magnitude (lowest index on ties).
pub fn reconstruct_biased_fc(g: &FcGradient) -> Result<Tensor> {
    g.dims()?;
    let db = g.dl_db.as_ref().ok_or(AnalyticError::NoBiasedLayer)?;
    Ok(divide_out(g, db.data())?)
}

/// Per-layer gradients of a fully-connected model, in layer order.
pub fn chain_gradients(model: &Model, grads: &[Tensor]) -> Result<Vec<FcGradient>> {
    let slots = fc_slots(model)?;
    slots.iter().map(|s| slot_gradient(s, grads)).collect()
}

/// Gradient of the classification head of any zoo model.
pub fn head_gradient(model: &Model, grads: &[Tensor]) -> Result<FcGradient> {
    let w = model.spec().head_weight_index()?;
    if grads.len() != model.params().len() {
        return Err(AnalyticError::Shape(format!("{} gradients for {} parameters", grads.len(), model.params().len())).into());
    }
    let dl_da = grads[w].clone();
    let dl_db = grads.get(w + 1).cloned();
    FcGradient::new(dl_da, dl_db)
}

fn fc_slots(model: &Model) -> Result<Vec<FcSlot>> {
    model.spec().fc_chain().map_err(|e| AnalyticError::NotFullyConnected(e.to_string()).into())
}

fn slot_gradient(slot: &FcSlot, grads: &[Tensor]) -> Result<FcGradient> {
    let get = |i: usize| {
        grads
            .get(i)
            .cloned()
            .ok_or_else(|| Error::from(AnalyticError::Shape(format!("missing gradient {i}"))))
    };
    FcGradient::new(get(slot.weight)?, slot.bias.map(get).transpose()?)
}

/// Network input of a fully-connected ReLU cascade from its single-sample
/// gradients.
///
/// Starts at the deepest biased layer and walks towards the input. For each
/// earlier layer `l`, `dL/dy_l = (A_{l+1}^T dL/dy_{l+1}) * 1[x_{l+1} > 0]`
/// (the mask is dropped for identity activations) and `x_l` follows from
/// dividing it out of `dL/dA_l`.
pub fn reconstruct_fc_chain(model: &Model, grads: &[FcGradient]) -> Result<Tensor> {
    let slots = fc_slots(model)?;
    if grads.len() != slots.len() {
        return Err(AnalyticError::Shape(format!("{} layer gradients for {} layers", grads.len(), slots.len())).into());
    }
    for (slot, g) in slots.iter().zip(grads) {
        if g.dims()? != (slot.out_features, slot.in_features) {
            return Err(AnalyticError::Shape(format!(
                "layer gradient {:?} does not match layer {}x{}",
                g.dl_da.shape(),
                slot.out_features,
                slot.in_features
            ))
            .into());
        }
    }
    let start = grads.iter().rposition(|g| g.dl_db.is_some()).ok_or(AnalyticError::NoBiasedLayer)?;
    let mut dl_dy = grads[start].dl_db.as_ref().map(|b| b.data().to_vec()).unwrap_or_default();
    let mut x = divide_out(&grads[start], &dl_dy).map_err(|e| match e {
        AnalyticError::AllBiasGradientsZero => AnalyticError::DeadLayer { layer: start },
        other => other,
    })?;
    for l in (0..start).rev() {
        let above = &model.params()[slots[l + 1].weight];
        let (m, n) = (slots[l + 1].out_features, slots[l + 1].in_features);
        let mut next = vec![0.0; n];
        for (i, d) in dl_dy.iter().enumerate() {
            for (j, a) in above.data()[i * n..(i + 1) * n].iter().enumerate() {
                next[j] += a * d;
            }
        }
        debug_assert_eq!(dl_dy.len(), m);
        if slots[l].relu {
            next.iter_mut().zip(x.data()).for_each(|(v, &xv)| {
                if xv <= 0.0 {
                    *v = 0.0
                }
            });
        }
        dl_dy = next;
        x = divide_out(&grads[l], &dl_dy).map_err(|e| match e {
            AnalyticError::AllBiasGradientsZero => AnalyticError::DeadLayer { layer: l },
            other => other,
        })?;
    }
    x.reshape(&model.spec().input_shape)
}

/// Class index from a single-sample classification-head gradient.
///
/// With a bias, softmax cross-entropy gives `dL/db = p - y`, whose only
/// negative entry is the true class. Without one, row `i` of `dL/dA` is
/// `(p_i - y_i) x^T`; its inner product with an all-ones probe has the sign
/// of `p_i - y_i` whenever the head input sums to a positive value (always
/// for post-ReLU features), and the opposite sign otherwise.
pub fn recover_label(g: &FcGradient) -> Result<usize> {
    let (m, _) = g.dims()?;
    let scores: Vec<f64> = match &g.dl_db {
        Some(b) => b.data().to_vec(),
        None => (0..m).map(|i| g.row(i).iter().sum()).collect(),
    };
    let negatives: Vec<usize> = (0..m).filter(|&i| scores[i] < 0.0).collect();
    if negatives.len() == 1 {
        return Ok(negatives[0]);
    }
    if g.dl_db.is_none() {
        let positives: Vec<usize> = (0..m).filter(|&i| scores[i] > 0.0).collect();
        if positives.len() == 1 && negatives.len() == m - 1 {
            return Ok(positives[0]);
        }
    }
    Err(AnalyticError::Ambiguous { negatives: negatives.len() }.into())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grad(rows: &[&[f64]], bias: Option<&[f64]>) -> FcGradient {
        let n = rows[0].len();
        let da = Tensor::new(vec![rows.len(), n], rows.concat()).unwrap();
        FcGradient::new(da, bias.map(|b| Tensor::from_vec(b.to_vec()))).unwrap()
    }

    #[test]
    fn two_row_example() {
        let g = grad(&[&[2.0, 4.0], &[-1.0, -2.0]], Some(&[2.0, -1.0]));
        assert_eq!(reconstruct_biased_fc(&g).unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn zero_bias_gradient_is_rejected() {
        let g = grad(&[&[2.0, 4.0], &[-1.0, -2.0]], Some(&[0.0, 0.0]));
        assert!(matches!(
            reconstruct_biased_fc(&g),
            Err(Error::Analytic(AnalyticError::AllBiasGradientsZero))
        ));
    }

    #[test]
    fn averaged_rows_are_flagged() {
        // mean of outer products for inputs (1, 2) and (3, 1)
        let g = grad(&[&[2.0, 2.5], &[-1.5, -0.5]], Some(&[1.0, -0.5]));
        assert!(matches!(
            reconstruct_biased_fc(&g),
            Err(Error::Analytic(AnalyticError::InconsistentRows { .. }))
        ));
    }

    #[test]
    fn label_from_bias_signs() {
        let g = grad(&[&[1.0], &[1.0], &[1.0]], Some(&[0.2, -0.5, 0.3]));
        assert_eq!(recover_label(&g).unwrap(), 1);
        let g = grad(&[&[1.0], &[1.0], &[1.0]], Some(&[-0.1, -0.2, 0.3]));
        assert!(matches!(recover_label(&g), Err(Error::Analytic(AnalyticError::Ambiguous { negatives: 2 }))));
    }

    #[test]
    fn label_without_bias_uses_probe() {
        // x = (0.5, 1.5), p - y = (0.1, -0.3, 0.2)
        let g = grad(&[&[0.05, 0.15], &[-0.15, -0.45], &[0.1, 0.3]], None);
        assert_eq!(recover_label(&g).unwrap(), 1);
        let flipped = grad(&[&[-0.05, -0.15], &[0.15, 0.45], &[-0.1, -0.3]], None);
        assert_eq!(recover_label(&flipped).unwrap(), 1);
    }

    #[test]
    fn label_is_scale_invariant() {
        let g = grad(&[&[1.0], &[1.0], &[1.0]], Some(&[0.2, 0.3, -0.5]));
        let scaled = FcGradient::new(g.dl_da.map(|v| v * 7.5), g.dl_db.as_ref().map(|b| b.map(|v| v * 7.5))).unwrap();
        assert_eq!(recover_label(&g).unwrap(), recover_label(&scaled).unwrap());
    }
}
