//! Federated protocols that produce what the server observes: federated SGD
//! gradients, FedAvg parameter deltas, and the head-row label flip.

use serde::{Deserialize, Serialize};

use crate::attack::{GradObservation, ObservationKind};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::netzoo::{epoch_batches, param_gradient, sgd_update, stack_batch, Model, Sample};

/// Local training setup of one user.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FedConfig {
    /// Number of local images.
    pub n: usize,
    /// Local epochs.
    pub epochs: usize,
    /// Mini-batch size; must divide `n`.
    pub batch_size: usize,
    /// Local learning rate.
    pub lr: f64,
    /// Seed of the local batch order.
    #[serde(default)]
    pub seed: u64,
}

impl FedConfig {
    /// Single full-batch step (federated SGD).
    pub fn single_step(n: usize, lr: f64) -> Self {
        Self { n, epochs: 1, batch_size: n, lr, seed: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.n == 0 {
            problems.push("n must be positive".to_string());
        }
        if self.epochs == 0 {
            problems.push("epochs must be positive".to_string());
        }
        if self.batch_size == 0 || (self.n > 0 && !self.n.is_multiple_of(self.batch_size)) {
            problems.push(format!("batch_size {} must divide n = {}", self.batch_size, self.n));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            problems.push(format!("lr must be positive, got {}", self.lr));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::FedConfig(problems.join("; ")))
        }
    }

    /// `E * n / B`.
    pub fn local_steps(&self) -> usize {
        self.epochs * self.n / self.batch_size.max(1)
    }

    /// Index sets of the local mini-batches, in execution order. Shared by the
    /// user simulation and the attacker's replay.
    pub fn local_batches(&self) -> Vec<Vec<usize>> {
        epoch_batches(self.n, self.batch_size, self.epochs, self.seed)
    }

    fn is_single_full_batch(&self) -> bool {
        self.epochs == 1 && self.batch_size == self.n
    }
}

/// What one user sends. With `raw` set and a single full-batch step the mean
/// gradient is shared, otherwise the parameter delta after `E n / B` SGD steps.
pub fn compute_update(model: &Model, local_data: &[Sample], fc: &FedConfig, raw: bool) -> Result<GradObservation> {
    fc.validate()?;
    if local_data.len() != fc.n {
        return Err(Error::FedConfig(format!("n = {} but {} local samples", fc.n, local_data.len())));
    }
    let labels: Vec<usize> = local_data.iter().map(|s| s.label).collect();
    if raw && fc.is_single_full_batch() {
        let (images, labels) = stack_batch(local_data)?;
        let (_, grads) = param_gradient(model, &images, &labels)?;
        return GradObservation::raw(grads, labels);
    }
    let mut params = model.params().to_vec();
    for batch in fc.local_batches() {
        let current = model.with_params(params.clone())?;
        let samples: Vec<Sample> = batch.iter().map(|&i| local_data[i].clone()).collect();
        let (images, batch_labels) = stack_batch(&samples)?;
        let (_, grads) = param_gradient(&current, &images, &batch_labels)?;
        params = sgd_update(&params, &grads, fc.lr)?;
    }
    let delta = params
        .iter()
        .zip(model.params())
        .map(|(new, old)| new.zip_map(old, |a, b| a - b))
        .collect::<Result<Vec<_>>>()?;
    GradObservation::param_delta(delta, labels, *fc)
}

/// Server aggregation. Raw gradients: `theta - tau_server * sum_u g_u`.
/// Parameter deltas: `theta + mean_u delta_u` (`tau_server` is unused, the
/// users already applied their own step size).
pub fn fed_round(server_params: &[Tensor], updates: &[GradObservation], tau_server: f64) -> Result<Vec<Tensor>> {
    let first = updates.first().ok_or_else(|| Error::FedConfig("a round needs at least one update".into()))?;
    if updates.iter().any(|u| u.kind != first.kind) {
        return Err(Error::MixedUpdateKinds);
    }
    for u in updates {
        if u.payload.len() != server_params.len()
            || u.payload.iter().zip(server_params).any(|(a, b)| a.shape() != b.shape())
        {
            return Err(Error::MetadataMismatch("update is not shaped like the server parameters".into()));
        }
    }
    let coeff = match first.kind {
        ObservationKind::RawGradient => -tau_server,
        ObservationKind::ParamDelta => 1.0 / updates.len() as f64,
    };
    server_params
        .iter()
        .enumerate()
        .map(|(p, theta)| {
            let mut out = theta.data().to_vec();
            for u in updates {
                for (o, v) in out.iter_mut().zip(u.payload[p].data()) {
                    *o += coeff * v;
                }
            }
            Tensor::new(theta.shape().to_vec(), out)
        })
        .collect()
}

/// Swaps rows `i` and `j` of a `[K, ...]` tensor.
pub fn swap_rows(t: &Tensor, i: usize, j: usize) -> Result<Tensor> {
    let rows = t.shape()[0];
    if i >= rows || j >= rows {
        return Err(Error::LabelOutOfRange { label: i.max(j), classes: rows });
    }
    let mut out = t.clone();
    if i != j {
        let width = t.len() / rows;
        let data = out.data_mut();
        for k in 0..width {
            data.swap(i * width + k, j * width + k);
        }
    }
    Ok(out)
}

/// Model whose classification head has rows `i` and `j` of weight and bias
/// exchanged, so logits `i` and `j` trade places.
pub fn flip_class_rows(model: &Model, i: usize, j: usize) -> Result<Model> {
    let classes = model.spec().num_classes;
    if i >= classes || j >= classes {
        return Err(Error::LabelOutOfRange { label: i.max(j), classes });
    }
    let w = model.spec().head_weight_index()?;
    let mut params = model.params().to_vec();
    params[w] = swap_rows(&params[w], i, j)?;
    params[w + 1] = swap_rows(&params[w + 1], i, j)?;
    model.with_params(params)
}

/// Undoes [`flip_class_rows`] on a parameter-shaped gradient, expressing it in
/// the coordinates of the unflipped model.
pub fn unflip_gradient(model: &Model, grads: &[Tensor], i: usize, j: usize) -> Result<Vec<Tensor>> {
    let w = model.spec().head_weight_index()?;
    let mut out = grads.to_vec();
    out[w] = swap_rows(&grads[w], i, j)?;
    out[w + 1] = swap_rows(&grads[w + 1], i, j)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netzoo::{build_model, FcLayer, ModelSpec};

    fn setup() -> (Model, Vec<Sample>) {
        let spec = ModelSpec::mlp(&[1, 2, 2], &[FcLayer::new(5, true, true), FcLayer::new(3, true, false)]);
        let model = build_model(spec, 4).unwrap();
        let data = (0..4)
            .map(|i| {
                let v: Vec<f64> = (0..4).map(|k| ((i * 4 + k) as f64 * 0.37).sin().abs()).collect();
                Sample::new(Tensor::new(vec![1, 2, 2], v).unwrap(), i % 3)
            })
            .collect();
        (model, data)
    }

    #[test]
    fn batch_size_must_divide_n() {
        let (model, data) = setup();
        let fc = FedConfig { n: 4, epochs: 1, batch_size: 3, lr: 0.1, seed: 0 };
        assert!(matches!(compute_update(&model, &data, &fc, false), Err(Error::FedConfig(_))));
    }

    #[test]
    fn full_batch_delta_is_scaled_mean_gradient() {
        let (model, data) = setup();
        let fc = FedConfig::single_step(4, 0.05);
        let raw = compute_update(&model, &data, &fc, true).unwrap();
        let delta = compute_update(&model, &data, &fc, false).unwrap();
        assert_eq!(raw.kind, ObservationKind::RawGradient);
        assert_eq!(delta.kind, ObservationKind::ParamDelta);
        for (d, g) in delta.payload.iter().zip(&raw.payload) {
            assert!(d.max_abs_diff(&g.map(|v| -0.05 * v)) < 1e-12);
        }
    }

    #[test]
    fn mixed_kinds_rejected() {
        let (model, data) = setup();
        let raw = compute_update(&model, &data, &FedConfig::single_step(4, 0.1), true).unwrap();
        let delta = compute_update(&model, &data, &FedConfig::single_step(4, 0.1), false).unwrap();
        assert!(matches!(fed_round(model.params(), &[raw, delta], 0.1), Err(Error::MixedUpdateKinds)));
    }

    #[test]
    fn flip_semantics() {
        let (model, data) = setup();
        assert_eq!(flip_class_rows(&model, 1, 1).unwrap(), model);
        let flipped = flip_class_rows(&model, 0, 2).unwrap();
        assert_eq!(flip_class_rows(&flipped, 0, 2).unwrap(), model);
        let x = data[0].image.clone().reshape(&[1, 1, 2, 2]).unwrap();
        let a = model.predict(&x).unwrap();
        let b = flipped.predict(&x).unwrap();
        assert_eq!(a.data()[0], b.data()[2]);
        assert_eq!(a.data()[2], b.data()[0]);
        assert_eq!(a.data()[1], b.data()[1]);
        assert!(flip_class_rows(&model, 0, 3).is_err());
    }
}
