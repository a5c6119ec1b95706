use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::data::{stack_batch, Dataset, Sample};
use super::model::Model;
use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Mean softmax cross-entropy of a traced batch.
pub fn loss_var<'g>(model: &Model, params: &[Var<'g>], images: Var<'g>, labels: &[usize]) -> Result<Var<'g>> {
    let classes = model.spec().num_classes;
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::LabelOutOfRange { label, classes });
    }
    model.logits(params, images)?.softmax_cross_entropy(labels)
}

/// Mean cross-entropy of the model on `batch`.
pub fn forward_loss(model: &Model, batch: &[Sample]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (images, labels) = stack_batch(batch)?;
    let graph = Graph::new();
    let params = model.param_leaves(&graph);
    let x = graph.leaf(images);
    loss_var(model, &params, x, &labels)?.item()
}

/// Loss and parameter gradient for a stacked batch.
pub fn param_gradient(model: &Model, images: &Tensor, labels: &[usize]) -> Result<(f64, Vec<Tensor>)> {
    let graph = Graph::new();
    let params = model.param_leaves(&graph);
    let x = graph.leaf(images.clone());
    let loss = loss_var(model, &params, x, labels)?;
    let grads = graph.gradient(loss, &params)?;
    Ok((loss.item()?, grads.iter().map(Var::value).collect()))
}

/// `theta - lr * grad`, parameter by parameter.
pub fn sgd_update(params: &[Tensor], grads: &[Tensor], lr: f64) -> Result<Vec<Tensor>> {
    params
        .iter()
        .zip(grads)
        .map(|(p, g)| p.zip_map(g, |a, b| a - lr * b))
        .collect()
}

/// Sequential mini-batches over `epochs` passes, reshuffling each pass with a
/// generator seeded by `seed`. A trailing partial batch is kept.
pub fn epoch_batches(len: usize, batch_size: usize, epochs: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for _ in 0..epochs {
        let mut order: Vec<usize> = (0..len).collect();
        order.shuffle(&mut rng);
        out.extend(order.chunks(batch_size.max(1)).map(<[usize]>::to_vec));
    }
    out
}

/// Plain SGD for `steps` mini-batch updates.
pub fn train_steps(model: &Model, data: &Dataset, steps: usize, lr: f64, batch_size: usize, seed: u64) -> Result<Model> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if !(lr > 0.0) || batch_size == 0 {
        return Err(Error::InvalidArgument(format!("need lr > 0 and batch_size > 0, got {lr}, {batch_size}")));
    }
    if steps == 0 {
        return Ok(model.clone());
    }
    let per_epoch = data.len().div_ceil(batch_size);
    let epochs = steps.div_ceil(per_epoch);
    let schedule = epoch_batches(data.len(), batch_size, epochs, seed);
    let mut params = model.params().to_vec();
    for batch in schedule.iter().take(steps) {
        let current = model.with_params(params.clone())?;
        let samples: Vec<Sample> = batch.iter().map(|&i| data.samples()[i].clone()).collect();
        let (images, labels) = stack_batch(&samples)?;
        let (_, grads) = param_gradient(&current, &images, &labels)?;
        params = sgd_update(&params, &grads, lr)?;
    }
    model.with_params(params)
}
