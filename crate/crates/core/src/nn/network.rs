//! Whole-model passes over a [`ModelSpec`]: initialisation, forward,
//! softmax cross-entropy with backpropagation, and accuracy evaluation.

use rand::Rng;

use super::layers::{self, Activation, LayerKind};
use super::params::{ParamEntry, ParamSet};
use super::tensor::Tensor;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::registry::ModelSpec;
use crate::rng;

/// He-uniform weights scaled by fan-in, zero biases. Each entry draws from
/// its own stream keyed by `(seed, entry name)`, so identically named and
/// shaped entries of different architectures start identical.
pub fn init_params(spec: &ModelSpec, seed: u64) -> Result<ParamSet> {
    let slots = spec.param_slots()?;
    let mut entries = Vec::with_capacity(slots.len());
    for slot in slots {
        let mut stream = rng::stream(seed, &[rng::TAG_INIT, rng::hash_str(&slot.name)]);
        let bound = (6.0 / slot.fan_in as f64).sqrt();
        let n: usize = slot.weight_shape.iter().product();
        let w: Vec<f64> = (0..n).map(|_| stream.random_range(-bound..bound)).collect();
        entries.push(ParamEntry {
            name: slot.name,
            weights: Tensor::new(slot.weight_shape, w)?,
            bias: Tensor::zeros(&slot.bias_shape),
        });
    }
    ParamSet::new(entries)
}

/// Activations retained by [`forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `acts[i]` is the input to layer `i`; the last element is the logits.
    acts: Vec<Tensor>,
    argmax: Vec<Option<Vec<usize>>>,
}

fn check_params(spec: &ModelSpec, params: &ParamSet) -> Result<Vec<Option<usize>>> {
    let slots = spec.param_slots()?;
    for (slot, e) in slots.iter().zip(params.entries()) {
        if slot.name != e.name || slot.weight_shape != e.weights.shape() || slot.bias_shape != e.bias.shape() {
            return Err(Error::shape(
                format!("layer {} ({})", slot.layer, slot.name),
                format!(
                    "expected `{}` {:?}/{:?}, got `{}` {:?}/{:?}",
                    slot.name,
                    slot.weight_shape,
                    slot.bias_shape,
                    e.name,
                    e.weights.shape(),
                    e.bias.shape()
                ),
            ));
        }
    }
    if slots.len() != params.len() {
        let layer = slots.get(params.len()).map_or(spec.layers.len(), |s| s.layer);
        return Err(Error::shape(
            format!("{} layer {layer}", spec.arch_id),
            format!("model has {} parametric layers, parameter set has {}", slots.len(), params.len()),
        ));
    }
    let mut map = vec![None; spec.layers.len()];
    for (i, slot) in slots.iter().enumerate() {
        map[slot.layer] = Some(i);
    }
    Ok(map)
}

/// Runs the model and returns pre-softmax logits `(batch, classes)`.
pub fn forward(spec: &ModelSpec, params: &ParamSet, batch: &Tensor) -> Result<(Tensor, ForwardCache)> {
    let slot_of = check_params(spec, params)?;
    if batch.shape().len() < 2 || batch.shape()[1..] != spec.input_shape[..] {
        return Err(Error::shape(
            "input",
            format!("batch {:?} does not match model input {:?}", batch.shape(), spec.input_shape),
        ));
    }
    let n = spec.layers.len();
    let mut acts = Vec::with_capacity(n + 1);
    let mut argmax = vec![None; n];
    acts.push(batch.clone());
    for (i, layer) in spec.layers.iter().enumerate() {
        let x = &acts[i];
        let mut y = match &layer.kind {
            LayerKind::Dense { .. } => {
                let e = &params.entries()[slot_of[i].expect("dense has params")];
                layers::dense_forward(x, &e.weights, &e.bias)
            }
            LayerKind::Conv2d { stride, .. } => {
                let e = &params.entries()[slot_of[i].expect("conv has params")];
                layers::conv2d_forward(x, &e.weights, &e.bias, *stride)
            }
            LayerKind::AvgPool2d { kernel, stride } => layers::avg_pool_forward(x, *kernel, *stride),
            LayerKind::MaxPool2d { kernel, stride } => {
                let (y, arg) = layers::max_pool_forward(x, *kernel, *stride);
                argmax[i] = Some(arg);
                y
            }
            LayerKind::Flatten => {
                let rows = x.rows();
                let width = x.row_len();
                x.clone().reshape(vec![rows, width])?
            }
        };
        if layer.activation == Activation::Relu {
            y.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        }
        acts.push(y);
    }
    let logits = acts.last().expect("at least one layer").clone();
    Ok((logits, ForwardCache { acts, argmax }))
}

/// Backpropagates `grad_logits` through the cached pass.
pub fn backward(spec: &ModelSpec, params: &ParamSet, cache: &ForwardCache, grad_logits: Tensor) -> Result<ParamSet> {
    let slot_of = check_params(spec, params)?;
    let mut grads = params.zeros_like();
    let mut g = grad_logits;
    for (i, layer) in spec.layers.iter().enumerate().rev() {
        if layer.activation == Activation::Relu {
            let out = &cache.acts[i + 1];
            for (gv, &a) in g.data_mut().iter_mut().zip(out.data()) {
                if a <= 0.0 {
                    *gv = 0.0;
                }
            }
        }
        let x = &cache.acts[i];
        g = match &layer.kind {
            LayerKind::Dense { .. } => {
                let k = slot_of[i].expect("dense has params");
                let (gx, gw, gb) = layers::dense_backward(x, &params.entries()[k].weights, &g);
                let ge = &mut grads.entries_mut()[k];
                ge.weights = gw;
                ge.bias = gb;
                gx
            }
            LayerKind::Conv2d { stride, .. } => {
                let k = slot_of[i].expect("conv has params");
                let (gx, gw, gb) = layers::conv2d_backward(x, &params.entries()[k].weights, &g, *stride);
                let ge = &mut grads.entries_mut()[k];
                ge.weights = gw;
                ge.bias = gb;
                gx
            }
            LayerKind::AvgPool2d { kernel, stride } => layers::avg_pool_backward(x.shape(), &g, *kernel, *stride),
            LayerKind::MaxPool2d { .. } => {
                let arg = cache.argmax[i].as_ref().expect("maxpool argmax cached");
                layers::max_pool_backward(x.shape(), &g, arg)
            }
            LayerKind::Flatten => g.reshape(x.shape().to_vec())?,
        };
    }
    Ok(grads)
}

/// Row-wise softmax of a `(batch, classes)` tensor.
pub fn softmax(logits: &Tensor) -> Tensor {
    let mut out = logits.clone();
    let k = logits.row_len();
    for row in out.data_mut().chunks_mut(k) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    out
}

/// Mean softmax cross-entropy and its gradient with respect to the logits.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (batch, classes) = (logits.rows(), logits.row_len());
    if labels.len() != batch {
        return Err(Error::Data(format!("{} labels for a batch of {batch}", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Data(format!("label {bad} outside [0, {classes})")));
    }
    let mut grad = softmax(logits);
    let mut loss = 0.0;
    let scale = 1.0 / batch as f64;
    for (s, &label) in labels.iter().enumerate() {
        let row = logits.row(s);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[label];
        let grow = &mut grad.data_mut()[s * classes..(s + 1) * classes];
        grow[label] -= 1.0;
        grow.iter_mut().for_each(|v| *v *= scale);
    }
    Ok((loss * scale, grad))
}

/// Mean cross-entropy over the batch and its parameter gradients.
pub fn loss_and_grad(spec: &ModelSpec, params: &ParamSet, batch: &Tensor, labels: &[usize]) -> Result<(f64, ParamSet)> {
    if labels.is_empty() {
        return Err(Error::Data("empty batch".into()));
    }
    let (logits, cache) = forward(spec, params, batch)?;
    let (loss, grad_logits) = cross_entropy(&logits, labels)?;
    let grads = backward(spec, params, &cache, grad_logits)?;
    Ok((loss, grads))
}

/// Index of the largest value; ties resolve to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

const EVAL_CHUNK: usize = 256;

/// Accuracy and mean cross-entropy on a dataset.
pub fn evaluate_with_loss(spec: &ModelSpec, params: &ParamSet, test: &Dataset) -> Result<(f64, f64)> {
    if test.is_empty() {
        return Err(Error::Data("empty evaluation set".into()));
    }
    let mut correct = 0usize;
    let mut loss_sum = 0.0;
    let idx: Vec<usize> = (0..test.len()).collect();
    for chunk in idx.chunks(EVAL_CHUNK) {
        let (x, y) = test.batch(chunk);
        let (logits, _) = forward(spec, params, &x)?;
        let (loss, _) = cross_entropy(&logits, &y)?;
        loss_sum += loss * chunk.len() as f64;
        correct += y
            .iter()
            .enumerate()
            .filter(|&(s, &label)| argmax(logits.row(s)) == label)
            .count();
    }
    let n = test.len() as f64;
    Ok((correct as f64 / n, loss_sum / n))
}

/// Fraction of samples whose argmax logit equals the label.
pub fn evaluate(spec: &ModelSpec, params: &ParamSet, test: &Dataset) -> Result<f64> {
    evaluate_with_loss(spec, params, test).map(|(acc, _)| acc)
}

/// Checks that `params` has exactly the layout `spec` requires.
pub fn validate_params(spec: &ModelSpec, params: &ParamSet) -> Result<()> {
    check_params(spec, params).map(|_| ())
}
