use serde::{Deserialize, Serialize};

use super::params::{GradientSet, Layer, ModelParams, ParamSet};
use crate::error::{dim_err, invalid, Result};
use crate::linalg::Matrix;

/// Post-nonlinearity hidden activations, one `units × samples` matrix per
/// hidden layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTrace {
    pub layers: Vec<Matrix>,
}

impl ActivationTrace {
    pub fn samples(&self) -> usize {
        self.layers.first().map_or(0, Matrix::cols)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum LossKind {
    #[default]
    CrossEntropy,
    Mse,
}

struct ForwardCache {
    /// Input followed by each hidden layer's post-activation, `batch × width`.
    activations: Vec<Matrix>,
    /// Pre-activations of each hidden layer, `batch × width`.
    pre: Vec<Matrix>,
    logits: Matrix,
}

fn affine(input: &Matrix, layer: &Layer) -> Result<Matrix> {
    let mut z = input.matmul_transposed(&layer.weight)?;
    for r in 0..z.rows() {
        for (v, b) in z.row_mut(r).iter_mut().zip(&layer.bias) {
            *v += b;
        }
    }
    Ok(z)
}

fn forward_cached(model: &ModelParams, inputs: &Matrix) -> Result<ForwardCache> {
    let layers = model.layers();
    let Some(first) = layers.first() else {
        return dim_err("model has no layers");
    };
    if inputs.cols() != first.inputs() {
        return dim_err(format!(
            "input width {} does not match model input dimension {}",
            inputs.cols(),
            first.inputs()
        ));
    }
    let mut activations = vec![inputs.clone()];
    let mut pre = Vec::with_capacity(layers.len() - 1);
    for layer in &layers[..layers.len() - 1] {
        let z = affine(activations.last().expect("non-empty"), layer)?;
        let mut a = z.clone();
        a.as_mut_slice()
            .iter_mut()
            .for_each(|v| *v = model.activation.apply(*v));
        pre.push(z);
        activations.push(a);
    }
    let logits = affine(activations.last().expect("non-empty"), &layers[layers.len() - 1])?;
    Ok(ForwardCache {
        activations,
        pre,
        logits,
    })
}

/// Logits for `inputs` (`batch × d0`) plus the hidden-unit trace.
pub fn forward(model: &ModelParams, inputs: &Matrix) -> Result<(Matrix, ActivationTrace)> {
    let cache = forward_cached(model, inputs)?;
    let trace = ActivationTrace {
        layers: cache.activations[1..].iter().map(Matrix::transpose).collect(),
    };
    Ok((cache.logits, trace))
}

pub fn logits(model: &ModelParams, inputs: &Matrix) -> Result<Matrix> {
    Ok(forward_cached(model, inputs)?.logits)
}

fn backprop(model: &ModelParams, cache: &ForwardCache, mut delta: Matrix) -> Result<GradientSet> {
    let layers = model.layers();
    let mut grads: Vec<Layer> = Vec::with_capacity(layers.len());
    for l in (0..layers.len()).rev() {
        let input = &cache.activations[l];
        // dW = deltaᵀ · input, db = column sums of delta.
        let dw = delta.transpose().matmul(input)?;
        let db = delta.col_sums();
        grads.push(Layer { weight: dw, bias: db });
        if l > 0 {
            let mut upstream = delta.matmul(&layers[l].weight)?;
            let z = &cache.pre[l - 1];
            upstream
                .as_mut_slice()
                .iter_mut()
                .zip(z.as_slice())
                .for_each(|(g, &zv)| *g *= model.activation.derivative(zv));
            delta = upstream;
        }
    }
    grads.reverse();
    ParamSet::new(grads)
}

/// Mean softmax cross-entropy over the batch and its exact gradient.
pub fn loss_and_grad(
    model: &ModelParams,
    inputs: &Matrix,
    labels: &[usize],
) -> Result<(f64, GradientSet)> {
    if labels.len() != inputs.rows() {
        return dim_err(format!(
            "{} labels for {} samples",
            labels.len(),
            inputs.rows()
        ));
    }
    let cache = forward_cached(model, inputs)?;
    let classes = cache.logits.cols();
    if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
        return invalid(format!("label {bad} out of range for {classes} classes"));
    }
    let batch = inputs.rows().max(1) as f64;
    let mut delta = Matrix::zeros(cache.logits.rows(), classes);
    let mut loss = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        let z = cache.logits.row(r);
        let max = z.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let sum: f64 = z.iter().map(|v| (v - max).exp()).sum();
        let log_norm = max + sum.ln();
        loss += log_norm - z[y];
        for (c, d) in delta.row_mut(r).iter_mut().enumerate() {
            let p = (z[c] - log_norm).exp();
            *d = (p - if c == y { 1.0 } else { 0.0 }) / batch;
        }
    }
    let grads = backprop(model, &cache, delta)?;
    Ok((loss / batch, grads))
}

/// Mean of `½‖ŷ − y‖²` over the batch and its exact gradient.
pub fn mse_loss_and_grad(
    model: &ModelParams,
    inputs: &Matrix,
    targets: &Matrix,
) -> Result<(f64, GradientSet)> {
    let cache = forward_cached(model, inputs)?;
    if targets.shape() != cache.logits.shape() {
        return dim_err(format!(
            "targets {:?} vs outputs {:?}",
            targets.shape(),
            cache.logits.shape()
        ));
    }
    let batch = inputs.rows().max(1) as f64;
    let residual = cache.logits.sub(targets)?;
    let loss = 0.5 * residual.as_slice().iter().map(|r| r * r).sum::<f64>() / batch;
    let delta = residual.scale(1.0 / batch);
    let grads = backprop(model, &cache, delta)?;
    Ok((loss, grads))
}

/// Mean cross-entropy without gradients.
pub fn cross_entropy(model: &ModelParams, inputs: &Matrix, labels: &[usize]) -> Result<f64> {
    let z = logits(model, inputs)?;
    if labels.len() != z.rows() {
        return dim_err("label count does not match batch");
    }
    let mut loss = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        let row = z.row(r);
        if y >= row.len() {
            return invalid(format!("label {y} out of range"));
        }
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        loss += max + sum.ln() - row[y];
    }
    Ok(loss / labels.len().max(1) as f64)
}

pub fn mse(model: &ModelParams, inputs: &Matrix, targets: &Matrix) -> Result<f64> {
    let z = logits(model, inputs)?;
    let residual = z.sub(targets)?;
    Ok(0.5 * residual.as_slice().iter().map(|r| r * r).sum::<f64>() / inputs.rows().max(1) as f64)
}

pub fn predict(model: &ModelParams, inputs: &Matrix) -> Result<Vec<usize>> {
    let z = logits(model, inputs)?;
    Ok((0..z.rows())
        .map(|r| {
            z.row(r)
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0
        })
        .collect())
}

pub fn accuracy(model: &ModelParams, inputs: &Matrix, labels: &[usize]) -> Result<f64> {
    if labels.is_empty() {
        return Ok(0.0);
    }
    let pred = predict(model, inputs)?;
    let hits = pred.iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / labels.len() as f64)
}
