//! Hidden-unit alignment between two networks of the same architecture.
//!
//! A [`LayerPermutation`] stores, for every hidden layer, the *source* index
//! of each unit: applying `p` produces a model whose unit `r` is the input
//! model's unit `p[r]`. Matching a candidate to a reference returns the `p`
//! that moves the candidate into the reference's unit order.

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, invalid, Error, Result};
use crate::linalg::{solve_lap_max, Matrix};
use crate::nn::{ActivationTrace, Layer, ModelParams, ParamSet};
use crate::optim::OptimizerState;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerPermutation {
    pub perms: Vec<Vec<usize>>,
}

impl LayerPermutation {
    pub fn identity(widths: &[usize]) -> Self {
        Self {
            perms: widths.iter().map(|&w| (0..w).collect()).collect(),
        }
    }

    pub fn new(perms: Vec<Vec<usize>>) -> Result<Self> {
        let lp = Self { perms };
        lp.validate()?;
        Ok(lp)
    }

    pub fn validate(&self) -> Result<()> {
        for (l, p) in self.perms.iter().enumerate() {
            let mut seen = vec![false; p.len()];
            for &v in p {
                if v >= p.len() || seen[v] {
                    return invalid(format!("layer {l} permutation is not a bijection"));
                }
                seen[v] = true;
            }
        }
        Ok(())
    }

    pub fn widths(&self) -> Vec<usize> {
        self.perms.iter().map(Vec::len).collect()
    }

    pub fn is_identity(&self) -> bool {
        self.perms
            .iter()
            .all(|p| p.iter().enumerate().all(|(i, &v)| i == v))
    }

    pub fn inverse(&self) -> Self {
        Self {
            perms: self
                .perms
                .iter()
                .map(|p| {
                    let mut inv = vec![0; p.len()];
                    for (i, &v) in p.iter().enumerate() {
                        inv[v] = i;
                    }
                    inv
                })
                .collect(),
        }
    }

    /// The permutation equivalent to applying `self` and then `next`.
    pub fn then(&self, next: &LayerPermutation) -> Result<Self> {
        if self.widths() != next.widths() {
            return dim_err("composing permutations of different widths");
        }
        Ok(Self {
            perms: self
                .perms
                .iter()
                .zip(&next.perms)
                .map(|(a, b)| b.iter().map(|&r| a[r]).collect())
                .collect(),
        })
    }

    /// Share of hidden units mapped onto themselves.
    pub fn fixed_point_fraction(&self) -> f64 {
        let total: usize = self.perms.iter().map(Vec::len).sum();
        if total == 0 {
            return 1.0;
        }
        let fixed = self
            .perms
            .iter()
            .flat_map(|p| p.iter().enumerate())
            .filter(|(i, &v)| *i == v)
            .count();
        fixed as f64 / total as f64
    }
}

fn hidden_widths(params: &ParamSet) -> Vec<usize> {
    let layers = params.layers();
    layers[..layers.len().saturating_sub(1)]
        .iter()
        .map(Layer::outputs)
        .collect()
}

/// Rows of every hidden layer (and its bias) reordered by the layer's
/// permutation, and the next layer's columns reordered to match.
pub fn permute_params(params: &ParamSet, lp: &LayerPermutation) -> Result<ParamSet> {
    lp.validate()?;
    if lp.widths() != hidden_widths(params) {
        return dim_err(format!(
            "permutation widths {:?} vs hidden widths {:?}",
            lp.widths(),
            hidden_widths(params)
        ));
    }
    let mut out = params.clone();
    let layers = out.layers_mut();
    for (h, p) in lp.perms.iter().enumerate() {
        // Layer h already carries the column permutation from layer h-1.
        let src = layers[h].clone();
        layers[h].weight = src.weight.select_rows(p);
        layers[h].bias = p.iter().map(|&r| src.bias[r]).collect();
        let next = &layers[h + 1].weight;
        layers[h + 1].weight = Matrix::from_fn(next.rows(), next.cols(), |r, c| next[(r, p[c])]);
    }
    Ok(out)
}

pub fn apply_permutation(model: &ModelParams, lp: &LayerPermutation) -> Result<ModelParams> {
    Ok(ModelParams {
        params: permute_params(&model.params, lp)?,
        activation: model.activation,
    })
}

/// Every optimizer buffer is a coordinate-wise statistic, so it follows the
/// model through the same permutation.
pub fn permute_state(state: &OptimizerState, lp: &LayerPermutation) -> Result<OptimizerState> {
    let mut out = state.clone();
    for buf in out.buffers_mut() {
        *buf = permute_params(buf, lp)?;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Normalization {
    /// Subtract each unit's mean over the batch.
    #[default]
    Center,
    /// Center, then scale each unit to unit norm (zero rows stay zero).
    Correlation,
}

fn normalize_rows(z: &Matrix, norm: Normalization) -> Matrix {
    let mut out = z.clone();
    let n = z.cols().max(1) as f64;
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let mean = row.iter().sum::<f64>() / n;
        row.iter_mut().for_each(|v| *v -= mean);
        if norm == Normalization::Correlation {
            let len = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if len > 0.0 {
                row.iter_mut().for_each(|v| *v /= len);
            }
        }
    }
    out
}

/// Per-layer score matrices `Ẑ_ref · Ẑ_candᵀ`.
pub fn activation_scores(
    reference: &ActivationTrace,
    candidate: &ActivationTrace,
    norm: Normalization,
) -> Result<Vec<Matrix>> {
    if reference.layers.len() != candidate.layers.len() {
        return dim_err(format!(
            "{} vs {} hidden layers",
            reference.layers.len(),
            candidate.layers.len()
        ));
    }
    reference
        .layers
        .iter()
        .zip(&candidate.layers)
        .enumerate()
        .map(|(l, (a, b))| {
            if a.shape() != b.shape() {
                return dim_err(format!(
                    "layer {l}: activations {:?} vs {:?} (traces must share the batch)",
                    a.shape(),
                    b.shape()
                ));
            }
            normalize_rows(a, norm).matmul_transposed(&normalize_rows(b, norm))
        })
        .collect()
}

pub fn activation_match(reference: &ActivationTrace, candidate: &ActivationTrace) -> Result<LayerPermutation> {
    activation_match_with(reference, candidate, Normalization::Center)
}

/// Each hidden layer is solved as an independent assignment problem.
pub fn activation_match_with(
    reference: &ActivationTrace,
    candidate: &ActivationTrace,
    norm: Normalization,
) -> Result<LayerPermutation> {
    let perms = activation_scores(reference, candidate, norm)?
        .iter()
        .map(|s| solve_lap_max(s).map(|a| a.perm))
        .collect::<Result<_>>()?;
    Ok(LayerPermutation { perms })
}

/// `⟨vec(reference), vec(candidate)⟩`.
pub fn weight_objective(reference: &ParamSet, candidate: &ParamSet) -> Result<f64> {
    reference.dot(candidate)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightMatch {
    pub permutation: LayerPermutation,
    /// Objective before any update, then after every layer update.
    pub objective_trace: Vec<f64>,
    pub sweeps: usize,
    pub converged: bool,
}

pub fn weight_match(reference: &ModelParams, candidate: &ModelParams, max_sweeps: usize) -> Result<LayerPermutation> {
    Ok(weight_match_traced(reference, candidate, max_sweeps)?.permutation)
}

/// Coordinate ascent over hidden layers. Each update fixes the other
/// layers' permutations and solves the exact assignment for one layer, so
/// the objective never decreases.
pub fn weight_match_traced(
    reference: &ModelParams,
    candidate: &ModelParams,
    max_sweeps: usize,
) -> Result<WeightMatch> {
    reference.ensure_same_architecture(candidate)?;
    let widths = reference.hidden_widths();
    let mut lp = LayerPermutation::identity(&widths);
    let mut trace = vec![weight_objective(&reference.params, &candidate.params)?];
    let rl = reference.layers();
    let cl = candidate.layers();
    let mut sweeps = 0;
    let mut converged = widths.is_empty();
    while sweeps < max_sweeps && !converged {
        sweeps += 1;
        let mut changed = false;
        for h in 0..widths.len() {
            // Candidate weights into layer h with inputs already permuted.
            let a = match h {
                0 => cl[0].weight.clone(),
                _ => {
                    let prev = &lp.perms[h - 1];
                    Matrix::from_fn(cl[h].weight.rows(), cl[h].weight.cols(), |r, c| {
                        cl[h].weight[(r, prev[c])]
                    })
                }
            };
            // Candidate weights out of layer h with outputs already permuted.
            let b = match lp.perms.get(h + 1) {
                Some(next) => cl[h + 1].weight.select_rows(next),
                None => cl[h + 1].weight.clone(),
            };
            let mut score = rl[h].weight.matmul_transposed(&a)?;
            let back = rl[h + 1].weight.transpose().matmul(&b)?;
            let bias = Matrix::from_fn(widths[h], widths[h], |r, c| rl[h].bias[r] * cl[h].bias[c]);
            score = score.add(&back)?.add(&bias)?;
            let assignment = solve_lap_max(&score)?;
            if assignment.perm != lp.perms[h] {
                changed = true;
                lp.perms[h] = assignment.perm;
            }
            let permuted = permute_params(&candidate.params, &lp)?;
            let objective = weight_objective(&reference.params, &permuted)?;
            let last = *trace.last().expect("seeded with the initial objective");
            if objective < last - 1e-9 * (1.0 + last.abs()) {
                return Err(Error::Invariant(format!(
                    "weight matching objective decreased from {last} to {objective}"
                )));
            }
            trace.push(objective);
        }
        converged = !changed;
    }
    Ok(WeightMatch {
        permutation: lp,
        objective_trace: trace,
        sweeps,
        converged,
    })
}
