//! The merge operator `x_i ← Σ_j π_ij P^{ij} x_j` over each neighbourhood.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::align::{
    activation_match_with, apply_permutation, permute_state, weight_match, LayerPermutation,
    Normalization,
};
use crate::error::{dim_err, invalid, Error, Result};
use crate::linalg::Matrix;
use crate::nn::{forward, ModelParams, ParamSet};
use crate::optim::OptimizerState;
use crate::topology::{MixingMatrix, Topology};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum MergeMode {
    #[default]
    ActivationMatch,
    WeightMatch,
    /// Plain weighted averaging (`P^{ij} = I`).
    Identity,
}

impl MergeMode {
    pub fn name(self) -> &'static str {
        match self {
            MergeMode::ActivationMatch => "activation_match",
            MergeMode::WeightMatch => "weight_match",
            MergeMode::Identity => "identity",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "activation_match" | "am" => Ok(MergeMode::ActivationMatch),
            "weight_match" | "wm" => Ok(MergeMode::WeightMatch),
            "identity" | "wa" => Ok(MergeMode::Identity),
            other => invalid(format!(
                "unknown merge mode '{other}' (expected activation_match, weight_match or identity)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergePlan {
    pub mode: MergeMode,
    /// Merge at iterations `k` with `k mod frequency_n = 0`.
    pub frequency_n: usize,
    pub matching_batch: usize,
    pub normalization: Normalization,
    pub weight_match_sweeps: usize,
    /// Merge momentum and moment buffers alongside the model. `û` is always
    /// gossiped for AMSGrad.
    pub merge_state: bool,
}

impl Default for MergePlan {
    fn default() -> Self {
        Self {
            mode: MergeMode::ActivationMatch,
            frequency_n: 1,
            matching_batch: 256,
            normalization: Normalization::Center,
            weight_match_sweeps: 50,
            merge_state: true,
        }
    }
}

impl MergePlan {
    pub fn validate(&self) -> Result<()> {
        if self.frequency_n < 1 {
            return invalid("n must satisfy n ≥ 1");
        }
        if self.matching_batch < 1 {
            return invalid("matching_batch must satisfy matching_batch ≥ 1");
        }
        if self.weight_match_sweeps < 1 {
            return invalid("wm_sweeps must satisfy wm_sweeps ≥ 1");
        }
        Ok(())
    }
}

pub fn should_merge(k: usize, plan: &MergePlan) -> bool {
    plan.frequency_n > 0 && k.is_multiple_of(plan.frequency_n)
}

/// Messages received per agent in one merge round, averaged over agents:
/// `N − 1` for a complete graph, 2 for a ring, 0 for a single agent.
pub fn rounds_per_merge(topo: &Topology) -> f64 {
    let n = topo.n_agents();
    (0..n).map(|i| topo.degree(i)).sum::<usize>() as f64 / n as f64
}

/// Communication rounds over `epochs`, given `iters_per_epoch` local
/// iterations per epoch. Merging every two epochs gives `0.5·(N−1)` per
/// epoch on a complete graph and `0.5·2` on a ring; other frequencies scale
/// inversely.
pub fn charge_communication(topo: &Topology, epochs: f64, plan: &MergePlan, iters_per_epoch: usize) -> f64 {
    let merges = epochs * iters_per_epoch as f64 / plan.frequency_n as f64;
    rounds_per_merge(topo) * merges
}

/// Flattened mean `x̄` of all models.
pub fn average_params(models: &[ParamSet]) -> Result<ParamSet> {
    let Some(first) = models.first() else {
        return dim_err("cannot average zero models");
    };
    let mut acc = first.map(|_| 0.0);
    for m in models {
        acc.add_scaled(1.0, m)?;
    }
    let n = models.len() as f64;
    Ok(acc.map(|x| x / n))
}

pub fn average_model(models: &[ModelParams]) -> Result<ModelParams> {
    let params: Vec<ParamSet> = models.iter().map(|m| m.params.clone()).collect();
    Ok(ModelParams {
        params: average_params(&params)?,
        activation: models[0].activation,
    })
}

/// `‖x_i − x̄‖²` for every agent.
pub fn consensus_distances(models: &[ModelParams]) -> Result<Vec<f64>> {
    let mean = average_model(models)?;
    models
        .iter()
        .map(|m| {
            let diff = m.params.zip_map(&mean.params, |a, b| a - b)?;
            Ok(diff.norm_sq())
        })
        .collect()
}

/// `(1/N) Σ ‖x_i − x̄‖²`.
pub fn consensus_error(models: &[ModelParams]) -> Result<f64> {
    let d = consensus_distances(models)?;
    Ok(d.iter().sum::<f64>() / d.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergedAgent {
    pub model: ModelParams,
    pub state: OptimizerState,
    /// `(j, P^{ij})` for every neighbour with positive weight, `j ≠ i`.
    pub permutations: Vec<(usize, LayerPermutation)>,
}

impl MergedAgent {
    pub fn fixed_point_fraction(&self) -> Option<f64> {
        if self.permutations.is_empty() {
            return None;
        }
        let sum: f64 = self.permutations.iter().map(|(_, p)| p.fixed_point_fraction()).sum();
        Some(sum / self.permutations.len() as f64)
    }
}

/// Permutation aligning `candidate` to `reference` under `plan.mode`.
pub fn align_pair(
    reference: &ModelParams,
    candidate: &ModelParams,
    plan: &MergePlan,
    batch: &Matrix,
) -> Result<LayerPermutation> {
    match plan.mode {
        MergeMode::Identity => Ok(LayerPermutation::identity(&reference.hidden_widths())),
        MergeMode::WeightMatch => weight_match(reference, candidate, plan.weight_match_sweeps),
        MergeMode::ActivationMatch => {
            let (_, tr) = forward(reference, batch)?;
            let (_, tc) = forward(candidate, batch)?;
            activation_match_with(&tr, &tc, plan.normalization)
        }
    }
}

fn weighted_sum<'a>(terms: impl Iterator<Item = (f64, &'a ParamSet)>) -> Result<ParamSet> {
    let mut acc: Option<ParamSet> = None;
    for (w, p) in terms {
        match acc.as_mut() {
            // Start from the first product so that a single unit weight
            // reproduces the input bit for bit.
            None => acc = Some(p.map(|x| w * x)),
            Some(a) => a.add_scaled(w, p)?,
        }
    }
    acc.ok_or_else(|| Error::Invariant("merge with an empty neighbourhood".into()))
}

/// Merges agent `i` against a snapshot of every agent. `batch` is drawn from
/// agent `i`'s shard and only used by activation matching.
pub fn merge_agent(
    i: usize,
    models: &[ModelParams],
    states: &[OptimizerState],
    pi: &MixingMatrix,
    topo: &Topology,
    plan: &MergePlan,
    batch: &Matrix,
) -> Result<MergedAgent> {
    let n = models.len();
    if states.len() != n || pi.n() != n || topo.n_agents() != n {
        return dim_err(format!(
            "{n} models, {} states, {}x{} mixing matrix, {} agents in topology",
            states.len(),
            pi.n(),
            pi.n(),
            topo.n_agents()
        ));
    }
    for j in 0..n {
        if j != i && pi.weight(i, j) > 0.0 && !topo.is_edge(i, j) {
            return Err(Error::Topology(format!(
                "pi[{i}][{j}] = {} but agent {j} is not a neighbour of {i}",
                pi.weight(i, j)
            )));
        }
    }
    let reference = &models[i];
    let mut aligned: Vec<(f64, ModelParams, OptimizerState)> = Vec::new();
    let mut permutations = Vec::new();
    for j in 0..n {
        let w = pi.weight(i, j);
        if w == 0.0 {
            continue;
        }
        if j == i {
            aligned.push((w, models[i].clone(), states[i].clone()));
            continue;
        }
        models[j].ensure_same_architecture(reference)?;
        let p = align_pair(reference, &models[j], plan, batch)?;
        aligned.push((w, apply_permutation(&models[j], &p)?, permute_state(&states[j], &p)?));
        permutations.push((j, p));
    }

    let params = weighted_sum(aligned.iter().map(|(w, m, _)| (*w, &m.params)))?;
    let model = ModelParams {
        params,
        activation: reference.activation,
    };
    if !model.is_finite() {
        return Err(Error::Invariant(format!("merged model of agent {i} is not finite")));
    }

    let mut state = states[i].clone();
    macro_rules! gossip {
        ($field:ident) => {
            if state.$field.is_some() {
                let terms: Option<Vec<(f64, &ParamSet)>> = aligned
                    .iter()
                    .map(|(w, _, s)| s.$field.as_ref().map(|b| (*w, b)))
                    .collect();
                if let Some(terms) = terms {
                    state.$field = Some(weighted_sum(terms.into_iter())?);
                }
            }
        };
    }
    gossip!(u_hat);
    if plan.merge_state {
        gossip!(velocity);
        gossip!(m);
        gossip!(v_hat);
        gossip!(v);
        gossip!(v_prev);
    }
    Ok(MergedAgent {
        model,
        state,
        permutations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeRoundStats {
    pub round: usize,
    pub iteration: usize,
    pub pre_consensus: Vec<f64>,
    pub post_consensus: Vec<f64>,
    /// Rounds charged for this merge (mean messages per agent).
    pub comm_rounds: f64,
    /// Mean fixed-point fraction over all aligned pairs; `None` when no
    /// agent has a neighbour.
    pub fixed_point_fraction: Option<f64>,
}

impl MergeRoundStats {
    pub fn pre_consensus_error(&self) -> f64 {
        mean(&self.pre_consensus)
    }

    pub fn post_consensus_error(&self) -> f64 {
        mean(&self.post_consensus)
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

pub struct MergeOutcome {
    pub models: Vec<ModelParams>,
    pub states: Vec<OptimizerState>,
    pub stats: MergeRoundStats,
}

/// Synchronous merge barrier: every agent reads the same snapshot, results
/// are written back in agent order.
#[allow(clippy::too_many_arguments)]
pub fn merge_round(
    models: &[ModelParams],
    states: &[OptimizerState],
    pi: &MixingMatrix,
    topo: &Topology,
    plan: &MergePlan,
    batches: &[Matrix],
    round: usize,
    iteration: usize,
) -> Result<MergeOutcome> {
    if batches.len() != models.len() {
        return dim_err(format!("{} matching batches for {} agents", batches.len(), models.len()));
    }
    let pre_consensus = consensus_distances(models)?;
    let merged: Vec<MergedAgent> = (0..models.len())
        .into_par_iter()
        .map(|i| merge_agent(i, models, states, pi, topo, plan, &batches[i]))
        .collect::<Result<_>>()?;
    let fractions: Vec<f64> = merged
        .iter()
        .flat_map(|m| m.permutations.iter().map(|(_, p)| p.fixed_point_fraction()))
        .collect();
    let (models, states): (Vec<_>, Vec<_>) = merged.into_iter().map(|m| (m.model, m.state)).unzip();
    let post_consensus = consensus_distances(&models)?;
    Ok(MergeOutcome {
        stats: MergeRoundStats {
            round,
            iteration,
            pre_consensus,
            post_consensus,
            comm_rounds: rounds_per_merge(topo),
            fixed_point_fraction: (!fractions.is_empty()).then(|| mean(&fractions)),
        },
        models,
        states,
    })
}
