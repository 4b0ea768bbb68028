use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::data::Dataset;
use crate::align::apply_permutation;
use crate::error::{invalid, Result};
use crate::linalg::{Matrix, RngStream};
use crate::merge::{align_pair, average_model, average_params, consensus_error, MergePlan};
use crate::nn::{GradientSet, ModelParams};

/// One row of the metrics stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub repeat: usize,
    pub iteration: usize,
    pub epoch: f64,
    /// Minibatch loss of every agent at its iteration-`k` iterate (empty for
    /// the iteration-0 record).
    pub train_loss: Vec<f64>,
    /// Mean over agents of each agent's own test accuracy.
    pub test_accuracy_mean: Option<f64>,
    /// Test accuracy of the raw parameter average `x̄`.
    pub avg_model_accuracy: Option<f64>,
    /// Test accuracy of the average after aligning every agent to agent 0.
    pub aligned_avg_accuracy: Option<f64>,
    pub avg_model_test_loss: Option<f64>,
    pub consensus_error: f64,
    /// `‖(1/N) Σ ∇f^i(x̄)‖²` on each agent's full shard.
    pub grad_norm_sq: f64,
    /// Mean of `grad_norm_sq` over all records so far.
    pub grad_norm_running_avg: f64,
    pub comm_rounds: f64,
    pub merges: usize,
    /// Fixed-point fraction of the most recent merge round.
    pub fixed_point_fraction: Option<f64>,
    pub diverged: bool,
}

impl MetricsRecord {
    /// `None` for the initial record, which precedes any minibatch.
    pub fn train_loss_mean(&self) -> Option<f64> {
        if self.train_loss.is_empty() {
            return None;
        }
        Some(self.train_loss.iter().sum::<f64>() / self.train_loss.len() as f64)
    }
}

fn full_shard_gradients(point: &ModelParams, train: &Dataset, shards: &[Vec<usize>]) -> Result<Vec<GradientSet>> {
    if shards.iter().any(Vec::is_empty) {
        return invalid("empty shard");
    }
    shards
        .par_iter()
        .map(|s| train.loss_and_grad(point, s).map(|(_, g)| g))
        .collect()
}

/// Consensus error of `models` and the squared norm of the averaged
/// full-shard gradient at `x̄`.
pub fn consensus_and_gradnorm(models: &[ModelParams], train: &Dataset, shards: &[Vec<usize>]) -> Result<(f64, f64)> {
    let mean = average_model(models)?;
    let grads = full_shard_gradients(&mean, train, shards)?;
    Ok((consensus_error(models)?, average_params(&grads)?.norm_sq()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Heterogeneity {
    /// Mean over agents of `E‖g_minibatch − ∇f^i‖²`.
    pub sigma2: f64,
    /// `(1/N) Σ ‖∇f^i(x) − ∇f(x)‖²`.
    pub kappa2: f64,
}

/// Bounded-variance and gradient-diversity estimates at `point`.
pub fn estimate_heterogeneity(
    point: &ModelParams,
    train: &Dataset,
    shards: &[Vec<usize>],
    probe_batches: usize,
    batch_size: usize,
    rng: &mut RngStream,
) -> Result<Heterogeneity> {
    if probe_batches < 2 {
        return invalid("estimate_heterogeneity needs at least 2 probe batches");
    }
    let full = full_shard_gradients(point, train, shards)?;
    let global = average_params(&full)?;
    let mut kappa2 = 0.0;
    for g in &full {
        kappa2 += g.zip_map(&global, |a, b| a - b)?.norm_sq();
    }
    kappa2 /= shards.len() as f64;

    let mut sigma2 = 0.0;
    for (shard, g_full) in shards.iter().zip(&full) {
        let mut acc = 0.0;
        for _ in 0..probe_batches {
            let mut idx: Vec<usize> = rng
                .sample_indices(shard.len(), batch_size)
                .into_iter()
                .map(|t| shard[t])
                .collect();
            idx.sort_unstable();
            let (_, g) = train.loss_and_grad(point, &idx)?;
            acc += g.zip_map(g_full, |a, b| a - b)?.norm_sq();
        }
        sigma2 += acc / probe_batches as f64;
    }
    sigma2 /= shards.len() as f64;
    Ok(Heterogeneity { sigma2, kappa2 })
}

/// Average after aligning every agent to agent 0 under `plan.mode`.
pub fn aligned_average(models: &[ModelParams], plan: &MergePlan, batch: &Matrix) -> Result<ModelParams> {
    let reference = &models[0];
    let mut aligned = vec![reference.clone()];
    for m in &models[1..] {
        let p = align_pair(reference, m, plan, batch)?;
        aligned.push(apply_permutation(m, &p)?);
    }
    average_model(&aligned)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Activation;
    use crate::sim::data::{make_regression, make_synthetic, partition};
    use crate::config::PartitionScheme;

    #[test]
    fn equal_agents_have_zero_consensus() {
        let ds = make_synthetic(3, 4, 10, 2.0, &mut RngStream::new(0, 0)).unwrap();
        let m = ModelParams::init(&[4, 5, 3], Activation::Relu, &mut RngStream::new(0, 1));
        let shards = vec![(0..15).collect(), (15..30).collect()];
        let (c, g) = consensus_and_gradnorm(&[m.clone(), m], &ds, &shards).unwrap();
        assert_eq!(c, 0.0);
        assert!(g > 0.0);
    }

    #[test]
    fn shared_full_batch_has_no_heterogeneity() {
        let ds = make_synthetic(3, 4, 10, 2.0, &mut RngStream::new(1, 0)).unwrap();
        let m = ModelParams::init(&[4, 5, 3], Activation::Relu, &mut RngStream::new(1, 1));
        let all: Vec<usize> = (0..30).collect();
        let h = estimate_heterogeneity(&m, &ds, &[all.clone(), all], 3, 30, &mut RngStream::new(1, 2)).unwrap();
        assert_eq!(h.kappa2, 0.0);
        assert_eq!(h.sigma2, 0.0);
    }

    #[test]
    fn gradnorm_vanishes_at_least_squares_solution() {
        // Linear model, zero noise: the generating weights are the minimiser.
        let mut rng = RngStream::new(2, 0);
        let ds = make_regression(40, 3, 1, 0.0, &mut rng).unwrap();
        // Solve the normal equations with the bias column appended.
        let x = Matrix::from_fn(40, 4, |r, c| if c < 3 { ds.features[(r, c)] } else { 1.0 });
        let y = ds.targets.clone().unwrap();
        let xtx = x.transpose().matmul(&x).unwrap();
        let xty = x.transpose().matmul(&y).unwrap();
        let a = nalgebra::DMatrix::from_row_slice(4, 4, xtx.as_slice());
        let b = nalgebra::DVector::from_row_slice(xty.as_slice());
        let sol = a.lu().solve(&b).unwrap();
        let mut m = ModelParams::zeros(&[3, 1], Activation::Identity);
        for c in 0..3 {
            m.params.layers_mut()[0].weight.row_mut(0)[c] = sol[c];
        }
        m.params.layers_mut()[0].bias[0] = sol[3];
        let p = partition(&ds, 2, PartitionScheme::Iid, &mut RngStream::new(2, 1)).unwrap();
        let (_, g) = consensus_and_gradnorm(&[m.clone(), m], &ds, &p.shards).unwrap();
        assert!(g < 1e-6, "{g}");
    }

    #[test]
    fn too_few_probes_rejected() {
        let ds = make_synthetic(2, 2, 4, 1.0, &mut RngStream::new(3, 0)).unwrap();
        let m = ModelParams::zeros(&[2, 2], Activation::Relu);
        assert!(estimate_heterogeneity(&m, &ds, &[vec![0, 1]], 1, 2, &mut RngStream::new(0, 0)).is_err());
    }
}
