use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::data::{load_csv, make_regression, make_synthetic, partition, train_test_split, Dataset, Partition};
use super::metrics::{aligned_average, consensus_and_gradnorm, MetricsRecord};
use crate::config::{DatasetKind, ExperimentConfig, InitScheme};
use crate::error::{Error, Result};
use crate::linalg::{Matrix, RngStream};
use crate::merge::{average_model, merge_round, should_merge, MergeMode, MergeRoundStats};
use crate::nn::{GradientSet, ModelParams, ParamSet};
use crate::optim::{amsgrad_apply, amsgrad_moments, msgd_step, sgd_step, HyperParams, OptimizerKind, OptimizerState};
use crate::topology::{build_mixing, check_assumption2, MixingMatrix, SpectralReport, Topology};

/// Stream purposes for [`RngStream::derive`].
pub mod streams {
    pub const DATA: u16 = 1;
    pub const SPLIT: u16 = 2;
    pub const PARTITION: u16 = 3;
    pub const INIT: u16 = 4;
    pub const MINIBATCH: u16 = 5;
    pub const MATCHING: u16 = 6;
    pub const PROBE: u16 = 7;
    pub const SPECTRAL: u16 = 8;
}

#[derive(Debug, Clone)]
pub struct AgentState {
    pub id: usize,
    pub model: ModelParams,
    pub opt: OptimizerState,
    pub shard: Vec<usize>,
    pub rng: RngStream,
    pub match_rng: RngStream,
}

impl AgentState {
    fn minibatch(&mut self, batch_size: usize, full_batch: bool) -> Vec<usize> {
        if full_batch || batch_size >= self.shard.len() {
            return self.shard.clone();
        }
        let mut idx: Vec<usize> = self
            .rng
            .sample_indices(self.shard.len(), batch_size)
            .into_iter()
            .map(|t| self.shard[t])
            .collect();
        idx.sort_unstable();
        idx
    }
}

/// Data, partition and network for one seed.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub train: Dataset,
    pub test: Dataset,
    pub partition: Partition,
    pub dims: Vec<usize>,
    pub topology: Topology,
    pub mixing: MixingMatrix,
}

impl Experiment {
    pub fn prepare(config: &ExperimentConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut data_rng = RngStream::derive(seed, streams::DATA, 0);
        let full = match config.dataset {
            DatasetKind::Synthetic => make_synthetic(
                config.classes,
                config.dims,
                config.samples_per_class,
                config.separation,
                &mut data_rng,
            )?,
            DatasetKind::Regression => make_regression(
                config.regression_samples,
                config.dims,
                config.regression_outputs,
                config.noise,
                &mut data_rng,
            )?,
            DatasetKind::Csv => load_csv(config.csv_path.as_deref().expect("validated"))?,
        };
        let (train, test) = train_test_split(&full, config.test_fraction, &mut RngStream::derive(seed, streams::SPLIT, 0))?;
        let partition = partition(
            &train,
            config.agents,
            config.partition,
            &mut RngStream::derive(seed, streams::PARTITION, 0),
        )?;
        let mut dims = vec![train.dims()];
        dims.extend(&config.hidden);
        dims.push(train.output_dim());
        let topology = config.topology()?;
        let mixing = build_mixing(&topology)?;
        Ok(Self {
            train,
            test,
            partition,
            dims,
            topology,
            mixing,
        })
    }

    /// `⌈shard size / batch size⌉` with the mean shard size.
    pub fn iters_per_epoch(&self, config: &ExperimentConfig) -> usize {
        if config.full_batch {
            return 1;
        }
        let shard = self.train.len().div_ceil(self.partition.n_agents());
        shard.div_ceil(config.batch_size).max(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Divergence {
    pub iteration: usize,
    pub agent: usize,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub repeat: usize,
    pub seed: u64,
    pub records: Vec<MetricsRecord>,
    pub merges: Vec<MergeRoundStats>,
    pub final_models: Vec<ModelParams>,
    /// `x̄_K`.
    pub final_average: ModelParams,
    pub final_accuracy: Option<f64>,
    pub final_test_loss: f64,
    pub comm_rounds: f64,
    pub iters_per_epoch: usize,
    pub divergence: Option<Divergence>,
    pub spectral: SpectralReport,
}

pub fn run_dimat(config: &ExperimentConfig) -> Result<RunResult> {
    run_repeat(config, 0)
}

/// Repeat `r` runs with seed `config.seed + r`.
pub fn run_repeat(config: &ExperimentConfig, repeat: usize) -> Result<RunResult> {
    let seed = config.seed.wrapping_add(repeat as u64);
    let experiment = Experiment::prepare(config, seed)?;
    run_experiment(config, &experiment, seed, repeat)
}

pub fn init_agents(config: &ExperimentConfig, experiment: &Experiment, seed: u64) -> Vec<AgentState> {
    experiment
        .partition
        .shards
        .iter()
        .enumerate()
        .map(|(id, shard)| {
            let init_index = match config.init {
                InitScheme::Shared => 0,
                InitScheme::Independent => id as u64,
            };
            let model = ModelParams::init(
                &experiment.dims,
                config.activation,
                &mut RngStream::derive(seed, streams::INIT, init_index),
            );
            AgentState {
                id,
                opt: OptimizerState::new(config.optimizer, &experiment.dims),
                model,
                shard: shard.clone(),
                rng: RngStream::derive(seed, streams::MINIBATCH, id as u64),
                match_rng: RngStream::derive(seed, streams::MATCHING, id as u64),
            }
        })
        .collect()
}

fn check_loss(loss: f64, threshold: f64) -> Option<String> {
    if !loss.is_finite() {
        Some(format!("non-finite loss {loss}"))
    } else if loss > threshold {
        Some(format!("loss {loss} exceeds {threshold}"))
    } else {
        None
    }
}

/// Gradient at `x_k` on a fresh minibatch, plus the AMSGrad moment update
/// that precedes the merge.
fn gradient_phase(agent: &mut AgentState, train: &Dataset, config: &ExperimentConfig, hp: &HyperParams) -> Result<(f64, GradientSet)> {
    let idx = agent.minibatch(config.batch_size, config.full_batch);
    let (loss, g) = train.loss_and_grad(&agent.model, &idx)?;
    if agent.opt.kind == OptimizerKind::Amsgrad && loss.is_finite() {
        amsgrad_moments(&mut agent.opt, &g, hp)?;
    }
    Ok((loss, g))
}

fn step_phase(agent: &mut AgentState, g: &GradientSet, u_half: Option<ParamSet>, hp: &HyperParams) -> Result<()> {
    match agent.opt.kind {
        OptimizerKind::Sgd => {
            agent.model = sgd_step(&agent.model, g, hp)?;
            agent.opt.steps += 1;
        }
        OptimizerKind::Msgd => {
            let (m, s) = msgd_step(&agent.model, &agent.opt, g, hp)?;
            agent.model = m;
            agent.opt = s;
        }
        OptimizerKind::Amsgrad => {
            let u_half = match u_half {
                Some(u) => u,
                None => agent.opt.u_hat.clone().ok_or_else(|| Error::Invariant("missing u_hat".into()))?,
            };
            agent.model = amsgrad_apply(&agent.model, &u_half, &mut agent.opt, hp)?;
        }
    }
    Ok(())
}

struct Recorder<'a> {
    config: &'a ExperimentConfig,
    experiment: &'a Experiment,
    align_batch: Matrix,
    grad_norm_sum: f64,
    count: usize,
}

impl Recorder<'_> {
    #[allow(clippy::too_many_arguments)]
    fn record(
        &mut self,
        repeat: usize,
        k: usize,
        agents: &[AgentState],
        losses: Vec<f64>,
        comm_rounds: f64,
        merges: &[MergeRoundStats],
        diverged: bool,
    ) -> Result<MetricsRecord> {
        let models: Vec<ModelParams> = agents.iter().map(|a| a.model.clone()).collect();
        let test = &self.experiment.test;
        let finite = models.iter().all(ModelParams::is_finite);
        let (consensus, grad) = if finite {
            consensus_and_gradnorm(&models, &self.experiment.train, &self.experiment.partition.shards)?
        } else {
            (f64::NAN, f64::NAN)
        };
        self.grad_norm_sum += grad;
        self.count += 1;

        let evaluable = finite && !test.is_empty();
        let (avg_loss, avg_acc, mean_acc, aligned_acc) = if evaluable {
            let avg = average_model(&models)?;
            let (avg_loss, avg_acc) = test.evaluate(&avg)?;
            let per_agent: Vec<Option<f64>> = models
                .par_iter()
                .map(|m| test.evaluate(m).map(|r| r.1))
                .collect::<Result<_>>()?;
            let mean_acc = per_agent
                .iter()
                .copied()
                .collect::<Option<Vec<f64>>>()
                .map(|v| v.iter().sum::<f64>() / v.len() as f64);
            let aligned_acc = if test.is_regression() || models.len() < 2 {
                avg_acc
            } else {
                let mut plan = self.config.merge_plan();
                if plan.mode == MergeMode::Identity {
                    plan.mode = MergeMode::ActivationMatch;
                }
                test.evaluate(&aligned_average(&models, &plan, &self.align_batch)?)?.1
            };
            (Some(avg_loss), avg_acc, mean_acc, aligned_acc)
        } else {
            (None, None, None, None)
        };

        Ok(MetricsRecord {
            repeat,
            iteration: k,
            epoch: k as f64 / self.experiment.iters_per_epoch(self.config) as f64,
            train_loss: losses,
            test_accuracy_mean: mean_acc,
            avg_model_accuracy: avg_acc,
            aligned_avg_accuracy: aligned_acc,
            avg_model_test_loss: avg_loss,
            consensus_error: consensus,
            grad_norm_sq: grad,
            grad_norm_running_avg: self.grad_norm_sum / self.count as f64,
            comm_rounds,
            merges: merges.len(),
            fixed_point_fraction: merges.last().and_then(|m| m.fixed_point_fraction),
            diverged,
        })
    }
}

/// The train–merge loop: every iteration computes each agent's gradient at
/// `x_k`, runs the synchronous merge barrier when scheduled, then applies the
/// local optimizer step to the (possibly merged) iterate.
pub fn run_experiment(config: &ExperimentConfig, experiment: &Experiment, seed: u64, repeat: usize) -> Result<RunResult> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::Invariant(format!("worker pool: {e}")))?;
    pool.install(|| run_inner(config, experiment, seed, repeat))
}

fn run_inner(config: &ExperimentConfig, experiment: &Experiment, seed: u64, repeat: usize) -> Result<RunResult> {
    let hp = config.hyper_params()?;
    let plan = config.merge_plan();
    let train = &experiment.train;
    let mut agents = init_agents(config, experiment, seed);
    let n_agents = agents.len();
    let align_rows: Vec<usize> = agents[0].shard.iter().copied().take(config.matching_batch).collect();
    let mut recorder = Recorder {
        config,
        experiment,
        align_batch: train.features.select_rows(&align_rows),
        grad_norm_sum: 0.0,
        count: 0,
    };
    let spectral = check_assumption2(&experiment.mixing)?;
    let mut records = Vec::new();
    let mut merges: Vec<MergeRoundStats> = Vec::new();
    let mut comm_rounds = 0.0;
    let mut divergence = None;

    // Local pre-training, no merges and no metrics.
    for it in 0..config.pretrain_iters {
        let grads = agents
            .par_iter_mut()
            .map(|a| gradient_phase(a, train, config, &hp))
            .collect::<Result<Vec<_>>>()?;
        if let Some((agent, reason)) = first_bad(&grads, config.divergence_threshold) {
            return Err(Error::Diverged {
                iteration: it + 1,
                reason: format!("pre-training, agent {agent}: {reason}"),
            });
        }
        agents
            .par_iter_mut()
            .zip(grads)
            .try_for_each(|(a, (_, g))| step_phase(a, &g, None, &hp))?;
    }

    records.push(recorder.record(repeat, 0, &agents, Vec::new(), 0.0, &merges, false)?);

    for k in 1..=config.k {
        let grads = agents
            .par_iter_mut()
            .map(|a| gradient_phase(a, train, config, &hp))
            .collect::<Result<Vec<_>>>()?;
        let losses: Vec<f64> = grads.iter().map(|g| g.0).collect();
        if let Some((agent, reason)) = first_bad(&grads, config.divergence_threshold) {
            records.push(recorder.record(repeat, k, &agents, losses, comm_rounds, &merges, true)?);
            divergence = Some(Divergence { iteration: k, agent, reason });
            break;
        }

        let mut u_half: Vec<Option<ParamSet>> = vec![None; n_agents];
        if should_merge(k, &plan) {
            let batches: Vec<Matrix> = agents
                .iter_mut()
                .map(|a| {
                    if plan.mode != MergeMode::ActivationMatch {
                        return Matrix::zeros(0, train.dims());
                    }
                    let mut idx: Vec<usize> = a
                        .match_rng
                        .sample_indices(a.shard.len(), plan.matching_batch)
                        .into_iter()
                        .map(|t| a.shard[t])
                        .collect();
                    idx.sort_unstable();
                    train.features.select_rows(&idx)
                })
                .collect();
            let models: Vec<ModelParams> = agents.iter().map(|a| a.model.clone()).collect();
            let states: Vec<OptimizerState> = agents.iter().map(|a| a.opt.clone()).collect();
            let outcome = merge_round(
                &models,
                &states,
                &experiment.mixing,
                &experiment.topology,
                &plan,
                &batches,
                merges.len() + 1,
                k,
            )?;
            for ((agent, model), mut state) in agents.iter_mut().zip(outcome.models).zip(outcome.states) {
                if state.kind == OptimizerKind::Amsgrad {
                    // The merged û is û_{k+1/2}; u_k keeps using the agent's own û_k.
                    let idx = agent.id;
                    u_half[idx] = std::mem::replace(&mut state.u_hat, agent.opt.u_hat.take());
                }
                agent.model = model;
                agent.opt = state;
            }
            comm_rounds += outcome.stats.comm_rounds;
            merges.push(outcome.stats);
        }

        agents
            .par_iter_mut()
            .zip(grads.into_par_iter().zip(u_half))
            .try_for_each(|(a, ((_, g), u))| step_phase(a, &g, u, &hp))?;

        if let Some(bad) = agents.iter().find(|a| !a.model.is_finite()) {
            divergence = Some(Divergence {
                iteration: k,
                agent: bad.id,
                reason: "non-finite parameters".into(),
            });
            records.push(recorder.record(repeat, k, &agents, losses, comm_rounds, &merges, true)?);
            break;
        }
        if k % config.eval_every == 0 || k == config.k {
            records.push(recorder.record(repeat, k, &agents, losses, comm_rounds, &merges, false)?);
        }
    }

    let final_models: Vec<ModelParams> = agents.into_iter().map(|a| a.model).collect();
    let final_average = average_model(&final_models)?;
    let (final_test_loss, final_accuracy) = if final_average.is_finite() && !experiment.test.is_empty() {
        experiment.test.evaluate(&final_average)?
    } else {
        (f64::NAN, None)
    };
    Ok(RunResult {
        repeat,
        seed,
        records,
        merges,
        final_models,
        final_average,
        final_accuracy,
        final_test_loss,
        comm_rounds,
        iters_per_epoch: experiment.iters_per_epoch(config),
        divergence,
        spectral,
    })
}

fn first_bad(grads: &[(f64, GradientSet)], threshold: f64) -> Option<(usize, String)> {
    grads
        .iter()
        .enumerate()
        .find_map(|(i, (loss, _))| check_loss(*loss, threshold).map(|r| (i, r)))
}
