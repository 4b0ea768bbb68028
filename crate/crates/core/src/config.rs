//! Plain-text `key = value` experiment configuration.
//!
//! One assignment per line, `#` starts a comment, blank lines are ignored.
//! Every key has a default, unknown keys are rejected and every value is
//! validated when parsed. [`ExperimentConfig::echo`] writes the effective
//! configuration back in the same format.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::align::Normalization;
use crate::error::{invalid, Error, Result};
use crate::merge::{MergeMode, MergePlan};
use crate::nn::Activation;
use crate::optim::{HyperParams, OptimizerKind};
use crate::topology::Topology;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DatasetKind {
    /// Gaussian class clusters.
    Synthetic,
    /// Linear-Gaussian regression targets (convex quadratic loss with a
    /// linear model).
    Regression,
    /// Numeric CSV with a header and an integer label in the last column.
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PartitionScheme {
    Iid,
    ClassShard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InitScheme {
    /// Every agent starts from the same draw.
    Shared,
    /// Each agent draws its own initial weights.
    Independent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AlphaSchedule {
    Constant,
    /// `alpha = alpha_c · √(N/K)`.
    SqrtNOverK,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub repeats: usize,
    pub agents: usize,
    pub topology: String,
    pub optimizer: OptimizerKind,
    pub alpha: f64,
    pub alpha_schedule: AlphaSchedule,
    pub alpha_c: f64,
    pub beta: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub clip: Option<f64>,
    pub merge: MergeMode,
    pub n: usize,
    pub matching_batch: usize,
    pub normalization: Normalization,
    pub wm_sweeps: usize,
    pub merge_state: bool,
    pub k: usize,
    pub batch_size: usize,
    pub full_batch: bool,
    pub eval_every: usize,
    pub pretrain_iters: usize,
    pub workers: usize,
    pub dataset: DatasetKind,
    pub csv_path: Option<PathBuf>,
    pub classes: usize,
    pub dims: usize,
    pub samples_per_class: usize,
    pub separation: f64,
    pub regression_samples: usize,
    pub regression_outputs: usize,
    pub noise: f64,
    pub test_fraction: f64,
    pub partition: PartitionScheme,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub init: InitScheme,
    pub divergence_threshold: f64,
    pub spectral_d: usize,
    pub spectral_trials: usize,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            repeats: 1,
            agents: 5,
            topology: "fc".into(),
            optimizer: OptimizerKind::Sgd,
            alpha: 0.01,
            alpha_schedule: AlphaSchedule::Constant,
            alpha_c: 1.0,
            beta: 0.9,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            clip: None,
            merge: MergeMode::ActivationMatch,
            n: 1,
            matching_batch: 256,
            normalization: Normalization::Center,
            wm_sweeps: 50,
            merge_state: true,
            k: 100,
            batch_size: 32,
            full_batch: false,
            eval_every: 10,
            pretrain_iters: 0,
            workers: 1,
            dataset: DatasetKind::Synthetic,
            csv_path: None,
            classes: 10,
            dims: 16,
            samples_per_class: 500,
            separation: 4.0,
            regression_samples: 1000,
            regression_outputs: 1,
            noise: 0.1,
            test_fraction: 0.2,
            partition: PartitionScheme::Iid,
            hidden: vec![32],
            activation: Activation::Relu,
            init: InitScheme::Shared,
            divergence_threshold: 1e6,
            spectral_d: 4,
            spectral_trials: 100,
            out: PathBuf::from("runs/default"),
        }
    }
}

/// Every accepted key, in echo order.
pub const KEYS: &[&str] = &[
    "seed",
    "repeats",
    "agents",
    "topology",
    "optimizer",
    "alpha",
    "alpha_schedule",
    "alpha_c",
    "beta",
    "beta1",
    "beta2",
    "epsilon",
    "clip",
    "merge",
    "n",
    "matching_batch",
    "normalization",
    "wm_sweeps",
    "merge_state",
    "K",
    "batch_size",
    "full_batch",
    "eval_every",
    "pretrain_iters",
    "workers",
    "dataset",
    "csv_path",
    "classes",
    "dims",
    "samples_per_class",
    "separation",
    "regression_samples",
    "regression_outputs",
    "noise",
    "test_fraction",
    "partition",
    "hidden",
    "activation",
    "init",
    "divergence_threshold",
    "spectral_d",
    "spectral_trials",
    "out",
];

fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidInput(format!("{key}: cannot parse '{value}'")))
}

fn flag(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => invalid(format!("{key}: expected true or false, got '{value}'")),
    }
}

fn optional_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty() && value != "none").then(|| PathBuf::from(value))
}

impl ExperimentConfig {
    /// Assigns one key without cross-field validation.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "seed" => self.seed = num(key, value)?,
            "repeats" => self.repeats = num(key, value)?,
            "agents" => self.agents = num(key, value)?,
            "topology" => self.topology = value.to_string(),
            "optimizer" => {
                self.optimizer = match value {
                    "sgd" => OptimizerKind::Sgd,
                    "msgd" => OptimizerKind::Msgd,
                    "amsgrad" => OptimizerKind::Amsgrad,
                    _ => return invalid(format!("optimizer: expected sgd, msgd or amsgrad, got '{value}'")),
                }
            }
            "alpha" => self.alpha = num(key, value)?,
            "alpha_schedule" => {
                self.alpha_schedule = match value {
                    "constant" => AlphaSchedule::Constant,
                    "sqrt_n_over_k" => AlphaSchedule::SqrtNOverK,
                    _ => {
                        return invalid(format!(
                            "alpha_schedule: expected constant or sqrt_n_over_k, got '{value}'"
                        ))
                    }
                }
            }
            "alpha_c" => self.alpha_c = num(key, value)?,
            "beta" => self.beta = num(key, value)?,
            "beta1" => self.beta1 = num(key, value)?,
            "beta2" => self.beta2 = num(key, value)?,
            "epsilon" => self.epsilon = num(key, value)?,
            "clip" => {
                self.clip = match value {
                    "none" | "" => None,
                    v => Some(num(key, v)?),
                }
            }
            "merge" => self.merge = MergeMode::from_name(value)?,
            "n" => self.n = num(key, value)?,
            "matching_batch" => self.matching_batch = num(key, value)?,
            "normalization" => {
                self.normalization = match value {
                    "center" => Normalization::Center,
                    "correlation" => Normalization::Correlation,
                    _ => return invalid(format!("normalization: expected center or correlation, got '{value}'")),
                }
            }
            "wm_sweeps" => self.wm_sweeps = num(key, value)?,
            "merge_state" => self.merge_state = flag(key, value)?,
            "K" => self.k = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "full_batch" => self.full_batch = flag(key, value)?,
            "eval_every" => self.eval_every = num(key, value)?,
            "pretrain_iters" => self.pretrain_iters = num(key, value)?,
            "workers" => self.workers = num(key, value)?,
            "dataset" => {
                self.dataset = match value {
                    "synthetic" => DatasetKind::Synthetic,
                    "regression" => DatasetKind::Regression,
                    "csv" => DatasetKind::Csv,
                    _ => return invalid(format!("dataset: expected synthetic, regression or csv, got '{value}'")),
                }
            }
            "csv_path" => self.csv_path = optional_path(value),
            "classes" => self.classes = num(key, value)?,
            "dims" => self.dims = num(key, value)?,
            "samples_per_class" => self.samples_per_class = num(key, value)?,
            "separation" => self.separation = num(key, value)?,
            "regression_samples" => self.regression_samples = num(key, value)?,
            "regression_outputs" => self.regression_outputs = num(key, value)?,
            "noise" => self.noise = num(key, value)?,
            "test_fraction" => self.test_fraction = num(key, value)?,
            "partition" => {
                self.partition = match value {
                    "iid" => PartitionScheme::Iid,
                    "class_shard" | "non_iid" => PartitionScheme::ClassShard,
                    _ => return invalid(format!("partition: expected iid or class_shard, got '{value}'")),
                }
            }
            "hidden" => {
                self.hidden = if value.is_empty() || value == "none" {
                    Vec::new()
                } else {
                    value
                        .split(',')
                        .map(|w| num(key, w.trim()))
                        .collect::<Result<_>>()?
                }
            }
            "activation" => {
                self.activation = match value {
                    "relu" => Activation::Relu,
                    "identity" => Activation::Identity,
                    _ => return invalid(format!("activation: expected relu or identity, got '{value}'")),
                }
            }
            "init" => {
                self.init = match value {
                    "shared" => InitScheme::Shared,
                    "independent" => InitScheme::Independent,
                    _ => return invalid(format!("init: expected shared or independent, got '{value}'")),
                }
            }
            "divergence_threshold" => self.divergence_threshold = num(key, value)?,
            "spectral_d" => self.spectral_d = num(key, value)?,
            "spectral_trials" => self.spectral_trials = num(key, value)?,
            "out" => self.out = PathBuf::from(value),
            _ => return invalid(format!("unknown key '{key}'")),
        }
        Ok(())
    }

    /// Applies `key=value` tokens in order.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for token in overrides {
            let token = token.as_ref();
            let Some((k, v)) = token.split_once('=') else {
                return invalid(format!("override '{token}' is not of the form key=value"));
            };
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return invalid(format!("line {}: expected key = value", lineno + 1));
            };
            cfg.set(k.trim(), v)
                .map_err(|e| Error::InvalidInput(format!("line {}: {e}", lineno + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidInput(format!("cannot read {}: {e}", path.display())))?;
        Self::parse_str(&text)
    }

    /// Optional file, then overrides, then validation.
    pub fn load<S: AsRef<str>>(path: Option<&Path>, overrides: &[S]) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => Self::from_file(p)?,
            None => Self::default(),
        };
        cfg.apply_overrides(overrides)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.agents < 1 {
            return invalid("agents must satisfy agents ≥ 1");
        }
        if self.repeats < 1 {
            return invalid("repeats must satisfy repeats ≥ 1");
        }
        self.topology()?;
        self.hyper_params()?.validate()?;
        self.merge_plan().validate()?;
        if self.batch_size < 1 {
            return invalid("batch_size must satisfy batch_size ≥ 1");
        }
        if self.eval_every < 1 {
            return invalid("eval_every must satisfy eval_every ≥ 1");
        }
        if self.workers < 1 {
            return invalid("workers must satisfy workers ≥ 1");
        }
        if !(self.alpha_c > 0.0 && self.alpha_c.is_finite()) {
            return invalid("alpha_c must satisfy alpha_c > 0");
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return invalid("test_fraction must satisfy 0 ≤ test_fraction < 1");
        }
        if self.hidden.contains(&0) {
            return invalid("hidden widths must be ≥ 1");
        }
        if !(self.divergence_threshold > 0.0) {
            return invalid("divergence_threshold must be > 0");
        }
        if self.spectral_d < 1 {
            return invalid("spectral_d must satisfy spectral_d ≥ 1");
        }
        match self.dataset {
            DatasetKind::Synthetic => {
                if self.classes < 2 {
                    return invalid("classes must satisfy classes ≥ 2");
                }
                if self.dims < 1 {
                    return invalid("dims must satisfy dims ≥ 1");
                }
                if self.samples_per_class < 1 {
                    return invalid("samples_per_class must satisfy samples_per_class ≥ 1");
                }
                if !(self.separation >= 0.0 && self.separation.is_finite()) {
                    return invalid("separation must satisfy separation ≥ 0");
                }
                if self.partition == PartitionScheme::ClassShard && self.classes < self.agents {
                    return invalid("partition=class_shard requires classes ≥ agents");
                }
            }
            DatasetKind::Regression => {
                if self.dims < 1 || self.regression_outputs < 1 || self.regression_samples < 1 {
                    return invalid("regression needs dims, regression_outputs and regression_samples ≥ 1");
                }
                if !(self.noise >= 0.0) {
                    return invalid("noise must satisfy noise ≥ 0");
                }
                if self.partition == PartitionScheme::ClassShard && self.agents > 1 {
                    return invalid("partition=class_shard is undefined for dataset=regression");
                }
            }
            DatasetKind::Csv => {
                if self.csv_path.is_none() {
                    return invalid("dataset=csv requires csv_path");
                }
            }
        }
        Ok(())
    }

    pub fn topology(&self) -> Result<Topology> {
        Topology::from_name(&self.topology, self.agents)
    }

    /// Step size after resolving the schedule.
    pub fn effective_alpha(&self) -> f64 {
        match self.alpha_schedule {
            AlphaSchedule::Constant => self.alpha,
            AlphaSchedule::SqrtNOverK => HyperParams::sqrt_n_over_k(self.alpha_c, self.agents, self.k.max(1)),
        }
    }

    pub fn hyper_params(&self) -> Result<HyperParams> {
        Ok(HyperParams {
            alpha: self.effective_alpha(),
            beta: self.beta,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
            merge_every: self.n,
            iterations: self.k,
            clip: self.clip,
        })
    }

    pub fn merge_plan(&self) -> MergePlan {
        MergePlan {
            mode: self.merge,
            frequency_n: self.n,
            matching_batch: self.matching_batch,
            normalization: self.normalization,
            weight_match_sweeps: self.wm_sweeps,
            merge_state: self.merge_state,
        }
    }

    fn value_of(&self, key: &str) -> String {
        let path = |p: &Option<PathBuf>| p.as_ref().map_or("none".to_string(), |p| p.display().to_string());
        match key {
            "seed" => self.seed.to_string(),
            "repeats" => self.repeats.to_string(),
            "agents" => self.agents.to_string(),
            "topology" => self.topology.clone(),
            "optimizer" => self.optimizer.name().into(),
            "alpha" => self.alpha.to_string(),
            "alpha_schedule" => match self.alpha_schedule {
                AlphaSchedule::Constant => "constant".into(),
                AlphaSchedule::SqrtNOverK => "sqrt_n_over_k".into(),
            },
            "alpha_c" => self.alpha_c.to_string(),
            "beta" => self.beta.to_string(),
            "beta1" => self.beta1.to_string(),
            "beta2" => self.beta2.to_string(),
            "epsilon" => self.epsilon.to_string(),
            "clip" => self.clip.map_or("none".into(), |c| c.to_string()),
            "merge" => self.merge.name().into(),
            "n" => self.n.to_string(),
            "matching_batch" => self.matching_batch.to_string(),
            "normalization" => match self.normalization {
                Normalization::Center => "center".into(),
                Normalization::Correlation => "correlation".into(),
            },
            "wm_sweeps" => self.wm_sweeps.to_string(),
            "merge_state" => self.merge_state.to_string(),
            "K" => self.k.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "full_batch" => self.full_batch.to_string(),
            "eval_every" => self.eval_every.to_string(),
            "pretrain_iters" => self.pretrain_iters.to_string(),
            "workers" => self.workers.to_string(),
            "dataset" => match self.dataset {
                DatasetKind::Synthetic => "synthetic".into(),
                DatasetKind::Regression => "regression".into(),
                DatasetKind::Csv => "csv".into(),
            },
            "csv_path" => path(&self.csv_path),
            "classes" => self.classes.to_string(),
            "dims" => self.dims.to_string(),
            "samples_per_class" => self.samples_per_class.to_string(),
            "separation" => self.separation.to_string(),
            "regression_samples" => self.regression_samples.to_string(),
            "regression_outputs" => self.regression_outputs.to_string(),
            "noise" => self.noise.to_string(),
            "test_fraction" => self.test_fraction.to_string(),
            "partition" => match self.partition {
                PartitionScheme::Iid => "iid".into(),
                PartitionScheme::ClassShard => "class_shard".into(),
            },
            "hidden" => {
                if self.hidden.is_empty() {
                    "none".into()
                } else {
                    self.hidden.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
                }
            }
            "activation" => self.activation.name().into(),
            "init" => match self.init {
                InitScheme::Shared => "shared".into(),
                InitScheme::Independent => "independent".into(),
            },
            "divergence_threshold" => self.divergence_threshold.to_string(),
            "spectral_d" => self.spectral_d.to_string(),
            "spectral_trials" => self.spectral_trials.to_string(),
            "out" => self.out.display().to_string(),
            _ => unreachable!("KEYS and value_of disagree on '{key}'"),
        }
    }

    /// Effective configuration in the input format; parsing it back yields
    /// an identical config.
    pub fn echo(&self) -> String {
        let mut s = String::new();
        for key in KEYS {
            let _ = writeln!(s, "{key} = {}", self.value_of(key));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_input_gives_defaults() {
        assert_eq!(ExperimentConfig::parse_str("").unwrap(), ExperimentConfig::default());
        assert_eq!(ExperimentConfig::parse_str("# only a comment\n\n").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn ring_scenario_overrides() {
        let cfg = ExperimentConfig::load(None, &["agents=5", "topology=ring", "merge=activation_match", "n=1"]).unwrap();
        assert_eq!(cfg.agents, 5);
        assert_eq!(cfg.topology().unwrap().name(), "ring");
        assert_eq!(cfg.merge, MergeMode::ActivationMatch);
        assert_eq!(cfg.n, 1);
    }

    #[test]
    fn beta_out_of_range() {
        let err = ExperimentConfig::load(None, &["beta=1.5"]).unwrap_err().to_string();
        assert!(err.contains("beta must satisfy 0 ≤ beta < 1"), "{err}");
    }

    #[test]
    fn unknown_key_named() {
        let err = ExperimentConfig::parse_str("learning_rate = 0.1").unwrap_err().to_string();
        assert!(err.contains("learning_rate"), "{err}");
    }

    #[test]
    fn type_error_named() {
        let err = ExperimentConfig::load(None, &["agents=five"]).unwrap_err().to_string();
        assert!(err.contains("agents"), "{err}");
    }

    #[test]
    fn echo_round_trips() {
        let cfg = ExperimentConfig::load(
            None,
            &["alpha=0.0123456789", "clip=2.5", "hidden=8,4", "optimizer=amsgrad", "partition=class_shard", "out=x/y"],
        )
        .unwrap();
        assert_eq!(ExperimentConfig::parse_str(&cfg.echo()).unwrap(), cfg);
        let d = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::parse_str(&d.echo()).unwrap(), d);
    }

    #[test]
    fn every_key_is_settable() {
        let d = ExperimentConfig::default();
        for key in KEYS {
            let mut c = d.clone();
            c.set(key, &d.value_of(key)).unwrap();
            assert_eq!(c, d, "{key}");
        }
    }

    #[test]
    fn sqrt_schedule() {
        let cfg = ExperimentConfig::load(None, &["alpha_schedule=sqrt_n_over_k", "alpha_c=0.5", "agents=4", "K=100"]).unwrap();
        assert!((cfg.effective_alpha() - 0.1).abs() < 1e-15);
    }
}
