//! Local computation phases: SGD, momentum SGD and the AMSGrad variant that
//! carries the gossiped second-moment surrogate `û`.
//!
//! AMSGrad is split in two phases because the moment update happens before
//! the merge and the parameter update after it:
//!
//! 1. [`amsgrad_moments`]: `m ← β₁m + (1−β₁)g`, `v̂ ← β₂v̂ + (1−β₂)g⊙g`,
//!    `v ← max(v̂, v_prev)`; on the very first step `û` is initialised to `v`.
//! 2. (merge: `û_{k+1/2} = Σ_j π_ij P^{ij} û_j`)
//! 3. [`amsgrad_apply`]: `u = max(û_k, ε)`, `x ← x_{k+1/2} − α m ⊘ √u`,
//!    `û ← û_{k+1/2} − v_{k−1} + v_k`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::nn::{GradientSet, ModelParams, ParamSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum OptimizerKind {
    #[default]
    Sgd,
    Msgd,
    Amsgrad,
}

impl OptimizerKind {
    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Msgd => "msgd",
            OptimizerKind::Amsgrad => "amsgrad",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub alpha: f64,
    pub beta: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Merge every `merge_every` iterations.
    pub merge_every: usize,
    /// Iteration budget `K`.
    pub iterations: usize,
    /// Optional ∞-norm gradient clip `G`.
    pub clip: Option<f64>,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            alpha: 0.01,
            beta: 0.9,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            merge_every: 1,
            iterations: 100,
            clip: None,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return invalid(format!("alpha must satisfy alpha > 0, got {}", self.alpha));
        }
        for (name, value) in [("beta", self.beta), ("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&value) {
                return invalid(format!("{name} must satisfy 0 ≤ {name} < 1, got {value}"));
            }
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return invalid(format!("epsilon must satisfy epsilon > 0, got {}", self.epsilon));
        }
        if self.merge_every < 1 {
            return invalid("n must satisfy n ≥ 1");
        }
        if self.iterations < 1 {
            return invalid("K must satisfy K ≥ 1");
        }
        if let Some(g) = self.clip {
            if !(g > 0.0 && g.is_finite()) {
                return invalid(format!("clip must be > 0, got {g}"));
            }
        }
        Ok(())
    }

    /// Constant step `c·√(N/K)`.
    pub fn sqrt_n_over_k(c: f64, agents: usize, iterations: usize) -> f64 {
        c * (agents as f64 / iterations as f64).sqrt()
    }
}

/// Per-agent optimizer memory. Buffers not used by `kind` stay `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    /// Momentum buffer (MSGD).
    pub velocity: Option<ParamSet>,
    /// First moment `m`.
    pub m: Option<ParamSet>,
    /// Exponential second moment `v̂`.
    pub v_hat: Option<ParamSet>,
    /// Running-max second moment `v_k`.
    pub v: Option<ParamSet>,
    /// `v_{k−1}`.
    pub v_prev: Option<ParamSet>,
    /// Gossiped surrogate `û`.
    pub u_hat: Option<ParamSet>,
    pub steps: usize,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, dims: &[usize]) -> Self {
        let zeros = || Some(ParamSet::zeros(dims));
        match kind {
            OptimizerKind::Sgd => Self {
                kind,
                velocity: None,
                m: None,
                v_hat: None,
                v: None,
                v_prev: None,
                u_hat: None,
                steps: 0,
            },
            OptimizerKind::Msgd => Self {
                kind,
                velocity: zeros(),
                m: None,
                v_hat: None,
                v: None,
                v_prev: None,
                u_hat: None,
                steps: 0,
            },
            OptimizerKind::Amsgrad => Self {
                kind,
                velocity: None,
                m: zeros(),
                v_hat: zeros(),
                v: zeros(),
                v_prev: zeros(),
                u_hat: zeros(),
                steps: 0,
            },
        }
    }

    /// Every present buffer in a fixed order (velocity, m, v̂, v, v_prev, û).
    pub fn buffers(&self) -> Vec<&ParamSet> {
        [&self.velocity, &self.m, &self.v_hat, &self.v, &self.v_prev, &self.u_hat]
            .into_iter()
            .flatten()
            .collect()
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut ParamSet> {
        [
            &mut self.velocity,
            &mut self.m,
            &mut self.v_hat,
            &mut self.v,
            &mut self.v_prev,
            &mut self.u_hat,
        ]
        .into_iter()
        .flatten()
        .collect()
    }
}

fn require<'a>(buf: &'a Option<ParamSet>, what: &str) -> Result<&'a ParamSet> {
    buf.as_ref()
        .ok_or_else(|| Error::InvalidInput(format!("optimizer state has no {what} buffer")))
}

fn require_kind(state: &OptimizerState, kind: OptimizerKind) -> Result<()> {
    if state.kind == kind {
        Ok(())
    } else {
        invalid(format!(
            "expected {} state, got {}",
            kind.name(),
            state.kind.name()
        ))
    }
}

/// Clamps every coordinate of `g` to `[-clip, clip]`.
pub fn clip_inf_norm(g: &GradientSet, clip: Option<f64>) -> GradientSet {
    match clip {
        Some(c) => g.map(|x| x.clamp(-c, c)),
        None => g.clone(),
    }
}

/// `x_{k+1} = x_{k+1/2} − α g`.
pub fn sgd_step(x_half: &ModelParams, g: &GradientSet, hp: &HyperParams) -> Result<ModelParams> {
    let g = clip_inf_norm(g, hp.clip);
    let params = x_half.params.zip_map(&g, |x, gi| x - hp.alpha * gi)?;
    Ok(ModelParams {
        params,
        activation: x_half.activation,
    })
}

/// `v ← βv − αg`, `x_{k+1} = x_{k+1/2} + v`.
pub fn msgd_step(
    x_half: &ModelParams,
    state: &OptimizerState,
    g: &GradientSet,
    hp: &HyperParams,
) -> Result<(ModelParams, OptimizerState)> {
    require_kind(state, OptimizerKind::Msgd)?;
    let g = clip_inf_norm(g, hp.clip);
    let velocity = require(&state.velocity, "velocity")?.zip_map(&g, |v, gi| hp.beta * v - hp.alpha * gi)?;
    let params = x_half.params.zip_map(&velocity, |x, v| x + v)?;
    let mut next = state.clone();
    next.velocity = Some(velocity);
    next.steps += 1;
    Ok((
        ModelParams {
            params,
            activation: x_half.activation,
        },
        next,
    ))
}

/// Moment update of AMSGrad (before any merge of the current iteration).
pub fn amsgrad_moments(state: &mut OptimizerState, g: &GradientSet, hp: &HyperParams) -> Result<()> {
    require_kind(state, OptimizerKind::Amsgrad)?;
    let g = clip_inf_norm(g, hp.clip);
    let m = require(&state.m, "m")?.zip_map(&g, |m, gi| hp.beta1 * m + (1.0 - hp.beta1) * gi)?;
    let v_hat =
        require(&state.v_hat, "v_hat")?.zip_map(&g, |v, gi| hp.beta2 * v + (1.0 - hp.beta2) * gi * gi)?;
    let v_prev = require(&state.v, "v")?.clone();
    let v = v_hat.zip_map(&v_prev, f64::max)?;
    if state.steps == 0 {
        // û₁ = v₁
        state.u_hat = Some(v.clone());
    }
    state.m = Some(m);
    state.v_hat = Some(v_hat);
    state.v_prev = Some(v_prev);
    state.v = Some(v);
    Ok(())
}

/// Parameter and `û` update of AMSGrad given the post-merge iterates.
pub fn amsgrad_apply(
    x_half: &ModelParams,
    u_hat_half: &ParamSet,
    state: &mut OptimizerState,
    hp: &HyperParams,
) -> Result<ModelParams> {
    require_kind(state, OptimizerKind::Amsgrad)?;
    let u_hat = require(&state.u_hat, "u_hat")?;
    let u = u_hat.map(|x| x.max(hp.epsilon));
    if let Some(bad) = u.iter().find(|&&x| x.is_nan() || x < hp.epsilon) {
        return Err(Error::Invariant(format!("u = {bad} below epsilon after flooring")));
    }
    let m = require(&state.m, "m")?;
    let step = m.zip_map(&u, |mi, ui| mi / ui.sqrt())?;
    let params = x_half.params.zip_map(&step, |x, s| x - hp.alpha * s)?;

    let v = require(&state.v, "v")?;
    let v_prev = require(&state.v_prev, "v_prev")?;
    let mut next_u = u_hat_half.zip_map(v_prev, |u, vp| u - vp)?;
    next_u.add_scaled(1.0, v)?;
    state.u_hat = Some(next_u);
    state.steps += 1;
    Ok(ModelParams {
        params,
        activation: x_half.activation,
    })
}

/// One full AMSGrad iteration. `u_hat_half` is the post-gossip `û`; `None`
/// means no merge this iteration (`û_{k+1/2} = û_k`).
pub fn amsgrad_step(
    x_half: &ModelParams,
    u_hat_half: Option<&ParamSet>,
    state: &OptimizerState,
    g: &GradientSet,
    hp: &HyperParams,
) -> Result<(ModelParams, OptimizerState)> {
    let mut next = state.clone();
    amsgrad_moments(&mut next, g, hp)?;
    let gossiped = match u_hat_half {
        Some(u) => u.clone(),
        None => require(&next.u_hat, "u_hat")?.clone(),
    };
    let params = amsgrad_apply(x_half, &gossiped, &mut next, hp)?;
    Ok((params, next))
}

/// Dispatches one optimizer step without a merge-supplied `û`.
pub fn local_step(
    x: &ModelParams,
    state: &OptimizerState,
    g: &GradientSet,
    hp: &HyperParams,
) -> Result<(ModelParams, OptimizerState)> {
    match state.kind {
        OptimizerKind::Sgd => {
            let mut next = state.clone();
            next.steps += 1;
            Ok((sgd_step(x, g, hp)?, next))
        }
        OptimizerKind::Msgd => msgd_step(x, state, g, hp),
        OptimizerKind::Amsgrad => amsgrad_step(x, None, state, g, hp),
    }
}
