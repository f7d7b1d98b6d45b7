//! Counterfactual per-dimension influence, eligibility traces over it, and
//! the trace-amplified influence reward.
//!
//! For every state dimension `d`, influence compares the predicted change
//! under the actual joint action with the change expected when one agent's
//! action is swapped for a uniformly random one, summed over agents:
//!
//! ```text
//! inf[d] = sum_i ( |f(s, a)[d] - s[d]| - mean_{b in A_i} |f(s, b, a_-i)[d] - s[d]| )
//! ```

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Deref;

use rand::Rng as _;

use crate::dynamics::DynamicsModel;
use crate::env::JointAction;
use crate::error::{Error, Result};
use crate::math;
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct InfluenceVector {
    pub values: Vec<f64>,
}

impl InfluenceVector {
    pub fn zeros(dim: usize) -> Self {
        InfluenceVector { values: vec![0.0; dim] }
    }
}

impl Deref for InfluenceVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.values
    }
}

impl From<Vec<f64>> for InfluenceVector {
    fn from(values: Vec<f64>) -> Self {
        InfluenceVector { values }
    }
}

/// How the expectation over the random replacement action is computed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Counterfactual {
    /// Enumerate each agent's whole action set.
    #[default]
    Exact,
    /// Average over this many uniformly drawn replacement actions per agent.
    Sampled(usize),
}

fn check_finite(v: &[f64]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Computation("dynamics model produced a non-finite prediction".into()))
    }
}

fn check_inputs<M: DynamicsModel>(model: &M, state: &[f64], action: &[usize]) -> Result<()> {
    if state.len() != model.state_dim() {
        return Err(Error::Input(format!(
            "state has length {}, model expects {}",
            state.len(),
            model.state_dim()
        )));
    }
    if action.len() != model.action_space_sizes().len() {
        return Err(Error::Input(format!(
            "joint action has {} entries for {} agents",
            action.len(),
            model.action_space_sizes().len()
        )));
    }
    Ok(())
}

/// Influence with the replacement expectation computed by exact enumeration.
pub fn counterfactual_influence<M: DynamicsModel>(
    model: &M,
    state: &[f64],
    action: &[usize],
) -> Result<InfluenceVector> {
    check_inputs(model, state, action)?;
    let sizes = model.action_space_sizes();
    let mut queries: Vec<JointAction> = Vec::with_capacity(1 + sizes.iter().sum::<usize>());
    queries.push(action.to_vec());
    for (i, &n) in sizes.iter().enumerate() {
        for b in 0..n {
            let mut q = action.to_vec();
            q[i] = b;
            queries.push(q);
        }
    }
    let preds = model.predict_many(state, &queries)?;
    for p in &preds {
        check_finite(p)?;
    }
    let d = state.len();
    let actual: Vec<f64> = (0..d).map(|k| math::abs(preds[0][k] - state[k])).collect();
    let mut inf = vec![0.0; d];
    let mut offset = 1;
    for &n in sizes {
        let block = &preds[offset..offset + n];
        for k in 0..d {
            // Summing differences keeps an action-independent model at exactly zero.
            let mut gap = 0.0;
            for p in block {
                gap += actual[k] - math::abs(p[k] - state[k]);
            }
            inf[k] += gap / n as f64;
        }
        offset += n;
    }
    Ok(InfluenceVector { values: inf })
}

/// Influence with the replacement expectation estimated from `samples`
/// uniform draws per agent; intended for action sets too large to enumerate.
pub fn counterfactual_influence_sampled<M: DynamicsModel>(
    model: &M,
    state: &[f64],
    action: &[usize],
    samples: usize,
    rng: &mut Rng,
) -> Result<InfluenceVector> {
    check_inputs(model, state, action)?;
    if samples == 0 {
        return Err(Error::Config("sampled influence needs at least one sample".into()));
    }
    let sizes = model.action_space_sizes();
    let mut queries: Vec<JointAction> = Vec::with_capacity(1 + samples * sizes.len());
    queries.push(action.to_vec());
    for (i, &n) in sizes.iter().enumerate() {
        for _ in 0..samples {
            let mut q = action.to_vec();
            q[i] = rng.gen_range(0..n);
            queries.push(q);
        }
    }
    let preds = model.predict_many(state, &queries)?;
    for p in &preds {
        check_finite(p)?;
    }
    let d = state.len();
    let mut inf = vec![0.0; d];
    for (i, _) in sizes.iter().enumerate() {
        let block = &preds[1 + i * samples..1 + (i + 1) * samples];
        for k in 0..d {
            let actual = math::abs(preds[0][k] - state[k]);
            let gap: f64 = block.iter().map(|p| actual - math::abs(p[k] - state[k])).sum();
            inf[k] += gap / samples as f64;
        }
    }
    Ok(InfluenceVector { values: inf })
}

/// Dispatches on the configured estimator.
pub fn influence<M: DynamicsModel>(
    model: &M,
    state: &[f64],
    action: &[usize],
    estimator: Counterfactual,
    rng: &mut Rng,
) -> Result<InfluenceVector> {
    match estimator {
        Counterfactual::Exact => counterfactual_influence(model, state, action),
        Counterfactual::Sampled(n) => counterfactual_influence_sampled(model, state, action, n, rng),
    }
}

/// Per-dimension eligibility `e[d] <- decay * e[d] + inf[d]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceVector {
    pub values: Vec<f64>,
    pub decay: f64,
}

impl TraceVector {
    pub fn new(dim: usize, decay: f64) -> Result<Self> {
        if !(decay > 0.0 && decay <= 1.0) {
            return Err(Error::Config(format!("trace decay must lie in (0, 1], got {decay}")));
        }
        Ok(TraceVector {
            values: vec![0.0; dim],
            decay,
        })
    }

    pub fn reset(&mut self) {
        self.values.iter_mut().for_each(|e| *e = 0.0);
    }

    pub fn update(&mut self, inf: &[f64]) -> Result<()> {
        if inf.len() != self.values.len() {
            return Err(Error::Input(format!(
                "influence has length {}, trace has {}",
                inf.len(),
                self.values.len()
            )));
        }
        for (e, &x) in self.values.iter_mut().zip(inf) {
            *e = self.decay * *e + x;
        }
        Ok(())
    }
}

impl Deref for TraceVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.values
    }
}

/// Functional form of [`TraceVector::update`].
pub fn update_trace(trace: &TraceVector, inf: &InfluenceVector) -> Result<TraceVector> {
    let mut next = trace.clone();
    next.update(inf)?;
    Ok(next)
}

/// `sum_d inf[d] * max(e_prev[d], 1)`, where `e_prev` is the trace before
/// this step's update.
pub fn afi_reward(inf: &[f64], trace_prev: &[f64]) -> Result<f64> {
    weighted_reward(inf, Some(trace_prev), None)
}

/// `sum_d w[d] * inf[d] * max(e_prev[d], 1)`; a missing trace drops the
/// amplification and missing weights mean `w[d] = 1`.
pub fn weighted_reward(inf: &[f64], trace_prev: Option<&[f64]>, weights: Option<&[f64]>) -> Result<f64> {
    let d = inf.len();
    if trace_prev.is_some_and(|t| t.len() != d) || weights.is_some_and(|w| w.len() != d) {
        return Err(Error::Input("influence, trace and weight lengths differ".into()));
    }
    let mut r = 0.0;
    for k in 0..d {
        let amp = trace_prev.map_or(1.0, |t| if t[k] > 1.0 { t[k] } else { 1.0 });
        let w = weights.map_or(1.0, |w| w[k]);
        r += w * inf[k] * amp;
    }
    Ok(r)
}
