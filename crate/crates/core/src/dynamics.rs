//! Forward models `s' = f(s, a)` queried by the influence computation.
//!
//! Two implementations share the [`DynamicsModel`] interface: the learned
//! [`DynamicsNet`] and [`OracleModel`], which answers with the exact
//! simulator transition.

use alloc::format;
use alloc::vec::Vec;

use crate::approximator::{Activation, Adam, ParamFn, Tape};
use crate::env::{JointAction, PushBox, StateVector};
use crate::error::{Error, Result};
use crate::rng::Rng;

pub trait DynamicsModel {
    fn state_dim(&self) -> usize;

    fn action_space_sizes(&self) -> &[usize];

    fn predict(&self, state: &[f64], action: &[usize]) -> Result<StateVector>;

    /// Predictions for several joint actions taken from the same state.
    fn predict_many(&self, state: &[f64], actions: &[JointAction]) -> Result<Vec<StateVector>> {
        actions.iter().map(|a| self.predict(state, a)).collect()
    }
}

impl<M: DynamicsModel + ?Sized> DynamicsModel for &M {
    fn state_dim(&self) -> usize {
        (**self).state_dim()
    }

    fn action_space_sizes(&self) -> &[usize] {
        (**self).action_space_sizes()
    }

    fn predict(&self, state: &[f64], action: &[usize]) -> Result<StateVector> {
        (**self).predict(state, action)
    }

    fn predict_many(&self, state: &[f64], actions: &[JointAction]) -> Result<Vec<StateVector>> {
        (**self).predict_many(state, actions)
    }
}

/// Exact simulator transition behind the model interface.
#[derive(Clone, Debug)]
pub struct OracleModel {
    env: PushBox,
    action_sizes: Vec<usize>,
}

pub fn make_oracle_model(env: &PushBox) -> OracleModel {
    OracleModel {
        env: env.clone(),
        action_sizes: env.action_space_sizes(),
    }
}

impl DynamicsModel for OracleModel {
    fn state_dim(&self) -> usize {
        self.env.state_dim()
    }

    fn action_space_sizes(&self) -> &[usize] {
        &self.action_sizes
    }

    fn predict(&self, state: &[f64], action: &[usize]) -> Result<StateVector> {
        let s = self.env.unflatten(state)?;
        self.env.oracle_next(&s, action)
    }
}

/// One `(state, joint action, next state)` sample.
pub type TransitionRef<'a> = (&'a [f64], &'a [usize], &'a [f64]);

/// Learned forward model: an MLP over the state scaled to `[0, 1]` by the
/// grid extents concatenated with per-agent one-hot actions. The network
/// predicts the scaled change, which is added back onto the state in grid
/// units.
#[derive(Clone, Debug)]
pub struct DynamicsNet {
    net: ParamFn,
    extents: Vec<f64>,
    action_sizes: Vec<usize>,
    opt: Adam,
    tape: Tape,
}

pub const DYNAMICS_HIDDEN: usize = 128;

impl DynamicsNet {
    /// Three-layer model: `input -> hidden -> hidden -> state`.
    pub fn new(
        extents: Vec<f64>,
        action_sizes: Vec<usize>,
        hidden: usize,
        lr: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        if extents.iter().any(|&e| !(e > 0.0)) {
            return Err(Error::Config("state extents must be positive".into()));
        }
        let d = extents.len();
        let n_in = d + action_sizes.iter().sum::<usize>();
        let net = ParamFn::mlp(&[n_in, hidden, hidden, d], Activation::Relu, Activation::Identity, rng)?;
        let opt = Adam::for_fn(&net, lr)?;
        Ok(DynamicsNet {
            net,
            extents,
            action_sizes,
            opt,
            tape: Tape::new(),
        })
    }

    pub fn for_env(env: &PushBox, hidden: usize, lr: f64, rng: &mut Rng) -> Result<Self> {
        Self::new(env.dimension_extents(), env.action_space_sizes(), hidden, lr, rng)
    }

    pub fn net(&self) -> &ParamFn {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut ParamFn {
        &mut self.net
    }

    pub fn input_len(&self) -> usize {
        self.extents.len() + self.action_sizes.iter().sum::<usize>()
    }

    fn check(&self, state: &[f64], action: &[usize]) -> Result<()> {
        if state.len() != self.extents.len() {
            return Err(Error::Input(format!(
                "state has length {}, model expects {}",
                state.len(),
                self.extents.len()
            )));
        }
        if action.len() != self.action_sizes.len() {
            return Err(Error::Input(format!(
                "joint action has {} entries, model expects {}",
                action.len(),
                self.action_sizes.len()
            )));
        }
        if let Some((i, &a)) = action.iter().enumerate().find(|(i, &a)| a >= self.action_sizes[*i]) {
            return Err(Error::Input(format!("agent {i} action {a} out of range")));
        }
        Ok(())
    }

    pub fn encode(&self, state: &[f64], action: &[usize], out: &mut Vec<f64>) -> Result<()> {
        self.check(state, action)?;
        out.clear();
        out.extend(state.iter().zip(&self.extents).map(|(s, e)| s / e));
        for (&a, &n) in action.iter().zip(&self.action_sizes) {
            out.extend((0..n).map(|k| if k == a { 1.0 } else { 0.0 }));
        }
        Ok(())
    }

    /// The network output is the change in scaled coordinates.
    fn unscale(&self, state: &[f64], out: &[f64]) -> StateVector {
        out.iter().zip(&self.extents).zip(state).map(|((o, e), x)| x + o * e).collect()
    }

    /// One Adam step on the mean squared prediction error of `batch`,
    /// measured in grid units. Returns the loss before the step.
    pub fn train_step(&mut self, batch: &[TransitionRef<'_>]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Input("empty dynamics batch".into()));
        }
        let inv_b = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        let mut input = Vec::with_capacity(self.input_len());
        let mut upstream = Vec::with_capacity(self.extents.len());
        for &(s, a, next) in batch {
            if next.len() != self.extents.len() {
                return Err(Error::Input("next state has the wrong length".into()));
            }
            self.encode(s, a, &mut input)?;
            let out = self.net.forward_tape(&input, &mut self.tape)?;
            upstream.clear();
            for (((&o, &e), &x), &target) in out.iter().zip(&self.extents).zip(s).zip(next) {
                let err = x + o * e - target;
                loss += err * err * inv_b;
                upstream.push(2.0 * err * e * inv_b);
            }
            self.net.backward(&self.tape, &upstream)?;
        }
        if !loss.is_finite() {
            self.net.zero_grad();
            return Err(Error::Training(format!("non-finite dynamics loss {loss}")));
        }
        self.opt.step(&mut self.net)?;
        Ok(loss)
    }

    /// Mean squared error without updating anything.
    pub fn evaluate_mse(&self, batch: &[TransitionRef<'_>]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Input("empty evaluation batch".into()));
        }
        let mut total = 0.0;
        for &(s, a, next) in batch {
            let p = self.predict(s, a)?;
            total += p.iter().zip(next).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
        }
        Ok(total / batch.len() as f64)
    }
}

impl DynamicsModel for DynamicsNet {
    fn state_dim(&self) -> usize {
        self.extents.len()
    }

    fn action_space_sizes(&self) -> &[usize] {
        &self.action_sizes
    }

    fn predict(&self, state: &[f64], action: &[usize]) -> Result<StateVector> {
        let mut input = Vec::with_capacity(self.input_len());
        self.encode(state, action, &mut input)?;
        let out = self.net.forward(&input)?;
        Ok(self.unscale(state, &out))
    }

    /// Shares the state half of the first layer across all joint actions.
    fn predict_many(&self, state: &[f64], actions: &[JointAction]) -> Result<Vec<StateVector>> {
        let d = self.extents.len();
        let n_in = self.input_len();
        let (w, b) = self.net.layer(0);
        let scaled: Vec<f64> = state.iter().zip(&self.extents).map(|(s, e)| s / e).collect();
        if state.len() != d {
            return Err(Error::Input(format!("state has length {}, model expects {d}", state.len())));
        }
        let base: Vec<f64> = w
            .chunks_exact(n_in)
            .zip(b)
            .map(|(row, bias)| row[..d].iter().zip(&scaled).map(|(x, y)| x * y).sum::<f64>() + bias)
            .collect();
        let mut pre = base.clone();
        actions
            .iter()
            .map(|a| {
                self.check(state, a)?;
                pre.copy_from_slice(&base);
                let mut offset = d;
                for (&ai, &n) in a.iter().zip(&self.action_sizes) {
                    let col = offset + ai;
                    for (p, row) in pre.iter_mut().zip(w.chunks_exact(n_in)) {
                        *p += row[col];
                    }
                    offset += n;
                }
                let out = self.net.forward_from_preactivation(0, &pre)?;
                Ok(self.unscale(state, &out))
            })
            .collect()
    }
}
