//! Value-decomposition Q-learning: a parameter-shared agent network, a
//! monotonic state-conditioned mixer, frozen target copies, an episode
//! replay buffer and the lambda-return TD update.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index;
use rand::Rng as _;

use crate::approximator::{clip_grad_norm, Activation, Adam, ParamFn, Tape};
use crate::env::{JointAction, StateVector};
use crate::error::{Error, Result};
use crate::math;
use crate::rng::Rng;

/// Maps `(observation, agent id)` to one value per action. All agents share
/// the parameters; a one-hot agent id is appended to the scaled observation.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentNet {
    pub net: ParamFn,
    obs_extents: Vec<f64>,
    n_agents: usize,
    n_actions: usize,
}

impl AgentNet {
    pub fn new(obs_extents: Vec<f64>, n_agents: usize, n_actions: usize, hidden: usize, rng: &mut Rng) -> Result<Self> {
        let n_in = obs_extents.len() + n_agents;
        let net = ParamFn::mlp(&[n_in, hidden, hidden, n_actions], Activation::Relu, Activation::Identity, rng)?;
        Ok(AgentNet {
            net,
            obs_extents,
            n_agents,
            n_actions,
        })
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    fn encode(&self, obs: &[f64], agent: usize, out: &mut Vec<f64>) -> Result<()> {
        if obs.len() != self.obs_extents.len() {
            return Err(Error::Input(format!(
                "observation has length {}, expected {}",
                obs.len(),
                self.obs_extents.len()
            )));
        }
        if agent >= self.n_agents {
            return Err(Error::Input(format!("agent index {agent} out of range")));
        }
        out.clear();
        out.extend(obs.iter().zip(&self.obs_extents).map(|(o, e)| o / e));
        out.extend((0..self.n_agents).map(|k| if k == agent { 1.0 } else { 0.0 }));
        Ok(())
    }

    pub fn q_values(&self, obs: &[f64], agent: usize) -> Result<Vec<f64>> {
        let mut input = Vec::with_capacity(self.net.n_inputs());
        self.encode(obs, agent, &mut input)?;
        self.net.forward(&input)
    }

    fn q_values_tape<'t>(&self, obs: &[f64], agent: usize, input: &mut Vec<f64>, tape: &'t mut Tape) -> Result<&'t [f64]> {
        self.encode(obs, agent, input)?;
        self.net.forward_tape(input, tape)
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn max_value(values: &[f64]) -> f64 {
    values[argmax(values)]
}

/// Per-agent epsilon-greedy choice.
pub fn select_actions(net: &AgentNet, observations: &[StateVector], epsilon: f64, rng: &mut Rng) -> Result<JointAction> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::Input(format!("epsilon must lie in [0, 1], got {epsilon}")));
    }
    if observations.len() != net.n_agents {
        return Err(Error::Input(format!(
            "{} observations for {} agents",
            observations.len(),
            net.n_agents
        )));
    }
    observations
        .iter()
        .enumerate()
        .map(|(i, obs)| {
            let explore = rng.gen::<f64>() < epsilon;
            if explore {
                Ok(rng.gen_range(0..net.n_actions))
            } else {
                Ok(argmax(&net.q_values(obs, i)?))
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MixerKind {
    /// Hypernetwork mixer with non-negative state-conditioned weights.
    Qmix,
    /// Plain sum of agent values.
    Vdn,
}

#[inline]
fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        math::exp(x) - 1.0
    }
}

#[inline]
fn elu_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        math::exp(x)
    }
}

/// `Q_tot = w2 . elu(q W1 + b1) + v(s)` with `W1 = |h1(s)|`, `w2 = |h2(s)|`.
#[derive(Clone, Debug, PartialEq)]
pub struct MixingNet {
    pub kind: MixerKind,
    n_agents: usize,
    embed: usize,
    state_extents: Vec<f64>,
    pub hyper_w1: ParamFn,
    pub hyper_b1: ParamFn,
    pub hyper_w2: ParamFn,
    pub hyper_v: ParamFn,
}

#[derive(Clone, Debug, Default)]
pub struct MixTape {
    qs: Vec<f64>,
    w1: Tape,
    b1: Tape,
    w2: Tape,
    v: Tape,
    pre: Vec<f64>,
    hidden: Vec<f64>,
    input: Vec<f64>,
}

impl MixingNet {
    pub fn new(
        kind: MixerKind,
        state_extents: Vec<f64>,
        n_agents: usize,
        embed: usize,
        hyper_hidden: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let d = state_extents.len();
        let (r, a, id) = (Activation::Relu, Activation::Abs, Activation::Identity);
        Ok(MixingNet {
            kind,
            n_agents,
            embed,
            hyper_w1: ParamFn::mlp(&[d, hyper_hidden, n_agents * embed], r, a, rng)?,
            hyper_b1: ParamFn::mlp(&[d, embed], id, id, rng)?,
            hyper_w2: ParamFn::mlp(&[d, hyper_hidden, embed], r, a, rng)?,
            hyper_v: ParamFn::mlp(&[d, embed, 1], r, id, rng)?,
            state_extents,
        })
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    fn hyper_fns(&self) -> [&ParamFn; 4] {
        [&self.hyper_w1, &self.hyper_b1, &self.hyper_w2, &self.hyper_v]
    }

    fn hyper_fns_mut(&mut self) -> [&mut ParamFn; 4] {
        [&mut self.hyper_w1, &mut self.hyper_b1, &mut self.hyper_w2, &mut self.hyper_v]
    }

    fn scale_state(&self, state: &[f64], out: &mut Vec<f64>) -> Result<()> {
        if state.len() != self.state_extents.len() {
            return Err(Error::Input(format!(
                "state has length {}, mixer expects {}",
                state.len(),
                self.state_extents.len()
            )));
        }
        out.clear();
        out.extend(state.iter().zip(&self.state_extents).map(|(s, e)| s / e));
        Ok(())
    }

    /// First- and second-layer mixing weights generated for `state`.
    pub fn mixing_weights(&self, state: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut x = Vec::new();
        self.scale_state(state, &mut x)?;
        Ok((self.hyper_w1.forward(&x)?, self.hyper_w2.forward(&x)?))
    }

    pub fn q_tot(&self, qs: &[f64], state: &[f64]) -> Result<f64> {
        self.q_tot_tape(qs, state, &mut MixTape::default())
    }

    pub fn q_tot_tape(&self, qs: &[f64], state: &[f64], tape: &mut MixTape) -> Result<f64> {
        if qs.len() != self.n_agents {
            return Err(Error::Input(format!("{} agent values for {} agents", qs.len(), self.n_agents)));
        }
        tape.qs.clear();
        tape.qs.extend_from_slice(qs);
        if self.kind == MixerKind::Vdn {
            return Ok(qs.iter().sum());
        }
        self.scale_state(state, &mut tape.input)?;
        let w1 = self.hyper_w1.forward_tape(&tape.input, &mut tape.w1)?;
        let b1 = self.hyper_b1.forward_tape(&tape.input, &mut tape.b1)?;
        tape.pre.clear();
        tape.pre.extend_from_slice(b1);
        for (i, &q) in qs.iter().enumerate() {
            math::axpy(q, &w1[i * self.embed..(i + 1) * self.embed], &mut tape.pre);
        }
        tape.hidden.clear();
        tape.hidden.extend(tape.pre.iter().map(|&z| elu(z)));
        let w2 = self.hyper_w2.forward_tape(&tape.input, &mut tape.w2)?;
        let dot = math::dot(&tape.hidden, w2);
        let v = self.hyper_v.forward_tape(&tape.input, &mut tape.v)?[0];
        Ok(dot + v)
    }

    /// Back-propagates `d loss / d Q_tot` into the hypernetworks and returns
    /// `d loss / d q_i`.
    pub fn backward(&mut self, tape: &MixTape, upstream: f64) -> Result<Vec<f64>> {
        if self.kind == MixerKind::Vdn {
            return Ok(vec![upstream; self.n_agents]);
        }
        if tape.w1.is_empty() {
            return Err(Error::State("mixer backward without a recorded forward pass".into()));
        }
        let embed = self.embed;
        let w1 = tape.w1.output();
        let w2 = tape.w2.output();
        let grad_w2: Vec<f64> = tape.hidden.iter().map(|h| upstream * h).collect();
        let dz: Vec<f64> = tape
            .pre
            .iter()
            .zip(w2)
            .map(|(&z, &w)| upstream * w * elu_grad(z))
            .collect();
        let mut grad_w1 = vec![0.0; self.n_agents * embed];
        let mut dq = vec![0.0; self.n_agents];
        for (i, &q) in tape.qs.iter().enumerate() {
            let row = &w1[i * embed..(i + 1) * embed];
            dq[i] = math::dot(row, &dz);
            for (g, &d) in grad_w1[i * embed..(i + 1) * embed].iter_mut().zip(&dz) {
                *g = d * q;
            }
        }
        self.hyper_w1.backward(&tape.w1, &grad_w1)?;
        self.hyper_b1.backward(&tape.b1, &dz)?;
        self.hyper_w2.backward(&tape.w2, &grad_w2)?;
        self.hyper_v.backward(&tape.v, &[upstream])?;
        Ok(dq)
    }
}

/// One complete episode; `states` has one more entry than the per-step vectors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Episode {
    pub states: Vec<StateVector>,
    pub actions: Vec<JointAction>,
    pub rewards: Vec<f64>,
    pub terminated: Vec<bool>,
}

impl Episode {
    pub fn new(initial: StateVector) -> Self {
        Episode {
            states: vec![initial],
            ..Episode::default()
        }
    }

    pub fn push(&mut self, action: JointAction, reward: f64, next: StateVector, terminated: bool) {
        self.actions.push(action);
        self.rewards.push(reward);
        self.states.push(next);
        self.terminated.push(terminated);
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// `(s, a, s')` for every step.
    pub fn transitions(&self) -> impl Iterator<Item = (&[f64], &[usize], &[f64])> {
        (0..self.len()).map(move |t| {
            (
                self.states[t].as_slice(),
                self.actions[t].as_slice(),
                self.states[t + 1].as_slice(),
            )
        })
    }
}

/// Ring of complete episodes with uniform sampling.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    episodes: VecDeque<Episode>,
    capacity: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("replay capacity must be positive".into()));
        }
        Ok(ReplayBuffer {
            episodes: VecDeque::with_capacity(capacity.min(1024)),
            capacity,
        })
    }

    pub fn push(&mut self, episode: Episode) {
        if self.episodes.len() == self.capacity {
            self.episodes.pop_front();
        }
        self.episodes.push_back(episode);
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn get(&self, i: usize) -> Option<&Episode> {
        self.episodes.get(i)
    }

    /// Up to `batch` distinct episodes chosen uniformly.
    pub fn sample(&self, batch: usize, rng: &mut Rng) -> Vec<&Episode> {
        let n = batch.min(self.episodes.len());
        index::sample(rng, self.episodes.len(), n)
            .into_iter()
            .map(|i| &self.episodes[i])
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LearnerConfig {
    pub gamma: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub target_interval: u64,
    pub agent_hidden: usize,
    pub mixer_embed: usize,
    pub hyper_hidden: usize,
    pub mixer: MixerKind,
    pub grad_clip: f64,
    /// Pick bootstrap actions with the online network and value them with
    /// the target network instead of taking the target network's maximum.
    pub double_q: bool,
    /// Mixing factor of the lambda-return target; 0 gives one-step targets.
    pub td_lambda: f64,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            gamma: 0.99,
            lr: 5e-4,
            batch_size: 32,
            buffer_capacity: 5000,
            target_interval: 200,
            agent_hidden: 64,
            mixer_embed: 32,
            hyper_hidden: 64,
            mixer: MixerKind::Qmix,
            grad_clip: 10.0,
            double_q: false,
            td_lambda: 0.6,
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma must lie in [0, 1], got {}", self.gamma)));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 || self.buffer_capacity == 0 || self.target_interval == 0 {
            return Err(Error::Config("batch size, buffer capacity and target interval must be positive".into()));
        }
        if self.agent_hidden == 0 || self.mixer_embed == 0 || self.hyper_hidden == 0 {
            return Err(Error::Config("network widths must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.td_lambda) {
            return Err(Error::Config(format!("td_lambda must lie in [0, 1], got {}", self.td_lambda)));
        }
        if !(self.grad_clip > 0.0) {
            return Err(Error::Config("gradient clip must be positive".into()));
        }
        Ok(())
    }
}

/// Frozen copies used for bootstrap targets.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetParams {
    pub agent: AgentNet,
    pub mixer: MixingNet,
    pub since_sync: u64,
}

#[derive(Clone, Debug)]
pub struct Learner {
    pub config: LearnerConfig,
    pub agent: AgentNet,
    pub mixer: MixingNet,
    pub targets: TargetParams,
    agent_opt: Adam,
    mixer_opts: [Adam; 4],
    updates: u64,
}

impl Learner {
    pub fn new(config: LearnerConfig, state_extents: Vec<f64>, n_agents: usize, n_actions: usize, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let agent = AgentNet::new(state_extents.clone(), n_agents, n_actions, config.agent_hidden, rng)?;
        let mixer = MixingNet::new(
            config.mixer,
            state_extents,
            n_agents,
            config.mixer_embed,
            config.hyper_hidden,
            rng,
        )?;
        let agent_opt = Adam::for_fn(&agent.net, config.lr)?;
        let [a, b, c, d] = mixer.hyper_fns();
        let mixer_opts = [
            Adam::for_fn(a, config.lr)?,
            Adam::for_fn(b, config.lr)?,
            Adam::for_fn(c, config.lr)?,
            Adam::for_fn(d, config.lr)?,
        ];
        let targets = TargetParams {
            agent: agent.clone(),
            mixer: mixer.clone(),
            since_sync: 0,
        };
        Ok(Learner {
            config,
            agent,
            mixer,
            targets,
            agent_opt,
            mixer_opts,
            updates: 0,
        })
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn select_actions(&self, observations: &[StateVector], epsilon: f64, rng: &mut Rng) -> Result<JointAction> {
        select_actions(&self.agent, observations, epsilon, rng)
    }

    /// Hard copy of the online parameters into the targets.
    pub fn sync_targets(&mut self) {
        self.targets.agent = self.agent.clone();
        self.targets.mixer = self.mixer.clone();
        self.targets.since_sync = 0;
    }

    /// Joint value of the greedy joint action under the given networks.
    fn greedy_value(agent: &AgentNet, mixer: &MixingNet, state: &[f64]) -> Result<f64> {
        let maxes = (0..agent.n_agents)
            .map(|i| Ok(max_value(&agent.q_values(state, i)?)))
            .collect::<Result<Vec<_>>>()?;
        mixer.q_tot(&maxes, state)
    }

    /// `Q_tot(s, a)` under the online networks.
    pub fn q_tot(&self, state: &[f64], action: &[usize]) -> Result<f64> {
        let qs = (0..self.agent.n_agents)
            .map(|i| Ok(self.agent.q_values(state, i)?[action[i]]))
            .collect::<Result<Vec<_>>>()?;
        self.mixer.q_tot(&qs, state)
    }

    /// Bootstrap value of `state` under the target networks.
    fn bootstrap(&self, state: &[f64]) -> Result<f64> {
        if !self.config.double_q {
            return Self::greedy_value(&self.targets.agent, &self.targets.mixer, state);
        }
        let qs = (0..self.agent.n_agents)
            .map(|i| {
                let a = argmax(&self.agent.q_values(state, i)?);
                Ok(self.targets.agent.q_values(state, i)?[a])
            })
            .collect::<Result<Vec<_>>>()?;
        self.targets.mixer.q_tot(&qs, state)
    }

    /// Lambda-return targets for every step of `ep`, computed backwards.
    /// An episode cut short without termination bootstraps from its last state.
    pub fn targets(&self, ep: &Episode) -> Result<Vec<f64>> {
        let (gamma, lambda) = (self.config.gamma, self.config.td_lambda);
        let n = ep.len();
        let mut ys = vec![0.0; n];
        let mut next_return = 0.0;
        for t in (0..n).rev() {
            let mut y = ep.rewards[t];
            if !ep.terminated[t] && gamma > 0.0 {
                let v = self.bootstrap(&ep.states[t + 1])?;
                y += if t + 1 == n {
                    gamma * v
                } else {
                    gamma * ((1.0 - lambda) * v + lambda * next_return)
                };
            }
            ys[t] = y;
            next_return = y;
        }
        Ok(ys)
    }

    /// Mean squared TD error over every step of `episodes`, no update.
    pub fn batch_loss(&self, episodes: &[&Episode]) -> Result<f64> {
        let mut total = 0.0;
        let mut n = 0usize;
        for ep in episodes {
            let ys = self.targets(ep)?;
            for t in 0..ep.len() {
                let delta = ys[t] - self.q_tot(&ep.states[t], &ep.actions[t])?;
                total += delta * delta;
                n += 1;
            }
        }
        if n == 0 {
            return Err(Error::State("no transitions in batch".into()));
        }
        Ok(total / n as f64)
    }

    /// Samples a batch and applies one TD update.
    pub fn td_update(&mut self, buffer: &ReplayBuffer, rng: &mut Rng) -> Result<f64> {
        if buffer.is_empty() {
            return Err(Error::State("cannot update from an empty replay buffer".into()));
        }
        let batch = buffer.sample(self.config.batch_size, rng);
        self.td_update_batch(&batch)
    }

    /// One Adam step on the mean squared TD error of `episodes`; syncs the
    /// targets every `target_interval` updates. Returns the loss before the step.
    pub fn td_update_batch(&mut self, episodes: &[&Episode]) -> Result<f64> {
        let n: usize = episodes.iter().map(|e| e.len()).sum();
        if n == 0 {
            return Err(Error::State("no transitions in batch".into()));
        }
        let n_agents = self.agent.n_agents;
        let mut agent_tapes = vec![Tape::new(); n_agents];
        let mut inputs = vec![Vec::new(); n_agents];
        let mut mix_tape = MixTape::default();
        let mut qs = vec![0.0; n_agents];
        let mut loss = 0.0;
        for ep in episodes {
            let ys = self.targets(ep)?;
            for t in 0..ep.len() {
                let y = ys[t];
                let state = &ep.states[t];
                for i in 0..n_agents {
                    let out = self.agent.q_values_tape(state, i, &mut inputs[i], &mut agent_tapes[i])?;
                    qs[i] = out[ep.actions[t][i]];
                }
                let q = self.mixer.q_tot_tape(&qs, state, &mut mix_tape)?;
                let delta = y - q;
                loss += delta * delta;
                let dq_tot = -2.0 * delta / n as f64;
                let dq = self.mixer.backward(&mix_tape, dq_tot)?;
                for i in 0..n_agents {
                    let mut upstream = vec![0.0; self.agent.n_actions];
                    upstream[ep.actions[t][i]] = dq[i];
                    self.agent.net.backward(&agent_tapes[i], &upstream)?;
                }
            }
        }
        let loss = loss / n as f64;
        if !loss.is_finite() {
            return Err(Error::Training(format!("non-finite TD loss {loss}")));
        }
        {
            let [a, b, c, d] = self.mixer.hyper_fns_mut();
            clip_grad_norm(&mut [&mut self.agent.net, a, b, c, d], self.config.grad_clip);
        }
        self.agent_opt.step(&mut self.agent.net)?;
        for (opt, f) in self.mixer_opts.iter_mut().zip(self.mixer.hyper_fns_mut()) {
            opt.step(f)?;
        }
        self.updates += 1;
        self.targets.since_sync += 1;
        if self.targets.since_sync >= self.config.target_interval {
            self.sync_targets();
        }
        Ok(loss)
    }

    /// All parameter maps in a fixed order, for checkpoints.
    pub fn param_fns(&self) -> [&ParamFn; 5] {
        let [a, b, c, d] = self.mixer.hyper_fns();
        [&self.agent.net, a, b, c, d]
    }
}
