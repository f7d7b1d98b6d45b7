//! Training orchestration: rollouts, intrinsic-reward composition, periodic
//! entropy re-estimation with smoothed weights, learner and dynamics updates,
//! and greedy evaluation.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::dynamics::{DynamicsNet, TransitionRef, DYNAMICS_HIDDEN};
use crate::entropy::{self, DimensionProfile};
use crate::env::{GridConfig, JointAction, PushBox, PushBoxState, StateVector};
use crate::error::{Error, Result, ResultExt};
use crate::influence::{self, Counterfactual, TraceVector};
use crate::learner::{Episode, Learner, LearnerConfig, ReplayBuffer};
use crate::rng::{self, streams, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mode {
    /// Trace-amplified influence weighted by entropy-derived dimension weights.
    Fim,
    /// Trace-amplified influence, every dimension weighted 1.
    AfiOnly,
    /// Entropy-weighted influence without trace amplification.
    SfiOnly,
    /// Same reward as `AfiOnly`; kept as its own label for the weighting ablation.
    Uniform,
    /// Weights from the mean range-normalized change of each dimension.
    Lfi,
    /// Entropy weights restricted to a mask of dimensions.
    Efi,
    /// Extrinsic reward only.
    Baseline,
}

impl Mode {
    pub const ALL: [Mode; 7] = [
        Mode::Fim,
        Mode::AfiOnly,
        Mode::SfiOnly,
        Mode::Uniform,
        Mode::Lfi,
        Mode::Efi,
        Mode::Baseline,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Fim => "fim",
            Mode::AfiOnly => "afi_only",
            Mode::SfiOnly => "sfi_only",
            Mode::Uniform => "uniform",
            Mode::Lfi => "lfi",
            Mode::Efi => "efi",
            Mode::Baseline => "baseline",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Mode::ALL.into_iter().find(|m| m.name() == s)
    }

    pub fn uses_influence(self) -> bool {
        self != Mode::Baseline
    }

    pub fn uses_trace(self) -> bool {
        !matches!(self, Mode::SfiOnly | Mode::Baseline)
    }

    pub fn uses_weights(self) -> bool {
        matches!(self, Mode::Fim | Mode::SfiOnly | Mode::Lfi | Mode::Efi)
    }
}

impl core::fmt::Display for Mode {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

/// `r_ext + alpha * r_int`, where the intrinsic term depends on the mode.
/// `trace_prev` is the trace before this step's update; `w` is ignored by
/// modes that do not weight dimensions.
pub fn compose_reward(
    mode: Mode,
    alpha: f64,
    r_ext: f64,
    inf: &[f64],
    trace_prev: &[f64],
    w: &[f64],
) -> Result<f64> {
    if mode == Mode::Baseline {
        return Ok(r_ext);
    }
    let trace = mode.uses_trace().then_some(trace_prev);
    let weights = mode.uses_weights().then_some(w);
    Ok(r_ext + alpha * influence::weighted_reward(inf, trace, weights)?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub mode: Mode,
    pub alpha: f64,
    pub phi: f64,
    pub tau: f64,
    pub trace_decay: f64,
    /// Environment steps of training, excluding estimation rollouts.
    pub total_steps: u64,
    pub reestimate_interval: u64,
    /// Transitions collected per entropy estimation.
    pub estimation_steps: u64,
    pub efi_mask: Option<Vec<usize>>,
    pub seed: u64,
    pub env: GridConfig,
    pub learner: LearnerConfig,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Fraction of `total_steps` over which epsilon anneals linearly.
    pub epsilon_anneal_fraction: f64,
    pub eval_interval: u64,
    pub eval_episodes: usize,
    pub trace_interval: u64,
    pub counterfactual: Counterfactual,
    pub dynamics_hidden: usize,
    pub dynamics_lr: f64,
    pub dynamics_batch: usize,
    /// Dynamics updates after each learner update.
    pub dynamics_updates: usize,
    /// Dynamics updates on the initial estimation rollouts before training.
    pub dynamics_warmup: usize,
    pub entropy_epsilon: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: Mode::Fim,
            alpha: 5.0,
            phi: 0.05,
            tau: 0.1,
            trace_decay: 0.99,
            total_steps: 300_000,
            reestimate_interval: 25_000,
            estimation_steps: 10_000,
            efi_mask: None,
            seed: 0,
            env: GridConfig::default(),
            learner: LearnerConfig::default(),
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_anneal_fraction: 0.1,
            eval_interval: 10_000,
            eval_episodes: 32,
            trace_interval: 100,
            counterfactual: Counterfactual::Exact,
            dynamics_hidden: DYNAMICS_HIDDEN,
            dynamics_lr: 1e-3,
            dynamics_batch: 256,
            dynamics_updates: 4,
            dynamics_warmup: 5000,
            entropy_epsilon: entropy::DEFAULT_EPSILON,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be finite and non-negative, got {}", self.alpha));
        }
        if !(0.0..=1.0).contains(&self.phi) {
            return bad(format!("phi must lie in [0, 1], got {}", self.phi));
        }
        if !(self.tau > 0.0) {
            return bad(format!("tau must be positive, got {}", self.tau));
        }
        if !(self.trace_decay > 0.0 && self.trace_decay <= 1.0) {
            return bad(format!("trace decay must lie in (0, 1], got {}", self.trace_decay));
        }
        if self.reestimate_interval == 0 || self.estimation_steps == 0 {
            return bad("re-estimation interval and estimation steps must be positive".into());
        }
        if self.eval_interval == 0 || self.eval_episodes == 0 || self.trace_interval == 0 {
            return bad("evaluation interval, evaluation episodes and trace interval must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.epsilon_start) || !(0.0..=1.0).contains(&self.epsilon_end) {
            return bad("epsilon bounds must lie in [0, 1]".into());
        }
        if !(0.0..=1.0).contains(&self.epsilon_anneal_fraction) {
            return bad("epsilon anneal fraction must lie in [0, 1]".into());
        }
        if self.dynamics_batch == 0 || self.dynamics_updates == 0 || self.dynamics_hidden == 0 || !(self.dynamics_lr > 0.0) {
            return bad("dynamics batch, width and learning rate must be positive".into());
        }
        if let Counterfactual::Sampled(0) = self.counterfactual {
            return bad("sampled counterfactual needs at least one sample".into());
        }
        self.env.validate()?;
        self.learner.validate()?;
        let dim = 2 * (self.env.n_agents + self.env.n_boxes);
        match (&self.efi_mask, self.mode) {
            (None, Mode::Efi) => return bad("efi mode requires efi_mask".into()),
            (Some(mask), _) => {
                if mask.is_empty() {
                    return bad("efi_mask must name at least one dimension".into());
                }
                if let Some(&d) = mask.iter().find(|&&d| d >= dim) {
                    return bad(format!("efi_mask dimension {d} out of range for a {dim}-dimensional state"));
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Linear schedule from `epsilon_start` to `epsilon_end`.
    pub fn epsilon(&self, step: u64) -> f64 {
        let span = (self.total_steps as f64 * self.epsilon_anneal_fraction).floor();
        if span < 1.0 {
            return self.epsilon_end;
        }
        if step as f64 >= span {
            return self.epsilon_end;
        }
        let frac = step as f64 / span;
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalPoint {
    pub step: u64,
    pub success_rate: f64,
}

/// One entropy estimation and the weights in force after it.
#[derive(Clone, Debug, PartialEq)]
pub struct EstimationRound {
    pub round: usize,
    pub step: u64,
    pub profile: DimensionProfile,
    /// Weights derived from this round alone, before smoothing.
    pub fresh: Vec<f64>,
    /// Smoothed weights used for rewards until the next round.
    pub weights: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceSnapshot {
    pub step: u64,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossPoint {
    pub update: u64,
    pub step: u64,
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub step: u64,
    pub episode: u64,
    pub td_loss: f64,
    pub epsilon: f64,
    /// Most recent evaluation result, if any.
    pub success_rate: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub config: RunConfig,
    pub labels: Vec<String>,
    pub evals: Vec<EvalPoint>,
    /// Composed reward of every training step.
    pub rewards: Vec<f64>,
    pub estimations: Vec<EstimationRound>,
    pub traces: Vec<TraceSnapshot>,
    pub dynamics_loss: Vec<LossPoint>,
    pub metrics: Vec<MetricsRow>,
    pub train_steps: u64,
    pub estimation_env_steps: u64,
    pub episodes: u64,
}

impl RunRecord {
    pub fn final_success_rate(&self) -> Option<f64> {
        self.evals.last().map(|e| e.success_rate)
    }
}

/// Hooks called by [`run_training`]; every method defaults to a no-op.
pub trait RunObserver {
    /// Called with the state in which each training action is taken.
    fn on_step(&mut self, _step: u64, _state: &PushBoxState) {}

    /// Called after each training step with its extrinsic and composed reward.
    fn on_transition(&mut self, _state: &PushBoxState, _next: &PushBoxState, _reward_ext: f64, _reward: f64) {}

    fn on_episode(&mut self, _episode: u64, _success: bool) {}

    fn on_eval(&mut self, _point: &EvalPoint) {}
}

impl RunObserver for () {}

/// Maps a state to a joint action.
pub trait Policy {
    fn act(&mut self, env: &PushBox, state: &PushBoxState) -> Result<JointAction>;
}

/// Argmax of the shared agent network.
pub struct Greedy<'a>(pub &'a Learner);

impl Policy for Greedy<'_> {
    fn act(&mut self, env: &PushBox, state: &PushBoxState) -> Result<JointAction> {
        let obs = env.observations(state);
        // epsilon = 0 never consults the generator
        self.0.select_actions(&obs, 0.0, &mut rng::stream(0, 0))
    }
}

/// Fraction of `n_episodes` greedy episodes that end in success, each from
/// a fresh reset seed drawn from `rng`.
pub fn evaluate<P: Policy>(policy: &mut P, env: &PushBox, n_episodes: usize, rng: &mut Rng) -> Result<f64> {
    if n_episodes == 0 {
        return Err(Error::Config("evaluation needs at least one episode".into()));
    }
    let mut wins = 0usize;
    for _ in 0..n_episodes {
        let (mut state, _) = env.reset(rng.gen())?;
        loop {
            let a = policy.act(env, &state)?;
            let res = env.step(&state, &a)?;
            state = res.next_state;
            if res.done {
                wins += usize::from(res.success);
                break;
            }
        }
    }
    Ok(wins as f64 / n_episodes as f64)
}

type Pair = (StateVector, StateVector);

/// Collects `steps` transitions under the epsilon-greedy policy.
fn collect_rollouts(
    env: &PushBox,
    learner: &Learner,
    epsilon: f64,
    steps: u64,
    rng: &mut Rng,
) -> Result<(Vec<Pair>, Vec<JointAction>)> {
    let mut pairs = Vec::with_capacity(steps as usize);
    let mut actions = Vec::with_capacity(steps as usize);
    let (mut state, mut obs) = env.reset(rng.gen())?;
    while (pairs.len() as u64) < steps {
        let a = learner.select_actions(&obs, epsilon, rng)?;
        let res = env.step(&state, &a)?;
        let s = env.flatten_state(&state);
        let s2 = env.flatten_state(&res.next_state);
        pairs.push((s, s2));
        actions.push(a);
        if res.done {
            (state, obs) = env.reset(rng.gen())?;
        } else {
            state = res.next_state;
            obs = env.observations(&state);
        }
    }
    Ok((pairs, actions))
}

fn normalize(w: &mut [f64]) -> Result<()> {
    let z: f64 = w.iter().sum();
    if !(z > 0.0) {
        return Err(Error::Computation("weights vanish after masking".into()));
    }
    w.iter_mut().for_each(|x| *x /= z);
    Ok(())
}

/// Fresh dimension weights for `mode` from one batch of rollouts.
fn fresh_weights(config: &RunConfig, pairs: &[Pair], profile: &DimensionProfile) -> Result<Vec<f64>> {
    let d = profile.dim();
    match config.mode {
        Mode::Lfi => entropy::softmax_neg(&entropy::mean_range_normalized_change(pairs)?, config.tau),
        Mode::Efi => {
            let mask = config.efi_mask.as_deref().unwrap_or(&[]);
            let mut w: Vec<f64> = (0..d)
                .map(|k| if mask.contains(&k) { profile.weight[k] } else { 0.0 })
                .collect();
            normalize(&mut w)?;
            Ok(w)
        }
        Mode::AfiOnly | Mode::Uniform | Mode::Baseline => Ok(vec![1.0 / d as f64; d]),
        Mode::Fim | Mode::SfiOnly => Ok(profile.weight.clone()),
    }
}

struct Estimator<'c> {
    config: &'c RunConfig,
    rng: Rng,
    rounds: Vec<EstimationRound>,
    env_steps: u64,
}

impl Estimator<'_> {
    fn estimate(&mut self, env: &PushBox, learner: &Learner, step: u64) -> Result<Vec<Pair>> {
        let eps = self.config.epsilon(step);
        let (pairs, actions) = collect_rollouts(env, learner, eps, self.config.estimation_steps, &mut self.rng)?;
        self.env_steps += pairs.len() as u64;
        let profile = entropy::profile(&pairs, self.config.entropy_epsilon, self.config.tau)?;
        let fresh = fresh_weights(self.config, &pairs, &profile)?;
        let weights = match self.rounds.last() {
            None => fresh.clone(),
            Some(prev) => entropy::ema_update(&prev.weights, &fresh, self.config.phi)?,
        };
        self.rounds.push(EstimationRound {
            round: self.rounds.len(),
            step,
            profile,
            fresh,
            weights,
        });
        // Keep the actions alongside for dynamics warm-up.
        Ok(pairs
            .into_iter()
            .zip(actions)
            .map(|((s, s2), a)| {
                let mut packed = s;
                packed.extend(a.iter().map(|&x| x as f64));
                (packed, s2)
            })
            .collect())
    }

    fn weights(&self) -> &[f64] {
        &self.rounds.last().expect("estimated before training").weights
    }
}

fn warm_up(dynamics: &mut DynamicsNet, packed: &[Pair], d: usize, config: &RunConfig, rng: &mut Rng) -> Result<Vec<f64>> {
    let unpacked: Vec<(&[f64], Vec<usize>, &[f64])> = packed
        .iter()
        .map(|(sa, s2)| (&sa[..d], sa[d..].iter().map(|&x| x as usize).collect(), s2.as_slice()))
        .collect();
    let mut losses = Vec::with_capacity(config.dynamics_warmup);
    let mut batch: Vec<TransitionRef<'_>> = Vec::with_capacity(config.dynamics_batch);
    for _ in 0..config.dynamics_warmup {
        batch.clear();
        for _ in 0..config.dynamics_batch {
            let (s, a, s2) = &unpacked[rng.gen_range(0..unpacked.len())];
            batch.push((s, a, s2));
        }
        losses.push(dynamics.train_step(&batch)?);
    }
    Ok(losses)
}

/// The first estimation round of a run: entropies and weights measured
/// under the freshly initialised policy at the starting exploration rate.
pub fn initial_profile(config: &RunConfig) -> Result<EstimationRound> {
    config.validate()?;
    let env = PushBox::new(config.env.clone())?;
    let mut init_rng = rng::stream(config.seed, streams::INIT);
    let learner = Learner::new(
        config.learner.clone(),
        env.dimension_extents(),
        env.n_agents(),
        env.n_actions(),
        &mut init_rng,
    )?;
    let mut estimator = Estimator {
        config,
        rng: rng::stream(config.seed, streams::ESTIMATE),
        rounds: Vec::new(),
        env_steps: 0,
    };
    estimator.estimate(&env, &learner, 0)?;
    Ok(estimator.rounds.pop().expect("one round estimated"))
}

/// Runs one training job to completion.
pub fn run_training(config: &RunConfig) -> Result<RunRecord> {
    run_training_observed(config, &mut ())
}

pub fn run_training_observed<O: RunObserver>(config: &RunConfig, observer: &mut O) -> Result<RunRecord> {
    let ctx = || format!("{} run with seed {}", config.mode, config.seed);
    config.validate().context(ctx())?;
    run_inner(config, observer).context(ctx())
}

fn run_inner<O: RunObserver>(config: &RunConfig, observer: &mut O) -> Result<RunRecord> {
    let seed = config.seed;
    let env = PushBox::new(config.env.clone())?;
    let d = env.state_dim();
    let mut init_rng = rng::stream(seed, streams::INIT);
    let mut env_rng = rng::stream(seed, streams::ENV);
    let mut explore_rng = rng::stream(seed, streams::EXPLORE);
    let mut replay_rng = rng::stream(seed, streams::REPLAY);
    let mut eval_rng = rng::stream(seed, streams::EVAL);
    let mut dyn_rng = rng::stream(seed, streams::DYNAMICS);

    let mut learner = Learner::new(
        config.learner.clone(),
        env.dimension_extents(),
        env.n_agents(),
        env.n_actions(),
        &mut init_rng,
    )?;
    let mut dynamics = DynamicsNet::for_env(&env, config.dynamics_hidden, config.dynamics_lr, &mut init_rng)?;
    let mut buffer = ReplayBuffer::new(config.learner.buffer_capacity)?;
    let mut trace = TraceVector::new(d, config.trace_decay)?;
    let mut estimator = Estimator {
        config,
        rng: rng::stream(seed, streams::ESTIMATE),
        rounds: Vec::new(),
        env_steps: 0,
    };

    let mut record = RunRecord {
        config: config.clone(),
        labels: env.dimension_labels(),
        evals: Vec::new(),
        rewards: Vec::with_capacity(config.total_steps.min(1 << 24) as usize),
        estimations: Vec::new(),
        traces: Vec::new(),
        dynamics_loss: Vec::new(),
        metrics: Vec::new(),
        train_steps: 0,
        estimation_env_steps: 0,
        episodes: 0,
    };

    let initial = estimator.estimate(&env, &learner, 0).context("initial estimation")?;
    if config.mode.uses_influence() {
        let losses = warm_up(&mut dynamics, &initial, d, config, &mut dyn_rng).context("dynamics warm-up")?;
        record.dynamics_loss.extend(losses.into_iter().map(|loss| LossPoint { update: 0, step: 0, loss }));
    }
    drop(initial);

    let mut step: u64 = 0;
    let mut last_success: Option<f64> = None;
    while step < config.total_steps {
        let (mut state, mut obs) = env.reset(env_rng.gen())?;
        let mut flat = env.flatten_state(&state);
        let mut episode = Episode::new(flat.clone());
        trace.reset();
        let success = loop {
            observer.on_step(step, &state);
            let eps = config.epsilon(step);
            let action = learner.select_actions(&obs, eps, &mut explore_rng)?;
            let res = env.step(&state, &action)?;
            let next_flat = env.flatten_state(&res.next_state);
            let reward = if config.mode.uses_influence() {
                let inf = influence::influence(&dynamics, &flat, &action, config.counterfactual, &mut dyn_rng)?;
                let r = compose_reward(config.mode, config.alpha, res.reward_ext, &inf, &trace, estimator.weights())?;
                trace.update(&inf)?;
                r
            } else {
                res.reward_ext
            };
            record.rewards.push(reward);
            observer.on_transition(&state, &res.next_state, res.reward_ext, reward);
            step += 1;
            let truncated = !res.done && step >= config.total_steps;
            episode.push(action, reward, next_flat.clone(), res.done && !truncated);

            if step % config.trace_interval == 0 {
                record.traces.push(TraceSnapshot {
                    step,
                    values: trace.values.clone(),
                });
            }
            if step % config.reestimate_interval == 0 && step < config.total_steps {
                estimator
                    .estimate(&env, &learner, step)
                    .context(format!("re-estimation at step {step}"))?;
            }
            if step % config.eval_interval == 0 || step == config.total_steps {
                let rate = evaluate(&mut Greedy(&learner), &env, config.eval_episodes, &mut eval_rng)?;
                let point = EvalPoint { step, success_rate: rate };
                observer.on_eval(&point);
                record.evals.push(point);
                last_success = Some(rate);
            }
            if res.done || truncated {
                break res.success;
            }
            state = res.next_state;
            obs = env.observations(&state);
            flat = next_flat;
        };
        record.episodes += 1;
        observer.on_episode(record.episodes, success);
        buffer.push(episode);

        if buffer.len() >= config.learner.batch_size {
            let batch = buffer.sample(config.learner.batch_size, &mut replay_rng);
            let loss = learner.td_update_batch(&batch).context(format!("learner update at step {step}"))?;
            let n: usize = batch.iter().map(|e| e.len()).sum();
            let mut picks: Vec<TransitionRef<'_>> = Vec::with_capacity(config.dynamics_batch);
            let rounds = if config.mode.uses_influence() { config.dynamics_updates } else { 0 };
            for _ in 0..rounds {
                picks.clear();
                for _ in 0..config.dynamics_batch {
                    let mut k = dyn_rng.gen_range(0..n);
                    let ep = batch
                        .iter()
                        .find(|e| {
                            if k < e.len() {
                                true
                            } else {
                                k -= e.len();
                                false
                            }
                        })
                        .expect("index within batch");
                    picks.push((&ep.states[k], &ep.actions[k], &ep.states[k + 1]));
                }
                let dl = dynamics.train_step(&picks).context(format!("dynamics update at step {step}"))?;
                record.dynamics_loss.push(LossPoint {
                    update: learner.updates(),
                    step,
                    loss: dl,
                });
            }
            record.metrics.push(MetricsRow {
                step,
                episode: record.episodes,
                td_loss: loss,
                epsilon: config.epsilon(step),
                success_rate: last_success,
            });
        }
    }
    record.train_steps = step;
    record.estimation_env_steps = estimator.env_steps;
    record.estimations = estimator.rounds;
    Ok(record)
}
