//! Experiment configuration: documented defaults, overlaid by an optional
//! TOML file, overlaid by command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use fimlab_core::env::{AgentStart, Wall};
use fimlab_core::harness::{Mode, RunConfig};
use fimlab_core::influence::Counterfactual;
use fimlab_core::learner::MixerKind;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Runs to execute and where to write them.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSpec {
    pub base: RunConfig,
    pub runs: Vec<(Mode, u64)>,
    pub out: PathBuf,
}

impl ExperimentSpec {
    /// The resolved configuration of one run.
    pub fn run_config(&self, mode: Mode, seed: u64) -> RunConfig {
        RunConfig {
            mode,
            seed,
            ..self.base.clone()
        }
    }

    pub fn run_dir(&self, mode: Mode, seed: u64) -> PathBuf {
        self.out.join(format!("{mode}-seed{seed}"))
    }
}

/// Values given on the command line; `None` leaves the lower layer alone.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub modes: Vec<Mode>,
    pub seeds: Vec<u64>,
    pub alpha: Option<f64>,
    pub phi: Option<f64>,
    pub tau: Option<f64>,
    pub steps: Option<u64>,
    pub out: Option<PathBuf>,
    pub grid: Option<(u32, u32)>,
    pub episode_limit: Option<u32>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub experiment: Option<ExperimentSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub run: Option<RunSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub env: Option<EnvSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub learner: Option<LearnerSection>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub modes: Option<Vec<String>>,
    pub seeds: Option<Vec<u64>>,
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub mode: Option<String>,
    pub seed: Option<u64>,
    pub alpha: Option<f64>,
    pub phi: Option<f64>,
    pub tau: Option<f64>,
    pub trace_decay: Option<f64>,
    pub total_steps: Option<u64>,
    pub reestimate_interval: Option<u64>,
    pub estimation_steps: Option<u64>,
    pub efi_mask: Option<Vec<usize>>,
    pub epsilon_start: Option<f64>,
    pub epsilon_end: Option<f64>,
    pub epsilon_anneal_fraction: Option<f64>,
    pub eval_interval: Option<u64>,
    pub eval_episodes: Option<usize>,
    pub trace_interval: Option<u64>,
    /// 0 enumerates every replacement action; n > 0 samples n per agent.
    pub counterfactual_samples: Option<usize>,
    pub dynamics_hidden: Option<usize>,
    pub dynamics_lr: Option<f64>,
    pub dynamics_batch: Option<usize>,
    pub dynamics_updates: Option<usize>,
    pub dynamics_warmup: Option<usize>,
    pub entropy_epsilon: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSection {
    pub width: Option<u32>,
    pub height: Option<u32>,
    pub n_agents: Option<usize>,
    pub n_boxes: Option<usize>,
    pub episode_limit: Option<u32>,
    pub goal_wall: Option<String>,
    pub agent_start: Option<String>,
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerSection {
    pub gamma: Option<f64>,
    pub lr: Option<f64>,
    pub batch_size: Option<usize>,
    pub buffer_capacity: Option<usize>,
    pub target_interval: Option<u64>,
    pub agent_hidden: Option<usize>,
    pub mixer_embed: Option<usize>,
    pub hyper_hidden: Option<usize>,
    pub mixer: Option<String>,
    pub grad_clip: Option<f64>,
    pub double_q: Option<bool>,
    pub td_lambda: Option<f64>,
}

/// Default output root when neither the file nor a flag names one.
pub const DEFAULT_OUT: &str = "runs";

pub fn parse_mode(s: &str) -> Result<Mode> {
    Mode::parse(s).ok_or_else(|| {
        let names: Vec<&str> = Mode::ALL.iter().map(|m| m.name()).collect();
        Error::Config(format!("unknown mode `{s}`, expected one of {}", names.join(", ")))
    })
}

fn parse_mixer(s: &str) -> Result<MixerKind> {
    match s {
        "qmix" => Ok(MixerKind::Qmix),
        "vdn" => Ok(MixerKind::Vdn),
        _ => Err(Error::Config(format!("unknown mixer `{s}`, expected qmix or vdn"))),
    }
}

fn mixer_name(m: MixerKind) -> &'static str {
    match m {
        MixerKind::Qmix => "qmix",
        MixerKind::Vdn => "vdn",
    }
}

/// Parses `WxH`, e.g. `8x8`.
pub fn parse_grid(s: &str) -> Result<(u32, u32)> {
    let bad = || Error::Config(format!("grid must look like WxH, got `{s}`"));
    let (w, h) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    Ok((w.trim().parse().map_err(|_| bad())?, h.trim().parse().map_err(|_| bad())?))
}

/// Parses a TOML configuration text; `origin` names it in error messages.
pub fn parse_config_text(text: &str, origin: &Path) -> Result<ConfigFile> {
    toml::from_str(text).map_err(|e| {
        let line = e
            .span()
            .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
            .unwrap_or(0);
        Error::Parse {
            path: origin.to_path_buf(),
            line,
            message: e.message().to_string(),
        }
    })
}

macro_rules! set {
    ($dst:expr, $src:expr) => {
        if let Some(v) = $src {
            $dst = v;
        }
    };
}

/// Applies every value present in `file` onto `spec`.
pub fn apply_file(spec: &mut ExperimentSpec, file: &ConfigFile) -> Result<()> {
    let cfg = &mut spec.base;
    if let Some(run) = &file.run {
        if let Some(m) = &run.mode {
            cfg.mode = parse_mode(m)?;
            spec.runs = vec![(cfg.mode, cfg.seed)];
        }
        if let Some(s) = run.seed {
            cfg.seed = s;
            spec.runs = vec![(cfg.mode, s)];
        }
        set!(cfg.alpha, run.alpha);
        set!(cfg.phi, run.phi);
        set!(cfg.tau, run.tau);
        set!(cfg.trace_decay, run.trace_decay);
        set!(cfg.total_steps, run.total_steps);
        set!(cfg.reestimate_interval, run.reestimate_interval);
        set!(cfg.estimation_steps, run.estimation_steps);
        if run.efi_mask.is_some() {
            cfg.efi_mask = run.efi_mask.clone();
        }
        set!(cfg.epsilon_start, run.epsilon_start);
        set!(cfg.epsilon_end, run.epsilon_end);
        set!(cfg.epsilon_anneal_fraction, run.epsilon_anneal_fraction);
        set!(cfg.eval_interval, run.eval_interval);
        set!(cfg.eval_episodes, run.eval_episodes);
        set!(cfg.trace_interval, run.trace_interval);
        if let Some(n) = run.counterfactual_samples {
            cfg.counterfactual = if n == 0 {
                Counterfactual::Exact
            } else {
                Counterfactual::Sampled(n)
            };
        }
        set!(cfg.dynamics_hidden, run.dynamics_hidden);
        set!(cfg.dynamics_lr, run.dynamics_lr);
        set!(cfg.dynamics_batch, run.dynamics_batch);
        set!(cfg.dynamics_updates, run.dynamics_updates);
        set!(cfg.dynamics_warmup, run.dynamics_warmup);
        set!(cfg.entropy_epsilon, run.entropy_epsilon);
    }
    if let Some(env) = &file.env {
        let g = &mut cfg.env;
        set!(g.width, env.width);
        set!(g.height, env.height);
        set!(g.n_agents, env.n_agents);
        set!(g.n_boxes, env.n_boxes);
        set!(g.episode_limit, env.episode_limit);
        if let Some(w) = &env.goal_wall {
            g.goal_wall = Wall::parse(w)
                .ok_or_else(|| Error::Config(format!("unknown goal_wall `{w}`, expected north, south, east or west")))?;
        }
        if let Some(a) = &env.agent_start {
            g.agent_start = AgentStart::parse(a)
                .ok_or_else(|| Error::Config(format!("unknown agent_start `{a}`, expected anywhere or goal_side")))?;
        }
        set!(g.seed, env.seed);
    }
    if let Some(l) = &file.learner {
        let lc = &mut cfg.learner;
        set!(lc.gamma, l.gamma);
        set!(lc.lr, l.lr);
        set!(lc.batch_size, l.batch_size);
        set!(lc.buffer_capacity, l.buffer_capacity);
        set!(lc.target_interval, l.target_interval);
        set!(lc.agent_hidden, l.agent_hidden);
        set!(lc.mixer_embed, l.mixer_embed);
        set!(lc.hyper_hidden, l.hyper_hidden);
        if let Some(m) = &l.mixer {
            lc.mixer = parse_mixer(m)?;
        }
        set!(lc.grad_clip, l.grad_clip);
        set!(lc.double_q, l.double_q);
        set!(lc.td_lambda, l.td_lambda);
    }
    if let Some(x) = &file.experiment {
        let modes = match &x.modes {
            Some(names) => names.iter().map(|n| parse_mode(n)).collect::<Result<Vec<_>>>()?,
            None => vec![spec.base.mode],
        };
        let seeds = x.seeds.clone().unwrap_or_else(|| vec![spec.base.seed]);
        if x.modes.is_some() || x.seeds.is_some() {
            spec.runs = cross(&modes, &seeds);
        }
        set!(spec.out, x.out.clone());
    }
    Ok(())
}

fn cross(modes: &[Mode], seeds: &[u64]) -> Vec<(Mode, u64)> {
    modes.iter().flat_map(|&m| seeds.iter().map(move |&s| (m, s))).collect()
}

pub fn apply_overrides(spec: &mut ExperimentSpec, o: &Overrides) {
    let cfg = &mut spec.base;
    set!(cfg.alpha, o.alpha);
    set!(cfg.phi, o.phi);
    set!(cfg.tau, o.tau);
    set!(cfg.total_steps, o.steps);
    if let Some((w, h)) = o.grid {
        cfg.env.width = w;
        cfg.env.height = h;
    }
    set!(cfg.env.episode_limit, o.episode_limit);
    set!(spec.out, o.out.clone());
    if !o.modes.is_empty() || !o.seeds.is_empty() {
        let mut modes: Vec<Mode> = spec.runs.iter().map(|r| r.0).collect();
        let mut seeds: Vec<u64> = spec.runs.iter().map(|r| r.1).collect();
        dedup(&mut modes);
        dedup(&mut seeds);
        if !o.modes.is_empty() {
            modes = o.modes.clone();
        }
        if !o.seeds.is_empty() {
            seeds = o.seeds.clone();
        }
        spec.runs = cross(&modes, &seeds);
    }
    if let Some(&(m, s)) = spec.runs.first() {
        spec.base.mode = m;
        spec.base.seed = s;
    }
}

fn dedup<T: PartialEq + Copy>(v: &mut Vec<T>) {
    let mut seen = Vec::with_capacity(v.len());
    v.retain(|x| {
        if seen.contains(x) {
            false
        } else {
            seen.push(*x);
            true
        }
    });
}

/// Defaults, then the file at `path` if given, then `overrides`. Every
/// resulting run configuration is validated.
pub fn load_config(path: Option<&Path>, overrides: &Overrides) -> Result<ExperimentSpec> {
    let base = RunConfig::default();
    let mut spec = ExperimentSpec {
        runs: vec![(base.mode, base.seed)],
        base,
        out: PathBuf::from(DEFAULT_OUT),
    };
    if let Some(path) = path {
        let text = fs::read_to_string(path).map_err(Error::io(path))?;
        let file = parse_config_text(&text, path)?;
        apply_file(&mut spec, &file).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })?;
    }
    apply_overrides(&mut spec, overrides);
    if spec.runs.is_empty() {
        return Err(Error::Config("experiment has no runs".into()));
    }
    for &(mode, seed) in &spec.runs {
        spec.run_config(mode, seed).validate()?;
    }
    Ok(spec)
}

/// Every field of `cfg`, in the configuration file layout.
pub fn to_config_file(cfg: &RunConfig) -> ConfigFile {
    let samples = match cfg.counterfactual {
        Counterfactual::Exact => 0,
        Counterfactual::Sampled(n) => n,
    };
    ConfigFile {
        experiment: None,
        run: Some(RunSection {
            mode: Some(cfg.mode.name().to_string()),
            seed: Some(cfg.seed),
            alpha: Some(cfg.alpha),
            phi: Some(cfg.phi),
            tau: Some(cfg.tau),
            trace_decay: Some(cfg.trace_decay),
            total_steps: Some(cfg.total_steps),
            reestimate_interval: Some(cfg.reestimate_interval),
            estimation_steps: Some(cfg.estimation_steps),
            efi_mask: cfg.efi_mask.clone(),
            epsilon_start: Some(cfg.epsilon_start),
            epsilon_end: Some(cfg.epsilon_end),
            epsilon_anneal_fraction: Some(cfg.epsilon_anneal_fraction),
            eval_interval: Some(cfg.eval_interval),
            eval_episodes: Some(cfg.eval_episodes),
            trace_interval: Some(cfg.trace_interval),
            counterfactual_samples: Some(samples),
            dynamics_hidden: Some(cfg.dynamics_hidden),
            dynamics_lr: Some(cfg.dynamics_lr),
            dynamics_batch: Some(cfg.dynamics_batch),
            dynamics_updates: Some(cfg.dynamics_updates),
            dynamics_warmup: Some(cfg.dynamics_warmup),
            entropy_epsilon: Some(cfg.entropy_epsilon),
        }),
        env: Some(EnvSection {
            width: Some(cfg.env.width),
            height: Some(cfg.env.height),
            n_agents: Some(cfg.env.n_agents),
            n_boxes: Some(cfg.env.n_boxes),
            episode_limit: Some(cfg.env.episode_limit),
            goal_wall: Some(cfg.env.goal_wall.name().to_string()),
            agent_start: Some(cfg.env.agent_start.name().to_string()),
            seed: Some(cfg.env.seed),
        }),
        learner: Some(LearnerSection {
            gamma: Some(cfg.learner.gamma),
            lr: Some(cfg.learner.lr),
            batch_size: Some(cfg.learner.batch_size),
            buffer_capacity: Some(cfg.learner.buffer_capacity),
            target_interval: Some(cfg.learner.target_interval),
            agent_hidden: Some(cfg.learner.agent_hidden),
            mixer_embed: Some(cfg.learner.mixer_embed),
            hyper_hidden: Some(cfg.learner.hyper_hidden),
            mixer: Some(mixer_name(cfg.learner.mixer).to_string()),
            grad_clip: Some(cfg.learner.grad_clip),
            double_q: Some(cfg.learner.double_q),
            td_lambda: Some(cfg.learner.td_lambda),
        }),
    }
}

/// The full resolved configuration as TOML; loading it back reproduces `cfg`.
pub fn render_manifest(cfg: &RunConfig) -> Result<String> {
    toml::to_string(&to_config_file(cfg)).map_err(|e| Error::Config(format!("cannot serialize configuration: {e}")))
}

/// Reads a manifest written by [`render_manifest`].
pub fn parse_manifest(text: &str, origin: &Path) -> Result<RunConfig> {
    let file = parse_config_text(text, origin)?;
    let mut spec = ExperimentSpec {
        base: RunConfig::default(),
        runs: Vec::new(),
        out: PathBuf::new(),
    };
    // A manifest always names every field, so defaults never leak through.
    spec.base.efi_mask = None;
    apply_file(&mut spec, &file)?;
    Ok(spec.base)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn from_text(text: &str, o: &Overrides) -> Result<ExperimentSpec> {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        fs::write(&p, text).unwrap();
        load_config(Some(&p), o)
    }

    #[test]
    fn empty_file_gives_defaults() {
        let spec = from_text("", &Overrides::default()).unwrap();
        assert_eq!(spec.base, RunConfig::default());
        assert_eq!(spec.runs, vec![(Mode::Fim, 0)]);
        assert_eq!(spec.out, PathBuf::from(DEFAULT_OUT));
    }

    #[test]
    fn flag_beats_file() {
        let o = Overrides {
            alpha: Some(2.5),
            ..Overrides::default()
        };
        let spec = from_text("[run]\nalpha = 1.0\nphi = 0.2\n", &o).unwrap();
        assert_eq!(spec.base.alpha, 2.5);
        assert_eq!(spec.base.phi, 0.2);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = from_text("[run]\nalpa = 1.0\n", &Overrides::default()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("alpa"), "{msg}");
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err:?}");
    }

    #[test]
    fn invalid_value_rejected() {
        assert!(from_text("[run]\ntau = 0.0\n", &Overrides::default()).is_err());
        assert!(from_text("[run]\nmode = \"efi\"\n", &Overrides::default()).is_err());
        assert!(from_text("[env]\ngoal_wall = \"up\"\n", &Overrides::default()).is_err());
        assert!(from_text("[run]\nalpha = \"five\"\n", &Overrides::default()).is_err());
    }

    #[test]
    fn experiment_grid_and_flags() {
        let spec = from_text(
            "[experiment]\nmodes = [\"fim\", \"baseline\"]\nseeds = [1, 2]\nout = \"x\"\n",
            &Overrides::default(),
        )
        .unwrap();
        assert_eq!(spec.runs.len(), 4);
        assert_eq!(spec.out, PathBuf::from("x"));
        let o = Overrides {
            seeds: vec![7],
            grid: Some((10, 9)),
            ..Overrides::default()
        };
        let spec = from_text("[experiment]\nmodes = [\"fim\", \"baseline\"]\n", &o).unwrap();
        assert_eq!(spec.runs, vec![(Mode::Fim, 7), (Mode::Baseline, 7)]);
        assert_eq!((spec.base.env.width, spec.base.env.height), (10, 9));
    }

    #[test]
    fn manifest_round_trip() {
        let cfg = RunConfig {
            mode: Mode::Efi,
            efi_mask: Some(vec![4, 5]),
            alpha: 0.1 + 0.2,
            counterfactual: Counterfactual::Sampled(3),
            ..RunConfig::default()
        };
        let text = render_manifest(&cfg).unwrap();
        assert_eq!(parse_manifest(&text, Path::new("m")).unwrap(), cfg);
    }

    #[test]
    fn grid_flag_parsing() {
        assert_eq!(parse_grid("8x6").unwrap(), (8, 6));
        assert!(parse_grid("8").is_err());
        assert!(parse_grid("ax8").is_err());
    }
}
