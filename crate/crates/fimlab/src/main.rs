use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fimlab::config::{parse_grid, parse_mode};
use fimlab::{load_config, run_and_save, ExperimentSpec, Overrides, Result};
use fimlab_core::harness::{initial_profile, Mode};

#[derive(Parser)]
#[command(name = "fimlab", version, about = "Focused-influence exploration experiments on Push-2-Box")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a single run.
    Train(RunArgs),
    /// Train every (mode, seed) combination.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Runs trained concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Estimate dimension entropies and weights under the untrained policy.
    Profile(RunArgs),
    /// Re-export the reports of a saved run.
    Replay {
        run_dir: PathBuf,
        /// Destination; defaults to the run's reports directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Clone)]
struct RunArgs {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Training mode; repeat for sweeps.
    #[arg(long, value_parser = mode_arg)]
    mode: Vec<Mode>,
    /// Intrinsic reward scale.
    #[arg(long)]
    alpha: Option<f64>,
    /// Weight smoothing rate.
    #[arg(long)]
    phi: Option<f64>,
    /// Softmax temperature for dimension weights.
    #[arg(long)]
    tau: Option<f64>,
    /// Training environment steps.
    #[arg(long)]
    steps: Option<u64>,
    /// Seed; repeat for sweeps.
    #[arg(long)]
    seed: Vec<u64>,
    /// Output root directory.
    #[arg(long, env = "FIMLAB_OUT")]
    out: Option<PathBuf>,
    /// Grid size as WxH.
    #[arg(long, value_parser = grid_arg)]
    grid: Option<(u32, u32)>,
    /// Steps before an episode times out.
    #[arg(long)]
    episode_limit: Option<u32>,
}

fn mode_arg(s: &str) -> std::result::Result<Mode, String> {
    parse_mode(s).map_err(|e| e.to_string())
}

fn grid_arg(s: &str) -> std::result::Result<(u32, u32), String> {
    parse_grid(s).map_err(|e| e.to_string())
}

impl RunArgs {
    fn spec(&self) -> Result<ExperimentSpec> {
        let o = Overrides {
            modes: self.mode.clone(),
            seeds: self.seed.clone(),
            alpha: self.alpha,
            phi: self.phi,
            tau: self.tau,
            steps: self.steps,
            out: self.out.clone(),
            grid: self.grid,
            episode_limit: self.episode_limit,
        };
        load_config(self.config.as_deref(), &o)
    }
}

fn train_one(spec: &ExperimentSpec, mode: Mode, seed: u64) -> Result<f64> {
    let cfg = spec.run_config(mode, seed);
    let dir = spec.run_dir(mode, seed);
    let tag = format!("{mode} seed {seed}");
    let (record, _) = run_and_save(&cfg, &dir, |p| eprintln!("[{tag}] step {} success {}", p.step, p.success_rate))?;
    let rate = record.final_success_rate().unwrap_or(0.0);
    eprintln!("[{tag}] done: final success {rate}, written to {}", dir.display());
    Ok(rate)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(args) => {
            let spec = args.spec()?;
            if spec.runs.len() != 1 {
                return Err(fimlab::Error::Config(format!(
                    "train runs exactly one (mode, seed) pair, got {}; use sweep",
                    spec.runs.len()
                )));
            }
            let (mode, seed) = spec.runs[0];
            train_one(&spec, mode, seed)?;
        }
        Command::Sweep { run, jobs } => {
            let spec = run.spec()?;
            let results = sweep(&spec, jobs.max(1))?;
            let mut text = String::from("mode\tseed\tfinal_success_rate\n");
            for ((mode, seed), rate) in spec.runs.iter().zip(&results) {
                text.push_str(&format!("{mode}\t{seed}\t{rate}\n"));
            }
            fimlab::write_text(&spec.out.join("sweep.tsv"), &text)?;
            print!("{text}");
        }
        Command::Profile(args) => {
            let spec = args.spec()?;
            let (mode, seed) = spec.runs[0];
            let cfg = spec.run_config(mode, seed);
            let round = initial_profile(&cfg)?;
            let labels = fimlab_core::env::PushBox::new(cfg.env.clone())?.dimension_labels();
            let mut text = String::from("dim\tlabel\tscale\traw_entropy\tentropy\tweight\n");
            let p = &round.profile;
            for (k, label) in labels.iter().enumerate() {
                text.push_str(&format!(
                    "{k}\t{label}\t{}\t{}\t{}\t{}\n",
                    p.scale[k], p.raw_entropy[k], p.entropy[k], p.weight[k]
                ));
            }
            fimlab::write_text(&spec.out.join("profile.tsv"), &text)?;
            print!("{text}");
        }
        Command::Replay { run_dir, out } => {
            let out = out.unwrap_or_else(|| run_dir.join(fimlab::REPORTS_DIR));
            for p in fimlab::replay(&run_dir, &out)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

fn sweep(spec: &ExperimentSpec, jobs: usize) -> Result<Vec<f64>> {
    let runs = &spec.runs;
    let mut results: Vec<Option<Result<f64>>> = (0..runs.len()).map(|_| None).collect();
    for (chunk_runs, chunk_out) in runs.chunks(jobs).zip(results.chunks_mut(jobs)) {
        std::thread::scope(|s| {
            let handles: Vec<_> = chunk_runs
                .iter()
                .map(|&(mode, seed)| s.spawn(move || train_one(spec, mode, seed)))
                .collect();
            for (h, slot) in handles.into_iter().zip(chunk_out.iter_mut()) {
                *slot = Some(h.join().expect("training thread panicked"));
            }
        });
    }
    results.into_iter().map(|r| r.expect("every run finished")).collect()
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            ExitCode::FAILURE
        }
    }
}
