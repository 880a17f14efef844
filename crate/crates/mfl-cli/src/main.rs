//! `mfl` — experiment runner for the slow-fast fBM laboratory.
//!
//! Exit codes: 0 success, 1 runtime/simulation failure, 2 validation
//! failure, 3 verdict FAIL (CI can gate on acceptance experiments).

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::{CmdResult, Failure};
use config::{default_seed, ExperimentConfig};

#[derive(Parser)]
#[command(name = "mfl", version, about = "Slow-fast systems driven by fractional Brownian motion: simulation and weak-convergence experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

/// Options shared by every experiment command. Flags override config-file
/// values, which override defaults; the seed also falls back to `MFL_SEED`.
#[derive(Args, Debug, Clone)]
struct Common {
    /// JSON configuration file (unknown keys rejected).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed (default: MFL_SEED or 0).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Worker threads (0 = library default).
    #[arg(long)]
    jobs: Option<usize>,
    /// Benchmark scenario id.
    #[arg(long)]
    scenario: Option<String>,
    /// Hurst parameter.
    #[arg(long = "h")]
    hurst: Option<f64>,
    /// Grid step count.
    #[arg(long)]
    n: Option<usize>,
    /// Time horizon T.
    #[arg(long)]
    horizon: Option<f64>,
    /// Monte Carlo replicas.
    #[arg(long = "mc")]
    n_mc: Option<usize>,
    /// Scale parameter ε.
    #[arg(long)]
    eps: Option<f64>,
    /// Fast scale δ (two-scale regime).
    #[arg(long)]
    delta: Option<f64>,
    /// ε schedule (comma-separated).
    #[arg(long, value_delimiter = ',')]
    eps_schedule: Option<Vec<f64>>,
    /// δ/ε ratios for the two-scale experiment (comma-separated).
    #[arg(long, value_delimiter = ',')]
    scale_ratios: Option<Vec<f64>>,
    /// Outer (fBM) replicas for nested experiments.
    #[arg(long)]
    outer: Option<usize>,
    /// Inner (Wiener) replicas for nested experiments.
    #[arg(long)]
    inner: Option<usize>,
    /// Number of sample paths (path-generation commands).
    #[arg(long)]
    paths: Option<usize>,
    /// Driver dimension.
    #[arg(long)]
    dim: Option<usize>,
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig, Failure> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_file(path)
                .map_err(|e| Failure::Validation(format!("{e:#}")))?,
            None => ExperimentConfig::default(),
        };
        if let Some(v) = self.seed {
            cfg.seed = v;
        } else if self.config.is_none() {
            cfg.seed = default_seed();
        }
        if let Some(v) = self.jobs {
            cfg.jobs = v;
        }
        if let Some(v) = &self.scenario {
            cfg.scenario = v.clone();
        }
        if let Some(v) = self.hurst {
            cfg.hurst = v;
        }
        if let Some(v) = self.n {
            cfg.steps = v;
        }
        if let Some(v) = self.horizon {
            cfg.horizon = v;
        }
        if let Some(v) = self.n_mc {
            cfg.n_mc = v;
        }
        if let Some(v) = self.eps {
            cfg.eps = v;
        }
        if let Some(v) = self.delta {
            cfg.delta = Some(v);
        }
        if let Some(v) = &self.eps_schedule {
            cfg.eps_schedule = v.clone();
        }
        if let Some(v) = &self.scale_ratios {
            cfg.scale_ratios = v.clone();
        }
        if let Some(v) = self.outer {
            cfg.n_outer = v;
        }
        if let Some(v) = self.inner {
            cfg.n_inner = v;
        }
        if let Some(v) = self.paths {
            cfg.paths = v;
        }
        if let Some(v) = self.dim {
            cfg.dim = v;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Sample fBM driver paths to CSV.
    Fbm(Common),
    /// Verify the generator law against the covariance formula.
    FbmVerify(Common),
    /// Solve the cell problem and report effective coefficients.
    Cell(Common),
    /// Simulate one coupled slow-fast trajectory.
    Simulate(Common),
    /// Averaging-rate experiment.
    Rate(Common),
    /// Weak-convergence (fluctuation) experiment.
    Clt(Common),
    /// Two-scale conditional-variance experiment.
    TwoScale(Common),
    /// Reproduce a recorded run from its sidecar.
    Replay {
        /// Sidecar JSON written by a previous run.
        #[arg(long)]
        sidecar: PathBuf,
        /// Output directory for the reproduced artifacts.
        #[arg(long, short)]
        out: PathBuf,
        /// Worker threads (0 = library default).
        #[arg(long)]
        jobs: Option<usize>,
    },
}

fn run_in_pool(jobs: usize, f: impl FnOnce() -> CmdResult + Send) -> CmdResult {
    if jobs == 0 {
        f()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Failure::Runtime(e.to_string()))?;
        pool.install(f)
    }
}

fn run(cli: Cli) -> CmdResult {
    match cli.cmd {
        Cmd::Fbm(c) => {
            let cfg = c.resolve()?;
            run_in_pool(cfg.jobs, || commands::cmd_fbm(&cfg, &commands::out_dir(&c.out)))
        }
        Cmd::FbmVerify(c) => {
            let mut cfg = c.resolve()?;
            if c.paths.is_none() {
                cfg.paths = 10_000;
            }
            if c.n.is_none() {
                cfg.steps = 64;
            }
            run_in_pool(cfg.jobs, || commands::cmd_fbm_verify(&cfg, &commands::out_dir(&c.out)))
        }
        Cmd::Cell(c) => {
            let mut cfg = c.resolve()?;
            if c.n_mc.is_none() {
                cfg.n_mc = 20_000;
            }
            run_in_pool(cfg.jobs, || commands::cmd_cell(&cfg, &commands::out_dir(&c.out)))
        }
        Cmd::Simulate(c) => {
            let cfg = c.resolve()?;
            run_in_pool(cfg.jobs, || commands::cmd_simulate(&cfg, &commands::out_dir(&c.out)))
        }
        Cmd::Rate(c) => {
            let mut cfg = c.resolve()?;
            if c.n_mc.is_none() {
                cfg.n_mc = 100;
            }
            run_in_pool(cfg.jobs, || commands::cmd_rate(&cfg, &commands::out_dir(&c.out)))
        }
        Cmd::Clt(c) => {
            let cfg = c.resolve()?;
            run_in_pool(cfg.jobs, || commands::cmd_clt(&cfg, &commands::out_dir(&c.out)))
        }
        Cmd::TwoScale(c) => {
            let cfg = c.resolve()?;
            run_in_pool(cfg.jobs, || commands::cmd_two_scale(&cfg, &commands::out_dir(&c.out)))
        }
        Cmd::Replay { sidecar, out, jobs } => {
            run_in_pool(jobs.unwrap_or(0), || commands::cmd_replay(&sidecar, &out))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(Failure::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
