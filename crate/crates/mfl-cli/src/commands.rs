//! Subcommand runners. Every run writes its artifacts plus the resolved
//! configuration and a replayable sidecar into the output directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use mfl_core::bench;
use mfl_core::cell::{
    default_t_max, ergodic_decay_check, poisson_residual, solve_cell_analytic_linear,
    solve_cell_mc, CellProblem, CellReport, DecayFitReport, InvariantSampler, PsiPointEstimate,
};
use mfl_core::fastproc::FastSimConfig;
use mfl_core::fbm::{fbm_covariance, sample_fbm, sample_fbm_davies_harte, DaviesHarteSampler};
use mfl_core::io::{self, TableRow};
use mfl_core::limit::EffectiveCoefficients;
use mfl_core::multiscale::{simulate_two_scale, TwoScaleConfig};
use mfl_core::stats::experiments::{
    averaging_rate_experiment, clt_experiment, tightness_diagnostic, two_scale_experiment,
};
use mfl_core::stats::Verdict;
use mfl_core::stream::{run_replicas, StreamKey};
use mfl_core::{Hurst, TimeGrid};

use crate::config::{ExperimentConfig, Sidecar};

/// Failure classes mapped to process exit codes by `main`.
#[derive(Debug)]
pub enum Failure {
    /// Exit 2: bad configuration or arguments.
    Validation(String),
    /// Exit 1: simulation / IO failure.
    Runtime(String),
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Validation(m) => write!(f, "validation error: {m}"),
            Failure::Runtime(m) => write!(f, "runtime error: {m}"),
        }
    }
}

pub type CmdResult = Result<i32, Failure>;

fn validation<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Validation(e.to_string())
}

fn runtime<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Runtime(e.to_string())
}

fn prepare_out(out: &Path) -> Result<(), Failure> {
    fs::create_dir_all(out).map_err(runtime)
}

fn write_sidecar(
    out: &Path,
    command: &str,
    cfg: &ExperimentConfig,
    checksums: Vec<(String, String)>,
) -> Result<(), Failure> {
    let sidecar = Sidecar { command: command.into(), config: cfg.clone(), driver_checksums: checksums };
    io::write_json(&out.join("sidecar.json"), &sidecar).map_err(runtime)?;
    io::write_json(&out.join("resolved_config.json"), cfg).map_err(runtime)
}

fn grid_of(cfg: &ExperimentConfig) -> Result<TimeGrid, Failure> {
    TimeGrid::new(cfg.horizon, cfg.steps).map_err(validation)
}

fn hurst_of(cfg: &ExperimentConfig) -> Result<Hurst, Failure> {
    Hurst::new(cfg.hurst).map_err(|_| {
        validation(format!(
            "hurst = {} rejected: generators require 1/2 < H < 1",
            cfg.hurst
        ))
    })
}

fn exit_from_verdicts(verdicts: &[Verdict]) -> i32 {
    if verdicts.iter().all(|v| v.pass) {
        0
    } else {
        3
    }
}

fn verdict_table(verdicts: &[Verdict]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<34} {:>14} {:>3} {:>14}  verdict", "stat", "value", "", "threshold");
    for v in verdicts {
        let _ = writeln!(
            s,
            "{:<34} {:>14.6e} {:>3} {:>14.6e}  {}",
            v.name,
            v.value,
            v.direction,
            v.threshold,
            if v.pass { "PASS" } else { "FAIL" }
        );
    }
    s
}

/// `fbm`: sample and serialize driver paths.
pub fn cmd_fbm(cfg: &ExperimentConfig, out: &Path) -> CmdResult {
    cfg.validate().map_err(validation)?;
    let hurst = hurst_of(cfg)?;
    let grid = grid_of(cfg)?;
    prepare_out(out)?;
    let key = StreamKey::root(cfg.seed).child("fbm-cmd");
    let mut checksums = Vec::new();
    for i in 0..cfg.paths {
        let path = sample_fbm(grid, hurst, cfg.dim, &key.index(i as u64)).map_err(runtime)?;
        let name = format!("fbm_path_{i:03}.csv");
        io::write_string(&out.join(&name), &io::path_to_csv(&path.path)).map_err(runtime)?;
        checksums.push((name, io::path_checksum(&path.path)));
    }
    write_sidecar(out, "fbm", cfg, checksums)?;
    Ok(0)
}

/// `fbm-verify`: empirical covariance of the circulant-embedding generator
/// against the closed form, entrywise within 4 standard errors.
pub fn cmd_fbm_verify(cfg: &ExperimentConfig, out: &Path) -> CmdResult {
    cfg.validate().map_err(validation)?;
    if cfg.paths < 2 {
        return Err(validation("fbm-verify needs at least 2 paths"));
    }
    let hurst = hurst_of(cfg)?;
    let grid = grid_of(cfg)?;
    prepare_out(out)?;
    let sampler = DaviesHarteSampler::new(grid, hurst, 1).map_err(runtime)?;
    let key = StreamKey::root(cfg.seed).child("fbm-verify");
    let npts = grid.len();

    // block-parallel accumulation with a worker-count-independent block size
    const BLOCK: usize = 100;
    let blocks = cfg.paths.div_ceil(BLOCK);
    let partials: Vec<Vec<f64>> = run_replicas(&key, blocks, |b, _| {
        let mut acc = vec![0.0; npts * npts];
        let lo = (b as usize) * BLOCK;
        let hi = (lo + BLOCK).min(cfg.paths);
        for r in lo..hi {
            let p = sampler.sample(&key.index(r as u64));
            for i in 0..npts {
                let vi = p.path.scalar(i);
                for j in i..npts {
                    acc[i * npts + j] += vi * p.path.scalar(j);
                }
            }
        }
        acc
    });
    let mut cov = vec![0.0; npts * npts];
    for part in partials {
        for (c, v) in cov.iter_mut().zip(part) {
            *c += v;
        }
    }
    let nf = cfg.paths as f64;
    let mut worst = 0.0f64;
    let mut worst_pair = (0usize, 0usize);
    for i in 1..npts {
        for j in i..npts {
            let est = cov[i * npts + j] / nf;
            let ti = grid.point(i);
            let tj = grid.point(j);
            let c = fbm_covariance(ti, tj, cfg.hurst).map_err(runtime)?;
            let cii = fbm_covariance(ti, ti, cfg.hurst).map_err(runtime)?;
            let cjj = fbm_covariance(tj, tj, cfg.hurst).map_err(runtime)?;
            let se = ((c * c + cii * cjj) / nf).sqrt();
            let dev = (est - c).abs() / se;
            if dev > worst {
                worst = dev;
                worst_pair = (i, j);
            }
        }
    }
    let verdicts = vec![Verdict::below("max_cov_deviation_in_se", worst, 4.0, cfg.paths)];
    #[derive(serde::Serialize)]
    struct VerifyReport<'a> {
        hurst: f64,
        grid_steps: usize,
        paths: usize,
        max_deviation_se: f64,
        worst_entry: (usize, usize),
        verdicts: &'a [Verdict],
    }
    let report = VerifyReport {
        hurst: cfg.hurst,
        grid_steps: grid.steps(),
        paths: cfg.paths,
        max_deviation_se: worst,
        worst_entry: worst_pair,
        verdicts: &verdicts,
    };
    io::write_json(&out.join("fbm_verify.json"), &report).map_err(runtime)?;
    io::write_string(&out.join("fbm_verify.txt"), &verdict_table(&verdicts)).map_err(runtime)?;
    write_sidecar(out, "fbm-verify", cfg, Vec::new())?;
    println!("{}", verdict_table(&verdicts));
    Ok(exit_from_verdicts(&verdicts))
}

/// `cell`: corrector and effective coefficients on the scenario's fast model.
pub fn cmd_cell(cfg: &ExperimentConfig, out: &Path) -> CmdResult {
    cfg.validate_statistical().map_err(validation)?;
    let bench = bench::scenario(&cfg.scenario).map_err(validation)?;
    prepare_out(out)?;
    let key = StreamKey::root(cfg.seed).child("cell");
    let model = bench.fast_model();
    let gamma = bench.gamma;
    let mut warnings = Vec::new();

    // mixing-rate fit feeds the truncation horizon
    let decay_grid = TimeGrid::new(3.0 / gamma, 60).map_err(runtime)?;
    let decay = ergodic_decay_check(
        &model,
        &[bench.x0],
        &|y: &[f64]| y[0],
        0.0,
        &[2.0],
        &decay_grid,
        (cfg.n_mc / 4).max(2000),
        &key.child("decay"),
    )
    .map_err(runtime)?;
    if decay.r_squared < 0.9 {
        warnings.push(format!("decay fit R² = {:.3} below 0.9", decay.r_squared));
    }

    // Monte Carlo corrector at probe points vs the closed form Ψ = c y / γ
    let c_load = bench.c;
    let raw = move |x: &[f64], y: &[f64], outv: &mut [f64]| {
        outv[0] = bench.a * x[0] + c_load * y[0]
    };
    let problem =
        CellProblem::with_exact_gbar(vec![bench.x0], &model, &raw, 1, vec![bench.a * bench.x0]);
    let t_max = default_t_max(&decay);
    let dt_micro = 0.005;
    let mut psi_estimates = Vec::new();
    let mut psi_worst_ratio = 0.0f64;
    for (j, yv) in [1.0, -0.5].into_iter().enumerate() {
        let est = solve_cell_mc(
            &problem,
            &[yv],
            t_max,
            cfg.n_mc,
            dt_micro,
            &decay,
            &key.child("psi").index(j as u64),
        )
        .map_err(runtime)?;
        let analytic = bench.corrector_slope() * yv;
        // reported uncertainty: Monte Carlo noise, truncation bias and the
        // left-point time-discretization allowance
        let uncertainty =
            4.0 * est.stderr[0] + est.bias_bound + dt_micro * gamma * analytic.abs();
        if analytic.abs() > 1e-9 {
            psi_worst_ratio =
                psi_worst_ratio.max((est.value[0] - analytic).abs() / uncertainty.max(1e-12));
        }
        psi_estimates.push(PsiPointEstimate {
            point: vec![yv],
            value: est.value,
            stderr: est.stderr,
            bias_bound: est.bias_bound,
        });
    }

    // analytic corrector residual under the finite-difference generator
    let corr = solve_cell_analytic_linear(
        &mfl_core::Mat::scalar(bench.c),
        &mfl_core::Mat::scalar(gamma),
    )
    .map_err(runtime)?;
    let probe: Vec<Vec<f64>> = vec![vec![-1.0], vec![0.3], vec![1.2]];
    let resid = poisson_residual(&corr, &problem, &probe, 1e-4).map_err(runtime)?;

    // effective coefficients
    let sampler = InvariantSampler::gaussian_for_ou(model.params()).map_err(runtime)?;
    let gbar_est = mfl_core::cell::effective_drift(
        &raw,
        1,
        &model,
        &[bench.x0],
        &sampler,
        cfg.n_mc.min(50_000),
        &key.child("gbar"),
    )
    .map_err(runtime)?;
    let slope = bench.corrector_slope();
    let dy = move |_y: &[f64], outv: &mut [f64]| outv[0] = slope;
    let fluct = mfl_core::cell::effective_fluctuation_diffusion(
        &dy,
        1,
        &model,
        &[bench.x0],
        &sampler,
        cfg.n_mc.min(50_000),
        &key.child("vbar"),
    )
    .map_err(runtime)?;

    let eff = bench.effective();
    let mut fbar = vec![0.0];
    eff.fbar(&[bench.x0], &mut fbar);

    let verdicts = vec![
        Verdict::below("psi_error_over_uncertainty", psi_worst_ratio, 1.0, cfg.n_mc),
        Verdict::below("poisson_residual_analytic", resid.max_abs, 1e-6, probe.len()),
        Verdict::below(
            "decay_rate_rel_error",
            (decay.rate - gamma).abs() / gamma,
            0.15,
            cfg.n_mc,
        ),
    ];
    let report = CellReport {
        x: vec![bench.x0],
        psi_estimates,
        gbar: gbar_est.value,
        gbar_stderr: gbar_est.stderr,
        fbar,
        v_bar: fluct.vbar.clone(),
        v_bar_sqrt: fluct.vbar_sqrt.clone(),
        decay_fit: DecayFitReport::from(decay),
        warnings,
    };
    io::write_json(&out.join("cell_report.json"), &report).map_err(runtime)?;
    io::write_json(&out.join("cell_verdicts.json"), &verdicts).map_err(runtime)?;
    io::write_string(&out.join("cell_report.txt"), &verdict_table(&verdicts))
        .map_err(runtime)?;
    write_sidecar(out, "cell", cfg, Vec::new())?;
    println!("{}", verdict_table(&verdicts));
    Ok(exit_from_verdicts(&verdicts))
}

/// `simulate`: one coupled trajectory with full provenance.
pub fn cmd_simulate(cfg: &ExperimentConfig, out: &Path) -> CmdResult {
    cfg.validate().map_err(validation)?;
    let bench = bench::scenario(&cfg.scenario).map_err(validation)?;
    let hurst = hurst_of(cfg)?;
    let grid = grid_of(cfg)?;
    prepare_out(out)?;
    let key = StreamKey::root(cfg.seed).child("simulate");
    let fbm = sample_fbm_davies_harte(grid, hurst, 1, &key.child("fbm")).map_err(runtime)?;
    let ts_cfg = TwoScaleConfig { eps: cfg.eps, delta: cfg.delta };
    let traj = bench
        .with_system(|system| {
            simulate_two_scale(
                system,
                &ts_cfg,
                &[bench.x0],
                &[bench.y0],
                &fbm,
                &key.child("w"),
                &FastSimConfig::default(),
            )
        })
        .map_err(runtime)?;
    io::write_string(&out.join("trajectory.csv"), &io::trajectory_to_csv(&traj))
        .map_err(runtime)?;
    io::write_string(&out.join("driver_fbm.csv"), &io::path_to_csv(&traj.fbm.path))
        .map_err(runtime)?;
    let checksums = vec![
        ("driver_fbm".to_string(), io::path_checksum(&traj.fbm.path)),
        ("noise_record".to_string(), io::path_checksum(&traj.noise_record)),
    ];
    write_sidecar(out, "simulate", cfg, checksums)?;
    Ok(0)
}

/// `rate`: averaging-rate experiment.
pub fn cmd_rate(cfg: &ExperimentConfig, out: &Path) -> CmdResult {
    cfg.validate_statistical().map_err(validation)?;
    let bench = bench::scenario(&cfg.scenario).map_err(validation)?;
    let hurst = hurst_of(cfg)?;
    let grid = grid_of(cfg)?;
    prepare_out(out)?;
    let key = StreamKey::root(cfg.seed).child("rate-cmd");
    let report =
        averaging_rate_experiment(&bench, hurst, &cfg.eps_schedule, cfg.n_mc, &grid, &key)
            .map_err(runtime)?;
    let rows: Vec<TableRow> = report
        .rows
        .iter()
        .map(|r| TableRow {
            eps: Some(r.eps),
            delta: None,
            stat: "sup_error".into(),
            value: r.error,
            stderr: Some(r.stderr),
            threshold: None,
            verdict: None,
        })
        .collect();
    io::write_json(&out.join("rate_report.json"), &report).map_err(runtime)?;
    io::write_string(&out.join("rate_table.csv"), &io::table_to_csv(&rows)).map_err(runtime)?;
    io::write_string(&out.join("rate_report.txt"), &verdict_table(&report.verdicts))
        .map_err(runtime)?;
    write_sidecar(out, "rate", cfg, Vec::new())?;
    println!("{}", verdict_table(&report.verdicts));
    Ok(if report.pass { 0 } else { 3 })
}

/// `clt`: weak-convergence experiment plus the tightness diagnostic.
pub fn cmd_clt(cfg: &ExperimentConfig, out: &Path) -> CmdResult {
    cfg.validate_statistical().map_err(validation)?;
    let bench = bench::scenario(&cfg.scenario).map_err(validation)?;
    let hurst = hurst_of(cfg)?;
    let grid = grid_of(cfg)?;
    prepare_out(out)?;
    let key = StreamKey::root(cfg.seed).child("clt-cmd");
    let report = clt_experiment(&bench, hurst, &cfg.eps_schedule, cfg.n_mc, &grid, &key)
        .map_err(runtime)?;
    let tightness = tightness_diagnostic(
        &bench,
        hurst,
        &cfg.eps_schedule,
        cfg.alpha,
        cfg.p_order,
        (cfg.n_mc / 10).max(20),
        &grid,
        3.0,
        &key.child("tightness"),
    )
    .map_err(runtime)?;
    let mut rows: Vec<TableRow> = Vec::new();
    for r in &report.rows {
        rows.push(TableRow {
            eps: Some(r.eps),
            delta: None,
            stat: "ks".into(),
            value: r.ks_vs_analytic.unwrap_or(r.ks_vs_limit),
            stderr: None,
            threshold: Some(0.05),
            verdict: None,
        });
        rows.push(TableRow {
            eps: Some(r.eps),
            delta: None,
            stat: "coupled_residual_var".into(),
            value: r.coupled_residual_var,
            stderr: None,
            threshold: None,
            verdict: None,
        });
        rows.push(TableRow {
            eps: Some(r.eps),
            delta: None,
            stat: "z_variance".into(),
            value: r.z_moments.variance,
            stderr: Some(r.z_moments.stderr),
            threshold: None,
            verdict: None,
        });
    }
    let mut verdicts = report.verdicts.clone();
    verdicts.push(Verdict::below(
        "tightness_ratio",
        tightness.max_min_ratio,
        tightness.threshold,
        tightness.replicas,
    ));
    io::write_json(&out.join("clt_report.json"), &report).map_err(runtime)?;
    io::write_json(&out.join("tightness_report.json"), &tightness).map_err(runtime)?;
    io::write_string(&out.join("clt_table.csv"), &io::table_to_csv(&rows)).map_err(runtime)?;
    io::write_string(&out.join("clt_report.txt"), &verdict_table(&verdicts)).map_err(runtime)?;
    write_sidecar(out, "clt", cfg, Vec::new())?;
    println!("{}", verdict_table(&verdicts));
    Ok(exit_from_verdicts(&verdicts))
}

/// `two-scale`: nested conditional-variance experiment.
pub fn cmd_two_scale(cfg: &ExperimentConfig, out: &Path) -> CmdResult {
    cfg.validate_statistical().map_err(validation)?;
    let mut scenario_name = cfg.scenario.clone();
    if scenario_name == "case1-ou" {
        scenario_name = "two-scale-linear".into();
    }
    let bench = bench::scenario(&scenario_name).map_err(validation)?;
    let hurst = hurst_of(cfg)?;
    let grid = grid_of(cfg)?;
    prepare_out(out)?;
    let key = StreamKey::root(cfg.seed).child("two-scale-cmd");
    let report = two_scale_experiment(
        &bench,
        hurst,
        cfg.eps,
        &cfg.scale_ratios,
        cfg.n_outer,
        cfg.n_inner,
        &grid,
        &key,
    )
    .map_err(runtime)?;
    let rows: Vec<TableRow> = report
        .rows
        .iter()
        .map(|r| TableRow {
            eps: Some(r.eps),
            delta: Some(r.delta),
            stat: "cond_var".into(),
            value: r.cond_var,
            stderr: Some(r.cond_var_stderr),
            threshold: None,
            verdict: None,
        })
        .collect();
    io::write_json(&out.join("two_scale_report.json"), &report).map_err(runtime)?;
    io::write_string(&out.join("two_scale_table.csv"), &io::table_to_csv(&rows))
        .map_err(runtime)?;
    io::write_string(&out.join("two_scale_report.txt"), &verdict_table(&report.verdicts))
        .map_err(runtime)?;
    write_sidecar(out, "two-scale", cfg, Vec::new())?;
    println!("{}", verdict_table(&report.verdicts));
    match report.pass {
        Some(true) => Ok(0),
        Some(false) => Ok(3),
        None => Err(runtime("verdict refused: inner-sample noise dominates the signal")),
    }
}

/// `replay`: re-run a recorded command from its sidecar into a fresh
/// directory; artifacts reproduce byte-identically.
pub fn cmd_replay(sidecar_path: &Path, out: &Path) -> CmdResult {
    let raw = fs::read_to_string(sidecar_path)
        .with_context(|| format!("cannot read sidecar {}", sidecar_path.display()))
        .map_err(validation)?;
    let sidecar: Sidecar =
        serde_json::from_str(&raw).map_err(|e| validation(anyhow!("invalid sidecar: {e}")))?;
    dispatch(&sidecar.command, &sidecar.config, out)
}

pub fn dispatch(command: &str, cfg: &ExperimentConfig, out: &Path) -> CmdResult {
    match command {
        "fbm" => cmd_fbm(cfg, out),
        "fbm-verify" => cmd_fbm_verify(cfg, out),
        "cell" => cmd_cell(cfg, out),
        "simulate" => cmd_simulate(cfg, out),
        "rate" => cmd_rate(cfg, out),
        "clt" => cmd_clt(cfg, out),
        "two-scale" => cmd_two_scale(cfg, out),
        other => Err(validation(format!("unknown command '{other}' in sidecar"))),
    }
}

pub fn out_dir(base: &Option<PathBuf>) -> PathBuf {
    base.clone().unwrap_or_else(|| PathBuf::from("mfl-out"))
}
