//! The `smfg` command line: argument parsing and the per-subcommand pipelines.
//!
//! Every command writes `resolved_config.json` first and `manifest.json` last.
//! The manifest lists every other file under the output directory with its
//! size and SHA-256, so its presence marks a completed run.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::adjoint::{adjoint_norm_report, h_rho_constant, lower_bound_check, representation_check, solve_adjoint};
use crate::config::{ProblemKind, RunConfig};
use crate::coupling::{g_eps, CouplingParams};
use crate::error::{MfgError, Result};
use crate::estimates::{
    stationary_report, stationary_schedule, time_report, time_schedule, EstimateEntry, EstimateReport,
};
use crate::gates::gate_report;
use crate::grid::{integrate, interpolate, laplacian, Point, ScalarField};
use crate::hamiltonian::{check_a2, Hamiltonian, HamiltonianModel};
use crate::io::{csv_table, read_field, read_path, write_field, write_field_csv, write_path};
use crate::mc::{empirical_cost, empirical_density, ergodic_cost, ks_distance, simulate};
use crate::ops::{grad, hamiltonian_values};
use crate::stationary::{
    epsilon_continuation_stationary, fp_residual, solve_stationary_eps, LimitReport, StationarySolution,
};
use crate::time_solver::{epsilon_continuation_time, TimeDependentSolution};

pub const LOG_ENV: &str = "MFG_LOG_LEVEL";

#[derive(Debug, Parser)]
#[command(name = "smfg", version, about = "Mean-field games with singular congestion-averse coupling on the torus")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Run configuration (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; created if missing.
    #[arg(long)]
    pub out: PathBuf,
    /// Worker threads for particle loops and density estimates.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct Source {
    /// Directory holding `u.fld`/`m.fld` from an earlier solve (defaults to --out).
    #[arg(long)]
    pub from: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Stationary solve at the last eps of the schedule (warm-started along it).
    Stationary(Common),
    /// Time-dependent solve at the last eps of the schedule (warm-started along it).
    Evolve(Common),
    /// Solve every eps of the schedule; one directory per stage plus the limit report.
    SweepEps(Common),
    /// Recompute the estimate report from dumped fields.
    Verify {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        source: Source,
    },
    /// Adjoint density from a mollified point mass and the representation check.
    Probe {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        source: Source,
        /// Point as `x` or `x,y`.
        #[arg(long, value_parser = parse_point)]
        x0: Option<Point>,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        moll_width: Option<f64>,
        #[arg(long, value_delimiter = ',')]
        nu: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        q: Option<Vec<f64>>,
    },
    /// Particle simulation under the optimal feedback.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        particles: Option<usize>,
        #[arg(long)]
        bandwidth: Option<f64>,
        /// Start point for the cost estimate, `x` or `x,y`; repeatable.
        #[arg(long, value_parser = parse_point)]
        x0: Vec<Point>,
        #[arg(long)]
        t: Option<f64>,
    },
    /// Assumption checks and which existence result the run falls under.
    Gates(Common),
}

fn parse_point(s: &str) -> std::result::Result<Point, String> {
    let parts: Vec<&str> = s.split(',').collect();
    let num = |t: &str| t.trim().parse::<f64>().map_err(|e| format!("bad coordinate {t:?}: {e}"));
    match parts.as_slice() {
        [x] => Ok([num(x)?, 0.0]),
        [x, y] => Ok([num(x)?, num(y)?]),
        _ => Err(format!("expected `x` or `x,y`, got {s:?}")),
    }
}

impl Command {
    pub fn common(&self) -> &Common {
        match self {
            Command::Stationary(c) | Command::Evolve(c) | Command::SweepEps(c) | Command::Gates(c) => c,
            Command::Verify { common, .. } | Command::Probe { common, .. } | Command::Simulate { common, .. } => common,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Command::Stationary(_) => "stationary",
            Command::Evolve(_) => "evolve",
            Command::SweepEps(_) => "sweep-eps",
            Command::Verify { .. } => "verify",
            Command::Probe { .. } => "probe",
            Command::Simulate { .. } => "simulate",
            Command::Gates(_) => "gates",
        }
    }
}

/// Reads the config, applies command-line overrides, validates and resolves.
pub fn load_config(cmd: &Command) -> Result<RunConfig> {
    let common = cmd.common();
    let text = std::fs::read_to_string(&common.config)?;
    let mut cfg: RunConfig = serde_json::from_str(&text)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    match cmd {
        Command::Probe {
            x0,
            tau,
            moll_width,
            nu,
            q,
            ..
        } => {
            if let Some(x) = x0 {
                cfg.probe.x0 = *x;
            }
            if let Some(t) = tau {
                cfg.probe.tau = *t;
            }
            if moll_width.is_some() {
                cfg.probe.moll_width = *moll_width;
            }
            if let Some(v) = nu {
                cfg.probe.nu = v.clone();
            }
            if let Some(v) = q {
                cfg.probe.q = v.clone();
            }
        }
        Command::Simulate {
            particles,
            bandwidth,
            x0,
            t,
            ..
        } => {
            if let Some(n) = particles {
                cfg.simulate.particles = *n;
            }
            if bandwidth.is_some() {
                cfg.simulate.bandwidth = *bandwidth;
            }
            if !x0.is_empty() {
                cfg.simulate.x0 = x0.clone();
            }
            if let Some(t) = t {
                cfg.simulate.t = *t;
            }
        }
        _ => {}
    }
    cfg.validate()?;
    Ok(cfg.resolved())
}

/// Runs one subcommand end to end.
pub fn run(cli: &Cli) -> Result<()> {
    let cmd = &cli.command;
    let cfg = load_config(cmd)?;
    let common = cmd.common();
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = common.jobs {
        if j == 0 {
            return Err(MfgError::validation("--jobs must be at least 1"));
        }
        pool = pool.num_threads(j);
    }
    let pool = pool
        .build()
        .map_err(|e| MfgError::Numeric(format!("thread pool: {e}")))?;
    let out = common.out.clone();
    std::fs::create_dir_all(&out)?;
    write_text(&out.join("resolved_config.json"), &cfg.to_json())?;
    pool.install(|| dispatch(cmd, &cfg, &out))?;
    write_manifest(&out, cmd.name())
}

fn dispatch(cmd: &Command, cfg: &RunConfig, out: &Path) -> Result<()> {
    let source = |s: &Source| s.from.clone().unwrap_or_else(|| out.to_path_buf());
    match cmd {
        Command::Stationary(_) => run_stationary(cfg, out),
        Command::Evolve(_) => run_evolve(cfg, out),
        Command::SweepEps(_) => run_sweep(cfg, out),
        Command::Verify { source: s, .. } => run_verify(cfg, &source(s), out),
        Command::Probe { source: s, .. } => run_probe(cfg, &source(s), out),
        Command::Simulate { source: s, .. } => run_simulate(cfg, &source(s), out),
        Command::Gates(_) => run_gates(cfg, out),
    }
}

// ---------------------------------------------------------------------------
// Artifact helpers
// ---------------------------------------------------------------------------

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text)?;
    Ok(())
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_text(path, &s)
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<Option<f64>>]) -> Result<()> {
    write_text(path, &csv_table(header, rows)?)
}

fn write_report(dir: &Path, stem: &str, report: &EstimateReport) -> Result<()> {
    write_json(&dir.join(format!("{stem}.json")), report)?;
    write_text(&dir.join(format!("{stem}.txt")), &report.to_text())
}

fn collect_files(root: &Path, dir: &Path, acc: &mut Vec<PathBuf>) -> Result<()> {
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_files(root, &path, acc)?;
        } else if path != root.join("manifest.json") {
            acc.push(path);
        }
    }
    Ok(())
}

/// Hashes every file under `dir` and writes `manifest.json` last.
pub fn write_manifest(dir: &Path, command: &str) -> Result<()> {
    let mut files = Vec::new();
    collect_files(dir, dir, &mut files)?;
    let mut entries: Vec<(String, u64, String)> = files
        .iter()
        .map(|p| {
            let bytes = std::fs::read(p)?;
            let rel = p
                .strip_prefix(dir)
                .expect("walked from dir")
                .components()
                .map(|c| c.as_os_str().to_string_lossy().into_owned())
                .collect::<Vec<_>>()
                .join("/");
            Ok((rel, bytes.len() as u64, hex::encode(Sha256::digest(&bytes))))
        })
        .collect::<Result<_>>()?;
    entries.sort();
    let list: Vec<_> = entries
        .iter()
        .map(|(p, n, h)| json!({"path": p, "bytes": n, "sha256": h}))
        .collect();
    write_json(
        &dir.join("manifest.json"),
        &json!({
            "schema_version": crate::config::SCHEMA_VERSION,
            "command": command,
            "files": list,
        }),
    )
}

fn model_and_coupling(cfg: &RunConfig) -> Result<(HamiltonianModel, CouplingParams)> {
    Ok((cfg.model()?, cfg.coupling()?))
}

// ---------------------------------------------------------------------------
// Solves
// ---------------------------------------------------------------------------

fn write_stationary(dir: &Path, sol: &StationarySolution, report: &EstimateReport) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_field(&dir.join("u.fld"), &sol.u)?;
    write_field(&dir.join("m.fld"), &sol.m)?;
    write_field_csv(&dir.join("u.csv"), &sol.u)?;
    write_field_csv(&dir.join("m.csv"), &sol.m)?;
    let rows: Vec<Vec<Option<f64>>> = sol
        .history
        .iter()
        .map(|r| {
            vec![
                Some(r.iter as f64),
                Some(r.update),
                Some(r.hjb_res),
                Some(r.fp_res),
                Some(r.hbar),
                Some(r.min_m),
            ]
        })
        .collect();
    write_csv(
        &dir.join("picard.csv"),
        &["iter", "update", "hjb_res", "fp_res", "hbar", "min_m"],
        &rows,
    )?;
    write_json(
        &dir.join("solution.json"),
        &json!({
            "kind": "stationary",
            "eps": sol.eps,
            "hbar": sol.hbar,
            "hjb_res": sol.hjb_res,
            "fp_res": sol.fp_res,
            "iterations": sol.iterations,
            "min_m": sol.m.min(),
        }),
    )?;
    write_report(dir, "report", report)
}

fn write_time(dir: &Path, sol: &TimeDependentSolution, report: &EstimateReport) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_path(&dir.join("u.fld"), &sol.u)?;
    write_path(&dir.join("m.fld"), &sol.m)?;
    let rows: Vec<Vec<Option<f64>>> = sol
        .history
        .iter()
        .map(|r| {
            vec![
                Some(r.iter as f64),
                Some(r.update_norm),
                Some(r.min_m),
                Some(r.max_u),
                Some(r.lipschitz_norm),
            ]
        })
        .collect();
    write_csv(
        &dir.join("picard.csv"),
        &["iter", "update", "min_m", "max_u", "lipschitz"],
        &rows,
    )?;
    let dt = sol.dt();
    let timeline: Vec<Vec<Option<f64>>> = (0..=sol.nt)
        .map(|k| {
            vec![
                Some(k as f64),
                Some(k as f64 * dt),
                Some(integrate(&sol.m[k])),
                Some(sol.m[k].min()),
                Some(sol.u[k].max()),
                Some(grad(&sol.u[k]).sup_norm()),
            ]
        })
        .collect();
    write_csv(
        &dir.join("timeline.csv"),
        &["k", "t", "mass", "min_m", "max_u", "lipschitz"],
        &timeline,
    )?;
    write_json(
        &dir.join("solution.json"),
        &json!({
            "kind": "time",
            "eps": sol.eps,
            "t_final": sol.t_final,
            "nt": sol.nt,
            "iterations": sol.iterations,
            "min_m": sol.min_m(),
            "max_u": sol.max_u(),
            "lipschitz": sol.lipschitz_norm(),
        }),
    )?;
    write_report(dir, "report", report)
}

fn stationary_sweep(cfg: &RunConfig) -> Result<(Vec<StationarySolution>, LimitReport)> {
    let (model, coupling) = model_and_coupling(cfg)?;
    let sweep = epsilon_continuation_stationary(&model, &coupling, &cfg.coupling.eps_schedule, cfg.grid()?, &cfg.solver)?;
    Ok((sweep.stages, sweep.limit))
}

fn time_sweep(cfg: &RunConfig) -> Result<(Vec<TimeDependentSolution>, LimitReport)> {
    let (model, coupling) = model_and_coupling(cfg)?;
    let sweep = epsilon_continuation_time(
        &model,
        &coupling,
        &cfg.coupling.eps_schedule,
        &cfg.terminal()?,
        &cfg.initial_density()?,
        cfg.data.t_final,
        cfg.nt(),
        &cfg.solver,
    )?;
    Ok((sweep.stages, sweep.limit))
}

fn run_stationary(cfg: &RunConfig, out: &Path) -> Result<()> {
    let (model, coupling) = model_and_coupling(cfg)?;
    let (stages, _) = stationary_sweep(cfg)?;
    let sol = stages.last().expect("schedule is non-empty");
    let report = stationary_report(sol, &model, &coupling)?;
    write_stationary(out, sol, &report)?;
    println!(
        "stationary: eps {:e}, hbar {:.10}, {} picard iterations, min m {:.6e}",
        sol.eps,
        sol.hbar,
        sol.iterations,
        sol.m.min()
    );
    Ok(())
}

fn run_evolve(cfg: &RunConfig, out: &Path) -> Result<()> {
    let (model, coupling) = model_and_coupling(cfg)?;
    let (stages, _) = time_sweep(cfg)?;
    let sol = stages.last().expect("schedule is non-empty");
    let report = time_report(sol, &model, &coupling, &cfg.verification.p_list)?;
    write_time(out, sol, &report)?;
    println!(
        "evolve: eps {:e}, {} picard iterations, max u {:.6e}, min m {:.6e}",
        sol.eps,
        sol.iterations,
        sol.max_u(),
        sol.min_m()
    );
    Ok(())
}

fn stage_dir(out: &Path, i: usize, eps: f64) -> PathBuf {
    out.join(format!("stage_{i:02}_eps_{eps:e}"))
}

fn write_limit(out: &Path, limit: &LimitReport) -> Result<()> {
    write_json(&out.join("limit.json"), limit)?;
    let rows: Vec<Vec<Option<f64>>> = (0..limit.eps.len())
        .map(|i| {
            vec![
                Some(limit.eps[i]),
                Some(limit.min_density[i]),
                Some(limit.lipschitz[i]),
                limit.hbar.get(i).copied(),
                Some(limit.iterations[i] as f64),
                i.checked_sub(1).and_then(|j| limit.cauchy_u.get(j).copied()),
                i.checked_sub(1).and_then(|j| limit.cauchy_m.get(j).copied()),
            ]
        })
        .collect();
    write_csv(
        &out.join("limit.csv"),
        &["eps", "min_density", "lipschitz", "hbar", "iterations", "cauchy_u", "cauchy_m"],
        &rows,
    )
}

fn run_sweep(cfg: &RunConfig, out: &Path) -> Result<()> {
    let (model, coupling) = model_and_coupling(cfg)?;
    let mut summary = EstimateReport::default();
    match cfg.problem {
        ProblemKind::Stationary => {
            let (stages, limit) = stationary_sweep(cfg)?;
            for (i, s) in stages.iter().enumerate() {
                let rep = stationary_report(s, &model, &coupling.with_eps(s.eps))?;
                write_stationary(&stage_dir(out, i, s.eps), s, &rep)?;
            }
            summary.schedule = stationary_schedule(&stages, &model, &coupling)?;
            write_limit(out, &limit)?;
        }
        ProblemKind::Time => {
            let (stages, limit) = time_sweep(cfg)?;
            for (i, s) in stages.iter().enumerate() {
                let rep = time_report(s, &model, &coupling.with_eps(s.eps), &cfg.verification.p_list)?;
                write_time(&stage_dir(out, i, s.eps), s, &rep)?;
            }
            let (rows, fitted) = time_schedule(&stages, &model, &coupling)?;
            summary.schedule = rows;
            summary.push(fitted);
            write_limit(out, &limit)?;
        }
    }
    write_report(out, "report", &summary)?;
    print!("{}", summary.to_text());
    Ok(())
}

// ---------------------------------------------------------------------------
// Reloading dumped solutions
// ---------------------------------------------------------------------------

fn require(dir: &Path, name: &str) -> Result<PathBuf> {
    let p = dir.join(name);
    if !p.is_file() {
        return Err(MfgError::validation(format!("missing dump {}", p.display())));
    }
    Ok(p)
}

/// Reads `u.fld`/`m.fld`; `H̄` is taken as the mean of `-Δu + H - g_ε(m)`.
pub fn load_stationary(cfg: &RunConfig, dir: &Path) -> Result<StationarySolution> {
    let (model, coupling) = model_and_coupling(cfg)?;
    let u = read_field(&require(dir, "u.fld")?)?;
    let m = read_field(&require(dir, "m.fld")?)?;
    let grid = cfg.grid()?;
    if *u.grid() != grid || *m.grid() != grid {
        return Err(MfgError::validation("dumped fields do not match the configured grid"));
    }
    let g = g_eps(&m, &coupling)?;
    let h = hamiltonian_values(&model, &grad(&u));
    let lap = laplacian(&u);
    let r = h.zip_map(&lap, |a, b| a - b).zip_map(&g, |a, b| a - b);
    let hbar = r.mean();
    let hjb_res = r.map(|v| (v - hbar).abs()).max();
    let fp_res = fp_residual(&u, &m, &model, cfg.solver.upwinding);
    Ok(StationarySolution {
        u,
        m,
        hbar,
        eps: coupling.eps,
        hjb_res,
        fp_res,
        iterations: 0,
        history: Vec::new(),
    })
}

pub fn load_time(cfg: &RunConfig, dir: &Path) -> Result<TimeDependentSolution> {
    let u = read_path(&require(dir, "u.fld")?)?;
    let m = read_path(&require(dir, "m.fld")?)?;
    let grid = cfg.grid()?;
    let nt = cfg.nt();
    if u.len() != nt + 1 || m.len() != nt + 1 {
        return Err(MfgError::validation(format!(
            "dumped paths have {} and {} slices, config implies {}",
            u.len(),
            m.len(),
            nt + 1
        )));
    }
    if u.iter().chain(&m).any(|f| *f.grid() != grid) {
        return Err(MfgError::validation("dumped fields do not match the configured grid"));
    }
    Ok(TimeDependentSolution {
        u,
        m,
        t_final: cfg.data.t_final,
        nt,
        ut: cfg.terminal()?,
        m0: cfg.initial_density()?,
        eps: cfg.coupling()?.eps,
        iterations: 0,
        history: Vec::new(),
    })
}

// ---------------------------------------------------------------------------
// Verification, probe, simulation, gates
// ---------------------------------------------------------------------------

fn run_verify(cfg: &RunConfig, from: &Path, out: &Path) -> Result<()> {
    let (model, coupling) = model_and_coupling(cfg)?;
    let report = match cfg.problem {
        ProblemKind::Stationary => {
            let sol = load_stationary(cfg, from)?;
            let mut rep = stationary_report(&sol, &model, &coupling)?;
            let tol = 10.0 * cfg.solver.picard_tol;
            rep.push(EstimateEntry::at_most("hjb_residual", sol.hjb_res, 0.0, tol.max(cfg.solver.linear_tol)));
            rep.push(EstimateEntry::at_most("fp_residual", sol.fp_res, 0.0, tol));
            if cfg.verification.multistart {
                // restart from a tilted density; agreement is evidence, not proof
                let grid = cfg.grid()?;
                let tilt = ScalarField::from_fn(grid, |x| {
                    1.0 + 0.3 * (2.0 * std::f64::consts::PI * (x[0] + x[1])).sin()
                });
                let start = StationarySolution {
                    u: ScalarField::zeros(grid),
                    m: tilt.map(|v| v / integrate(&tilt)),
                    hbar: 0.0,
                    eps: coupling.eps,
                    hjb_res: 0.0,
                    fp_res: 0.0,
                    iterations: 0,
                    history: Vec::new(),
                };
                let other = solve_stationary_eps(&model, &coupling, grid, &cfg.solver, Some(&start))?;
                rep.push(
                    EstimateEntry::finite("multistart_distance_m", other.m.sup_dist(&sol.m))
                        .with_note("restart from a tilted density"),
                );
                rep.push(EstimateEntry::finite("multistart_distance_hbar", (other.hbar - sol.hbar).abs()));
            }
            rep
        }
        ProblemKind::Time => {
            let sol = load_time(cfg, from)?;
            time_report(&sol, &model, &coupling, &cfg.verification.p_list)?
        }
    };
    write_report(out, "verify", &report)?;
    print!("{}", report.to_text());
    Ok(())
}

fn run_probe(cfg: &RunConfig, from: &Path, out: &Path) -> Result<()> {
    if cfg.problem != ProblemKind::Time {
        return Err(MfgError::validation("probe needs a time-dependent problem"));
    }
    let (model, coupling) = model_and_coupling(cfg)?;
    let sol = load_time(cfg, from)?;
    let p = &cfg.probe;
    let width = p.moll_width.expect("resolved");
    let adj = solve_adjoint(&sol, &model, p.x0, p.tau, width, cfg.solver.upwinding)?;
    let mut rep = EstimateReport::default();
    let (repr, e) = representation_check(&sol, &adj, &model, &coupling, cfg.verification.representation_c)?;
    rep.push(e);
    let a2 = check_a2(&model, &cfg.samples)?;
    let exponent = cfg.verification.p_list.iter().copied().find(|&q| q > 1.0).unwrap_or(2.0);
    rep.push(lower_bound_check(&sol, &adj, &coupling, a2.constants.c1, exponent)?);
    let (norms, entries) = adjoint_norm_report(&sol, &adj, &model, &p.nu, &p.q)?;
    rep.extend(entries);
    let c = h_rho_constant(&sol, &coupling, model.gamma(), norms.h_rho, exponent)?;
    rep.push(EstimateEntry::finite("h_rho_constant", c).with_note("fitted, not a proof constant"));
    rep.push(EstimateEntry::at_most("adjoint_mass_error", adj.max_mass_error(), 0.0, 1e-10));
    rep.push(EstimateEntry::at_least("adjoint_min", adj.min_value(), 0.0, 1e-12));
    write_path(&out.join("rho.fld"), &adj.rho)?;
    write_json(
        &out.join("probe.json"),
        &json!({
            "x0": adj.x0,
            "tau": adj.tau,
            "start_index": adj.start,
            "moll_width": adj.moll_width,
            "representation": repr,
            "norms": norms,
        }),
    )?;
    write_report(out, "probe_report", &rep)?;
    print!("{}", rep.to_text());
    Ok(())
}

fn run_simulate(cfg: &RunConfig, from: &Path, out: &Path) -> Result<()> {
    let (model, coupling) = model_and_coupling(cfg)?;
    let mc = &cfg.simulate;
    let mut rep = EstimateReport::default();
    match cfg.problem {
        ProblemKind::Stationary => {
            let sol = load_stationary(cfg, from)?;
            let est = ergodic_cost(&sol, &model, &coupling, cfg.seed, mc)?;
            let target = -sol.hbar;
            let h = sol.grid().h();
            let tol = 3.0 * est.std_err + 10.0 * (h * h + mc.ergodic_dt);
            rep.push(
                EstimateEntry::at_most("ergodic_cost_gap", (est.mean - target).abs(), 0.0, tol)
                    .with_note(format!("mean {:.6e}, target -hbar {:.6e}", est.mean, target)),
            );
            write_json(&out.join("simulate.json"), &json!({"ergodic": est, "target": target}))?;
        }
        ProblemKind::Time => {
            let sol = load_time(cfg, from)?;
            let grid = *sol.grid();
            let ens = simulate(&sol, &model, mc.particles, cfg.seed, mc)?;
            let bw = mc.bandwidth.expect("resolved");
            let dens = empirical_density(&ens, grid, bw)?;
            let dt = sol.dt();
            let mut rows = Vec::new();
            for (r, &k) in ens.times.iter().enumerate() {
                let l1: f64 = dens[r]
                    .values()
                    .iter()
                    .zip(sol.m[k].values())
                    .map(|(a, b)| (a - b).abs())
                    .sum::<f64>()
                    * grid.cell_volume();
                rows.push(vec![Some(k as f64), Some(k as f64 * dt), Some(l1), Some(integrate(&dens[r]))]);
            }
            write_csv(&out.join("density_l1.csv"), &["k", "t", "l1", "mass"], &rows)?;
            write_path(&out.join("empirical_m.fld"), &dens)?;
            if let Some(row) = rows.iter().min_by(|a, b| {
                let target = sol.nt as f64 / 2.0;
                (a[0].unwrap() - target).abs().total_cmp(&(b[0].unwrap() - target).abs())
            }) {
                rep.push(EstimateEntry::finite("density_l1_mid", row[2].unwrap()).with_note(format!("t = {}", row[1].unwrap())));
            }
            if grid.dim() == 1 {
                let xs: Vec<f64> = ens.positions[0].iter().map(|p| p[0]).collect();
                rep.push(EstimateEntry::finite("initial_ks", ks_distance(&xs, &sol.m0)));
            }
            rep.push(EstimateEntry::finite("clip_events", ens.clip_events as f64));
            let h = grid.h();
            let start = (mc.t / dt).round() as usize;
            let mut cost_rows = Vec::new();
            for x0 in &mc.x0 {
                let est = empirical_cost(&sol, &model, &coupling, *x0, mc.t, mc.particles, cfg.seed, mc)?;
                let u = interpolate(&grid, sol.u[start].values(), x0);
                let tol = 3.0 * est.std_err + 10.0 * (h * h + dt);
                let gap = (est.mean - u).abs();
                rep.push(EstimateEntry::at_most(
                    &format!("cost_gap[x0=({}, {})]", x0[0], x0[1]),
                    gap,
                    0.0,
                    tol,
                ));
                cost_rows.push(vec![
                    Some(x0[0]),
                    Some(x0[1]),
                    Some(mc.t),
                    Some(est.mean),
                    Some(est.std_err),
                    Some(u),
                    Some(gap),
                    Some(tol),
                ]);
            }
            write_csv(
                &out.join("cost.csv"),
                &["x", "y", "t", "mean", "std_err", "u", "gap", "tol"],
                &cost_rows,
            )?;
        }
    }
    write_report(out, "simulate_report", &rep)?;
    print!("{}", rep.to_text());
    Ok(())
}

fn run_gates(cfg: &RunConfig, out: &Path) -> Result<()> {
    let model = cfg.model()?;
    let rep = gate_report(&model, cfg.coupling.alpha, &cfg.samples, &cfg.verification.a3_deltas)?;
    write_json(&out.join("gates.json"), &rep)?;
    let text = rep.to_text();
    write_text(&out.join("gates.txt"), &text)?;
    print!("{text}");
    Ok(())
}

/// Logger from `MFG_LOG_LEVEL` (error, warn, info, debug); default `warn`.
pub fn init_logging() {
    let level = std::env::var(LOG_ENV).unwrap_or_else(|_| "warn".into());
    let level = match level.as_str() {
        "error" | "warn" | "info" | "debug" => level,
        other => {
            eprintln!("{LOG_ENV}={other:?} not recognised, using warn");
            "warn".into()
        }
    };
    let _ = env_logger::Builder::new()
        .parse_filters(&level)
        .format_timestamp(None)
        .try_init();
}

/// One-line machine-parsable error record.
pub fn error_line(e: &MfgError) -> String {
    format!("error kind={} code={} msg={:?}", e.kind(), e.exit_code(), e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn points_parse() {
        assert_eq!(parse_point("0.25").unwrap(), [0.25, 0.0]);
        assert_eq!(parse_point("0.25, 0.5").unwrap(), [0.25, 0.5]);
        assert!(parse_point("a").is_err());
        assert!(parse_point("1,2,3").is_err());
    }

    #[test]
    fn cli_shape() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
        let c = Cli::try_parse_from([
            "smfg", "probe", "--config", "c.json", "--out", "o", "--x0", "0.3", "--nu", "0.25,0.5",
        ])
        .unwrap();
        match c.command {
            Command::Probe { x0, nu, .. } => {
                assert_eq!(x0, Some([0.3, 0.0]));
                assert_eq!(nu, Some(vec![0.25, 0.5]));
            }
            _ => panic!("wrong subcommand"),
        }
    }

    #[test]
    fn error_line_is_single_line() {
        let e = MfgError::validation("bad\nthing");
        let l = error_line(&e);
        assert!(!l.contains('\n'));
        assert!(l.starts_with("error kind=validation code=2"));
    }
}
