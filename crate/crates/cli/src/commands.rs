//! One function per subcommand. Each validates the whole configuration,
//! runs, writes its files and returns a threshold error only after the
//! files are on disk.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use kwc_core::adjoint::{conjugacy_check, grad_check, random_direction, GradCheckRow};
use kwc_core::linear::{solve_p, Sextuplet};
use kwc_core::optimizer::{
    eps_continuation, optimality_residuals, optimize, OptimalityResiduals, OptimizeReport,
};
use kwc_core::state::{
    energy_audit, solve_state_minmove, solve_state_with, MinMoveReport, Scheme, StateStepReport,
};
use kwc_core::{ControlPair, FieldPair, Grid};

use crate::config::{BaseControl, RunConfig};
use crate::error::{CliError, CliResult};
use crate::output::{num, OutDir};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    SolveState(Scheme),
    LinearSolve,
    GradCheck,
    Conjugacy,
    Optimize,
    Continuation,
    Residuals,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::SolveState(_) => "solve-state",
            Command::LinearSolve => "linear-solve",
            Command::GradCheck => "grad-check",
            Command::Conjugacy => "conjugacy",
            Command::Optimize => "optimize",
            Command::Continuation => "continuation",
            Command::Residuals => "residuals",
        }
    }
}

#[derive(Serialize)]
struct Manifest<'a, R: Serialize> {
    command: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    scheme: Option<Scheme>,
    config: &'a RunConfig,
    files: Vec<String>,
    reports: R,
}

fn finish<R: Serialize>(
    out: &mut OutDir,
    cmd: Command,
    cfg: &RunConfig,
    reports: R,
) -> CliResult<()> {
    let mut files = out.written().to_vec();
    files.push("manifest.json".into());
    let scheme = match cmd {
        Command::SolveState(s) => Some(s),
        _ => None,
    };
    let manifest = Manifest {
        command: cmd.name(),
        scheme,
        config: cfg,
        files,
        reports,
    };
    out.json("manifest.json", &manifest)
}

/// Runs `cmd` with `cfg` and writes into `cfg.output.directory`.
pub fn execute(cmd: Command, cfg: &RunConfig) -> CliResult<()> {
    let grid = cfg.validate()?;
    let mut out = OutDir::create(&cfg.output.directory)?;
    match cmd {
        Command::SolveState(scheme) => solve_state_cmd(&mut out, cmd, cfg, &grid, scheme),
        Command::LinearSolve => linear_solve_cmd(&mut out, cmd, cfg, &grid),
        Command::GradCheck => grad_check_cmd(&mut out, cmd, cfg, &grid),
        Command::Conjugacy => conjugacy_cmd(&mut out, cmd, cfg, &grid),
        Command::Optimize => optimize_cmd(&mut out, cmd, cfg, &grid),
        Command::Continuation => continuation_cmd(&mut out, cmd, cfg, &grid),
        Command::Residuals => residuals_cmd(&mut out, cmd, cfg, &grid),
    }
}

#[derive(Serialize)]
struct StateReports {
    steps: Vec<StateStepReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    minmove: Option<MinMoveReport>,
}

fn solve_state_cmd(
    out: &mut OutDir,
    cmd: Command,
    cfg: &RunConfig,
    grid: &Grid,
    scheme: Scheme,
) -> CliResult<()> {
    let params = cfg.params(grid)?;
    let control = ControlPair::zeros(grid);
    let (traj, steps, minmove) = match scheme {
        Scheme::Minmove => {
            let (traj, rep) = solve_state_minmove(&params, grid, &control, &cfg.solver)?;
            let steps = energy_audit(&params, grid, &control, &traj, true);
            (traj, steps, Some(rep))
        }
        _ => {
            let (traj, steps) = solve_state_with(&params, grid, &control, &cfg.solver, scheme)?;
            (traj, steps, None)
        }
    };
    write_snapshots(out, grid, &traj, cfg.output.snapshot_stride)?;
    out.csv(
        "energy_audit.csv",
        &["step", "t", "phi", "ghat", "total", "dissipation_residual"],
        steps.iter().map(|r| {
            vec![
                r.step_index.to_string(),
                num(r.t),
                num(r.energy_phi),
                num(r.energy_ghat),
                num(r.energy_total),
                num(r.dissipation_residual),
            ]
        }),
    )?;
    finish(out, cmd, cfg, StateReports { steps, minmove })
}

fn write_snapshots(
    out: &mut OutDir,
    grid: &Grid,
    traj: &FieldPair,
    stride: usize,
) -> CliResult<()> {
    for k in (0..grid.levels()).filter(|&k| k % stride == 0 || k == grid.n_time()) {
        let eta = traj.first.row(k);
        let theta = traj.second.row(k);
        out.csv(
            &format!("snapshots/snapshot_{k:06}.csv"),
            &["x", "eta", "theta"],
            (0..grid.nodes()).map(|j| vec![num(grid.x(j)), num(eta[j]), num(theta[j])]),
        )?;
    }
    Ok(())
}

#[derive(Serialize)]
struct LinearReport {
    mode: u32,
    nu: f64,
    rate_p: f64,
    rate_z: f64,
    max_error_p: f64,
    max_error_z: f64,
}

/// Amplitude of `w` along `phi` in the lumped inner product.
fn amplitude(grid: &Grid, w: &[f64], phi: &[f64]) -> f64 {
    grid.inner(w, phi) / grid.inner(phi, phi)
}

fn linear_solve_cmd(out: &mut OutDir, cmd: Command, cfg: &RunConfig, grid: &Grid) -> CliResult<()> {
    let m = cfg.linear.mode as f64;
    let nu = cfg.problem.nu;
    let n = grid.n_space();
    let cos: Vec<f64> = (0..grid.nodes())
        .map(|j| (m * PI * grid.x(j)).cos())
        .collect();
    let mut sin: Vec<f64> = (0..grid.nodes())
        .map(|j| (m * PI * grid.x(j)).sin())
        .collect();
    sin[0] = 0.0;
    sin[n] = 0.0;
    let sext = Sextuplet::identity(grid, nu);
    let sol = solve_p(&sext, grid, &cos, &sin, &FieldPair::zeros(grid))?;
    let rate_p = m * m * PI * PI;
    let rate_z = (1.0 + nu * nu) * m * m * PI * PI;
    let mut rows = Vec::with_capacity(grid.levels());
    let (mut err_p, mut err_z) = (0.0_f64, 0.0_f64);
    for k in 0..grid.levels() {
        let t = grid.t(k);
        let (ap, az) = (
            amplitude(grid, sol.first.row(k), &cos),
            amplitude(grid, sol.second.row(k), &sin),
        );
        let (ep, ez) = ((-rate_p * t).exp(), (-rate_z * t).exp());
        err_p = err_p.max((ap - ep).abs());
        err_z = err_z.max((az - ez).abs());
        rows.push(vec![
            k.to_string(),
            num(t),
            num(ap),
            num(ep),
            num(az),
            num(ez),
        ]);
    }
    out.csv(
        "linear_decay.csv",
        &[
            "step",
            "t",
            "p_amplitude",
            "p_exact",
            "z_amplitude",
            "z_exact",
        ],
        rows,
    )?;
    let report = LinearReport {
        mode: cfg.linear.mode,
        nu,
        rate_p,
        rate_z,
        max_error_p: err_p,
        max_error_z: err_z,
    };
    out.json("report.json", &report)?;
    finish(out, cmd, cfg, &report)
}

#[derive(Serialize)]
struct GradCheckReport {
    base: BaseControl,
    threshold: f64,
    passed: bool,
    rows: Vec<GradCheckRow>,
}

fn grad_check_cmd(out: &mut OutDir, cmd: Command, cfg: &RunConfig, grid: &Grid) -> CliResult<()> {
    let params = cfg.params(grid)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let base = match cfg.check.base {
        BaseControl::Zero => ControlPair::zeros(grid),
        BaseControl::Random => random_direction(grid, &mut rng),
    };
    let dir = random_direction(grid, &mut rng);
    let rows = grad_check(&params, grid, &base, &dir, &cfg.check.deltas, &cfg.solver)?;
    out.csv(
        "gradcheck.csv",
        &["delta", "fd_value", "adjoint_value", "rel_error"],
        rows.iter().map(|r| {
            vec![
                num(r.delta),
                num(r.fd_value),
                num(r.adjoint_value),
                num(r.rel_error),
            ]
        }),
    )?;
    let threshold = cfg.check.grad_threshold;
    let worst = rows.iter().map(|r| r.rel_error).fold(0.0_f64, f64::max);
    let report = GradCheckReport {
        base: cfg.check.base,
        threshold,
        passed: worst <= threshold,
        rows,
    };
    out.json("report.json", &report)?;
    finish(out, cmd, cfg, &report)?;
    if !report.passed {
        return Err(CliError::Threshold(format!(
            "largest gradient-check relative error {worst:e} exceeds {threshold:e}"
        )));
    }
    Ok(())
}

#[derive(Serialize)]
struct ConjugacyReport {
    trials: usize,
    seed: u64,
    max_relative_defect: f64,
    threshold: f64,
    passed: bool,
}

fn conjugacy_cmd(out: &mut OutDir, cmd: Command, cfg: &RunConfig, grid: &Grid) -> CliResult<()> {
    let params = cfg.params(grid)?;
    let state = kwc_core::state::solve_state_implicit(
        &params,
        grid,
        &ControlPair::zeros(grid),
        &cfg.solver,
    )?;
    let defect = conjugacy_check(&params, grid, &state, cfg.check.trials, cfg.seed)?;
    let threshold = cfg.check.conjugacy_threshold;
    let report = ConjugacyReport {
        trials: cfg.check.trials,
        seed: cfg.seed,
        max_relative_defect: defect,
        threshold,
        passed: defect <= threshold,
    };
    out.json("report.json", &report)?;
    finish(out, cmd, cfg, &report)?;
    if !report.passed {
        return Err(CliError::Threshold(format!(
            "conjugacy defect {defect:e} exceeds {threshold:e}"
        )));
    }
    Ok(())
}

fn write_control(out: &mut OutDir, grid: &Grid, c: &ControlPair) -> CliResult<()> {
    let rows = (0..grid.levels()).flat_map(|k| {
        (0..grid.nodes()).map(move |j| {
            vec![
                k.to_string(),
                num(grid.t(k)),
                num(grid.x(j)),
                num(c.u.get(k, j)),
                num(c.v.get(k, j)),
            ]
        })
    });
    out.csv("control.csv", &["step", "t", "x", "u", "v"], rows)
}

fn write_history(out: &mut OutDir, rep: &OptimizeReport) -> CliResult<()> {
    let rows = (0..rep.cost_history.len()).map(|i| {
        let step = if i == 0 {
            String::new()
        } else {
            num(rep.step_sizes[i - 1])
        };
        vec![
            i.to_string(),
            num(rep.cost_history[i]),
            num(rep.residual_history[i]),
            step,
        ]
    });
    out.csv(
        "optimize_history.csv",
        &["iteration", "cost", "residual", "step_size"],
        rows,
    )
}

fn not_converged(rep: &OptimizeReport, tol: f64) -> CliError {
    let last = rep.residual_history.last().copied().unwrap_or(f64::NAN);
    let why = rep
        .message
        .clone()
        .unwrap_or_else(|| format!("{} iterations", rep.iterations));
    CliError::Threshold(format!("gradient norm {last:e} above tol {tol:e} ({why})"))
}

fn optimize_cmd(out: &mut OutDir, cmd: Command, cfg: &RunConfig, grid: &Grid) -> CliResult<()> {
    let params = cfg.params(grid)?;
    let o = &cfg.optimize;
    let (x, rep) = optimize(
        &params,
        grid,
        &ControlPair::zeros(grid),
        o.tol,
        o.max_iter,
        &cfg.solver,
    )?;
    write_history(out, &rep)?;
    write_control(out, grid, &x)?;
    out.json("report.json", &rep)?;
    finish(out, cmd, cfg, &rep)?;
    if !rep.converged {
        return Err(not_converged(&rep, o.tol));
    }
    Ok(())
}

fn continuation_cmd(out: &mut OutDir, cmd: Command, cfg: &RunConfig, grid: &Grid) -> CliResult<()> {
    let params = cfg.params(grid)?;
    let o = &cfg.optimize;
    let (x, cert) = eps_continuation(
        &params,
        grid,
        &ControlPair::zeros(grid),
        &o.eps_list,
        o.tol,
        o.max_iter,
        &cfg.solver,
    )?;
    let rows = (0..cert.eps_sequence.len()).map(|i| {
        let drift = if i == 0 {
            String::new()
        } else {
            num(cert.control_drift[i - 1])
        };
        vec![
            num(cert.eps_sequence[i]),
            cert.iterations[i].to_string(),
            cert.converged[i].to_string(),
            num(cert.final_cost[i]),
            num(cert.facet_fraction[i]),
            drift,
        ]
    });
    out.csv(
        "continuation.csv",
        &[
            "eps",
            "iterations",
            "converged",
            "final_cost",
            "facet_fraction",
            "control_drift",
        ],
        rows,
    )?;
    write_control(out, grid, &x)?;
    out.json("report.json", &cert)?;
    finish(out, cmd, cfg, &cert)?;
    if let Some(i) = cert.converged.iter().position(|c| !c) {
        return Err(CliError::Threshold(format!(
            "continuation level eps = {:e} did not reach tol {:e}",
            cert.eps_sequence[i], o.tol
        )));
    }
    Ok(())
}

#[derive(Serialize)]
struct ResidualsReport {
    optimize: OptimizeReport,
    residuals: OptimalityResiduals,
}

fn residuals_cmd(out: &mut OutDir, cmd: Command, cfg: &RunConfig, grid: &Grid) -> CliResult<()> {
    let params = cfg.params(grid)?;
    let o = &cfg.optimize;
    let (x, rep) = optimize(
        &params,
        grid,
        &ControlPair::zeros(grid),
        o.tol,
        o.max_iter,
        &cfg.solver,
    )?;
    let residuals = optimality_residuals(&params, grid, &x, &cfg.solver)?;
    let report = ResidualsReport {
        optimize: rep,
        residuals,
    };
    out.json("report.json", &report)?;
    finish(out, cmd, cfg, &report)
}
