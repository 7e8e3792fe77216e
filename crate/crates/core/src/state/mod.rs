//! Time stepping for the state system
//!
//! ```text
//! eta_t - eta_xx + g(eta) + alpha'(eta) f_eps(theta_x) = M_u u,       eta_x = 0 on the boundary
//! alpha_0 theta_t - (alpha(eta) f_eps'(theta_x) + nu^2 theta_x)_x = M_v v,  theta = 0 on the boundary
//! ```
//!
//! Three schemes share the discrete energy: the semi-implicit splitting
//! (default), the fully implicit coupled step used by the gradient pipeline,
//! and the minimizing-movement scheme. In every scheme step `k` is driven by
//! the control at level `k - 1`, except the minimizing movement, which uses
//! the step average.

mod implicit;
mod minmove;
mod split;

use serde::{Deserialize, Serialize};

pub use implicit::implicit_step;
pub use minmove::{solve_state_minmove, MinMoveConstants, MinMoveReport, MinMoveStep};
pub use split::{step_eta, step_theta, theta_step_functional, InnerReport};

use crate::error::{Error, Result};
use crate::field::{ControlPair, FieldPair};
use crate::grid::Grid;
use crate::model::{g_hat, phi_with, total_energy, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    #[default]
    SemiImplicit,
    Implicit,
    Minmove,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    /// Relative update tolerance of the Kačanov iteration.
    pub inner_tol: f64,
    /// Iteration cap of the Kačanov iteration.
    pub m_max: usize,
    /// Finish a stalled Kačanov iteration with Newton on the same step
    /// functional before halving the step size.
    pub newton_fallback: bool,
    /// How many times a failing split step may halve its step size.
    pub max_halvings: usize,
    pub newton_tol: f64,
    pub newton_max: usize,
    /// Gradient-norm tolerance of each minimizing-movement step.
    pub min_tol: f64,
    pub minmove_sweeps: usize,
    /// Proximal weight `L` of the minimizing movement; `None` picks `L0 + 1`.
    pub minmove_shift: Option<f64>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            inner_tol: 1e-10,
            m_max: 100,
            newton_fallback: true,
            max_halvings: 5,
            newton_tol: 1e-12,
            newton_max: 60,
            min_tol: 1e-9,
            minmove_sweeps: 40,
            minmove_shift: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateStepReport {
    pub step_index: usize,
    pub t: f64,
    /// Number of sub-steps after step-size halving (1 if none).
    pub substeps: usize,
    pub inner_iterations: usize,
    pub inner_residual: f64,
    pub energy_phi: f64,
    pub energy_ghat: f64,
    pub energy_total: f64,
    /// `tau |A0^(1/2) dw/tau|^2 + dE - (f, dw)`; zero on the initial row.
    pub dissipation_residual: f64,
}

/// Semi-implicit solve; the returned reports start with the initial level.
pub fn solve_state(
    params: &ModelParams,
    grid: &Grid,
    control: &ControlPair,
    opts: &SolverOptions,
) -> Result<(FieldPair, Vec<StateStepReport>)> {
    solve_state_with(params, grid, control, opts, Scheme::SemiImplicit)
}

pub fn solve_state_with(
    params: &ModelParams,
    grid: &Grid,
    control: &ControlPair,
    opts: &SolverOptions,
    scheme: Scheme,
) -> Result<(FieldPair, Vec<StateStepReport>)> {
    params.validate(grid)?;
    control.check(grid)?;
    let mut inner = vec![(1, 0, 0.0); grid.levels()];
    let traj = match scheme {
        Scheme::SemiImplicit => {
            let mut traj = start(params, grid);
            for k in 1..grid.levels() {
                let (eta, theta, info) = split_step(params, grid, &traj, control, k, opts)?;
                traj.first.row_mut(k).copy_from_slice(&eta);
                traj.second.row_mut(k).copy_from_slice(&theta);
                inner[k] = info;
            }
            traj
        }
        Scheme::Implicit => {
            let mut traj = start(params, grid);
            for k in 1..grid.levels() {
                let (eta, theta, rep) = implicit_step(
                    params,
                    grid,
                    traj.first.row(k - 1),
                    traj.second.row(k - 1),
                    control.u.row(k - 1),
                    control.v.row(k - 1),
                    grid.tau(),
                    grid.t(k),
                    opts,
                )?;
                traj.first.row_mut(k).copy_from_slice(&eta);
                traj.second.row_mut(k).copy_from_slice(&theta);
                inner[k] = (1, rep.iterations, rep.residual);
            }
            traj
        }
        Scheme::Minmove => {
            let (traj, rep) = solve_state_minmove(params, grid, control, opts)?;
            for s in &rep.steps {
                inner[s.step_index] = (1, s.sweeps + s.newton_iterations, s.gradient_norm);
            }
            traj
        }
    };
    let reports = energy_audit(params, grid, control, &traj, scheme == Scheme::Minmove)
        .into_iter()
        .zip(inner)
        .map(|(mut r, (substeps, it, res))| {
            r.substeps = substeps;
            r.inner_iterations = it;
            r.inner_residual = res;
            r
        })
        .collect();
    Ok((traj, reports))
}

/// Fully implicit trajectory without the audit; the discrete state map
/// whose derivative the adjoint transposes.
pub fn solve_state_implicit(
    params: &ModelParams,
    grid: &Grid,
    control: &ControlPair,
    opts: &SolverOptions,
) -> Result<FieldPair> {
    params.validate(grid)?;
    control.check(grid)?;
    let mut traj = start(params, grid);
    for k in 1..grid.levels() {
        let (eta, theta, _) = implicit_step(
            params,
            grid,
            traj.first.row(k - 1),
            traj.second.row(k - 1),
            control.u.row(k - 1),
            control.v.row(k - 1),
            grid.tau(),
            grid.t(k),
            opts,
        )?;
        traj.first.row_mut(k).copy_from_slice(&eta);
        traj.second.row_mut(k).copy_from_slice(&theta);
    }
    Ok(traj)
}

fn start(params: &ModelParams, grid: &Grid) -> FieldPair {
    let mut traj = FieldPair::zeros(grid);
    traj.first.row_mut(0).copy_from_slice(&params.eta0);
    traj.second.row_mut(0).copy_from_slice(&params.theta0);
    traj
}

/// One split step from level `k - 1` to `k`, halving the step size when the
/// angle iteration stalls. Returns `(eta, theta, (substeps, iterations, residual))`.
fn split_step(
    params: &ModelParams,
    grid: &Grid,
    traj: &FieldPair,
    control: &ControlPair,
    k: usize,
    opts: &SolverOptions,
) -> Result<(Vec<f64>, Vec<f64>, (usize, usize, f64))> {
    let (u, v) = (control.u.row(k - 1), control.v.row(k - 1));
    let t0 = grid.t(k - 1);
    let mut last = None;
    for halvings in 0..=opts.max_halvings {
        let parts = 1usize << halvings;
        let tau = grid.tau() / parts as f64;
        let mut eta = traj.first.row(k - 1).to_vec();
        let mut theta = traj.second.row(k - 1).to_vec();
        let mut iterations = 0;
        let mut residual = 0.0_f64;
        let mut ok = true;
        for s in 1..=parts {
            let eta_new = step_eta(params, grid, &eta, &theta, u, tau)?;
            let (theta_new, rep) = step_theta(
                params,
                grid,
                &theta,
                &eta_new,
                v,
                tau,
                t0 + s as f64 * tau,
                opts,
            )?;
            iterations += rep.iterations;
            residual = residual.max(rep.residual);
            eta = eta_new;
            theta = theta_new;
            if !rep.converged {
                ok = false;
                last = Some(rep);
                break;
            }
        }
        if ok {
            return Ok((eta, theta, (parts, iterations, residual)));
        }
    }
    let rep = last.unwrap_or(InnerReport {
        iterations: 0,
        residual: f64::NAN,
        converged: false,
    });
    Err(Error::NoConvergence {
        what: "angle step after step-size halving",
        iterations: rep.iterations,
        residual: rep.residual,
    })
}

/// Energies and the discrete dissipation balance of a trajectory.
///
/// `averaged` selects the step-averaged forcing of the minimizing movement
/// instead of the old-level forcing.
pub fn energy_audit(
    params: &ModelParams,
    grid: &Grid,
    control: &ControlPair,
    traj: &FieldPair,
    averaged: bool,
) -> Vec<StateStepReport> {
    let eps = params.eps_eff();
    let m = grid.lumped_mass();
    let tau = grid.tau();
    let mut out = Vec::with_capacity(grid.levels());
    for k in 0..grid.levels() {
        let (eta, theta) = (traj.first.row(k), traj.second.row(k));
        let phi = phi_with(params, grid, eta, theta, eps);
        let ghat = g_hat(params, grid, eta);
        let total = total_energy(params, grid, eta, theta, eps);
        let mut residual = 0.0;
        if k > 0 {
            let a0 = params.time_mobility.row(grid, grid.t(k));
            let (ep, tp) = (traj.first.row(k - 1), traj.second.row(k - 1));
            let prev_total = out.last().map_or(0.0, |r: &StateStepReport| r.energy_total);
            let mut dissipation = 0.0;
            let mut work = 0.0;
            for j in 0..grid.nodes() {
                let (de, dt) = (eta[j] - ep[j], theta[j] - tp[j]);
                let (fu, fv) = if averaged {
                    (
                        0.5 * (control.u.get(k - 1, j) + control.u.get(k, j)),
                        0.5 * (control.v.get(k - 1, j) + control.v.get(k, j)),
                    )
                } else {
                    (control.u.get(k - 1, j), control.v.get(k - 1, j))
                };
                dissipation += m[j] * (de * de + a0[j] * dt * dt) / tau;
                work += m[j] * (params.m_u * fu * de + params.m_v * fv * dt);
            }
            residual = dissipation + total - prev_total - work;
        }
        out.push(StateStepReport {
            step_index: k,
            t: grid.t(k),
            substeps: 1,
            inner_iterations: 0,
            inner_residual: 0.0,
            energy_phi: phi,
            energy_ghat: ghat,
            energy_total: total,
            dissipation_residual: residual,
        });
    }
    out
}

/// Fraction of cells with `|theta_x| <= threshold`.
pub fn facet_fraction(grid: &Grid, theta: &[f64], threshold: f64) -> f64 {
    let d = grid.cell_gradient(theta);
    d.iter().filter(|v| v.abs() <= threshold).count() as f64 / d.len() as f64
}
