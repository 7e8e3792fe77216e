//! Minimizing-movement scheme: each step minimizes
//! `|A0^(1/2) (w - w_prev)|^2 / (2 tau) + L |w - w_prev|^2 + E(w) - (f_bar, w)`
//! with `A0 = diag(1, alpha_0(t_i))` and `f_bar` the step average of the forcing.

use serde::{Deserialize, Serialize};

use crate::banded::solve_tridiagonal;
use crate::error::{Error, Result};
use crate::field::{ControlPair, FieldPair};
use crate::grid::Grid;
use crate::model::{fe, g_hat, phi_with, CellData, ModelParams, WORKING_RANGE};

use super::implicit::StepProblem;
use super::SolverOptions;

/// Constants of the scheme.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinMoveConstants {
    /// Lipschitz constant of the non-convex part of the energy.
    pub l0: f64,
    /// Proximal weight actually used.
    pub shift: f64,
    /// Coercivity of `A0`.
    pub kappa0: f64,
    /// `max(|A0|, |A0'|)`.
    pub a_star: f64,
}

impl MinMoveConstants {
    pub fn new(params: &ModelParams, grid: &Grid, shift: Option<f64>) -> Result<Self> {
        let r = WORKING_RANGE;
        let nu2 = params.nu * params.nu;
        let l0 = 1.0 + params.potential.lipschitz(r) + params.mobility.product_lipschitz(r) / nu2;
        let shift = shift.unwrap_or(l0 + 1.0);
        if !(shift >= l0 + 1.0) {
            return Err(Error::InvalidParameter(format!(
                "proximal weight L = {shift} must be at least L0 + 1 = {}",
                l0 + 1.0
            )));
        }
        let tm = &params.time_mobility;
        let t = grid.t_final();
        let a_max = [0.0, t]
            .iter()
            .flat_map(|&s| [tm.value(s, 0.0), tm.value(s, 1.0)])
            .fold(1.0_f64, f64::max);
        let a_star = a_max.max(tm.dt(0.0, 0.0).abs());
        Ok(Self {
            l0,
            shift,
            kappa0: params.delta_star,
            a_star,
        })
    }

    /// `(5 L + A*) tau`, which must stay below `kappa0`.
    pub fn step_bound(&self, tau: f64) -> f64 {
        (5.0 * self.shift + self.a_star) * tau
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinMoveStep {
    pub step_index: usize,
    pub sweeps: usize,
    pub newton_iterations: usize,
    pub gradient_norm: f64,
    /// `kappa0/(2 tau) |dw|^2 + increment of Phi + G_hat + L |w|^2`.
    pub est_lhs: f64,
    /// `(1 + 4 L^2)/kappa0 * tau * (r + |f_bar|^2)` with `r = max_j |w_j|^2`.
    pub est_rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinMoveReport {
    pub constants: MinMoveConstants,
    /// `max_j |w_j|^2` over the run.
    pub r_max: f64,
    /// The a-priori radius from the Gronwall argument; usually overflows.
    pub r1_closed_form: f64,
    pub steps: Vec<MinMoveStep>,
    pub est_holds: bool,
}

fn x_norm_sq(grid: &Grid, eta: &[f64], theta: &[f64]) -> f64 {
    grid.inner(eta, eta) + grid.inner(theta, theta)
}

/// Solves the state system with the minimizing-movement scheme.
pub fn solve_state_minmove(
    params: &ModelParams,
    grid: &Grid,
    control: &ControlPair,
    opts: &SolverOptions,
) -> Result<(FieldPair, MinMoveReport)> {
    params.validate(grid)?;
    control.check(grid)?;
    let consts = MinMoveConstants::new(params, grid, opts.minmove_shift)?;
    let tau = grid.tau();
    let bound = consts.step_bound(tau);
    if !(bound < consts.kappa0) {
        return Err(Error::InvalidParameter(format!(
            "minimizing-movement step bound violated: (5 L + A*) tau = {bound:.4e} must be below kappa0 = {}",
            consts.kappa0
        )));
    }
    let eps = params.eps_eff();
    let l = consts.shift;
    let n = grid.n_space();
    let m = grid.lumped_mass();
    let nu2 = params.nu * params.nu;

    let mut traj = FieldPair::zeros(grid);
    traj.first.row_mut(0).copy_from_slice(&params.eta0);
    traj.second.row_mut(0).copy_from_slice(&params.theta0);
    let mut steps = Vec::with_capacity(grid.n_time());
    let mut increments = Vec::with_capacity(grid.n_time());

    for k in 1..grid.levels() {
        let avg = |f: &crate::field::SpaceTime, w: f64| -> Vec<f64> {
            f.row(k - 1)
                .iter()
                .zip(f.row(k))
                .map(|(a, b)| 0.5 * w * (a + b))
                .collect()
        };
        let fu = avg(&control.u, params.m_u);
        let fv = avg(&control.v, params.m_v);
        let eta_prev = traj.first.row(k - 1).to_vec();
        let theta_prev = traj.second.row(k - 1).to_vec();
        let prob = StepProblem {
            params,
            grid,
            eta_prev: &eta_prev,
            theta_prev: &theta_prev,
            force_eta: &fu,
            force_theta: &fv,
            alpha0: params.time_mobility.row(grid, grid.t(k)),
            tau,
            eps,
            shift: l,
        };
        let mut eta = eta_prev.clone();
        let mut theta = theta_prev.clone();
        theta[0] = 0.0;
        theta[n] = 0.0;
        let grad_norm = |eta: &[f64], theta: &[f64]| {
            let r = prob.residual(eta, theta);
            r.iter()
                .enumerate()
                .map(|(i, v)| v * v / m[i / 2])
                .sum::<f64>()
                .sqrt()
                / tau
        };

        // block sweeps: eta by Newton with theta frozen, theta by one lagged-diffusivity solve
        let mut sweeps = 0;
        let mut gnorm = grad_norm(&eta, &theta);
        while gnorm > opts.min_tol && sweeps < opts.minmove_sweeps {
            sweeps += 1;
            eta_block(&prob, &mut eta, &theta)?;
            let d = grid.cell_gradient(&theta);
            let alpha: Vec<f64> = grid
                .cell_average(&eta)
                .iter()
                .map(|&s| params.mobility.alpha(s))
                .collect();
            let mut diag: Vec<f64> = (0..=n)
                .map(|j| m[j] * (prob.alpha0[j] + 2.0 * tau * l))
                .collect();
            let mut off = vec![0.0; n];
            for c in 0..n {
                let kc = tau * (alpha[c] / fe(eps, d[c]) + nu2) / grid.h();
                diag[c] += kc;
                diag[c + 1] += kc;
                off[c] = -kc;
            }
            let mut rhs: Vec<f64> = (0..=n)
                .map(|j| m[j] * ((prob.alpha0[j] + 2.0 * tau * l) * theta_prev[j] + tau * fv[j]))
                .collect();
            diag[0] = 1.0;
            diag[n] = 1.0;
            off[0] = 0.0;
            off[n - 1] = 0.0;
            rhs[0] = 0.0;
            rhs[n] = 0.0;
            theta = solve_tridiagonal(&off, &diag, &off, &rhs)?;
            gnorm = grad_norm(&eta, &theta);
        }
        let mut newton_iterations = 0;
        if gnorm > opts.min_tol {
            let rep = prob.newton(
                &mut eta,
                &mut theta,
                opts.min_tol * tau,
                opts.newton_max,
                false,
            )?;
            newton_iterations = rep.iterations;
            gnorm = grad_norm(&eta, &theta);
        }
        if !(gnorm <= opts.min_tol * 10.0) {
            return Err(Error::NoConvergence {
                what: "minimizing-movement step",
                iterations: sweeps + newton_iterations,
                residual: gnorm,
            });
        }

        let lyap = |e: &[f64], t: &[f64]| {
            phi_with(params, grid, e, t, eps) + g_hat(params, grid, e) + l * x_norm_sq(grid, e, t)
        };
        let de: Vec<f64> = eta.iter().zip(&eta_prev).map(|(a, b)| a - b).collect();
        let dt: Vec<f64> = theta.iter().zip(&theta_prev).map(|(a, b)| a - b).collect();
        let lhs = consts.kappa0 / (2.0 * tau) * x_norm_sq(grid, &de, &dt) + lyap(&eta, &theta)
            - lyap(&eta_prev, &theta_prev);
        increments.push((lhs, x_norm_sq(grid, &fu, &fv)));
        steps.push(MinMoveStep {
            step_index: k,
            sweeps,
            newton_iterations,
            gradient_norm: gnorm,
            est_lhs: lhs,
            est_rhs: 0.0,
        });
        traj.first.row_mut(k).copy_from_slice(&eta);
        traj.second.row_mut(k).copy_from_slice(&theta);
    }

    let r_max = (0..grid.levels())
        .map(|k| x_norm_sq(grid, traj.first.row(k), traj.second.row(k)))
        .fold(0.0, f64::max);
    let coef = (1.0 + 4.0 * l * l) / consts.kappa0 * tau;
    let mut holds = true;
    for (s, (_, f2)) in steps.iter_mut().zip(&increments) {
        s.est_rhs = coef * (r_max + f2);
        holds &= s.est_lhs <= s.est_rhs;
    }
    let r1 = r1_closed_form(params, grid, control, &consts);
    Ok((
        traj,
        MinMoveReport {
            constants: consts,
            r_max,
            r1_closed_form: r1,
            steps,
            est_holds: holds,
        },
    ))
}

/// Newton on the `eta` block with `theta` frozen (a tridiagonal convex problem).
fn eta_block(prob: &StepProblem<'_>, eta: &mut Vec<f64>, theta: &[f64]) -> Result<()> {
    let grid = prob.grid;
    let p = prob.params;
    let n = grid.n_space();
    let m = grid.lumped_mass();
    let h = grid.h();
    let tau = prob.tau;
    for _ in 0..50 {
        let r = prob.residual(eta, theta);
        let rp: Vec<f64> = r.iter().step_by(2).copied().collect();
        if rp.iter().all(|&v| v == 0.0) {
            break;
        }
        let c = CellData::new(grid, eta, theta);
        let mut diag: Vec<f64> = (0..=n)
            .map(|j| m[j] * (1.0 + 2.0 * tau * prob.shift + tau * p.potential.g_prime(eta[j])))
            .collect();
        let mut off = vec![0.0; n];
        for cell in 0..n {
            let mu = 0.25
                * tau
                * h
                * p.mobility.alpha_second(c.eta_mid[cell])
                * fe(prob.eps, c.dtheta[cell]);
            let s = tau / h;
            diag[cell] += s + mu;
            diag[cell + 1] += s + mu;
            off[cell] = -s + mu;
        }
        let neg: Vec<f64> = rp.iter().map(|v| -v).collect();
        let d = solve_tridiagonal(&off, &diag, &off, &neg)?;
        let step_ok = d.iter().all(|v| v.is_finite());
        if !step_ok {
            return Err(Error::Numerical("eta block step is not finite".into()));
        }
        // the block functional is convex; halve until it decreases
        let f0 = prob.merit(eta, theta);
        let mut t = 1.0;
        loop {
            let trial: Vec<f64> = eta.iter().zip(&d).map(|(a, b)| a + t * b).collect();
            if prob.merit(&trial, theta) <= f0 || t < 1e-8 {
                *eta = trial;
                break;
            }
            t *= 0.5;
        }
        let change = d.iter().fold(0.0_f64, |a, v| a.max(v.abs())) * t;
        if change <= 1e-14 * (1.0 + eta.iter().fold(0.0_f64, |a, v| a.max(v.abs()))) {
            break;
        }
    }
    Ok(())
}

/// `r1* = 2 (|w0|^2 + r0*/kappa0)` with the Gronwall radius `r0*`.
fn r1_closed_form(
    params: &ModelParams,
    grid: &Grid,
    control: &ControlPair,
    c: &MinMoveConstants,
) -> f64 {
    let t = grid.t_final();
    let l = c.shift;
    let (eta0, theta0) = (&params.eta0, &params.theta0);
    let w0 = x_norm_sq(grid, eta0, theta0);
    let eps = params.eps_eff();
    let zero = vec![0.0; grid.nodes()];
    let g0 = g_hat(params, grid, &zero);
    // G_0(0) = (g(0) - alpha(0) alpha'(0) / nu^2, 0) on every node
    let nu2 = params.nu * params.nu;
    let g_at_0 = params.potential.g(0.0)
        - params.mobility.alpha(0.0) * params.mobility.alpha_prime(0.0) / nu2;
    let c0 = g0.abs() + g_at_0 * g_at_0 / (2.0 * c.l0);
    let f_l = g_hat(params, grid, eta0) + l * w0 + c0;
    let psi0 = phi_with(params, grid, eta0, theta0, eps);
    let mut forcing = 0.0;
    for k in 1..grid.levels() {
        let f = |s: &crate::field::SpaceTime, w: f64| -> Vec<f64> {
            s.row(k - 1)
                .iter()
                .zip(s.row(k))
                .map(|(a, b)| 0.5 * w * (a + b))
                .collect()
        };
        forcing +=
            grid.tau() * x_norm_sq(grid, &f(&control.u, params.m_u), &f(&control.v, params.m_v));
    }
    let r0 = (1.0 + 2.0 * l * l) / l
        * (4.0 * t * (c.a_star + 5.0 * l) / c.kappa0).exp()
        * (forcing + t * (w0 + psi0 + f_l));
    2.0 * (w0 + r0 / c.kappa0)
}
