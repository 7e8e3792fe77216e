//! Semi-implicit splitting: a linear `eta` step with lagged reaction and
//! coupling, then a lagged-diffusivity (Kačanov) iteration for `theta`.

use serde::{Deserialize, Serialize};

use crate::banded::solve_tridiagonal;
use crate::error::Result;
use crate::grid::Grid;
use crate::model::{fe, fe1, fe2, CellData, ModelParams};

use super::SolverOptions;

/// Outcome of an inner iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InnerReport {
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

/// `sum_{cells c ~ j} h alpha'(eta_c) f_eps(theta_x,c) / 2`: the derivative in
/// `eta_j` of `int alpha(eta) f_eps(theta_x)`.
pub(crate) fn coupling_force(
    params: &ModelParams,
    grid: &Grid,
    eta: &[f64],
    theta: &[f64],
    eps: f64,
) -> Vec<f64> {
    let c = CellData::new(grid, eta, theta);
    let h = grid.h();
    let mut out = vec![0.0; grid.nodes()];
    for i in 0..grid.cells() {
        let v = 0.5 * h * params.mobility.alpha_prime(c.eta_mid[i]) * fe(eps, c.dtheta[i]);
        out[i] += v;
        out[i + 1] += v;
    }
    out
}

/// One linear step of the `eta` equation:
/// `(M + tau S) eta = M eta_prev + tau M (M_u u - g(eta_prev)) - tau c(eta_prev, theta_prev)`.
pub fn step_eta(
    params: &ModelParams,
    grid: &Grid,
    eta_prev: &[f64],
    theta_prev: &[f64],
    u_slice: &[f64],
    tau: f64,
) -> Result<Vec<f64>> {
    grid.check_nodes("eta_prev", eta_prev)?;
    grid.check_nodes("theta_prev", theta_prev)?;
    grid.check_nodes("u", u_slice)?;
    let n = grid.n_space();
    let m = grid.lumped_mass();
    let s = tau / grid.h();
    let coupling = coupling_force(params, grid, eta_prev, theta_prev, params.eps_eff());
    let mut diag: Vec<f64> = m.clone();
    for c in 0..n {
        diag[c] += s;
        diag[c + 1] += s;
    }
    let off = vec![-s; n];
    let rhs: Vec<f64> = (0..=n)
        .map(|j| {
            m[j] * (eta_prev[j] + tau * (params.m_u * u_slice[j] - params.potential.g(eta_prev[j])))
                - tau * coupling[j]
        })
        .collect();
    solve_tridiagonal(&off, &diag, &off, &rhs)
}

/// Kačanov iteration for the `theta` step at time `t_new`.
///
/// Each sweep freezes the diffusivity
/// `D = alpha(eta_new) / sqrt(eps^2 + theta_x^2) + nu^2` on cells at the
/// previous iterate and solves the resulting tridiagonal system.
#[allow(clippy::too_many_arguments)]
pub fn step_theta(
    params: &ModelParams,
    grid: &Grid,
    theta_prev: &[f64],
    eta_new: &[f64],
    v_slice: &[f64],
    tau: f64,
    t_new: f64,
    opts: &SolverOptions,
) -> Result<(Vec<f64>, InnerReport)> {
    grid.check_nodes("theta_prev", theta_prev)?;
    grid.check_nodes("eta_new", eta_new)?;
    grid.check_nodes("v", v_slice)?;
    let n = grid.n_space();
    let h = grid.h();
    let m = grid.lumped_mass();
    let eps = params.eps_eff();
    let nu2 = params.nu * params.nu;
    let a0 = params.time_mobility.row(grid, t_new);
    let alpha: Vec<f64> = grid
        .cell_average(eta_new)
        .iter()
        .map(|&s| params.mobility.alpha(s))
        .collect();
    let mut rhs: Vec<f64> = (0..=n)
        .map(|j| m[j] * (a0[j] * theta_prev[j] + tau * params.m_v * v_slice[j]))
        .collect();
    rhs[0] = 0.0;
    rhs[n] = 0.0;

    let mut theta = theta_prev.to_vec();
    theta[0] = 0.0;
    theta[n] = 0.0;
    let mut report = InnerReport {
        iterations: 0,
        residual: f64::INFINITY,
        converged: false,
    };
    for it in 1..=opts.m_max {
        let d = grid.cell_gradient(&theta);
        let mut diag: Vec<f64> = (0..=n).map(|j| m[j] * a0[j]).collect();
        let mut off = vec![0.0; n];
        for c in 0..n {
            let k = tau * (alpha[c] / fe(eps, d[c]) + nu2) / h;
            diag[c] += k;
            diag[c + 1] += k;
            off[c] = -k;
        }
        diag[0] = 1.0;
        diag[n] = 1.0;
        off[0] = 0.0;
        off[n - 1] = 0.0;
        let next = solve_tridiagonal(&off, &diag, &off, &rhs)?;
        let change = next
            .iter()
            .zip(&theta)
            .fold(0.0_f64, |a, (x, y)| a.max((x - y).abs()));
        let size = next.iter().fold(0.0_f64, |a, x| a.max(x.abs()));
        theta = next;
        report.iterations = it;
        report.residual = change / size.max(1.0);
        if report.residual < opts.inner_tol {
            report.converged = true;
            break;
        }
    }
    if !report.converged && opts.newton_fallback {
        let ctx = ThetaStep {
            grid,
            theta_prev,
            alpha: &alpha,
            a0: &a0,
            v_slice,
            m_v: params.m_v,
            tau,
            eps,
            nu2,
        };
        if let Some((t, it, res)) = ctx.newton(theta.clone(), opts.inner_tol, opts.newton_max) {
            theta = t;
            report.iterations += it;
            report.residual = res;
            report.converged = true;
        }
    }
    Ok((theta, report))
}

/// Newton polish for the angle step when the lagged-diffusivity iteration is
/// slow (small `eps`, flat facets). Same strictly convex functional, same
/// minimizer.
struct ThetaStep<'a> {
    grid: &'a Grid,
    theta_prev: &'a [f64],
    alpha: &'a [f64],
    a0: &'a [f64],
    v_slice: &'a [f64],
    m_v: f64,
    tau: f64,
    eps: f64,
    nu2: f64,
}

impl ThetaStep<'_> {
    /// `tau` times the step functional.
    fn value(&self, theta: &[f64]) -> f64 {
        let m = self.grid.lumped_mass();
        let d = self.grid.cell_gradient(theta);
        let mut v = 0.0;
        for j in 0..m.len() {
            let dt = theta[j] - self.theta_prev[j];
            v += m[j]
                * (0.5 * self.a0[j] * dt * dt - self.tau * self.m_v * self.v_slice[j] * theta[j]);
        }
        for (c, &dc) in d.iter().enumerate() {
            v += self.tau
                * self.grid.h()
                * (self.alpha[c] * fe(self.eps, dc) + 0.5 * self.nu2 * dc * dc);
        }
        v
    }

    fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        let n = self.grid.n_space();
        let m = self.grid.lumped_mass();
        let d = self.grid.cell_gradient(theta);
        let mut r: Vec<f64> = (0..=n)
            .map(|j| {
                m[j] * (self.a0[j] * (theta[j] - self.theta_prev[j])
                    - self.tau * self.m_v * self.v_slice[j])
            })
            .collect();
        for (c, &dc) in d.iter().enumerate() {
            let flux = self.tau * (self.alpha[c] * fe1(self.eps, dc) + self.nu2 * dc);
            r[c] -= flux;
            r[c + 1] += flux;
        }
        r[0] = 0.0;
        r[n] = 0.0;
        r
    }

    fn newton(
        &self,
        mut theta: Vec<f64>,
        tol: f64,
        max_iter: usize,
    ) -> Option<(Vec<f64>, usize, f64)> {
        let n = self.grid.n_space();
        let m = self.grid.lumped_mass();
        let h = self.grid.h();
        let mut value = self.value(&theta);
        for it in 1..=max_iter {
            let r = self.gradient(&theta);
            let d = self.grid.cell_gradient(&theta);
            let mut diag: Vec<f64> = (0..=n).map(|j| m[j] * self.a0[j]).collect();
            let mut off = vec![0.0; n];
            for c in 0..n {
                let k = self.tau * (self.alpha[c] * fe2(self.eps, d[c]) + self.nu2) / h;
                diag[c] += k;
                diag[c + 1] += k;
                off[c] = -k;
            }
            diag[0] = 1.0;
            diag[n] = 1.0;
            off[0] = 0.0;
            off[n - 1] = 0.0;
            let neg: Vec<f64> = r.iter().map(|v| -v).collect();
            let dir = solve_tridiagonal(&off, &diag, &off, &neg).ok()?;
            let slope: f64 = dir.iter().zip(&r).map(|(a, b)| a * b).sum();
            let mut step = 1.0;
            let mut next = None;
            for _ in 0..60 {
                let trial: Vec<f64> = theta.iter().zip(&dir).map(|(a, b)| a + step * b).collect();
                let tv = self.value(&trial);
                if tv <= value + 1e-4 * step * slope || (tv - value).abs() <= 1e-15 * value.abs() {
                    next = Some((trial, tv));
                    break;
                }
                step *= 0.5;
            }
            let (trial, tv) = next?;
            let change = trial
                .iter()
                .zip(&theta)
                .fold(0.0_f64, |a, (x, y)| a.max((x - y).abs()));
            let size = trial.iter().fold(0.0_f64, |a, x| a.max(x.abs()));
            theta = trial;
            value = tv;
            let res = change / size.max(1.0);
            if res < tol {
                return Some((theta, it, res));
            }
        }
        None
    }
}

/// The convex functional minimized by the `theta` step:
/// `|sqrt(alpha_0) (theta - theta_prev)|^2 / (2 tau) + int alpha(eta_new) f_eps(theta_x)
///  + nu^2/2 |theta_x|^2 - (M_v v, theta)`.
#[allow(clippy::too_many_arguments)]
pub fn theta_step_functional(
    params: &ModelParams,
    grid: &Grid,
    theta_prev: &[f64],
    eta_new: &[f64],
    v_slice: &[f64],
    tau: f64,
    t_new: f64,
    theta: &[f64],
) -> f64 {
    let m = grid.lumped_mass();
    let a0 = params.time_mobility.row(grid, t_new);
    let eps = params.eps_eff();
    let nu2 = params.nu * params.nu;
    let c = CellData::new(grid, eta_new, theta);
    let mut val = 0.0;
    for j in 0..grid.nodes() {
        let d = theta[j] - theta_prev[j];
        val += m[j] * (0.5 * a0[j] * d * d / tau - params.m_v * v_slice[j] * theta[j]);
    }
    for i in 0..grid.cells() {
        let d = c.dtheta[i];
        val += grid.h() * (params.mobility.alpha(c.eta_mid[i]) * fe(eps, d) + 0.5 * nu2 * d * d);
    }
    val
}
