//! Fully implicit backward Euler step for the coupled pair, solved by a
//! damped Newton method. Its Jacobian is exactly the step matrix of the
//! linear system (P) with the linearized coefficients, so the derivative of
//! this discrete state map is a (P) solve.

use crate::banded::BandMatrix;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::linear::{assemble_step, ip, iz, split, StepCoeffs};
use crate::model::{fe1, local_coeffs, total_energy, CellData, ModelParams};

use super::split::{coupling_force, InnerReport};
use super::SolverOptions;

pub(crate) struct StepProblem<'a> {
    pub params: &'a ModelParams,
    pub grid: &'a Grid,
    pub eta_prev: &'a [f64],
    pub theta_prev: &'a [f64],
    /// Already scaled by `M_u`, `M_v`.
    pub force_eta: &'a [f64],
    pub force_theta: &'a [f64],
    pub alpha0: Vec<f64>,
    pub tau: f64,
    pub eps: f64,
    /// Extra proximal weight `L` (minimizing movement); zero for plain Euler.
    pub shift: f64,
}

impl StepProblem<'_> {
    fn mass(&self) -> Vec<f64> {
        self.grid.lumped_mass()
    }

    /// Step functional whose gradient is [`Self::residual`], scaled by `tau`.
    pub fn merit(&self, eta: &[f64], theta: &[f64]) -> f64 {
        let m = self.mass();
        let mut val = 0.0;
        for j in 0..m.len() {
            let de = eta[j] - self.eta_prev[j];
            let dt = theta[j] - self.theta_prev[j];
            val += m[j]
                * (0.5 * (de * de + self.alpha0[j] * dt * dt)
                    + self.tau * self.shift * (de * de + dt * dt)
                    - self.tau * (self.force_eta[j] * eta[j] + self.force_theta[j] * theta[j]));
        }
        val + self.tau * total_energy(self.params, self.grid, eta, theta, self.eps)
    }

    /// Interleaved residual; Dirichlet rows of `theta` are zero.
    pub fn residual(&self, eta: &[f64], theta: &[f64]) -> Vec<f64> {
        let g = self.grid;
        let p = self.params;
        let n = g.n_space();
        let m = self.mass();
        let tau = self.tau;
        let nu2 = p.nu * p.nu;
        let c = CellData::new(g, eta, theta);
        let coupling = coupling_force(p, g, eta, theta, self.eps);
        let mut r = vec![0.0; 2 * (n + 1)];
        for j in 0..=n {
            let de = eta[j] - self.eta_prev[j];
            let dt = theta[j] - self.theta_prev[j];
            let prox = 2.0 * tau * self.shift;
            r[ip(j)] = m[j] * (de + prox * de + tau * (p.potential.g(eta[j]) - self.force_eta[j]))
                + tau * coupling[j];
            r[iz(j)] = m[j] * (self.alpha0[j] * dt + prox * dt - tau * self.force_theta[j]);
        }
        for cell in 0..n {
            let (l, rr) = (cell, cell + 1);
            let fe_ = tau * c.deta[cell];
            r[ip(l)] -= fe_;
            r[ip(rr)] += fe_;
            let d = c.dtheta[cell];
            let flux = tau * (p.mobility.alpha(c.eta_mid[cell]) * fe1(self.eps, d) + nu2 * d);
            r[iz(l)] -= flux;
            r[iz(rr)] += flux;
        }
        r[iz(0)] = 0.0;
        r[iz(n)] = 0.0;
        r
    }

    /// Jacobian of [`Self::residual`], optionally with `sigma * mass` added.
    pub fn jacobian(&self, eta: &[f64], theta: &[f64], sigma: f64) -> BandMatrix {
        let lc = local_coeffs(self.params, self.grid, eta, theta, self.eps);
        let a: Vec<f64> = self
            .alpha0
            .iter()
            .map(|a| a + 2.0 * self.tau * self.shift + sigma)
            .collect();
        let lambda: Vec<f64> = lc
            .lambda
            .iter()
            .map(|l| l + 2.0 * self.shift + sigma / self.tau)
            .collect();
        assemble_step(
            self.grid,
            self.params.nu,
            self.tau,
            &StepCoeffs {
                a: &a,
                lambda: &lambda,
                mu: &lc.mu,
                omega: &lc.omega,
                big_a: &lc.big_a,
            },
        )
    }

    /// Largest residual entry divided by its lumped mass.
    pub fn residual_norm(&self, r: &[f64]) -> f64 {
        let m = self.mass();
        r.iter()
            .enumerate()
            .fold(0.0_f64, |acc, (i, v)| acc.max(v.abs() / m[i / 2]))
    }

    /// Damped Newton from `(eta, theta)`.
    /// Stops when the mass-scaled residual is below `tol`, times
    /// `1 + max |w|` when `relative`.
    pub fn newton(
        &self,
        eta: &mut Vec<f64>,
        theta: &mut Vec<f64>,
        tol: f64,
        max_iter: usize,
        relative: bool,
    ) -> Result<InnerReport> {
        let n = self.grid.n_space();
        theta[0] = 0.0;
        theta[n] = 0.0;
        let mut r = self.residual(eta, theta);
        let mut res = self.residual_norm(&r);
        let mut merit = self.merit(eta, theta);
        for it in 0..=max_iter {
            let scale = if relative {
                1.0 + max_abs(eta, theta)
            } else {
                1.0
            };
            if res <= tol * scale {
                return Ok(InnerReport {
                    iterations: it,
                    residual: res,
                    converged: true,
                });
            }
            if it == max_iter {
                break;
            }
            let neg: Vec<f64> = r.iter().map(|v| -v).collect();
            let mut sigma = 0.0;
            let mut dir = None;
            for _ in 0..30 {
                let jac = self.jacobian(eta, theta, sigma);
                if let Ok(d) = jac.solve(&neg) {
                    let slope: f64 = d.iter().zip(&r).map(|(a, b)| a * b).sum();
                    if slope < 0.0 {
                        dir = Some((d, slope));
                        break;
                    }
                }
                sigma = if sigma == 0.0 { 1e-6 } else { sigma * 10.0 };
            }
            let (d, slope) =
                dir.ok_or_else(|| Error::Numerical("no descent direction in Newton step".into()))?;
            let (de, dt) = split(&d);
            let mut step = 1.0;
            let mut accepted = false;
            for _ in 0..50 {
                let e2: Vec<f64> = eta.iter().zip(&de).map(|(a, b)| a + step * b).collect();
                let t2: Vec<f64> = theta.iter().zip(&dt).map(|(a, b)| a + step * b).collect();
                let m2 = self.merit(&e2, &t2);
                let r2 = self.residual(&e2, &t2);
                let res2 = self.residual_norm(&r2);
                // the merit test loses resolution near the solution; accept a residual decrease there
                if m2 <= merit + 1e-4 * step * slope || (step == 1.0 && res2 < 0.5 * res) {
                    *eta = e2;
                    *theta = t2;
                    merit = m2;
                    r = r2;
                    res = res2;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                let scale = if relative {
                    1.0 + max_abs(eta, theta)
                } else {
                    1.0
                };
                // stalled at round-off level
                if res <= 1e3 * tol * scale {
                    return Ok(InnerReport {
                        iterations: it + 1,
                        residual: res,
                        converged: true,
                    });
                }
                return Err(Error::NoConvergence {
                    what: "implicit step line search",
                    iterations: it + 1,
                    residual: res,
                });
            }
        }
        Err(Error::NoConvergence {
            what: "implicit step Newton iteration",
            iterations: max_iter,
            residual: res,
        })
    }
}

/// One backward Euler step of the coupled state system:
/// `M (w - w_prev) + tau (E'(w) - M f) = 0` with the mass weighted by
/// `alpha_0(t_new)` in the angle component. `u_slice`, `v_slice` are the raw
/// controls of the old level.
#[allow(clippy::too_many_arguments)]
pub fn implicit_step(
    params: &ModelParams,
    grid: &Grid,
    eta_prev: &[f64],
    theta_prev: &[f64],
    u_slice: &[f64],
    v_slice: &[f64],
    tau: f64,
    t_new: f64,
    opts: &SolverOptions,
) -> Result<(Vec<f64>, Vec<f64>, InnerReport)> {
    grid.check_nodes("eta_prev", eta_prev)?;
    grid.check_nodes("theta_prev", theta_prev)?;
    let fu: Vec<f64> = u_slice.iter().map(|x| params.m_u * x).collect();
    let fv: Vec<f64> = v_slice.iter().map(|x| params.m_v * x).collect();
    let prob = StepProblem {
        params,
        grid,
        eta_prev,
        theta_prev,
        force_eta: &fu,
        force_theta: &fv,
        alpha0: params.time_mobility.row(grid, t_new),
        tau,
        eps: params.eps_eff(),
        shift: 0.0,
    };
    let mut eta = eta_prev.to_vec();
    let mut theta = theta_prev.to_vec();
    let rep = prob.newton(&mut eta, &mut theta, opts.newton_tol, opts.newton_max, true)?;
    Ok((eta, theta, rep))
}

fn max_abs(a: &[f64], b: &[f64]) -> f64 {
    a.iter().chain(b).fold(0.0_f64, |m, v| m.max(v.abs()))
}
