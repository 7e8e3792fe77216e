//! Gradient descent for the regularized control problem, continuation in
//! `eps`, and the residuals of the optimality system.

use serde::{Deserialize, Serialize};

use crate::adjoint::{evaluate, evaluate_at, linearization_coeffs, tracking_residual, Evaluation};
use crate::error::{Error, Result};
use crate::field::{ControlPair, FieldPair};
use crate::grid::Grid;
use crate::linear::{assemble_step, dual_norm_sq, ip, iz};
use crate::model::{cost_j, fe1, fe2, CellData, ModelParams};
use crate::state::{facet_fraction, solve_state_implicit, SolverOptions};

/// Armijo constant.
pub const ARMIJO_C1: f64 = 1e-4;
/// Step halvings before the line search gives up.
pub const MAX_BACKTRACKS: usize = 40;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizeReport {
    pub iterations: usize,
    pub cost_history: Vec<f64>,
    /// `|[M_u (u + p), M_v (v + z)]|` at each iterate.
    pub residual_history: Vec<f64>,
    /// Accepted step sizes.
    pub step_sizes: Vec<f64>,
    pub converged: bool,
    /// Set when the line search failed.
    pub message: Option<String>,
}

/// Barzilai-Borwein gradient descent with Armijo backtracking in the plain
/// `L2(Q)` metric. The first trial step is `1 / max(M_u, M_v)`.
pub fn optimize(
    params: &ModelParams,
    grid: &Grid,
    initial: &ControlPair,
    tol: f64,
    max_iter: usize,
    opts: &SolverOptions,
) -> Result<(ControlPair, OptimizeReport)> {
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "optimizer tolerance must be positive, got {tol}"
        )));
    }
    if params.m_u == 0.0 && params.m_v == 0.0 {
        return Err(Error::InvalidParameter(
            "m_u = m_v = 0: the cost has no control regularization and the gradient vanishes identically".into(),
        ));
    }
    params.validate(grid)?;
    initial.check(grid)?;

    let mut x = initial.clone();
    let mut cur = evaluate(params, grid, &x, opts)?;
    let mut report = OptimizeReport {
        iterations: 0,
        cost_history: vec![cur.diagnostics.cost],
        residual_history: vec![cur.diagnostics.gradient_norm],
        step_sizes: Vec::new(),
        converged: false,
        message: None,
    };
    if cur.diagnostics.gradient_norm <= tol {
        report.converged = true;
        return Ok((x, report));
    }
    let mut step = 1.0 / params.m_u.max(params.m_v);
    for it in 1..=max_iter {
        let g = &cur.gradient;
        let gg = g.inner(grid, g);
        let j0 = cur.diagnostics.cost;
        let mut accepted: Option<(ControlPair, Evaluation)> = None;
        let mut s = step;
        for _ in 0..=MAX_BACKTRACKS {
            let mut trial = x.clone();
            trial.axpy(-s, g);
            // A failed state solve counts as a rejected step.
            if let Ok(state) = solve_state_implicit(params, grid, &trial, opts) {
                let j = cost_j(params, grid, &state, &trial)?;
                if j <= j0 - ARMIJO_C1 * s * gg && j < j0 {
                    let e = evaluate_at(params, grid, &trial, state)?;
                    accepted = Some((trial, e));
                    break;
                }
            }
            s *= 0.5;
        }
        let Some((next, e)) = accepted else {
            report.message = Some(format!(
                "line search failed after {MAX_BACKTRACKS} halvings at iteration {it}"
            ));
            return Ok((x, report));
        };
        let mut dx = next.clone();
        dx.axpy(-1.0, &x);
        let mut dg = e.gradient.clone();
        dg.axpy(-1.0, g);
        let sy = dx.inner(grid, &dg);
        let ss = dx.inner(grid, &dx);
        step = if sy > 0.0 && ss > 0.0 {
            ss / sy
        } else {
            1.0 / params.m_u.max(params.m_v)
        };
        x = next;
        cur = e;
        report.iterations = it;
        report.step_sizes.push(s);
        report.cost_history.push(cur.diagnostics.cost);
        report.residual_history.push(cur.diagnostics.gradient_norm);
        if cur.diagnostics.gradient_norm <= tol {
            report.converged = true;
            break;
        }
    }
    Ok((x, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitCertificate {
    pub eps_sequence: Vec<f64>,
    /// `|c_i - c_{i+1}|` between consecutive levels.
    pub control_drift: Vec<f64>,
    /// Space-time average of the facet fraction of the optimal angle, one
    /// entry per level, at the common threshold `facet_threshold`.
    pub facet_fraction: Vec<f64>,
    pub facet_threshold: f64,
    pub iterations: Vec<usize>,
    pub converged: Vec<bool>,
    pub final_cost: Vec<f64>,
    /// At the last level: largest distance of `f_eps'(theta_x)` from the sign
    /// set of `theta_x`, with cells below the facet threshold counted as facets.
    pub sgn_violation: f64,
    /// At the last level: scaled dual norm of the defect of the limiting
    /// angle-adjoint equation.
    pub weak_form_residual: f64,
}

/// Warm-started [`optimize`] over a decreasing list of `eps`.
pub fn eps_continuation(
    params: &ModelParams,
    grid: &Grid,
    initial: &ControlPair,
    eps_list: &[f64],
    tol: f64,
    max_iter: usize,
    opts: &SolverOptions,
) -> Result<(ControlPair, LimitCertificate)> {
    if eps_list.is_empty() {
        return Err(Error::InvalidParameter("eps_list must not be empty".into()));
    }
    if eps_list.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::InvalidParameter(format!(
            "eps_list must be strictly decreasing, got {eps_list:?}"
        )));
    }
    let last = *eps_list.last().unwrap();
    if !(last >= params.eps_floor) {
        return Err(Error::InvalidParameter(format!(
            "the last eps ({last}) must be at least eps_floor ({})",
            params.eps_floor
        )));
    }
    let threshold = 10.0 * last;
    let mut cert = LimitCertificate {
        eps_sequence: eps_list.to_vec(),
        control_drift: Vec::new(),
        facet_fraction: Vec::new(),
        facet_threshold: threshold,
        iterations: Vec::new(),
        converged: Vec::new(),
        final_cost: Vec::new(),
        sgn_violation: 0.0,
        weak_form_residual: 0.0,
    };
    let mut x = initial.clone();
    let mut p = params.clone();
    for (i, &eps) in eps_list.iter().enumerate() {
        p.eps = eps;
        let (next, rep) = optimize(&p, grid, &x, tol, max_iter, opts)?;
        if i > 0 {
            cert.control_drift.push(next.sub(&x).norm(grid));
        }
        x = next;
        let state = solve_state_implicit(&p, grid, &x, opts)?;
        let frac = (1..grid.levels())
            .map(|k| facet_fraction(grid, state.second.row(k), threshold))
            .sum::<f64>()
            / grid.n_time() as f64;
        cert.facet_fraction.push(frac);
        cert.iterations.push(rep.iterations);
        cert.converged.push(rep.converged);
        cert.final_cost.push(*rep.cost_history.last().unwrap());
        if i + 1 == eps_list.len() {
            cert.sgn_violation = sgn_violation(&p, grid, &state.second, threshold);
            let r = optimality_residuals(&p, grid, &x, opts)?;
            cert.weak_form_residual = r.z_equation;
        }
    }
    Ok((x, cert))
}

/// Largest distance of `f_eps'(theta_x)` from `Sgn(theta_x)` over space-time
/// cells. Cells with `|theta_x| <= threshold` count as facets, where `Sgn` is
/// `[-1, 1]`.
pub fn sgn_violation(
    params: &ModelParams,
    grid: &Grid,
    theta: &crate::field::SpaceTime,
    threshold: f64,
) -> f64 {
    let eps = params.eps_eff();
    let mut worst = 0.0_f64;
    for row in theta.rows() {
        for d in grid.cell_gradient(row) {
            let s = fe1(eps, d);
            let v = if d.abs() <= threshold {
                (s.abs() - 1.0).max(0.0)
            } else {
                (s - d.signum()).abs()
            };
            worst = worst.max(v);
        }
    }
    worst
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimalityResiduals {
    /// `|[M_u (u + p), M_v (v + z)]|` in `L2(Q)`.
    pub stationarity: f64,
    /// Scaled dual-norm defect of the order-adjoint equation with
    /// `xi = f_eps'(theta_x) z_x`.
    pub p_equation: f64,
    /// Scaled dual-norm defect of the angle-adjoint equation once `zeta` is
    /// identified with `(alpha f_eps'' z_x, psi_x)`.
    pub z_equation: f64,
    /// Scaled dual norm of `zeta` itself.
    pub zeta_norm: f64,
}

pub fn optimality_residuals(
    params: &ModelParams,
    grid: &Grid,
    control: &ControlPair,
    opts: &SolverOptions,
) -> Result<OptimalityResiduals> {
    let e = evaluate(params, grid, control, opts)?;
    let d = adjoint_defects(params, grid, &e.state, &e.adjoint)?;
    Ok(OptimalityResiduals {
        stationarity: e.diagnostics.gradient_norm,
        p_equation: d.p_equation,
        z_equation: d.z_equation,
        zeta_norm: d.zeta_norm,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdjointDefects {
    pub p_equation: f64,
    pub z_equation: f64,
    pub zeta_norm: f64,
}

/// Space-time weak-form defects of the two adjoint equations.
///
/// The discrete adjoint of the backward Euler scheme at level `k` belongs to
/// time `t_{k+1}`, so the fields are shifted by one level and interpolated
/// piecewise linearly in time. They are tested against `phi_j(x) chi_i(t)`,
/// with `chi_i` the time hats `i = 1..n_time` (which vanish at `t = 0`) and
/// `phi_j` the nodal hats (interior ones for the angle). Zero-order terms use
/// the consistent mass matrix; products are interpolated from the levels.
/// Each defect is the dual norm of the residual divided by the sum of the
/// dual norms of its time, operator and forcing parts.
pub fn adjoint_defects(
    params: &ModelParams,
    grid: &Grid,
    state: &FieldPair,
    adjoint: &FieldPair,
) -> Result<AdjointDefects> {
    let lin = linearization_coeffs(params, grid, state)?;
    let r = tracking_residual(params, state);
    let n = grid.n_space();
    let nt = grid.n_time();
    let tau = grid.tau();
    let m = grid.lumped_mass();
    let eps = params.eps_eff();
    // Level 0 has no discrete counterpart; extrapolate linearly.
    let shifted = |f: &crate::field::SpaceTime, k: usize| -> Vec<f64> {
        if k == 0 {
            f.row(0)
                .iter()
                .zip(f.row(1))
                .map(|(a, b)| 2.0 * a - b)
                .collect()
        } else {
            f.row(k - 1).to_vec()
        }
    };

    // Per level: time-mass loads, operator loads, forcing loads, zeta loads.
    let mut time = Vec::with_capacity(nt + 1);
    let mut oper = Vec::with_capacity(nt + 1);
    let mut force = Vec::with_capacity(nt + 1);
    let mut zeta = Vec::with_capacity(nt + 1);
    for k in 0..=nt {
        let (p, z) = (shifted(&adjoint.first, k), shifted(&adjoint.second, k));
        let az: Vec<f64> = z.iter().zip(lin.a.row(k)).map(|(x, a)| x * a).collect();
        time.push((consistent_mass(grid, &p), consistent_mass(grid, &az)));
        let mut c = lin.step(k);
        let zero_a = vec![0.0; grid.nodes()];
        c.a = &zero_a;
        let w: Vec<f64> = p.iter().zip(&z).flat_map(|(a, b)| [*a, *b]).collect();
        let ow = assemble_step(grid, params.nu, 1.0, &c).mul_vec(&w);
        let op: Vec<f64> = (0..=n).map(|j| ow[ip(j)] - m[j] * p[j]).collect();
        let oz: Vec<f64> = (0..=n).map(|j| ow[iz(j)]).collect();
        oper.push((op, oz));
        force.push((
            consistent_mass(grid, r.first.row(k))
                .iter()
                .map(|v| -v)
                .collect::<Vec<_>>(),
            consistent_mass(grid, r.second.row(k))
                .iter()
                .map(|v| -v)
                .collect::<Vec<_>>(),
        ));
        zeta.push(zeta_load(params, grid, state, &z, k, eps));
    }

    let hat = |f: &dyn Fn(usize) -> Vec<f64>, i: usize| -> Vec<f64> {
        let mut out = vec![0.0; n + 1];
        let weights: &[(usize, f64)] = if i < nt {
            &[(i - 1, 1.0), (i, 4.0), (i + 1, 1.0)]
        } else {
            &[(i - 1, 1.0), (i, 2.0)]
        };
        for &(k, wk) in weights {
            for (o, v) in out.iter_mut().zip(f(k)) {
                *o += tau * wk / 6.0 * v;
            }
        }
        out
    };
    let dhat = |f: &dyn Fn(usize) -> Vec<f64>, i: usize| -> Vec<f64> {
        let (a, b) = if i < nt {
            (f(i - 1), f(i + 1))
        } else {
            (f(i - 1), f(i).iter().map(|v| -v).collect())
        };
        a.iter().zip(&b).map(|(x, y)| 0.5 * (x - y)).collect()
    };

    let mut acc = Acc::default();
    for i in 1..=nt {
        for (eq, dirichlet) in [(0usize, false), (1usize, true)] {
            let pick = |pair: &(Vec<f64>, Vec<f64>)| {
                if eq == 0 {
                    pair.0.clone()
                } else {
                    pair.1.clone()
                }
            };
            let t = dhat(&|k| pick(&time[k]), i);
            let o = hat(&|k| pick(&oper[k]), i);
            let f = hat(&|k| pick(&force[k]), i);
            let total: Vec<f64> = (0..=n).map(|j| t[j] + o[j] + f[j]).collect();
            let norm = |load: &[f64]| -> Result<f64> {
                let mut d: Vec<f64> = load.iter().zip(&m).map(|(l, w)| l / (tau * w)).collect();
                if dirichlet {
                    d[0] = 0.0;
                    d[n] = 0.0;
                }
                Ok(tau * dual_norm_sq(grid, &d, dirichlet)?)
            };
            let slot = if eq == 0 { &mut acc.p } else { &mut acc.z };
            slot[0] += norm(&total)?;
            slot[1] += norm(&t)?;
            slot[2] += norm(&o)?;
            slot[3] += norm(&f)?;
            if eq == 1 {
                let zl = hat(&|k| zeta[k].clone(), i);
                acc.zeta += norm(&zl)?;
            }
        }
    }
    let rel = |v: [f64; 4]| {
        let s = v[1].sqrt() + v[2].sqrt() + v[3].sqrt();
        if s == 0.0 {
            v[0].sqrt()
        } else {
            v[0].sqrt() / s
        }
    };
    let zs = acc.z[1].sqrt() + acc.z[2].sqrt() + acc.z[3].sqrt();
    Ok(AdjointDefects {
        p_equation: rel(acc.p),
        z_equation: rel(acc.z),
        zeta_norm: if zs == 0.0 {
            acc.zeta.sqrt()
        } else {
            acc.zeta.sqrt() / zs
        },
    })
}

#[derive(Default)]
struct Acc {
    p: [f64; 4],
    z: [f64; 4],
    zeta: f64,
}

/// `(w, phi_j)` for the piecewise linear interpolant of `w`.
fn consistent_mass(grid: &Grid, w: &[f64]) -> Vec<f64> {
    let n = grid.n_space();
    let h6 = grid.h() / 6.0;
    let mut out = vec![0.0; n + 1];
    for c in 0..n {
        out[c] += h6 * (2.0 * w[c] + w[c + 1]);
        out[c + 1] += h6 * (w[c] + 2.0 * w[c + 1]);
    }
    out
}

/// Load vector of `psi -> (alpha(eta) f_eps''(theta_x) z_x, psi_x)` at level `k`.
fn zeta_load(
    params: &ModelParams,
    grid: &Grid,
    state: &FieldPair,
    z: &[f64],
    k: usize,
    eps: f64,
) -> Vec<f64> {
    let c = CellData::new(grid, state.first.row(k), state.second.row(k));
    let dz = grid.cell_gradient(z);
    let n = grid.n_space();
    let mut out = vec![0.0; n + 1];
    for cell in 0..n {
        let flux = params.mobility.alpha(c.eta_mid[cell]) * fe2(eps, c.dtheta[cell]) * dz[cell];
        out[cell] -= flux;
        out[cell + 1] += flux;
    }
    out[0] = 0.0;
    out[n] = 0.0;
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::Profile;
    use crate::field::SpaceTime;

    fn params(grid: &Grid) -> ModelParams {
        let mut p = ModelParams::with_defaults(grid);
        p.eta0 = Profile::Cosine {
            offset: 0.8,
            amplitude: 0.2,
            mode: 1,
        }
        .sample(grid);
        p.theta0 = Profile::Sine {
            amplitude: 0.5,
            mode: 1,
        }
        .sample(grid);
        p
    }

    #[test]
    fn rejects_missing_control_weights() {
        let g = Grid::new(8, 4, 0.1).unwrap();
        let mut p = params(&g);
        p.m_u = 0.0;
        p.m_v = 0.0;
        let err = optimize(
            &p,
            &g,
            &ControlPair::zeros(&g),
            1e-6,
            5,
            &SolverOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidParameter(_)));
    }

    #[test]
    fn uncontrolled_target_returns_immediately() {
        let g = Grid::new(10, 6, 0.1).unwrap();
        let mut p = params(&g);
        let opts = SolverOptions::default();
        let s = solve_state_implicit(&p, &g, &ControlPair::zeros(&g), &opts).unwrap();
        p.eta_ad = s.first;
        p.theta_ad = s.second;
        let (c, rep) = optimize(&p, &g, &ControlPair::zeros(&g), 1e-8, 10, &opts).unwrap();
        assert_eq!(rep.iterations, 0);
        assert!(rep.converged);
        assert_eq!(c.max_abs(), 0.0);
    }

    #[test]
    fn pure_control_cost_converges_quickly() {
        let g = Grid::new(10, 6, 0.1).unwrap();
        let mut p = params(&g);
        p.m_eta = 0.0;
        p.m_theta = 0.0;
        let start = ControlPair::new(
            SpaceTime::sample(&g, |t, x| 1.0 + t * x),
            SpaceTime::sample(&g, |_, x| x),
        );
        let (c, rep) = optimize(&p, &g, &start, 1e-10, 10, &SolverOptions::default()).unwrap();
        assert!(rep.converged);
        assert!(rep.iterations <= 2, "{rep:?}");
        assert!(c.max_abs() < 1e-10);
    }

    #[test]
    fn descent_is_monotone() {
        let g = Grid::new(12, 8, 0.1).unwrap();
        let p = params(&g);
        let (_, rep) = optimize(
            &p,
            &g,
            &ControlPair::zeros(&g),
            1e-9,
            15,
            &SolverOptions::default(),
        )
        .unwrap();
        for w in rep.cost_history.windows(2) {
            assert!(w[1] < w[0]);
        }
        assert!(rep.residual_history.iter().all(|r| r.is_finite()));
    }

    #[test]
    fn continuation_needs_decreasing_list() {
        let g = Grid::new(8, 4, 0.1).unwrap();
        let p = params(&g);
        let o = SolverOptions::default();
        let c = ControlPair::zeros(&g);
        assert!(eps_continuation(&p, &g, &c, &[0.1, 0.1], 1e-6, 3, &o).is_err());
        assert!(eps_continuation(&p, &g, &c, &[], 1e-6, 3, &o).is_err());
        assert!(eps_continuation(&p, &g, &c, &[0.1, 1e-12], 1e-6, 3, &o).is_err());
    }

    #[test]
    fn single_level_continuation_is_optimize() {
        let g = Grid::new(10, 6, 0.1).unwrap();
        let p = params(&g);
        let o = SolverOptions::default();
        let c0 = ControlPair::zeros(&g);
        let (a, _) = optimize(&p, &g, &c0, 1e-8, 5, &o).unwrap();
        let (b, cert) = eps_continuation(&p, &g, &c0, &[p.eps], 1e-8, 5, &o).unwrap();
        assert_eq!(a, b);
        assert!(cert.control_drift.is_empty());
    }

    #[test]
    fn sgn_candidate_stays_in_the_box() {
        let g = Grid::new(10, 2, 0.1).unwrap();
        let p = params(&g);
        let theta = SpaceTime::sample(&g, |_, x| (5.0 * x).sin());
        assert!(sgn_violation(&p, &g, &theta, 0.0) < 1.0);
        let flat = SpaceTime::nodal(&g);
        assert_eq!(sgn_violation(&p, &g, &flat, 1e-3), 0.0);
    }

    #[test]
    fn adjoint_defects_fall_at_first_order() {
        let run = |n: usize, nt: usize| {
            let g = Grid::new(n, nt, 0.1).unwrap();
            optimality_residuals(
                &params(&g),
                &g,
                &ControlPair::zeros(&g),
                &SolverOptions::default(),
            )
            .unwrap()
        };
        let (a, b) = (run(20, 40), run(40, 80));
        for (x, y) in [(a.p_equation, b.p_equation), (a.z_equation, b.z_equation)] {
            let order = (x / y).log2();
            assert!((order - 1.0).abs() < 0.2, "{a:?} {b:?}");
        }
        assert!(b.z_equation < 5e-3);
    }
}
