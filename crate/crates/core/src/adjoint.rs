//! Linearized state map, its discrete transpose, and the cost gradient.
//!
//! The state map here is the fully implicit scheme ([`solve_state_implicit`]).
//! Its derivative is a (P) solve with the coefficients of the second
//! variation taken at the new level of each step. The adjoint is the exact
//! transpose of that solve, written as a forward (P) solve in reversed time.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{ControlPair, FieldPair, SpaceTime};
use crate::grid::Grid;
use crate::linear::{solve_p, Sextuplet};
use crate::model::{cost_j, local_coeffs, ModelParams};
use crate::state::{solve_state_implicit, SolverOptions};

/// Coefficients of the linearized system around `state`: `a = alpha_0`,
/// `b = 0`, `lambda = g'(eta)`, and on cells `mu = alpha'' f`,
/// `omega = alpha' f'`, `A = alpha f''` at the effective `eps`.
pub fn linearization_coeffs(
    params: &ModelParams,
    grid: &Grid,
    state: &FieldPair,
) -> Result<Sextuplet> {
    state.check(grid)?;
    let eps = params.eps_eff();
    let (l, n, c) = (grid.levels(), grid.nodes(), grid.cells());
    let mut s = Sextuplet {
        a: SpaceTime::zeros(l, n),
        b: SpaceTime::zeros(l, n),
        mu: SpaceTime::zeros(l, c),
        lambda: SpaceTime::zeros(l, n),
        omega: SpaceTime::zeros(l, c),
        big_a: SpaceTime::zeros(l, c),
        nu: params.nu,
    };
    for k in 0..l {
        let lc = local_coeffs(params, grid, state.first.row(k), state.second.row(k), eps);
        s.a.row_mut(k)
            .copy_from_slice(&params.time_mobility.row(grid, grid.t(k)));
        s.lambda.row_mut(k).copy_from_slice(&lc.lambda);
        s.mu.row_mut(k).copy_from_slice(&lc.mu);
        s.omega.row_mut(k).copy_from_slice(&lc.omega);
        s.big_a.row_mut(k).copy_from_slice(&lc.big_a);
    }
    Ok(s)
}

/// Reversed-time coefficients of the adjoint. Reversed step `s` uses the
/// operator of forward step `n_time - s + 1`; `b` is the backward difference
/// quotient of the reversed `a`, so that `a_s - tau b_s = a_{s-1}`.
pub fn adjoint_coeffs(lin: &Sextuplet, grid: &Grid) -> Result<Sextuplet> {
    lin.check_shape(grid)?;
    let nt = grid.n_time();
    let stagger = |f: &SpaceTime| {
        let mut out = f.clone();
        for s in 1..=nt {
            out.row_mut(s).copy_from_slice(f.row(nt - s + 1));
        }
        let first = out.row(1).to_vec();
        out.row_mut(0).copy_from_slice(&first);
        out
    };
    let a = stagger(&lin.a);
    let mut b = SpaceTime::zeros(grid.levels(), grid.nodes());
    for s in 1..=nt {
        let (cur, prev) = (a.row(s), a.row(s - 1));
        let row: Vec<f64> = cur
            .iter()
            .zip(prev)
            .map(|(x, y)| (x - y) / grid.tau())
            .collect();
        b.row_mut(s).copy_from_slice(&row);
    }
    Ok(Sextuplet {
        a,
        b,
        mu: stagger(&lin.mu),
        lambda: stagger(&lin.lambda),
        omega: stagger(&lin.omega),
        big_a: stagger(&lin.big_a),
        nu: lin.nu,
    })
}

/// `[chi, gamma]`: the derivative of the state map in direction `[h, k]`.
pub fn solve_linearized(
    params: &ModelParams,
    lin: &Sextuplet,
    grid: &Grid,
    h_dir: &SpaceTime,
    k_dir: &SpaceTime,
) -> Result<FieldPair> {
    let dir = ControlPair::new(h_dir.clone(), k_dir.clone());
    dir.check(grid)?;
    apply_forward(
        lin,
        grid,
        &FieldPair::new(h_dir.scaled(params.m_u), k_dir.scaled(params.m_v)),
    )
}

/// The discrete solution operator of the linearized system with zero
/// initial data.
pub fn apply_forward(lin: &Sextuplet, grid: &Grid, forcing: &FieldPair) -> Result<FieldPair> {
    let zero = vec![0.0; grid.nodes()];
    solve_p(lin, grid, &zero, &zero, forcing)
}

/// Transpose of [`apply_forward`] with respect to the space-time pairing.
/// The last level of the result is zero.
pub fn apply_adjoint(adj: &Sextuplet, grid: &Grid, forcing: &FieldPair) -> Result<FieldPair> {
    forcing.check(grid)?;
    let mut rev = forcing.reverse_time();
    rev.first.row_mut(0).fill(0.0);
    rev.second.row_mut(0).fill(0.0);
    let zero = vec![0.0; grid.nodes()];
    Ok(solve_p(adj, grid, &zero, &zero, &rev)?.reverse_time())
}

/// The tracking residual `[M_eta (eta - eta_ad), M_theta (theta - theta_ad)]`.
pub fn tracking_residual(params: &ModelParams, state: &FieldPair) -> FieldPair {
    FieldPair::new(
        state.first.sub(&params.eta_ad).scaled(params.m_eta),
        state.second.sub(&params.theta_ad).scaled(params.m_theta),
    )
}

/// Adjoint pair `[p, z]` along a solved trajectory.
pub fn solve_adjoint(params: &ModelParams, grid: &Grid, state: &FieldPair) -> Result<FieldPair> {
    let lin = linearization_coeffs(params, grid, state)?;
    let adj = adjoint_coeffs(&lin, grid)?;
    apply_adjoint(&adj, grid, &tracking_residual(params, state))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientDiagnostics {
    pub cost: f64,
    pub p_norm: f64,
    pub z_norm: f64,
    pub gradient_norm: f64,
}

/// Everything one gradient evaluation produces.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub state: FieldPair,
    pub adjoint: FieldPair,
    pub gradient: ControlPair,
    pub diagnostics: GradientDiagnostics,
}

/// Solves state and adjoint and assembles `[M_u (u + p), M_v (v + z)]`.
pub fn evaluate(
    params: &ModelParams,
    grid: &Grid,
    control: &ControlPair,
    opts: &SolverOptions,
) -> Result<Evaluation> {
    let state = solve_state_implicit(params, grid, control, opts)?;
    evaluate_at(params, grid, control, state)
}

/// As [`evaluate`], reusing a trajectory already solved for `control`.
pub fn evaluate_at(
    params: &ModelParams,
    grid: &Grid,
    control: &ControlPair,
    state: FieldPair,
) -> Result<Evaluation> {
    let cost = cost_j(params, grid, &state, control)?;
    let adjoint = solve_adjoint(params, grid, &state)?;
    let mut gu = control.u.clone();
    gu.axpy(1.0, &adjoint.first);
    let mut gv = control.v.clone();
    gv.axpy(1.0, &adjoint.second);
    let gradient = ControlPair::new(gu.scaled(params.m_u), gv.scaled(params.m_v));
    let diagnostics = GradientDiagnostics {
        cost,
        p_norm: crate::field::st_inner(grid, &adjoint.first, &adjoint.first).sqrt(),
        z_norm: crate::field::st_inner(grid, &adjoint.second, &adjoint.second).sqrt(),
        gradient_norm: gradient.norm(grid),
    };
    Ok(Evaluation {
        state,
        adjoint,
        gradient,
        diagnostics,
    })
}

pub fn gradient(
    params: &ModelParams,
    grid: &Grid,
    control: &ControlPair,
    opts: &SolverOptions,
) -> Result<(ControlPair, GradientDiagnostics)> {
    let e = evaluate(params, grid, control, opts)?;
    Ok((e.gradient, e.diagnostics))
}

/// Cost of a control through the implicit state map.
pub fn cost_of(
    params: &ModelParams,
    grid: &Grid,
    control: &ControlPair,
    opts: &SolverOptions,
) -> Result<f64> {
    let state = solve_state_implicit(params, grid, control, opts)?;
    cost_j(params, grid, &state, control)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheckRow {
    pub delta: f64,
    pub fd_value: f64,
    pub adjoint_value: f64,
    pub rel_error: f64,
}

/// Forward difference quotients of the cost along `dir` against the adjoint
/// directional derivative, one row per `delta`.
pub fn grad_check(
    params: &ModelParams,
    grid: &Grid,
    control: &ControlPair,
    dir: &ControlPair,
    deltas: &[f64],
    opts: &SolverOptions,
) -> Result<Vec<GradCheckRow>> {
    dir.check(grid)?;
    let e = evaluate(params, grid, control, opts)?;
    let adjoint_value = e.gradient.inner(grid, dir);
    let mut rows = Vec::with_capacity(deltas.len());
    for &delta in deltas {
        if !(delta > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "finite-difference step must be positive, got {delta}"
            )));
        }
        let mut c = control.clone();
        c.axpy(delta, dir);
        let fd_value = (cost_of(params, grid, &c, opts)? - e.diagnostics.cost) / delta;
        let scale = adjoint_value.abs().max(fd_value.abs());
        let rel_error = if scale == 0.0 {
            0.0
        } else {
            (fd_value - adjoint_value).abs() / scale
        };
        rows.push(GradCheckRow {
            delta,
            fd_value,
            adjoint_value,
            rel_error,
        });
    }
    Ok(rows)
}

/// A smooth random direction: a few low sine modes in space times a smooth
/// profile in time, vanishing at the ends for the angle component.
pub fn random_direction(grid: &Grid, rng: &mut impl Rng) -> ControlPair {
    let mut field = || {
        let c: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        SpaceTime::sample(grid, |t, x| {
            let tt = t / grid.t_final();
            let pi = std::f64::consts::PI;
            (c[0] + c[1] * tt) * (pi * x).sin()
                + (c[2] + c[3] * tt) * (2.0 * pi * x).sin()
                + c[4] * (3.0 * pi * x).cos() * tt
                + c[5]
        })
    };
    let u = field();
    let mut v = field();
    for k in 0..grid.levels() {
        let row = v.row_mut(k);
        let n = row.len() - 1;
        row[0] = 0.0;
        row[n] = 0.0;
    }
    ControlPair::new(u, v)
}

/// Largest relative defect of `(P* y, x) = (y, P x)` over random pairs with
/// independent nodal values.
pub fn conjugacy_check(
    params: &ModelParams,
    grid: &Grid,
    state: &FieldPair,
    trials: usize,
    seed: u64,
) -> Result<f64> {
    if trials == 0 {
        return Err(Error::InvalidParameter(
            "conjugacy check needs at least one trial".into(),
        ));
    }
    let lin = linearization_coeffs(params, grid, state)?;
    let adj = adjoint_coeffs(&lin, grid)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0_f64;
    for _ in 0..trials {
        let mut noise = || {
            let mut f = SpaceTime::nodal(grid);
            for v in f.as_mut_slice() {
                *v = rng.gen_range(-1.0..1.0);
            }
            f
        };
        let x = FieldPair::new(noise(), noise());
        let y = FieldPair::new(noise(), noise());
        let px = apply_forward(&lin, grid, &x)?;
        let psy = apply_adjoint(&adj, grid, &y)?;
        worst = worst.max(relative_defect(psy.inner(grid, &x), y.inner(grid, &px)));
    }
    Ok(worst)
}

pub(crate) fn relative_defect(lhs: f64, rhs: f64) -> f64 {
    let scale = lhs.abs().max(rhs.abs());
    if scale == 0.0 {
        0.0
    } else {
        (lhs - rhs).abs() / scale
    }
}
