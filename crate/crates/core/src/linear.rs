//! The linear parabolic system (P):
//!
//! ```text
//! p_t - p_xx + (mu + lambda) p + omega z_x = h,                  p_x = 0 on the boundary
//! a z_t + b z - ((A + nu^2) z_x + omega p)_x = k,                z = 0 on the boundary
//! ```
//!
//! Each implicit Euler step solves the `p`/`z` pair as one banded system with
//! unknowns interleaved as `[p_0, z_0, p_1, z_1, ...]`. Coefficients are taken
//! at the new level and the forcing at the old one; `b z` is lagged. The step
//! matrix is symmetric, which the adjoint relies on.

use serde::{Deserialize, Serialize};

use crate::banded::{solve_tridiagonal, BandMatrix};
use crate::error::{Error, Result};
use crate::field::{FieldPair, SpaceTime};
use crate::grid::Grid;

#[inline]
pub(crate) fn ip(j: usize) -> usize {
    2 * j
}

#[inline]
pub(crate) fn iz(j: usize) -> usize {
    2 * j + 1
}

/// Coefficients of (P). `a`, `b`, `lambda` live on nodes; `mu`, `omega`, `big_a`
/// on cells (one value per cell, midpoint quadrature).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sextuplet {
    pub a: SpaceTime,
    pub b: SpaceTime,
    pub mu: SpaceTime,
    pub lambda: SpaceTime,
    pub omega: SpaceTime,
    pub big_a: SpaceTime,
    pub nu: f64,
}

/// Which positivity rule to apply to `A`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Admissibility {
    /// `inf A > 0`, as in the definition of the class.
    Strict,
    /// `inf (A + nu^2) > 0`; the `nu^2` diffusion carries the positivity.
    Relaxed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Membership {
    pub inf_a: f64,
    pub inf_mu: f64,
    pub inf_big_a: f64,
    pub bounded: bool,
    pub failures: Vec<String>,
}

impl Membership {
    pub fn ok(&self) -> bool {
        self.failures.is_empty()
    }
}

impl Sextuplet {
    /// `a = A = 1`, everything else zero: two decoupled heat equations.
    pub fn identity(grid: &Grid, nu: f64) -> Self {
        let nodes = |v: f64| SpaceTime::constant_in_time(grid.levels(), &vec![v; grid.nodes()]);
        let cells = |v: f64| SpaceTime::constant_in_time(grid.levels(), &vec![v; grid.cells()]);
        Self {
            a: nodes(1.0),
            b: nodes(0.0),
            mu: cells(0.0),
            lambda: nodes(0.0),
            omega: cells(0.0),
            big_a: cells(1.0),
            nu,
        }
    }

    pub fn check_shape(&self, grid: &Grid) -> Result<()> {
        let (l, n, c) = (grid.levels(), grid.nodes(), grid.cells());
        for (name, f, w) in [
            ("a", &self.a, n),
            ("b", &self.b, n),
            ("lambda", &self.lambda, n),
            ("mu", &self.mu, c),
            ("omega", &self.omega, c),
            ("A", &self.big_a, c),
        ] {
            if f.levels() != l || f.width() != w {
                return Err(Error::Shape(format!(
                    "sextuplet component {name}: expected {l}x{w}, got {}x{}",
                    f.levels(),
                    f.width()
                )));
            }
        }
        Ok(())
    }

    /// Evaluates every condition of the admissible class.
    pub fn membership(&self, rule: Admissibility) -> Membership {
        let mut failures = Vec::new();
        let inf_a = self.a.min();
        let inf_mu = self.mu.min();
        let inf_big_a = self.big_a.min();
        let all = [
            &self.a,
            &self.b,
            &self.mu,
            &self.lambda,
            &self.omega,
            &self.big_a,
        ];
        let bounded = all.iter().all(|f| f.is_finite());
        if !bounded {
            failures.push("all coefficients must be bounded (finite)".to_string());
        }
        if !(inf_a > 0.0) {
            failures.push(format!(
                "a must have a positive lower bound (inf a = {inf_a})"
            ));
        }
        if !(inf_mu >= 0.0) {
            failures.push(format!("mu must be nonnegative (inf mu = {inf_mu})"));
        }
        match rule {
            Admissibility::Strict => {
                if !(inf_big_a > 0.0) {
                    failures.push(format!(
                        "A must have a positive lower bound (inf A = {inf_big_a})"
                    ));
                }
            }
            Admissibility::Relaxed => {
                let nu2 = self.nu * self.nu;
                if !(inf_big_a + nu2 > 0.0) {
                    failures.push(format!(
                        "A + nu^2 must have a positive lower bound (inf A + nu^2 = {})",
                        inf_big_a + nu2
                    ));
                }
            }
        }
        if !(self.nu > 0.0) {
            failures.push(format!("nu must be positive, got {}", self.nu));
        }
        Membership {
            inf_a,
            inf_mu,
            inf_big_a,
            bounded,
            failures,
        }
    }

    pub fn validate(&self, grid: &Grid, rule: Admissibility) -> Result<()> {
        self.check_shape(grid)?;
        let m = self.membership(rule);
        if m.ok() {
            Ok(())
        } else {
            Err(Error::Admissibility(m.failures.join("; ")))
        }
    }

    /// Level `k` maps to level `n_time - k` in every component.
    pub fn reverse_time(&self) -> Self {
        Self {
            a: self.a.reverse_time(),
            b: self.b.reverse_time(),
            mu: self.mu.reverse_time(),
            lambda: self.lambda.reverse_time(),
            omega: self.omega.reverse_time(),
            big_a: self.big_a.reverse_time(),
            nu: self.nu,
        }
    }

    pub(crate) fn step(&self, k: usize) -> StepCoeffs<'_> {
        StepCoeffs {
            a: self.a.row(k),
            lambda: self.lambda.row(k),
            mu: self.mu.row(k),
            omega: self.omega.row(k),
            big_a: self.big_a.row(k),
        }
    }

    /// `sup |a| + sup |a_t| + sup |a_x|` from difference quotients.
    pub fn a_w1_inf(&self, grid: &Grid) -> f64 {
        let mut dt = 0.0_f64;
        for k in 1..grid.levels() {
            for (x, y) in self.a.row(k).iter().zip(self.a.row(k - 1)) {
                dt = dt.max((x - y).abs() / grid.tau());
            }
        }
        let mut dx = 0.0_f64;
        for r in self.a.rows() {
            for d in grid.cell_gradient(r) {
                dx = dx.max(d.abs());
            }
        }
        self.a.max_abs() + dt + dx
    }
}

/// One level of coefficients, as consumed by [`assemble_step`].
pub(crate) struct StepCoeffs<'a> {
    pub a: &'a [f64],
    pub lambda: &'a [f64],
    pub mu: &'a [f64],
    pub omega: &'a [f64],
    pub big_a: &'a [f64],
}

/// `Mass + tau K` for one step, with the Dirichlet rows and columns of `z`
/// replaced by identity rows.
pub(crate) fn assemble_step(grid: &Grid, nu: f64, tau: f64, c: &StepCoeffs<'_>) -> BandMatrix {
    let n = grid.n_space();
    let h = grid.h();
    let m = grid.lumped_mass();
    let mut mat = BandMatrix::zeros(2 * (n + 1), 3, 3);
    for j in 0..=n {
        mat.add(ip(j), ip(j), m[j] * (1.0 + tau * c.lambda[j]));
        mat.add(iz(j), iz(j), m[j] * c.a[j]);
    }
    let nu2 = nu * nu;
    for cell in 0..n {
        let (l, r) = (cell, cell + 1);
        let sp = tau / h;
        let mu = 0.25 * tau * h * c.mu[cell];
        for (i, j, s) in [(l, l, 1.0), (l, r, -1.0), (r, l, -1.0), (r, r, 1.0)] {
            mat.add(ip(i), ip(j), s * sp + mu);
        }
        let sz = tau * (c.big_a[cell] + nu2) / h;
        for (i, j, s) in [(l, l, 1.0), (l, r, -1.0), (r, l, -1.0), (r, r, 1.0)] {
            mat.add(iz(i), iz(j), s * sz);
        }
        let w = 0.5 * tau * c.omega[cell];
        for row in [l, r] {
            mat.add(ip(row), iz(l), -w);
            mat.add(ip(row), iz(r), w);
            mat.add(iz(l), ip(row), -w);
            mat.add(iz(r), ip(row), w);
        }
    }
    mat.pin(iz(0), 1.0);
    mat.pin(iz(n), 1.0);
    mat
}

pub(crate) fn split(w: &[f64]) -> (Vec<f64>, Vec<f64>) {
    (
        w.iter().step_by(2).copied().collect(),
        w.iter().skip(1).step_by(2).copied().collect(),
    )
}

/// Solves (P) from `[p0, z0]` under forcing `[h, k]` (`forcing.first`,
/// `forcing.second`).
pub fn solve_p(
    sext: &Sextuplet,
    grid: &Grid,
    p0: &[f64],
    z0: &[f64],
    forcing: &FieldPair,
) -> Result<FieldPair> {
    sext.validate(grid, Admissibility::Relaxed)?;
    grid.check_nodes("p0", p0)?;
    grid.check_nodes("z0", z0)?;
    forcing.check(grid)?;
    let n = grid.n_space();
    let tau = grid.tau();
    let m = grid.lumped_mass();
    let mut out = FieldPair::zeros(grid);
    out.first.row_mut(0).copy_from_slice(p0);
    out.second.row_mut(0).copy_from_slice(z0);
    let mut rhs = vec![0.0; 2 * (n + 1)];
    for k in 1..grid.levels() {
        let mat = assemble_step(grid, sext.nu, tau, &sext.step(k));
        let (pp, zp) = (out.first.row(k - 1), out.second.row(k - 1));
        let (hf, kf) = (forcing.first.row(k - 1), forcing.second.row(k - 1));
        let (a, b) = (sext.a.row(k), sext.b.row(k));
        for j in 0..=n {
            rhs[ip(j)] = m[j] * (pp[j] + tau * hf[j]);
            rhs[iz(j)] = m[j] * ((a[j] - tau * b[j]) * zp[j] + tau * kf[j]);
        }
        rhs[iz(0)] = 0.0;
        rhs[iz(n)] = 0.0;
        let w = mat.solve(&rhs)?;
        let (p, z) = split(&w);
        out.first.row_mut(k).copy_from_slice(&p);
        out.second.row_mut(k).copy_from_slice(&z);
    }
    Ok(out)
}

/// Initial pair and forcing pair for (P).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PData {
    pub p0: Vec<f64>,
    pub z0: Vec<f64>,
    pub forcing: FieldPair,
}

impl PData {
    pub fn zeros(grid: &Grid) -> Self {
        Self {
            p0: vec![0.0; grid.nodes()],
            z0: vec![0.0; grid.nodes()],
            forcing: FieldPair::zeros(grid),
        }
    }

    pub fn solve(&self, sext: &Sextuplet, grid: &Grid) -> Result<FieldPair> {
        solve_p(sext, grid, &self.p0, &self.z0, &self.forcing)
    }

    pub fn axpy(&mut self, c: f64, other: &Self) {
        for (x, y) in self.p0.iter_mut().zip(&other.p0) {
            *x += c * y;
        }
        for (x, y) in self.z0.iter_mut().zip(&other.z0) {
            *x += c * y;
        }
        self.forcing.axpy(c, &other.forcing);
    }

    /// `|p0|^2 + |z0|^2 + int |h|_{V*}^2 + |k|_{V0*}^2`, square-rooted.
    pub fn norm(&self, grid: &Grid) -> Result<f64> {
        let mut s = grid.inner(&self.p0, &self.p0) + grid.inner(&self.z0, &self.z0);
        for k in 0..grid.n_time() {
            s += grid.tau()
                * (dual_norm_sq(grid, self.forcing.first.row(k), false)?
                    + dual_norm_sq(grid, self.forcing.second.row(k), true)?);
        }
        Ok(s.sqrt())
    }
}

/// `|w|_V^2 = |w_x|^2 + |w|^2`.
pub fn v_norm_sq(grid: &Grid, w: &[f64]) -> f64 {
    let d = grid.cell_gradient(w);
    grid.h() * d.iter().map(|x| x * x).sum::<f64>() + grid.inner(w, w)
}

/// Squared dual norm of the functional `psi -> (f, psi)` on `V` (or `V_0`
/// when `dirichlet`), through its Riesz representative for `|.|_V`.
pub fn dual_norm_sq(grid: &Grid, f: &[f64], dirichlet: bool) -> Result<f64> {
    let n = grid.n_space();
    let h = grid.h();
    let m = grid.lumped_mass();
    let mut diag: Vec<f64> = m.clone();
    let mut lower = vec![-1.0 / h; n];
    let mut upper = vec![-1.0 / h; n];
    for c in 0..n {
        diag[c] += 1.0 / h;
        diag[c + 1] += 1.0 / h;
    }
    let mut rhs: Vec<f64> = f.iter().zip(&m).map(|(x, w)| x * w).collect();
    if dirichlet {
        for j in [0, n] {
            diag[j] = 1.0;
            rhs[j] = 0.0;
        }
        upper[0] = 0.0;
        lower[0] = 0.0;
        lower[n - 1] = 0.0;
        upper[n - 1] = 0.0;
    }
    let r = solve_tridiagonal(&lower, &diag, &upper, &rhs)?;
    Ok(r.iter().zip(&rhs).map(|(a, b)| a * b).sum())
}

/// Discrete `Z`-norm of a solution:
/// `sup |w|_H^2 + int |w|_V^2 + int |w_t|_{V*}^2`, square-rooted.
pub fn solution_norm(grid: &Grid, sol: &FieldPair) -> Result<f64> {
    let mut sup = 0.0_f64;
    let mut integral = 0.0;
    for k in 0..grid.levels() {
        let (p, z) = (sol.first.row(k), sol.second.row(k));
        sup = sup.max(grid.inner(p, p) + grid.inner(z, z));
        if k >= 1 {
            let tau = grid.tau();
            integral += tau * (v_norm_sq(grid, p) + v_norm_sq(grid, z));
            let dp: Vec<f64> = p
                .iter()
                .zip(sol.first.row(k - 1))
                .map(|(a, b)| (a - b) / tau)
                .collect();
            let dz: Vec<f64> = z
                .iter()
                .zip(sol.second.row(k - 1))
                .map(|(a, b)| (a - b) / tau)
                .collect();
            integral += tau * (dual_norm_sq(grid, &dp, false)? + dual_norm_sq(grid, &dz, true)?);
        }
    }
    Ok((sup + integral).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub c0_star: f64,
    /// `|p1 - p2|^2 + |sqrt(a1) (z1 - z2)|^2` per level.
    pub lhs: Vec<f64>,
    /// Gronwall-integrated right-hand side per level.
    pub bound: Vec<f64>,
    pub slack: f64,
    pub holds: bool,
}

fn l4_sq(weights: &[f64], f: impl Iterator<Item = f64>) -> f64 {
    f.zip(weights)
        .map(|(x, w)| w * x.powi(4))
        .sum::<f64>()
        .sqrt()
}

fn h_sq(weights: &[f64], f: impl Iterator<Item = f64>) -> f64 {
    f.zip(weights).map(|(x, w)| w * x * x).sum()
}

/// Compares two solutions of (P) against the Gronwall form of the
/// continuous-dependence estimate. The estimate holds when every level
/// satisfies `lhs <= (1 + slack) bound`; `slack` absorbs discretization error.
pub fn stability_probe(
    grid: &Grid,
    sext1: &Sextuplet,
    data1: &PData,
    sext2: &Sextuplet,
    data2: &PData,
    slack: f64,
) -> Result<StabilityReport> {
    if !(slack >= 0.0 && slack.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "slack must be finite and non-negative, got {slack}"
        )));
    }
    let s1 = data1.solve(sext1, grid)?;
    let s2 = data2.solve(sext2, grid)?;
    let nu2 = sext1.nu * sext1.nu;
    let inf_a = sext1.a.min();
    let c0 = 81.0 * (1.0 + nu2) / 1.0_f64.min(nu2).min(inf_a)
        * (1.0
            + sext1.a_w1_inf(grid)
            + sext1.b.max_abs()
            + sext1.lambda.max_abs()
            + sext1.omega.max_abs().powi(2));
    let m = grid.lumped_mass();
    let hw = vec![grid.h(); grid.cells()];
    let tau = grid.tau();
    let da = sext1.a.sub(&sext2.a);
    let da_sup = da.max_abs();

    let lhs: Vec<f64> = (0..grid.levels())
        .map(|k| {
            let a1 = sext1.a.row(k);
            let dp = s1
                .first
                .row(k)
                .iter()
                .zip(s2.first.row(k))
                .map(|(x, y)| x - y);
            let dz = s1
                .second
                .row(k)
                .iter()
                .zip(s2.second.row(k))
                .zip(a1)
                .map(|((x, y), a)| a.sqrt() * (x - y));
            h_sq(&m, dp) + h_sq(&m, dz)
        })
        .collect();

    // forcing and coefficient terms on step k (level k-1 forcing, level k coefficients)
    let mut source = vec![0.0; grid.levels()];
    for k in 1..grid.levels() {
        let dh: Vec<f64> = diff(
            data1.forcing.first.row(k - 1),
            data2.forcing.first.row(k - 1),
        );
        let dk: Vec<f64> = diff(
            data1.forcing.second.row(k - 1),
            data2.forcing.second.row(k - 1),
        );
        let mut f = dual_norm_sq(grid, &dh, false)? + dual_norm_sq(grid, &dk, true)?;

        let p2 = s2.first.row(k);
        let z2 = s2.second.row(k);
        let dz2: Vec<f64> = z2
            .iter()
            .zip(s2.second.row(k - 1))
            .map(|(a, b)| (a - b) / tau)
            .collect();
        let zx = grid.cell_gradient(z2);
        let row = |x: &SpaceTime, y: &SpaceTime| diff(x.row(k), y.row(k));
        let dmu = row(&sext1.mu, &sext2.mu);
        let dom = row(&sext1.omega, &sext2.omega);
        let db = row(&sext1.b, &sext2.b);
        let dl = row(&sext1.lambda, &sext2.lambda);
        let dbig = row(&sext1.big_a, &sext2.big_a);
        let dax = grid.cell_gradient(da.row(k));

        let r0 = dual_norm_sq(grid, &dz2, true)?
            * (da_sup * da_sup + l4_sq(&hw, dax.iter().copied()))
            + v_norm_sq(grid, p2)
                * (h_sq(&hw, dmu.iter().copied()) + l4_sq(&hw, dom.iter().copied()))
            + v_norm_sq(grid, z2)
                * (l4_sq(&m, db.iter().copied())
                    + h_sq(&m, p2.iter().zip(&dl).map(|(p, l)| p * l)))
            + h_sq(&hw, zx.iter().zip(&dom).map(|(z, o)| z * o))
            + h_sq(&hw, zx.iter().zip(&dbig).map(|(z, a)| z * a));
        f += r0;
        source[k] = f;
    }

    let growth = (3.0 * c0 * tau).exp();
    let mut bound = vec![0.0; grid.levels()];
    bound[0] = lhs[0];
    for k in 1..grid.levels() {
        let incr = bound[k - 1] + 2.0 * c0 * tau * source[k];
        // keep 0 * inf out of the recursion when the growth factor overflows
        bound[k] = if incr == 0.0 { 0.0 } else { growth * incr };
    }
    let holds = lhs
        .iter()
        .zip(&bound)
        .all(|(l, b)| *l <= b * (1.0 + slack) || b.is_infinite());
    Ok(StabilityReport {
        c0_star: c0,
        lhs,
        bound,
        slack,
        holds,
    })
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}
