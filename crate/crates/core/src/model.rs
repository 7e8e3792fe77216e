//! Model data, the regularized absolute value `f_eps`, the free energy and
//! the tracking cost.

use serde::{Deserialize, Serialize};

use crate::catalog::{Mobility, Potential, TimeMobility};
use crate::error::{Error, Result};
use crate::field::{st_inner, ControlPair, FieldPair, SpaceTime};
use crate::grid::Grid;

/// `f_eps(xi) = sqrt(eps^2 + xi^2)`.
pub fn f_eps(eps: f64, xi: f64) -> f64 {
    eps.hypot(xi)
}

/// `f_eps(xi) - f_delta(xi)` without cancellation, as
/// `(eps - delta)(eps + delta) / (f_eps + f_delta)`. Subtracting two rounded
/// values loses the Lipschitz bound by an ulp when `xi` is small and the two
/// values sit in different binades.
pub fn f_eps_gap(eps: f64, delta: f64, xi: f64) -> f64 {
    let sum = f_eps(eps, xi) + f_eps(delta, xi);
    if sum == 0.0 {
        return 0.0;
    }
    (eps - delta) * ((eps + delta) / sum)
}

/// `f_eps'(xi) = xi / f_eps(xi)`; undefined at `eps = xi = 0`.
pub fn f_eps_prime(eps: f64, xi: f64) -> Result<f64> {
    if eps == 0.0 && xi == 0.0 {
        return Err(Error::SubdifferentialPoint);
    }
    Ok(xi / eps.hypot(xi))
}

/// `f_eps''(xi) = eps^2 / f_eps(xi)^3`; undefined at `eps = xi = 0`.
pub fn f_eps_second(eps: f64, xi: f64) -> Result<f64> {
    if eps == 0.0 && xi == 0.0 {
        return Err(Error::SubdifferentialPoint);
    }
    let f = eps.hypot(xi);
    Ok(eps * eps / (f * f * f))
}

// Infallible variants for inner loops; `eps > 0` is guaranteed by the caller.
#[inline]
pub(crate) fn fe(eps: f64, xi: f64) -> f64 {
    eps.hypot(xi)
}

#[inline]
pub(crate) fn fe1(eps: f64, xi: f64) -> f64 {
    xi / eps.hypot(xi)
}

#[inline]
pub(crate) fn fe2(eps: f64, xi: f64) -> f64 {
    let f = eps.hypot(xi);
    eps * eps / (f * f * f)
}

/// Half-width of the range on which coefficient assumptions are sampled.
pub const WORKING_RANGE: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub nu: f64,
    pub eps: f64,
    /// Lower bound on the regularization used wherever `f_eps` must be
    /// differentiated.
    pub eps_floor: f64,
    pub delta_star: f64,
    pub m_eta: f64,
    pub m_theta: f64,
    pub m_u: f64,
    pub m_v: f64,
    pub potential: Potential,
    pub mobility: Mobility,
    pub time_mobility: TimeMobility,
    pub eta0: Vec<f64>,
    pub theta0: Vec<f64>,
    pub eta_ad: SpaceTime,
    pub theta_ad: SpaceTime,
}

impl ModelParams {
    /// Default coefficients with the equilibrium `eta = 1`, `theta = 0` as
    /// initial data and target.
    pub fn with_defaults(grid: &Grid) -> Self {
        Self {
            nu: 0.05,
            eps: 0.1,
            eps_floor: 1e-8,
            delta_star: 0.1,
            m_eta: 1.0,
            m_theta: 1.0,
            m_u: 1.0,
            m_v: 1.0,
            potential: Potential::default(),
            mobility: Mobility::default(),
            time_mobility: TimeMobility::default(),
            eta0: vec![1.0; grid.nodes()],
            theta0: vec![0.0; grid.nodes()],
            eta_ad: SpaceTime::sample(grid, |_, _| 1.0),
            theta_ad: SpaceTime::nodal(grid),
        }
    }

    pub fn eps_eff(&self) -> f64 {
        self.eps.max(self.eps_floor)
    }

    pub fn initial_pair(&self) -> (Vec<f64>, Vec<f64>) {
        (self.eta0.clone(), self.theta0.clone())
    }

    pub fn targets(&self) -> FieldPair {
        FieldPair::new(self.eta_ad.clone(), self.theta_ad.clone())
    }

    /// Checks every standing assumption on the data against `grid`.
    pub fn validate(&self, grid: &Grid) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(self.nu.is_finite() && self.nu > 0.0) {
            return bad(format!("nu must be positive, got {}", self.nu));
        }
        if !(self.eps.is_finite() && self.eps >= 0.0) {
            return bad(format!("eps must be nonnegative, got {}", self.eps));
        }
        if !(self.eps_floor.is_finite() && self.eps_floor > 0.0) {
            return bad(format!(
                "eps_floor must be positive, got {}",
                self.eps_floor
            ));
        }
        if !(self.delta_star > 0.0 && self.delta_star < 1.0) {
            return bad(format!(
                "delta_star must lie in (0, 1) so that alpha, alpha_0 >= delta_star is meaningful, got {}",
                self.delta_star
            ));
        }
        for (name, w) in [
            ("m_eta", self.m_eta),
            ("m_theta", self.m_theta),
            ("m_u", self.m_u),
            ("m_v", self.m_v),
        ] {
            if !(w.is_finite() && w >= 0.0) {
                return bad(format!("{name} must be nonnegative, got {w}"));
            }
        }
        self.validate_coefficients(grid)?;
        grid.check_nodes("eta0", &self.eta0)?;
        grid.check_nodes("theta0", &self.theta0)?;
        if self.eta0.iter().chain(&self.theta0).any(|v| !v.is_finite()) {
            return bad("initial data must be finite".into());
        }
        let n = grid.n_space();
        if self.theta0[0] != 0.0 || self.theta0[n] != 0.0 {
            return bad(format!(
                "theta0 must vanish at both ends, got {} and {}",
                self.theta0[0], self.theta0[n]
            ));
        }
        self.eta_ad.check_nodal(grid, "eta_ad")?;
        self.theta_ad.check_nodal(grid, "theta_ad")?;
        Ok(())
    }

    fn validate_coefficients(&self, grid: &Grid) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        let a = &self.mobility;
        let p = &self.potential;
        let Potential::Quadratic { stiffness, center } = *p;
        if !(stiffness.is_finite() && center.is_finite()) {
            return bad("potential coefficients must be finite".into());
        }
        if a.alpha_prime(0.0).abs() > 1e-14 {
            return bad(format!("alpha'(0) must vanish, got {}", a.alpha_prime(0.0)));
        }
        let samples = 2001;
        let step = 1e-4;
        for i in 0..samples {
            let s = -WORKING_RANGE + 2.0 * WORKING_RANGE * i as f64 / (samples - 1) as f64;
            let al = a.alpha(s);
            if !(al >= self.delta_star) {
                return bad(format!(
                    "alpha({s}) = {al} is below delta_star = {}",
                    self.delta_star
                ));
            }
            if !(a.alpha_second(s) >= 0.0) {
                return bad(format!("alpha''({s}) is negative"));
            }
            let big_g = p.big_g(s);
            if !(big_g >= 0.0) {
                return bad(format!("G({s}) = {big_g} is negative"));
            }
            let fd = (p.big_g(s + step) - p.big_g(s - step)) / (2.0 * step);
            if (fd - p.g(s)).abs() > 1e-5 * (1.0 + p.g(s).abs()) {
                return bad(format!("g({s}) does not match the derivative of G"));
            }
        }
        let a0_min = self.time_mobility.min(grid.t_final());
        if !(a0_min >= self.delta_star) {
            return bad(format!(
                "alpha_0 drops to {a0_min}, below delta_star = {}",
                self.delta_star
            ));
        }
        Ok(())
    }
}

/// Per-cell quantities shared by the energy and its derivatives.
pub(crate) struct CellData {
    pub deta: Vec<f64>,
    pub dtheta: Vec<f64>,
    pub eta_mid: Vec<f64>,
}

impl CellData {
    pub fn new(grid: &Grid, eta: &[f64], theta: &[f64]) -> Self {
        Self {
            deta: grid.cell_gradient(eta),
            dtheta: grid.cell_gradient(theta),
            eta_mid: grid.cell_average(eta),
        }
    }
}

fn check_pair(grid: &Grid, eta: &[f64], theta: &[f64]) -> Result<()> {
    grid.check_nodes("eta", eta)?;
    grid.check_nodes("theta", theta)
}

/// Discrete free energy
/// `1/2 |eta_x|^2 + 1/2 |eta|^2 + 1/2 |nu f_eps(theta_x) + alpha(eta) / nu|^2`.
pub fn energy_phi(params: &ModelParams, grid: &Grid, eta: &[f64], theta: &[f64]) -> Result<f64> {
    check_pair(grid, eta, theta)?;
    Ok(phi_with(params, grid, eta, theta, params.eps))
}

pub(crate) fn phi_with(
    params: &ModelParams,
    grid: &Grid,
    eta: &[f64],
    theta: &[f64],
    eps: f64,
) -> f64 {
    let h = grid.h();
    let nu = params.nu;
    let c = CellData::new(grid, eta, theta);
    let mut cells = 0.0;
    for i in 0..grid.cells() {
        let coupled = nu * fe(eps, c.dtheta[i]) + params.mobility.alpha(c.eta_mid[i]) / nu;
        cells += c.deta[i] * c.deta[i] + coupled * coupled;
    }
    0.5 * h * cells + 0.5 * grid.inner(eta, eta)
}

/// `int G(eta) - eta^2 / 2 - alpha(eta)^2 / (2 nu^2)`, the non-convex remainder.
pub fn potential_g_hat(
    params: &ModelParams,
    grid: &Grid,
    eta: &[f64],
    _theta: &[f64],
) -> Result<f64> {
    check_pair(grid, eta, _theta)?;
    Ok(g_hat(params, grid, eta))
}

pub(crate) fn g_hat(params: &ModelParams, grid: &Grid, eta: &[f64]) -> f64 {
    let m = grid.lumped_mass();
    let nodal: f64 = eta
        .iter()
        .zip(&m)
        .map(|(&e, &w)| w * (params.potential.big_g(e) - 0.5 * e * e))
        .sum();
    let nu2 = params.nu * params.nu;
    let cells: f64 = grid
        .cell_average(eta)
        .iter()
        .map(|&s| params.mobility.alpha(s).powi(2))
        .sum();
    nodal - grid.h() * cells / (2.0 * nu2)
}

/// `energy_phi + potential_g_hat`, evaluated in the cancelled form
/// `1/2 |eta_x|^2 + int G(eta) + int alpha(eta) f_eps(theta_x) + nu^2/2 int f_eps(theta_x)^2`.
pub(crate) fn total_energy(
    params: &ModelParams,
    grid: &Grid,
    eta: &[f64],
    theta: &[f64],
    eps: f64,
) -> f64 {
    let h = grid.h();
    let nu2 = params.nu * params.nu;
    let c = CellData::new(grid, eta, theta);
    let mut cells = 0.0;
    for i in 0..grid.cells() {
        let f = fe(eps, c.dtheta[i]);
        cells += 0.5 * c.deta[i] * c.deta[i]
            + params.mobility.alpha(c.eta_mid[i]) * f
            + 0.5 * nu2 * f * f;
    }
    let m = grid.lumped_mass();
    let bulk: f64 = eta
        .iter()
        .zip(&m)
        .map(|(&e, &w)| w * params.potential.big_g(e))
        .sum();
    h * cells + bulk
}

/// Node and cell coefficients of the second variation of the energy at
/// `(eta, theta)`: `lambda = g'(eta)` on nodes, and on cells
/// `mu = alpha'' f`, `omega = alpha' f'`, `A = alpha f''`.
pub(crate) struct LocalCoeffs {
    pub lambda: Vec<f64>,
    pub mu: Vec<f64>,
    pub omega: Vec<f64>,
    pub big_a: Vec<f64>,
}

pub(crate) fn local_coeffs(
    params: &ModelParams,
    grid: &Grid,
    eta: &[f64],
    theta: &[f64],
    eps: f64,
) -> LocalCoeffs {
    let c = CellData::new(grid, eta, theta);
    let a = &params.mobility;
    let mut mu = Vec::with_capacity(grid.cells());
    let mut omega = Vec::with_capacity(grid.cells());
    let mut big_a = Vec::with_capacity(grid.cells());
    for i in 0..grid.cells() {
        let (s, d) = (c.eta_mid[i], c.dtheta[i]);
        mu.push(a.alpha_second(s) * fe(eps, d));
        omega.push(a.alpha_prime(s) * fe1(eps, d));
        big_a.push(a.alpha(s) * fe2(eps, d));
    }
    LocalCoeffs {
        lambda: eta.iter().map(|&e| params.potential.g_prime(e)).collect(),
        mu,
        omega,
        big_a,
    }
}

/// Tracking cost
/// `M_eta/2 |eta - eta_ad|^2 + M_theta/2 |theta - theta_ad|^2 + M_u/2 |u|^2 + M_v/2 |v|^2`
/// in `L2(Q)`.
pub fn cost_j(
    params: &ModelParams,
    grid: &Grid,
    state: &FieldPair,
    control: &ControlPair,
) -> Result<f64> {
    state.check(grid)?;
    control.check(grid)?;
    params.eta_ad.check_nodal(grid, "eta_ad")?;
    params.theta_ad.check_nodal(grid, "theta_ad")?;
    let de = state.first.sub(&params.eta_ad);
    let dt = state.second.sub(&params.theta_ad);
    Ok(0.5
        * (params.m_eta * st_inner(grid, &de, &de)
            + params.m_theta * st_inner(grid, &dt, &dt)
            + params.m_u * st_inner(grid, &control.u, &control.u)
            + params.m_v * st_inner(grid, &control.v, &control.v)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn grid(n: usize) -> Grid {
        Grid::new(n, 4, 1.0).unwrap()
    }

    #[test]
    fn f_eps_reference_values() {
        assert_eq!(f_eps(0.5, 0.0), 0.5);
        assert_eq!(f_eps(0.0, -3.0), 3.0);
        assert_relative_eq!(
            f_eps_prime(1.0, 1.0).unwrap(),
            0.5_f64.sqrt(),
            epsilon = 1e-15
        );
        assert_relative_eq!(f_eps_second(1.0, 0.0).unwrap(), 1.0);
        assert_eq!(f_eps_second(0.0, 2.0).unwrap(), 0.0);
    }

    #[test]
    fn derivatives_fail_at_the_kink() {
        assert!(matches!(
            f_eps_prime(0.0, 0.0),
            Err(Error::SubdifferentialPoint)
        ));
        assert!(matches!(
            f_eps_second(0.0, 0.0),
            Err(Error::SubdifferentialPoint)
        ));
        assert_eq!(f_eps_prime(0.0, -2.0).unwrap(), -1.0);
    }

    #[test]
    fn constant_state_energy() {
        let g = grid(8);
        let p = ModelParams::with_defaults(&g);
        let c = 0.7;
        let eta = vec![c; 9];
        let theta = vec![0.0; 9];
        let expect = 0.5 * c * c + 0.5 * (p.nu * p.eps + p.mobility.alpha(c) / p.nu).powi(2);
        assert_relative_eq!(
            energy_phi(&p, &g, &eta, &theta).unwrap(),
            expect,
            max_relative = 1e-14
        );
    }

    #[test]
    fn zero_state_with_constant_mobility() {
        let g = grid(5);
        let mut p = ModelParams::with_defaults(&g);
        p.eps = 0.0;
        p.mobility = Mobility::Constant {
            value: p.delta_star,
        };
        let z = vec![0.0; 6];
        let d = p.delta_star;
        let nu2 = p.nu * p.nu;
        assert_relative_eq!(
            energy_phi(&p, &g, &z, &z).unwrap(),
            d * d / (2.0 * nu2),
            max_relative = 1e-14
        );
        p.potential = Potential::Quadratic {
            stiffness: 1.0,
            center: 0.0,
        };
        assert_relative_eq!(
            potential_g_hat(&p, &g, &z, &z).unwrap(),
            -d * d / (2.0 * nu2),
            max_relative = 1e-14
        );
    }

    #[test]
    fn g_hat_at_the_well() {
        let g = grid(6);
        let mut p = ModelParams::with_defaults(&g);
        p.mobility = Mobility::Quadratic {
            base: p.delta_star,
            curvature: 1.0,
            clip: 10.0,
        };
        let one = vec![1.0; 7];
        let a1 = p.delta_star + 1.0;
        let expect = -0.5 - a1 * a1 / (2.0 * p.nu * p.nu);
        assert_relative_eq!(
            potential_g_hat(&p, &g, &one, &one).unwrap(),
            expect,
            max_relative = 1e-13
        );
    }

    #[test]
    fn cancelled_form_matches_the_sum() {
        let g = grid(13);
        let p = ModelParams::with_defaults(&g);
        let eta: Vec<f64> = (0..14).map(|j| (0.4 * j as f64).sin()).collect();
        let mut theta: Vec<f64> = (0..14).map(|j| (0.9 * j as f64).cos()).collect();
        theta[0] = 0.0;
        theta[13] = 0.0;
        let sum = energy_phi(&p, &g, &eta, &theta).unwrap()
            + potential_g_hat(&p, &g, &eta, &theta).unwrap();
        assert_relative_eq!(
            total_energy(&p, &g, &eta, &theta, p.eps),
            sum,
            max_relative = 1e-12
        );
        assert!(total_energy(&p, &g, &eta, &theta, p.eps) >= 0.0);
    }

    #[test]
    fn shape_errors() {
        let g = grid(4);
        let p = ModelParams::with_defaults(&g);
        assert!(matches!(
            energy_phi(&p, &g, &[0.0; 4], &[0.0; 5]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn cost_reference_values() {
        let g = Grid::new(6, 5, 1.0).unwrap();
        let mut p = ModelParams::with_defaults(&g);
        let state = p.targets();
        let zero = ControlPair::zeros(&g);
        assert_eq!(cost_j(&p, &g, &state, &zero).unwrap(), 0.0);
        p.m_eta = 0.0;
        p.m_theta = 0.0;
        p.m_u = 2.0;
        let u = ControlPair::new(SpaceTime::sample(&g, |_, _| 1.0), SpaceTime::nodal(&g));
        assert_relative_eq!(
            cost_j(&p, &g, &state, &u).unwrap(),
            1.0,
            max_relative = 1e-14
        );
    }

    #[test]
    fn defaults_validate() {
        let g = grid(10);
        ModelParams::with_defaults(&g).validate(&g).unwrap();
    }

    #[test]
    fn validation_rejects_bad_data() {
        let g = grid(10);
        let base = ModelParams::with_defaults(&g);
        let mut p = base.clone();
        p.delta_star = 1.5;
        assert!(p.validate(&g).unwrap_err().to_string().contains("(0, 1)"));
        let mut p = base.clone();
        p.nu = 0.0;
        assert!(p.validate(&g).is_err());
        let mut p = base.clone();
        p.theta0[0] = 0.1;
        assert!(p.validate(&g).is_err());
        let mut p = base.clone();
        p.mobility = Mobility::Constant { value: 0.05 };
        assert!(p.validate(&g).is_err());
        let mut p = base.clone();
        p.time_mobility = TimeMobility::Affine {
            base: 1.0,
            time_rate: -0.95,
            space_slope: 0.0,
        };
        assert!(p.validate(&g).is_err());
        let mut p = base.clone();
        p.potential = Potential::Quadratic {
            stiffness: -1.0,
            center: 0.0,
        };
        assert!(p.validate(&g).is_err());
        let mut p = base;
        p.eta0.pop();
        assert!(matches!(p.validate(&g), Err(Error::Shape(_))));
    }

    proptest! {
        #[test]
        fn uniform_estimates(eps in 0.0..1.0_f64, xi in -50.0..50.0_f64) {
            let f = f_eps(eps, xi);
            prop_assert!(f >= eps && f >= xi.abs());
            prop_assert!(f - xi.abs() <= eps);
            if eps > 0.0 || xi != 0.0 {
                let d = f_eps_prime(eps, xi).unwrap();
                prop_assert!((-1.0..=1.0).contains(&d));
                prop_assert!(xi * d >= 0.0);
                prop_assert!(f - xi * d >= 0.0);
                prop_assert!(f_eps_second(eps, xi).unwrap() >= 0.0);
            }
        }

        #[test]
        fn midpoint_convexity(eps in 0.0..1.0_f64, a in -5.0..5.0_f64, b in -5.0..5.0_f64) {
            let mid = f_eps(eps, 0.5 * (a + b));
            prop_assert!(mid <= 0.5 * (f_eps(eps, a) + f_eps(eps, b)) + 1e-15);
        }
    }
}
