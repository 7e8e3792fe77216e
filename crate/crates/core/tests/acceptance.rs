//! Acceptance criteria 1-10. Each test writes one `PASS`/`FAIL` line to
//! stderr (unbuffered, so it shows up without `--nocapture`) and then
//! asserts.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::f64::consts::PI;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use kwc_core::adjoint::{conjugacy_check, grad_check, random_direction};
use kwc_core::catalog::{Mobility, Potential, Profile};
use kwc_core::linear::{solve_p, stability_probe, PData, Sextuplet};
use kwc_core::model::{f_eps, f_eps_gap, f_eps_prime, f_eps_second};
use kwc_core::optimizer::{eps_continuation, optimize};
use kwc_core::problems::ProblemSpec;
use kwc_core::state::{solve_state, solve_state_implicit, solve_state_minmove, SolverOptions};
use kwc_core::{adjoint, ControlPair, FieldPair, Grid, ModelParams, SpaceTime};

fn report(n: u32, name: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(
        std::io::stderr(),
        "criterion {n:>2} [{name}]: {verdict} ({detail})"
    );
    assert!(pass, "criterion {n} failed: {detail}");
}

fn opts() -> SolverOptions {
    SolverOptions::default()
}

fn build(spec: &ProblemSpec, grid: &Grid) -> ModelParams {
    spec.build(grid, &opts()).unwrap()
}

/// Least-squares slope of `log y` against `log x`.
fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

fn sci(v: &[f64]) -> String {
    let items: Vec<String> = v.iter().map(|x| format!("{x:.2e}")).collect();
    format!("[{}]", items.join(", "))
}

fn pairwise_slopes(x: &[f64], y: &[f64]) -> Vec<f64> {
    x.windows(2)
        .zip(y.windows(2))
        .map(|(a, b)| (b[0] / b[1]).ln() / (a[0] / a[1]).ln())
        .collect()
}

#[test]
fn criterion_01_regularized_absolute_value() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut bound_violations = 0usize;
    let mut lipschitz_violations = 0usize;
    let mut naive_violations = 0usize;
    for _ in 0..1_000_000 {
        let xi = rng.gen_range(-1.0..1.0) * 10f64.powf(rng.gen_range(-8.0..2.0));
        let eps = 10f64.powf(rng.gen_range(-8.0..0.0));
        let delta = 10f64.powf(rng.gen_range(-8.0..0.0));
        let fe = f_eps(eps, xi);
        if !((fe - xi.abs()).abs() <= eps) {
            bound_violations += 1;
        }
        if !(f_eps_gap(eps, delta, xi).abs() <= (eps - delta).abs()) {
            lipschitz_violations += 1;
        }
        if !((fe - f_eps(delta, xi)).abs() <= (eps - delta).abs()) {
            naive_violations += 1;
        }
    }
    let mut worst = 0.0_f64;
    for _ in 0..10_000 {
        let eps = 10f64.powf(rng.gen_range(-3.0..0.0));
        let xi = rng.gen_range(-3.0..3.0);
        let h = 1e-4 * eps;
        let d1 = f_eps_prime(eps, xi).unwrap();
        let d2 = f_eps_second(eps, xi).unwrap();
        let fd1 = (f_eps(eps, xi + h) - f_eps(eps, xi - h)) / (2.0 * h);
        let fd2 =
            (f_eps_prime(eps, xi + h).unwrap() - f_eps_prime(eps, xi - h).unwrap()) / (2.0 * h);
        // relative to the size of each derivative's range: 1 and 1 / eps
        worst = worst.max((fd1 - d1).abs() / d1.abs().max(1.0));
        worst = worst.max((fd2 - d2).abs() / d2.abs().max(1.0 / eps));
    }
    let pass = bound_violations == 0 && lipschitz_violations == 0 && worst <= 1e-6;
    report(
        1,
        "f_eps suite",
        pass,
        &format!(
            "1e6 samples: {bound_violations} bound and {lipschitz_violations} Lipschitz violations ({naive_violations} by 1 ulp with naive subtraction); worst derivative FD error {worst:.2e}"
        ),
    );
}

/// Max-norm error at `T` against `exact` for each grid of a ladder.
fn ladder<F: Fn(&Grid) -> (Vec<f64>, Vec<f64>)>(grids: &[Grid], run: F) -> Vec<f64> {
    grids
        .iter()
        .map(|g| {
            let (num, exact) = run(g);
            num.iter()
                .zip(&exact)
                .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()))
        })
        .collect()
}

#[test]
fn criterion_02_analytic_modal_decay() {
    let t = 0.1;
    let nu = 0.5;
    let heat = ProblemSpec {
        potential: Potential::Quadratic {
            stiffness: 0.0,
            center: 0.0,
        },
        ..ProblemSpec::heat()
    };
    let cos = |g: &Grid| {
        (0..g.nodes())
            .map(|j| (PI * g.x(j)).cos())
            .collect::<Vec<f64>>()
    };
    let sin = |g: &Grid| {
        let mut v: Vec<f64> = (0..g.nodes()).map(|j| (PI * g.x(j)).sin()).collect();
        let n = v.len() - 1;
        v[0] = 0.0;
        v[n] = 0.0;
        v
    };
    let rate_p = PI * PI;
    let rate_z = (1.0 + nu * nu) * PI * PI;

    // order equation: pure heat flow of a cosine mode
    let eta_run = |g: &Grid, reference: &dyn Fn(&Grid, f64) -> f64| {
        let p = build(&heat, g);
        let (traj, _) = solve_state(&p, g, &ControlPair::zeros(g), &opts()).unwrap();
        let last = traj.first.row(g.n_time()).to_vec();
        let exact = cos(g).iter().map(|c| reference(g, rate_p) * c).collect();
        (last, exact)
    };
    // (P) with identity coefficients
    let p_run = |g: &Grid, reference: &dyn Fn(&Grid, f64) -> f64| {
        let s = Sextuplet::identity(g, nu);
        let sol = solve_p(&s, g, &cos(g), &sin(g), &FieldPair::zeros(g)).unwrap();
        let mut num = sol.first.row(g.n_time()).to_vec();
        num.extend_from_slice(sol.second.row(g.n_time()));
        let mut exact: Vec<f64> = cos(g).iter().map(|c| reference(g, rate_p) * c).collect();
        exact.extend(sin(g).iter().map(|s| reference(g, rate_z) * s));
        (num, exact)
    };
    let analytic = |g: &Grid, rate: f64| (-rate * g.t_final()).exp();
    // Space ladders compare against implicit Euler applied to the exact
    // rate, which removes the time error from the comparison.
    let euler = |g: &Grid, rate: f64| (1.0 + g.tau() * rate).powi(-(g.n_time() as i32));

    let time_grids: Vec<Grid> = [20, 40, 80]
        .iter()
        .map(|&nt| Grid::new(400, nt, t).unwrap())
        .collect();
    let space_grids: Vec<Grid> = [8, 16, 32]
        .iter()
        .map(|&n| Grid::new(n, 200, t).unwrap())
        .collect();
    let taus: Vec<f64> = time_grids.iter().map(|g| g.tau()).collect();
    let hs: Vec<f64> = space_grids.iter().map(|g| g.h()).collect();

    let mut lines = Vec::new();
    let mut pass = true;
    for (name, run) in [
        (
            "eta",
            &eta_run as &dyn Fn(&Grid, &dyn Fn(&Grid, f64) -> f64) -> (Vec<f64>, Vec<f64>),
        ),
        ("P", &p_run),
    ] {
        let et = ladder(&time_grids, |g| run(g, &analytic));
        let es = ladder(&space_grids, |g| run(g, &euler));
        let st = pairwise_slopes(&taus, &et);
        let ss = pairwise_slopes(&hs, &es);
        pass &=
            st.iter().all(|s| (s - 1.0).abs() <= 0.2) && ss.iter().all(|s| (s - 2.0).abs() <= 0.4);
        lines.push(format!("{name}: tau slopes {st:.3?}, h slopes {ss:.3?}"));
    }
    report(2, "analytic modal decay", pass, &lines.join("; "));
}

#[test]
fn criterion_03_energy_dissipation() {
    let g = Grid::new(100, 200, 0.1).unwrap();
    let mut lines = Vec::new();
    let mut pass = true;
    for eps in [1e-1, 1e-3] {
        let spec = ProblemSpec {
            eps,
            ..ProblemSpec::facet()
        };
        let p = build(&spec, &g);
        let (_, rep) = solve_state(&p, &g, &ControlPair::zeros(&g), &opts()).unwrap();
        let e0 = rep[0].energy_total;
        let worst = rep
            .windows(2)
            .map(|w| w[1].energy_total - w[0].energy_total)
            .fold(f64::MIN, f64::max);
        let allowed = 10.0 * g.tau() * e0;
        pass &= worst <= allowed;
        lines.push(format!(
            "eps {eps:e}: E0 {e0:.4}, E_T {:.4}, largest step increase {worst:.2e} (allowed {allowed:.2e})",
            rep.last().unwrap().energy_total
        ));
    }
    report(3, "energy dissipation", pass, &lines.join("; "));
}

#[test]
fn criterion_04_contraction() {
    let g = Grid::new(100, 100, 0.1).unwrap();
    let p = build(&ProblemSpec::facet(), &g);
    let zero = ControlPair::zeros(&g);
    let (base, _) = solve_state(&p, &g, &zero, &opts()).unwrap();
    let mut constants = Vec::new();
    for delta in [1e-1, 1e-2, 1e-3] {
        let mut q = p.clone();
        for j in 0..g.nodes() {
            let x = g.x(j);
            q.eta0[j] += delta * (PI * x).cos();
            if j > 0 && j < g.n_space() {
                q.theta0[j] += delta * (PI * x).sin();
            }
        }
        let (traj, _) = solve_state(&q, &g, &zero, &opts()).unwrap();
        constants.push(traj.sup_distance(&g, &base) / delta);
    }
    let max = constants.iter().cloned().fold(f64::MIN, f64::max);
    let min = constants.iter().cloned().fold(f64::MAX, f64::min);
    let variation = (max - min) / min;
    report(
        4,
        "contraction",
        variation <= 0.25,
        &format!(
            "fitted C per delta {constants:.4?}, variation {:.1}%",
            100.0 * variation
        ),
    );
}

#[test]
fn criterion_05_conjugacy() {
    let g = Grid::new(50, 50, 0.1).unwrap();
    let p = build(&ProblemSpec::facet(), &g);
    let state = solve_state_implicit(&p, &g, &ControlPair::zeros(&g), &opts()).unwrap();
    let defect = conjugacy_check(&p, &g, &state, 20, 5).unwrap();
    report(
        5,
        "conjugacy",
        defect <= 1e-10,
        &format!("max relative defect over 20 trials {defect:.2e}"),
    );
}

#[test]
fn criterion_06_gradient_check() {
    let g = Grid::new(50, 50, 0.1).unwrap();
    let p = build(&ProblemSpec::facet(), &g);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    // a generic base point; at zero control the slope is tiny next to the
    // control-penalty curvature and truncation alone exceeds the tolerance
    let base = random_direction(&g, &mut rng);
    let dir = random_direction(&g, &mut rng);
    let deltas: Vec<f64> = (1..=12).map(|e| 10f64.powi(-e)).collect();
    let rows = grad_check(&p, &g, &base, &dir, &deltas, &opts()).unwrap();
    let errors: Vec<f64> = rows.iter().map(|r| r.rel_error).collect();
    let at_1e4 = errors[3];
    let best = errors
        .iter()
        .cloned()
        .enumerate()
        .fold((0, f64::MAX), |a, (i, e)| if e < a.1 { (i, e) } else { a });
    let v_shape = best.0 > 0
        && best.0 + 1 < errors.len()
        && errors[0] > best.1
        && *errors.last().unwrap() > best.1;
    report(
        6,
        "gradient check",
        at_1e4 <= 1e-3 && v_shape,
        &format!(
            "rel error {at_1e4:.2e} at delta 1e-4; errors over delta 1e-1..1e-12 {}; minimum at delta 1e-{}",
            sci(&errors),
            best.0 + 1
        ),
    );
}

#[test]
fn criterion_07_optimization() {
    let g = Grid::new(40, 40, 0.1).unwrap();
    let spec = ProblemSpec::reachable();
    let p = build(&spec, &g);
    let generating = spec.generating_control(&g).unwrap();
    let j_gen = adjoint::cost_of(&p, &g, &generating, &opts()).unwrap();
    let (_, rep) = optimize(&p, &g, &ControlPair::zeros(&g), 1e-6, 200, &opts()).unwrap();
    let monotone = rep.cost_history.windows(2).all(|w| w[1] < w[0]);
    let j_final = *rep.cost_history.last().unwrap();
    let residual = *rep.residual_history.last().unwrap();
    let pass =
        rep.converged && residual <= 1e-6 && rep.iterations <= 200 && monotone && j_final <= j_gen;
    report(
        7,
        "optimization",
        pass,
        &format!(
            "{} iterations, residual {residual:.2e}, monotone {monotone}, cost {:.4e} -> {j_final:.4e} vs generating control {j_gen:.4e}",
            rep.iterations, rep.cost_history[0]
        ),
    );
}

#[test]
fn criterion_08_eps_continuation() {
    let g = Grid::new(80, 80, 0.1).unwrap();
    let p = build(&ProblemSpec::facet(), &g);
    let eps_list = [1e-1, 3e-2, 1e-2, 3e-3, 1e-3];
    let (_, cert) = eps_continuation(
        &p,
        &g,
        &ControlPair::zeros(&g),
        &eps_list,
        1e-6,
        200,
        &opts(),
    )
    .unwrap();
    let d = &cert.control_drift;
    let drift_down = d[d.len() - 1] < d[d.len() - 2];
    let facets_up = cert.facet_fraction.windows(2).all(|w| w[1] >= w[0]);
    let pass =
        drift_down && facets_up && cert.sgn_violation <= 1e-2 && cert.weak_form_residual <= 1e-2;
    report(
        8,
        "eps continuation",
        pass,
        &format!(
            "drift {}, facet fraction {:.3?}, sgn violation {:.2e}, weak-form residual {:.2e}, iterations {:?}, converged {:?}",
            sci(&cert.control_drift), cert.facet_fraction, cert.sgn_violation, cert.weak_form_residual, cert.iterations, cert.converged
        ),
    );
}

/// Smooth random field in `[mid - half, mid + half]`, sampled at nodes or at
/// cell midpoints.
fn smooth(grid: &Grid, cells: bool, mid: f64, half: f64, rng: &mut impl Rng) -> SpaceTime {
    let modes: Vec<(f64, f64, f64)> = (1..=3)
        .map(|_| {
            (
                rng.gen_range(-1.0..1.0),
                rng.gen_range(0.0..2.0 * PI),
                rng.gen_range(0.0..2.0 * PI),
            )
        })
        .collect();
    let width = if cells { grid.cells() } else { grid.nodes() };
    let shift = if cells { 0.5 * grid.h() } else { 0.0 };
    let rows: Vec<Vec<f64>> = (0..grid.levels())
        .map(|k| {
            let t = grid.t(k) / grid.t_final();
            (0..width)
                .map(|j| {
                    let x = grid.x(j) + shift;
                    let wave: f64 = modes
                        .iter()
                        .enumerate()
                        .map(|(m, (r, phi, w))| {
                            r * ((m as f64 + 1.0) * PI * x + phi).cos() * (w + PI * t).cos()
                        })
                        .sum();
                    mid + half * wave / 3.0
                })
                .collect()
        })
        .collect();
    SpaceTime::from_rows(&rows).unwrap()
}

fn random_sext(grid: &Grid, rng: &mut impl Rng) -> Sextuplet {
    let mut s = Sextuplet::identity(grid, 1.0);
    s.a = smooth(grid, false, 1.0, 0.5, rng);
    s.b = smooth(grid, false, 0.0, 0.5, rng);
    s.lambda = smooth(grid, false, 0.0, 0.5, rng);
    s.omega = smooth(grid, true, 0.0, 0.5, rng);
    s.mu = smooth(grid, true, 0.5, 0.5, rng);
    s.big_a = smooth(grid, true, 0.5, 0.5, rng);
    s
}

fn random_data(grid: &Grid, rng: &mut impl Rng) -> PData {
    let mut d = PData::zeros(grid);
    for v in d.p0.iter_mut() {
        *v = rng.gen_range(-1.0..1.0);
    }
    let n = grid.n_space();
    for j in 1..n {
        d.z0[j] = rng.gen_range(-1.0..1.0);
    }
    for v in d
        .forcing
        .first
        .as_mut_slice()
        .iter_mut()
        .chain(d.forcing.second.as_mut_slice())
    {
        *v = rng.gen_range(-1.0..1.0);
    }
    d
}

/// Adds `delta` times a smooth random perturbation that keeps `a > 0` and `mu >= 0`.
fn perturb(
    g: &Grid,
    s: &Sextuplet,
    d: &PData,
    delta: f64,
    rng: &mut impl Rng,
) -> (Sextuplet, PData) {
    let mut s2 = s.clone();
    let mut d2 = d.clone();
    s2.a.axpy(delta, &smooth(g, false, 0.0, 0.4, rng));
    s2.mu.axpy(delta, &smooth(g, true, 0.5, 0.5, rng));
    s2.big_a.axpy(delta, &smooth(g, true, 0.5, 0.5, rng));
    s2.b.axpy(delta, &smooth(g, false, 0.0, 1.0, rng));
    s2.lambda.axpy(delta, &smooth(g, false, 0.0, 1.0, rng));
    s2.omega.axpy(delta, &smooth(g, true, 0.0, 1.0, rng));
    for v in d2
        .forcing
        .first
        .as_mut_slice()
        .iter_mut()
        .chain(d2.forcing.second.as_mut_slice())
    {
        *v += delta * rng.gen_range(-1.0..1.0);
    }
    let n = d2.p0.len() - 1;
    for j in 0..=n {
        d2.p0[j] += delta * rng.gen_range(-1.0..1.0);
        if j > 0 && j < n {
            d2.z0[j] += delta * rng.gen_range(-1.0..1.0);
        }
    }
    (s2, d2)
}

#[test]
fn criterion_09_stability_probe() {
    let g = Grid::new(24, 40, 0.05).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut held = 0;
    let mut tightest = 0.0_f64;
    for _ in 0..10 {
        let s = random_sext(&g, &mut rng);
        let d = random_data(&g, &mut rng);
        let (s2, d2) = perturb(&g, &s, &d, rng.gen_range(1e-3..1e-1), &mut rng);
        let rep = stability_probe(&g, &s, &d, &s2, &d2, 0.5).unwrap();
        if rep.holds {
            held += 1;
        }
        for (l, b) in rep.lhs.iter().zip(&rep.bound).skip(1) {
            if b.is_finite() && *b > 0.0 {
                tightest = tightest.max(l / b);
            }
        }
    }
    // response to one fixed perturbation direction, scaled over three decades
    let s = random_sext(&g, &mut rng);
    let d = random_data(&g, &mut rng);
    let deltas = [1e-1, 1e-2, 1e-3, 1e-4];
    let seed: u64 = rng.gen();
    let responses: Vec<f64> = deltas
        .iter()
        .map(|&delta| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let (s2, d2) = perturb(&g, &s, &d, delta, &mut r);
            let rep = stability_probe(&g, &s, &d, &s2, &d2, 0.5).unwrap();
            rep.lhs.iter().cloned().fold(0.0, f64::max)
        })
        .collect();
    let slope = loglog_slope(&deltas, &responses);
    report(
        9,
        "stability probe",
        held == 10 && (slope - 2.0).abs() <= 0.1,
        &format!("bound held in {held}/10 trials, largest lhs/bound {tightest:.2e}; squared-response slope {slope:.3}"),
    );
}

fn minmove_spec() -> ProblemSpec {
    ProblemSpec {
        nu: 0.5,
        mobility: Mobility::Quadratic {
            base: 0.1,
            curvature: 1.0,
            clip: 2.0,
        },
        theta0: Profile::Plateau {
            amplitude: 1.0,
            left: 0.3,
            right: 0.7,
            width: 0.05,
        },
        ..ProblemSpec::facet()
    }
}

#[test]
fn criterion_10_minimizing_movement() {
    let t = 0.04;
    let n = 32;
    let spec = minmove_spec();
    let reference = {
        let g = Grid::new(n, 8000, t).unwrap();
        let p = build(&spec, &g);
        let (traj, _) = solve_state(&p, &g, &ControlPair::zeros(&g), &opts()).unwrap();
        (
            traj.first.row(g.n_time()).to_vec(),
            traj.second.row(g.n_time()).to_vec(),
        )
    };
    let dist = |traj: &FieldPair, g: &Grid| {
        let de: Vec<f64> = traj
            .first
            .row(g.n_time())
            .iter()
            .zip(&reference.0)
            .map(|(a, b)| a - b)
            .collect();
        let dt: Vec<f64> = traj
            .second
            .row(g.n_time())
            .iter()
            .zip(&reference.1)
            .map(|(a, b)| a - b)
            .collect();
        (g.inner(&de, &de) + g.inner(&dt, &dt)).sqrt()
    };
    let steps = [250, 500, 1000];
    let mut taus = Vec::new();
    let mut e_split = Vec::new();
    let mut e_mm = Vec::new();
    let mut est_all = true;
    let mut est_500 = false;
    for &nt in &steps {
        let g = Grid::new(n, nt, t).unwrap();
        let p = build(&spec, &g);
        let zero = ControlPair::zeros(&g);
        let (split, _) = solve_state(&p, &g, &zero, &opts()).unwrap();
        let (mm, rep) = solve_state_minmove(&p, &g, &zero, &opts()).unwrap();
        est_all &= rep.est_holds;
        if nt == 500 {
            est_500 = rep.est_holds
                && rep.steps.len() == 500
                && rep.steps.iter().all(|s| s.est_lhs <= s.est_rhs);
        }
        taus.push(g.tau());
        e_split.push(dist(&split, &g));
        e_mm.push(dist(&mm, &g));
    }
    let s_split = pairwise_slopes(&taus, &e_split);
    let s_mm = pairwise_slopes(&taus, &e_mm);
    let first_order = |s: &[f64]| s.iter().all(|v| (v - 1.0).abs() <= 0.2);
    let pass = est_500 && est_all && first_order(&s_split) && first_order(&s_mm);
    report(
        10,
        "minimizing movement",
        pass,
        &format!(
            "errors vs refined reference: split {} (slopes {s_split:.3?}), minmove {} (slopes {s_mm:.3?}); per-step estimate on the 500-step run: {est_500}",
            sci(&e_split),
            sci(&e_mm)
        ),
    );
}
