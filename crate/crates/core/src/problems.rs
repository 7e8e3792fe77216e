//! Named problem set-ups, described by catalog entries so they can be
//! written to and read from configuration files.

use serde::{Deserialize, Serialize};

use crate::catalog::{Mobility, Potential, Profile, TimeMobility};
use crate::error::Result;
use crate::field::{ControlPair, SpaceTime};
use crate::grid::Grid;
use crate::model::ModelParams;
use crate::state::{solve_state_implicit, SolverOptions};

/// Desired trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Target {
    /// The same profiles at every level.
    Profiles { eta: Profile, theta: Profile },
    /// The trajectory driven by the time-constant control `[u, v]`.
    Generated { u: Profile, v: Profile },
}

/// A problem described by catalog entries; missing keys take the values of
/// [`ProblemSpec::facet`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemSpec {
    pub nu: f64,
    pub eps: f64,
    pub eps_floor: f64,
    pub delta_star: f64,
    pub m_eta: f64,
    pub m_theta: f64,
    pub m_u: f64,
    pub m_v: f64,
    pub potential: Potential,
    pub mobility: Mobility,
    pub time_mobility: TimeMobility,
    pub eta0: Profile,
    pub theta0: Profile,
    pub target: Target,
}

impl Default for ProblemSpec {
    fn default() -> Self {
        Self::facet()
    }
}

impl ProblemSpec {
    /// A rotated middle grain between two outer grains, with an order dip at
    /// the centre; the target asks for a half-rotated flat middle grain.
    pub fn facet() -> Self {
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
            eta0: Profile::Dip {
                base: 1.0,
                depth: 0.3,
                center: 0.5,
                width: 0.1,
            },
            theta0: Profile::Plateau {
                amplitude: 1.0,
                left: 0.3,
                right: 0.7,
                width: 0.05,
            },
            target: Target::Profiles {
                eta: Profile::Constant { value: 1.0 },
                theta: Profile::Plateau {
                    amplitude: 0.5,
                    left: 0.3,
                    right: 0.7,
                    width: 0.05,
                },
            },
        }
    }

    /// Facet initial data tracking the trajectory of a known smooth control.
    /// The forcing is `m_u u`, so heavy weights make the control cheap.
    pub fn reachable() -> Self {
        Self {
            m_u: 100.0,
            m_v: 100.0,
            target: Target::Generated {
                u: Profile::Cosine {
                    offset: 0.02,
                    amplitude: 0.05,
                    mode: 1,
                },
                v: Profile::Sine {
                    amplitude: 0.05,
                    mode: 1,
                },
            },
            ..Self::facet()
        }
    }

    /// Constant mobility, linear `g` and a single cosine mode of `eta`: the
    /// order equation is a linear heat equation decoupled from the angle.
    pub fn heat() -> Self {
        Self {
            potential: Potential::Quadratic {
                stiffness: 1.0,
                center: 0.0,
            },
            mobility: Mobility::Constant { value: 0.5 },
            eta0: Profile::Cosine {
                offset: 0.0,
                amplitude: 1.0,
                mode: 1,
            },
            theta0: Profile::Constant { value: 0.0 },
            target: Target::Profiles {
                eta: Profile::Constant { value: 0.0 },
                theta: Profile::Constant { value: 0.0 },
            },
            ..Self::facet()
        }
    }

    /// The generating control of a [`Target::Generated`] target, sampled on `grid`.
    pub fn generating_control(&self, grid: &Grid) -> Option<ControlPair> {
        match self.target {
            Target::Generated { u, v } => Some(ControlPair::new(
                SpaceTime::constant_in_time(grid.levels(), &u.sample(grid)),
                SpaceTime::constant_in_time(grid.levels(), &v.sample(grid)),
            )),
            Target::Profiles { .. } => None,
        }
    }

    /// Samples everything on `grid`. Generated targets are solved with the
    /// implicit scheme.
    pub fn build(&self, grid: &Grid, opts: &SolverOptions) -> Result<ModelParams> {
        let mut p = ModelParams {
            nu: self.nu,
            eps: self.eps,
            eps_floor: self.eps_floor,
            delta_star: self.delta_star,
            m_eta: self.m_eta,
            m_theta: self.m_theta,
            m_u: self.m_u,
            m_v: self.m_v,
            potential: self.potential,
            mobility: self.mobility,
            time_mobility: self.time_mobility,
            eta0: self.eta0.sample(grid),
            theta0: self.theta0.sample(grid),
            eta_ad: SpaceTime::nodal(grid),
            theta_ad: SpaceTime::nodal(grid),
        };
        match self.target {
            Target::Profiles { eta, theta } => {
                p.eta_ad = SpaceTime::constant_in_time(grid.levels(), &eta.sample(grid));
                p.theta_ad = SpaceTime::constant_in_time(grid.levels(), &theta.sample(grid));
                p.validate(grid)?;
            }
            Target::Generated { .. } => {
                let control = self.generating_control(grid).expect("generated target");
                let traj = solve_state_implicit(&p, grid, &control, opts)?;
                p.eta_ad = traj.first;
                p.theta_ad = traj.second;
            }
        }
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::st_inner;
    use crate::model::cost_j;

    #[test]
    fn named_problems_validate() {
        let g = Grid::new(20, 10, 0.05).unwrap();
        let opts = SolverOptions::default();
        for spec in [
            ProblemSpec::facet(),
            ProblemSpec::reachable(),
            ProblemSpec::heat(),
        ] {
            spec.build(&g, &opts).unwrap().validate(&g).unwrap();
        }
    }

    #[test]
    fn generated_target_is_reached_by_its_control() {
        let g = Grid::new(20, 10, 0.05).unwrap();
        let opts = SolverOptions::default();
        let spec = ProblemSpec::reachable();
        let p = spec.build(&g, &opts).unwrap();
        let c = spec.generating_control(&g).unwrap();
        let state = solve_state_implicit(&p, &g, &c, &opts).unwrap();
        let j = cost_j(&p, &g, &state, &c).unwrap();
        let j_controls =
            0.5 * (p.m_u * st_inner(&g, &c.u, &c.u) + p.m_v * st_inner(&g, &c.v, &c.v));
        assert!((j - j_controls).abs() <= 1e-14, "{j} {j_controls}");
    }
}
