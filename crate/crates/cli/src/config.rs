//! Run configuration: one TOML file with a block per module.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use kwc_core::catalog::Profile;
use kwc_core::problems::{ProblemSpec, Target};
use kwc_core::state::SolverOptions;
use kwc_core::{Grid, ModelParams};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seed for every command that draws random directions or trials.
    pub seed: u64,
    pub problem: ProblemSpec,
    pub grid: GridConfig,
    pub solver: SolverOptions,
    pub optimize: OptimizeConfig,
    pub check: CheckConfig,
    pub linear: LinearConfig,
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub n_space: usize,
    pub n_time: usize,
    pub t_final: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            n_space: 40,
            n_time: 40,
            t_final: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizeConfig {
    /// Stop when the gradient norm drops to this value.
    pub tol: f64,
    pub max_iter: usize,
    /// Strictly decreasing `eps` values of a continuation run.
    pub eps_list: Vec<f64>,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 200,
            eps_list: vec![1e-1, 3e-2, 1e-2, 3e-3, 1e-3],
        }
    }
}

/// Where the gradient check is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseControl {
    Zero,
    /// A smooth random control drawn before the direction.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckConfig {
    pub deltas: Vec<f64>,
    /// Largest accepted relative error of any gradient-check row.
    pub grad_threshold: f64,
    pub base: BaseControl,
    pub trials: usize,
    pub conjugacy_threshold: f64,
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self {
            deltas: vec![1e-4, 1e-5, 1e-6],
            grad_threshold: 1e-3,
            base: BaseControl::Random,
            trials: 20,
            conjugacy_threshold: 1e-10,
        }
    }
}

/// The identity-coefficient linear system started from one cosine/sine mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinearConfig {
    pub mode: u32,
}

impl Default for LinearConfig {
    fn default() -> Self {
        Self { mode: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub directory: PathBuf,
    /// Write a field snapshot every this many steps (the last step always).
    pub snapshot_stride: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            directory: PathBuf::from("out"),
            snapshot_stride: 10,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Validation(e.to_string()))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("a run configuration always serializes")
    }

    /// Checks every block against the preconditions of the module that
    /// consumes it, without running a solve, and returns the grid.
    pub fn validate(&self) -> CliResult<Grid> {
        let bad = |msg: String| Err(CliError::Validation(msg));
        let g = &self.grid;
        let grid = Grid::new(g.n_space, g.n_time, g.t_final)?;

        // Generated targets need a solve; check everything else with a flat target.
        let flat = ProblemSpec {
            target: Target::Profiles {
                eta: Profile::Constant { value: 0.0 },
                theta: Profile::Constant { value: 0.0 },
            },
            ..self.problem.clone()
        };
        flat.build(&grid, &self.solver)?;
        if let Target::Generated { v, .. } = self.problem.target {
            let row = v.sample(&grid);
            if row[0] != 0.0 || row[grid.n_space()] != 0.0 {
                return bad("the generating angle control must vanish at both ends".into());
            }
        }

        let s = &self.solver;
        for (name, v) in [
            ("inner_tol", s.inner_tol),
            ("newton_tol", s.newton_tol),
            ("min_tol", s.min_tol),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("solver.{name} must be positive, got {v}"));
            }
        }
        for (name, v) in [
            ("m_max", s.m_max),
            ("newton_max", s.newton_max),
            ("minmove_sweeps", s.minmove_sweeps),
        ] {
            if v == 0 {
                return bad(format!("solver.{name} must be at least 1"));
            }
        }
        if let Some(l) = s.minmove_shift {
            if !(l.is_finite() && l > 0.0) {
                return bad(format!("solver.minmove_shift must be positive, got {l}"));
            }
        }

        let o = &self.optimize;
        if !(o.tol.is_finite() && o.tol > 0.0) {
            return bad(format!("optimize.tol must be positive, got {}", o.tol));
        }
        if o.eps_list.is_empty() {
            return bad("optimize.eps_list must not be empty".into());
        }
        if o.eps_list.windows(2).any(|w| !(w[1] < w[0])) {
            return bad(format!(
                "optimize.eps_list must be strictly decreasing, got {:?}",
                o.eps_list
            ));
        }
        if let Some(&e) = o
            .eps_list
            .iter()
            .find(|&&e| !(e.is_finite() && e >= self.problem.eps_floor))
        {
            return bad(format!(
                "optimize.eps_list entries must be at least eps_floor = {}, got {e}",
                self.problem.eps_floor
            ));
        }

        let c = &self.check;
        if c.deltas.is_empty() {
            return bad("check.deltas must not be empty".into());
        }
        if let Some(&d) = c.deltas.iter().find(|&&d| !(d.is_finite() && d > 0.0)) {
            return bad(format!("check.deltas must be positive, got {d}"));
        }
        for (name, v) in [
            ("grad_threshold", c.grad_threshold),
            ("conjugacy_threshold", c.conjugacy_threshold),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("check.{name} must be positive, got {v}"));
            }
        }
        if c.trials == 0 {
            return bad("check.trials must be at least 1".into());
        }
        if self.linear.mode == 0 {
            return bad("linear.mode must be at least 1".into());
        }
        if self.output.snapshot_stride == 0 {
            return bad("output.snapshot_stride must be at least 1".into());
        }
        Ok(grid)
    }

    /// Samples the problem on `grid`; generated targets are solved here.
    pub fn params(&self, grid: &Grid) -> CliResult<ModelParams> {
        Ok(self.problem.build(grid, &self.solver)?)
    }
}
