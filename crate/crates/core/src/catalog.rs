//! Built-in coefficient functions and initial profiles.
//!
//! Everything that would otherwise be a user-supplied closure is a named
//! catalog member with numeric parameters, so a run is fully described by
//! plain data.

use serde::{Deserialize, Serialize};

use crate::grid::Grid;

/// Bulk potential `G` and its derivative `g = G'`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Potential {
    /// `G(s) = k (s - c)^2 / 2`.
    Quadratic { stiffness: f64, center: f64 },
}

impl Default for Potential {
    fn default() -> Self {
        Potential::Quadratic {
            stiffness: 1.0,
            center: 1.0,
        }
    }
}

impl Potential {
    pub fn big_g(&self, s: f64) -> f64 {
        match *self {
            Potential::Quadratic { stiffness, center } => 0.5 * stiffness * (s - center).powi(2),
        }
    }

    pub fn g(&self, s: f64) -> f64 {
        match *self {
            Potential::Quadratic { stiffness, center } => stiffness * (s - center),
        }
    }

    pub fn g_prime(&self, _s: f64) -> f64 {
        match *self {
            Potential::Quadratic { stiffness, .. } => stiffness,
        }
    }

    /// `sup |g'|` over `[-r, r]`.
    pub fn lipschitz(&self, _r: f64) -> f64 {
        match *self {
            Potential::Quadratic { stiffness, .. } => stiffness.abs(),
        }
    }
}

/// Grain-boundary mobility `alpha(eta)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Mobility {
    Constant {
        value: f64,
    },
    /// `base + curvature * s^2` on `[-clip, clip]`, continued by its tangent
    /// line outside so that `alpha'` stays bounded.
    Quadratic {
        base: f64,
        curvature: f64,
        clip: f64,
    },
}

impl Default for Mobility {
    fn default() -> Self {
        Mobility::Quadratic {
            base: 0.1,
            curvature: 1.0,
            clip: 10.0,
        }
    }
}

impl Mobility {
    pub fn alpha(&self, s: f64) -> f64 {
        match *self {
            Mobility::Constant { value } => value,
            Mobility::Quadratic {
                base,
                curvature,
                clip,
            } => {
                if s.abs() <= clip {
                    base + curvature * s * s
                } else {
                    base + curvature * clip * (2.0 * s.abs() - clip)
                }
            }
        }
    }

    pub fn alpha_prime(&self, s: f64) -> f64 {
        match *self {
            Mobility::Constant { .. } => 0.0,
            Mobility::Quadratic {
                curvature, clip, ..
            } => 2.0 * curvature * s.clamp(-clip, clip),
        }
    }

    pub fn alpha_second(&self, s: f64) -> f64 {
        match *self {
            Mobility::Constant { .. } => 0.0,
            Mobility::Quadratic {
                curvature, clip, ..
            } => {
                if s.abs() <= clip {
                    2.0 * curvature
                } else {
                    0.0
                }
            }
        }
    }

    /// Range on which the polynomial branch is active.
    pub fn clip(&self) -> f64 {
        match *self {
            Mobility::Constant { .. } => f64::INFINITY,
            Mobility::Quadratic { clip, .. } => clip,
        }
    }

    /// `sup |d/ds (alpha alpha')|` over `[-r, r]`.
    pub fn product_lipschitz(&self, r: f64) -> f64 {
        match *self {
            Mobility::Constant { .. } => 0.0,
            Mobility::Quadratic {
                base,
                curvature,
                clip,
            } => {
                let s = r.min(clip);
                let c = curvature.abs();
                // (alpha alpha')' = alpha'^2 + alpha alpha'' = 2 c base + 6 c^2 s^2 inside the clip
                let inner = 2.0 * c * base.abs() + 6.0 * c * c * s * s;
                if r > clip {
                    // outside the clip alpha'' = 0 and alpha' is frozen
                    inner.max(4.0 * c * c * clip * clip)
                } else {
                    inner
                }
            }
        }
    }
}

/// Time-dependent mobility `alpha_0(t, x)` of the angle equation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TimeMobility {
    Constant {
        value: f64,
    },
    /// `base + time_rate * t + space_slope * x`.
    Affine {
        base: f64,
        time_rate: f64,
        space_slope: f64,
    },
}

impl Default for TimeMobility {
    fn default() -> Self {
        TimeMobility::Constant { value: 1.0 }
    }
}

impl TimeMobility {
    pub fn value(&self, t: f64, x: f64) -> f64 {
        match *self {
            TimeMobility::Constant { value } => value,
            TimeMobility::Affine {
                base,
                time_rate,
                space_slope,
            } => base + time_rate * t + space_slope * x,
        }
    }

    pub fn dt(&self, _t: f64, _x: f64) -> f64 {
        match *self {
            TimeMobility::Constant { .. } => 0.0,
            TimeMobility::Affine { time_rate, .. } => time_rate,
        }
    }

    pub fn dx(&self, _t: f64, _x: f64) -> f64 {
        match *self {
            TimeMobility::Constant { .. } => 0.0,
            TimeMobility::Affine { space_slope, .. } => space_slope,
        }
    }

    /// Samples `alpha_0` at time `t` on every node.
    pub fn row(&self, grid: &Grid, t: f64) -> Vec<f64> {
        (0..grid.nodes())
            .map(|j| self.value(t, grid.x(j)))
            .collect()
    }

    /// `sup |alpha_0| + sup |d_t alpha_0| + sup |d_x alpha_0|` over `[0, t_final] x [0, 1]`.
    pub fn w1_inf(&self, t_final: f64) -> f64 {
        match *self {
            TimeMobility::Constant { value } => value.abs(),
            TimeMobility::Affine {
                base,
                time_rate,
                space_slope,
            } => {
                let corners = [
                    base,
                    base + time_rate * t_final,
                    base + space_slope,
                    base + time_rate * t_final + space_slope,
                ];
                corners.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
                    + time_rate.abs()
                    + space_slope.abs()
            }
        }
    }

    /// Minimum over `[0, t_final] x [0, 1]`.
    pub fn min(&self, t_final: f64) -> f64 {
        match *self {
            TimeMobility::Constant { value } => value,
            TimeMobility::Affine {
                base,
                time_rate,
                space_slope,
            } => base + (time_rate * t_final).min(0.0) + space_slope.min(0.0),
        }
    }
}

/// Spatial profiles for initial data and targets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Profile {
    Constant {
        value: f64,
    },
    /// `offset + amplitude * cos(mode * pi * x)`.
    Cosine {
        offset: f64,
        amplitude: f64,
        mode: u32,
    },
    /// `amplitude * sin(mode * pi * x)`; vanishes at both ends.
    Sine {
        amplitude: f64,
        mode: u32,
    },
    /// A smoothed step up at `left` and down at `right`, shifted by a linear
    /// term so that it vanishes at both ends. With small `width` this is a
    /// middle grain rotated by `amplitude` against two outer grains.
    Plateau {
        amplitude: f64,
        left: f64,
        right: f64,
        width: f64,
    },
    /// `base - depth * exp(-((x - center) / width)^2)`: an order dip at a
    /// grain boundary.
    Dip {
        base: f64,
        depth: f64,
        center: f64,
        width: f64,
    },
}

impl Profile {
    pub fn eval(&self, x: f64) -> f64 {
        use std::f64::consts::PI;
        match *self {
            Profile::Constant { value } => value,
            Profile::Cosine {
                offset,
                amplitude,
                mode,
            } => offset + amplitude * (mode as f64 * PI * x).cos(),
            Profile::Sine { amplitude, mode } => amplitude * (mode as f64 * PI * x).sin(),
            Profile::Plateau {
                amplitude,
                left,
                right,
                width,
            } => {
                let raw = |y: f64| {
                    0.5 * amplitude * (((y - left) / width).tanh() - ((y - right) / width).tanh())
                };
                raw(x) - (1.0 - x) * raw(0.0) - x * raw(1.0)
            }
            Profile::Dip {
                base,
                depth,
                center,
                width,
            } => base - depth * (-((x - center) / width).powi(2)).exp(),
        }
    }

    /// Nodal values. Profiles that vanish at both ends get exact zeros there.
    pub fn sample(&self, grid: &Grid) -> Vec<f64> {
        let mut w: Vec<f64> = (0..grid.nodes()).map(|j| self.eval(grid.x(j))).collect();
        if matches!(self, Profile::Sine { .. } | Profile::Plateau { .. }) {
            let n = w.len() - 1;
            w[0] = 0.0;
            w[n] = 0.0;
        }
        w
    }
}
