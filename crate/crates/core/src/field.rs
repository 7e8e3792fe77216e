//! Space-time arrays: one row of nodal (or cell) values per time level.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceTime {
    levels: usize,
    width: usize,
    data: Vec<f64>,
}

impl SpaceTime {
    pub fn zeros(levels: usize, width: usize) -> Self {
        Self {
            levels,
            width,
            data: vec![0.0; levels * width],
        }
    }

    /// Nodal zeros on every level of `grid`.
    pub fn nodal(grid: &Grid) -> Self {
        Self::zeros(grid.levels(), grid.nodes())
    }

    /// Samples `f(t, x)` at every node of `grid`.
    pub fn sample(grid: &Grid, mut f: impl FnMut(f64, f64) -> f64) -> Self {
        let mut out = Self::nodal(grid);
        for k in 0..grid.levels() {
            let t = grid.t(k);
            for (j, v) in out.row_mut(k).iter_mut().enumerate() {
                *v = f(t, grid.x(j));
            }
        }
        out
    }

    /// Repeats one row on every level.
    pub fn constant_in_time(levels: usize, row: &[f64]) -> Self {
        let mut data = Vec::with_capacity(levels * row.len());
        for _ in 0..levels {
            data.extend_from_slice(row);
        }
        Self {
            levels,
            width: row.len(),
            data,
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let width = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::Shape("rows have unequal lengths".into()));
        }
        Ok(Self {
            levels: rows.len(),
            width,
            data: rows.concat(),
        })
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.data[k * self.width..(k + 1) * self.width]
    }

    pub fn row_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.data[k * self.width..(k + 1) * self.width]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.width.max(1)).take(self.levels)
    }

    pub fn get(&self, k: usize, j: usize) -> f64 {
        self.data[k * self.width + j]
    }

    pub fn set(&mut self, k: usize, j: usize, value: f64) {
        self.data[k * self.width + j] = value;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// `(R_T w)_k = w_{N-k}`.
    pub fn reverse_time(&self) -> Self {
        let mut out = Self::zeros(self.levels, self.width);
        for k in 0..self.levels {
            out.row_mut(k)
                .copy_from_slice(self.row(self.levels - 1 - k));
        }
        out
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            levels: self.levels,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        self.map(|v| c * v)
    }

    /// `self += c * other`.
    pub fn axpy(&mut self, c: f64, other: &Self) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += c * b;
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.levels == other.levels && self.width == other.width
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn check_nodal(&self, grid: &Grid, what: &str) -> Result<()> {
        if self.levels != grid.levels() || self.width != grid.nodes() {
            return Err(Error::Shape(format!(
                "{what}: expected {}x{}, got {}x{}",
                grid.levels(),
                grid.nodes(),
                self.levels,
                self.width
            )));
        }
        if !self.is_finite() {
            return Err(Error::InvalidParameter(format!("{what}: non-finite entry")));
        }
        Ok(())
    }
}

/// Space-time `L2(Q)` pairing: lumped mass in space, left rectangle in time.
pub fn st_inner(grid: &Grid, a: &SpaceTime, b: &SpaceTime) -> f64 {
    (0..grid.n_time())
        .map(|k| grid.tau() * grid.inner(a.row(k), b.row(k)))
        .sum()
}

/// `sup_k |w_k|_H`, the discrete `C([0,T]; H)` norm.
pub fn sup_norm(grid: &Grid, a: &SpaceTime) -> f64 {
    a.rows().map(|r| grid.norm(r)).fold(0.0, f64::max)
}

macro_rules! pair_ops {
    ($ty:ident, $a:ident, $b:ident) => {
        impl $ty {
            pub fn zeros(grid: &Grid) -> Self {
                Self {
                    $a: SpaceTime::nodal(grid),
                    $b: SpaceTime::nodal(grid),
                }
            }

            pub fn reverse_time(&self) -> Self {
                Self {
                    $a: self.$a.reverse_time(),
                    $b: self.$b.reverse_time(),
                }
            }

            pub fn axpy(&mut self, c: f64, other: &Self) {
                self.$a.axpy(c, &other.$a);
                self.$b.axpy(c, &other.$b);
            }

            pub fn scaled(&self, c: f64) -> Self {
                Self {
                    $a: self.$a.scaled(c),
                    $b: self.$b.scaled(c),
                }
            }

            pub fn sub(&self, other: &Self) -> Self {
                Self {
                    $a: self.$a.sub(&other.$a),
                    $b: self.$b.sub(&other.$b),
                }
            }

            /// Sum of the component space-time pairings.
            pub fn inner(&self, grid: &Grid, other: &Self) -> f64 {
                st_inner(grid, &self.$a, &other.$a) + st_inner(grid, &self.$b, &other.$b)
            }

            pub fn norm(&self, grid: &Grid) -> f64 {
                self.inner(grid, self).sqrt()
            }

            pub fn max_abs(&self) -> f64 {
                self.$a.max_abs().max(self.$b.max_abs())
            }

            pub fn check(&self, grid: &Grid) -> Result<()> {
                self.$a.check_nodal(grid, stringify!($a))?;
                self.$b.check_nodal(grid, stringify!($b))
            }
        }
    };
}

/// A trajectory `[eta, theta]`, or any pair shaped like one (`[p, z]`, `[chi, gamma]`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldPair {
    pub first: SpaceTime,
    pub second: SpaceTime,
}

pair_ops!(FieldPair, first, second);

impl FieldPair {
    pub fn new(first: SpaceTime, second: SpaceTime) -> Self {
        Self { first, second }
    }

    /// `sup_k |first_k - other.first_k|^2 + |second_k - other.second_k|^2`, square-rooted.
    pub fn sup_distance(&self, grid: &Grid, other: &Self) -> f64 {
        (0..grid.levels())
            .map(|k| {
                let d1: Vec<f64> = diff(self.first.row(k), other.first.row(k));
                let d2: Vec<f64> = diff(self.second.row(k), other.second.row(k));
                grid.inner(&d1, &d1) + grid.inner(&d2, &d2)
            })
            .fold(0.0, f64::max)
            .sqrt()
    }

    /// Largest violation of the homogeneous Dirichlet condition on `second`.
    pub fn dirichlet_defect(&self) -> f64 {
        let n = self.second.width() - 1;
        self.second
            .rows()
            .map(|r| r[0].abs().max(r[n].abs()))
            .fold(0.0, f64::max)
    }
}

/// Forcing pair `[u, v]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlPair {
    pub u: SpaceTime,
    pub v: SpaceTime,
}

pair_ops!(ControlPair, u, v);

impl ControlPair {
    pub fn new(u: SpaceTime, v: SpaceTime) -> Self {
        Self { u, v }
    }
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}
