//! Uniform space-time mesh on `(0, 1) x [0, T]`.
//!
//! Nodal fields are read as piecewise-linear finite-element functions:
//! nodal integrals use the lumped (trapezoid) mass, gradient terms use the
//! midpoint rule on cells with `dw_c = (w[c+1] - w[c]) / h`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    n_space: usize,
    n_time: usize,
    t_final: f64,
}

impl Grid {
    pub fn new(n_space: usize, n_time: usize, t_final: f64) -> Result<Self> {
        if n_space < 2 {
            return Err(Error::InvalidParameter(format!(
                "n_space must be >= 2, got {n_space}"
            )));
        }
        if n_time < 1 {
            return Err(Error::InvalidParameter(format!(
                "n_time must be >= 1, got {n_time}"
            )));
        }
        if !(t_final.is_finite() && t_final > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "t_final must be positive and finite, got {t_final}"
            )));
        }
        Ok(Self {
            n_space,
            n_time,
            t_final,
        })
    }

    pub fn n_space(&self) -> usize {
        self.n_space
    }

    pub fn n_time(&self) -> usize {
        self.n_time
    }

    pub fn t_final(&self) -> f64 {
        self.t_final
    }

    /// Number of spatial nodes, `n_space + 1`.
    pub fn nodes(&self) -> usize {
        self.n_space + 1
    }

    /// Number of cells, `n_space`.
    pub fn cells(&self) -> usize {
        self.n_space
    }

    /// Number of time levels, `n_time + 1`.
    pub fn levels(&self) -> usize {
        self.n_time + 1
    }

    pub fn h(&self) -> f64 {
        1.0 / self.n_space as f64
    }

    pub fn tau(&self) -> f64 {
        self.t_final / self.n_time as f64
    }

    pub fn x(&self, j: usize) -> f64 {
        j as f64 / self.n_space as f64
    }

    pub fn x_mid(&self, c: usize) -> f64 {
        (c as f64 + 0.5) / self.n_space as f64
    }

    pub fn t(&self, k: usize) -> f64 {
        self.t_final * k as f64 / self.n_time as f64
    }

    /// Same spatial mesh, different time partition.
    pub fn with_time(&self, n_time: usize, t_final: f64) -> Result<Self> {
        Self::new(self.n_space, n_time, t_final)
    }

    /// Lumped mass weights: `h/2` at the ends, `h` inside. Sums to one.
    pub fn lumped_mass(&self) -> Vec<f64> {
        let h = self.h();
        let mut m = vec![h; self.nodes()];
        m[0] = 0.5 * h;
        m[self.n_space] = 0.5 * h;
        m
    }

    /// Weight of level `k` in space-time integrals (left-rectangle rule).
    pub fn time_weight(&self, k: usize) -> f64 {
        if k < self.n_time {
            self.tau()
        } else {
            0.0
        }
    }

    pub fn cell_gradient(&self, w: &[f64]) -> Vec<f64> {
        debug_assert_eq!(w.len(), self.nodes());
        let inv_h = self.n_space as f64;
        w.windows(2).map(|p| (p[1] - p[0]) * inv_h).collect()
    }

    pub fn cell_average(&self, w: &[f64]) -> Vec<f64> {
        debug_assert_eq!(w.len(), self.nodes());
        w.windows(2).map(|p| 0.5 * (p[0] + p[1])).collect()
    }

    /// Lumped-mass inner product of two nodal arrays.
    pub fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        let h = self.h();
        let n = self.n_space;
        let interior: f64 = (1..n).map(|j| a[j] * b[j]).sum();
        h * (interior + 0.5 * (a[0] * b[0] + a[n] * b[n]))
    }

    pub fn norm(&self, a: &[f64]) -> f64 {
        self.inner(a, a).sqrt()
    }

    pub(crate) fn check_nodes(&self, what: &str, w: &[f64]) -> Result<()> {
        if w.len() != self.nodes() {
            return Err(Error::Shape(format!(
                "{what}: expected {} nodes, got {}",
                self.nodes(),
                w.len()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spacing_identities() {
        let g = Grid::new(7, 13, 0.3).unwrap();
        assert_eq!(g.x(7), 1.0);
        assert!((g.h() * 7.0 - 1.0).abs() < 1e-15);
        assert!((g.tau() * 13.0 - 0.3).abs() < 1e-15);
        assert!((g.lumped_mass().iter().sum::<f64>() - 1.0).abs() < 1e-14);
        assert_eq!(g.time_weight(13), 0.0);
    }

    #[test]
    fn rejects_degenerate_grids() {
        assert!(Grid::new(1, 4, 1.0).is_err());
        assert!(Grid::new(4, 0, 1.0).is_err());
        assert!(Grid::new(4, 4, 0.0).is_err());
        assert!(Grid::new(4, 4, f64::NAN).is_err());
    }
}
