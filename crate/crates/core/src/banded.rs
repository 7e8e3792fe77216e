//! Direct solvers for the narrow-band systems of the 1-D discretization.

use crate::error::{Error, Result};

/// Thomas algorithm for a tridiagonal system.
///
/// `lower[i]` couples row `i + 1` to column `i`, `upper[i]` couples row `i`
/// to column `i + 1`. No pivoting; the callers only pass diagonally dominant
/// or SPD matrices.
pub fn solve_tridiagonal(
    lower: &[f64],
    diag: &[f64],
    upper: &[f64],
    rhs: &[f64],
) -> Result<Vec<f64>> {
    let n = diag.len();
    if lower.len() + 1 != n || upper.len() + 1 != n || rhs.len() != n {
        return Err(Error::Shape(format!(
            "tridiagonal system of order {n} with bands {}/{} and rhs {}",
            lower.len(),
            upper.len(),
            rhs.len()
        )));
    }
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut pivot = diag[0];
    for i in 0..n {
        if i > 0 {
            pivot = diag[i] - lower[i - 1] * c[i - 1];
        }
        if pivot.abs() < f64::MIN_POSITIVE || !pivot.is_finite() {
            return Err(Error::Numerical(format!(
                "zero pivot in tridiagonal solve at row {i}"
            )));
        }
        if i + 1 < n {
            c[i] = upper[i] / pivot;
        }
        d[i] = if i == 0 {
            rhs[0] / pivot
        } else {
            (rhs[i] - lower[i - 1] * d[i - 1]) / pivot
        };
    }
    for i in (0..n - 1).rev() {
        d[i] -= c[i] * d[i + 1];
    }
    Ok(d)
}

/// Square band matrix with `kl` sub- and `ku` super-diagonals.
///
/// Storage is row-major over the widened band `[i - kl, i + ku + kl]` so the
/// LU factors with partial pivoting fit in place.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    stride: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let stride = 2 * kl + ku + 1;
        Self {
            n,
            kl,
            ku,
            stride,
            data: vec![0.0; n * stride],
        }
    }

    pub fn order(&self) -> usize {
        self.n
    }

    fn slot(&self, i: usize, j: usize) -> Option<usize> {
        if j + self.kl < i || j > i + self.ku + self.kl {
            None
        } else {
            Some(i * self.stride + (j + self.kl - i))
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.slot(i, j).map_or(0.0, |s| self.data[s])
    }

    /// Adds `value` at `(i, j)`. Panics outside the declared band.
    pub fn add(&mut self, i: usize, j: usize, value: f64) {
        assert!(
            j + self.kl >= i && j <= i + self.ku,
            "entry ({i}, {j}) outside band"
        );
        let s = self.slot(i, j).unwrap();
        self.data[s] += value;
    }

    /// Zeroes row and column `i` and puts `diag` on the diagonal.
    pub fn pin(&mut self, i: usize, diag: f64) {
        let lo = i.saturating_sub(self.kl.max(self.ku));
        let hi = (i + self.kl.max(self.ku)).min(self.n - 1);
        for j in lo..=hi {
            if let Some(s) = self.slot(i, j) {
                self.data[s] = 0.0;
            }
            if let Some(s) = self.slot(j, i) {
                self.data[s] = 0.0;
            }
        }
        let s = self.slot(i, i).unwrap();
        self.data[s] = diag;
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                let lo = i.saturating_sub(self.kl);
                let hi = (i + self.ku).min(self.n - 1);
                (lo..=hi).map(|j| self.get(i, j) * x[j]).sum()
            })
            .collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.n, self.ku, self.kl);
        for i in 0..self.n {
            let lo = i.saturating_sub(self.kl);
            let hi = (i + self.ku).min(self.n - 1);
            for j in lo..=hi {
                t.add(j, i, self.get(i, j));
            }
        }
        t
    }

    /// Gaussian elimination with partial pivoting; consumes the matrix.
    pub fn solve(mut self, rhs: &[f64]) -> Result<Vec<f64>> {
        let n = self.n;
        if rhs.len() != n {
            return Err(Error::Shape(format!(
                "band system of order {n}, rhs {}",
                rhs.len()
            )));
        }
        let mut b = rhs.to_vec();
        let upper_width = self.ku + self.kl;
        let scale = self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        for k in 0..n {
            let last = (k + self.kl).min(n - 1);
            let mut p = k;
            let mut best = self.get(k, k).abs();
            for i in k + 1..=last {
                let v = self.get(i, k).abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if !(best > scale * 1e-300) || !best.is_finite() {
                return Err(Error::Numerical(format!(
                    "singular band matrix at column {k}"
                )));
            }
            let right = (k + upper_width).min(n - 1);
            if p != k {
                for j in k..=right {
                    let (sk, sp) = (self.slot(k, j), self.slot(p, j));
                    match (sk, sp) {
                        (Some(a), Some(c)) => self.data.swap(a, c),
                        (Some(a), None) => self.data[a] = 0.0,
                        (None, Some(c)) => self.data[c] = 0.0,
                        (None, None) => {}
                    }
                }
                b.swap(k, p);
            }
            let pivot = self.get(k, k);
            for i in k + 1..=last {
                let si = self.slot(i, k).unwrap();
                let factor = self.data[si] / pivot;
                if factor == 0.0 {
                    continue;
                }
                self.data[si] = 0.0;
                for j in k + 1..=right {
                    let a = self.get(k, j);
                    if a != 0.0 {
                        let s = self.slot(i, j).unwrap();
                        self.data[s] -= factor * a;
                    }
                }
                b[i] -= factor * b[k];
            }
        }
        for k in (0..n).rev() {
            let right = (k + upper_width).min(n - 1);
            let mut acc = b[k];
            for j in k + 1..=right {
                acc -= self.get(k, j) * b[j];
            }
            b[k] = acc / self.get(k, k);
        }
        Ok(b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn thomas_solves_laplacian() {
        let n = 6;
        let x: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let (lo, di, up) = (vec![-1.0; n - 1], vec![2.5; n], vec![-1.0; n - 1]);
        let rhs: Vec<f64> = (0..n)
            .map(|i| {
                let mut r = 2.5 * x[i];
                if i > 0 {
                    r -= x[i - 1];
                }
                if i + 1 < n {
                    r -= x[i + 1];
                }
                r
            })
            .collect();
        let got = solve_tridiagonal(&lo, &di, &up, &rhs).unwrap();
        for (a, b) in got.iter().zip(&x) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn thomas_reports_zero_pivot() {
        let r = solve_tridiagonal(&[1.0], &[0.0, 1.0], &[1.0], &[1.0, 1.0]);
        assert!(matches!(r, Err(Error::Numerical(_))));
    }

    #[test]
    fn band_lu_needs_pivoting_and_gets_it() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 17;
        let (kl, ku) = (3, 3);
        let mut a = BandMatrix::zeros(n, kl, ku);
        for i in 0..n {
            for j in i.saturating_sub(kl)..=(i + ku).min(n - 1) {
                a.add(i, j, rng.gen_range(-1.0..1.0));
            }
            // a zero diagonal forces row swaps
            let d = a.get(i, i);
            a.add(i, i, -d);
        }
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b = a.mul_vec(&x);
        let got = a.clone().solve(&b).unwrap();
        for (u, v) in got.iter().zip(&x) {
            assert!((u - v).abs() < 1e-9, "{u} vs {v}");
        }
    }

    #[test]
    fn pin_keeps_symmetry() {
        let mut a = BandMatrix::zeros(5, 2, 2);
        for i in 0..5_usize {
            for j in i.saturating_sub(2)..=(i + 2).min(4) {
                a.add(i, j, 1.0 + (i + j) as f64);
            }
        }
        a.pin(2, 1.0);
        let t = a.transpose();
        for i in 0..5 {
            for j in 0..5 {
                assert_eq!(a.get(i, j), t.get(i, j));
            }
        }
        assert_eq!(a.get(2, 2), 1.0);
        assert_eq!(a.get(2, 0), 0.0);
    }

    #[test]
    fn singular_band_matrix_is_reported() {
        let a = BandMatrix::zeros(3, 1, 1);
        assert!(a.solve(&[1.0, 0.0, 0.0]).is_err());
    }
}
