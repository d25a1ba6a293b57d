//! Small dense nonnegative matrices: Perron roots, irreducibility, solves.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fmt;

/// Square K×K matrix stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    k: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(k: usize) -> Self {
        Matrix { k, data: vec![0.0; k * k] }
    }

    pub fn identity(k: usize) -> Self {
        let mut m = Self::zeros(k);
        for i in 0..k {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let k = rows.len();
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::Domain(format!("matrix rows must all have length {k}")));
        }
        Ok(Matrix { k, data: rows.iter().flatten().copied().collect() })
    }

    pub fn from_fn(k: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(k * k);
        for i in 0..k {
            for j in 0..k {
                data.push(f(i, j));
            }
        }
        Matrix { k, data }
    }

    pub fn dim(&self) -> usize {
        self.k
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.k.max(1)).map(|c| c.to_vec()).collect()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.k..(i + 1) * self.k]
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.k, |i, j| self[(j, i)])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn is_nonnegative(&self) -> bool {
        self.data.iter().all(|&x| x >= 0.0)
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.k).map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum()).collect()
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    /// Every type reaches every other through positive entries.
    pub fn is_irreducible(&self) -> bool {
        let k = self.k;
        if k <= 1 {
            return true;
        }
        let reach_all = |forward: bool| {
            let mut seen = vec![false; k];
            let mut stack = vec![0];
            seen[0] = true;
            while let Some(i) = stack.pop() {
                for j in 0..k {
                    let w = if forward { self[(i, j)] } else { self[(j, i)] };
                    if w > 0.0 && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
            seen.into_iter().all(|s| s)
        };
        reach_all(true) && reach_all(false)
    }

    /// Perron root of a nonnegative matrix.
    ///
    /// Power iteration on `M + I`, which is primitive whenever `M` is
    /// irreducible. Stops once the Collatz–Wielandt bounds agree to `rel_tol`.
    pub fn spectral_radius(&self, rel_tol: f64) -> Result<f64> {
        if !self.is_nonnegative() || !self.is_finite() {
            return Err(Error::Domain("spectral radius needs a finite nonnegative matrix".into()));
        }
        let k = self.k;
        if k == 0 {
            return Err(Error::Domain("empty matrix".into()));
        }
        if k == 1 {
            return Ok(self.data[0]);
        }
        let mut x = vec![1.0; k];
        const MAX_ITER: usize = 100_000;
        for _ in 0..MAX_ITER {
            let mut y = self.mul_vec(&x);
            for (yi, xi) in y.iter_mut().zip(&x) {
                *yi += xi;
            }
            let mut lo = f64::INFINITY;
            let mut hi: f64 = 0.0;
            for (yi, xi) in y.iter().zip(&x) {
                if *xi > 0.0 {
                    let r = yi / xi;
                    lo = lo.min(r);
                    hi = hi.max(r);
                }
            }
            let norm = y.iter().cloned().fold(0.0, f64::max);
            if norm == 0.0 {
                return Ok(0.0);
            }
            x = y.into_iter().map(|v| v / norm).collect();
            if hi - lo <= rel_tol * hi {
                return Ok(0.5 * (hi + lo) - 1.0);
            }
        }
        Err(Error::NonConvergence { what: "power iteration".into(), iterations: MAX_ITER })
    }

    /// Solves `self · x = b` by Gaussian elimination with partial pivoting.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let k = self.k;
        let mut a = self.data.clone();
        let mut x = b.to_vec();
        for col in 0..k {
            let piv = (col..k).max_by(|&r, &s| a[r * k + col].abs().total_cmp(&a[s * k + col].abs())).unwrap();
            if a[piv * k + col].abs() < 1e-300 {
                return Err(Error::Domain("singular matrix".into()));
            }
            if piv != col {
                for c in 0..k {
                    a.swap(piv * k + c, col * k + c);
                }
                x.swap(piv, col);
            }
            for r in col + 1..k {
                let f = a[r * k + col] / a[col * k + col];
                for c in col..k {
                    a[r * k + c] -= f * a[col * k + c];
                }
                x[r] -= f * x[col];
            }
        }
        for col in (0..k).rev() {
            let s: f64 = (col + 1..k).map(|c| a[col * k + c] * x[c]).sum();
            x[col] = (x[col] - s) / a[col * k + col];
        }
        Ok(x)
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.k + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.k + j]
    }
}

impl fmt::Display for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.k {
            let row: Vec<String> = self.row(i).iter().map(|x| format!("{x:.6}")).collect();
            writeln!(f, "[{}]", row.join(", "))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn quadratic_root(m: &Matrix) -> f64 {
        let tr = m[(0, 0)] + m[(1, 1)];
        let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
        0.5 * (tr + (tr * tr - 4.0 * det).sqrt())
    }

    #[test]
    fn rank_one() {
        let m = Matrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert!((m.spectral_radius(1e-14).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn periodic_matrix() {
        let m = Matrix::from_rows(&[vec![0.0, 4.0], vec![1.0, 0.0]]).unwrap();
        assert!((m.spectral_radius(1e-14).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn irreducibility() {
        let block = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!(!block.is_irreducible());
        let tri = Matrix::from_rows(&[vec![1.0, 1.0], vec![0.0, 1.0]]).unwrap();
        assert!(!tri.is_irreducible());
        let cyc = Matrix::from_rows(&[vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0], vec![1.0, 0.0, 0.0]]).unwrap();
        assert!(cyc.is_irreducible());
        assert!(Matrix::zeros(1).is_irreducible());
    }

    #[test]
    fn solve_small_system() {
        let m = Matrix::from_rows(&[vec![0.0, 2.0], vec![3.0, 1.0]]).unwrap();
        let x = m.solve(&[4.0, 5.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-14 && (x[1] - 2.0).abs() < 1e-14);
    }

    proptest! {
        #[test]
        fn two_by_two_matches_quadratic(a in 0.0..5.0f64, b in 0.01..5.0f64, c in 0.01..5.0f64, d in 0.0..5.0f64) {
            let m = Matrix::from_rows(&[vec![a, b], vec![c, d]]).unwrap();
            let r = m.spectral_radius(1e-14).unwrap();
            prop_assert!((r - quadratic_root(&m)).abs() <= 1e-10 * r.max(1.0));
        }

        #[test]
        fn transpose_keeps_radius(v in proptest::collection::vec(0.01..3.0f64, 9)) {
            let m = Matrix::from_fn(3, |i, j| v[3 * i + j]);
            let r = m.spectral_radius(1e-14).unwrap();
            let rt = m.transpose().spectral_radius(1e-14).unwrap();
            prop_assert!((r - rt).abs() <= 1e-10 * r);
        }
    }
}
