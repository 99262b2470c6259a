//! Dense Cholesky factorization in packed lower-triangular storage.
//!
//! Row `i` of `L` occupies `l[i(i+1)/2 .. i(i+1)/2 + i + 1]`, so every inner
//! product in the factorization and in the forward solve touches contiguous
//! memory. The backward solve is written column-oriented over the same rows.

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default)]
pub struct PackedCholesky {
    n: usize,
    l: Vec<f64>,
}

#[inline]
fn row_start(i: usize) -> usize {
    i * (i + 1) / 2
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four independent accumulators let the compiler vectorize without
    // reassociating a single running sum.
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let chunks = n / 4;
    for c in 0..chunks {
        let i = 4 * c;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in 4 * chunks..n {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

impl PackedCholesky {
    pub fn with_capacity(n: usize) -> Self {
        PackedCholesky {
            n: 0,
            l: Vec::with_capacity(row_start(n)),
        }
    }

    /// Factors a dense symmetric row-major `n × n` matrix; only the lower
    /// triangle is read.
    pub fn factor(a: &[f64], n: usize) -> Result<Self> {
        assert_eq!(a.len(), n * n, "matrix buffer does not match dimension");
        let mut f = PackedCholesky::with_capacity(n);
        let mut row = vec![0.0; n];
        for i in 0..n {
            row[..i].copy_from_slice(&a[i * n..i * n + i]);
            f.forward_solve_prefix(&mut row[..i]);
            let pivot = a[i * n + i] - dot(&row[..i], &row[..i]);
            f.push_row(&row[..i], pivot)?;
        }
        Ok(f)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.l[row_start(i)..row_start(i) + i + 1]
    }

    #[inline]
    pub fn diag(&self, i: usize) -> f64 {
        self.l[row_start(i) + i]
    }

    /// Extends the factor by one row: `z` is `L⁻¹ a` for the new off-diagonal
    /// column `a`, and `pivot` is `a_vv − z·z`. The new diagonal is `√pivot`.
    pub fn push_row(&mut self, z: &[f64], pivot: f64) -> Result<()> {
        assert_eq!(z.len(), self.n);
        if !(pivot > 0.0) || !pivot.is_finite() || z.iter().any(|x| !x.is_finite()) {
            return Err(Error::NotPositiveDefinite {
                pivot: self.n,
                value: pivot,
            });
        }
        self.l.extend_from_slice(z);
        self.l.push(pivot.sqrt());
        self.n += 1;
        Ok(())
    }

    /// Solves `L x = b` in place where `b` has the current dimension.
    pub fn forward_solve(&self, b: &mut [f64]) {
        assert_eq!(b.len(), self.n);
        self.forward_solve_prefix(b);
    }

    /// Forward solve against the leading `b.len()` rows of `L`.
    fn forward_solve_prefix(&self, b: &mut [f64]) {
        for i in 0..b.len() {
            let r = self.row(i);
            let s = dot(&r[..i], &b[..i]);
            b[i] = (b[i] - s) / r[i];
        }
    }

    /// Solves `Lᵀ x = b` in place.
    pub fn backward_solve(&self, b: &mut [f64]) {
        assert_eq!(b.len(), self.n);
        for i in (0..self.n).rev() {
            let r = self.row(i);
            let xi = b[i] / r[i];
            b[i] = xi;
            for (bk, &lik) in b[..i].iter_mut().zip(&r[..i]) {
                *bk -= lik * xi;
            }
        }
    }

    /// Solves `A x = b` in place.
    pub fn solve(&self, b: &mut [f64]) {
        self.forward_solve(b);
        self.backward_solve(b);
    }

    /// Column `j` of `A⁻¹`.
    pub fn inverse_column(&self, j: usize) -> Vec<f64> {
        let mut e = vec![0.0; self.n];
        // L⁻¹ e_j vanishes above row j.
        e[j] = 1.0 / self.diag(j);
        for i in (j + 1)..self.n {
            let r = self.row(i);
            let s = dot(&r[j..i], &e[j..i]);
            e[i] = -s / r[i];
        }
        self.backward_solve(&mut e);
        e
    }

    /// Dense row-major `A⁻¹`.
    pub fn inverse(&self) -> Vec<f64> {
        let n = self.n;
        let mut inv = vec![0.0; n * n];
        for j in 0..n {
            let col = self.inverse_column(j);
            for i in 0..n {
                inv[i * n + j] = col[i];
            }
        }
        // Symmetrize away the last-bit differences between the two triangles.
        for i in 0..n {
            for j in (i + 1)..n {
                let v = 0.5 * (inv[i * n + j] + inv[j * n + i]);
                inv[i * n + j] = v;
                inv[j * n + i] = v;
            }
        }
        inv
    }

    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.n).map(|i| self.diag(i).ln()).sum::<f64>()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn random_spd(n: usize, seed: u64) -> Vec<f64> {
        // Deterministic pseudo-random entries; A = M Mᵀ + n I.
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
        let mut next = || {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        let m: Vec<f64> = (0..n * n).map(|_| next()).collect();
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for k in 0..n {
                    s += m[i * n + k] * m[j * n + k];
                }
                a[i * n + j] = s + if i == j { n as f64 } else { 0.0 };
            }
        }
        a
    }

    #[test]
    fn two_by_two_inverse() {
        let f = PackedCholesky::factor(&[2.0, -1.0, -1.0, 2.0], 2).unwrap();
        let inv = f.inverse();
        let expected = [2.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 2.0 / 3.0];
        for (a, b) in inv.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((f.log_det() - 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn rejects_indefinite() {
        let err = PackedCholesky::factor(&[1.0, 2.0, 2.0, 1.0], 2).unwrap_err();
        assert!(matches!(err, Error::NotPositiveDefinite { pivot: 1, .. }));
        assert!(PackedCholesky::factor(&[0.0], 1).is_err());
        assert!(PackedCholesky::factor(&[f64::NAN], 1).is_err());
    }

    #[test]
    fn matches_nalgebra() {
        for &n in &[1usize, 3, 17, 64] {
            let a = random_spd(n, n as u64);
            let f = PackedCholesky::factor(&a, n).unwrap();
            let reference = DMatrix::from_row_slice(n, n, &a).cholesky().unwrap();
            let lref = reference.l();
            for i in 0..n {
                for j in 0..=i {
                    assert!(
                        (f.row(i)[j] - lref[(i, j)]).abs() < 1e-12 * lref[(i, i)].abs().max(1.0)
                    );
                }
            }
            let inv = f.inverse();
            let inv_ref = reference.inverse();
            for i in 0..n {
                for j in 0..n {
                    assert!((inv[i * n + j] - inv_ref[(i, j)]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn incremental_rows_equal_full_factor() {
        let n = 20;
        let a = random_spd(n, 99);
        let full = PackedCholesky::factor(&a, n).unwrap();
        let mut inc = PackedCholesky::with_capacity(n);
        for v in 0..n {
            let mut z: Vec<f64> = a[v * n..v * n + v].to_vec();
            inc.forward_solve(&mut z);
            let pivot = a[v * n + v] - dot(&z, &z);
            inc.push_row(&z, pivot).unwrap();
        }
        for i in 0..n {
            for j in 0..=i {
                assert!((full.row(i)[j] - inc.row(i)[j]).abs() < 1e-13);
            }
        }
    }

    proptest! {
        #[test]
        fn solve_residual_is_small(n in 1usize..40, seed in any::<u64>()) {
            let a = random_spd(n, seed);
            let f = PackedCholesky::factor(&a, n).unwrap();
            let b: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
            let mut x = b.clone();
            f.solve(&mut x);
            for i in 0..n {
                let r: f64 = (0..n).map(|j| a[i * n + j] * x[j]).sum::<f64>() - b[i];
                prop_assert!(r.abs() < 1e-10 * (n as f64));
            }
            for j in 0..n {
                let col = f.inverse_column(j);
                let norm = col.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                for i in 0..n {
                    let r: f64 = (0..n).map(|k| a[i * n + k] * col[k]).sum::<f64>()
                        - if i == j { 1.0 } else { 0.0 };
                    prop_assert!(r.abs() < 1e-8 * norm);
                }
            }
        }
    }
}
