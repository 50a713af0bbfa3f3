//! Dense square matrices, just enough for the finite-state recursions:
//! row-major storage, matvec, matmul, powers, LU inverse with partial
//! pivoting. Dimensions here are small (state spaces up to a few thousand
//! grid points), so no blocking or BLAS.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    n: usize,
    a: Vec<f64>,
}

impl Matrix {
    pub fn zeros(n: usize) -> Self {
        Matrix { n, a: vec![0.0; n * n] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n);
        for i in 0..n {
            m.a[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::InvalidArgument("empty matrix".into()));
        }
        let mut a = Vec::with_capacity(n * n);
        for r in rows {
            if r.len() != n {
                return Err(Error::DimensionMismatch(format!(
                    "row of length {} in a {}x{} matrix",
                    r.len(),
                    n,
                    n
                )));
            }
            a.extend_from_slice(r);
        }
        Ok(Matrix { n, a })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.a[i * self.n + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.a[i * self.n..(i + 1) * self.n]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.a.chunks(self.n)
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rows().map(|r| r.to_vec()).collect()
    }

    /// A v
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.n);
        self.rows()
            .map(|r| r.iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// A^T v (left action: row vector times A)
    pub fn mul_vec_left(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.n);
        let mut out = vec![0.0; self.n];
        for (i, r) in self.rows().enumerate() {
            let vi = v[i];
            if vi != 0.0 {
                for (o, &aij) in out.iter_mut().zip(r) {
                    *o += vi * aij;
                }
            }
        }
        out
    }

    pub fn mat_mul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.n, other.n);
        let n = self.n;
        let mut out = Matrix::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let aik = self.a[i * n + k];
                if aik != 0.0 {
                    let orow = &other.a[k * n..(k + 1) * n];
                    let dst = &mut out.a[i * n..(i + 1) * n];
                    for (d, &b) in dst.iter_mut().zip(orow) {
                        *d += aik * b;
                    }
                }
            }
        }
        out
    }

    pub fn pow(&self, k: usize) -> Matrix {
        let mut out = Matrix::identity(self.n);
        for _ in 0..k {
            out = out.mat_mul(self);
        }
        out
    }

    pub fn transpose(&self) -> Matrix {
        let n = self.n;
        let mut out = Matrix::zeros(n);
        for i in 0..n {
            for j in 0..n {
                out.a[j * n + i] = self.a[i * n + j];
            }
        }
        out
    }

    pub fn scaled(&self, c: f64) -> Matrix {
        Matrix { n: self.n, a: self.a.iter().map(|x| x * c).collect() }
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.n, other.n);
        Matrix {
            n: self.n,
            a: self.a.iter().zip(&other.a).map(|(x, y)| x - y).collect(),
        }
    }

    pub fn max_row_sum(&self) -> f64 {
        self.rows()
            .map(|r| r.iter().map(|x| x.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.a.iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }

    /// Inverse by LU with partial pivoting. Errors on a (numerically)
    /// singular pivot.
    pub fn inverse(&self) -> Result<Matrix> {
        let n = self.n;
        let mut lu = self.a.clone();
        let mut perm: Vec<usize> = (0..n).collect();

        for col in 0..n {
            let mut piv = col;
            let mut best = lu[perm[col] * n + col].abs();
            for r in col + 1..n {
                let cand = lu[perm[r] * n + col].abs();
                if cand > best {
                    best = cand;
                    piv = r;
                }
            }
            if best < f64::MIN_POSITIVE * 16.0 || !best.is_finite() {
                return Err(Error::InvalidArgument("singular matrix".into()));
            }
            perm.swap(col, piv);
            let prow = perm[col];
            let pval = lu[prow * n + col];
            for r in col + 1..n {
                let row = perm[r];
                let f = lu[row * n + col] / pval;
                lu[row * n + col] = f;
                for j in col + 1..n {
                    lu[row * n + j] -= f * lu[prow * n + j];
                }
            }
        }

        // solve A x = e_k for each k
        let mut inv = Matrix::zeros(n);
        let mut y = vec![0.0; n];
        for k in 0..n {
            for i in 0..n {
                let mut v = if perm[i] == k { 1.0 } else { 0.0 };
                for j in 0..i {
                    v -= lu[perm[i] * n + j] * y[j];
                }
                y[i] = v;
            }
            for i in (0..n).rev() {
                let mut v = y[i];
                for j in i + 1..n {
                    v -= lu[perm[i] * n + j] * inv.a[j * n + k];
                }
                inv.a[i * n + k] = v / lu[perm[i] * n + i];
            }
        }
        Ok(inv)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn matvec_and_matmul() {
        let m = Matrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert_eq!(m.mul_vec(&[1.0, 1.0]), vec![3.0, 2.0]);
        let m2 = m.mat_mul(&m);
        assert_eq!(m2.to_rows(), vec![vec![5.0, 3.0], vec![3.0, 2.0]]);
        assert_eq!(m.pow(2).to_rows(), m2.to_rows());
        assert_eq!(m.pow(0).to_rows(), Matrix::identity(2).to_rows());
    }

    #[test]
    fn left_action_is_transpose_action() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0, 0.0], vec![0.5, 0.0, 3.0], vec![1.0, 1.0, 1.0]])
            .unwrap();
        let v = [0.3, -1.0, 2.0];
        assert_eq!(m.mul_vec_left(&v), m.transpose().mul_vec(&v));
    }

    #[test]
    fn inverse_known_2x2() {
        let m = Matrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let inv = m.inverse().unwrap();
        let expect = [[1.0, -1.0], [-1.0, 2.0]];
        for i in 0..2 {
            for j in 0..2 {
                assert!(close(inv.get(i, j), expect[i][j], 1e-14));
            }
        }
    }

    #[test]
    fn inverse_roundtrip_random() {
        let mut rng = crate::rng::SplitMix64::new(2024);
        for _ in 0..20 {
            let n = 1 + (rng.next_raw() % 6) as usize;
            let rows: Vec<Vec<f64>> = (0..n)
                .map(|i| {
                    (0..n)
                        .map(|j| rng.next_f64() + if i == j { 2.0 } else { 0.0 })
                        .collect()
                })
                .collect();
            let m = Matrix::from_rows(&rows).unwrap();
            let prod = m.mat_mul(&m.inverse().unwrap());
            for i in 0..n {
                for j in 0..n {
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!(close(prod.get(i, j), want, 1e-10));
                }
            }
        }
    }

    #[test]
    fn singular_rejected() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]).unwrap();
        assert!(m.inverse().is_err());
    }

    #[test]
    fn ragged_rejected() {
        assert!(Matrix::from_rows(&[vec![1.0, 2.0], vec![1.0]]).is_err());
    }
}
