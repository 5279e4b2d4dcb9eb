//! Dense row-major matrices sized for this problem (tens to a few hundred
//! rows), plus the Cholesky routines needed for least squares and
//! covariance inversion.

use crate::error::{HydroError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length mismatch");
        Mat { rows, cols, data }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// out = A·x
    pub fn matvec(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (i, o) in out.iter_mut().enumerate() {
            let row = self.row(i);
            *o = row.iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }

    /// out = Aᵀ·x
    pub fn matvec_t(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        out.fill(0.0);
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for (o, a) in out.iter_mut().zip(self.row(i)) {
                *o += a * xi;
            }
        }
    }

    /// A += scale · a·bᵀ
    pub fn add_outer(&mut self, a: &[f64], b: &[f64], scale: f64) {
        debug_assert_eq!(a.len(), self.rows);
        debug_assert_eq!(b.len(), self.cols);
        for (i, &ai) in a.iter().enumerate() {
            let s = scale * ai;
            if s == 0.0 {
                continue;
            }
            for (m, &bj) in self.row_mut(i).iter_mut().zip(b) {
                *m += s * bj;
            }
        }
    }

    pub fn transpose(&self) -> Mat {
        let mut t = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }
}

impl std::ops::Index<(usize, usize)> for Mat {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Mat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
/// Fails if a pivot drops below `tol` relative to the diagonal scale.
pub fn cholesky(a: &Mat) -> Result<Mat> {
    let n = a.rows();
    if a.cols() != n {
        return Err(HydroError::Shape(format!(
            "cholesky needs a square matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    let scale = (0..n).map(|i| a[(i, i)].abs()).fold(0.0_f64, f64::max);
    let tol = 1e-13 * scale.max(f64::MIN_POSITIVE);
    let mut l = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[(i, j)];
            for k in 0..j {
                sum -= l[(i, k)] * l[(j, k)];
            }
            if i == j {
                if sum <= tol || !sum.is_finite() {
                    return Err(HydroError::Numeric(format!(
                        "matrix not positive definite at pivot {i} (value {sum:.3e})"
                    )));
                }
                l[(i, i)] = sum.sqrt();
            } else {
                l[(i, j)] = sum / l[(j, j)];
            }
        }
    }
    Ok(l)
}

/// Solves A·x = b given the Cholesky factor L of A.
pub fn chol_solve(l: &Mat, b: &[f64]) -> Vec<f64> {
    let n = l.rows();
    debug_assert_eq!(b.len(), n);
    // forward: L y = b
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l[(i, k)] * y[k];
        }
        y[i] = sum / l[(i, i)];
    }
    // backward: Lᵀ x = y
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut sum = y[i];
        for k in i + 1..n {
            sum -= l[(k, i)] * x[k];
        }
        x[i] = sum / l[(i, i)];
    }
    x
}

/// Inverse of a symmetric positive-definite matrix via its Cholesky factor.
pub fn chol_inverse(l: &Mat) -> Mat {
    let n = l.rows();
    let mut inv = Mat::zeros(n, n);
    let mut e = vec![0.0; n];
    for j in 0..n {
        e.fill(0.0);
        e[j] = 1.0;
        let col = chol_solve(l, &e);
        for i in 0..n {
            inv[(i, j)] = col[i];
        }
    }
    // symmetrize against round-off
    for i in 0..n {
        for j in 0..i {
            let m = 0.5 * (inv[(i, j)] + inv[(j, i)]);
            inv[(i, j)] = m;
            inv[(j, i)] = m;
        }
    }
    inv
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn matvec_and_transpose() {
        let a = Mat::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let mut out = vec![0.0; 2];
        a.matvec(&[1.0, 1.0, 1.0], &mut out);
        assert_eq!(out, vec![6.0, 15.0]);
        let mut out_t = vec![0.0; 3];
        a.matvec_t(&[1.0, 1.0], &mut out_t);
        assert_eq!(out_t, vec![5.0, 7.0, 9.0]);
        assert_eq!(a.transpose()[(2, 1)], 6.0);
    }

    #[test]
    fn cholesky_solve_roundtrip() {
        // SPD matrix built as BᵀB + I
        let b = Mat::from_vec(3, 3, vec![2.0, -1.0, 0.5, 0.3, 1.5, -0.2, 0.0, 0.7, 1.1]);
        let mut a = Mat::identity(3);
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    a[(i, j)] += b[(k, i)] * b[(k, j)];
                }
            }
        }
        let l = cholesky(&a).unwrap();
        let x_true = vec![0.4, -1.2, 2.5];
        let mut rhs = vec![0.0; 3];
        a.matvec(&x_true, &mut rhs);
        let x = chol_solve(&l, &rhs);
        for (xi, ti) in x.iter().zip(&x_true) {
            assert_relative_eq!(xi, ti, max_relative = 1e-12);
        }
        let inv = chol_inverse(&l);
        let mut prod = vec![0.0; 3];
        inv.matvec(&rhs, &mut prod);
        for (pi, ti) in prod.iter().zip(&x_true) {
            assert_relative_eq!(pi, ti, max_relative = 1e-12);
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = Mat::from_vec(2, 2, vec![1.0, 2.0, 2.0, 1.0]);
        assert!(cholesky(&a).is_err());
    }
}
