//! Dense matrix support for desk-scale chains (n up to a few hundred).
//!
//! Everything here is deliberately dependency-free and deterministic:
//! LU with partial pivoting for linear solves, and a cyclic Jacobi sweep
//! for symmetric eigenproblems. Jacobi is quadratically convergent and
//! has no starting-vector nondeterminism, which keeps test baselines
//! bit-stable across platforms and thread counts.

use crate::error::Error;

/// Row-major dense matrix.
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

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Build from row slices; all rows must have equal length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Mat { rows: r, cols: c, data }
    }

    /// Rank-one matrix u * v^T.
    pub fn outer(u: &[f64], v: &[f64]) -> Self {
        let mut m = Mat::zeros(u.len(), v.len());
        for i in 0..u.len() {
            for j in 0..v.len() {
                m[(i, j)] = u[i] * v[j];
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
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

    pub fn matmul(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.rows, "inner dimensions differ");
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, v.len(), "dimension mismatch");
        let mut out = vec![0.0; self.rows];
        for i in 0..self.rows {
            let mut acc = 0.0;
            let row = self.row(i);
            for j in 0..self.cols {
                acc += row[j] * v[j];
            }
            out[i] = acc;
        }
        out
    }

    /// x^T A, returned as a vector.
    pub fn vecmat(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.rows, v.len(), "dimension mismatch");
        let mut out = vec![0.0; self.cols];
        for i in 0..self.rows {
            let x = v[i];
            if x == 0.0 {
                continue;
            }
            let row = self.row(i);
            for j in 0..self.cols {
                out[j] += x * row[j];
            }
        }
        out
    }

    pub fn add(&self, other: &Mat) -> Mat {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let mut out = self.clone();
        for (a, b) in out.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        out
    }

    pub fn sub(&self, other: &Mat) -> Mat {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let mut out = self.clone();
        for (a, b) in out.data.iter_mut().zip(&other.data) {
            *a -= b;
        }
        out
    }

    pub fn scale(&self, s: f64) -> Mat {
        let mut out = self.clone();
        for a in out.data.iter_mut() {
            *a *= s;
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, &x| m.max(x.abs()))
    }

    /// Maximum absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        (0..self.rows)
            .map(|i| self.row(i).iter().map(|x| x.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Maximum absolute column sum.
    pub fn norm_1(&self) -> f64 {
        let mut sums = vec![0.0; self.cols];
        for i in 0..self.rows {
            for j in 0..self.cols {
                sums[j] += self[(i, j)].abs();
            }
        }
        sums.into_iter().fold(0.0, f64::max)
    }
}

impl std::ops::Index<(usize, usize)> for Mat {
    type Output = f64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Mat {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// LU factorization with partial pivoting (PA = LU).
pub struct LuFactors {
    lu: Mat,
    perm: Vec<usize>,
}

/// Factor a square matrix; fails with `SingularSolve` when a pivot falls
/// below `1e-14 * max_abs(A)` (or exactly zero for the zero matrix).
pub fn lu_factor(a: &Mat) -> Result<LuFactors, Error> {
    assert!(a.is_square(), "LU requires a square matrix");
    let n = a.rows();
    let mut lu = a.clone();
    let mut perm: Vec<usize> = (0..n).collect();
    let tiny = 1e-14 * a.max_abs();
    for k in 0..n {
        // pivot selection
        let mut piv = k;
        let mut piv_val = lu[(k, k)].abs();
        for i in k + 1..n {
            let v = lu[(i, k)].abs();
            if v > piv_val {
                piv = i;
                piv_val = v;
            }
        }
        if piv_val <= tiny {
            return Err(Error::SingularSolve);
        }
        if piv != k {
            for j in 0..n {
                let t = lu[(k, j)];
                lu[(k, j)] = lu[(piv, j)];
                lu[(piv, j)] = t;
            }
            perm.swap(k, piv);
        }
        let pivot = lu[(k, k)];
        for i in k + 1..n {
            let factor = lu[(i, k)] / pivot;
            lu[(i, k)] = factor;
            if factor != 0.0 {
                for j in k + 1..n {
                    let u = lu[(k, j)];
                    lu[(i, j)] -= factor * u;
                }
            }
        }
    }
    Ok(LuFactors { lu, perm })
}

impl LuFactors {
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.lu.rows();
        assert_eq!(b.len(), n);
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        // forward substitution (unit lower triangle)
        for i in 1..n {
            let mut acc = x[i];
            for j in 0..i {
                acc -= self.lu[(i, j)] * x[j];
            }
            x[i] = acc;
        }
        // back substitution
        for i in (0..n).rev() {
            let mut acc = x[i];
            for j in i + 1..n {
                acc -= self.lu[(i, j)] * x[j];
            }
            x[i] = acc / self.lu[(i, i)];
        }
        x
    }

    pub fn solve_mat(&self, b: &Mat) -> Mat {
        let n = self.lu.rows();
        assert_eq!(b.rows(), n);
        let bt = b.transpose();
        let mut out = Mat::zeros(n, b.cols());
        for j in 0..b.cols() {
            let col = self.solve(bt.row(j));
            for i in 0..n {
                out[(i, j)] = col[i];
            }
        }
        out
    }

    pub fn inverse(&self) -> Mat {
        let n = self.lu.rows();
        self.solve_mat(&Mat::identity(n))
    }
}

/// 1-norm condition number estimate, `||A||_1 * ||A^-1||_1`.
pub fn condition_1norm(a: &Mat, factors: &LuFactors) -> f64 {
    a.norm_1() * factors.inverse().norm_1()
}

/// Off-diagonal Frobenius norm, the Jacobi convergence measure.
fn off_diag_norm(a: &Mat) -> f64 {
    let n = a.rows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a[(i, j)] * a[(i, j)];
            }
        }
    }
    s.sqrt()
}

const JACOBI_TOL: f64 = 1e-13;
const JACOBI_MAX_SWEEPS: usize = 100;

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Deterministic sweep order (p ascending, q ascending). Converges when the
/// off-diagonal Frobenius norm drops below 1e-13; capped at 100 sweeps.
/// Returns unsorted eigenvalues with matching eigenvector columns.
pub fn jacobi_eigh(a: &Mat) -> Result<(Vec<f64>, Mat), Error> {
    assert!(a.is_square(), "eigensolver requires a square matrix");
    let n = a.rows();
    let mut m = a.clone();
    let mut v = Mat::identity(n);
    if n <= 1 {
        return Ok(((0..n).map(|i| m[(i, i)]).collect(), v));
    }
    for _sweep in 0..JACOBI_MAX_SWEEPS {
        if off_diag_norm(&m) < JACOBI_TOL {
            return Ok(((0..n).map(|i| m[(i, i)]).collect(), v));
        }
        for p in 0..n - 1 {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let tau = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                // columns p, q of M
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                // rows p, q of M
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                // accumulate V <- V J
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    if off_diag_norm(&m) < JACOBI_TOL {
        return Ok(((0..n).map(|i| m[(i, i)]).collect(), v));
    }
    Err(Error::EigensolverFailure {
        sweeps: JACOBI_MAX_SWEEPS,
    })
}

/// Largest eigenvalue of a symmetric matrix.
pub fn jacobi_max_eigenvalue(a: &Mat) -> Result<f64, Error> {
    let (vals, _) = jacobi_eigh(a)?;
    Ok(vals.into_iter().fold(f64::NEG_INFINITY, f64::max))
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
