//! Dense real-matrix kernel: factorizations, linear and Lyapunov solves, and
//! eigenvalue routines.
//!
//! All matrices are row-major `f64`. Every routine here is a pure function of
//! its inputs, so values can be shared freely across threads.

mod eig;

pub use eig::{eigenvalues, sym_eig, Spectrum};

use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Relative tolerance used everywhere a matrix is required to be symmetric.
pub const SYM_TOL: f64 = 1e-10;

/// Dense row-major matrix of 64-bit floats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert!(rows >= 1 && cols >= 1, "matrix must have positive shape");
        assert_eq!(data.len(), rows * cols, "data length must be rows * cols");
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::new(rows, cols, vec![0.0; rows * cols])
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn diag(entries: &[f64]) -> Self {
        let n = entries.len();
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = entries[i];
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self::new(rows, cols, data)
    }

    /// Column vector from a slice.
    pub fn col_vec(v: &[f64]) -> Self {
        Self::new(v.len(), 1, v.to_vec())
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
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

    /// `self * other`.
    pub fn matmul(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.rows, "inner dimensions must agree");
        let mut c = Mat::zeros(self.rows, other.cols);
        gemm_acc(&mut c, self, other);
        c
    }

    /// `self * other^T`.
    pub fn matmul_nt(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.cols, "inner dimensions must agree");
        let mut c = Mat::zeros(self.rows, other.rows);
        gemm_nt_acc(&mut c, self, other);
        c
    }

    /// `self^T * other`.
    pub fn matmul_tn(&self, other: &Mat) -> Mat {
        assert_eq!(self.rows, other.rows, "inner dimensions must agree");
        let at = self.transpose();
        at.matmul(other)
    }

    /// Matrix-vector product.
    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, v.len(), "dimension mismatch");
        (0..self.rows).map(|i| dot(self.row(i), v)).collect()
    }

    pub fn add(&self, other: &Mat) -> Mat {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Mat::new(self.rows, self.cols, data)
    }

    pub fn sub(&self, other: &Mat) -> Mat {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Mat::new(self.rows, self.cols, data)
    }

    pub fn scale(&self, s: f64) -> Mat {
        Mat::new(self.rows, self.cols, self.data.iter().map(|a| a * s).collect())
    }

    /// `self += s * other`.
    pub fn axpy(&mut self, s: f64, other: &Mat) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    /// `(self + self^T) / 2`, in place. Requires a square matrix.
    pub fn symmetrize(&mut self) {
        assert!(self.is_square());
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                let avg = 0.5 * (self[(i, j)] + self[(j, i)]);
                self[(i, j)] = avg;
                self[(j, i)] = avg;
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest relative row/column asymmetry, 0 for exactly symmetric input.
    pub fn asymmetry(&self) -> f64 {
        if !self.is_square() {
            return f64::INFINITY;
        }
        let scale = self.max_abs().max(1.0);
        let mut worst: f64 = 0.0;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst / scale
    }

    pub fn is_symmetric(&self, rel_tol: f64) -> bool {
        self.is_square() && self.asymmetry() <= rel_tol
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
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

/// Frobenius norm.
pub fn frob_norm(a: &Mat) -> f64 {
    a.data.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Spectral norm: largest singular value, via the symmetric eigensolver
/// applied to `a^T a`.
pub fn op_norm2(a: &Mat) -> f64 {
    let g = a.matmul_tn(a);
    let (vals, _) = sym_eig(&g);
    vals.iter().fold(0.0_f64, |m, &v| m.max(v)).max(0.0).sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0; 4];
    let mut chunks = a.chunks_exact(4).zip(b.chunks_exact(4));
    for (ca, cb) in &mut chunks {
        acc[0] += ca[0] * cb[0];
        acc[1] += ca[1] * cb[1];
        acc[2] += ca[2] * cb[2];
        acc[3] += ca[3] * cb[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    let rem = a.len() - a.len() % 4;
    for k in rem..a.len() {
        s += a[k] * b[k];
    }
    s
}

pub fn norm2(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Work threshold (multiply-adds) above which GEMM kernels fan out to rayon.
const PAR_GEMM_WORK: usize = 1 << 18;

fn gemm_row(crow: &mut [f64], arow: &[f64], b: &Mat) {
    let n = b.cols;
    let k = b.rows;
    let mut kk = 0;
    // 4-way unrolled panel update keeps four FMA chains live per pass.
    while kk + 4 <= k {
        let (a0, a1, a2, a3) = (arow[kk], arow[kk + 1], arow[kk + 2], arow[kk + 3]);
        let b0 = &b.data[kk * n..kk * n + n];
        let b1 = &b.data[(kk + 1) * n..(kk + 1) * n + n];
        let b2 = &b.data[(kk + 2) * n..(kk + 2) * n + n];
        let b3 = &b.data[(kk + 3) * n..(kk + 3) * n + n];
        for j in 0..n {
            crow[j] += a0 * b0[j] + a1 * b1[j] + a2 * b2[j] + a3 * b3[j];
        }
        kk += 4;
    }
    while kk < k {
        let a0 = arow[kk];
        let b0 = &b.data[kk * n..kk * n + n];
        for j in 0..n {
            crow[j] += a0 * b0[j];
        }
        kk += 1;
    }
}

/// `c += a * b`. Parallel over output rows for large products; the reduction
/// over the inner dimension stays sequential per element, so results do not
/// depend on thread count.
pub fn gemm_acc(c: &mut Mat, a: &Mat, b: &Mat) {
    assert_eq!(a.cols, b.rows);
    assert_eq!(c.rows, a.rows);
    assert_eq!(c.cols, b.cols);
    let n = b.cols;
    if a.rows * a.cols * n >= PAR_GEMM_WORK {
        use rayon::prelude::*;
        c.data
            .par_chunks_mut(n)
            .zip(a.data.par_chunks(a.cols))
            .for_each(|(crow, arow)| gemm_row(crow, arow, b));
    } else {
        for i in 0..a.rows {
            let crow = &mut c.data[i * n..(i + 1) * n];
            gemm_row(crow, &a.data[i * a.cols..(i + 1) * a.cols], b);
        }
    }
}

fn gemm_nt_row(crow: &mut [f64], arow: &[f64], b: &Mat) {
    for (j, cj) in crow.iter_mut().enumerate() {
        *cj += dot(arow, b.row(j));
    }
}

/// `c += a * b^T`.
pub fn gemm_nt_acc(c: &mut Mat, a: &Mat, b: &Mat) {
    assert_eq!(a.cols, b.cols);
    assert_eq!(c.rows, a.rows);
    assert_eq!(c.cols, b.rows);
    let n = b.rows;
    if a.rows * a.cols * n >= PAR_GEMM_WORK {
        use rayon::prelude::*;
        c.data
            .par_chunks_mut(n)
            .zip(a.data.par_chunks(a.cols))
            .for_each(|(crow, arow)| gemm_nt_row(crow, arow, b));
    } else {
        for i in 0..a.rows {
            let crow = &mut c.data[i * n..(i + 1) * n];
            gemm_nt_row(crow, &a.data[i * a.cols..(i + 1) * a.cols], b);
        }
    }
}

/// LU factorization with partial pivoting, stored packed.
struct Lu {
    lu: Mat,
    perm: Vec<usize>,
}

fn lu_factor(a: &Mat) -> Result<Lu> {
    assert!(a.is_square());
    let n = a.rows;
    let pivot_floor = 1e-13 * frob_norm(a);
    let mut lu = a.clone();
    let mut perm: Vec<usize> = (0..n).collect();
    for k in 0..n {
        let mut p = k;
        let mut best = lu[(k, k)].abs();
        for i in (k + 1)..n {
            let v = lu[(i, k)].abs();
            if v > best {
                best = v;
                p = i;
            }
        }
        if best < pivot_floor || best == 0.0 {
            return Err(Error::SingularMatrix(format!(
                "pivot {best:.3e} below threshold at column {k}"
            )));
        }
        if p != k {
            perm.swap(k, p);
            for j in 0..n {
                let tmp = lu[(k, j)];
                lu[(k, j)] = lu[(p, j)];
                lu[(p, j)] = tmp;
            }
        }
        let pivot = lu[(k, k)];
        for i in (k + 1)..n {
            let f = lu[(i, k)] / pivot;
            lu[(i, k)] = f;
            for j in (k + 1)..n {
                let sub = f * lu[(k, j)];
                lu[(i, j)] -= sub;
            }
        }
    }
    Ok(Lu { lu, perm })
}

impl Lu {
    fn solve_vec(&self, b: &[f64]) -> Vec<f64> {
        let n = self.lu.rows;
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 1..n {
            let mut s = x[i];
            for j in 0..i {
                s -= self.lu[(i, j)] * x[j];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in (i + 1)..n {
                s -= self.lu[(i, j)] * x[j];
            }
            x[i] = s / self.lu[(i, i)];
        }
        x
    }
}

/// Solve `a X = b` by LU with partial pivoting.
///
/// Fails with `SingularMatrix` when a pivot drops below `1e-13 * ||a||_F`.
pub fn solve_linear(a: &Mat, b: &Mat) -> Result<Mat> {
    if !a.is_square() {
        return Err(Error::ShapeMismatch(format!(
            "coefficient matrix must be square, got {}x{}",
            a.rows, a.cols
        )));
    }
    if b.rows != a.rows {
        return Err(Error::ShapeMismatch(format!(
            "rhs has {} rows, expected {}",
            b.rows, a.rows
        )));
    }
    let lu = lu_factor(a)?;
    let mut x = Mat::zeros(b.rows, b.cols);
    for j in 0..b.cols {
        let col = lu.solve_vec(&b.col(j));
        for i in 0..b.rows {
            x[(i, j)] = col[i];
        }
    }
    Ok(x)
}

/// Outcome of a Cholesky attempt. `NotSpd` is a test result, not an error:
/// it is how positive definiteness is decided throughout the crate.
#[derive(Debug, Clone)]
pub enum CholeskyOutcome {
    /// Lower-triangular factor `L` with `L L^T = a`.
    Factor(Mat),
    /// A pivot was non-positive; the matrix is not positive definite.
    NotSpd,
}

/// Cholesky factorization of a symmetric matrix.
///
/// Returns `NotSymmetric` when the input fails the symmetry precondition
/// (relative tolerance `1e-10`); a non-positive pivot yields
/// [`CholeskyOutcome::NotSpd`].
pub fn cholesky(a: &Mat) -> Result<CholeskyOutcome> {
    if !a.is_square() {
        return Err(Error::ShapeMismatch("cholesky requires a square matrix".into()));
    }
    let asym = a.asymmetry();
    if asym > SYM_TOL {
        return Err(Error::NotSymmetric(asym));
    }
    let n = a.rows;
    let mut l = Mat::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d <= 0.0 {
            return Ok(CholeskyOutcome::NotSpd);
        }
        let dj = d.sqrt();
        l[(j, j)] = dj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / dj;
        }
    }
    Ok(CholeskyOutcome::Factor(l))
}

/// True iff `a` is symmetric positive definite (per [`cholesky`]).
pub fn is_spd(a: &Mat) -> Result<bool> {
    Ok(matches!(cholesky(a)?, CholeskyOutcome::Factor(_)))
}

/// Solve `L y = b` (lower-triangular forward substitution).
pub fn solve_lower_triangular(l: &Mat, b: &[f64]) -> Vec<f64> {
    let n = l.rows;
    let mut y = b.to_vec();
    for i in 0..n {
        let mut s = y[i];
        for j in 0..i {
            s -= l[(i, j)] * y[j];
        }
        y[i] = s / l[(i, i)];
    }
    y
}

/// Solve `L^T x = y` (backward substitution against a lower factor).
pub fn solve_lower_transposed(l: &Mat, y: &[f64]) -> Vec<f64> {
    let n = l.rows;
    let mut x = y.to_vec();
    for i in (0..n).rev() {
        let mut s = x[i];
        for j in (i + 1)..n {
            s -= l[(j, i)] * x[j];
        }
        x[i] = s / l[(i, i)];
    }
    x
}

/// Solve the continuous Lyapunov equation
/// `a_cl^T P + P a_cl = -m`
/// by Kronecker vectorization: `(I (x) a_cl^T + a_cl^T (x) I) vec(P) = -vec(m)`.
///
/// The n^2 x n^2 system keeps the whole solve auditable; the target sizes
/// (n <= 32) make the O(n^6) cost irrelevant. A singular Kronecker system
/// means `a_cl` has a resonant eigenvalue pair (lambda_i + conj(lambda_j) ~ 0),
/// i.e. marginal stability, and is reported as `SingularMatrix`.
///
/// The returned solution is symmetrized exactly: `P <- (P + P^T)/2`.
pub fn solve_lyapunov(a_cl: &Mat, m: &Mat) -> Result<Mat> {
    if !a_cl.is_square() || !m.is_square() || a_cl.rows != m.rows {
        return Err(Error::ShapeMismatch(
            "lyapunov solve requires square matrices of equal order".into(),
        ));
    }
    let n = a_cl.rows;
    if n > 32 {
        return Err(Error::InvalidInput(format!(
            "lyapunov solve limited to n <= 32, got n = {n}"
        )));
    }
    let asym = m.asymmetry();
    if asym > SYM_TOL {
        return Err(Error::NotSymmetric(asym));
    }
    // Column-stacking convention: vec index j*n + i <-> P[i, j].
    let nn = n * n;
    let mut k = Mat::zeros(nn, nn);
    for j in 0..n {
        for i in 0..n {
            let row = j * n + i;
            // (I (x) A^T) term: sum_k A[k, i] P[k, j]
            for kk in 0..n {
                k[(row, j * n + kk)] += a_cl[(kk, i)];
            }
            // (A^T (x) I) term: sum_l P[i, l] A[l, j]
            for l in 0..n {
                k[(row, l * n + i)] += a_cl[(l, j)];
            }
        }
    }
    let mut rhs = Mat::zeros(nn, 1);
    for j in 0..n {
        for i in 0..n {
            rhs[(j * n + i, 0)] = -m[(i, j)];
        }
    }
    let x = solve_linear(&k, &rhs)?;
    let mut p = Mat::zeros(n, n);
    for j in 0..n {
        for i in 0..n {
            p[(i, j)] = x[(j * n + i, 0)];
        }
    }
    p.symmetrize();
    Ok(p)
}

/// Numerical rank by Gaussian elimination with full pivoting.
///
/// A pivot counts while its magnitude stays above `1e-8 * scale`, where
/// `scale` is the Frobenius norm of the input.
pub fn rank(a: &Mat, rel_tol: f64) -> usize {
    let mut w = a.clone();
    let (rows, cols) = (w.rows, w.cols);
    let scale = frob_norm(&w);
    if scale == 0.0 {
        return 0;
    }
    let tol = rel_tol * scale;
    let mut r = 0;
    let mut row = 0;
    let mut used_cols = vec![false; cols];
    while row < rows {
        // Full pivot search over the remaining submatrix.
        let mut best = 0.0;
        let (mut pi, mut pj) = (0, 0);
        for i in row..rows {
            for (j, used) in used_cols.iter().enumerate() {
                if !used {
                    let v = w[(i, j)].abs();
                    if v > best {
                        best = v;
                        pi = i;
                        pj = j;
                    }
                }
            }
        }
        if best <= tol {
            break;
        }
        used_cols[pj] = true;
        if pi != row {
            for j in 0..cols {
                let tmp = w[(row, j)];
                w[(row, j)] = w[(pi, j)];
                w[(pi, j)] = tmp;
            }
        }
        let pivot = w[(row, pj)];
        for i in (row + 1)..rows {
            let f = w[(i, pj)] / pivot;
            if f != 0.0 {
                for j in 0..cols {
                    let sub = f * w[(row, j)];
                    w[(i, j)] -= sub;
                }
            }
        }
        r += 1;
        row += 1;
    }
    r
}
