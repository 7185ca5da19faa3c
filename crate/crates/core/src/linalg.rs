//! Dense real linear algebra: a row-major [`Matrix`], a cyclic Jacobi
//! symmetric eigensolver, Gram-based singular values, and LU solves.
//!
//! Everything here is `f64` and allocation-per-call; matrices in this crate
//! stay in the low hundreds of rows.

use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const JACOBI_TOL: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 100;
const PIVOT_TOL: f64 = 1e-12;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::dim(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::param("matrix entries must be finite"));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, &d) in diag.iter().enumerate() {
            m.data[i * n + i] = d;
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
        Self { rows, cols, data }
    }

    /// Builds a matrix from equally sized rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::dim("ragged rows"));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn column_vector(v: &[f64]) -> Self {
        Self { rows: v.len(), cols: 1, data: v.to_vec() }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.data[i * self.cols + j]).collect()
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::dim(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ · other` without materializing the transpose.
    pub fn t_matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(Error::dim(format!(
                "cannot multiply ({}x{})ᵀ by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            let b_row = other.row(k);
            for (i, &a) in self.row(k).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    fn zip_with(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::dim(format!(
                "shape {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Matrix { rows: self.rows, cols: self.cols, data })
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|x| x * s).collect() }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&x| f(x)).collect() }
    }

    /// In-place `self += s * other`.
    pub fn axpy(&mut self, s: f64, other: &Matrix) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::dim("axpy shape mismatch"));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
        Ok(())
    }

    /// Frobenius inner product `⟨self, other⟩`.
    pub fn frobenius_dot(&self, other: &Matrix) -> Result<f64> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::dim("inner product shape mismatch"));
        }
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Largest `|m_ij - m_ji|`; infinite for non-square input.
    pub fn asymmetry(&self) -> f64 {
        if !self.is_square() {
            return f64::INFINITY;
        }
        let n = self.rows;
        let mut worst = 0.0_f64;
        for i in 0..n {
            for j in (i + 1)..n {
                worst = worst.max((self.data[i * n + j] - self.data[j * n + i]).abs());
            }
        }
        worst
    }

    /// Columns `cols` of `self`, in the given order.
    pub fn select_columns(&self, cols: &[usize]) -> Matrix {
        Matrix::from_fn(self.rows, cols.len(), |i, j| self[(i, cols[j])])
    }

    /// Rows reordered so that row `i` of the output is row `order[i]` of `self`.
    pub fn select_rows(&self, order: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(order.len() * self.cols);
        for &r in order {
            data.extend_from_slice(self.row(r));
        }
        Matrix { rows: order.len(), cols: self.cols, data }
    }

    /// Row sums.
    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|i| self.row(i).iter().sum()).collect()
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

/// Compressed sparse row matrix, used for graph operators applied many times.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn from_dense(m: &Matrix) -> Self {
        let mut row_ptr = Vec::with_capacity(m.rows + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for i in 0..m.rows {
            for (j, &x) in m.row(i).iter().enumerate() {
                if x != 0.0 {
                    col_idx.push(j);
                    values.push(x);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Self { rows: m.rows, cols: m.cols, row_ptr, col_idx, values }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn to_dense(&self) -> Matrix {
        let mut m = Matrix::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            for idx in self.row_ptr[i]..self.row_ptr[i + 1] {
                m[(i, self.col_idx[idx])] = self.values[idx];
            }
        }
        m
    }

    /// `self · b` for dense `b`.
    pub fn mul_dense(&self, b: &Matrix) -> Result<Matrix> {
        if self.cols != b.rows {
            return Err(Error::dim(format!(
                "cannot multiply sparse {}x{} by {}x{}",
                self.rows, self.cols, b.rows, b.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, b.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * b.cols..(i + 1) * b.cols];
            for idx in self.row_ptr[i]..self.row_ptr[i + 1] {
                let a = self.values[idx];
                for (o, &x) in out_row.iter_mut().zip(b.row(self.col_idx[idx])) {
                    *o += a * x;
                }
            }
        }
        Ok(out)
    }
}

/// Spectrum of a symmetric matrix.
///
/// Eigenvalues are sorted in descending order; column `i` of `eigenvectors`
/// is the unit eigenvector of `eigenvalues[i]`. Each eigenvector is signed so
/// that its entry of largest magnitude (lowest index on ties) is nonnegative.
#[derive(Debug, Clone)]
pub struct EigDecomposition {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Matrix,
}

impl EigDecomposition {
    pub fn eigenvector(&self, i: usize) -> Vec<f64> {
        self.eigenvectors.column(i)
    }

    /// Columns for the `k` smallest eigenvalues, smallest first.
    pub fn smallest(&self, k: usize) -> Matrix {
        let n = self.eigenvalues.len();
        let order: Vec<usize> = (0..k.min(n)).map(|i| n - 1 - i).collect();
        self.eigenvectors.select_columns(&order)
    }

    /// Columns for the `k` largest eigenvalues, largest first.
    pub fn largest(&self, k: usize) -> Matrix {
        let order: Vec<usize> = (0..k.min(self.eigenvalues.len())).collect();
        self.eigenvectors.select_columns(&order)
    }
}

pub fn check_symmetric(m: &Matrix, tol: f64) -> Result<()> {
    if !m.is_square() {
        return Err(Error::dim(format!("expected square matrix, got {}x{}", m.rows, m.cols)));
    }
    let asym = m.asymmetry();
    if asym > tol * (1.0 + m.max_abs()) {
        return Err(Error::NotSymmetric(asym));
    }
    Ok(())
}

/// Full eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
pub fn sym_eig(m: &Matrix) -> Result<EigDecomposition> {
    check_symmetric(m, 1e-10)?;
    let n = m.rows;
    // symmetrize exactly so that row updates can be mirrored into columns
    let mut a = Matrix::from_fn(n, n, |i, j| 0.5 * (m[(i, j)] + m[(j, i)]));
    // rows of `vt` are the eigenvectors
    let mut vt = Matrix::identity(n);
    let scale = a.frobenius_norm();
    let target = JACOBI_TOL * scale;

    for _sweep in 0..JACOBI_MAX_SWEEPS {
        if off_diagonal_norm(&a) <= target {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let app = a[(p, p)];
                let aqq = a[(q, q)];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (theta * theta + 1.0).sqrt())
                } else {
                    -1.0 / (-theta + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                rotate(&mut a, p, q, c, s, t, apq);
                rotate_rows(&mut vt, p, q, c, s);
            }
        }
    }

    let diag = a.diag();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| diag[j].total_cmp(&diag[i]).then(i.cmp(&j)));
    let eigenvalues = order.iter().map(|&i| diag[i]).collect();
    let mut eigenvectors = Matrix::zeros(n, n);
    for (col, &src) in order.iter().enumerate() {
        let mut v = vt.row(src).to_vec();
        fix_sign(&mut v);
        for (i, x) in v.into_iter().enumerate() {
            eigenvectors[(i, col)] = x;
        }
    }
    Ok(EigDecomposition { eigenvalues, eigenvectors })
}

fn off_diagonal_norm(a: &Matrix) -> f64 {
    let n = a.rows;
    let mut s = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            s += a[(i, j)] * a[(i, j)];
        }
    }
    (2.0 * s).sqrt()
}

/// Applies the rotation `Jᵀ A J` zeroing `a[p][q]`.
fn rotate(a: &mut Matrix, p: usize, q: usize, c: f64, s: f64, t: f64, apq: f64) {
    let n = a.rows;
    for k in 0..n {
        if k == p || k == q {
            continue;
        }
        let akp = a[(p, k)];
        let akq = a[(q, k)];
        let new_p = c * akp - s * akq;
        let new_q = s * akp + c * akq;
        a[(p, k)] = new_p;
        a[(k, p)] = new_p;
        a[(q, k)] = new_q;
        a[(k, q)] = new_q;
    }
    a[(p, p)] -= t * apq;
    a[(q, q)] += t * apq;
    a[(p, q)] = 0.0;
    a[(q, p)] = 0.0;
}

fn rotate_rows(vt: &mut Matrix, p: usize, q: usize, c: f64, s: f64) {
    let n = vt.cols;
    for k in 0..n {
        let vp = vt[(p, k)];
        let vq = vt[(q, k)];
        vt[(p, k)] = c * vp - s * vq;
        vt[(q, k)] = s * vp + c * vq;
    }
}

/// Flips `v` so its largest-magnitude entry (first one on ties) is nonnegative.
pub fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v.get(best).is_some_and(|&x| x < 0.0) {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// The `k` largest singular values of `m`, descending.
///
/// Computed from the eigenvalues of the smaller Gram matrix.
pub fn top_singular_values(m: &Matrix, k: usize) -> Result<Vec<f64>> {
    let min_dim = m.rows.min(m.cols);
    if k > min_dim {
        return Err(Error::param(format!("k={k} exceeds min dimension {min_dim}")));
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    let gram = if m.rows <= m.cols { m.matmul(&m.transpose())? } else { m.t_matmul(m)? };
    let eig = sym_eig(&gram)?;
    Ok(eig.eigenvalues.iter().take(k).map(|&l| l.max(0.0).sqrt()).collect())
}

/// `(frobenius, operator)` norms.
pub fn matrix_norms(m: &Matrix) -> Result<(f64, f64)> {
    let fro = m.frobenius_norm();
    if m.rows == 0 || m.cols == 0 {
        return Ok((fro, 0.0));
    }
    let op = top_singular_values(m, 1)?[0];
    Ok((fro, op))
}

pub fn operator_norm(m: &Matrix) -> Result<f64> {
    matrix_norms(m).map(|(_, op)| op)
}

/// Solves `m · x = b` by LU decomposition with partial pivoting.
pub fn solve_linear(m: &Matrix, b: &Matrix) -> Result<Matrix> {
    if !m.is_square() {
        return Err(Error::dim(format!("solve needs a square system, got {}x{}", m.rows, m.cols)));
    }
    if b.rows != m.rows {
        return Err(Error::dim(format!("rhs has {} rows, system has {}", b.rows, m.rows)));
    }
    let n = m.rows;
    let mut lu = m.clone();
    let mut x = b.clone();
    for col in 0..n {
        let (pivot_row, pivot_mag) = (col..n)
            .map(|r| (r, lu[(r, col)].abs()))
            .fold((col, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        if pivot_mag <= PIVOT_TOL {
            return Err(Error::Singular { pivot: col, magnitude: pivot_mag });
        }
        if pivot_row != col {
            swap_rows(&mut lu, col, pivot_row);
            swap_rows(&mut x, col, pivot_row);
        }
        let pivot = lu[(col, col)];
        for r in (col + 1)..n {
            let factor = lu[(r, col)] / pivot;
            if factor == 0.0 {
                continue;
            }
            lu[(r, col)] = 0.0;
            for c in (col + 1)..n {
                lu[(r, c)] -= factor * lu[(col, c)];
            }
            for c in 0..x.cols {
                x[(r, c)] -= factor * x[(col, c)];
            }
        }
    }
    for col in (0..n).rev() {
        let pivot = lu[(col, col)];
        for c in 0..x.cols {
            let mut acc = x[(col, c)];
            for k in (col + 1)..n {
                acc -= lu[(col, k)] * x[(k, c)];
            }
            x[(col, c)] = acc / pivot;
        }
    }
    Ok(x)
}

pub fn inverse(m: &Matrix) -> Result<Matrix> {
    solve_linear(m, &Matrix::identity(m.rows))
}

fn swap_rows(m: &mut Matrix, a: usize, b: usize) {
    if a == b {
        return;
    }
    let cols = m.cols;
    for c in 0..cols {
        m.data.swap(a * cols + c, b * cols + c);
    }
}

/// Orthogonal factor `O = U Vᵀ` of the SVD `m = U Σ Vᵀ` of a square matrix.
///
/// This is the maximizer of `tr(Oᵀ m)` over orthogonal `O`, i.e. the
/// orthogonal Procrustes solution. Rank-deficient directions are completed
/// with Gram–Schmidt.
pub fn orthogonal_polar_factor(m: &Matrix) -> Result<Matrix> {
    if !m.is_square() {
        return Err(Error::dim("polar factor needs a square matrix"));
    }
    let k = m.rows;
    let eig = sym_eig(&m.t_matmul(m)?)?;
    let sigma_max = eig.eigenvalues.first().copied().unwrap_or(0.0).max(0.0).sqrt();
    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(k);
    for i in 0..k {
        let sigma = eig.eigenvalues[i].max(0.0).sqrt();
        if sigma <= 1e-10 * sigma_max.max(1.0) {
            break;
        }
        let v = eig.eigenvector(i);
        let mut u: Vec<f64> = (0..k).map(|r| dot(m.row(r), &v) / sigma).collect();
        orthonormalize_against(&mut u, &u_cols);
        // numerically dependent on the columns so far: treat as rank-deficient
        if u.iter().any(|x| x.is_nan()) {
            break;
        }
        u_cols.push(u);
    }
    let rank = u_cols.len();
    let mut e = 0;
    while u_cols.len() < k {
        let mut cand = vec![0.0; k];
        cand[e] = 1.0;
        e += 1;
        orthonormalize_against(&mut cand, &u_cols);
        if cand.iter().any(|x| x.is_nan()) {
            continue;
        }
        u_cols.push(cand);
    }
    debug_assert!(rank <= k);
    let u = Matrix::from_fn(k, k, |i, j| u_cols[j][i]);
    u.matmul(&eig.eigenvectors.transpose())
}

fn orthonormalize_against(v: &mut [f64], basis: &[Vec<f64>]) {
    for _ in 0..2 {
        for b in basis {
            let proj = dot(v, b);
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= proj * y);
        }
    }
    let norm = dot(v, v).sqrt();
    if norm < 1e-8 {
        v.iter_mut().for_each(|x| *x = f64::NAN);
    } else {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
