//! Small dense real matrices: cyclic Jacobi symmetric eigensolver, Cholesky,
//! Householder QR, and a continuous-time algebraic Riccati solver.

use std::fmt;
use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is not square ({0}x{1})")]
    NotSquare(usize, usize),
    #[error("matrix has non-finite entries")]
    NonFinite,
    #[error("matrix is not positive definite (pivot {pivot} = {value})")]
    NotPositiveDefinite { pivot: usize, value: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("Riccati iteration did not converge: |dS/dt| = {residual} after {steps} steps")]
    NoConvergence { residual: f64, steps: usize },
    #[error("dimension {0} exceeds eigensolver limit of {MAX_EIG_DIM}")]
    TooLarge(usize),
}

/// Largest dimension accepted by [`sym_eig`].
pub const MAX_EIG_DIM: usize = 64;

/// Dense row-major real matrix.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        write!(f, "]")
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_diag(d: &[f64]) -> Self {
        let mut m = Matrix::zeros(d.len(), d.len());
        for (i, &v) in d.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    /// Panics if `data.len() != rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Matrix { rows, cols, data }
    }

    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |x| x.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Matrix { rows: r, cols: c, data }
    }

    pub fn column(v: &[f64]) -> Self {
        Matrix::from_vec(v.len(), 1, v.to_vec())
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
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

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    /// Panics on inner-dimension mismatch.
    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul inner dimension");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                let orow = other.row(k);
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, &b) in dst.iter_mut().zip(orow) {
                    *d += a * b;
                }
            }
        }
        out
    }

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, v.len(), "matvec dimension");
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn add(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.shape(), other.shape(), "add shape");
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.shape(), other.shape(), "sub shape");
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, k: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * k).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// `(A + Aᵀ) / 2`.
    pub fn symmetric_part(&self) -> Matrix {
        assert!(self.is_square());
        let mut s = self.clone();
        for i in 0..self.rows {
            for j in 0..i {
                let v = 0.5 * (self[(i, j)] + self[(j, i)]);
                s[(i, j)] = v;
                s[(j, i)] = v;
            }
        }
        s
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    fn zip_with(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }
}

/// Symmetric eigendecomposition with eigenvalues in ascending order and
/// eigenvectors stored as the columns of `vectors`.
#[derive(Clone, Debug)]
pub struct SymEig {
    pub values: Vec<f64>,
    pub vectors: Matrix,
}

impl SymEig {
    pub fn max(&self) -> f64 {
        *self.values.last().expect("empty spectrum")
    }

    pub fn min(&self) -> f64 {
        self.values[0]
    }

    /// Eigenvector of the largest eigenvalue. Among tied top eigenvalues the
    /// lexicographically first (normalized) vector is returned.
    pub fn top_vector(&self) -> Vec<f64> {
        self.extreme_vector(true)
    }

    pub fn bottom_vector(&self) -> Vec<f64> {
        self.extreme_vector(false)
    }

    fn extreme_vector(&self, top: bool) -> Vec<f64> {
        let n = self.values.len();
        let target = if top { self.max() } else { self.min() };
        let tol = 1e-12 * (1.0 + target.abs());
        let mut best: Option<Vec<f64>> = None;
        for j in 0..n {
            if (self.values[j] - target).abs() > tol {
                continue;
            }
            let v = self.vectors.col(j);
            let better = match &best {
                None => true,
                Some(b) => lex_greater(&v, b),
            };
            if better {
                best = Some(v);
            }
        }
        best.expect("eigenvector")
    }
}

fn lex_greater(a: &[f64], b: &[f64]) -> bool {
    for (x, y) in a.iter().zip(b) {
        if x != y {
            return x > y;
        }
    }
    false
}

/// Full eigendecomposition of the symmetric part of `a` by cyclic Jacobi
/// rotations. Deterministic for a given input; each eigenvector is scaled so
/// its largest-magnitude component is positive.
pub fn sym_eig(a: &Matrix) -> Result<SymEig, LinalgError> {
    let (values, vectors) = jacobi(a, true)?;
    Ok(SymEig {
        values,
        vectors: vectors.expect("vectors requested"),
    })
}

/// Eigenvalues only, ascending.
pub fn sym_eigvals(a: &Matrix) -> Result<Vec<f64>, LinalgError> {
    Ok(jacobi(a, false)?.0)
}

fn jacobi(a: &Matrix, want_vectors: bool) -> Result<(Vec<f64>, Option<Matrix>), LinalgError> {
    if !a.is_square() {
        return Err(LinalgError::NotSquare(a.rows(), a.cols()));
    }
    let n = a.rows();
    if n > MAX_EIG_DIM {
        return Err(LinalgError::TooLarge(n));
    }
    if !a.is_finite() {
        return Err(LinalgError::NonFinite);
    }
    let mut s = a.symmetric_part();
    let mut v = want_vectors.then(|| Matrix::identity(n));
    let tol = 1e-12f64.max(4.0 * f64::EPSILON * s.frobenius_norm());

    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..i).map(move |j| (i, j)))
            .map(|(i, j)| 2.0 * s[(i, j)] * s[(i, j)])
            .sum::<f64>()
            .sqrt();
        if off <= tol {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = s[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (s[(q, q)] - s[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                rotate(&mut s, p, q, c, sn, apq, t);
                if let Some(v) = v.as_mut() {
                    for k in 0..n {
                        let vkp = v[(k, p)];
                        let vkq = v[(k, q)];
                        v[(k, p)] = c * vkp - sn * vkq;
                        v[(k, q)] = sn * vkp + c * vkq;
                    }
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| s[(i, i)].total_cmp(&s[(j, j)]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| s[(i, i)]).collect();
    let vectors = v.map(|v| {
        let mut out = Matrix::zeros(n, n);
        for (dst, &src) in order.iter().enumerate() {
            let mut big = 0.0f64;
            let mut sign = 1.0;
            for k in 0..n {
                if v[(k, src)].abs() > big.abs() + 1e-14 {
                    big = v[(k, src)];
                    sign = big.signum();
                }
            }
            for k in 0..n {
                out[(k, dst)] = sign * v[(k, src)];
            }
        }
        out
    });
    Ok((values, vectors))
}

/// Applies the Jacobi rotation annihilating `s[p][q]` in place.
#[inline]
fn rotate(s: &mut Matrix, p: usize, q: usize, c: f64, sn: f64, apq: f64, t: f64) {
    let n = s.rows();
    let tau = sn / (1.0 + c);
    s[(p, p)] -= t * apq;
    s[(q, q)] += t * apq;
    s[(p, q)] = 0.0;
    s[(q, p)] = 0.0;
    for k in 0..n {
        if k == p || k == q {
            continue;
        }
        let skp = s[(k, p)];
        let skq = s[(k, q)];
        let nkp = skp - sn * (skq + tau * skp);
        let nkq = skq + sn * (skp - tau * skq);
        s[(k, p)] = nkp;
        s[(p, k)] = nkp;
        s[(k, q)] = nkq;
        s[(q, k)] = nkq;
    }
}

/// Largest eigenvalue of the symmetric part of `a` without eigenvectors:
/// Householder reduction to tridiagonal form followed by Sturm-sequence
/// bisection. Much cheaper than a Jacobi sweep for repeated small solves.
pub fn sym_max_eigenvalue(a: &Matrix) -> Result<f64, LinalgError> {
    if !a.is_square() {
        return Err(LinalgError::NotSquare(a.rows(), a.cols()));
    }
    if !a.is_finite() {
        return Err(LinalgError::NonFinite);
    }
    let n = a.rows();
    if n == 0 {
        return Ok(f64::NEG_INFINITY);
    }
    let mut m = a.symmetric_part();
    let (diag, off) = tridiagonalize(&mut m);
    Ok(tridiagonal_max_eig(&diag, &off))
}

/// Reduces symmetric `m` in place; returns the diagonal and the
/// sub-diagonal of the similar tridiagonal matrix.
fn tridiagonalize(m: &mut Matrix) -> (Vec<f64>, Vec<f64>) {
    let n = m.rows();
    let mut off = vec![0.0; n.saturating_sub(1)];
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    for k in 0..n.saturating_sub(2) {
        let alpha2: f64 = (k + 1..n).map(|i| m[(i, k)] * m[(i, k)]).sum();
        let norm = alpha2.sqrt();
        if norm == 0.0 {
            off[k] = 0.0;
            continue;
        }
        let x0 = m[(k + 1, k)];
        let alpha = if x0 > 0.0 { -norm } else { norm };
        off[k] = alpha;
        // v = x − αe₁, H = I − 2vvᵀ/(vᵀv)
        for i in k + 1..n {
            v[i] = m[(i, k)];
        }
        v[k + 1] -= alpha;
        let vtv = alpha2 - 2.0 * alpha * x0 + alpha * alpha;
        if vtv == 0.0 {
            continue;
        }
        let beta = 2.0 / vtv;
        // p = β A v, w = p − (β vᵀp / 2) v, A ← A − v wᵀ − w vᵀ
        for i in k + 1..n {
            p[i] = beta * (k + 1..n).map(|j| m[(i, j)] * v[j]).sum::<f64>();
        }
        let kappa = 0.5 * beta * (k + 1..n).map(|i| v[i] * p[i]).sum::<f64>();
        for i in k + 1..n {
            p[i] -= kappa * v[i];
        }
        for i in k + 1..n {
            for j in k + 1..n {
                m[(i, j)] -= v[i] * p[j] + p[i] * v[j];
            }
        }
    }
    if n >= 2 {
        off[n - 2] = m[(n - 1, n - 2)];
    }
    let diag = (0..n).map(|i| m[(i, i)]).collect();
    (diag, off)
}

/// Number of eigenvalues of the tridiagonal matrix strictly below `x`.
fn sturm_count(diag: &[f64], off: &[f64], x: f64) -> usize {
    let mut count = 0;
    let mut q = diag[0] - x;
    if q < 0.0 {
        count += 1;
    }
    for i in 1..diag.len() {
        let denom = if q == 0.0 { f64::EPSILON * (1.0 + x.abs()) } else { q };
        q = diag[i] - x - off[i - 1] * off[i - 1] / denom;
        if q < 0.0 {
            count += 1;
        }
    }
    count
}

fn tridiagonal_max_eig(diag: &[f64], off: &[f64]) -> f64 {
    let n = diag.len();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..n {
        let r = if i > 0 { off[i - 1].abs() } else { 0.0 } + if i + 1 < n { off[i].abs() } else { 0.0 };
        lo = lo.min(diag[i] - r);
        hi = hi.max(diag[i] + r);
    }
    let scale = lo.abs().max(hi.abs()).max(f64::MIN_POSITIVE);
    // the largest eigenvalue is the smallest x with all n eigenvalues below it
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi || hi - lo <= 2.0 * f64::EPSILON * scale {
            break;
        }
        if sturm_count(diag, off, mid) == n {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// ℓ2 logarithmic norm: largest eigenvalue of the symmetric part.
pub fn mu2(a: &Matrix) -> Result<f64, LinalgError> {
    let vals = sym_eigvals(a)?;
    Ok(*vals.last().unwrap_or(&f64::NEG_INFINITY))
}

/// Upper-triangular `U` with `UᵀU = S`.
pub fn cholesky_upper(s: &Matrix) -> Result<Matrix, LinalgError> {
    if !s.is_square() {
        return Err(LinalgError::NotSquare(s.rows(), s.cols()));
    }
    if !s.is_finite() {
        return Err(LinalgError::NonFinite);
    }
    let n = s.rows();
    let mut u = Matrix::zeros(n, n);
    for i in 0..n {
        let mut d = s[(i, i)];
        for k in 0..i {
            d -= u[(k, i)] * u[(k, i)];
        }
        if d <= 0.0 || !d.is_finite() {
            return Err(LinalgError::NotPositiveDefinite { pivot: i, value: d });
        }
        let uii = d.sqrt();
        u[(i, i)] = uii;
        for j in i + 1..n {
            let mut v = 0.5 * (s[(i, j)] + s[(j, i)]);
            for k in 0..i {
                v -= u[(k, i)] * u[(k, j)];
            }
            u[(i, j)] = v / uii;
        }
    }
    Ok(u)
}

/// Solves `S X = B` for symmetric positive definite `S`.
pub fn cholesky_solve(s: &Matrix, b: &Matrix) -> Result<Matrix, LinalgError> {
    let u = cholesky_upper(s)?;
    let n = s.rows();
    if b.rows() != n {
        return Err(LinalgError::Dimension(format!(
            "solve with {}x{} rhs for n = {n}",
            b.rows(),
            b.cols()
        )));
    }
    let mut x = b.clone();
    for c in 0..b.cols() {
        // Uᵀ y = b
        for i in 0..n {
            let mut v = x[(i, c)];
            for k in 0..i {
                v -= u[(k, i)] * x[(k, c)];
            }
            x[(i, c)] = v / u[(i, i)];
        }
        // U x = y
        for i in (0..n).rev() {
            let mut v = x[(i, c)];
            for k in i + 1..n {
                v -= u[(i, k)] * x[(k, c)];
            }
            x[(i, c)] = v / u[(i, i)];
        }
    }
    Ok(x)
}

/// Householder QR. Returns the full orthogonal `Q` (m×m) and `R` (m×n).
pub fn householder_qr(a: &Matrix) -> (Matrix, Matrix) {
    let (m, n) = a.shape();
    let mut r = a.clone();
    let mut q = Matrix::identity(m);
    for k in 0..n.min(m.saturating_sub(1)) {
        let norm: f64 = (k..m).map(|i| r[(i, k)] * r[(i, k)]).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let alpha = if r[(k, k)] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = (k..m).map(|i| r[(i, k)]).collect();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 == 0.0 {
            continue;
        }
        for j in 0..n {
            let dot: f64 = (k..m).map(|i| v[i - k] * r[(i, j)]).sum();
            let f = 2.0 * dot / vnorm2;
            for i in k..m {
                r[(i, j)] -= f * v[i - k];
            }
        }
        for i in 0..m {
            let dot: f64 = (k..m).map(|l| q[(i, l)] * v[l - k]).sum();
            let f = 2.0 * dot / vnorm2;
            for l in k..m {
                q[(i, l)] -= f * v[l - k];
            }
        }
    }
    (q, r)
}

/// Rows spanning the left null space of `b` (so `P B = 0`), orthonormal.
pub fn left_null_space(b: &Matrix) -> Matrix {
    let (n, _) = b.shape();
    let (q, r) = householder_qr(b);
    let tol = 1e-10 * b.max_abs().max(1.0);
    let rank = (0..r.rows().min(r.cols()))
        .filter(|&i| r[(i, i)].abs() > tol)
        .count();
    let mut p = Matrix::zeros(n - rank, n);
    for (row, j) in (rank..n).enumerate() {
        for i in 0..n {
            p[(row, i)] = q[(i, j)];
        }
    }
    p
}

/// Output of [`solve_care`].
#[derive(Clone, Debug)]
pub struct CareSolution {
    /// Feedback gain `K = R⁻¹ Bᵀ S`.
    pub gain: Matrix,
    /// Stabilizing solution of the algebraic Riccati equation.
    pub riccati: Matrix,
    /// Frobenius norm of `AᵀS + SA − SBR⁻¹BᵀS + Q`.
    pub residual: f64,
}

/// Right-hand side of the Riccati flow, also the CARE residual at a fixed point.
pub fn care_residual(a: &Matrix, b_rinv_bt: &Matrix, q: &Matrix, s: &Matrix) -> Matrix {
    let at_s = a.transpose().matmul(s);
    let s_a = s.matmul(a);
    let sbs = s.matmul(b_rinv_bt).matmul(s);
    at_s.add(&s_a).sub(&sbs).add(q).symmetric_part()
}

/// Continuous-time algebraic Riccati equation by integrating the Riccati
/// flow `dS/dt = AᵀS + SA − SBR⁻¹BᵀS + Q` from `S = Q` to steady state.
///
/// Integration uses an embedded RK2(3) pair with adaptive step and stops once
/// `‖dS/dt‖_F ≤ 1e-10`. Near steady state the step size is capped by the
/// stability region of the integrator, so once the residual is small the
/// iterate is polished with Newton (Kleinman) steps.
pub fn solve_care(
    a: &Matrix,
    b: &Matrix,
    q: &Matrix,
    r: &Matrix,
) -> Result<CareSolution, LinalgError> {
    let n = a.rows();
    if !a.is_square() {
        return Err(LinalgError::NotSquare(a.rows(), a.cols()));
    }
    if b.rows() != n || q.shape() != (n, n) || r.shape() != (b.cols(), b.cols()) {
        return Err(LinalgError::Dimension("CARE operand shapes".into()));
    }
    let rinv_bt = cholesky_solve(r, &b.transpose())?;
    let brb = b.matmul(&rinv_bt);
    let flow = |s: &Matrix| care_residual(a, &brb, q, s);

    let mut s = q.symmetric_part();
    let scale = 1.0 + a.max_abs() + brb.max_abs() * (1.0 + q.max_abs());
    let mut h = 0.1 / scale;
    let rtol = 1e-9;
    let max_steps = 2_000_000;
    let mut k1 = flow(&s);
    for step in 0..max_steps {
        let res = k1.frobenius_norm();
        if res <= 1e-10 {
            return finish(s, &rinv_bt, res);
        }
        if res <= 1e-4 * (1.0 + q.frobenius_norm()) {
            if let Some((polished, r)) = newton_polish(a, &brb, q, &s) {
                if r <= 1e-8 * q.frobenius_norm().max(1e-2) {
                    return finish(polished, &rinv_bt, r);
                }
            }
        }
        if !res.is_finite() {
            return Err(LinalgError::NoConvergence { residual: res, steps: step });
        }
        // Bogacki–Shampine 3(2)
        let k2 = flow(&s.add(&k1.scale(0.5 * h)));
        let k3 = flow(&s.add(&k2.scale(0.75 * h)));
        let s_new = s
            .add(&k1.scale(2.0 / 9.0 * h))
            .add(&k2.scale(1.0 / 3.0 * h))
            .add(&k3.scale(4.0 / 9.0 * h));
        let k4 = flow(&s_new);
        let err = k1
            .scale(-5.0 / 72.0)
            .add(&k2.scale(1.0 / 12.0))
            .add(&k3.scale(1.0 / 9.0))
            .add(&k4.scale(-1.0 / 8.0))
            .scale(h)
            .frobenius_norm();
        let tol = rtol * (1.0 + s_new.frobenius_norm());
        if err <= tol {
            s = s_new;
            k1 = k4;
        }
        let factor = if err == 0.0 { 4.0 } else { 0.9 * (tol / err).cbrt() };
        h *= factor.clamp(0.2, 4.0);
    }
    Err(LinalgError::NoConvergence {
        residual: k1.frobenius_norm(),
        steps: max_steps,
    })
}

/// Kleinman iterations from a stabilizing near-solution: each step solves
/// the Lyapunov equation of the current closed loop. Returns the best
/// iterate and its residual, or `None` if a solve fails.
fn newton_polish(a: &Matrix, brb: &Matrix, q: &Matrix, s0: &Matrix) -> Option<(Matrix, f64)> {
    let mut s = s0.clone();
    let mut best = care_residual(a, brb, q, &s).frobenius_norm();
    let mut best_s = s.clone();
    for _ in 0..30 {
        let closed = a.sub(&brb.matmul(&s));
        let rhs = q.add(&s.matmul(brb).matmul(&s)).scale(-1.0);
        s = solve_lyapunov(&closed, &rhs)?.symmetric_part();
        let r = care_residual(a, brb, q, &s).frobenius_norm();
        if !r.is_finite() {
            break;
        }
        if r < best {
            best = r;
            best_s = s.clone();
        } else {
            break;
        }
        if r <= 1e-10 {
            break;
        }
    }
    Some((best_s, best))
}

/// `AᵀX + XA = C` by a dense Kronecker solve.
pub fn solve_lyapunov(a: &Matrix, c: &Matrix) -> Option<Matrix> {
    let n = a.rows();
    let dim = n * n;
    let mut l = Matrix::zeros(dim, dim);
    for i in 0..n {
        for j in 0..n {
            let row = i * n + j;
            for k in 0..n {
                l[(row, k * n + j)] += a[(k, i)];
                l[(row, i * n + k)] += a[(k, j)];
            }
        }
    }
    let x = solve_dense(l, c.as_slice().to_vec())?;
    Some(Matrix::from_vec(n, n, x))
}

/// Gaussian elimination with partial pivoting; `None` if singular.
pub fn solve_dense(mut a: Matrix, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = a.rows();
    let scale = a.max_abs().max(f64::MIN_POSITIVE);
    for col in 0..n {
        let piv = (col..n).max_by(|&x, &y| a[(x, col)].abs().total_cmp(&a[(y, col)].abs()))?;
        if a[(piv, col)].abs() <= 1e-14 * scale {
            return None;
        }
        if piv != col {
            for k in 0..n {
                let t = a[(col, k)];
                a[(col, k)] = a[(piv, k)];
                a[(piv, k)] = t;
            }
            b.swap(col, piv);
        }
        for r in col + 1..n {
            let f = a[(r, col)] / a[(col, col)];
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[(r, k)] -= f * a[(col, k)];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let mut acc = b[r];
        for k in r + 1..n {
            acc -= a[(r, k)] * x[k];
        }
        x[r] = acc / a[(r, r)];
    }
    Some(x)
}

fn finish(s: Matrix, rinv_bt: &Matrix, residual: f64) -> Result<CareSolution, LinalgError> {
    let gain = rinv_bt.matmul(&s);
    Ok(CareSolution {
        gain,
        riccati: s,
        residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_sym(rng: &mut ChaCha8Rng, n: usize) -> Matrix {
        let a = Matrix::from_vec(n, n, (0..n * n).map(|_| rng.gen_range(-1.0..1.0)).collect());
        a.symmetric_part()
    }

    /// Independent oracle: power iteration with deflation on a shifted matrix.
    fn power_deflation_eigs(a: &Matrix) -> Vec<f64> {
        let n = a.rows();
        let shift = a.frobenius_norm() + 1.0;
        let mut m = a.add(&Matrix::identity(n).scale(shift));
        let mut vals = Vec::new();
        for k in 0..n {
            let mut v: Vec<f64> = (0..n).map(|i| 1.0 + (i * 7 + k * 3) as f64 * 0.013).collect();
            let mut lam = 0.0;
            for _ in 0..20000 {
                let w = m.matvec(&v);
                let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
                let new_lam: f64 = w.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>()
                    / v.iter().map(|x| x * x).sum::<f64>();
                v = w.iter().map(|x| x / norm).collect();
                let done = (new_lam - lam).abs() < 1e-15 * new_lam.abs();
                lam = new_lam;
                if done {
                    break;
                }
            }
            // Rayleigh-quotient refinement of the converged vector
            let mv = m.matvec(&v);
            let lam: f64 = mv.iter().zip(&v).map(|(a, b)| a * b).sum();
            vals.push(lam - shift);
            let outer = Matrix::from_vec(
                n,
                n,
                (0..n * n).map(|idx| v[idx / n] * v[idx % n] * lam).collect(),
            );
            m = m.sub(&outer);
        }
        vals.sort_by(f64::total_cmp);
        vals
    }

    #[test]
    fn eig_trivial() {
        assert_eq!(sym_eig(&Matrix::identity(3)).unwrap().values, vec![1.0; 3]);
        let e = sym_eig(&Matrix::from_diag(&[5.0, -2.0])).unwrap();
        assert_eq!(e.values, vec![-2.0, 5.0]);
        assert_eq!(e.top_vector(), vec![1.0, 0.0]);
        assert!(sym_eig(&Matrix::zeros(2, 3)).is_err());
        let mut bad = Matrix::identity(2);
        bad[(0, 1)] = f64::NAN;
        assert_eq!(sym_eig(&bad).unwrap_err(), LinalgError::NonFinite);
    }

    #[test]
    fn eig_matches_power_iteration_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let a = random_sym(&mut rng, 10);
        let jac = sym_eigvals(&a).unwrap();
        let oracle = power_deflation_eigs(&a);
        for (x, y) in jac.iter().zip(&oracle) {
            assert!((x - y).abs() < 1e-8, "{x} vs {y}");
        }
    }

    #[test]
    fn mu2_examples() {
        assert_eq!(mu2(&Matrix::identity(3)).unwrap(), 1.0);
        let skew = Matrix::from_rows(&[&[0.0, 1.0], &[-1.0, 0.0]]);
        assert_eq!(mu2(&skew).unwrap(), 0.0);
        assert!(mu2(&Matrix::zeros(2, 3)).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let n = rng.gen_range(2..6);
            let a = Matrix::from_vec(n, n, (0..n * n).map(|_| rng.gen_range(-1.0..1.0)).collect());
            let b = Matrix::from_vec(n, n, (0..n * n).map(|_| rng.gen_range(-1.0..1.0)).collect());
            assert!(mu2(&a.add(&b)).unwrap() <= mu2(&a).unwrap() + mu2(&b).unwrap() + 1e-12);
        }
    }

    #[test]
    fn mu2_dominates_random_quadratic_forms() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 6;
        let a = Matrix::from_vec(n, n, (0..n * n).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let m = mu2(&a).unwrap();
        let mut best = f64::NEG_INFINITY;
        for _ in 0..20000 {
            let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let norm2: f64 = v.iter().map(|x| x * x).sum();
            let av = a.matvec(&v);
            let q: f64 = av.iter().zip(&v).map(|(x, y)| x * y).sum::<f64>() / norm2;
            assert!(q <= m + 1e-12);
            best = best.max(q);
        }
        assert!(m - best < 0.1 * (1.0 + m.abs()));
    }

    #[test]
    fn cholesky_examples() {
        assert_eq!(cholesky_upper(&Matrix::identity(3)).unwrap(), Matrix::identity(3));
        assert_eq!(
            cholesky_upper(&Matrix::from_diag(&[4.0, 9.0])).unwrap(),
            Matrix::from_diag(&[2.0, 3.0])
        );
        let not_pd = Matrix::from_rows(&[&[1.0, 2.0], &[2.0, 1.0]]);
        assert!(matches!(
            cholesky_upper(&not_pd),
            Err(LinalgError::NotPositiveDefinite { pivot: 1, .. })
        ));
    }

    #[test]
    fn care_scalar_quadratic_formula() {
        let one = Matrix::identity(1);
        let sol = solve_care(&one.scale(-1.0), &one, &one, &one).unwrap();
        let s = -1.0 + 2f64.sqrt();
        assert!((sol.riccati[(0, 0)] - s).abs() < 1e-9);
        assert!((sol.gain[(0, 0)] - s).abs() < 1e-9);
    }

    #[test]
    fn care_symmetric_fixed_point() {
        let i3 = Matrix::identity(3);
        let sol = solve_care(&Matrix::zeros(3, 3), &i3, &i3, &i3).unwrap();
        assert!(sol.riccati.sub(&i3).max_abs() < 1e-9);
        assert!(sol.gain.sub(&i3).max_abs() < 1e-9);
    }

    #[test]
    fn qr_null_space() {
        let b = Matrix::from_rows(&[&[1.0, 0.0], &[2.0, 1.0], &[0.0, 3.0], &[1.0, 1.0]]);
        let p = left_null_space(&b);
        assert_eq!(p.shape(), (2, 4));
        assert!(p.matmul(&b).max_abs() < 1e-12);
        assert!(p.matmul(&p.transpose()).sub(&Matrix::identity(2)).max_abs() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn eig_reconstruction(seed in 0u64..10_000, n in 2usize..=12) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = Matrix::from_vec(n, n, (0..n * n).map(|_| rng.gen_range(-3.0..3.0)).collect());
            let e = sym_eig(&a).unwrap();
            let lam = Matrix::from_diag(&e.values);
            let recon = e.vectors.matmul(&lam).matmul(&e.vectors.transpose());
            let sym = a.symmetric_part();
            prop_assert!(recon.sub(&sym).frobenius_norm() <= 1e-8 * a.frobenius_norm());
            let vtv = e.vectors.transpose().matmul(&e.vectors);
            prop_assert!(vtv.sub(&Matrix::identity(n)).max_abs() <= 1e-10);
            for j in 0..n {
                let v = e.vectors.col(j);
                let av = sym.matvec(&v);
                for i in 0..n {
                    prop_assert!((av[i] - e.values[j] * v[i]).abs() <= 1e-9 * a.frobenius_norm());
                }
            }
            prop_assert!(e.values.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn max_eigenvalue_matches_jacobi() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for n in 1..=12 {
            for _ in 0..20 {
                let a = random_sym(&mut rng, n).scale(rng.gen_range(0.1..50.0));
                let fast = sym_max_eigenvalue(&a).unwrap();
                let slow = sym_eig(&a).unwrap().max();
                assert!((fast - slow).abs() <= 1e-12 * (1.0 + slow.abs()), "n={n}: {fast} vs {slow}");
            }
        }
        let d = Matrix::from_diag(&[-2.0, 5.0, 5.0]);
        assert!((sym_max_eigenvalue(&d).unwrap() - 5.0).abs() < 1e-14);
        let ones = Matrix::from_vec(4, 4, vec![-1.0; 16]);
        assert!(sym_max_eigenvalue(&ones).unwrap().abs() < 1e-14);
    }
}
