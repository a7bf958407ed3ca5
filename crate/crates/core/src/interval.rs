//! Closed-interval scalars and entrywise interval matrices.
//!
//! Arithmetic is round-to-nearest by default. Every result is exact for the
//! real interval extension up to floating-point rounding of the endpoints.
//! Calling [`set_outward_rounding`] widens each produced endpoint by one ulp,
//! which makes the enclosures sound in floating point at a small cost in
//! tightness.
//!
//! There is deliberately no interval division.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::atomic::{AtomicBool, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::Matrix;

static OUTWARD_ROUNDING: AtomicBool = AtomicBool::new(false);

/// Enable or disable one-ulp outward widening of every interval result.
pub fn set_outward_rounding(enabled: bool) {
    OUTWARD_ROUNDING.store(enabled, Ordering::Relaxed);
}

pub fn outward_rounding() -> bool {
    OUTWARD_ROUNDING.load(Ordering::Relaxed)
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IntervalError {
    #[error("invalid interval: lo {lo} > hi {hi}")]
    Inverted { lo: f64, hi: f64 },
    #[error("interval bound is NaN")]
    Nan,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// A closed interval `[lo, hi]` with `lo <= hi`.
#[derive(Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 2]", into = "[f64; 2]")]
pub struct Interval {
    lo: f64,
    hi: f64,
}

impl TryFrom<[f64; 2]> for Interval {
    type Error = IntervalError;
    fn try_from(v: [f64; 2]) -> Result<Self, Self::Error> {
        Interval::new(v[0], v[1])
    }
}

impl From<Interval> for [f64; 2] {
    fn from(x: Interval) -> Self {
        [x.lo, x.hi]
    }
}

impl fmt::Debug for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{:?}, {:?}]", self.lo, self.hi)
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.lo, self.hi)
    }
}

impl Interval {
    pub const ZERO: Interval = Interval { lo: 0.0, hi: 0.0 };

    pub fn new(lo: f64, hi: f64) -> Result<Self, IntervalError> {
        if lo.is_nan() || hi.is_nan() {
            return Err(IntervalError::Nan);
        }
        if lo > hi {
            return Err(IntervalError::Inverted { lo, hi });
        }
        Ok(Interval { lo, hi })
    }

    /// Degenerate interval `[x, x]`.
    pub fn point(x: f64) -> Self {
        Interval { lo: x, hi: x }
    }

    /// Symmetric interval `[c - r, c + r]`.
    pub fn from_center_radius(c: f64, r: f64) -> Result<Self, IntervalError> {
        Interval::new(c - r.abs(), c + r.abs())
    }

    /// Builds an interval from bounds produced by an arithmetic operation.
    /// Applies outward rounding when enabled.
    #[inline]
    pub(crate) fn rounded(lo: f64, hi: f64) -> Self {
        debug_assert!(lo.is_nan() || hi.is_nan() || lo <= hi, "{lo} > {hi}");
        if outward_rounding() {
            Interval {
                lo: lo.next_down(),
                hi: hi.next_up(),
            }
        } else {
            Interval { lo, hi }
        }
    }

    #[inline]
    pub fn lo(&self) -> f64 {
        self.lo
    }

    #[inline]
    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn center(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn radius(&self) -> f64 {
        0.5 * (self.hi - self.lo)
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn is_degenerate(&self) -> bool {
        self.lo == self.hi
    }

    pub fn is_finite(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite()
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn contains_interval(&self, other: &Interval) -> bool {
        self.lo <= other.lo && other.hi <= self.hi
    }

    /// Smallest interval containing both.
    pub fn hull(&self, other: &Interval) -> Interval {
        Interval {
            lo: self.lo.min(other.lo),
            hi: self.hi.max(other.hi),
        }
    }

    pub fn mul_scalar(self, k: f64) -> Interval {
        let (a, b) = (self.lo * k, self.hi * k);
        if k >= 0.0 {
            Interval::rounded(a, b)
        } else {
            Interval::rounded(b, a)
        }
    }

    pub fn add_scalar(self, k: f64) -> Interval {
        Interval::rounded(self.lo + k, self.hi + k)
    }

    /// Tight range of `x^2`.
    pub fn square(self) -> Interval {
        let (a, b) = (self.lo * self.lo, self.hi * self.hi);
        if self.lo >= 0.0 {
            Interval::rounded(a, b)
        } else if self.hi <= 0.0 {
            Interval::rounded(b, a)
        } else {
            Interval::rounded(0.0, a.max(b))
        }
    }

    pub fn sin(self) -> Interval {
        if self.width() >= TAU {
            return Interval::rounded(-1.0, 1.0);
        }
        let (sa, sb) = (self.lo.sin(), self.hi.sin());
        let mut lo = sa.min(sb);
        let mut hi = sa.max(sb);
        if contains_critical(self.lo, self.hi, FRAC_PI_2) {
            hi = 1.0;
        }
        if contains_critical(self.lo, self.hi, -FRAC_PI_2) {
            lo = -1.0;
        }
        Interval::rounded(lo, hi)
    }

    pub fn cos(self) -> Interval {
        if self.width() >= TAU {
            return Interval::rounded(-1.0, 1.0);
        }
        let (ca, cb) = (self.lo.cos(), self.hi.cos());
        let mut lo = ca.min(cb);
        let mut hi = ca.max(cb);
        if contains_critical(self.lo, self.hi, 0.0) {
            hi = 1.0;
        }
        if contains_critical(self.lo, self.hi, PI) {
            lo = -1.0;
        }
        Interval::rounded(lo, hi)
    }

    pub fn softplus(self) -> Interval {
        Interval::rounded(softplus(self.lo), softplus(self.hi))
    }

    pub fn sigmoid(self) -> Interval {
        Interval::rounded(sigmoid(self.lo), sigmoid(self.hi))
    }
}

/// True if some `offset + 2k*pi` lies in `[a, b]`, with a small guard band
/// so that critical points sitting on an endpoint are never missed.
fn contains_critical(a: f64, b: f64, offset: f64) -> bool {
    let scale = a.abs().max(b.abs()).max(1.0);
    let guard = 4.0 * f64::EPSILON * scale;
    let k = ((a - offset - guard) / TAU).ceil();
    let p = offset + k * TAU;
    p <= b + guard
}

/// `log(1 + e^x)`, evaluated without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Logistic function, the derivative of [`softplus`].
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Index of the four endpoint products `[lo*lo, lo*hi, hi*lo, hi*hi]`.
pub(crate) type Corner = u8;

/// Interval product with the indices of the corner products attaining the
/// lower and upper bound. Ties resolve to the first corner.
#[inline]
pub(crate) fn mul_select(x: Interval, y: Interval) -> (f64, Corner, f64, Corner) {
    let p = [x.lo * y.lo, x.lo * y.hi, x.hi * y.lo, x.hi * y.hi];
    let (mut lo, mut li, mut hi, mut hi_i) = (p[0], 0u8, p[0], 0u8);
    for (i, &v) in p.iter().enumerate().skip(1) {
        if v < lo {
            lo = v;
            li = i as u8;
        }
        if v > hi {
            hi = v;
            hi_i = i as u8;
        }
    }
    (lo, li, hi, hi_i)
}

impl Add for Interval {
    type Output = Interval;
    fn add(self, rhs: Interval) -> Interval {
        Interval::rounded(self.lo + rhs.lo, self.hi + rhs.hi)
    }
}

impl Sub for Interval {
    type Output = Interval;
    fn sub(self, rhs: Interval) -> Interval {
        Interval::rounded(self.lo - rhs.hi, self.hi - rhs.lo)
    }
}

impl Neg for Interval {
    type Output = Interval;
    fn neg(self) -> Interval {
        Interval {
            lo: -self.hi,
            hi: -self.lo,
        }
    }
}

impl Mul for Interval {
    type Output = Interval;
    fn mul(self, rhs: Interval) -> Interval {
        let (lo, _, hi, _) = mul_select(self, rhs);
        Interval::rounded(lo, hi)
    }
}

/// Dense row-major matrix of intervals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntervalMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Interval>,
}

impl IntervalMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<Interval>) -> Result<Self, IntervalError> {
        if data.len() != rows * cols {
            return Err(IntervalError::Dimension(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(IntervalMatrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        IntervalMatrix {
            rows,
            cols,
            data: vec![Interval::ZERO; rows * cols],
        }
    }

    /// Degenerate interval matrix equal to `m`.
    pub fn point(m: &Matrix) -> Self {
        IntervalMatrix {
            rows: m.rows(),
            cols: m.cols(),
            data: m.as_slice().iter().map(|&v| Interval::point(v)).collect(),
        }
    }

    pub fn from_bounds(lo: &Matrix, hi: &Matrix) -> Result<Self, IntervalError> {
        if lo.shape() != hi.shape() {
            return Err(IntervalError::Dimension("bound shapes differ".into()));
        }
        let data = lo
            .as_slice()
            .iter()
            .zip(hi.as_slice())
            .map(|(&l, &h)| Interval::new(l, h))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(IntervalMatrix {
            rows: lo.rows(),
            cols: lo.cols(),
            data,
        })
    }

    /// Column vector from a slice of intervals.
    pub fn column(v: &[Interval]) -> Self {
        IntervalMatrix {
            rows: v.len(),
            cols: 1,
            data: v.to_vec(),
        }
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

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Interval {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: Interval) {
        self.data[i * self.cols + j] = v;
    }

    pub fn as_slice(&self) -> &[Interval] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [Interval] {
        &mut self.data
    }

    pub fn lower(&self) -> Matrix {
        Matrix::from_vec(self.rows, self.cols, self.data.iter().map(|x| x.lo).collect())
    }

    pub fn upper(&self) -> Matrix {
        Matrix::from_vec(self.rows, self.cols, self.data.iter().map(|x| x.hi).collect())
    }

    pub fn center(&self) -> Matrix {
        Matrix::from_vec(
            self.rows,
            self.cols,
            self.data.iter().map(|x| x.center()).collect(),
        )
    }

    pub fn radius(&self) -> Matrix {
        Matrix::from_vec(
            self.rows,
            self.cols,
            self.data.iter().map(|x| x.radius()).collect(),
        )
    }

    /// Center `A^c` and radius `A^Δ` (entrywise nonnegative).
    pub fn center_radius(&self) -> (Matrix, Matrix) {
        (self.center(), self.radius())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(Interval::is_finite)
    }

    pub fn max_width(&self) -> f64 {
        self.data.iter().map(Interval::width).fold(0.0, f64::max)
    }

    /// Entrywise membership `lo <= A_ij <= hi`.
    pub fn contains(&self, m: &Matrix) -> bool {
        self.contains_with_tol(m, 0.0)
    }

    /// Membership with each bound relaxed by `tol * (1 + |A_ij|)`.
    pub fn contains_with_tol(&self, m: &Matrix, tol: f64) -> bool {
        m.shape() == self.shape()
            && self.data.iter().zip(m.as_slice()).all(|(iv, &v)| {
                let t = tol * (1.0 + v.abs());
                iv.lo - t <= v && v <= iv.hi + t
            })
    }

    /// Entrywise `other ⊆ self`.
    pub fn contains_matrix(&self, other: &IntervalMatrix) -> bool {
        self.shape() == other.shape()
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.contains_interval(b))
    }

    /// Entrywise union hull.
    pub fn hull(&self, other: &IntervalMatrix) -> Result<IntervalMatrix, IntervalError> {
        self.check_same(other, "hull")?;
        Ok(self.zip_with(other, |a, b| a.hull(&b)))
    }

    pub fn transpose(&self) -> IntervalMatrix {
        let mut out = IntervalMatrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.set(j, i, self.get(i, j));
            }
        }
        out
    }

    pub fn add(&self, other: &IntervalMatrix) -> Result<IntervalMatrix, IntervalError> {
        self.check_same(other, "add")?;
        Ok(self.zip_with(other, |a, b| a + b))
    }

    pub fn sub(&self, other: &IntervalMatrix) -> Result<IntervalMatrix, IntervalError> {
        self.check_same(other, "sub")?;
        Ok(self.zip_with(other, |a, b| a - b))
    }

    pub fn scale(&self, k: f64) -> IntervalMatrix {
        IntervalMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| x.mul_scalar(k)).collect(),
        }
    }

    /// `A + k I` for square `A`.
    pub fn add_diag(&self, k: f64) -> IntervalMatrix {
        let mut out = self.clone();
        for i in 0..self.rows.min(self.cols) {
            out.set(i, i, self.get(i, i).add_scalar(k));
        }
        out
    }

    /// Entrywise interval dot products. Sums run over the inner index in
    /// increasing order.
    pub fn matmul(&self, other: &IntervalMatrix) -> Result<IntervalMatrix, IntervalError> {
        if self.cols != other.rows {
            return Err(IntervalError::Dimension(format!(
                "matmul {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = IntervalMatrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for j in 0..other.cols {
                let (mut lo, mut hi) = (0.0, 0.0);
                for k in 0..self.cols {
                    let (l, _, h, _) = mul_select(self.get(i, k), other.get(k, j));
                    lo += l;
                    hi += h;
                }
                out.set(i, j, Interval::rounded(lo, hi));
            }
        }
        Ok(out)
    }

    fn zip_with(&self, other: &IntervalMatrix, f: impl Fn(Interval, Interval) -> Interval) -> Self {
        IntervalMatrix {
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

    fn check_same(&self, other: &IntervalMatrix, op: &str) -> Result<(), IntervalError> {
        if self.shape() != other.shape() {
            return Err(IntervalError::Dimension(format!(
                "{op} {}x{} with {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(())
    }
}
