//! Corner checks over interval matrices, pointwise contraction oracles, and
//! region certificates.
//!
//! For a symmetric center `C` and radius `R` the extreme eigenvalues over
//! the interval matrix are attained at the sign corners
//! `C ± diag(s) R diag(s)`. Since `s` and `−s` give the same matrix, only
//! sign vectors with `s₀ = +1` are visited: sign index `k` encodes
//! `s_{i+1} = −1` iff bit `i` of `k` is set, and the indices are visited in
//! Gray-code order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::boundprop::{hull_over_region, Propagator, Region};
use crate::interval::IntervalMatrix;
use crate::linalg::{mu2, sym_eig, sym_eigvals, sym_max_eigenvalue, LinalgError, Matrix};
use crate::problem::{ContractionProblem, Hyper};
use crate::systems::ControlAffineSystem;

/// Largest dimension accepted by the corner enumeration.
pub const MAX_CORNER_DIM: usize = 24;

pub const CERTIFICATE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CertifyError {
    #[error("corner check of dimension {0} exceeds the budget of {MAX_CORNER_DIM}")]
    TooLarge(usize),
    #[error("interval matrix is {0}x{1}, expected square")]
    NotSquare(usize, usize),
    #[error("interval matrix has non-finite bounds")]
    NonFinite,
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CornerCheckResult {
    pub max_mu2: f64,
    /// Sign vector of the maximizing corner (`s₀ = +1`).
    pub argmax_sign: Vec<f64>,
    /// Value of every canonical corner, indexed by sign index.
    pub per_sign: Vec<f64>,
    /// Unit eigenvector of the maximizing corner for its extreme eigenvalue.
    pub top_vector: Vec<f64>,
}

impl CornerCheckResult {
    pub fn argmax_index(&self) -> usize {
        sign_index(&self.argmax_sign)
    }
}

/// Sign vector for a canonical sign index.
pub fn sign_vector(n: usize, index: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            if i > 0 && (index >> (i - 1)) & 1 == 1 {
                -1.0
            } else {
                1.0
            }
        })
        .collect()
}

fn sign_index(s: &[f64]) -> usize {
    let flip = s[0] < 0.0;
    s.iter()
        .skip(1)
        .enumerate()
        .map(|(i, &v)| if (v < 0.0) != flip { 1 << i } else { 0 })
        .sum()
}

/// `C + σ diag(s) R diag(s)`.
pub fn corner_matrix(center: &Matrix, radius: &Matrix, sign: &[f64], sigma: f64) -> Matrix {
    let n = center.rows();
    let mut out = center.clone();
    for i in 0..n {
        for j in 0..n {
            out[(i, j)] += sigma * sign[i] * sign[j] * radius[(i, j)];
        }
    }
    out
}

fn symmetric_center_radius(a: &IntervalMatrix) -> Result<(Matrix, Matrix), CertifyError> {
    let (r, c) = a.shape();
    if r != c {
        return Err(CertifyError::NotSquare(r, c));
    }
    if r > MAX_CORNER_DIM {
        return Err(CertifyError::TooLarge(r));
    }
    if !a.is_finite() {
        return Err(CertifyError::NonFinite);
    }
    let (center, radius) = a.center_radius();
    Ok((center.symmetric_part(), radius.symmetric_part()))
}

/// Largest `λ_max(C + σ D_s R D_s)` over canonical sign vectors. Ties go to
/// the lowest sign index.
fn corner_search(center: &Matrix, radius: &Matrix, sigma: f64) -> Result<CornerCheckResult, CertifyError> {
    let n = center.rows();
    let count = 1usize << n.saturating_sub(1);
    let eval = |index: usize| -> Result<f64, LinalgError> {
        let m = corner_matrix(center, radius, &sign_vector(n, index), sigma);
        sym_max_eigenvalue(&m)
    };
    let degenerate = radius.as_slice().iter().all(|&r| r == 0.0);
    let mut per_sign = vec![f64::NAN; count];
    if degenerate {
        let v = eval(0)?;
        per_sign.iter_mut().for_each(|x| *x = v);
    } else {
        let order: Vec<usize> = (0..count).map(|t| t ^ (t >> 1)).collect();
        let values: Vec<Result<f64, LinalgError>> = if count >= 64 {
            order.par_iter().map(|&k| eval(k)).collect()
        } else {
            order.iter().map(|&k| eval(k)).collect()
        };
        for (&k, v) in order.iter().zip(values) {
            per_sign[k] = v?;
        }
    }
    let mut best = 0;
    for (k, &v) in per_sign.iter().enumerate() {
        if v > per_sign[best] {
            best = k;
        }
    }
    let sign = sign_vector(n, best);
    let eig = sym_eig(&corner_matrix(center, radius, &sign, sigma))?;
    Ok(CornerCheckResult {
        max_mu2: per_sign[best],
        argmax_sign: sign,
        per_sign,
        top_vector: eig.top_vector(),
    })
}

/// Maximizing corner without the per-sign table.
#[derive(Clone, Debug, PartialEq)]
pub struct CornerMax {
    pub value: f64,
    pub sign: Vec<f64>,
    /// Unit eigenvector of the maximizing corner for its extreme eigenvalue.
    pub vector: Vec<f64>,
}

/// True when `shift·I − m` admits a Cholesky factorization, i.e. every
/// eigenvalue of `m` lies strictly below `shift`.
fn below(m: &Matrix, shift: f64, scratch: &mut Vec<f64>) -> bool {
    let n = m.rows();
    scratch.clear();
    scratch.extend(m.as_slice().iter().map(|v| -v));
    for i in 0..n {
        scratch[i * n + i] += shift;
    }
    for j in 0..n {
        let mut d = scratch[j * n + j];
        for k in 0..j {
            d -= scratch[j * n + k] * scratch[j * n + k];
        }
        if !(d > 0.0) {
            return false;
        }
        let d = d.sqrt();
        scratch[j * n + j] = d;
        for i in j + 1..n {
            let mut v = scratch[i * n + j];
            for k in 0..j {
                v -= scratch[i * n + k] * scratch[j * n + k];
            }
            scratch[i * n + j] = v / d;
        }
    }
    true
}

/// Same maximum as the exhaustive search. A candidate corner is found by
/// sign iteration on top eigenvectors; every other corner is then screened
/// with a Cholesky test against the running best and only evaluated when
/// the test cannot rule it out. Ties go to the lowest sign index.
fn corner_search_pruned(center: &Matrix, radius: &Matrix) -> Result<CornerMax, CertifyError> {
    let n = center.rows();
    let count = 1usize << n.saturating_sub(1);
    let canonical = |s: &[f64]| -> usize { sign_index(s) };
    let mut start = 0;
    if count > 1 {
        let mut sign = sign_vector(n, 0);
        let mut best_val = f64::NEG_INFINITY;
        for _ in 0..4 {
            let eig = sym_eig(&corner_matrix(center, radius, &sign, 1.0))?;
            if eig.max() <= best_val {
                break;
            }
            best_val = eig.max();
            start = canonical(&sign);
            let next: Vec<f64> = eig
                .top_vector()
                .iter()
                .map(|&v| if v < 0.0 { -1.0 } else { 1.0 })
                .collect();
            if canonical(&next) == start {
                break;
            }
            sign = next;
        }
    }
    let eval = |k: usize| sym_max_eigenvalue(&corner_matrix(center, radius, &sign_vector(n, k), 1.0));
    let mut best = start;
    let mut best_val = eval(start)?;
    let mut scratch = Vec::with_capacity(n * n);
    for t in 0..count {
        let k = t ^ (t >> 1);
        if k == start {
            continue;
        }
        let m = corner_matrix(center, radius, &sign_vector(n, k), 1.0);
        if below(&m, best_val, &mut scratch) {
            continue;
        }
        let v = sym_max_eigenvalue(&m)?;
        if v > best_val || (v == best_val && k < best) {
            best = k;
            best_val = v;
        }
    }
    let sign = sign_vector(n, best);
    let eig = sym_eig(&corner_matrix(center, radius, &sign, 1.0))?;
    Ok(CornerMax {
        value: best_val,
        sign,
        vector: eig.top_vector(),
    })
}

/// `max_{A ∈ [A]} μ2(A)` with its maximizing corner, skipping corners that
/// provably cannot beat the running maximum.
pub fn rohn_max_mu2_pruned(a: &IntervalMatrix) -> Result<CornerMax, CertifyError> {
    let (c, r) = symmetric_center_radius(a)?;
    corner_search_pruned(&c, &r)
}

/// `min_{M ∈ [M]} λ_min(sym M)` with its minimizing corner and bottom
/// eigenvector.
pub fn rohn_min_eig_pruned(m: &IntervalMatrix) -> Result<CornerMax, CertifyError> {
    let (c, r) = symmetric_center_radius(m)?;
    let mut res = corner_search_pruned(&c.scale(-1.0), &r)?;
    res.value = -res.value;
    Ok(res)
}

/// Exact `max_{A ∈ [A]} μ2(A)`.
pub fn rohn_max_mu2(a: &IntervalMatrix) -> Result<CornerCheckResult, CertifyError> {
    let (c, r) = symmetric_center_radius(a)?;
    corner_search(&c, &r, 1.0)
}

/// Exact `min_{M ∈ [M]} λ_min(sym M)`, with the minimizing corner and its
/// bottom eigenvector. `max_mu2` holds the minimum itself.
pub fn rohn_min_eig_check(m: &IntervalMatrix) -> Result<CornerCheckResult, CertifyError> {
    let (c, r) = symmetric_center_radius(m)?;
    let mut res = corner_search(&c.scale(-1.0), &r, 1.0)?;
    res.max_mu2 = -res.max_mu2;
    res.per_sign.iter_mut().for_each(|v| *v = -*v);
    Ok(res)
}

pub fn rohn_min_eig(m: &IntervalMatrix) -> Result<f64, CertifyError> {
    Ok(rohn_min_eig_check(m)?.max_mu2)
}

/// Exact `max_{M ∈ [M]} λ_max(sym M)`.
pub fn rohn_max_eig(m: &IntervalMatrix) -> Result<f64, CertifyError> {
    Ok(rohn_max_mu2(m)?.max_mu2)
}

/// Exhaustive maximum of `μ2` over all `2^(n²)` entrywise corners.
pub fn brute_force_max_mu2(a: &IntervalMatrix) -> Result<f64, CertifyError> {
    let (n, c) = a.shape();
    if n != c {
        return Err(CertifyError::NotSquare(n, c));
    }
    if n * n > 20 {
        return Err(CertifyError::TooLarge(n));
    }
    let mut best = f64::NEG_INFINITY;
    for mask in 0..(1usize << (n * n)) {
        let data = a
            .as_slice()
            .iter()
            .enumerate()
            .map(|(e, x)| if (mask >> e) & 1 == 1 { x.hi() } else { x.lo() })
            .collect();
        best = best.max(mu2(&Matrix::from_vec(n, n, data))?);
    }
    Ok(best)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetzlerCheck {
    /// Entrywise bound on the Metzler majorant of the symmetric part.
    pub majorant: Matrix,
    /// Largest eigenvalue of the (symmetric, Metzler) bound.
    pub max_eig: f64,
    /// True when the bound proves negative semidefiniteness.
    pub certified: bool,
}

/// Sufficient condition from prior work: bound the Metzler majorant
/// (`|A_ij|` off the diagonal, `A_ii` on it) of every member of the
/// symmetric part and require its spectrum to be nonpositive.
pub fn metzler_majorant_check(a: &IntervalMatrix) -> Result<MetzlerCheck, CertifyError> {
    let (c, r) = symmetric_center_radius(a)?;
    let n = c.rows();
    let mut b = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            b[(i, j)] = if i == j {
                c[(i, i)] + r[(i, i)]
            } else {
                c[(i, j)].abs() + r[(i, j)]
            };
        }
    }
    let max_eig = *sym_eigvals(&b)?.last().unwrap();
    Ok(MetzlerCheck {
        majorant: b,
        max_eig,
        certified: max_eig <= 0.0,
    })
}

/// `G(x) = Θᵀ[∂_{f_π}Θ + Θ(∂f_π/∂x + cI)]` evaluated exactly.
pub fn pointwise_g(problem: &ContractionProblem, x: &[f64]) -> Matrix {
    let f = problem.closed_loop(x);
    let (theta, dtheta) = problem
        .metric
        .theta_and_derivative(x, &f)
        .expect("metric dimension");
    let mut j = problem.closed_loop_jacobian(x);
    for i in 0..j.rows() {
        j[(i, i)] += problem.hyper.c;
    }
    theta.transpose().matmul(&dtheta.add(&theta.matmul(&j)))
}

/// `S(x) = Ṁ + M ∂f_π/∂x + (∂f_π/∂x)ᵀ M + 2cM` with `Ṁ = Θ̇ᵀΘ + ΘᵀΘ̇`.
pub fn pointwise_s(problem: &ContractionProblem, x: &[f64]) -> Matrix {
    let f = problem.closed_loop(x);
    let (theta, dtheta) = problem
        .metric
        .theta_and_derivative(x, &f)
        .expect("metric dimension");
    let m = theta.transpose().matmul(&theta);
    let mdot = dtheta.transpose().matmul(&theta).add(&theta.transpose().matmul(&dtheta));
    let j = problem.closed_loop_jacobian(x);
    mdot.add(&m.matmul(&j))
        .add(&j.transpose().matmul(&m))
        .add(&m.scale(2.0 * problem.hyper.c))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Certified,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub schema_version: u32,
    pub system: String,
    pub problem_hash: String,
    /// Little-endian `f64` parameter vector, hex encoded.
    pub parameters_hex: String,
    pub region: Region,
    pub hyper: Hyper,
    pub propagator: Propagator,
    /// Corner-check maximum of the `G` hull, one per cell in cell order.
    pub cell_lambdas: Vec<f64>,
    /// `NaN` (stored as `null`) when the hull could not be formed.
    #[serde(with = "nullable_f64")]
    pub a_hat: f64,
    #[serde(with = "nullable_f64")]
    pub b_hat: f64,
    pub verdict: Verdict,
    #[serde(default)]
    pub failure: Option<String>,
    /// Seconds since the Unix epoch; left empty by the library so that
    /// certificates are reproducible, filled in by the command line tool.
    #[serde(default)]
    pub timestamp_unix: Option<u64>,
}

impl Certificate {
    pub fn max_lambda(&self) -> f64 {
        self.cell_lambdas
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

mod nullable_f64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

pub fn encode_parameters(params: &[f64]) -> String {
    let bytes: Vec<u8> = params.iter().flat_map(|v| v.to_le_bytes()).collect();
    hex::encode(bytes)
}

pub fn decode_parameters(s: &str) -> Result<Vec<f64>, hex::FromHexError> {
    let bytes = hex::decode(s)?;
    if bytes.len() % 8 != 0 {
        return Err(hex::FromHexError::InvalidStringLength);
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

/// Hull the region, corner-check every cell's `G` hull and the union metric
/// hull, and record the verdict.
pub fn certify_region(problem: &ContractionProblem, region: &Region) -> Certificate {
    let mut cert = Certificate {
        schema_version: CERTIFICATE_SCHEMA_VERSION,
        system: problem.system.name().to_string(),
        problem_hash: problem.hash(),
        parameters_hex: encode_parameters(&problem.params()),
        region: region.clone(),
        hyper: problem.hyper,
        propagator: Propagator::Ibp,
        cell_lambdas: Vec::new(),
        a_hat: f64::NAN,
        b_hat: f64::NAN,
        verdict: Verdict::Failed,
        failure: None,
        timestamp_unix: None,
    };
    let report = match hull_over_region(problem, region) {
        Ok(r) => r,
        Err(e) => {
            cert.failure = Some(e.to_string());
            return cert;
        }
    };
    let lambdas: Result<Vec<f64>, CertifyError> = report
        .cells
        .par_iter()
        .map(|c| rohn_max_mu2_pruned(&c.g).map(|r| r.value))
        .collect();
    let bounds = rohn_min_eig_pruned(&report.m_hull)
        .and_then(|a| Ok((a.value, rohn_max_mu2_pruned(&report.m_hull)?.value)));
    match (lambdas, bounds) {
        (Ok(l), Ok((a_hat, b_hat))) => {
            cert.cell_lambdas = l;
            cert.a_hat = a_hat;
            cert.b_hat = b_hat;
            let hyper = problem.hyper;
            let contracting = cert.cell_lambdas.iter().all(|&v| v <= 0.0);
            if contracting && a_hat >= hyper.a && b_hat <= hyper.b {
                cert.verdict = Verdict::Certified;
            } else {
                cert.failure = Some(format!(
                    "max cell lambda {:.6e}, a_hat {:.6e} (need >= {}), b_hat {:.6e} (need <= {})",
                    cert.max_lambda(),
                    a_hat,
                    hyper.a,
                    b_hat,
                    hyper.b
                ));
            }
        }
        (Err(e), _) | (_, Err(e)) => cert.failure = Some(e.to_string()),
    }
    cert
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FalsifyReport {
    pub samples: usize,
    /// Largest sampled `μ2(G(x))`; `-inf` when no samples were drawn.
    pub worst_mu2: f64,
    pub worst_state: Vec<f64>,
}

impl FalsifyReport {
    pub fn found_violation(&self) -> bool {
        self.worst_mu2 > 0.0
    }
}

/// Largest `μ2(G(x))` over uniform samples of the region. A positive value
/// disproves contraction; a nonpositive one proves nothing.
pub fn falsify_by_sampling(
    problem: &ContractionProblem,
    region: &Region,
    samples: usize,
    seed: u64,
) -> FalsifyReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let states: Vec<Vec<f64>> = (0..samples)
        .map(|_| {
            region
                .bounds
                .iter()
                .map(|b| b.lo() + rng.gen::<f64>() * b.width())
                .collect()
        })
        .collect();
    let values: Vec<f64> = states
        .par_iter()
        .map(|x| mu2(&pointwise_g(problem, x)).unwrap_or(f64::INFINITY))
        .collect();
    let mut best: Option<usize> = None;
    for (i, v) in values.iter().enumerate() {
        if best.map_or(true, |b| *v > values[b]) {
            best = Some(i);
        }
    }
    match best {
        Some(i) => FalsifyReport {
            samples,
            worst_mu2: values[i],
            worst_state: states[i].clone(),
        },
        None => FalsifyReport {
            samples: 0,
            worst_mu2: f64::NEG_INFINITY,
            worst_state: Vec::new(),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interval::tests::{random_imat, sample_member};
    use crate::interval::Interval;
    use crate::problem::WarmStart;
    use crate::systems::benchmark_system;

    fn iv(a: f64, b: f64) -> Interval {
        Interval::new(a, b).unwrap()
    }

    #[test]
    fn scalar_example() {
        let a = IntervalMatrix::new(1, 1, vec![iv(-5.0, 0.0)]).unwrap();
        let r = rohn_max_mu2(&a).unwrap();
        assert_eq!(r.max_mu2, 0.0);
        assert_eq!(r.argmax_sign, vec![1.0]);
        let m = IntervalMatrix::new(1, 1, vec![iv(2.0, 3.0)]).unwrap();
        assert_eq!(rohn_min_eig(&m).unwrap(), 2.0);
        assert_eq!(rohn_max_eig(&m).unwrap(), 3.0);
        let eye = IntervalMatrix::point(&Matrix::identity(3));
        assert_eq!(rohn_min_eig(&eye).unwrap(), 1.0);
        assert_eq!(rohn_max_eig(&eye).unwrap(), 1.0);
    }

    #[test]
    fn matches_exhaustive_corners() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for trial in 0..60 {
            let n = 2 + trial % 2;
            let a = random_imat(&mut rng, n, n);
            let r = rohn_max_mu2(&a).unwrap();
            let brute = brute_force_max_mu2(&a).unwrap();
            assert!((r.max_mu2 - brute).abs() <= 1e-10, "{} vs {}", r.max_mu2, brute);
            let (c, rad) = a.center_radius();
            let corner = corner_matrix(&c, &rad, &r.argmax_sign, 1.0);
            assert!(a.contains_with_tol(&corner, 1e-15));
            assert!((mu2(&corner).unwrap() - r.max_mu2).abs() <= 1e-10);
            // sampled members never exceed
            for _ in 0..50 {
                assert!(mu2(&sample_member(&mut rng, &a)).unwrap() <= r.max_mu2 + 1e-12);
            }
        }
    }

    #[test]
    fn min_eig_matches_exhaustive() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for _ in 0..30 {
            let a = random_imat(&mut rng, 3, 3);
            let neg = IntervalMatrix::new(
                3,
                3,
                a.as_slice().iter().map(|x| iv(-x.hi(), -x.lo())).collect(),
            )
            .unwrap();
            let brute = -brute_force_max_mu2(&neg).unwrap();
            assert!((rohn_min_eig(&a).unwrap() - brute).abs() <= 1e-10);
        }
    }

    #[test]
    fn sign_indices_round_trip() {
        for n in 1..6 {
            for k in 0..(1 << (n - 1)) {
                let s = sign_vector(n, k);
                assert_eq!(sign_index(&s), k);
                let neg: Vec<f64> = s.iter().map(|v| -v).collect();
                assert_eq!(sign_index(&neg), k);
            }
        }
    }

    #[test]
    fn metzler_counterexample() {
        let n = 4;
        let a = IntervalMatrix::point(&Matrix::from_vec(n, n, vec![-1.0; n * n]));
        let m = metzler_majorant_check(&a).unwrap();
        assert!((m.max_eig - 2.0).abs() <= 1e-12);
        assert!(!m.certified);
        let r = rohn_max_mu2(&a).unwrap();
        assert!(r.max_mu2.abs() <= 1e-12);
    }

    #[test]
    fn metzler_never_beats_rohn() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..200 {
            let a = random_imat(&mut rng, 3, 3);
            let shifted = a.add_diag(-rng.gen_range(0.0..4.0));
            let m = metzler_majorant_check(&shifted).unwrap();
            let r = rohn_max_mu2(&shifted).unwrap();
            assert!(m.max_eig >= r.max_mu2 - 1e-12);
            if r.max_mu2 > 0.0 {
                assert!(!m.certified);
            }
        }
        let diag = IntervalMatrix::new(2, 2, vec![iv(-3.0, -1.0), Interval::ZERO, Interval::ZERO, iv(-2.0, -0.5)]).unwrap();
        assert!(metzler_majorant_check(&diag).unwrap().certified);
        assert!(rohn_max_mu2(&diag).unwrap().max_mu2 <= 0.0);
    }

    #[test]
    fn lemma_one_equivalence() {
        for name in ["scalar_linear", "planar_nonlinear", "quadrotor10"] {
            let p = crate::boundprop::tests::perturbed_problem(name, 31, 0.3);
            let region = Region::whole(p.system.default_region());
            let mut rng = ChaCha8Rng::seed_from_u64(32);
            for _ in 0..100 {
                let x = region.sample(&mut rng);
                let g = pointwise_g(&p, &x);
                let s = pointwise_s(&p, &x);
                assert!(s.sub(&g.add(&g.transpose())).max_abs() <= 1e-10 * (1.0 + s.max_abs()));
                let lhs = *sym_eigvals(&s).unwrap().last().unwrap() / 2.0;
                assert!((lhs - mu2(&g).unwrap()).abs() <= 1e-8 * (1.0 + lhs.abs()));
            }
        }
    }

    #[test]
    fn zero_radius_region_at_contracting_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let sys = benchmark_system("planar_nonlinear").unwrap();
        let hyper = Hyper {
            a: 0.01,
            b: 100.0,
            c: 0.01,
        };
        let p = ContractionProblem::warm_started(sys, hyper, &WarmStart::default(), &mut rng).unwrap();
        let region = Region::whole(vec![Interval::point(0.0), Interval::point(0.0)]);
        let cert = certify_region(&p, &region);
        assert_eq!(cert.verdict, Verdict::Certified, "{:?}", cert.failure);
        let (a_hat, b_hat) = (cert.a_hat, cert.b_hat);
        assert!(a_hat > 0.0 && b_hat >= a_hat);
    }

    #[test]
    fn expanding_system_is_falsified() {
        let mut p = crate::boundprop::tests::perturbed_problem("scalar_linear", 34, 0.0);
        // kill the feedback: ẋ = −x + u with u = 2x gives ẋ = x
        p.policy.gain = Matrix::from_vec(1, 1, vec![2.0]);
        let region = Region::whole(p.system.default_region());
        let r = falsify_by_sampling(&p, &region, 100, 0);
        assert!(r.found_violation());
        let cert = certify_region(&p, &region);
        assert_eq!(cert.verdict, Verdict::Failed);
        assert!(cert.max_lambda() >= r.worst_mu2 - 1e-9);
    }

    #[test]
    fn parameter_blob_round_trip() {
        let v = vec![1.0, -2.5, f64::MIN_POSITIVE, 1e300];
        assert_eq!(decode_parameters(&encode_parameters(&v)).unwrap(), v);
        assert!(decode_parameters("abc").is_err());
    }

    #[test]
    fn pruned_search_matches_exhaustive() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        for trial in 0..200 {
            let n = 1 + trial % 8;
            let a = random_imat(&mut rng, n, n).add_diag(-rng.gen_range(0.0..3.0));
            let full = rohn_max_mu2(&a).unwrap();
            let fast = rohn_max_mu2_pruned(&a).unwrap();
            assert!((full.max_mu2 - fast.value).abs() <= 1e-12 * (1.0 + full.max_mu2.abs()));
            let lo_full = rohn_min_eig(&a).unwrap();
            let lo_fast = rohn_min_eig_pruned(&a).unwrap().value;
            assert!((lo_full - lo_fast).abs() <= 1e-12 * (1.0 + lo_full.abs()));
        }
    }
}
