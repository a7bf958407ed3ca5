//! Control-affine dynamics `ẋ = f_d(x) + B u` with exact and interval-extended
//! drift and drift Jacobians.
//!
//! Every system here has a constant input matrix `B`.

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::interval::{Interval, IntervalMatrix};
use crate::linalg::Matrix;
use crate::nets::PolicyNet;

/// Gravitational acceleration (m/s²).
pub const GRAVITY: f64 = 9.81;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SystemError {
    #[error("unknown system `{0}` (expected scalar_linear, planar_nonlinear or quadrotor10)")]
    Unknown(String),
}

pub trait ControlAffineSystem: Send + Sync {
    fn name(&self) -> &'static str;
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;

    /// Drift `f_d(x)`.
    fn drift(&self, x: &[f64]) -> Vec<f64>;
    /// `∂f_d/∂x`.
    fn drift_jacobian(&self, x: &[f64]) -> Matrix;
    /// Constant input matrix `B` (n × m).
    fn input_matrix(&self) -> &Matrix;

    /// Sound enclosure of `f_d` over a box.
    fn drift_hull(&self, cell: &[Interval]) -> Vec<Interval>;
    /// Sound enclosure of `∂f_d/∂x` over a box.
    fn drift_jacobian_hull(&self, cell: &[Interval]) -> IntervalMatrix;

    /// Equilibrium pair `(x_eq, u_eq)` with `f_ol(x_eq, u_eq) = 0`.
    fn equilibrium(&self) -> (Vec<f64>, Vec<f64>);

    /// Default box region for training and certification.
    fn default_region(&self) -> Vec<Interval>;

    /// `f_ol(x, u) = f_d(x) + B u`.
    fn open_loop(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let mut f = self.drift(x);
        let bu = self.input_matrix().matvec(u);
        for (a, b) in f.iter_mut().zip(bu) {
            *a += b;
        }
        f
    }

    /// `(A, B)` at the equilibrium.
    fn linearization(&self) -> (Matrix, Matrix) {
        let (x_eq, _) = self.equilibrium();
        (self.drift_jacobian(&x_eq), self.input_matrix().clone())
    }
}

/// Closed-loop vector field `f_π(x) = f_d(x) + B π(x)`.
pub fn closed_loop(sys: &dyn ControlAffineSystem, policy: &PolicyNet, x: &[f64]) -> Vec<f64> {
    let u = policy.forward(x).expect("policy dimension");
    sys.open_loop(x, &u)
}

/// `∂f_π/∂x = ∂f_d/∂x + B ∂π/∂x`.
pub fn closed_loop_jacobian(
    sys: &dyn ControlAffineSystem,
    policy: &PolicyNet,
    x: &[f64],
) -> Matrix {
    let jp = policy.jacobian(x).expect("policy dimension");
    sys.drift_jacobian(x).add(&sys.input_matrix().matmul(&jp))
}

/// `ẋ = −x + u`.
#[derive(Clone, Debug)]
pub struct ScalarLinear {
    b: Matrix,
}

impl Default for ScalarLinear {
    fn default() -> Self {
        ScalarLinear {
            b: Matrix::identity(1),
        }
    }
}

impl ControlAffineSystem for ScalarLinear {
    fn name(&self) -> &'static str {
        "scalar_linear"
    }
    fn state_dim(&self) -> usize {
        1
    }
    fn input_dim(&self) -> usize {
        1
    }
    fn drift(&self, x: &[f64]) -> Vec<f64> {
        vec![-x[0]]
    }
    fn drift_jacobian(&self, _x: &[f64]) -> Matrix {
        Matrix::from_vec(1, 1, vec![-1.0])
    }
    fn input_matrix(&self) -> &Matrix {
        &self.b
    }
    fn drift_hull(&self, cell: &[Interval]) -> Vec<Interval> {
        vec![-cell[0]]
    }
    fn drift_jacobian_hull(&self, _cell: &[Interval]) -> IntervalMatrix {
        IntervalMatrix::point(&self.drift_jacobian(&[0.0]))
    }
    fn equilibrium(&self) -> (Vec<f64>, Vec<f64>) {
        (vec![0.0], vec![0.0])
    }
    fn default_region(&self) -> Vec<Interval> {
        vec![Interval::new(-1.0, 1.0).unwrap()]
    }
}

/// Two-state polynomial system, unstable at the origin, actuated in the
/// second coordinate only:
///
/// ```text
/// ẋ₁ = x₁ + x₂ + x₁²/2
/// ẋ₂ = x₁ x₂ + u
/// ```
#[derive(Clone, Debug)]
pub struct PlanarNonlinear {
    b: Matrix,
}

impl Default for PlanarNonlinear {
    fn default() -> Self {
        PlanarNonlinear {
            b: Matrix::from_vec(2, 1, vec![0.0, 1.0]),
        }
    }
}

impl ControlAffineSystem for PlanarNonlinear {
    fn name(&self) -> &'static str {
        "planar_nonlinear"
    }
    fn state_dim(&self) -> usize {
        2
    }
    fn input_dim(&self) -> usize {
        1
    }
    fn drift(&self, x: &[f64]) -> Vec<f64> {
        vec![x[0] + x[1] + 0.5 * x[0] * x[0], x[0] * x[1]]
    }
    fn drift_jacobian(&self, x: &[f64]) -> Matrix {
        Matrix::from_rows(&[&[1.0 + x[0], 1.0], &[x[1], x[0]]])
    }
    fn input_matrix(&self) -> &Matrix {
        &self.b
    }
    fn drift_hull(&self, c: &[Interval]) -> Vec<Interval> {
        vec![c[0] + c[1] + c[0].square().mul_scalar(0.5), c[0] * c[1]]
    }
    fn drift_jacobian_hull(&self, c: &[Interval]) -> IntervalMatrix {
        let one = Interval::point(1.0);
        IntervalMatrix::new(2, 2, vec![c[0].add_scalar(1.0), one, c[1], c[0]]).unwrap()
    }
    fn equilibrium(&self) -> (Vec<f64>, Vec<f64>) {
        (vec![0.0, 0.0], vec![0.0])
    }
    fn default_region(&self) -> Vec<Interval> {
        vec![Interval::new(-1.0, 1.0).unwrap(); 2]
    }
}

/// Ten-state quadrotor with thrust and Euler angles as integrator states.
///
/// State `[p_x, p_y, p_z, ṗ_x, ṗ_y, ṗ_z, τ, φ, θ, ψ]` (NED), input
/// `[τ̇, φ̇, θ̇, ψ̇]`, and
///
/// ```text
/// p̈_x = −τ sin θ
/// p̈_y =  τ cos θ sin φ
/// p̈_z =  g − τ cos θ cos φ
/// ```
///
/// Yaw does not enter the translational dynamics, so its Jacobian column is
/// identically zero.
#[derive(Clone, Debug)]
pub struct Quadrotor {
    b: Matrix,
}

impl Default for Quadrotor {
    fn default() -> Self {
        let mut b = Matrix::zeros(10, 4);
        for j in 0..4 {
            b[(6 + j, j)] = 1.0;
        }
        Quadrotor { b }
    }
}

/// Index constants for the quadrotor state vector.
pub mod quad_idx {
    pub const VX: usize = 3;
    pub const TAU: usize = 6;
    pub const PHI: usize = 7;
    pub const THETA: usize = 8;
    pub const PSI: usize = 9;
}

impl Quadrotor {
    /// Translational acceleration for thrust `tau` and attitude `(phi, theta)`.
    pub fn acceleration(tau: f64, phi: f64, theta: f64) -> [f64; 3] {
        let (st, ct) = theta.sin_cos();
        let (sp, cp) = phi.sin_cos();
        [-tau * st, tau * ct * sp, GRAVITY - tau * ct * cp]
    }

    /// Same as [`ControlAffineSystem::open_loop`], spelled for the quadrotor.
    pub fn dynamics(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        self.open_loop(x, u)
    }
}

impl ControlAffineSystem for Quadrotor {
    fn name(&self) -> &'static str {
        "quadrotor10"
    }
    fn state_dim(&self) -> usize {
        10
    }
    fn input_dim(&self) -> usize {
        4
    }
    fn drift(&self, x: &[f64]) -> Vec<f64> {
        use quad_idx::*;
        let a = Quadrotor::acceleration(x[TAU], x[PHI], x[THETA]);
        let mut f = vec![0.0; 10];
        f[..3].copy_from_slice(&x[VX..VX + 3]);
        f[3..6].copy_from_slice(&a);
        f
    }
    fn drift_jacobian(&self, x: &[f64]) -> Matrix {
        use quad_idx::*;
        let (tau, phi, theta) = (x[TAU], x[PHI], x[THETA]);
        let (st, ct) = theta.sin_cos();
        let (sp, cp) = phi.sin_cos();
        let mut j = Matrix::zeros(10, 10);
        for i in 0..3 {
            j[(i, VX + i)] = 1.0;
        }
        // ∂a/∂τ
        j[(3, TAU)] = -st;
        j[(4, TAU)] = ct * sp;
        j[(5, TAU)] = -ct * cp;
        // ∂a/∂φ
        j[(4, PHI)] = tau * ct * cp;
        j[(5, PHI)] = tau * ct * sp;
        // ∂a/∂θ
        j[(3, THETA)] = -tau * ct;
        j[(4, THETA)] = -tau * st * sp;
        j[(5, THETA)] = tau * st * cp;
        j
    }
    fn input_matrix(&self) -> &Matrix {
        &self.b
    }
    fn drift_hull(&self, c: &[Interval]) -> Vec<Interval> {
        use quad_idx::*;
        let (tau, phi, theta) = (c[TAU], c[PHI], c[THETA]);
        let (st, ct) = (theta.sin(), theta.cos());
        let (sp, cp) = (phi.sin(), phi.cos());
        let mut f = vec![Interval::ZERO; 10];
        f[..3].copy_from_slice(&c[VX..VX + 3]);
        f[3] = -(tau * st);
        f[4] = tau * (ct * sp);
        f[5] = (-(tau * (ct * cp))).add_scalar(GRAVITY);
        f
    }
    fn drift_jacobian_hull(&self, c: &[Interval]) -> IntervalMatrix {
        use quad_idx::*;
        let (tau, phi, theta) = (c[TAU], c[PHI], c[THETA]);
        let (st, ct) = (theta.sin(), theta.cos());
        let (sp, cp) = (phi.sin(), phi.cos());
        let mut j = IntervalMatrix::zeros(10, 10);
        let one = Interval::point(1.0);
        for i in 0..3 {
            j.set(i, VX + i, one);
        }
        j.set(3, TAU, -st);
        j.set(4, TAU, ct * sp);
        j.set(5, TAU, -(ct * cp));
        j.set(4, PHI, tau * (ct * cp));
        j.set(5, PHI, tau * (ct * sp));
        j.set(3, THETA, -(tau * ct));
        j.set(4, THETA, -(tau * (st * sp)));
        j.set(5, THETA, tau * (st * cp));
        j
    }
    fn equilibrium(&self) -> (Vec<f64>, Vec<f64>) {
        let mut x = vec![0.0; 10];
        x[quad_idx::TAU] = GRAVITY;
        (x, vec![0.0; 4])
    }
    fn default_region(&self) -> Vec<Interval> {
        let iv = |a: f64, b: f64| Interval::new(a, b).unwrap();
        let mut r = vec![iv(-10.0, 10.0); 3];
        r.extend([iv(-5.0, 5.0); 3]);
        r.push(iv(2.0 * GRAVITY / 3.0, 4.0 * GRAVITY / 3.0));
        r.push(iv(-PI / 8.0, PI / 8.0));
        r.push(iv(-PI / 8.0, PI / 8.0));
        r.push(iv(-PI / 2.0, PI / 2.0));
        r
    }
}

/// The benchmark zoo, selectable by name.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum System {
    ScalarLinear(ScalarLinear),
    PlanarNonlinear(PlanarNonlinear),
    Quadrotor(Quadrotor),
}

impl fmt::Display for System {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl TryFrom<String> for System {
    type Error = SystemError;
    fn try_from(s: String) -> Result<Self, SystemError> {
        benchmark_system(&s)
    }
}

impl From<System> for String {
    fn from(s: System) -> String {
        s.name().to_string()
    }
}

/// Looks up a system by name.
pub fn benchmark_system(name: &str) -> Result<System, SystemError> {
    match name {
        "scalar_linear" => Ok(System::ScalarLinear(ScalarLinear::default())),
        "planar_nonlinear" => Ok(System::PlanarNonlinear(PlanarNonlinear::default())),
        "quadrotor10" | "quadrotor" => Ok(System::Quadrotor(Quadrotor::default())),
        other => Err(SystemError::Unknown(other.to_string())),
    }
}

impl System {
    fn inner(&self) -> &dyn ControlAffineSystem {
        match self {
            System::ScalarLinear(s) => s,
            System::PlanarNonlinear(s) => s,
            System::Quadrotor(s) => s,
        }
    }
}

impl ControlAffineSystem for System {
    fn name(&self) -> &'static str {
        self.inner().name()
    }
    fn state_dim(&self) -> usize {
        self.inner().state_dim()
    }
    fn input_dim(&self) -> usize {
        self.inner().input_dim()
    }
    fn drift(&self, x: &[f64]) -> Vec<f64> {
        self.inner().drift(x)
    }
    fn drift_jacobian(&self, x: &[f64]) -> Matrix {
        self.inner().drift_jacobian(x)
    }
    fn input_matrix(&self) -> &Matrix {
        self.inner().input_matrix()
    }
    fn drift_hull(&self, cell: &[Interval]) -> Vec<Interval> {
        self.inner().drift_hull(cell)
    }
    fn drift_jacobian_hull(&self, cell: &[Interval]) -> IntervalMatrix {
        self.inner().drift_jacobian_hull(cell)
    }
    fn equilibrium(&self) -> (Vec<f64>, Vec<f64>) {
        self.inner().equilibrium()
    }
    fn default_region(&self) -> Vec<Interval> {
        self.inner().default_region()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::MlpParams;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn all() -> Vec<System> {
        ["scalar_linear", "planar_nonlinear", "quadrotor10"]
            .iter()
            .map(|n| benchmark_system(n).unwrap())
            .collect()
    }

    fn sample_box(rng: &mut ChaCha8Rng, b: &[Interval]) -> Vec<f64> {
        b.iter().map(|iv| iv.lo() + rng.gen::<f64>() * iv.width()).collect()
    }

    #[test]
    fn lookup() {
        assert!(matches!(benchmark_system("nope"), Err(SystemError::Unknown(_))));
        let q = benchmark_system("quadrotor10").unwrap();
        assert_eq!((q.state_dim(), q.input_dim()), (10, 4));
        let s: System = serde_json::from_str("\"planar_nonlinear\"").unwrap();
        assert_eq!(s.name(), "planar_nonlinear");
    }

    #[test]
    fn quadrotor_examples() {
        let q = Quadrotor::default();
        let (x_eq, u_eq) = q.equilibrium();
        assert_eq!(q.dynamics(&x_eq, &u_eq), vec![0.0; 10]);
        let mut x = vec![0.0; 10];
        x[quad_idx::TAU] = 1.0;
        x[quad_idx::THETA] = PI / 2.0;
        let f = q.dynamics(&x, &[0.0; 4]);
        assert!((f[3] + 1.0).abs() < 1e-15);
        assert!(f[4].abs() < 1e-15);
        assert!((f[5] - GRAVITY).abs() < 1e-15);
        let f = q.dynamics(&x, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(&f[6..], &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn quadrotor_hover_jacobian_matches_finite_differences() {
        let q = Quadrotor::default();
        let (x_eq, _) = q.equilibrium();
        let j = q.drift_jacobian(&x_eq);
        let fd = fd_jacobian(&q, &x_eq, 1e-6);
        assert!(j.sub(&fd).max_abs() < 1e-8);
        assert_eq!(j[(3, quad_idx::THETA)], -GRAVITY);
        assert_eq!(j[(4, quad_idx::PHI)], GRAVITY);
        assert_eq!(j[(5, quad_idx::TAU)], -1.0);
        assert_eq!(j.col(quad_idx::PSI), vec![0.0; 10]);
    }

    fn fd_jacobian(sys: &dyn ControlAffineSystem, x: &[f64], h: f64) -> Matrix {
        let n = x.len();
        let mut j = Matrix::zeros(n, n);
        for c in 0..n {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[c] += h;
            xm[c] -= h;
            let (fp, fm) = (sys.drift(&xp), sys.drift(&xm));
            for r in 0..n {
                j[(r, c)] = (fp[r] - fm[r]) / (2.0 * h);
            }
        }
        j
    }

    #[test]
    fn jacobians_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for sys in all() {
            let region = sys.default_region();
            for _ in 0..100 {
                let x = sample_box(&mut rng, &region);
                let j = sys.drift_jacobian(&x);
                let fd = fd_jacobian(&sys, &x, 1e-6);
                for (a, b) in j.as_slice().iter().zip(fd.as_slice()) {
                    let rel = (a - b).abs() / (1.0 + a.abs());
                    assert!(rel <= 1e-6, "{}: {a} vs {b}", sys.name());
                }
            }
        }
    }

    #[test]
    fn simple_system_examples() {
        let s = benchmark_system("scalar_linear").unwrap();
        assert_eq!(s.drift_jacobian(&[0.3])[(0, 0)], -1.0);
        let p = benchmark_system("planar_nonlinear").unwrap();
        assert_eq!(p.drift(&[0.0, 0.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn degenerate_interval_jacobian_is_exact() {
        let q = Quadrotor::default();
        let x = [1.0, 2.0, 3.0, 0.1, 0.2, 0.3, 9.0, 0.1, -0.2, 0.4];
        let cell: Vec<Interval> = x.iter().map(|&v| Interval::point(v)).collect();
        let jh = q.drift_jacobian_hull(&cell);
        assert!(jh.max_width() == 0.0);
        assert!(jh.contains_with_tol(&q.drift_jacobian(&x), 1e-15));
    }

    #[test]
    fn interval_extensions_are_sound() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for sys in all() {
            let region = sys.default_region();
            for _ in 0..10 {
                // random sub-box
                let cell: Vec<Interval> = region
                    .iter()
                    .map(|iv| {
                        let a = iv.lo() + rng.gen::<f64>() * iv.width();
                        let b = iv.lo() + rng.gen::<f64>() * iv.width();
                        Interval::new(a.min(b), a.max(b)).unwrap()
                    })
                    .collect();
                let jh = sys.drift_jacobian_hull(&cell);
                let fh = sys.drift_hull(&cell);
                for _ in 0..1000 {
                    let x = sample_box(&mut rng, &cell);
                    assert!(jh.contains_with_tol(&sys.drift_jacobian(&x), 1e-14));
                    for (iv, v) in fh.iter().zip(sys.drift(&x)) {
                        assert!(iv.lo() - 1e-12 <= v && v <= iv.hi() + 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn quadrotor_pitch_box_jacobian_membership() {
        let q = Quadrotor::default();
        let mut cell = q.default_region();
        cell[quad_idx::PHI] = Interval::point(0.05);
        let jh = q.drift_jacobian_hull(&cell);
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..1000 {
            let x = sample_box(&mut rng, &cell);
            assert!(jh.contains_with_tol(&q.drift_jacobian(&x), 1e-14));
        }
    }

    #[test]
    fn closed_loop_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let q = benchmark_system("quadrotor10").unwrap();
        let (x_eq, u_eq) = q.equilibrium();
        let k = Matrix::from_vec(4, 10, (0..40).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let mut res = MlpParams::zero_output_init(10, &[8], 4, &mut rng);
        let mut flat = Vec::new();
        res.flatten_into(&mut flat);
        let flat: Vec<f64> = flat.iter().map(|_| rng.gen_range(-0.3..0.3)).collect();
        res.assign_from(&flat);
        let pi = PolicyNet::new(k, x_eq, u_eq, res).unwrap();
        let x = sample_box(&mut rng, &q.default_region());
        let f = closed_loop(&q, &pi, &x);
        let u = pi.forward(&x).unwrap();
        let expect = q.open_loop(&x, &u);
        assert_eq!(f, expect);
        let j = closed_loop_jacobian(&q, &pi, &x);
        let expect = q
            .drift_jacobian(&x)
            .add(&q.input_matrix().matmul(&pi.jacobian(&x).unwrap()));
        assert_eq!(j, expect);
    }
}
