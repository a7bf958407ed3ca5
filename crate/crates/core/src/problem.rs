//! The bundle of dynamics, networks and hyperparameters that the loss and the
//! certificate are evaluated on, plus the LQR warm start.

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::linalg::{cholesky_upper, solve_care, LinalgError, Matrix};
use crate::nets::{killing_projection, packed_len, MetricNet, MlpParams, NetError, PolicyNet};
use crate::systems::{closed_loop, closed_loop_jacobian, ControlAffineSystem, System};

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid hyperparameters: {0}")]
    Hyper(String),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Metric bounds `a`, `b` and contraction rate `c`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Hyper {
    pub fn validate(&self) -> Result<(), ProblemError> {
        let ok = self.a.is_finite() && self.b.is_finite() && self.c.is_finite();
        if !ok || self.a <= 0.0 || self.b <= self.a || self.c < 0.0 {
            return Err(ProblemError::Hyper(format!(
                "need 0 < a < b and c >= 0, got a={}, b={}, c={}",
                self.a, self.b, self.c
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ContractionProblem {
    pub system: System,
    pub metric: MetricNet,
    pub policy: PolicyNet,
    pub hyper: Hyper,
}

/// Settings of the LQR warm start and the residual network shapes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WarmStart {
    /// Diagonal of the LQR state weight; empty means identity.
    pub state_weight: Vec<f64>,
    /// Diagonal of the LQR input weight; empty means identity.
    pub input_weight: Vec<f64>,
    pub policy_hidden: Vec<usize>,
    pub metric_hidden: Vec<usize>,
}

impl Default for WarmStart {
    fn default() -> Self {
        WarmStart {
            state_weight: Vec::new(),
            input_weight: Vec::new(),
            policy_hidden: vec![32, 32],
            metric_hidden: vec![32, 32],
        }
    }
}

fn weight(diag: &[f64], n: usize, what: &str) -> Result<Matrix, ProblemError> {
    if diag.is_empty() {
        return Ok(Matrix::identity(n));
    }
    if diag.len() != n || diag.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
        return Err(ProblemError::Dimension(format!(
            "{what} weight needs {n} positive entries, got {diag:?}"
        )));
    }
    Ok(Matrix::from_diag(diag))
}

impl ContractionProblem {
    pub fn new(
        system: System,
        metric: MetricNet,
        policy: PolicyNet,
        hyper: Hyper,
    ) -> Result<Self, ProblemError> {
        hyper.validate()?;
        let (n, m) = (system.state_dim(), system.input_dim());
        if metric.state_dim() != n || policy.state_dim() != n || policy.gain.rows() != m {
            return Err(ProblemError::Dimension(format!(
                "system {} has n={n}, m={m}; metric n={}, policy {}x{}",
                system.name(),
                metric.state_dim(),
                policy.gain.rows(),
                policy.gain.cols()
            )));
        }
        Ok(ContractionProblem {
            system,
            metric,
            policy,
            hyper,
        })
    }

    /// LQR-seeded problem: `π = −K(x − x_eq) + u_eq + π_res`, `Θ = U + Θ_res`
    /// with `UᵀU` the Riccati solution and both residuals zero at the output.
    pub fn warm_started(
        system: System,
        hyper: Hyper,
        opts: &WarmStart,
        rng: &mut impl Rng,
    ) -> Result<Self, ProblemError> {
        let (n, m) = (system.state_dim(), system.input_dim());
        let (a, b) = system.linearization();
        let q = weight(&opts.state_weight, n, "state")?;
        let r = weight(&opts.input_weight, m, "input")?;
        let care = solve_care(&a, &b, &q, &r)?;
        let upper = cholesky_upper(&care.riccati)?;
        let (x_eq, u_eq) = system.equilibrium();
        let projection = killing_projection(&b);
        let policy_res = MlpParams::zero_output_init(n, &opts.policy_hidden, m, rng);
        let metric_res =
            MlpParams::zero_output_init(projection.rows(), &opts.metric_hidden, packed_len(n), rng);
        let policy = PolicyNet::new(care.gain.scale(-1.0), x_eq, u_eq, policy_res)?;
        let metric = MetricNet::new(upper, metric_res, projection)?;
        Self::new(system, metric, policy, hyper)
    }

    pub fn state_dim(&self) -> usize {
        self.system.state_dim()
    }

    /// Parameter count: metric (packed warm start, residual) then policy
    /// (gain, residual).
    pub fn num_params(&self) -> usize {
        self.metric.num_params() + self.policy.num_params()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_params());
        self.metric.flatten_into(&mut v);
        self.policy.flatten_into(&mut v);
        v
    }

    pub fn set_params(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.num_params(), "parameter vector length");
        let k = self.metric.assign_from(p);
        self.policy.assign_from(&p[k..]);
    }

    /// Mask of parameters that belong to residual networks (the ones that
    /// receive weight decay).
    pub fn residual_mask(&self) -> Vec<bool> {
        let n = self.state_dim();
        let mut mask = Vec::with_capacity(self.num_params());
        mask.extend(std::iter::repeat(false).take(packed_len(n)));
        mask.extend(std::iter::repeat(true).take(self.metric.residual.num_params()));
        mask.extend(std::iter::repeat(false).take(self.policy.gain.as_slice().len()));
        mask.extend(std::iter::repeat(true).take(self.policy.residual.num_params()));
        mask
    }

    /// SHA-256 over the parameter bits, the system name and the hyperparameters.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.system.name().as_bytes());
        for v in [self.hyper.a, self.hyper.b, self.hyper.c] {
            h.update(v.to_le_bytes());
        }
        for v in self.params() {
            h.update(v.to_le_bytes());
        }
        for v in self.metric.projection.as_slice() {
            h.update(v.to_le_bytes());
        }
        for v in self.policy.x_eq.iter().chain(&self.policy.u_eq) {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    pub fn closed_loop(&self, x: &[f64]) -> Vec<f64> {
        closed_loop(&self.system, &self.policy, x)
    }

    pub fn closed_loop_jacobian(&self, x: &[f64]) -> Matrix {
        closed_loop_jacobian(&self.system, &self.policy, x)
    }
}
