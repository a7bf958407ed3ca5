//! Explicit tracking controller, flat references for the quadrotor, and
//! closed-loop simulation with a metric-weighted error measurement.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::boundprop::Region;
use crate::nets::Policy;
use crate::problem::{ContractionProblem, Hyper};
use crate::systems::{quad_idx, ControlAffineSystem, Quadrotor, GRAVITY};

/// Feasibility tolerance on `‖ẋ' − f_ol(x', u')‖∞`.
pub const FEASIBILITY_TOL: f64 = 1e-4;
/// Thrust below this is treated as the free-fall singularity.
pub const MIN_THRUST: f64 = 1e-3;
/// State norm beyond which a trajectory is truncated.
pub const DIVERGENCE_NORM: f64 = 1e6;

#[derive(Debug, Error)]
pub enum TrackingError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("free-fall singularity at t={time}: thrust {thrust:.3e} is below {MIN_THRUST:e}")]
    FreeFall { time: f64, thrust: f64 },
    #[error("attitude leaves |phi|,|theta| < pi/2 at t={time}")]
    Inverted { time: f64 },
    #[error("reference is not dynamically feasible: residual {residual:.3e} at t={time}")]
    Infeasible { time: f64, residual: f64 },
    #[error("bad reference parameters: {0}")]
    Parameters(String),
}

/// `u = π(x) − π(x_ref) + u_ref`.
///
/// Two policy evaluations. The difference is formed before `u_ref` is added,
/// so `x == x_ref` gives back `u_ref` bit for bit.
pub fn tracking_control<P: Policy + ?Sized>(
    policy: &P,
    x: &[f64],
    x_ref: &[f64],
    u_ref: &[f64],
) -> Vec<f64> {
    let here = policy.eval(x);
    let there = policy.eval(x_ref);
    here.iter()
        .zip(&there)
        .zip(u_ref)
        .map(|((a, b), u)| (a - b) + u)
        .collect()
}

/// Flat-output curves for the quadrotor. Positions are NED, yaw is held at zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum TrajectoryShape {
    Hover {
        #[serde(default)]
        position: [f64; 3],
    },
    /// `(A sin ωt, (A/2) sin 2ωt, 0)`.
    FigureEight { amplitude: f64, period: f64 },
    /// Circle of `radius` in the horizontal plane, climbing at `climb_rate`.
    Helix {
        radius: f64,
        period: f64,
        climb_rate: f64,
    },
    /// `s·(sin ωt + 2 sin 2ωt, cos ωt − 2 cos 2ωt, −sin 3ωt)`.
    Trefoil { scale: f64, period: f64 },
    /// Straight down (NED +z) from rest with constant acceleration.
    VerticalAccel { accel: f64 },
}

impl TrajectoryShape {
    pub fn by_name(name: &str) -> Option<Self> {
        Some(match name {
            "hover" => TrajectoryShape::Hover {
                position: [0.0; 3],
            },
            "figure_eight" | "figure-eight" => TrajectoryShape::FigureEight {
                amplitude: 4.0,
                period: 12.0,
            },
            "helix" => TrajectoryShape::Helix {
                radius: 3.0,
                period: 12.0,
                climb_rate: 0.2,
            },
            "trefoil" => TrajectoryShape::Trefoil {
                scale: 1.5,
                period: 20.0,
            },
            "vertical_accel" | "vertical-accel" => TrajectoryShape::VerticalAccel {
                accel: GRAVITY / 2.0,
            },
            _ => return None,
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            TrajectoryShape::Hover { .. } => "hover",
            TrajectoryShape::FigureEight { .. } => "figure_eight",
            TrajectoryShape::Helix { .. } => "helix",
            TrajectoryShape::Trefoil { .. } => "trefoil",
            TrajectoryShape::VerticalAccel { .. } => "vertical_accel",
        }
    }

    fn validate(&self) -> Result<(), TrackingError> {
        let bad = |m: &str| Err(TrackingError::Parameters(m.into()));
        match *self {
            TrajectoryShape::Hover { position } if position.iter().any(|p| !p.is_finite()) => {
                bad("hover position must be finite")
            }
            TrajectoryShape::FigureEight { period, .. }
            | TrajectoryShape::Helix { period, .. }
            | TrajectoryShape::Trefoil { period, .. }
                if !(period > 0.0 && period.is_finite()) =>
            {
                bad("period must be positive")
            }
            TrajectoryShape::VerticalAccel { accel } if !accel.is_finite() => {
                bad("acceleration must be finite")
            }
            _ => Ok(()),
        }
    }

    /// Position, velocity and acceleration at time `t`.
    pub fn flat_outputs(&self, t: f64) -> [[f64; 3]; 3] {
        use std::f64::consts::TAU;
        match *self {
            TrajectoryShape::Hover { position } => [position, [0.0; 3], [0.0; 3]],
            TrajectoryShape::FigureEight { amplitude: a, period } => {
                let w = TAU / period;
                let (s1, c1) = (w * t).sin_cos();
                let (s2, c2) = (2.0 * w * t).sin_cos();
                [
                    [a * s1, 0.5 * a * s2, 0.0],
                    [a * w * c1, a * w * c2, 0.0],
                    [-a * w * w * s1, -2.0 * a * w * w * s2, 0.0],
                ]
            }
            TrajectoryShape::Helix {
                radius: r,
                period,
                climb_rate,
            } => {
                let w = TAU / period;
                let (s, c) = (w * t).sin_cos();
                [
                    [r * c, r * s, -climb_rate * t],
                    [-r * w * s, r * w * c, -climb_rate],
                    [-r * w * w * c, -r * w * w * s, 0.0],
                ]
            }
            TrajectoryShape::Trefoil { scale: k, period } => {
                let w = TAU / period;
                let (s1, c1) = (w * t).sin_cos();
                let (s2, c2) = (2.0 * w * t).sin_cos();
                let (s3, c3) = (3.0 * w * t).sin_cos();
                [
                    [k * (s1 + 2.0 * s2), k * (c1 - 2.0 * c2), -k * s3],
                    [
                        k * w * (c1 + 4.0 * c2),
                        k * w * (-s1 + 4.0 * s2),
                        -3.0 * k * w * c3,
                    ],
                    [
                        k * w * w * (-s1 - 8.0 * s2),
                        k * w * w * (-c1 + 8.0 * c2),
                        9.0 * k * w * w * s3,
                    ],
                ]
            }
            TrajectoryShape::VerticalAccel { accel } => {
                [[0.0, 0.0, 0.5 * accel * t * t], [0.0, 0.0, accel * t], [0.0, 0.0, accel]]
            }
        }
    }

    /// Full quadrotor state at `t` by inverting the translational dynamics.
    pub fn state(&self, t: f64) -> Result<Vec<f64>, TrackingError> {
        let [p, v, acc] = self.flat_outputs(t);
        let (ax, ay, az) = (acc[0], acc[1], acc[2]);
        let tau = (ax * ax + ay * ay + (GRAVITY - az).powi(2)).sqrt();
        if tau < MIN_THRUST {
            return Err(TrackingError::FreeFall { time: t, thrust: tau });
        }
        let theta = (-ax / tau).clamp(-1.0, 1.0).asin();
        let ct = theta.cos();
        let vertical = (GRAVITY - az) / (tau * ct);
        if vertical <= 0.0 {
            return Err(TrackingError::Inverted { time: t });
        }
        let phi = (ay / (tau * ct)).atan2(vertical);
        let mut x = Vec::with_capacity(10);
        x.extend_from_slice(&p);
        x.extend_from_slice(&v);
        x.extend([tau, phi, theta, 0.0]);
        Ok(x)
    }
}

fn central_diff4(f: impl Fn(f64) -> Result<Vec<f64>, TrackingError>, t: f64, h: f64) -> Result<Vec<f64>, TrackingError> {
    let (p2, p1, m1, m2) = (f(t + 2.0 * h)?, f(t + h)?, f(t - h)?, f(t - 2.0 * h)?);
    Ok((0..p1.len())
        .map(|i| (8.0 * (p1[i] - m1[i]) - (p2[i] - m2[i])) / (12.0 * h))
        .collect())
}

/// Sampled nominal trajectory `x'(t)`, `u'(t)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReferenceTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub inputs: Vec<Vec<f64>>,
    /// Position, velocity and acceleration per sample; empty for non-flat references.
    pub flat: Vec<[[f64; 3]; 3]>,
    pub shape: Option<TrajectoryShape>,
    /// Largest `‖ẋ' − f_ol(x', u')‖∞` over the samples.
    pub feasibility_residual: f64,
}

fn time_grid(duration: f64, dt: f64) -> Result<Vec<f64>, TrackingError> {
    if !(dt > 0.0 && duration >= 0.0 && duration.is_finite()) {
        return Err(TrackingError::Parameters(format!(
            "need dt > 0 and duration >= 0, got dt={dt}, duration={duration}"
        )));
    }
    let steps = (duration / dt).round() as usize;
    Ok((0..=steps).map(|k| k as f64 * dt).collect())
}

/// Reference from a flat-output curve; rejects singular or infeasible curves.
pub fn flat_reference(
    shape: &TrajectoryShape,
    duration: f64,
    dt: f64,
) -> Result<ReferenceTrajectory, TrackingError> {
    shape.validate()?;
    let times = time_grid(duration, dt)?;
    let quad = Quadrotor::default();
    let attitude = |t: f64| shape.state(t).map(|x| x[quad_idx::TAU..].to_vec());
    let mut states = Vec::with_capacity(times.len());
    let mut inputs = Vec::with_capacity(times.len());
    let mut flat = Vec::with_capacity(times.len());
    let mut worst = 0.0f64;
    for &t in &times {
        let x = shape.state(t)?;
        let u = central_diff4(attitude, t, dt)?;
        let xdot = central_diff4(|s| shape.state(s), t, dt)?;
        let f = quad.open_loop(&x, &u);
        let r = xdot
            .iter()
            .zip(&f)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if !(r <= FEASIBILITY_TOL) {
            return Err(TrackingError::Infeasible { time: t, residual: r });
        }
        worst = worst.max(r);
        states.push(x);
        inputs.push(u);
        flat.push(shape.flat_outputs(t));
    }
    Ok(ReferenceTrajectory {
        times,
        states,
        inputs,
        flat,
        shape: Some(shape.clone()),
        feasibility_residual: worst,
    })
}

/// Constant reference sitting at the system's equilibrium.
pub fn equilibrium_reference(
    system: &dyn ControlAffineSystem,
    duration: f64,
    dt: f64,
) -> Result<ReferenceTrajectory, TrackingError> {
    let times = time_grid(duration, dt)?;
    let (x, u) = system.equilibrium();
    let residual = system.open_loop(&x, &u).iter().fold(0.0, |m, v| f64::max(m, v.abs()));
    Ok(ReferenceTrajectory {
        states: vec![x; times.len()],
        inputs: vec![u; times.len()],
        times,
        flat: Vec::new(),
        shape: None,
        feasibility_residual: residual,
    })
}

/// Natural cubic spline through uniformly spaced samples of one channel.
struct NaturalSpline {
    values: Vec<f64>,
    second: Vec<f64>,
}

impl NaturalSpline {
    fn new(values: Vec<f64>, h: f64) -> Self {
        let n = values.len();
        let mut second = vec![0.0; n];
        if n > 2 {
            // Thomas algorithm on M[i-1] + 4 M[i] + M[i+1] = 6 Δ²y / h²
            let m = n - 2;
            let mut diag = vec![4.0; m];
            let mut rhs: Vec<f64> = (1..n - 1)
                .map(|i| 6.0 * (values[i + 1] - 2.0 * values[i] + values[i - 1]) / (h * h))
                .collect();
            for i in 1..m {
                let w = 1.0 / diag[i - 1];
                diag[i] -= w;
                rhs[i] -= w * rhs[i - 1];
            }
            second[m] = rhs[m - 1] / diag[m - 1];
            for i in (0..m - 1).rev() {
                second[i + 1] = (rhs[i] - second[i + 2]) / diag[i];
            }
        }
        NaturalSpline { values, second }
    }

    fn eval(&self, i: usize, s: f64, h: f64) -> f64 {
        if s == 0.0 {
            return self.values[i];
        }
        let (y0, y1) = (self.values[i], self.values[i + 1]);
        let (m0, m1) = (self.second[i], self.second[i + 1]);
        let a = 1.0 - s;
        a * y0 + s * y1 + h * h / 6.0 * ((a * a * a - a) * m0 + (s * s * s - s) * m1)
    }
}

/// Cubic interpolation of a sampled reference: Hermite for states with
/// slopes `f_ol(x', u')`, natural splines for inputs.
pub struct ReferenceInterpolant<'a> {
    reference: &'a ReferenceTrajectory,
    slopes: Vec<Vec<f64>>,
    inputs: Vec<NaturalSpline>,
    h: f64,
}

impl<'a> ReferenceInterpolant<'a> {
    pub fn new(reference: &'a ReferenceTrajectory, system: &dyn ControlAffineSystem) -> Self {
        let h = if reference.times.len() > 1 {
            reference.times[1] - reference.times[0]
        } else {
            1.0
        };
        let slopes = reference
            .states
            .iter()
            .zip(&reference.inputs)
            .map(|(x, u)| system.open_loop(x, u))
            .collect();
        let m = reference.inputs.first().map_or(0, |u| u.len());
        let inputs = (0..m)
            .map(|j| NaturalSpline::new(reference.inputs.iter().map(|u| u[j]).collect(), h))
            .collect();
        ReferenceInterpolant {
            reference,
            slopes,
            inputs,
            h,
        }
    }

    fn locate(&self, t: f64) -> (usize, f64) {
        let last = self.reference.times.len() - 1;
        if last == 0 {
            return (0, 0.0);
        }
        let t0 = self.reference.times[0];
        let pos = ((t - t0) / self.h).clamp(0.0, last as f64);
        // snap onto samples so grid-aligned queries return them exactly
        let near = pos.round();
        if (pos - near).abs() < 1e-9 && (near as usize) < last {
            return (near as usize, 0.0);
        }
        let i = (pos.floor() as usize).min(last - 1);
        (i, pos - i as f64)
    }

    pub fn state(&self, t: f64) -> Vec<f64> {
        let (i, s) = self.locate(t);
        let x0 = &self.reference.states[i];
        if s == 0.0 {
            return x0.clone();
        }
        let x1 = &self.reference.states[i + 1];
        let (d0, d1) = (&self.slopes[i], &self.slopes[i + 1]);
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        (0..x0.len())
            .map(|k| h00 * x0[k] + h10 * self.h * d0[k] + h01 * x1[k] + h11 * self.h * d1[k])
            .collect()
    }

    pub fn input(&self, t: f64) -> Vec<f64> {
        let (i, s) = self.locate(t);
        self.inputs.iter().map(|sp| sp.eval(i, s, self.h)).collect()
    }
}

/// One closed-loop run from a single initial condition.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrackedTrajectory {
    pub initial: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// `‖Θ(x_ref)(x − x_ref)‖₂` per recorded step.
    pub d_hat: Vec<f64>,
    /// Least-squares slope of `ln d̂` over the fit window; `None` when `d̂` starts at zero.
    pub fitted_rate: Option<f64>,
    /// Time at which the state norm exceeded the divergence threshold.
    pub diverged_at: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SimulationResult {
    pub times: Vec<f64>,
    pub reference: Vec<Vec<f64>>,
    pub trajectories: Vec<TrackedTrajectory>,
    /// End of the window used for rate fitting.
    pub fit_horizon: f64,
}

impl SimulationResult {
    /// Largest fitted rate across trajectories that have one.
    pub fn worst_rate(&self) -> Option<f64> {
        self.trajectories
            .iter()
            .filter_map(|t| t.fitted_rate)
            .fold(None, |m, r| Some(m.map_or(r, |m: f64| m.max(r))))
    }
}

fn rk4_step(f: &impl Fn(f64, &[f64]) -> Vec<f64>, t: f64, x: &[f64], dt: f64) -> Vec<f64> {
    let axpy = |a: f64, k: &[f64]| -> Vec<f64> { x.iter().zip(k).map(|(x, k)| x + a * k).collect() };
    let k1 = f(t, x);
    let k2 = f(t + 0.5 * dt, &axpy(0.5 * dt, &k1));
    let k3 = f(t + 0.5 * dt, &axpy(0.5 * dt, &k2));
    let k4 = f(t + dt, &axpy(dt, &k3));
    (0..x.len())
        .map(|i| x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}

fn log_slope(times: &[f64], d: &[f64], horizon: f64) -> Option<f64> {
    let d0 = *d.first()?;
    if !(d0 > 0.0) {
        return None;
    }
    // below this the log is dominated by roundoff
    let floor = d0 * 1e-10;
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(d)
        .take_while(|(t, _)| **t <= horizon + 1e-12)
        .filter(|(_, v)| **v > floor)
        .map(|(t, v)| (*t, v.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// RK4 closed-loop simulation of the tracking controller from each initial
/// condition over the span of `reference`.
pub fn simulate(
    problem: &ContractionProblem,
    reference: &ReferenceTrajectory,
    initial_conditions: &[Vec<f64>],
    dt: f64,
) -> Result<SimulationResult, TrackingError> {
    let n = problem.state_dim();
    if reference.states.first().map(|x| x.len()) != Some(n) {
        return Err(TrackingError::Dimension(format!(
            "reference states do not have dimension {n}"
        )));
    }
    if let Some(x) = initial_conditions.iter().find(|x| x.len() != n) {
        return Err(TrackingError::Dimension(format!(
            "initial condition of length {} for a state of dimension {n}",
            x.len()
        )));
    }
    if !(dt > 0.0) {
        return Err(TrackingError::Parameters(format!("dt must be positive, got {dt}")));
    }
    let t0 = reference.times[0];
    let duration = reference.times.last().unwrap() - t0;
    let steps = (duration / dt).round() as usize;
    let times: Vec<f64> = (0..=steps).map(|k| t0 + k as f64 * dt).collect();
    let interp = ReferenceInterpolant::new(reference, &problem.system);
    let ref_states: Vec<Vec<f64>> = times.iter().map(|&t| interp.state(t)).collect();
    let fit_horizon = if problem.hyper.c > 0.0 {
        duration.min(5.0 / problem.hyper.c)
    } else {
        duration
    };

    let rhs = |t: f64, x: &[f64]| {
        let xr = interp.state(t);
        let ur = interp.input(t);
        let u = tracking_control(&problem.policy, x, &xr, &ur);
        problem.system.open_loop(x, &u)
    };
    let d_hat = |x: &[f64], xr: &[f64]| {
        let e: Vec<f64> = x.iter().zip(xr).map(|(a, b)| a - b).collect();
        let theta = problem.metric.theta(xr).expect("metric input dimension");
        theta.matvec(&e).iter().map(|v| v * v).sum::<f64>().sqrt()
    };

    let trajectories = initial_conditions
        .par_iter()
        .map(|x0| {
            let mut states = vec![x0.clone()];
            let mut d = vec![d_hat(x0, &ref_states[0])];
            let mut diverged_at = None;
            for k in 0..steps {
                let next = rk4_step(&rhs, times[k], &states[k], dt);
                let norm = next.iter().map(|v| v * v).sum::<f64>().sqrt();
                if !(norm <= DIVERGENCE_NORM) {
                    diverged_at = Some(times[k + 1]);
                    break;
                }
                d.push(d_hat(&next, &ref_states[k + 1]));
                states.push(next);
            }
            let fitted_rate = if diverged_at.is_none() {
                log_slope(&times, &d, fit_horizon)
            } else {
                None
            };
            TrackedTrajectory {
                initial: x0.clone(),
                states,
                d_hat: d,
                fitted_rate,
                diverged_at,
            }
        })
        .collect();
    Ok(SimulationResult {
        times,
        reference: ref_states,
        trajectories,
        fit_horizon,
    })
}

/// Result of checking that an ℓ2 tube around the reference stays inside the region.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TubeCheck {
    pub radius: f64,
    pub contained: bool,
    pub first_violation: Option<f64>,
    /// Largest radius whose tube stays inside the region at every sample.
    pub max_radius: f64,
    /// `√a · max_radius`: geodesic ball contained in the ℓ2 tube.
    pub geodesic_radius: f64,
    /// `√(a/b) · max_radius`: ℓ2 ball of admissible initial errors.
    pub initial_radius: f64,
}

/// Checks `{x : ‖x − x'(t)‖₂ ≤ radius} ⊆ int X` at every sample time.
pub fn ball_tube_check(
    region: &Region,
    reference: &ReferenceTrajectory,
    radius: f64,
    hyper: &Hyper,
) -> TubeCheck {
    let mut first_violation = None;
    let mut max_radius = f64::INFINITY;
    for (t, x) in reference.times.iter().zip(&reference.states) {
        let margin = region
            .bounds
            .iter()
            .zip(x)
            .map(|(b, v)| (v - b.lo()).min(b.hi() - v))
            .fold(f64::INFINITY, f64::min);
        max_radius = max_radius.min(margin);
        if first_violation.is_none() && !(margin > radius) {
            first_violation = Some(*t);
        }
    }
    let max_radius = max_radius.max(0.0);
    TubeCheck {
        radius,
        contained: first_violation.is_none(),
        first_violation,
        max_radius,
        geodesic_radius: hyper.a.sqrt() * max_radius,
        initial_radius: (hyper.a / hyper.b).sqrt() * max_radius,
    }
}

/// `t,x0..,u0..` with one row per sample.
pub fn reference_csv(reference: &ReferenceTrajectory) -> String {
    let n = reference.states.first().map_or(0, |x| x.len());
    let m = reference.inputs.first().map_or(0, |u| u.len());
    let mut out = String::from("t");
    (0..n).for_each(|i| write!(out, ",x{i}").unwrap());
    (0..m).for_each(|i| write!(out, ",u{i}").unwrap());
    out.push('\n');
    for ((t, x), u) in reference.times.iter().zip(&reference.states).zip(&reference.inputs) {
        write!(out, "{t:e}").unwrap();
        for v in x.iter().chain(u) {
            write!(out, ",{v:e}").unwrap();
        }
        out.push('\n');
    }
    out
}

/// `trajectory,t,x0..,d_hat`, every `stride`-th step of every trajectory.
pub fn simulation_csv(sim: &SimulationResult, stride: usize) -> String {
    let stride = stride.max(1);
    let n = sim.reference.first().map_or(0, |x| x.len());
    let mut out = String::from("trajectory,t");
    (0..n).for_each(|i| write!(out, ",x{i}").unwrap());
    out.push_str(",d_hat\n");
    for (k, traj) in sim.trajectories.iter().enumerate() {
        for (i, (x, d)) in traj.states.iter().zip(&traj.d_hat).enumerate() {
            if i % stride != 0 && i + 1 != traj.states.len() {
                continue;
            }
            write!(out, "{k},{:e}", sim.times[i]).unwrap();
            for v in x {
                write!(out, ",{v:e}").unwrap();
            }
            writeln!(out, ",{d:e}").unwrap();
        }
    }
    out
}

/// `trajectory,fitted_rate,diverged_at` with empty fields for `None`.
pub fn rates_csv(sim: &SimulationResult) -> String {
    let mut out = String::from("trajectory,fitted_rate,diverged_at\n");
    let opt = |v: Option<f64>| v.map(|v| format!("{v:e}")).unwrap_or_default();
    for (k, t) in sim.trajectories.iter().enumerate() {
        writeln!(out, "{k},{},{}", opt(t.fitted_rate), opt(t.diverged_at)).unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interval::Interval;
    use crate::problem::WarmStart;
    use crate::systems::benchmark_system;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::cell::Cell;

    struct Counting<'a, P> {
        inner: &'a P,
        calls: Cell<usize>,
    }

    impl<P: Policy> Policy for Counting<'_, P> {
        fn input_dim(&self) -> usize {
            self.inner.input_dim()
        }
        fn eval(&self, x: &[f64]) -> Vec<f64> {
            self.calls.set(self.calls.get() + 1);
            self.inner.eval(x)
        }
    }

    fn quad_problem(seed: u64) -> ContractionProblem {
        let sys = benchmark_system("quadrotor10").unwrap();
        let ws = WarmStart {
            policy_hidden: vec![8],
            metric_hidden: vec![8],
            ..WarmStart::default()
        };
        let hyper = Hyper { a: 0.01, b: 100.0, c: 0.001 };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ContractionProblem::warm_started(sys, hyper, &ws, &mut rng).unwrap()
    }

    fn perturbed_quad(seed: u64) -> ContractionProblem {
        let mut p = quad_problem(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        let mut params = p.params();
        for v in params.iter_mut() {
            *v += 0.05 * (rand::Rng::gen::<f64>(&mut rng) - 0.5);
        }
        p.set_params(&params);
        p
    }

    #[test]
    fn controller_identities() {
        let p = perturbed_quad(1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let region = Region::whole(p.system.default_region());
        for _ in 0..50 {
            let x = region.sample(&mut rng);
            let xr = region.sample(&mut rng);
            let ur: Vec<f64> = (0..4).map(|_| rand::Rng::gen::<f64>(&mut rng) - 0.5).collect();
            assert_eq!(tracking_control(&p.policy, &xr, &xr, &ur), ur);
            let pi_ref = p.policy.eval(&xr);
            let u = tracking_control(&p.policy, &x, &xr, &pi_ref);
            let pi_x = p.policy.eval(&x);
            for (a, b) in u.iter().zip(&pi_x) {
                assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
            }
        }
    }

    #[test]
    fn controller_uses_two_inferences() {
        let p = perturbed_quad(3);
        let counting = Counting { inner: &p.policy, calls: Cell::new(0) };
        let (x, u) = p.system.equilibrium();
        let _ = tracking_control(&counting, &x, &x, &u);
        assert_eq!(counting.calls.get(), 2);
    }

    #[test]
    fn hover_controller_is_linear_feedback() {
        let p = quad_problem(4);
        let (xe, ue) = p.system.equilibrium();
        let mut x = xe.clone();
        x[0] = 0.3;
        x[7] = -0.1;
        let u = tracking_control(&p.policy, &x, &xe, &ue);
        let dx: Vec<f64> = x.iter().zip(&xe).map(|(a, b)| a - b).collect();
        let expect = p.policy.gain.matvec(&dx);
        for (a, b) in u.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn hover_reference_is_equilibrium() {
        let r = flat_reference(&TrajectoryShape::by_name("hover").unwrap(), 1.0, 0.01).unwrap();
        let (xe, ue) = Quadrotor::default().equilibrium();
        for (x, u) in r.states.iter().zip(&r.inputs) {
            assert_eq!(x, &xe);
            assert_eq!(u, &ue);
        }
    }

    #[test]
    fn vertical_acceleration_inverts_directly() {
        let shape = TrajectoryShape::VerticalAccel { accel: GRAVITY / 2.0 };
        let r = flat_reference(&shape, 0.5, 0.01).unwrap();
        for x in &r.states {
            assert!((x[quad_idx::TAU] - GRAVITY / 2.0).abs() < 1e-12);
            assert_eq!(x[quad_idx::PHI], 0.0);
            assert_eq!(x[quad_idx::THETA], 0.0);
        }
        let fall = TrajectoryShape::VerticalAccel { accel: GRAVITY };
        assert!(matches!(flat_reference(&fall, 0.5, 0.01), Err(TrackingError::FreeFall { .. })));
    }

    #[test]
    fn flat_shapes_are_feasible() {
        for name in ["figure_eight", "helix", "trefoil"] {
            let shape = TrajectoryShape::by_name(name).unwrap();
            let r = flat_reference(&shape, 20.0, 1e-3).unwrap();
            assert!(r.feasibility_residual <= FEASIBILITY_TOL, "{name}");
            // attitude inversion reproduces the commanded acceleration
            for (x, f) in r.states.iter().zip(&r.flat).step_by(97) {
                let a = Quadrotor::acceleration(x[6], x[7], x[8]);
                for k in 0..3 {
                    assert!((a[k] - f[2][k]).abs() < 1e-10, "{name}");
                }
            }
        }
    }

    #[test]
    fn spline_reproduces_cubics_in_the_interior() {
        let h = 0.1;
        let f = |t: f64| 1.0 + t - 0.5 * t * t;
        let sp = NaturalSpline::new((0..=20).map(|k| f(k as f64 * h)).collect(), h);
        // natural end conditions cost accuracy only near the ends
        let v = sp.eval(10, 0.5, h);
        assert!((v - f(1.05)).abs() < 1e-4);
        assert_eq!(sp.eval(3, 0.0, h), f(0.3));
    }

    #[test]
    fn start_on_reference_stays_on_it() {
        let p = perturbed_quad(5);
        let r = flat_reference(&TrajectoryShape::by_name("hover").unwrap(), 2.0, 0.01).unwrap();
        let sim = simulate(&p, &r, &[r.states[0].clone()], 0.01).unwrap();
        assert!(sim.trajectories[0].d_hat.iter().all(|&d| d == 0.0));
        assert_eq!(sim.trajectories[0].fitted_rate, None);
    }

    #[test]
    fn nominal_error_has_fourth_order() {
        let p = perturbed_quad(6);
        let shape = TrajectoryShape::by_name("figure_eight").unwrap();
        let r = flat_reference(&shape, 6.0, 1e-3).unwrap();
        let err = |dt: f64| {
            let sim = simulate(&p, &r, &[r.states[0].clone()], dt).unwrap();
            let last = sim.trajectories[0].states.last().unwrap();
            let exact = shape.state(6.0).unwrap();
            last.iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
        };
        let (e1, e2) = (err(0.1), err(0.05));
        let order = (e1 / e2).log2();
        assert!((order - 4.0).abs() <= 0.3, "order {order}, errors {e1:e} {e2:e}");
    }

    #[test]
    fn rate_fit_recovers_exponential() {
        let times: Vec<f64> = (0..100).map(|k| k as f64 * 0.1).collect();
        let d: Vec<f64> = times.iter().map(|t| 3.0 * (-0.7 * t).exp()).collect();
        assert!((log_slope(&times, &d, 100.0).unwrap() + 0.7).abs() < 1e-10);
    }

    #[test]
    fn tube_checks() {
        let hyper = Hyper { a: 0.01, b: 100.0, c: 0.001 };
        let quad = Quadrotor::default();
        let region = Region::whole(quad.default_region());
        let r = flat_reference(&TrajectoryShape::by_name("hover").unwrap(), 1.0, 0.1).unwrap();
        let check = ball_tube_check(&region, &r, 0.1, &hyper);
        let half = region.bounds.iter().map(|b| b.radius()).fold(f64::INFINITY, f64::min);
        assert!(check.contained);
        assert!((check.max_radius - half).abs() < 1e-12);
        assert!((check.initial_radius - 0.01 * check.max_radius).abs() < 1e-15);

        let far = TrajectoryShape::VerticalAccel { accel: -4.0 };
        let r = flat_reference(&far, 5.0, 0.01).unwrap();
        let check = ball_tube_check(&region, &r, 0.0, &hyper);
        assert!(!check.contained);
        // thrust g + 4 leaves [2g/3, 4g/3] immediately
        assert_eq!(check.first_violation, Some(0.0));
        let narrow = Region::whole(vec![Interval::new(-1.0, 1.0).unwrap()]);
        let one = ReferenceTrajectory {
            times: vec![0.0, 1.0, 2.0],
            states: vec![vec![0.0], vec![0.5], vec![1.5]],
            inputs: vec![vec![]; 3],
            flat: vec![],
            shape: None,
            feasibility_residual: 0.0,
        };
        let check = ball_tube_check(&narrow, &one, 0.6, &hyper);
        assert_eq!(check.first_violation, Some(1.0));
    }
}
