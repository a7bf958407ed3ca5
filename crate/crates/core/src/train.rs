//! Certified loss, its gradient, AdamW, and the curriculum over growing
//! regions.
//!
//! ```text
//! loss = agg_cells max(λ_cell, 0) + max(a − â, 0) + max(b̂ − b, 0)
//! ```
//!
//! `λ_cell` is the corner-check maximum of the cell's `G` hull, `â`/`b̂` the
//! extreme eigenvalues over the union `M` hull. The gradient of an extreme
//! eigenvalue at its corner `C + D_s R D_s` is `v vᵀ` with respect to the
//! center and `(s∘v)(s∘v)ᵀ` with respect to the radius; those are mapped to
//! lower/upper bound adjoints and pushed back through the tapes.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boundprop::tape::Adjoint;
use crate::boundprop::{BoundError, CellStage, MetricStage, Region, RegionPlan};
use crate::certify::{certify_region, rohn_max_mu2_pruned, rohn_min_eig_pruned, Certificate, CornerMax, Verdict};
use crate::interval::IntervalMatrix;
pub use crate::problem::{ContractionProblem, Hyper, WarmStart};

/// Loss value used when a hull or corner check is not finite.
pub const NON_FINITE_PENALTY: f64 = 1e6;

/// How per-cell hinge values are combined in the loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    #[default]
    Mean,
    Max,
    /// One corner check on the hull of all cell hulls.
    Union,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    /// Aggregated `max(λ_cell, 0)`.
    pub lambda_term: f64,
    pub a_deficit: f64,
    pub b_excess: f64,
    /// Largest cell value (what the certificate checks).
    pub lambda_max: f64,
    pub cell_lambdas: Vec<f64>,
    pub a_hat: f64,
    pub b_hat: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossEval {
    pub value: f64,
    pub parts: LossParts,
    /// Gradient over `ContractionProblem::params` order, when requested.
    pub gradient: Option<Vec<f64>>,
    /// Set when the penalty replaced a non-finite evaluation.
    pub diagnostic: Option<String>,
}

fn hinge_slope(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Bound adjoints of `λ = vᵀ(sym C + σ D_s sym R D_s)v` for an interval matrix
/// with center `C` and radius `R`, scaled by `weight`.
fn corner_adjoint(n: usize, corner: &CornerMax, sigma: f64, weight: f64) -> Adjoint {
    let v = &corner.vector;
    let w: Vec<f64> = v.iter().zip(&corner.sign).map(|(a, s)| a * s).collect();
    let mut out = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let dc = v[i] * v[j];
            let dr = sigma * w[i] * w[j];
            out.push((weight * 0.5 * (dc - dr), weight * 0.5 * (dc + dr)));
        }
    }
    out
}

struct CellResult {
    lambda: f64,
    hull: Option<IntervalMatrix>,
    corner: Option<CornerMax>,
    grads: Option<CellGrads>,
}

struct CellGrads {
    policy: Vec<f64>,
    theta: Adjoint,
    jacobian: Adjoint,
}

fn zero_adjoint(m: &IntervalMatrix) -> Adjoint {
    vec![(0.0, 0.0); m.as_slice().len()]
}

fn cell_backward(stage: &CellStage, corner: &CornerMax, weight: f64) -> CellGrads {
    let n = stage.g().rows();
    seeded_backward(stage, corner_adjoint(n, corner, 1.0, weight))
}

fn seeded_backward(stage: &CellStage, seed: Adjoint) -> CellGrads {
    let adj = stage.tape.backward(&[(stage.g, seed)]);
    let theta = adj[stage.theta]
        .clone()
        .unwrap_or_else(|| zero_adjoint(stage.tape.value(stage.theta)));
    let jacobian = adj[stage.jacobian]
        .clone()
        .unwrap_or_else(|| zero_adjoint(stage.tape.value(stage.jacobian)));
    CellGrads {
        policy: stage.policy_gradient(&adj),
        theta,
        jacobian,
    }
}

fn penalty(problem: &ContractionProblem, why: String, want_grad: bool) -> LossEval {
    LossEval {
        value: NON_FINITE_PENALTY,
        parts: LossParts {
            lambda_term: NON_FINITE_PENALTY,
            a_deficit: 0.0,
            b_excess: 0.0,
            lambda_max: f64::INFINITY,
            cell_lambdas: Vec::new(),
            a_hat: f64::NAN,
            b_hat: f64::NAN,
        },
        gradient: want_grad.then(|| vec![0.0; problem.num_params()]),
        diagnostic: Some(why),
    }
}

fn evaluate(problem: &ContractionProblem, region: &Region, agg: Aggregation, want_grad: bool) -> LossEval {
    let plan = match RegionPlan::new(&problem.metric, region) {
        Ok(p) => p,
        Err(e) => return penalty(problem, e.to_string(), want_grad),
    };
    let metric = match MetricStage::build(&problem.metric, &plan.projected) {
        Ok(m) => m,
        Err(e) => return penalty(problem, e.to_string(), want_grad),
    };
    let cells = plan.cells.len();
    let mean_weight = 1.0 / cells as f64;

    let build = |idx: usize| -> Result<CellStage, BoundError> {
        let g = metric.groups[plan.cell_group[idx]];
        CellStage::build(
            problem,
            &plan.cells[idx],
            metric.tape.value(g.theta),
            metric.tape.value(g.jacobian),
        )
    };
    let results: Vec<Result<CellResult, String>> = (0..cells)
        .into_par_iter()
        .map(|idx| {
            let stage = build(idx).map_err(|e| e.to_string())?;
            if !stage.g().is_finite() {
                return Err(format!("non-finite contraction matrix hull in cell {idx}"));
            }
            let corner = rohn_max_mu2_pruned(stage.g()).map_err(|e| format!("cell {idx}: {e}"))?;
            let lambda = corner.value;
            let grads = (want_grad && agg == Aggregation::Mean && lambda > 0.0)
                .then(|| cell_backward(&stage, &corner, mean_weight));
            Ok(CellResult {
                lambda,
                hull: (agg == Aggregation::Union).then(|| stage.g().clone()),
                corner: Some(corner),
                grads,
            })
        })
        .collect();
    let mut results: Vec<CellResult> = match results.into_iter().collect() {
        Ok(r) => r,
        Err(e) => return penalty(problem, e, want_grad),
    };

    let lambdas: Vec<f64> = results.iter().map(|r| r.lambda).collect();
    let mut worst = 0;
    for (i, &l) in lambdas.iter().enumerate() {
        if l > lambdas[worst] {
            worst = i;
        }
    }
    let lambda_max = lambdas[worst];
    let lambda_term = match agg {
        Aggregation::Mean => lambdas.iter().map(|l| l.max(0.0)).sum::<f64>() * mean_weight,
        Aggregation::Max => lambda_max.max(0.0),
        Aggregation::Union => 0.0,
    };
    let lambda_term = if agg == Aggregation::Union {
        match union_term(&mut results, want_grad, &build) {
            Ok(v) => v,
            Err(e) => return penalty(problem, e, want_grad),
        }
    } else {
        lambda_term
    };
    if want_grad && agg == Aggregation::Max && lambda_max > 0.0 {
        let stage = match build(worst) {
            Ok(s) => s,
            Err(e) => return penalty(problem, e.to_string(), want_grad),
        };
        let corner = results[worst].corner.take().expect("corner");
        results[worst].grads = Some(cell_backward(&stage, &corner, 1.0));
    }

    let m_union = metric.tape.value(metric.metric_union);
    if !m_union.is_finite() {
        return penalty(problem, "non-finite metric hull".into(), want_grad);
    }
    let (low, high) = match (rohn_min_eig_pruned(m_union), rohn_max_mu2_pruned(m_union)) {
        (Ok(l), Ok(h)) => (l, h),
        (Err(e), _) | (_, Err(e)) => return penalty(problem, e.to_string(), want_grad),
    };
    let hyper = problem.hyper;
    let a_deficit = (hyper.a - low.value).max(0.0);
    let b_excess = (high.value - hyper.b).max(0.0);
    let value = lambda_term + a_deficit + b_excess;
    let parts = LossParts {
        lambda_term,
        a_deficit,
        b_excess,
        lambda_max,
        cell_lambdas: lambdas,
        a_hat: low.value,
        b_hat: high.value,
    };
    if !value.is_finite() {
        return penalty(problem, format!("non-finite loss {value}"), want_grad);
    }
    if !want_grad {
        return LossEval {
            value,
            parts,
            gradient: None,
            diagnostic: None,
        };
    }

    // ordered reduction of per-cell contributions
    let n = problem.state_dim();
    let mut policy_grad = vec![0.0; problem.policy.num_params()];
    let mut group_adj: Vec<Option<(Adjoint, Adjoint)>> = vec![None; plan.projected.len()];
    for (idx, r) in results.iter().enumerate() {
        let Some(g) = &r.grads else { continue };
        for (a, b) in policy_grad.iter_mut().zip(&g.policy) {
            *a += b;
        }
        let slot = &mut group_adj[plan.cell_group[idx]];
        match slot {
            None => *slot = Some((g.theta.clone(), g.jacobian.clone())),
            Some((t, j)) => {
                add_into(t, &g.theta);
                add_into(j, &g.jacobian);
            }
        }
    }
    let mut seeds: Vec<(usize, Adjoint)> = Vec::new();
    for (gi, adj) in group_adj.into_iter().enumerate() {
        if let Some((t, j)) = adj {
            seeds.push((metric.groups[gi].theta, t));
            seeds.push((metric.groups[gi].jacobian, j));
        }
    }
    let mut m_seed: Option<Adjoint> = None;
    // d(a − â)/dâ = −1, â = −λ_max(−C + D R D)
    let a_slope = hinge_slope(hyper.a - low.value);
    if a_slope > 0.0 {
        m_seed = Some(corner_adjoint(n, &low, -1.0, -a_slope));
    }
    let b_slope = hinge_slope(high.value - hyper.b);
    if b_slope > 0.0 {
        let s = corner_adjoint(n, &high, 1.0, b_slope);
        match &mut m_seed {
            Some(acc) => add_into(acc, &s),
            None => m_seed = Some(s),
        }
    }
    if let Some(s) = m_seed {
        seeds.push((metric.metric_union, s));
    }
    let mut gradient = if seeds.is_empty() {
        vec![0.0; problem.metric.num_params()]
    } else {
        let adj = metric.tape.backward(&seeds);
        metric.gradient(&adj)
    };
    gradient.extend(policy_grad);
    LossEval {
        value,
        parts,
        gradient: Some(gradient),
        diagnostic: None,
    }
}

/// Hinge on the union hull. Each endpoint adjoint goes to the first cell
/// attaining that endpoint.
fn union_term(
    results: &mut [CellResult],
    want_grad: bool,
    build: &(dyn Fn(usize) -> Result<CellStage, BoundError> + Sync),
) -> Result<f64, String> {
    let hulls: Vec<&IntervalMatrix> = results.iter().map(|r| r.hull.as_ref().expect("hull")).collect();
    let mut union = hulls[0].clone();
    for h in &hulls[1..] {
        union = union.hull(h).map_err(|e| e.to_string())?;
    }
    let corner = rohn_max_mu2_pruned(&union).map_err(|e| e.to_string())?;
    if !(want_grad && corner.value > 0.0) {
        return Ok(corner.value.max(0.0));
    }
    let n = union.rows();
    let seed = corner_adjoint(n, &corner, 1.0, 1.0);
    let mut cell_seeds: Vec<Option<Adjoint>> = vec![None; results.len()];
    for (k, (dlo, dhi)) in seed.iter().enumerate() {
        let target = union.as_slice()[k];
        let lo_owner = hulls.iter().position(|h| h.as_slice()[k].lo() == target.lo()).expect("lo owner");
        let hi_owner = hulls.iter().position(|h| h.as_slice()[k].hi() == target.hi()).expect("hi owner");
        cell_seeds[lo_owner].get_or_insert_with(|| vec![(0.0, 0.0); n * n])[k].0 += dlo;
        cell_seeds[hi_owner].get_or_insert_with(|| vec![(0.0, 0.0); n * n])[k].1 += dhi;
    }
    let grads: Vec<Result<Option<CellGrads>, String>> = cell_seeds
        .into_par_iter()
        .enumerate()
        .map(|(idx, seed)| match seed {
            None => Ok(None),
            Some(seed) => Ok(Some(seeded_backward(&build(idx).map_err(|e| e.to_string())?, seed))),
        })
        .collect();
    for (r, g) in results.iter_mut().zip(grads) {
        r.grads = g?;
    }
    Ok(corner.value)
}

fn add_into(acc: &mut Adjoint, src: &Adjoint) {
    for (a, b) in acc.iter_mut().zip(src) {
        a.0 += b.0;
        a.1 += b.1;
    }
}

/// Certified loss over a region.
pub fn loss(problem: &ContractionProblem, region: &Region, agg: Aggregation) -> LossEval {
    evaluate(problem, region, agg, false)
}

/// Certified loss and its gradient with respect to all parameters.
pub fn loss_gradient(problem: &ContractionProblem, region: &Region, agg: Aggregation) -> LossEval {
    evaluate(problem, region, agg, true)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        AdamW {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

impl AdamW {
    /// One decoupled-weight-decay Adam step; decay only where `decay` is set.
    pub fn step(&self, state: &mut AdamState, params: &mut [f64], grad: &[f64], decay: &[bool]) {
        state.t += 1;
        let t = state.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grad[i];
            state.m[i] = self.beta1 * state.m[i] + (1.0 - self.beta1) * g;
            state.v[i] = self.beta2 * state.v[i] + (1.0 - self.beta2) * g * g;
            let mhat = state.m[i] / c1;
            let vhat = state.v[i] / c2;
            let mut upd = mhat / (vhat.sqrt() + self.eps);
            if decay[i] {
                upd += self.weight_decay * params[i];
            }
            params[i] -= self.lr * upd;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurriculumConfig {
    /// First region index (region = (n/100)·X).
    pub start: u32,
    /// Last region index; 100 is the full region.
    pub target: u32,
    /// Increment of `n` on every advance.
    pub increment: u32,
    /// Optimizer step budget over the whole run.
    pub max_steps: u64,
    /// Optional wall-clock budget in seconds.
    pub max_seconds: Option<f64>,
    pub aggregation: Aggregation,
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        CurriculumConfig {
            start: 1,
            target: 100,
            increment: 1,
            max_steps: 2000,
            max_seconds: None,
            aggregation: Aggregation::Mean,
        }
    }
}

/// One row of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: u64,
    pub stage: u32,
    pub loss: f64,
    pub lambda: f64,
    pub a_hat: f64,
    pub b_hat: f64,
}

pub const LOG_HEADER: &str = "step,n,loss,lambda,a_hat,b_hat";

impl LogRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{:e},{:e},{:e},{:e}",
            self.step, self.stage, self.loss, self.lambda, self.a_hat, self.b_hat
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub params: Vec<f64>,
    pub adam: AdamState,
    /// Current region index `n`.
    pub stage: u32,
    /// Largest `n` whose region reached zero loss.
    pub certified_stage: Option<u32>,
    pub step: u64,
    pub history: Vec<LogRow>,
    /// Seconds since the start of the run for each history row. Kept apart
    /// from `history` so the log itself is reproducible.
    pub elapsed: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainStatus {
    Certified,
    BudgetExhausted,
    FinalCheckFailed,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub status: TrainStatus,
    pub state: TrainState,
    /// Problem at the best parameters (last zero-loss stage, or the latest
    /// iterate if no stage reached zero loss).
    pub problem: ContractionProblem,
    /// Certificate for the target region when training reached it.
    pub certificate: Option<Certificate>,
}

pub fn stage_region(full: &Region, stage: u32) -> Region {
    full.scaled(stage as f64 / 100.0)
}

/// Events reported to the caller during training.
pub enum TrainEvent<'a> {
    /// Loss reached zero on the region of `stage`; parameters are a
    /// checkpoint candidate.
    Advanced {
        stage: u32,
        state: &'a TrainState,
        problem: &'a ContractionProblem,
    },
    Logged(&'a LogRow),
}

/// Runs AdamW on the certified loss over `(n/100)·X`, advancing `n` every
/// time the loss reaches zero, until `n = target` certifies or a budget runs
/// out.
pub fn train_curriculum(
    mut problem: ContractionProblem,
    full_region: &Region,
    opt: &AdamW,
    cfg: &CurriculumConfig,
    mut on_event: impl FnMut(TrainEvent<'_>),
) -> TrainOutcome {
    let start = Instant::now();
    let mask = problem.residual_mask();
    let mut state = TrainState {
        params: problem.params(),
        adam: AdamState::new(problem.num_params()),
        stage: cfg.start.clamp(1, cfg.target.max(1)),
        certified_stage: None,
        step: 0,
        history: Vec::new(),
        elapsed: Vec::new(),
    };
    let mut best = problem.clone();
    loop {
        let region = stage_region(full_region, state.stage);
        let eval = loss_gradient(&problem, &region, cfg.aggregation);
        let row = LogRow {
            step: state.step,
            stage: state.stage,
            loss: eval.value,
            lambda: eval.parts.lambda_max,
            a_hat: eval.parts.a_hat,
            b_hat: eval.parts.b_hat,
        };
        state.history.push(row.clone());
        state.elapsed.push(start.elapsed().as_secs_f64());
        on_event(TrainEvent::Logged(&row));
        if eval.value <= 0.0 && eval.diagnostic.is_none() {
            state.certified_stage = Some(state.stage);
            best = problem.clone();
            on_event(TrainEvent::Advanced {
                stage: state.stage,
                state: &state,
                problem: &problem,
            });
            if state.stage >= cfg.target {
                let cert = certify_region(&problem, &stage_region(full_region, cfg.target));
                let status = if cert.verdict == Verdict::Certified {
                    TrainStatus::Certified
                } else {
                    TrainStatus::FinalCheckFailed
                };
                return TrainOutcome {
                    status,
                    state,
                    problem,
                    certificate: Some(cert),
                };
            }
            state.stage = (state.stage + cfg.increment.max(1)).min(cfg.target);
            continue;
        }
        let out_of_time = cfg
            .max_seconds
            .is_some_and(|s| start.elapsed().as_secs_f64() >= s);
        if state.step >= cfg.max_steps || out_of_time {
            if state.certified_stage.is_none() {
                best = problem;
            }
            return TrainOutcome {
                status: TrainStatus::BudgetExhausted,
                state,
                problem: best,
                certificate: None,
            };
        }
        let grad = eval.gradient.expect("gradient requested");
        opt.step(&mut state.adam, &mut state.params, &grad, &mask);
        problem.set_params(&state.params);
        state.step += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boundprop::tests::perturbed_problem;
    use crate::interval::Interval;
    use crate::linalg::Matrix;
    use crate::systems::{benchmark_system, ControlAffineSystem};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn expanding_scalar_has_unit_lambda() {
        let mut p = perturbed_problem("scalar_linear", 1, 0.0);
        // ẋ = −x + 2x = x with Θ = 1, c = 0
        p.policy.gain = Matrix::from_vec(1, 1, vec![2.0]);
        p.metric.warm_start = Matrix::from_vec(1, 1, vec![1.0]);
        p.hyper = Hyper {
            a: 0.5,
            b: 2.0,
            c: 0.0,
        };
        let region = Region::whole(vec![Interval::new(-1.0, 1.0).unwrap()]);
        let l = loss(&p, &region, Aggregation::Mean);
        assert!((l.parts.lambda_max - 1.0).abs() < 1e-12);
        assert!(l.value >= 1.0);
    }

    #[test]
    fn flat_region_has_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let sys = benchmark_system("planar_nonlinear").unwrap();
        let hyper = Hyper {
            a: 0.01,
            b: 100.0,
            c: 0.01,
        };
        let p = ContractionProblem::warm_started(sys, hyper, &WarmStart::default(), &mut rng).unwrap();
        let region = Region::whole(vec![Interval::new(-0.01, 0.01).unwrap(); 2]);
        let l = loss_gradient(&p, &region, Aggregation::Mean);
        assert_eq!(l.value, 0.0);
        assert!(l.gradient.unwrap().iter().all(|&g| g == 0.0));
    }

    fn fd_check(p: &ContractionProblem, region: &Region, agg: Aggregation, seed: u64) {
        let l = loss_gradient(p, region, agg);
        let g = l.gradient.unwrap();
        let base = p.params();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = 1e-6;
        let mut checked = 0;
        for _ in 0..40 {
            let i = rng.gen_range(0..base.len());
            let eval = |d: f64| {
                let mut q = p.clone();
                let mut v = base.clone();
                v[i] += d;
                q.set_params(&v);
                loss(&q, region, agg).value
            };
            let (fp, f0, fm) = (eval(h), l.value, eval(-h));
            let fwd = (fp - f0) / h;
            let bwd = (f0 - fm) / h;
            let scale = g[i].abs().max(fwd.abs()).max(1e-6);
            if (fwd - bwd).abs() > 1e-3 * scale {
                continue; // a selection switches within h
            }
            let fd = (fp - fm) / (2.0 * h);
            let scale = g[i].abs().max(fd.abs()).max(1e-6);
            assert!((g[i] - fd).abs() <= 1e-4 * scale, "coord {i}: {} vs fd {}", g[i], fd);
            checked += 1;
        }
        assert!(checked >= 20, "only {checked} smooth coordinates");
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut p = perturbed_problem("planar_nonlinear", 3, 0.3);
        let region = Region::new(p.system.default_region(), vec![2, 2]).unwrap().scaled(0.5);
        let probe = loss(&p, &region, Aggregation::Mean);
        // activate both metric hinges
        p.hyper.a = probe.parts.a_hat + 0.3;
        p.hyper.b = probe.parts.b_hat - 0.3;
        fd_check(&p, &region, Aggregation::Mean, 4);
        fd_check(&p, &region, Aggregation::Max, 5);
        fd_check(&p, &region, Aggregation::Union, 6);
    }

    #[test]
    fn adamw_decays_only_masked() {
        let opt = AdamW {
            lr: 0.1,
            weight_decay: 0.5,
            ..AdamW::default()
        };
        let mut st = AdamState::new(2);
        let mut p = vec![1.0, 1.0];
        opt.step(&mut st, &mut p, &[0.0, 0.0], &[true, false]);
        assert!((p[0] - (1.0 - 0.1 * 0.5)).abs() < 1e-15);
        assert_eq!(p[1], 1.0);
        let mut st = AdamState::new(1);
        let mut q = vec![0.0];
        opt.step(&mut st, &mut q, &[3.0], &[false]);
        // first step moves by lr regardless of gradient scale
        assert!((q[0] + 0.1).abs() < 1e-6);
    }

    #[test]
    fn scalar_curriculum_certifies() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let sys = benchmark_system("scalar_linear").unwrap();
        let hyper = Hyper {
            a: 0.1,
            b: 10.0,
            c: 0.5,
        };
        let ws = WarmStart {
            policy_hidden: vec![8],
            metric_hidden: vec![8],
            ..WarmStart::default()
        };
        let p = ContractionProblem::warm_started(sys, hyper, &ws, &mut rng).unwrap();
        let region = Region::new(p.system.default_region(), vec![4]).unwrap();
        let cfg = CurriculumConfig {
            start: 10,
            increment: 10,
            max_steps: 500,
            ..CurriculumConfig::default()
        };
        let out = train_curriculum(p, &region, &AdamW::default(), &cfg, |_| {});
        assert_eq!(out.status, TrainStatus::Certified);
        assert_eq!(out.certificate.unwrap().verdict, Verdict::Certified);
    }
}
