//! Interval hulls of the asymmetric contraction matrix
//! `G(x) = Θ(x)ᵀ[∂_{f_π}Θ(x) + Θ(x)(∂f_π/∂x + cI)]` and of `M(x) = Θ(x)ᵀΘ(x)`
//! over boxes, by interval bound propagation.
//!
//! All hulls are built on a [`tape::Tape`] so the training loss can
//! differentiate through the same computation. The evaluation runs in two
//! stages: the metric factor and its Jacobian depend only on the projected
//! coordinates `P x`, so they are computed once per distinct projected box
//! on a shared tape; each cell then gets its own tape that treats those
//! values as leaves.

pub mod region;
pub mod tape;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::interval::{Interval, IntervalMatrix};
use crate::linalg::Matrix;
use crate::nets::{packed_len, MetricNet, MlpParams};
use crate::problem::ContractionProblem;
use crate::systems::ControlAffineSystem;
pub use region::Region;
use tape::{Adjoint, NodeId, Tape};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoundError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite {quantity} hull in cell {cell}")]
    NonFinite { cell: usize, quantity: &'static str },
}

/// Bound propagation method used to produce a hull.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Propagator {
    Ibp,
}

impl Propagator {
    pub fn tag(&self) -> &'static str {
        match self {
            Propagator::Ibp => "ibp",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellHull {
    pub g: IntervalMatrix,
    pub m: IntervalMatrix,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HullReport {
    pub g_hull: IntervalMatrix,
    pub m_hull: IntervalMatrix,
    pub cells: Vec<CellHull>,
    pub propagator: Propagator,
}

fn column(v: &[Interval]) -> IntervalMatrix {
    IntervalMatrix::column(v)
}

fn check_dim(what: &str, got: usize, want: usize) -> Result<(), BoundError> {
    if got != want {
        return Err(BoundError::Dimension(format!("{what}: expected {want}, got {got}")));
    }
    Ok(())
}

/// Leaves for the weights and biases of one network, in flattening order.
pub(crate) struct MlpLeaves {
    pub layers: Vec<(NodeId, NodeId)>,
}

impl MlpLeaves {
    pub fn new(tape: &mut Tape, net: &MlpParams) -> Self {
        let layers = net
            .layers()
            .iter()
            .map(|l| {
                let w = tape.leaf(IntervalMatrix::point(&l.weight));
                let b = tape.leaf(IntervalMatrix::point(&Matrix::column(&l.bias)));
                (w, b)
            })
            .collect();
        MlpLeaves { layers }
    }

    /// Appends `∂L/∂θ` for every parameter, in flattening order.
    pub fn gradient(&self, adj: &[Option<Adjoint>], tape: &Tape, out: &mut Vec<f64>) {
        for &(w, b) in &self.layers {
            leaf_gradient(adj, tape, w, out);
            leaf_gradient(adj, tape, b, out);
        }
    }
}

/// Gradient of a degenerate leaf: both bounds move with the parameter.
pub(crate) fn leaf_gradient(adj: &[Option<Adjoint>], tape: &Tape, id: NodeId, out: &mut Vec<f64>) {
    match &adj[id] {
        Some(g) => out.extend(g.iter().map(|(l, h)| l + h)),
        None => out.extend(std::iter::repeat(0.0).take(tape.value(id).as_slice().len())),
    }
}

/// Output hull node and, when requested, the Jacobian hull node.
pub(crate) fn mlp_apply(
    tape: &mut Tape,
    leaves: &MlpLeaves,
    input: NodeId,
    want_jacobian: bool,
) -> (NodeId, Option<NodeId>) {
    let depth = leaves.layers.len();
    let mut h = input;
    let mut slopes = Vec::with_capacity(depth.saturating_sub(1));
    for (i, &(w, b)) in leaves.layers.iter().enumerate() {
        let z = tape.matmul(w, h);
        let z = tape.add(z, b);
        if i + 1 < depth {
            slopes.push(tape.sigmoid(z));
            h = tape.softplus(z);
        } else {
            h = z;
        }
    }
    if !want_jacobian {
        return (h, None);
    }
    let weights: Vec<NodeId> = leaves.layers.iter().map(|l| l.0).collect();
    let out_dim = tape.value(weights[depth - 1]).rows();
    let in_dim = tape.value(weights[0]).cols();
    // multiply from the narrow end
    let jac = if out_dim <= in_dim {
        let mut t = weights[depth - 1];
        for i in (0..depth - 1).rev() {
            t = tape.scale_cols(t, slopes[i]);
            t = tape.matmul(t, weights[i]);
        }
        t
    } else {
        let mut t = weights[0];
        for i in 0..depth - 1 {
            t = tape.scale_rows(slopes[i], t);
            t = tape.matmul(weights[i + 1], t);
        }
        t
    };
    (h, Some(jac))
}

/// Metric factor hulls for one projected box.
#[derive(Clone, Copy, Debug)]
pub(crate) struct MetricGroup {
    pub theta: NodeId,
    /// Jacobian of the packed residual output w.r.t. the projected input.
    pub jacobian: NodeId,
    pub metric: NodeId,
}

/// Shared tape for every distinct projected box of a region.
pub(crate) struct MetricStage {
    pub tape: Tape,
    pub warm_start: NodeId,
    pub residual: MlpLeaves,
    pub groups: Vec<MetricGroup>,
    /// Entrywise union of the group metric hulls.
    pub metric_union: NodeId,
}

impl MetricStage {
    pub fn build(metric: &MetricNet, projected: &[Vec<Interval>]) -> Result<Self, BoundError> {
        assert!(!projected.is_empty(), "no projected boxes");
        let n = metric.state_dim();
        let mut tape = Tape::new();
        let packed_u = crate::nets::pack_upper(&metric.warm_start);
        let warm_start = tape.leaf(IntervalMatrix::point(&Matrix::column(&packed_u)));
        let residual = MlpLeaves::new(&mut tape, &metric.residual);
        let mut groups = Vec::with_capacity(projected.len());
        for pbox in projected {
            check_dim("projected box", pbox.len(), metric.residual.input_dim())?;
            let input = tape.leaf(column(pbox));
            let (out, jac) = mlp_apply(&mut tape, &residual, input, true);
            let packed = tape.add(warm_start, out);
            let theta = tape.unpack_upper(packed, n);
            let m = tape.gram(theta);
            groups.push(MetricGroup {
                theta,
                jacobian: jac.expect("requested"),
                metric: m,
            });
        }
        let parts: Vec<NodeId> = groups.iter().map(|g| g.metric).collect();
        let metric_union = tape.union(&parts);
        Ok(MetricStage {
            tape,
            warm_start,
            residual,
            groups,
            metric_union,
        })
    }

    pub fn gradient(&self, adj: &[Option<Adjoint>]) -> Vec<f64> {
        let mut out = Vec::new();
        leaf_gradient(adj, &self.tape, self.warm_start, &mut out);
        self.residual.gradient(adj, &self.tape, &mut out);
        out
    }
}

/// Per-cell tape producing the hull of `G`.
pub(crate) struct CellStage {
    pub tape: Tape,
    pub theta: NodeId,
    pub jacobian: NodeId,
    pub gain: NodeId,
    pub residual: MlpLeaves,
    pub g: NodeId,
}

impl CellStage {
    pub fn build(
        problem: &ContractionProblem,
        cell: &[Interval],
        theta: &IntervalMatrix,
        metric_jacobian: &IntervalMatrix,
    ) -> Result<Self, BoundError> {
        let sys = &problem.system;
        let n = sys.state_dim();
        check_dim("cell", cell.len(), n)?;
        let policy = &problem.policy;
        let mut tape = Tape::new();
        let theta = tape.leaf(theta.clone());
        let jacobian = tape.leaf(metric_jacobian.clone());
        let gain = tape.leaf(IntervalMatrix::point(&policy.gain));
        let residual = MlpLeaves::new(&mut tape, &policy.residual);

        let offset: Vec<Interval> = cell
            .iter()
            .zip(&policy.x_eq)
            .map(|(x, e)| x.add_scalar(-e))
            .collect();
        let offset = tape.leaf(column(&offset));
        let x = tape.leaf(column(cell));
        let u_eq = tape.leaf(IntervalMatrix::point(&Matrix::column(&policy.u_eq)));
        let input_matrix = tape.leaf(IntervalMatrix::point(sys.input_matrix()));
        let drift = tape.leaf(column(&sys.drift_hull(cell)));
        let drift_jac = tape.leaf(sys.drift_jacobian_hull(cell));
        let projection = tape.leaf(IntervalMatrix::point(&problem.metric.projection));

        // π = K(x − x_eq) + u_eq + π_res(x)
        let (res_out, res_jac) = mlp_apply(&mut tape, &residual, x, true);
        let lin = tape.matmul(gain, offset);
        let u = tape.add(lin, u_eq);
        let u = tape.add(u, res_out);
        // f_π = f_d + B π,  ∂f_π/∂x = ∂f_d/∂x + B (K + ∂π_res/∂x)
        let bu = tape.matmul(input_matrix, u);
        let f = tape.add(drift, bu);
        let dpi = tape.add(gain, res_jac.expect("requested"));
        let bdpi = tape.matmul(input_matrix, dpi);
        let jf = tape.add(drift_jac, bdpi);
        // ∂_f Θ = unpack(J_res · P f)
        let pf = tape.matmul(projection, f);
        let dtheta = tape.matmul(jacobian, pf);
        let dtheta = tape.unpack_upper(dtheta, n);
        // G = Θᵀ [∂_f Θ + Θ (∂f_π/∂x + cI)]
        let shifted = tape.add_diag(jf, problem.hyper.c);
        let tj = tape.matmul(theta, shifted);
        let inner = tape.add(dtheta, tj);
        let theta_t = tape.transpose(theta);
        let g = tape.matmul(theta_t, inner);
        Ok(CellStage {
            tape,
            theta,
            jacobian,
            gain,
            residual,
            g,
        })
    }

    pub fn g(&self) -> &IntervalMatrix {
        self.tape.value(self.g)
    }

    /// Policy gradient (gain then residual) from a backward pass.
    pub fn policy_gradient(&self, adj: &[Option<Adjoint>]) -> Vec<f64> {
        let mut out = Vec::new();
        leaf_gradient(adj, &self.tape, self.gain, &mut out);
        self.residual.gradient(adj, &self.tape, &mut out);
        out
    }
}

fn projected_box(metric: &MetricNet, cell: &[Interval]) -> Vec<Interval> {
    IntervalMatrix::point(&metric.projection)
        .matmul(&column(cell))
        .expect("projection shape")
        .as_slice()
        .to_vec()
}

/// Region evaluation plan: distinct projected boxes and the group of each cell.
pub(crate) struct RegionPlan {
    pub cells: Vec<Vec<Interval>>,
    pub cell_group: Vec<usize>,
    pub projected: Vec<Vec<Interval>>,
}

impl RegionPlan {
    pub fn new(metric: &MetricNet, region: &Region) -> Result<Self, BoundError> {
        check_dim("region", region.dim(), metric.state_dim())?;
        let cells = region.cells();
        let mut projected: Vec<Vec<Interval>> = Vec::new();
        let mut cell_group = Vec::with_capacity(cells.len());
        for cell in &cells {
            let pb = projected_box(metric, cell);
            let key = |b: &[Interval]| -> Vec<(u64, u64)> {
                b.iter().map(|x| (x.lo().to_bits(), x.hi().to_bits())).collect()
            };
            let k = key(&pb);
            let g = match projected.iter().position(|p| key(p) == k) {
                Some(g) => g,
                None => {
                    projected.push(pb);
                    projected.len() - 1
                }
            };
            cell_group.push(g);
        }
        Ok(RegionPlan {
            cells,
            cell_group,
            projected,
        })
    }
}

/// Hull of an MLP's outputs over a box.
pub fn hull_mlp_output(net: &MlpParams, cell: &[Interval]) -> Result<Vec<Interval>, BoundError> {
    check_dim("network input", cell.len(), net.input_dim())?;
    let mut tape = Tape::new();
    let leaves = MlpLeaves::new(&mut tape, net);
    let x = tape.leaf(column(cell));
    let (out, _) = mlp_apply(&mut tape, &leaves, x, false);
    Ok(tape.value(out).as_slice().to_vec())
}

/// Hull of an MLP's Jacobian over a box.
pub fn hull_mlp_jacobian(net: &MlpParams, cell: &[Interval]) -> Result<IntervalMatrix, BoundError> {
    check_dim("network input", cell.len(), net.input_dim())?;
    let mut tape = Tape::new();
    let leaves = MlpLeaves::new(&mut tape, net);
    let x = tape.leaf(column(cell));
    let (_, jac) = mlp_apply(&mut tape, &leaves, x, true);
    Ok(tape.value(jac.expect("requested")).clone())
}

/// Hull of `Σ_i ∂Θ/∂x_i (x) v_i` over `x ∈ cell`, `v ∈ v_hull`: the packed
/// Jacobian hull is contracted with the projected `v_hull`.
pub fn hull_directional_derivative(
    metric: &MetricNet,
    cell: &[Interval],
    v_hull: &[Interval],
) -> Result<IntervalMatrix, BoundError> {
    let n = metric.state_dim();
    check_dim("cell", cell.len(), n)?;
    check_dim("direction", v_hull.len(), n)?;
    let stage = MetricStage::build(metric, &[projected_box(metric, cell)])?;
    let jac = stage.tape.value(stage.groups[0].jacobian);
    let pv = IntervalMatrix::point(&metric.projection)
        .matmul(&column(v_hull))
        .expect("projection shape");
    let d = jac.matmul(&pv).expect("jacobian shape");
    Ok(unpack(d.as_slice(), n))
}

fn unpack(packed: &[Interval], n: usize) -> IntervalMatrix {
    debug_assert_eq!(packed.len(), packed_len(n));
    let mut out = IntervalMatrix::zeros(n, n);
    let mut k = 0;
    for i in 0..n {
        for j in i..n {
            out.set(i, j, packed[k]);
            k += 1;
        }
    }
    out
}

/// Hull of `M(x) = Θ(x)ᵀΘ(x)` over a box.
pub fn hull_m(metric: &MetricNet, cell: &[Interval]) -> Result<IntervalMatrix, BoundError> {
    check_dim("cell", cell.len(), metric.state_dim())?;
    let stage = MetricStage::build(metric, &[projected_box(metric, cell)])?;
    let m = stage.tape.value(stage.groups[0].metric).clone();
    if !m.is_finite() {
        return Err(BoundError::NonFinite {
            cell: 0,
            quantity: "metric",
        });
    }
    Ok(m)
}

/// Hull of the asymmetric contraction matrix over a box.
pub fn hull_g(problem: &ContractionProblem, cell: &[Interval]) -> Result<IntervalMatrix, BoundError> {
    hull_over_region(problem, &Region::whole(cell.to_vec())).map(|r| r.g_hull)
}

/// Per-cell hulls of `G` and `M` plus their entrywise unions. Cells are
/// evaluated in parallel; results are collected in cell order.
pub fn hull_over_region(
    problem: &ContractionProblem,
    region: &Region,
) -> Result<HullReport, BoundError> {
    let plan = RegionPlan::new(&problem.metric, region)?;
    let stage = MetricStage::build(&problem.metric, &plan.projected)?;
    let cells: Vec<Result<CellHull, BoundError>> = plan
        .cells
        .par_iter()
        .enumerate()
        .map(|(idx, cell)| {
            let group = stage.groups[plan.cell_group[idx]];
            let cs = CellStage::build(
                problem,
                cell,
                stage.tape.value(group.theta),
                stage.tape.value(group.jacobian),
            )?;
            let g = cs.g().clone();
            let m = stage.tape.value(group.metric).clone();
            if !g.is_finite() {
                return Err(BoundError::NonFinite {
                    cell: idx,
                    quantity: "contraction matrix",
                });
            }
            if !m.is_finite() {
                return Err(BoundError::NonFinite {
                    cell: idx,
                    quantity: "metric",
                });
            }
            Ok(CellHull { g, m })
        })
        .collect();
    let cells: Vec<CellHull> = cells.into_iter().collect::<Result<_, _>>()?;
    let mut g_hull = cells[0].g.clone();
    let mut m_hull = cells[0].m.clone();
    for c in &cells[1..] {
        g_hull = g_hull.hull(&c.g).expect("shape");
        m_hull = m_hull.hull(&c.m).expect("shape");
    }
    Ok(HullReport {
        g_hull,
        m_hull,
        cells,
        propagator: Propagator::Ibp,
    })
}

/// `Θᵀ[Θ̇ + Θ(J + cI)]` for interval factors, the bracket summed first.
pub fn assemble_g_hull(
    theta: &IntervalMatrix,
    theta_dot: &IntervalMatrix,
    jacobian: &IntervalMatrix,
    rate: f64,
) -> Result<IntervalMatrix, BoundError> {
    let dim = |e: crate::interval::IntervalError| BoundError::Dimension(e.to_string());
    let inner = theta.matmul(&jacobian.add_diag(rate)).map_err(dim)?;
    let inner = theta_dot.add(&inner).map_err(dim)?;
    theta.transpose().matmul(&inner).map_err(dim)
}

/// `MJ + JᵀM + Θ̇ᵀΘ + ΘᵀΘ̇ + 2cM` with `M = ΘᵀΘ`, every occurrence bounded
/// independently.
pub fn assemble_s_hull(
    theta: &IntervalMatrix,
    theta_dot: &IntervalMatrix,
    jacobian: &IntervalMatrix,
    rate: f64,
) -> Result<IntervalMatrix, BoundError> {
    let dim = |e: crate::interval::IntervalError| BoundError::Dimension(e.to_string());
    let tt = theta.transpose();
    let m = tt.matmul(theta).map_err(dim)?;
    let mj = m.matmul(jacobian).map_err(dim)?;
    let jm = jacobian.transpose().matmul(&m).map_err(dim)?;
    let dt = theta_dot.transpose().matmul(theta).map_err(dim)?;
    let td = tt.matmul(theta_dot).map_err(dim)?;
    mj.add(&jm)
        .and_then(|s| s.add(&dt))
        .and_then(|s| s.add(&td))
        .and_then(|s| s.add(&m.scale(2.0 * rate)))
        .map_err(dim)
}
