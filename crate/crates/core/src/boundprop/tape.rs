//! Reverse-mode tape whose nodes are interval matrices.
//!
//! Each interval bound is a piecewise-smooth function of the leaves: the
//! endpoint selections (corner products, monotone images, unions) are fixed
//! by the forward pass and the backward pass differentiates through the
//! selected branch. Adjoints are carried separately for lower and upper
//! bounds; a degenerate leaf (a real parameter) receives `d lo + d hi`.

use crate::interval::{mul_select, sigmoid, Interval, IntervalMatrix};

pub type NodeId = usize;

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    AddDiag(NodeId),
    Transpose(NodeId),
    Softplus(NodeId),
    Sigmoid(NodeId),
    /// `diag(d) · M`, `d` a column vector.
    ScaleRows(NodeId, NodeId),
    /// `M · diag(d)`, `d` a column vector.
    ScaleCols(NodeId, NodeId),
    /// Row-major upper packing to an `n × n` upper-triangular matrix.
    UnpackUpper(NodeId),
    /// `AᵀA` with squared diagonal terms.
    Gram(NodeId),
    /// Entrywise union hull.
    Union(Vec<NodeId>),
}

struct Node {
    value: IntervalMatrix,
    op: Op,
}

/// Adjoint of one node: `(∂L/∂lo, ∂L/∂hi)` per entry.
pub type Adjoint = Vec<(f64, f64)>;

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn corner_operands(x: Interval, y: Interval, c: u8) -> (f64, f64) {
    let a = if c >> 1 == 0 { x.lo() } else { x.hi() };
    let b = if c & 1 == 0 { y.lo() } else { y.hi() };
    (a, b)
}

/// Adds `g * ∂(corner product)` into the adjoints of the operands.
#[inline]
fn push_corner(
    g: f64,
    c: u8,
    x: Interval,
    y: Interval,
    gx: &mut (f64, f64),
    gy: &mut (f64, f64),
) {
    if g == 0.0 {
        return;
    }
    let (a, b) = corner_operands(x, y, c);
    if c >> 1 == 0 {
        gx.0 += g * b;
    } else {
        gx.1 += g * b;
    }
    if c & 1 == 0 {
        gy.0 += g * a;
    } else {
        gy.1 += g * a;
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &IntervalMatrix {
        &self.nodes[id].value
    }

    fn push(&mut self, value: IntervalMatrix, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        self.nodes.len() - 1
    }

    pub fn leaf(&mut self, value: IntervalMatrix) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).matmul(self.value(b)).expect("tape matmul shape");
        self.push(v, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).add(self.value(b)).expect("tape add shape");
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).sub(self.value(b)).expect("tape sub shape");
        self.push(v, Op::Sub(a, b))
    }

    pub fn add_diag(&mut self, a: NodeId, k: f64) -> NodeId {
        let v = self.value(a).add_diag(k);
        self.push(v, Op::AddDiag(a))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).transpose();
        self.push(v, Op::Transpose(a))
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        let src = self.value(a);
        let data = src.as_slice().iter().map(|x| x.softplus()).collect();
        let v = IntervalMatrix::new(src.rows(), src.cols(), data).unwrap();
        self.push(v, Op::Softplus(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let src = self.value(a);
        let data = src.as_slice().iter().map(|x| x.sigmoid()).collect();
        let v = IntervalMatrix::new(src.rows(), src.cols(), data).unwrap();
        self.push(v, Op::Sigmoid(a))
    }

    pub fn scale_rows(&mut self, d: NodeId, m: NodeId) -> NodeId {
        let (dv, mv) = (self.value(d), self.value(m));
        assert!(dv.cols() == 1 && dv.rows() == mv.rows(), "scale_rows shape");
        let mut out = IntervalMatrix::zeros(mv.rows(), mv.cols());
        for i in 0..mv.rows() {
            let di = dv.get(i, 0);
            for j in 0..mv.cols() {
                out.set(i, j, di * mv.get(i, j));
            }
        }
        self.push(out, Op::ScaleRows(d, m))
    }

    pub fn scale_cols(&mut self, m: NodeId, d: NodeId) -> NodeId {
        let (mv, dv) = (self.value(m), self.value(d));
        assert!(dv.cols() == 1 && dv.rows() == mv.cols(), "scale_cols shape");
        let mut out = IntervalMatrix::zeros(mv.rows(), mv.cols());
        for i in 0..mv.rows() {
            for j in 0..mv.cols() {
                out.set(i, j, mv.get(i, j) * dv.get(j, 0));
            }
        }
        self.push(out, Op::ScaleCols(m, d))
    }

    pub fn unpack_upper(&mut self, packed: NodeId, n: usize) -> NodeId {
        let pv = self.value(packed);
        assert!(pv.cols() == 1 && pv.rows() == n * (n + 1) / 2, "unpack shape");
        let mut out = IntervalMatrix::zeros(n, n);
        let mut k = 0;
        for i in 0..n {
            for j in i..n {
                out.set(i, j, pv.get(k, 0));
                k += 1;
            }
        }
        self.push(out, Op::UnpackUpper(packed))
    }

    pub fn gram(&mut self, a: NodeId) -> NodeId {
        let av = self.value(a);
        let (r, n) = av.shape();
        let mut out = IntervalMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let (mut lo, mut hi) = (0.0, 0.0);
                for k in 0..r {
                    if i == j {
                        let s = av.get(k, i).square();
                        lo += s.lo();
                        hi += s.hi();
                    } else {
                        let (l, _, h, _) = mul_select(av.get(k, i), av.get(k, j));
                        lo += l;
                        hi += h;
                    }
                }
                out.set(i, j, Interval::rounded(lo, hi));
            }
        }
        self.push(out, Op::Gram(a))
    }

    pub fn union(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty(), "empty union");
        let mut v = self.value(parts[0]).clone();
        for &p in &parts[1..] {
            v = v.hull(self.value(p)).expect("union shape");
        }
        self.push(v, Op::Union(parts.to_vec()))
    }

    /// Runs the backward pass from the given output adjoints and returns the
    /// adjoints of every node (`None` for nodes that received no signal).
    pub fn backward(&self, seeds: &[(NodeId, Adjoint)]) -> Vec<Option<Adjoint>> {
        let mut adj: Vec<Option<Adjoint>> = vec![None; self.nodes.len()];
        let mut last = 0;
        for (id, g) in seeds {
            assert_eq!(g.len(), self.value(*id).as_slice().len(), "seed shape");
            accumulate(&mut adj, *id, g);
            last = last.max(*id);
        }
        for id in (0..=last.min(self.nodes.len().saturating_sub(1))).rev() {
            let Some(g) = adj[id].take() else { continue };
            self.propagate(id, &g, &mut adj);
            adj[id] = Some(g);
        }
        adj
    }

    fn propagate(&self, id: NodeId, g: &Adjoint, adj: &mut [Option<Adjoint>]) {
        let node = &self.nodes[id];
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                accumulate(adj, *a, g);
                accumulate(adj, *b, g);
            }
            Op::Sub(a, b) => {
                accumulate(adj, *a, g);
                let neg: Adjoint = g.iter().map(|&(l, h)| (-h, -l)).collect();
                accumulate(adj, *b, &neg);
            }
            Op::AddDiag(a) => accumulate(adj, *a, g),
            Op::Transpose(a) => {
                let (r, c) = node.value.shape();
                let mut t = vec![(0.0, 0.0); r * c];
                for i in 0..r {
                    for j in 0..c {
                        t[j * r + i] = g[i * c + j];
                    }
                }
                accumulate(adj, *a, &t);
            }
            Op::Softplus(a) => {
                let src = self.value(*a).as_slice();
                let d: Adjoint = src
                    .iter()
                    .zip(g)
                    .map(|(x, &(gl, gh))| (gl * sigmoid(x.lo()), gh * sigmoid(x.hi())))
                    .collect();
                accumulate(adj, *a, &d);
            }
            Op::Sigmoid(a) => {
                let ds = |z: f64| {
                    let s = sigmoid(z);
                    s * (1.0 - s)
                };
                let src = self.value(*a).as_slice();
                let d: Adjoint = src
                    .iter()
                    .zip(g)
                    .map(|(x, &(gl, gh))| (gl * ds(x.lo()), gh * ds(x.hi())))
                    .collect();
                accumulate(adj, *a, &d);
            }
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (r, inner, c) = (av.rows(), av.cols(), bv.cols());
                let mut ga = vec![(0.0, 0.0); r * inner];
                let mut gb = vec![(0.0, 0.0); inner * c];
                for i in 0..r {
                    for j in 0..c {
                        let (gl, gh) = g[i * c + j];
                        if gl == 0.0 && gh == 0.0 {
                            continue;
                        }
                        for k in 0..inner {
                            let (x, y) = (av.get(i, k), bv.get(k, j));
                            let (_, lc, _, hc) = mul_select(x, y);
                            let (mut gx, mut gy) = (ga[i * inner + k], gb[k * c + j]);
                            push_corner(gl, lc, x, y, &mut gx, &mut gy);
                            push_corner(gh, hc, x, y, &mut gx, &mut gy);
                            ga[i * inner + k] = gx;
                            gb[k * c + j] = gy;
                        }
                    }
                }
                accumulate(adj, *a, &ga);
                accumulate(adj, *b, &gb);
            }
            Op::ScaleRows(d, m) => {
                let (dv, mv) = (self.value(*d), self.value(*m));
                let (r, c) = mv.shape();
                let mut gd = vec![(0.0, 0.0); r];
                let mut gm = vec![(0.0, 0.0); r * c];
                for i in 0..r {
                    let x = dv.get(i, 0);
                    for j in 0..c {
                        let (gl, gh) = g[i * c + j];
                        let y = mv.get(i, j);
                        let (_, lc, _, hc) = mul_select(x, y);
                        push_corner(gl, lc, x, y, &mut gd[i], &mut gm[i * c + j]);
                        push_corner(gh, hc, x, y, &mut gd[i], &mut gm[i * c + j]);
                    }
                }
                accumulate(adj, *d, &gd);
                accumulate(adj, *m, &gm);
            }
            Op::ScaleCols(m, d) => {
                let (mv, dv) = (self.value(*m), self.value(*d));
                let (r, c) = mv.shape();
                let mut gd = vec![(0.0, 0.0); c];
                let mut gm = vec![(0.0, 0.0); r * c];
                for i in 0..r {
                    for j in 0..c {
                        let (gl, gh) = g[i * c + j];
                        let (x, y) = (mv.get(i, j), dv.get(j, 0));
                        let (_, lc, _, hc) = mul_select(x, y);
                        push_corner(gl, lc, x, y, &mut gm[i * c + j], &mut gd[j]);
                        push_corner(gh, hc, x, y, &mut gm[i * c + j], &mut gd[j]);
                    }
                }
                accumulate(adj, *m, &gm);
                accumulate(adj, *d, &gd);
            }
            Op::UnpackUpper(p) => {
                let n = node.value.rows();
                let mut gp = Vec::with_capacity(n * (n + 1) / 2);
                for i in 0..n {
                    for j in i..n {
                        gp.push(g[i * n + j]);
                    }
                }
                accumulate(adj, *p, &gp);
            }
            Op::Gram(a) => {
                let av = self.value(*a);
                let (r, n) = av.shape();
                let mut ga = vec![(0.0, 0.0); r * n];
                for i in 0..n {
                    for j in 0..n {
                        let (gl, gh) = g[i * n + j];
                        if gl == 0.0 && gh == 0.0 {
                            continue;
                        }
                        for k in 0..r {
                            if i == j {
                                let x = av.get(k, i);
                                let slot = &mut ga[k * n + i];
                                square_backward(x, gl, gh, slot);
                            } else {
                                let (x, y) = (av.get(k, i), av.get(k, j));
                                let (_, lc, _, hc) = mul_select(x, y);
                                let (mut gx, mut gy) = (ga[k * n + i], ga[k * n + j]);
                                // both operands may alias the same slot only when i == j
                                push_corner(gl, lc, x, y, &mut gx, &mut gy);
                                push_corner(gh, hc, x, y, &mut gx, &mut gy);
                                ga[k * n + i] = gx;
                                ga[k * n + j] = gy;
                            }
                        }
                    }
                }
                accumulate(adj, *a, &ga);
            }
            Op::Union(parts) => {
                let len = node.value.as_slice().len();
                let mut routed: Vec<Adjoint> = vec![vec![(0.0, 0.0); len]; parts.len()];
                for e in 0..len {
                    let (gl, gh) = g[e];
                    let mut lo_src = 0;
                    let mut hi_src = 0;
                    for (p, &pid) in parts.iter().enumerate() {
                        let v = self.value(pid).as_slice()[e];
                        let best_lo = self.value(parts[lo_src]).as_slice()[e].lo();
                        let best_hi = self.value(parts[hi_src]).as_slice()[e].hi();
                        if v.lo() < best_lo {
                            lo_src = p;
                        }
                        if v.hi() > best_hi {
                            hi_src = p;
                        }
                    }
                    routed[lo_src][e].0 += gl;
                    routed[hi_src][e].1 += gh;
                }
                for (p, &pid) in parts.iter().enumerate() {
                    accumulate(adj, pid, &routed[p]);
                }
            }
        }
    }
}

fn square_backward(x: Interval, gl: f64, gh: f64, slot: &mut (f64, f64)) {
    let (l, h) = (x.lo(), x.hi());
    if l >= 0.0 {
        slot.0 += gl * 2.0 * l;
        slot.1 += gh * 2.0 * h;
    } else if h <= 0.0 {
        slot.1 += gl * 2.0 * h;
        slot.0 += gh * 2.0 * l;
    } else if l * l >= h * h {
        slot.0 += gh * 2.0 * l;
    } else {
        slot.1 += gh * 2.0 * h;
    }
}

fn accumulate(adj: &mut [Option<Adjoint>], id: NodeId, g: &[(f64, f64)]) {
    match &mut adj[id] {
        Some(acc) => {
            for (a, b) in acc.iter_mut().zip(g) {
                a.0 += b.0;
                a.1 += b.1;
            }
        }
        slot @ None => *slot = Some(g.to_vec()),
    }
}
