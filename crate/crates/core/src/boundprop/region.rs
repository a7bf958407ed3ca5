use serde::{Deserialize, Serialize};

use super::BoundError;
use crate::interval::Interval;

/// Axis-aligned box with a uniform partition grid.
///
/// Cells are numbered row-major over the multi-index, last coordinate
/// fastest. Grid edges are computed once per coordinate, so neighbouring
/// cells share bit-identical faces and the outermost edges are the box
/// bounds themselves.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub bounds: Vec<Interval>,
    pub partitions: Vec<usize>,
}

impl Region {
    pub fn new(bounds: Vec<Interval>, partitions: Vec<usize>) -> Result<Self, BoundError> {
        if bounds.len() != partitions.len() {
            return Err(BoundError::Dimension(format!(
                "region has {} coordinates but {} partition counts",
                bounds.len(),
                partitions.len()
            )));
        }
        if partitions.iter().any(|&k| k == 0) {
            return Err(BoundError::Dimension("partition counts must be positive".into()));
        }
        if bounds.iter().any(|b| !b.is_finite()) {
            return Err(BoundError::Dimension("region bounds must be finite".into()));
        }
        Ok(Region { bounds, partitions })
    }

    /// A single cell covering the box.
    pub fn whole(bounds: Vec<Interval>) -> Self {
        let k = bounds.len();
        Region {
            bounds,
            partitions: vec![1; k],
        }
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn num_cells(&self) -> usize {
        self.partitions.iter().product()
    }

    pub fn multi_index(&self, mut idx: usize) -> Vec<usize> {
        let mut out = vec![0; self.dim()];
        for d in (0..self.dim()).rev() {
            out[d] = idx % self.partitions[d];
            idx /= self.partitions[d];
        }
        out
    }

    fn edge(&self, d: usize, k: usize) -> f64 {
        let b = self.bounds[d];
        let n = self.partitions[d];
        if k == 0 {
            b.lo()
        } else if k == n {
            b.hi()
        } else {
            b.lo() + (b.hi() - b.lo()) * (k as f64 / n as f64)
        }
    }

    pub fn cell(&self, idx: usize) -> Vec<Interval> {
        assert!(idx < self.num_cells(), "cell index out of range");
        self.multi_index(idx)
            .iter()
            .enumerate()
            .map(|(d, &k)| {
                let lo = self.edge(d, k);
                let hi = self.edge(d, k + 1).max(lo);
                Interval::new(lo, hi).expect("ordered edges")
            })
            .collect()
    }

    pub fn cells(&self) -> Vec<Vec<Interval>> {
        (0..self.num_cells()).map(|i| self.cell(i)).collect()
    }

    /// Index of a cell containing `x`, or `None` outside the box.
    pub fn locate(&self, x: &[f64]) -> Option<usize> {
        let mut idx = 0;
        for d in 0..self.dim() {
            let b = self.bounds[d];
            if !b.contains(x[d]) {
                return None;
            }
            let n = self.partitions[d];
            let mut k = if b.width() > 0.0 {
                (((x[d] - b.lo()) / b.width()) * n as f64).floor() as usize
            } else {
                0
            };
            k = k.min(n - 1);
            // float rounding can land one cell off near an edge
            while k > 0 && x[d] < self.edge(d, k) {
                k -= 1;
            }
            while k + 1 < n && x[d] > self.edge(d, k + 1) {
                k += 1;
            }
            idx = idx * n + k;
        }
        Some(idx)
    }

    /// Box with every radius multiplied by `factor` about the box center.
    pub fn scaled(&self, factor: f64) -> Region {
        let bounds = self
            .bounds
            .iter()
            .map(|b| {
                let (c, r) = (b.center(), b.radius() * factor);
                Interval::new(c - r, c + r).expect("nonnegative factor")
            })
            .collect();
        Region {
            bounds,
            partitions: self.partitions.clone(),
        }
    }

    /// Same box with every partition count multiplied by `k`.
    pub fn refined(&self, k: usize) -> Region {
        Region {
            bounds: self.bounds.clone(),
            partitions: self.partitions.iter().map(|p| p * k).collect(),
        }
    }

    pub fn sample(&self, rng: &mut impl rand::Rng) -> Vec<f64> {
        self.bounds
            .iter()
            .map(|b| b.lo() + rng.gen::<f64>() * b.width())
            .collect()
    }
}
