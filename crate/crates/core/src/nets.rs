//! Softplus MLPs, the warm-started policy `π(x) = K(x − x_eq) + u_eq + π_res(x)`
//! and the upper-triangular metric factor `Θ(x) = U + unpack(Θ_res(P x))`.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::interval::{sigmoid, softplus};
use crate::linalg::{left_null_space, Matrix};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite parameter in layer {0}")]
    NonFinite(usize),
    #[error("network has no layers")]
    Empty,
}

/// Tag recorded in checkpoints for the upper-triangle packing order.
pub const PACKING_ORDER: &str = "row-major-upper";

/// Number of entries in the upper triangle of an `n × n` matrix.
pub fn packed_len(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Position of entry `(i, j)`, `i <= j`, in the row-major upper packing.
#[inline]
pub fn packed_index(i: usize, j: usize, n: usize) -> usize {
    debug_assert!(i <= j && j < n);
    // rows 0..i hold n + (n-1) + ... + (n-i+1) entries
    i * n - i * i.saturating_sub(1) / 2 + (j - i)
}

pub fn unpack_upper(v: &[f64], n: usize) -> Matrix {
    assert_eq!(v.len(), packed_len(n), "packed length");
    let mut m = Matrix::zeros(n, n);
    let mut k = 0;
    for i in 0..n {
        for j in i..n {
            m[(i, j)] = v[k];
            k += 1;
        }
    }
    m
}

pub fn pack_upper(m: &Matrix) -> Vec<f64> {
    let n = m.rows();
    let mut v = Vec::with_capacity(packed_len(n));
    for i in 0..n {
        for j in i..n {
            v.push(m[(i, j)]);
        }
    }
    v
}

/// One affine layer, weight shape `(out, in)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

/// Softplus MLP: softplus on hidden layers, identity on the output layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Layer>", into = "Vec<Layer>")]
pub struct MlpParams {
    layers: Vec<Layer>,
}

impl TryFrom<Vec<Layer>> for MlpParams {
    type Error = NetError;
    fn try_from(layers: Vec<Layer>) -> Result<Self, NetError> {
        MlpParams::new(layers)
    }
}

impl From<MlpParams> for Vec<Layer> {
    fn from(p: MlpParams) -> Self {
        p.layers
    }
}

impl MlpParams {
    pub fn new(layers: Vec<Layer>) -> Result<Self, NetError> {
        if layers.is_empty() {
            return Err(NetError::Empty);
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.weight.rows() {
                return Err(NetError::Dimension(format!(
                    "layer {i}: bias {} for {} outputs",
                    l.bias.len(),
                    l.weight.rows()
                )));
            }
            if i > 0 && layers[i - 1].weight.rows() != l.weight.cols() {
                return Err(NetError::Dimension(format!(
                    "layer {i} expects {} inputs, previous layer emits {}",
                    l.weight.cols(),
                    layers[i - 1].weight.rows()
                )));
            }
            if !l.weight.is_finite() || l.bias.iter().any(|b| !b.is_finite()) {
                return Err(NetError::NonFinite(i));
            }
        }
        Ok(MlpParams { layers })
    }

    /// Residual network with Glorot-uniform hidden weights, zero hidden
    /// biases, and an all-zero output layer, so the output and its Jacobian
    /// vanish identically at initialization.
    pub fn zero_output_init(
        input: usize,
        hidden: &[usize],
        output: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut fan_in = input;
        for &h in hidden {
            let limit = (6.0 / (fan_in + h).max(1) as f64).sqrt();
            let w = (0..h * fan_in).map(|_| rng.gen_range(-limit..limit)).collect();
            layers.push(Layer {
                weight: Matrix::from_vec(h, fan_in, w),
                bias: vec![0.0; h],
            });
            fan_in = h;
        }
        layers.push(Layer {
            weight: Matrix::zeros(output, fan_in),
            bias: vec![0.0; output],
        });
        MlpParams { layers }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("nonempty").weight.rows()
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.rows() * (l.weight.cols() + 1))
            .sum()
    }

    /// Appends parameters in layer order: weight (row-major), then bias.
    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        for l in &self.layers {
            out.extend_from_slice(l.weight.as_slice());
            out.extend_from_slice(&l.bias);
        }
    }

    /// Inverse of [`MlpParams::flatten_into`]; returns the number consumed.
    pub fn assign_from(&mut self, src: &[f64]) -> usize {
        let mut k = 0;
        for l in &mut self.layers {
            let nw = l.weight.as_slice().len();
            l.weight.as_mut_slice().copy_from_slice(&src[k..k + nw]);
            k += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&src[k..k + nb]);
            k += nb;
        }
        k
    }

    fn check_input(&self, x: &[f64]) -> Result<(), NetError> {
        if x.len() != self.input_dim() {
            return Err(NetError::Dimension(format!(
                "input of length {} for a net expecting {}",
                x.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, NetError> {
        self.check_input(x)?;
        let last = self.layers.len() - 1;
        let mut h = x.to_vec();
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = l.weight.matvec(&h);
            for (zi, b) in z.iter_mut().zip(&l.bias) {
                *zi += b;
            }
            h = if i < last { z.into_iter().map(softplus).collect() } else { z };
        }
        Ok(h)
    }

    /// Output and directional derivative along `v` (forward mode).
    pub fn jvp(&self, x: &[f64], v: &[f64]) -> Result<(Vec<f64>, Vec<f64>), NetError> {
        self.check_input(x)?;
        self.check_input(v)?;
        let last = self.layers.len() - 1;
        let mut h = x.to_vec();
        let mut dh = v.to_vec();
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = l.weight.matvec(&h);
            for (zi, b) in z.iter_mut().zip(&l.bias) {
                *zi += b;
            }
            let dz = l.weight.matvec(&dh);
            if i < last {
                dh = dz.iter().zip(&z).map(|(d, &zz)| d * sigmoid(zz)).collect();
                h = z.into_iter().map(softplus).collect();
            } else {
                h = z;
                dh = dz;
            }
        }
        Ok((h, dh))
    }

    /// Exact input Jacobian `W_L diag(σ'(z_{L−1})) ⋯ diag(σ'(z_1)) W_1`.
    pub fn jacobian(&self, x: &[f64]) -> Result<Matrix, NetError> {
        self.check_input(x)?;
        let last = self.layers.len() - 1;
        let mut h = x.to_vec();
        let mut jac = Matrix::identity(x.len());
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = l.weight.matvec(&h);
            for (zi, b) in z.iter_mut().zip(&l.bias) {
                *zi += b;
            }
            jac = l.weight.matmul(&jac);
            if i < last {
                for (r, &zz) in z.iter().enumerate() {
                    let d = sigmoid(zz);
                    for c in 0..jac.cols() {
                        jac[(r, c)] *= d;
                    }
                }
                h = z.into_iter().map(softplus).collect();
            }
        }
        Ok(jac)
    }
}

/// Evaluation interface shared by anything that maps states to inputs.
pub trait Policy {
    fn input_dim(&self) -> usize;
    fn eval(&self, x: &[f64]) -> Vec<f64>;
}

/// `π(x) = K (x − x_eq) + u_eq + π_res(x)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyNet {
    pub gain: Matrix,
    pub x_eq: Vec<f64>,
    pub u_eq: Vec<f64>,
    pub residual: MlpParams,
}

impl PolicyNet {
    pub fn new(
        gain: Matrix,
        x_eq: Vec<f64>,
        u_eq: Vec<f64>,
        residual: MlpParams,
    ) -> Result<Self, NetError> {
        let (m, n) = gain.shape();
        if x_eq.len() != n
            || u_eq.len() != m
            || residual.input_dim() != n
            || residual.output_dim() != m
        {
            return Err(NetError::Dimension(format!(
                "policy gain {m}x{n}, x_eq {}, u_eq {}, residual {}->{}",
                x_eq.len(),
                u_eq.len(),
                residual.input_dim(),
                residual.output_dim()
            )));
        }
        Ok(PolicyNet {
            gain,
            x_eq,
            u_eq,
            residual,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.gain.cols()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, NetError> {
        let res = self.residual.forward(x)?;
        let dx: Vec<f64> = x.iter().zip(&self.x_eq).map(|(a, b)| a - b).collect();
        let lin = self.gain.matvec(&dx);
        Ok(lin
            .iter()
            .zip(&self.u_eq)
            .zip(&res)
            .map(|((k, u), r)| k + u + r)
            .collect())
    }

    /// `∂π/∂x = K + ∂π_res/∂x`.
    pub fn jacobian(&self, x: &[f64]) -> Result<Matrix, NetError> {
        Ok(self.gain.add(&self.residual.jacobian(x)?))
    }

    pub fn num_params(&self) -> usize {
        self.gain.as_slice().len() + self.residual.num_params()
    }

    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(self.gain.as_slice());
        self.residual.flatten_into(out);
    }

    pub fn assign_from(&mut self, src: &[f64]) -> usize {
        let nk = self.gain.as_slice().len();
        self.gain.as_mut_slice().copy_from_slice(&src[..nk]);
        nk + self.residual.assign_from(&src[nk..])
    }
}

impl Policy for PolicyNet {
    fn input_dim(&self) -> usize {
        self.gain.rows()
    }

    /// Panics on a state of the wrong dimension.
    fn eval(&self, x: &[f64]) -> Vec<f64> {
        self.forward(x).expect("policy input dimension")
    }
}

/// Projection for constant input matrices: the rows of `P` span the left
/// null space of `B`. When the columns of `B` are distinct unit vectors the
/// result selects the unactuated coordinates in order.
pub fn killing_projection(b: &Matrix) -> Matrix {
    let (n, m) = b.shape();
    let mut actuated = vec![false; n];
    let mut is_selection = true;
    for j in 0..m {
        let col = b.col(j);
        let ones: Vec<usize> = (0..n).filter(|&i| col[i] != 0.0).collect();
        if ones.len() != 1 || col[ones[0]] != 1.0 || actuated[ones[0]] {
            is_selection = false;
            break;
        }
        actuated[ones[0]] = true;
    }
    if !is_selection {
        return left_null_space(b);
    }
    let free: Vec<usize> = (0..n).filter(|&i| !actuated[i]).collect();
    let mut p = Matrix::zeros(free.len(), n);
    for (r, &i) in free.iter().enumerate() {
        p[(r, i)] = 1.0;
    }
    p
}

/// `Θ(x) = U + unpack(Θ_res(P x))`, always upper triangular.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricNet {
    pub warm_start: Matrix,
    pub residual: MlpParams,
    pub projection: Matrix,
}

impl MetricNet {
    pub fn new(warm_start: Matrix, residual: MlpParams, projection: Matrix) -> Result<Self, NetError> {
        let n = warm_start.rows();
        if !warm_start.is_square()
            || projection.cols() != n
            || residual.input_dim() != projection.rows()
            || residual.output_dim() != packed_len(n)
        {
            return Err(NetError::Dimension(format!(
                "metric warm start {}x{}, projection {}x{}, residual {}->{}",
                warm_start.rows(),
                warm_start.cols(),
                projection.rows(),
                projection.cols(),
                residual.input_dim(),
                residual.output_dim()
            )));
        }
        for i in 0..n {
            for j in 0..i {
                if warm_start[(i, j)] != 0.0 {
                    return Err(NetError::Dimension(
                        "warm start must be upper triangular".into(),
                    ));
                }
            }
        }
        Ok(MetricNet {
            warm_start,
            residual,
            projection,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.warm_start.rows()
    }

    fn check(&self, x: &[f64]) -> Result<(), NetError> {
        if x.len() != self.state_dim() {
            return Err(NetError::Dimension(format!(
                "state of length {} for metric of dimension {}",
                x.len(),
                self.state_dim()
            )));
        }
        Ok(())
    }

    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        self.projection.matvec(x)
    }

    pub fn theta(&self, x: &[f64]) -> Result<Matrix, NetError> {
        self.check(x)?;
        let out = self.residual.forward(&self.project(x))?;
        Ok(self.warm_start.add(&unpack_upper(&out, self.state_dim())))
    }

    /// `M(x) = Θ(x)ᵀ Θ(x)`.
    pub fn metric(&self, x: &[f64]) -> Result<Matrix, NetError> {
        let t = self.theta(x)?;
        let m = t.transpose().matmul(&t);
        Ok(m.symmetric_part())
    }

    /// `Σ_i ∂Θ/∂x_i (x) v_i` by forward-mode differentiation along `v`.
    pub fn directional_derivative(&self, x: &[f64], v: &[f64]) -> Result<Matrix, NetError> {
        self.check(x)?;
        self.check(v)?;
        let (_, d) = self.residual.jvp(&self.project(x), &self.project(v))?;
        Ok(unpack_upper(&d, self.state_dim()))
    }

    /// Θ(x) and its directional derivative in one pass.
    pub fn theta_and_derivative(&self, x: &[f64], v: &[f64]) -> Result<(Matrix, Matrix), NetError> {
        self.check(x)?;
        self.check(v)?;
        let (out, d) = self.residual.jvp(&self.project(x), &self.project(v))?;
        let n = self.state_dim();
        Ok((
            self.warm_start.add(&unpack_upper(&out, n)),
            unpack_upper(&d, n),
        ))
    }

    pub fn num_params(&self) -> usize {
        packed_len(self.state_dim()) + self.residual.num_params()
    }

    /// Upper triangle of the warm start (packed), then residual parameters.
    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        out.extend(pack_upper(&self.warm_start));
        self.residual.flatten_into(out);
    }

    pub fn assign_from(&mut self, src: &[f64]) -> usize {
        let n = self.state_dim();
        let k = packed_len(n);
        self.warm_start = unpack_upper(&src[..k], n);
        k + self.residual.assign_from(&src[k..])
    }
}
