//! Graph filters: distance-kernel adjacency, normalized Laplacian,
//! renormalized spectral convolution and the trainable data-driven filter.

use std::io::Write;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{symmetric_part, Matrix, Tape, Var};

/// Symmetric, nonnegative sensor adjacency.
#[derive(Debug, Clone, PartialEq)]
pub struct Adjacency {
    weights: Matrix,
}

impl Adjacency {
    pub fn new(weights: Matrix) -> Result<Self> {
        if weights.rows() != weights.cols() {
            return Err(Error::shape("Adjacency::new", weights.shape(), weights.shape()));
        }
        if !weights.is_symmetric() {
            return Err(Error::Validation("adjacency must be symmetric".into()));
        }
        if weights.data().iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(Error::Validation("adjacency entries must be finite and nonnegative".into()));
        }
        Ok(Adjacency { weights })
    }

    /// Graph with no edges.
    pub fn empty(n: usize) -> Self {
        Adjacency {
            weights: Matrix::zeros(n, n),
        }
    }

    pub fn identity(n: usize) -> Self {
        Adjacency {
            weights: Matrix::identity(n),
        }
    }

    pub fn n(&self) -> usize {
        self.weights.rows()
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn degrees(&self) -> Vec<f64> {
        (0..self.n()).map(|i| self.weights.row(i).iter().sum()).collect()
    }
}

/// Gaussian distance kernel `A_ij = exp(−dist_ij / σ²)` with σ the population
/// standard deviation of the off-diagonal distances. Entries `≤ threshold`
/// are set to zero; the diagonal is `exp(0) = 1`.
pub fn gaussian_adjacency(dist: &Matrix, threshold: f64) -> Result<Adjacency> {
    let n = dist.rows();
    if dist.cols() != n {
        return Err(Error::shape("gaussian_adjacency", dist.shape(), dist.shape()));
    }
    if !(0.0..1.0).contains(&threshold) {
        return Err(Error::Validation(format!("threshold {threshold} outside [0, 1)")));
    }
    if dist.data().iter().any(|&d| !(d >= 0.0) || !d.is_finite()) {
        return Err(Error::Validation("distances must be finite and nonnegative".into()));
    }
    if !dist.is_symmetric() {
        return Err(Error::Validation("distance matrix must be symmetric".into()));
    }
    if (0..n).any(|i| dist.get(i, i) != 0.0) {
        return Err(Error::Validation("distance matrix must have a zero diagonal".into()));
    }

    let off: Vec<f64> = (0..n)
        .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
        .map(|(i, j)| dist.get(i, j))
        .collect();
    if off.is_empty() {
        return Err(Error::Validation("need at least two sensors".into()));
    }
    let mean = off.iter().sum::<f64>() / off.len() as f64;
    let var = off.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / off.len() as f64;
    if var <= 0.0 {
        return Err(Error::Validation(
            "distance standard deviation is zero; kernel width undefined".into(),
        ));
    }

    let weights = dist.map(|d| {
        let a = (-d / var).exp();
        if a <= threshold {
            0.0
        } else {
            a
        }
    });
    Adjacency::new(weights)
}

/// `L = I − D^{−1/2} A D^{−1/2}`.
pub fn normalized_laplacian(a: &Adjacency) -> Result<Matrix> {
    let deg = a.degrees();
    if let Some(i) = deg.iter().position(|&d| d <= 0.0) {
        return Err(Error::DegenerateDegree(i));
    }
    let inv_sqrt: Vec<f64> = deg.iter().map(|d| 1.0 / d.sqrt()).collect();
    let w = a.weights();
    Ok(Matrix::from_fn(a.n(), a.n(), |i, j| {
        let id = if i == j { 1.0 } else { 0.0 };
        id - inv_sqrt[i] * w.get(i, j) * inv_sqrt[j]
    }))
}

/// `D̃^{−1/2} Ã D̃^{−1/2}` with `Ã = A + I`.
pub fn renormalized_propagation(a: &Adjacency) -> Matrix {
    let n = a.n();
    let tilde = Matrix::from_fn(n, n, |i, j| {
        a.weights().get(i, j) + if i == j { 1.0 } else { 0.0 }
    });
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|i| 1.0 / tilde.row(i).iter().sum::<f64>().sqrt())
        .collect();
    Matrix::from_fn(n, n, |i, j| inv_sqrt[i] * tilde.get(i, j) * inv_sqrt[j])
}

/// Channel-mixing weights Θ of a graph convolution (input channels × output channels).
#[derive(Debug, Clone, PartialEq)]
pub struct FilterWeights(Matrix);

impl FilterWeights {
    pub fn new(theta: Matrix) -> Self {
        FilterWeights(theta)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn matrix_mut(&mut self) -> &mut Matrix {
        &mut self.0
    }

    pub fn input_channels(&self) -> usize {
        self.0.rows()
    }

    pub fn output_channels(&self) -> usize {
        self.0.cols()
    }
}

/// Simplified spectral convolution `D̃^{−1/2} Ã D̃^{−1/2} X Θ`.
pub fn simplified_conv(a: &Adjacency, x: &Matrix, theta: &FilterWeights) -> Result<Matrix> {
    if x.rows() != a.n() {
        return Err(Error::shape("simplified_conv", (a.n(), a.n()), x.shape()));
    }
    renormalized_propagation(a).matmul(x)?.matmul(theta.matrix())
}

/// Initialization scheme for a [`DdgfFilter`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DdgfInit {
    /// i.i.d. uniform in `[−1/√N, 1/√N]`.
    #[default]
    Uniform,
    /// Identity plus uniform noise in `[−1/√N, 1/√N]`.
    IdentityNoise,
}

/// Trainable data-driven graph filter.
///
/// The unconstrained `base` is what the optimizer updates; the filter applied
/// to signals is its symmetric part, so symmetry holds after every update.
/// Degree normalization is folded into the learned matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DdgfFilter {
    base: Matrix,
}

impl DdgfFilter {
    pub fn new(base: Matrix) -> Result<Self> {
        if base.rows() != base.cols() {
            return Err(Error::shape("DdgfFilter::new", base.shape(), base.shape()));
        }
        Ok(DdgfFilter { base })
    }

    pub fn init<R: Rng + ?Sized>(n: usize, scheme: DdgfInit, rng: &mut R) -> Self {
        let bound = 1.0 / (n as f64).sqrt();
        let base = Matrix::from_fn(n, n, |i, j| {
            let noise = rng.random_range(-bound..=bound);
            match scheme {
                DdgfInit::Uniform => noise,
                DdgfInit::IdentityNoise => noise + if i == j { 1.0 } else { 0.0 },
            }
        });
        DdgfFilter { base }
    }

    pub fn n(&self) -> usize {
        self.base.rows()
    }

    pub fn base(&self) -> &Matrix {
        &self.base
    }

    pub fn base_mut(&mut self) -> &mut Matrix {
        &mut self.base
    }

    /// The symmetric filter `(base + baseᵀ) / 2`.
    pub fn effective(&self) -> Matrix {
        symmetric_part(&self.base)
    }
}

/// Data-driven graph convolution `Â_eff · X · Θ`.
pub fn ddgf_conv(f: &DdgfFilter, x: &Matrix, theta: &FilterWeights) -> Result<Matrix> {
    if x.rows() != f.n() {
        return Err(Error::shape("ddgf_conv", f.base().shape(), x.shape()));
    }
    f.effective().matmul(x)?.matmul(theta.matrix())
}

/// Differentiable graph convolution on a tape, given the already-symmetrized
/// filter node.
pub fn ddgf_conv_on(tape: &mut Tape, filter_eff: Var, x: Var, theta: Var) -> Result<Var> {
    let mixed = tape.matmul(filter_eff, x)?;
    tape.matmul(mixed, theta)
}

/// Writes a matrix as headerless CSV, one row per line.
pub fn write_matrix_csv<W: Write>(m: &Matrix, mut out: W) -> std::io::Result<()> {
    for r in 0..m.rows() {
        let line: Vec<String> = m.row(r).iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    Ok(())
}

/// Exports the effective filter `Â_eff` as an `N×N` headerless CSV.
pub fn export_filter(f: &DdgfFilter, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_matrix_csv(&f.effective(), &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}
