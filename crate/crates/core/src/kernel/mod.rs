//! Matérn (Sobolev spline) kernels and their tensor products.
//!
//! A factor is parameterised by its Bessel order `beta`:
//!
//! ```text
//! k(r) = 2^(1-beta) / Gamma(beta) * (r/sigma)^beta * K_beta(r/sigma),   k(0) = 1
//! ```
//!
//! and reproduces the Sobolev space `H^(beta + d/2)` on `R^d`.

mod bessel;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use bessel::{bessel_k, bessel_k_scaled};

use crate::error::{Error, Result};
use crate::geometry::PointSet;
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "MaternParams", try_from = "MaternParams")]
pub struct MaternKernel {
    beta: f64,
    sigma: f64,
    dim: usize,
    /// Constant factor in front of the normalised kernel; 1 unless rescaled.
    amplitude: f64,
    norm: f64,
}

/// Serialized form of a [`MaternKernel`].
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MaternParams {
    pub beta: f64,
    pub sigma: f64,
    pub dim: usize,
    #[serde(default = "one")]
    pub amplitude: f64,
}

fn one() -> f64 {
    1.0
}

impl From<MaternKernel> for MaternParams {
    fn from(k: MaternKernel) -> Self {
        Self {
            beta: k.beta,
            sigma: k.sigma,
            dim: k.dim,
            amplitude: k.amplitude,
        }
    }
}

impl TryFrom<MaternParams> for MaternKernel {
    type Error = Error;

    fn try_from(p: MaternParams) -> Result<Self> {
        MaternKernel::new(p.beta, p.sigma, p.dim)?.scaled(p.amplitude)
    }
}

impl MaternKernel {
    pub fn new(beta: f64, sigma: f64, dim: usize) -> Result<Self> {
        if !(beta > 0.0) || !beta.is_finite() {
            return Err(Error::invalid(format!("Matérn order beta must be > 0, got {beta}")));
        }
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::invalid(format!("length scale sigma must be > 0, got {sigma}")));
        }
        if dim == 0 {
            return Err(Error::invalid("kernel dimension must be at least 1"));
        }
        Ok(Self {
            beta,
            sigma,
            dim,
            amplitude: 1.0,
            norm: normalisation(beta),
        })
    }

    /// Length scale `2 sqrt(d)`.
    pub fn default_sigma(dim: usize) -> f64 {
        2.0 * (dim as f64).sqrt()
    }

    pub fn with_default_sigma(beta: f64, dim: usize) -> Result<Self> {
        Self::new(beta, Self::default_sigma(dim), dim)
    }

    /// Kernel whose native space is `H^smoothness(R^dim)`, i.e. `beta = smoothness - dim/2`.
    pub fn for_smoothness(smoothness: f64, sigma: f64, dim: usize) -> Result<Self> {
        let beta = smoothness - dim as f64 / 2.0;
        if !(beta > 0.0) {
            return Err(Error::invalid(format!(
                "smoothness {smoothness} must exceed dim/2 = {}",
                dim as f64 / 2.0
            )));
        }
        Self::new(beta, sigma, dim)
    }

    /// Same kernel multiplied by `amplitude > 0`.
    pub fn scaled(mut self, amplitude: f64) -> Result<Self> {
        if !(amplitude > 0.0) || !amplitude.is_finite() {
            return Err(Error::invalid(format!("amplitude must be > 0, got {amplitude}")));
        }
        self.amplitude *= amplitude;
        Ok(self)
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    /// Sobolev order of the native space, `beta + d/2`.
    pub fn smoothness(&self) -> f64 {
        self.beta + self.dim as f64 / 2.0
    }

    /// Kernel value at distance `r >= 0`.
    pub fn eval(&self, r: f64) -> Result<f64> {
        if !r.is_finite() || r < 0.0 {
            return Err(Error::invalid(format!(
                "distance must be finite and nonnegative, got {r}"
            )));
        }
        Ok(self.eval_unchecked(r))
    }

    #[inline]
    pub(crate) fn eval_unchecked(&self, r: f64) -> f64 {
        if r == 0.0 {
            return self.amplitude;
        }
        let z = r / self.sigma;
        let v = self.norm * bessel::x_pow_bessel_k(self.beta, z);
        // the exact value is < 1 for r > 0; rounding must not break monotonicity
        self.amplitude * v.min(1.0)
    }

    /// Kernel value between two points of dimension `self.dim()`.
    pub fn eval_points(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        if x.len() != self.dim || y.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: if x.len() != self.dim { x.len() } else { y.len() },
            });
        }
        Ok(self.eval_unchecked(distance(x, y)))
    }
}

fn normalisation(beta: f64) -> f64 {
    (1.0 - beta).exp2() / libm::tgamma(beta)
}

#[inline]
pub(crate) fn distance(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// `matern_eval` in free-function form.
pub fn matern_eval(k: &MaternKernel, r: f64) -> Result<f64> {
    k.eval(r)
}

/// Tensor product `k(x, y) = k_1(x_1, y_1) ... k_m(x_m, y_m)` of Matérn factors,
/// where `x_i` is the block of coordinates belonging to direction `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductKernel {
    factors: Vec<MaternKernel>,
}

impl ProductKernel {
    pub fn new(factors: Vec<MaternKernel>) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::invalid("a product kernel needs at least one factor"));
        }
        Ok(Self { factors })
    }

    pub fn factors(&self) -> &[MaternKernel] {
        &self.factors
    }

    pub fn factor(&self, i: usize) -> &MaternKernel {
        &self.factors[i]
    }

    /// Number of factors `m`.
    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.factors.iter().map(|k| k.dim).collect()
    }

    /// Total ambient dimension `d_1 + ... + d_m`.
    pub fn total_dim(&self) -> usize {
        self.factors.iter().map(|k| k.dim).sum()
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        let total = self.total_dim();
        for p in [x, y] {
            if p.len() != total {
                return Err(Error::DimensionMismatch {
                    expected: total,
                    got: p.len(),
                });
            }
        }
        let mut offset = 0;
        let mut value = 1.0;
        for k in &self.factors {
            let block = offset..offset + k.dim;
            value *= k.eval_unchecked(distance(&x[block.clone()], &y[block]));
            offset += k.dim;
        }
        Ok(value)
    }
}

/// `product_eval` in free-function form.
pub fn product_eval(k: &ProductKernel, x: &[f64], y: &[f64]) -> Result<f64> {
    k.eval(x, y)
}

/// Gram matrix `[k(x_i, x_j)]` (when `y` is `None`) or cross matrix `[k(x_i, y_j)]`.
///
/// The Gram matrix is assembled from one triangle and mirrored, so it is exactly
/// symmetric with the kernel's value at zero on the diagonal.
pub fn kernel_matrix(k: &MaternKernel, x: &PointSet, y: Option<&PointSet>) -> Result<Matrix> {
    for p in std::iter::once(x).chain(y) {
        if p.dim() != k.dim() {
            return Err(Error::DimensionMismatch {
                expected: k.dim(),
                got: p.dim(),
            });
        }
    }
    match y {
        None => Ok(gram(k, x)),
        Some(y) => Ok(cross(k, x, y)),
    }
}

fn gram(k: &MaternKernel, x: &PointSet) -> Matrix {
    let n = x.len();
    let mut m = Matrix::zeros(n, n);
    m.as_mut_slice()
        .par_chunks_mut(n.max(1))
        .enumerate()
        .for_each(|(i, row)| {
            let xi = x.point(i);
            for (j, v) in row.iter_mut().enumerate().take(i + 1) {
                *v = k.eval_unchecked(distance(xi, x.point(j)));
            }
        });
    for i in 0..n {
        for j in 0..i {
            m[(j, i)] = m[(i, j)];
        }
    }
    m
}

fn cross(k: &MaternKernel, x: &PointSet, y: &PointSet) -> Matrix {
    let (nr, nc) = (x.len(), y.len());
    let mut m = Matrix::zeros(nr, nc);
    if nc > 0 {
        m.as_mut_slice()
            .par_chunks_mut(nc)
            .enumerate()
            .for_each(|(i, row)| {
                let xi = x.point(i);
                for (j, v) in row.iter_mut().enumerate() {
                    *v = k.eval_unchecked(distance(xi, y.point(j)));
                }
            });
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(points: &[f64]) -> PointSet {
        PointSet::new(1, points.to_vec()).unwrap()
    }

    #[test]
    fn exponential_case() {
        let k = MaternKernel::new(0.5, 0.7, 1).unwrap();
        for &r in &[0.0, 0.01, 0.3, 1.0, 5.0] {
            let expect = (-r / 0.7f64).exp();
            assert!((k.eval(r).unwrap() - expect).abs() <= 1e-13 * expect.max(1e-300));
        }
    }

    #[test]
    fn unit_value_at_zero() {
        for &beta in &[0.0625, 0.5, 1.0625, 3.0, 7.5] {
            assert_eq!(MaternKernel::new(beta, 1.3, 2).unwrap().eval(0.0).unwrap(), 1.0);
        }
    }

    #[test]
    fn regression_constant() {
        // 40-digit reference for beta = 17/16, sigma = 2, r = 1
        let k = MaternKernel::new(17.0 / 16.0, 2.0, 1).unwrap();
        let v = k.eval(1.0).unwrap();
        assert!(((v - 0.843_165_542_937_776_084_602_790_5) / v).abs() < 1e-13, "{v}");
    }

    #[test]
    fn approaches_one_near_origin() {
        let k = MaternKernel::new(17.0 / 16.0, 2.0, 1).unwrap();
        let v = k.eval(1e-9).unwrap();
        assert!(v <= 1.0 && 1.0 - v < 1e-12);
    }

    #[test]
    fn bad_distances() {
        let k = MaternKernel::new(1.0, 1.0, 1).unwrap();
        assert!(k.eval(f64::NAN).is_err());
        assert!(k.eval(f64::INFINITY).is_err());
        assert!(k.eval(-1.0).is_err());
    }

    #[test]
    fn invalid_parameters() {
        assert!(MaternKernel::new(0.0, 1.0, 1).is_err());
        assert!(MaternKernel::new(1.0, -1.0, 1).is_err());
        assert!(MaternKernel::new(1.0, 1.0, 0).is_err());
        assert!(MaternKernel::for_smoothness(1.0, 1.0, 2).is_err());
        let k = MaternKernel::for_smoothness(25.0 / 16.0, 2.0, 3).unwrap();
        assert!((k.beta() - 1.0 / 16.0).abs() < 1e-15);
        assert_eq!(k.smoothness(), 25.0 / 16.0);
    }

    #[test]
    fn product_of_exponentials() {
        let f = MaternKernel::new(0.5, 1.0, 1).unwrap();
        let pk = ProductKernel::new(vec![f, f]).unwrap();
        let v = pk.eval(&[0.0, 0.0], &[0.3, -0.8]).unwrap();
        assert!((v - (-1.1f64).exp()).abs() < 1e-14);
        assert_eq!(pk.eval(&[0.2, 0.4], &[0.2, 0.4]).unwrap(), 1.0);
        assert_eq!(
            pk.eval(&[0.1, 0.9], &[0.5, 0.2]).unwrap(),
            pk.eval(&[0.5, 0.2], &[0.1, 0.9]).unwrap()
        );
        assert!(matches!(
            pk.eval(&[0.0], &[0.0, 1.0]),
            Err(Error::DimensionMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn two_point_gram() {
        let k = MaternKernel::new(0.5, 1.0, 1).unwrap();
        let g = kernel_matrix(&k, &line(&[0.0, 1.0]), None).unwrap();
        let e = (-1.0f64).exp();
        assert_eq!(g[(0, 0)], 1.0);
        assert_eq!(g[(1, 1)], 1.0);
        assert!((g[(0, 1)] - e).abs() < 1e-15);
        assert_eq!(g[(0, 1)], g[(1, 0)]);

        let single = kernel_matrix(&k, &line(&[0.25]), None).unwrap();
        assert_eq!(single.as_slice(), &[1.0]);
    }

    #[test]
    fn cross_matrix_shape_and_dims() {
        let k = MaternKernel::new(1.5, 1.0, 1).unwrap();
        let c = kernel_matrix(&k, &line(&[0.0, 0.5, 1.0]), Some(&line(&[0.25, 0.75]))).unwrap();
        assert_eq!(c.shape(), (3, 2));
        let plane = PointSet::new(2, vec![0.0, 0.0]).unwrap();
        assert!(kernel_matrix(&k, &plane, None).is_err());
    }
}
