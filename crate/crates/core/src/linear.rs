//! Bayesian ridge regression fitted by evidence maximization.
//!
//! Weights have a zero-mean Gaussian prior with precision `lambda`, the noise
//! has precision `alpha`, and both precisions carry Gamma hyperpriors with
//! shape/rate 1e-6. Each iteration computes the posterior mean on centered
//! data and re-estimates the precisions from the effective number of
//! well-determined parameters `gamma`. The Gram matrix is diagonalized once so
//! every iteration costs O(d^2).

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const HYPER: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BayesianRidgeConfig {
    pub max_iter: usize,
    /// Convergence tolerance on the relative change of `alpha` and `lambda`.
    pub tol: f64,
}

impl Default for BayesianRidgeConfig {
    fn default() -> Self {
        Self { max_iter: 300, tol: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BayesianRidgeModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
    /// Noise precision.
    pub alpha: f64,
    /// Weight precision.
    pub lambda: f64,
    pub converged: bool,
    pub n_iter: usize,
}

impl BayesianRidgeModel {
    pub fn n_features(&self) -> usize {
        self.weights.len()
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.intercept + self.weights.iter().zip(row).map(|(w, x)| w * x).sum::<f64>()
    }

    /// Predictions for row-major `x` with `n_features()` columns.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        let d = self.n_features();
        if d == 0 {
            return Ok(Vec::new());
        }
        if x.len() % d != 0 {
            return Err(Error::Shape {
                expected: d,
                got: x.len() % d,
            });
        }
        Ok(x.chunks_exact(d).map(|row| self.predict_row(row)).collect())
    }
}

/// Centered sufficient statistics of a regression problem in the eigenbasis
/// of the Gram matrix.
struct Centered {
    n: usize,
    x_mean: Vec<f64>,
    y_mean: f64,
    /// Eigenvalues of Xc'Xc, clamped to be non-negative.
    eig: Vec<f64>,
    vecs: DMatrix<f64>,
    /// V' Xc' yc.
    proj: Vec<f64>,
    yy: f64,
}

impl Centered {
    fn new(x: &[f64], n_cols: usize, y: &[f64]) -> Result<Self> {
        let n = y.len();
        if x.len() != n * n_cols {
            return Err(Error::Shape {
                expected: n * n_cols,
                got: x.len(),
            });
        }
        let x_mean: Vec<f64> = (0..n_cols)
            .map(|j| x.iter().skip(j).step_by(n_cols).sum::<f64>() / n as f64)
            .collect();
        let y_mean = y.iter().sum::<f64>() / n as f64;
        let mut gram = DMatrix::<f64>::zeros(n_cols, n_cols);
        let mut xty = DVector::<f64>::zeros(n_cols);
        let mut yy = 0.0;
        let mut xc = vec![0.0; n_cols];
        for (row, &yv) in x.chunks_exact(n_cols.max(1)).zip(y) {
            let yc = yv - y_mean;
            yy += yc * yc;
            for j in 0..n_cols {
                xc[j] = row[j] - x_mean[j];
            }
            for a in 0..n_cols {
                xty[a] += xc[a] * yc;
                for b in a..n_cols {
                    gram[(a, b)] += xc[a] * xc[b];
                }
            }
        }
        for a in 0..n_cols {
            for b in 0..a {
                gram[(a, b)] = gram[(b, a)];
            }
        }
        let se = SymmetricEigen::new(gram);
        let eig = se.eigenvalues.iter().map(|&v| v.max(0.0)).collect();
        let proj = (se.eigenvectors.transpose() * xty).iter().copied().collect();
        Ok(Self {
            n,
            x_mean,
            y_mean,
            eig,
            vecs: se.eigenvectors,
            proj,
            yy,
        })
    }

    /// Posterior mean in eigen coordinates for the given precisions.
    fn coords(&self, alpha: f64, lambda: f64) -> Vec<f64> {
        let ratio = lambda / alpha;
        self.eig.iter().zip(&self.proj).map(|(e, p)| p / (e + ratio)).collect()
    }

    fn weights(&self, coords: &[f64]) -> Vec<f64> {
        (self.vecs.clone() * DVector::from_column_slice(coords)).iter().copied().collect()
    }

    fn intercept(&self, weights: &[f64]) -> f64 {
        self.y_mean - self.x_mean.iter().zip(weights).map(|(m, w)| m * w).sum::<f64>()
    }
}

/// Posterior mean `(weights, intercept)` for fixed precisions.
///
/// Equals the ridge solution with penalty `lambda / alpha` on centered data.
pub fn posterior_mean(x: &[f64], n_cols: usize, y: &[f64], alpha: f64, lambda: f64) -> Result<(Vec<f64>, f64)> {
    if !(alpha > 0.0 && lambda > 0.0) {
        return Err(Error::invalid("precisions must be positive"));
    }
    if y.is_empty() {
        return Err(Error::TooFewRows("regression needs at least one row".into()));
    }
    let c = Centered::new(x, n_cols, y)?;
    let w = c.weights(&c.coords(alpha, lambda));
    let b = c.intercept(&w);
    Ok((w, b))
}

/// Fits a Bayesian ridge regression on fully observed row-major `x`.
pub fn fit_bayesian_ridge(x: &[f64], n_cols: usize, y: &[f64], config: BayesianRidgeConfig) -> Result<BayesianRidgeModel> {
    let n = y.len();
    if n < 2 {
        return Err(Error::TooFewRows(format!("regression needs at least 2 rows, got {n}")));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::invalid("regression inputs must be finite"));
    }
    let c = Centered::new(x, n_cols, y)?;
    let scale = y.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    if y.iter().all(|v| (v - c.y_mean).abs() <= 1e-14 * scale) {
        return Ok(BayesianRidgeModel {
            weights: vec![0.0; n_cols],
            intercept: c.y_mean,
            alpha: 1.0 / f64::EPSILON,
            lambda: 1.0,
            converged: true,
            n_iter: 0,
        });
    }

    let mut alpha = 1.0 / (c.yy / n as f64 + f64::EPSILON);
    let mut lambda = 1.0;
    let mut converged = false;
    let mut n_iter = 0;
    for it in 1..=config.max_iter.max(1) {
        n_iter = it;
        let coords = c.coords(alpha, lambda);
        let w_sq: f64 = coords.iter().map(|v| v * v).sum();
        let fit: f64 = coords.iter().zip(&c.proj).map(|(a, p)| a * p).sum();
        let curv: f64 = coords.iter().zip(&c.eig).map(|(a, e)| a * a * e).sum();
        let rss = (c.yy - 2.0 * fit + curv).max(0.0);
        let gamma: f64 = c.eig.iter().map(|&e| alpha * e / (lambda + alpha * e)).sum();
        let new_lambda = (gamma + 2.0 * HYPER) / (w_sq + 2.0 * HYPER);
        let new_alpha = (n as f64 - gamma + 2.0 * HYPER) / (rss + 2.0 * HYPER);
        let change = ((new_alpha - alpha).abs() / alpha).max((new_lambda - lambda).abs() / lambda);
        alpha = new_alpha;
        lambda = new_lambda;
        if change < config.tol {
            converged = true;
            break;
        }
    }
    let weights = c.weights(&c.coords(alpha, lambda));
    let intercept = c.intercept(&weights);
    debug_assert_eq!(c.n, n);
    Ok(BayesianRidgeModel {
        weights,
        intercept,
        alpha,
        lambda,
        converged,
        n_iter,
    })
}
