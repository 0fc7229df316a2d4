//! Integration of the LBP summary with the histogram distances.
//!
//! For template `k` the raw product is `mean_code * f_k / 2`; the integrated
//! value divides it by `sigma_k * mu_k`, the training-set standard deviation
//! and mean of that product. A constant bias feature closes the vector.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lbp::LbpSummary;

pub const DEFAULT_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegrationParams {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub epsilon: f64,
}

impl IntegrationParams {
    pub fn templates(&self) -> usize {
        self.mu.len()
    }

    /// `sigma_k * mu_k`, replaced by `epsilon` when smaller than it in
    /// magnitude.
    pub fn divisor(&self, k: usize) -> f64 {
        let d = self.sigma[k] * self.mu[k];
        if d.abs() < self.epsilon {
            self.epsilon
        } else {
            d
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mu.len() != self.sigma.len() || self.mu.is_empty() {
            return Err(Error::DimensionMismatch(
                "mu and sigma must be non-empty and of equal length".into(),
            ));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "epsilon {} must be positive",
                self.epsilon
            )));
        }
        if self.mu.iter().chain(&self.sigma).any(|v| !v.is_finite()) || self.sigma.iter().any(|&s| s < 0.0) {
            return Err(Error::InvalidParameter(
                "mu must be finite and sigma finite and non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Integrated feature vectors of every particle, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    cols: usize,
    rows: usize,
    dim: usize,
    values: Vec<f64>,
}

impl FeatureGrid {
    /// `sites` must hold `cols * rows` vectors of one common length.
    pub fn new(cols: usize, rows: usize, sites: Vec<Vec<f64>>) -> Result<Self> {
        if cols == 0 || rows == 0 || sites.len() != cols * rows {
            return Err(Error::DimensionMismatch(format!(
                "{cols}x{rows} feature grid cannot hold {} sites",
                sites.len()
            )));
        }
        let dim = sites[0].len();
        if dim == 0 || sites.iter().any(|s| s.len() != dim) {
            return Err(Error::DimensionMismatch(
                "feature vectors must share one non-zero length".into(),
            ));
        }
        if sites.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("feature values must be finite".into()));
        }
        Ok(Self {
            cols,
            rows,
            dim,
            values: sites.into_iter().flatten().collect(),
        })
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn len(&self) -> usize {
        self.cols * self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Feature dimension `J`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Features of the site at row-major index `index`.
    #[inline]
    pub fn site(&self, index: usize) -> &[f64] {
        &self.values[index * self.dim..(index + 1) * self.dim]
    }
}

pub fn raw_product(summary: &LbpSummary, f: &[f64]) -> Vec<f64> {
    f.iter().map(|fk| summary.mean_code * fk / 2.0).collect()
}

/// Per-component mean and population standard deviation of the training
/// products (two-pass).
pub fn fit_normalization(products: &[Vec<f64>], epsilon: f64) -> Result<IntegrationParams> {
    if products.len() < 2 {
        return Err(Error::Empty(format!(
            "normalization needs at least 2 training particles, got {}",
            products.len()
        )));
    }
    let k = products[0].len();
    if k == 0 || products.iter().any(|p| p.len() != k) {
        return Err(Error::DimensionMismatch(
            "training products must share one non-zero length".into(),
        ));
    }
    let n = products.len() as f64;
    let mu: Vec<f64> = (0..k).map(|j| products.iter().map(|p| p[j]).sum::<f64>() / n).collect();
    let sigma = (0..k)
        .map(|j| {
            let var = products.iter().map(|p| (p[j] - mu[j]).powi(2)).sum::<f64>() / n;
            var.sqrt()
        })
        .collect();
    let params = IntegrationParams { mu, sigma, epsilon };
    params.validate()?;
    Ok(params)
}

/// Integrated feature vector of length `K + 1`; the last entry is the bias 1.
pub fn integrate_features(summary: &LbpSummary, f: &[f64], params: &IntegrationParams) -> Result<Vec<f64>> {
    if f.len() != params.templates() {
        return Err(Error::DimensionMismatch(format!(
            "{} distances for {} fitted templates",
            f.len(),
            params.templates()
        )));
    }
    let mut out: Vec<f64> = raw_product(summary, f)
        .into_iter()
        .enumerate()
        .map(|(k, v)| v / params.divisor(k))
        .collect();
    out.push(1.0);
    Ok(out)
}
