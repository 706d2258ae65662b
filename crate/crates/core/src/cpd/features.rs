//! Per-dimension polynomial feature maps.
//!
//! The global feature vector of a sample is the Kronecker product of the
//! per-dimension vectors and is never materialized; only the `D` matrices
//! `Φ^(d)` (one row per sample) are kept.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Local basis used for every input dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    /// Monomials `(1, x, …, x^{I-1})` scaled to unit Euclidean norm per sample.
    UnitNormPolynomial,
    /// Plain monomials `(1, x, …, x^{I-1})`.
    Polynomial,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureMapSpec {
    pub kind: FeatureKind,
    /// Number of basis functions per input dimension (`I`).
    pub local_dim: usize,
}

impl FeatureMapSpec {
    pub fn unit_norm_polynomial(local_dim: usize) -> Self {
        Self {
            kind: FeatureKind::UnitNormPolynomial,
            local_dim,
        }
    }

    pub fn polynomial(local_dim: usize) -> Self {
        Self {
            kind: FeatureKind::Polynomial,
            local_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.local_dim == 0 {
            return Err(Error::Config("local_dim must be >= 1".into()));
        }
        Ok(())
    }

    /// Writes the feature vector of a scalar input into `out` (length `I`).
    pub fn map_scalar_into(&self, x: f64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.local_dim);
        let mut p = 1.0;
        for o in out.iter_mut() {
            *o = p;
            p *= x;
        }
        if self.kind == FeatureKind::UnitNormPolynomial {
            let norm = out.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 && norm.is_finite() {
                out.iter_mut().for_each(|v| *v /= norm);
            }
        }
    }

    pub fn map_scalar(&self, x: f64) -> DVector<f64> {
        let mut out = DVector::zeros(self.local_dim);
        self.map_scalar_into(x, out.as_mut_slice());
        out
    }

    /// Per-dimension feature vectors of one input point.
    pub fn map_point(&self, x: &[f64]) -> Result<Vec<DVector<f64>>> {
        if let Some(bad) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!(
                "non-finite input at dimension {bad}"
            )));
        }
        Ok(x.iter().map(|&v| self.map_scalar(v)).collect())
    }
}

/// Feature matrices `Φ^(d) ∈ R^{N×I}`, one per input dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub phi: Vec<DMatrix<f64>>,
}

impl FeatureSet {
    pub fn n_samples(&self) -> usize {
        self.phi.first().map_or(0, |p| p.nrows())
    }

    pub fn n_dims(&self) -> usize {
        self.phi.len()
    }

    pub fn local_dim(&self) -> usize {
        self.phi.first().map_or(0, |p| p.ncols())
    }

    /// Restrict to a subset of rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> FeatureSet {
        FeatureSet {
            phi: self.phi.iter().map(|p| p.select_rows(rows)).collect(),
        }
    }
}

/// Builds `Φ^(d)_{n,i} = φ_i(x_{nd})` for every dimension.
pub fn build_features(x: &DMatrix<f64>, spec: &FeatureMapSpec) -> Result<FeatureSet> {
    spec.validate()?;
    if let Some((idx, _)) = x.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        let (row, col) = (idx % x.nrows(), idx / x.nrows());
        return Err(Error::InvalidData(format!(
            "non-finite input at row {row}, column {col}"
        )));
    }
    let (n, d) = x.shape();
    let i_dim = spec.local_dim;
    let mut phi = Vec::with_capacity(d);
    let mut buf = vec![0.0; i_dim];
    for col in 0..d {
        let mut m = DMatrix::zeros(n, i_dim);
        for row in 0..n {
            spec.map_scalar_into(x[(row, col)], &mut buf);
            for (i, &b) in buf.iter().enumerate() {
                m[(row, i)] = b;
            }
        }
        phi.push(m);
    }
    Ok(FeatureSet { phi })
}
