//! CPD-constrained kernel machine algebra.
//!
//! Parameter layout: `v = [vec(V^(1)); …; vec(V^(D))]` where `vec` stacks a
//! core column-major, so entry `(i, r)` of core `d` sits at
//! `d·I·R + i + r·I`. Dense (exponential) weight and feature vectors use the
//! index `i_1 + i_2·I + … + i_D·I^{D-1}` (first dimension fastest).

pub mod features;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub use features::{build_features, FeatureKind, FeatureMapSpec, FeatureSet};

use crate::error::{Error, Result};

/// Default cap on `I^D` for [`dense_weights`].
pub const DENSE_WEIGHTS_CAP: usize = 1_000_000;

/// Rank-`R` CPD kernel machine: `D` cores of shape `I×R`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpdModel {
    pub cores: Vec<DMatrix<f64>>,
    pub feature_spec: FeatureMapSpec,
}

impl CpdModel {
    pub fn new(cores: Vec<DMatrix<f64>>, feature_spec: FeatureMapSpec) -> Result<Self> {
        let first = cores
            .first()
            .ok_or_else(|| Error::Shape("a CPD model needs at least one core".into()))?;
        let (i_dim, rank) = first.shape();
        if i_dim == 0 || rank == 0 {
            return Err(Error::Shape("cores must be non-empty".into()));
        }
        if i_dim != feature_spec.local_dim {
            return Err(Error::Shape(format!(
                "core rows {i_dim} != feature local_dim {}",
                feature_spec.local_dim
            )));
        }
        if let Some(d) = cores.iter().position(|c| c.shape() != (i_dim, rank)) {
            return Err(Error::Shape(format!(
                "core {d} has shape {:?}, expected {:?}",
                cores[d].shape(),
                (i_dim, rank)
            )));
        }
        Ok(Self {
            cores,
            feature_spec,
        })
    }

    pub fn zeros(n_dims: usize, rank: usize, feature_spec: FeatureMapSpec) -> Result<Self> {
        Self::new(
            vec![DMatrix::zeros(feature_spec.local_dim, rank); n_dims],
            feature_spec,
        )
    }

    /// Cores with i.i.d. `N(0, scale²)` entries.
    pub fn random<R: Rng + ?Sized>(
        n_dims: usize,
        rank: usize,
        feature_spec: FeatureMapSpec,
        scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let i_dim = feature_spec.local_dim;
        let cores = (0..n_dims)
            .map(|_| {
                DMatrix::from_fn(i_dim, rank, |_, _| {
                    let z: f64 = StandardNormal.sample(rng);
                    scale * z
                })
            })
            .collect();
        Self::new(cores, feature_spec)
    }

    pub fn n_dims(&self) -> usize {
        self.cores.len()
    }

    pub fn rank(&self) -> usize {
        self.cores[0].ncols()
    }

    pub fn local_dim(&self) -> usize {
        self.cores[0].nrows()
    }

    /// Parameters per core (`I·R`).
    pub fn core_len(&self) -> usize {
        self.local_dim() * self.rank()
    }

    /// Total parameter count `D·I·R`.
    pub fn n_params(&self) -> usize {
        self.n_dims() * self.core_len()
    }

    pub fn to_vector(&self) -> DVector<f64> {
        let mut v = DVector::zeros(self.n_params());
        let len = self.core_len();
        for (d, core) in self.cores.iter().enumerate() {
            v.rows_mut(d * len, len).copy_from_slice(core.as_slice());
        }
        v
    }

    pub fn set_from_vector(&mut self, v: &DVector<f64>) -> Result<()> {
        if v.len() != self.n_params() {
            return Err(Error::Shape(format!(
                "parameter vector length {} != {}",
                v.len(),
                self.n_params()
            )));
        }
        let len = self.core_len();
        for (d, core) in self.cores.iter_mut().enumerate() {
            core.as_mut_slice()
                .copy_from_slice(v.rows(d * len, len).as_slice());
        }
        Ok(())
    }

    pub fn with_vector(&self, v: &DVector<f64>) -> Result<Self> {
        let mut out = self.clone();
        out.set_from_vector(v)?;
        Ok(out)
    }

    pub fn squared_norm(&self) -> f64 {
        self.cores.iter().map(|c| c.norm_squared()).sum()
    }

    fn check_features(&self, fs: &FeatureSet) -> Result<()> {
        if fs.n_dims() != self.n_dims() {
            return Err(Error::Shape(format!(
                "feature set has {} dimensions, model has {}",
                fs.n_dims(),
                self.n_dims()
            )));
        }
        let n = fs.n_samples();
        for (d, phi) in fs.phi.iter().enumerate() {
            if phi.ncols() != self.local_dim() || phi.nrows() != n {
                return Err(Error::Shape(format!(
                    "Φ^({d}) has shape {:?}, expected ({n}, {})",
                    phi.shape(),
                    self.local_dim()
                )));
            }
        }
        Ok(())
    }

    /// `Φ^(d) V^(d)` for every dimension (each `N×R`).
    pub fn projections(&self, fs: &FeatureSet) -> Result<Vec<DMatrix<f64>>> {
        self.check_features(fs)?;
        Ok(fs
            .phi
            .iter()
            .zip(&self.cores)
            .map(|(phi, core)| phi * core)
            .collect())
    }

    /// Response at a single point given its per-dimension features.
    pub fn response_at(&self, point: &[DVector<f64>]) -> f64 {
        let mut z = vec![1.0; self.rank()];
        for (phi, core) in point.iter().zip(&self.cores) {
            for (r, zr) in z.iter_mut().enumerate() {
                *zr *= core.column(r).dot(phi);
            }
        }
        z.iter().sum()
    }
}

/// Hadamard product of all projections except those listed in `skip`.
pub(crate) fn hadamard_except(proj: &[DMatrix<f64>], skip: &[usize]) -> DMatrix<f64> {
    let (n, r) = proj[0].shape();
    let mut z = DMatrix::from_element(n, r, 1.0);
    for (d, p) in proj.iter().enumerate() {
        if !skip.contains(&d) {
            z.component_mul_assign(p);
        }
    }
    z
}

/// Row-wise Khatri–Rao product with column `(i, r)` at `i + r·I`:
/// `A[n, i + r·I] = phi[n, i] · z[n, r]`.
pub fn row_khatri_rao(z: &DMatrix<f64>, phi: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, rank) = z.shape();
    let i_dim = phi.ncols();
    let mut a = DMatrix::zeros(n, i_dim * rank);
    for r in 0..rank {
        for i in 0..i_dim {
            let col = i + r * i_dim;
            for row in 0..n {
                a[(row, col)] = phi[(row, i)] * z[(row, r)];
            }
        }
    }
    a
}

/// Model response `f = Z·1` with `Z = ⊛_d Φ^(d) V^(d)`; `O(N·D·I·R)`.
pub fn model_response(model: &CpdModel, fs: &FeatureSet) -> Result<DVector<f64>> {
    let proj = model.projections(fs)?;
    let z = hadamard_except(&proj, &[]);
    Ok(row_sums(&z))
}

pub(crate) fn row_sums(z: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(z.nrows(), z.row_iter().map(|r| r.sum()))
}

/// Partial response for core `d` (zero-based): `Z_d = ⊛_{k≠d} Φ^(k)V^(k)`
/// and the design matrix `A_d = Z_d ⊙_R Φ^(d)` with `A_d · vec(V^(d)) = f`.
pub fn partial_response(
    model: &CpdModel,
    fs: &FeatureSet,
    d: usize,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if d >= model.n_dims() {
        return Err(Error::IndexOutOfRange {
            index: d,
            len: model.n_dims(),
        });
    }
    let proj = model.projections(fs)?;
    let z = hadamard_except(&proj, &[d]);
    let a = row_khatri_rao(&z, &fs.phi[d]);
    Ok((z, a))
}

/// Exact expansion `vec(W) = Σ_r v_r^(D) ⊗ … ⊗ v_r^(1)`, length `I^D`.
pub fn dense_weights(model: &CpdModel) -> Result<DVector<f64>> {
    dense_weights_capped(model, DENSE_WEIGHTS_CAP)
}

pub fn dense_weights_capped(model: &CpdModel, cap: usize) -> Result<DVector<f64>> {
    let i_dim = model.local_dim();
    let size = checked_pow(i_dim, model.n_dims()).filter(|&s| s <= cap);
    let size = size.ok_or(Error::TooLarge {
        what: "I^D",
        size: checked_pow(i_dim, model.n_dims()).unwrap_or(usize::MAX),
        cap,
    })?;
    let mut w = DVector::zeros(size);
    for r in 0..model.rank() {
        // Kronecker accumulation with the first dimension fastest.
        let mut term = vec![1.0];
        for core in &model.cores {
            let col = core.column(r);
            let mut next = Vec::with_capacity(term.len() * i_dim);
            for i in 0..i_dim {
                next.extend(term.iter().map(|t| t * col[i]));
            }
            term = next;
        }
        for (wi, t) in w.iter_mut().zip(term) {
            *wi += t;
        }
    }
    Ok(w)
}

fn checked_pow(base: usize, exp: usize) -> Option<usize> {
    (0..exp).try_fold(1usize, |acc, _| acc.checked_mul(base))
}
