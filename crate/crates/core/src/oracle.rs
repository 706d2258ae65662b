//! Reference derivatives and dense expansions used to check the analytic
//! code paths. Nothing here is used by training or prediction.

use nalgebra::{DMatrix, DVector};

use crate::cpd::{FeatureSet, DENSE_WEIGHTS_CAP};
use crate::error::{Error, Result};

/// Central-difference settings; step for coordinate `i` is `h0·(1+|v_i|)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdConfig {
    pub h0: f64,
}

impl FdConfig {
    pub const GRADIENT: FdConfig = FdConfig { h0: 1e-6 };
    pub const HESSIAN: FdConfig = FdConfig { h0: 1e-4 };

    fn step(&self, vi: f64) -> f64 {
        self.h0 * (1.0 + vi.abs())
    }

    fn validate(&self) -> Result<()> {
        if self.h0 > 0.0 && self.h0.is_finite() {
            Ok(())
        } else {
            Err(Error::Config(format!("finite-difference step {} must be > 0", self.h0)))
        }
    }
}

fn eval<F: Fn(&DVector<f64>) -> f64>(f: &F, v: &DVector<f64>) -> Result<f64> {
    let out = f(v);
    if out.is_finite() {
        Ok(out)
    } else {
        Err(Error::Numerical("objective returned a non-finite value".into()))
    }
}

pub fn finite_diff_gradient<F>(f: F, v: &DVector<f64>, cfg: FdConfig) -> Result<DVector<f64>>
where
    F: Fn(&DVector<f64>) -> f64,
{
    cfg.validate()?;
    let mut g = DVector::zeros(v.len());
    let mut w = v.clone();
    for i in 0..v.len() {
        let h = cfg.step(v[i]);
        w[i] = v[i] + h;
        let plus = eval(&f, &w)?;
        w[i] = v[i] - h;
        let minus = eval(&f, &w)?;
        w[i] = v[i];
        g[i] = (plus - minus) / (2.0 * h);
    }
    Ok(g)
}

/// Central second differences; `(i, j)` and `(j, i)` hold the same value.
pub fn finite_diff_hessian<F>(f: F, v: &DVector<f64>, cfg: FdConfig) -> Result<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> f64,
{
    cfg.validate()?;
    let n = v.len();
    let mut h = DMatrix::zeros(n, n);
    let mut w = v.clone();
    let center = eval(&f, v)?;
    for i in 0..n {
        let hi = cfg.step(v[i]);
        w[i] = v[i] + hi;
        let plus = eval(&f, &w)?;
        w[i] = v[i] - hi;
        let minus = eval(&f, &w)?;
        w[i] = v[i];
        h[(i, i)] = (plus - 2.0 * center + minus) / (hi * hi);

        for j in (i + 1)..n {
            let hj = cfg.step(v[j]);
            let mut corner = |si: f64, sj: f64| -> Result<f64> {
                w[i] = v[i] + si * hi;
                w[j] = v[j] + sj * hj;
                let out = eval(&f, &w);
                w[i] = v[i];
                w[j] = v[j];
                out
            };
            let pp = corner(1.0, 1.0)?;
            let pm = corner(1.0, -1.0)?;
            let mp = corner(-1.0, 1.0)?;
            let mm = corner(-1.0, -1.0)?;
            let value = (pp - pm - mp + mm) / (4.0 * hi * hj);
            h[(i, j)] = value;
            h[(j, i)] = value;
        }
    }
    Ok(h)
}

/// Dense tensor-product feature matrix `Φ ∈ R^{N×I^D}` with rows
/// `φ^(D) ⊗ … ⊗ φ^(1)` (first dimension fastest).
pub fn dense_features(fs: &FeatureSet) -> Result<DMatrix<f64>> {
    let n = fs.n_samples();
    let i_dim = fs.local_dim();
    let size = (0..fs.n_dims())
        .try_fold(1usize, |acc, _| acc.checked_mul(i_dim))
        .filter(|&s| s <= DENSE_WEIGHTS_CAP)
        .ok_or(Error::TooLarge {
            what: "I^D",
            size: usize::MAX,
            cap: DENSE_WEIGHTS_CAP,
        })?;
    let mut out = DMatrix::zeros(n, size);
    for row in 0..n {
        let mut term = vec![1.0];
        for phi in &fs.phi {
            let mut next = Vec::with_capacity(term.len() * i_dim);
            for i in 0..i_dim {
                next.extend(term.iter().map(|t| t * phi[(row, i)]));
            }
            term = next;
        }
        for (col, t) in term.into_iter().enumerate() {
            out[(row, col)] = t;
        }
    }
    Ok(out)
}
