//! Predictive distributions: Monte-Carlo Laplace (LA) through the
//! multilinear model and the closed-form linearized Laplace (LLA).
//!
//! LLA is exposed for every Hessian variant. Its correspondence with the
//! posterior of the linearized model only holds exactly for GGN; for Block,
//! Diag and LastCore the same quadratic form is used as an approximation.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal as StdNormal};

use crate::cpd::CpdModel;
use crate::error::{Error, Result};
use crate::hessian::HessianVariant;
use crate::inference::{sample_posterior, LaplacePosterior};

/// Default number of resampled draws for mixture intervals.
pub const INTERVAL_DRAWS: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictiveMode {
    La,
    Lla,
}

impl std::str::FromStr for PredictiveMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "la" => Ok(PredictiveMode::La),
            "lla" => Ok(PredictiveMode::Lla),
            other => Err(Error::Config(format!("unknown predictive mode '{other}'"))),
        }
    }
}

impl std::fmt::Display for PredictiveMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PredictiveMode::La => "la",
            PredictiveMode::Lla => "lla",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PredictiveDist {
    Gaussian { mean: f64, variance: f64 },
    /// Equal-weight mixture of Gaussians sharing one variance.
    Mixture { means: Vec<f64>, variance: f64 },
}

/// Seeding for the resampling used by mixture intervals. Point `stream`
/// of a batch draws from ChaCha stream `stream` of `seed`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntervalOptions {
    pub draws: usize,
    pub seed: u64,
}

impl Default for IntervalOptions {
    fn default() -> Self {
        Self {
            draws: INTERVAL_DRAWS,
            seed: 0,
        }
    }
}

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> f64 {
    StdNormal::standard().inverse_cdf(p)
}

fn gaussian_log_pdf(y: f64, mean: f64, variance: f64) -> f64 {
    let d = y - mean;
    -0.5 * (2.0 * PI * variance).ln() - d * d / (2.0 * variance)
}

/// Linear-interpolated empirical quantile of sorted data.
fn sorted_quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

impl PredictiveDist {
    pub fn mean(&self) -> f64 {
        match self {
            PredictiveDist::Gaussian { mean, .. } => *mean,
            PredictiveDist::Mixture { means, .. } => means.iter().sum::<f64>() / means.len() as f64,
        }
    }

    /// Total predictive variance (law of total variance for mixtures).
    pub fn variance(&self) -> f64 {
        match self {
            PredictiveDist::Gaussian { variance, .. } => *variance,
            PredictiveDist::Mixture { means, variance } => {
                let m = self.mean();
                variance + means.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / means.len() as f64
            }
        }
    }

    fn component_variance(&self) -> f64 {
        match self {
            PredictiveDist::Gaussian { variance, .. } | PredictiveDist::Mixture { variance, .. } => {
                *variance
            }
        }
    }

    /// `log p(y)`; mixtures use log-mean-exp over components.
    pub fn log_pdf(&self, y: f64) -> Result<f64> {
        let var = self.component_variance();
        if !(var > 0.0) || !var.is_finite() {
            return Err(Error::Numerical(format!(
                "predictive variance must be positive, got {var}"
            )));
        }
        Ok(match self {
            PredictiveDist::Gaussian { mean, variance } => gaussian_log_pdf(y, *mean, *variance),
            PredictiveDist::Mixture { means, variance } => {
                let logs: Vec<f64> = means.iter().map(|m| gaussian_log_pdf(y, *m, *variance)).collect();
                let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let sum: f64 = logs.iter().map(|l| (l - max).exp()).sum();
                max + (sum / logs.len() as f64).ln()
            }
        })
    }

    /// Central credible interval at `level`.
    pub fn interval(&self, level: f64, opts: IntervalOptions, stream: u64) -> Result<(f64, f64)> {
        Ok(self.intervals(&[level], opts, stream)?[0])
    }

    /// Central credible intervals for several levels. For mixtures one set
    /// of resampled draws serves all levels.
    pub fn intervals(&self, levels: &[f64], opts: IntervalOptions, stream: u64) -> Result<Vec<(f64, f64)>> {
        if let Some(bad) = levels.iter().find(|l| !(**l > 0.0 && **l < 1.0)) {
            return Err(Error::Config(format!("interval level must lie in (0, 1), got {bad}")));
        }
        match self {
            PredictiveDist::Gaussian { mean, variance } => Ok(levels
                .iter()
                .map(|level| {
                    let half = normal_quantile(0.5 + level / 2.0) * variance.sqrt();
                    (mean - half, mean + half)
                })
                .collect()),
            PredictiveDist::Mixture { means, variance } => {
                if opts.draws == 0 {
                    return Err(Error::Config("interval draws must be >= 1".into()));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
                rng.set_stream(stream);
                let noise = Normal::new(0.0, variance.sqrt())
                    .map_err(|e| Error::Numerical(e.to_string()))?;
                let mut draws: Vec<f64> = (0..opts.draws)
                    .map(|_| means[rng.random_range(0..means.len())] + noise.sample(&mut rng))
                    .collect();
                draws.sort_by(f64::total_cmp);
                Ok(levels
                    .iter()
                    .map(|level| {
                        let tail = (1.0 - level) / 2.0;
                        (sorted_quantile(&draws, tail), sorted_quantile(&draws, 1.0 - tail))
                    })
                    .collect())
            }
        }
    }

    /// Distribution of `scale·Y + shift`.
    pub fn affine(&self, scale: f64, shift: f64) -> PredictiveDist {
        let s2 = scale * scale;
        match self {
            PredictiveDist::Gaussian { mean, variance } => PredictiveDist::Gaussian {
                mean: scale * mean + shift,
                variance: s2 * variance,
            },
            PredictiveDist::Mixture { means, variance } => PredictiveDist::Mixture {
                means: means.iter().map(|m| scale * m + shift).collect(),
                variance: s2 * variance,
            },
        }
    }
}

/// Gradient of `f(x, v)` with respect to every parameter; block `d` is
/// `z^(d)(x) ⊙ φ^(d)(x)` laid out like `vec(V^(d))`.
fn full_gradient(model: &CpdModel, x: &[f64]) -> Result<DVector<f64>> {
    if x.len() != model.n_dims() {
        return Err(Error::Shape(format!(
            "point has {} coordinates, model expects {}",
            x.len(),
            model.n_dims()
        )));
    }
    let point = model.feature_spec.map_point(x)?;
    let (rank, i_dim, core_len) = (model.rank(), model.local_dim(), model.core_len());
    let proj: Vec<Vec<f64>> = point
        .iter()
        .zip(&model.cores)
        .map(|(phi, core)| (0..rank).map(|r| core.column(r).dot(phi)).collect())
        .collect();
    let mut g = DVector::zeros(model.n_params());
    for d in 0..model.n_dims() {
        for r in 0..rank {
            let z: f64 = proj
                .iter()
                .enumerate()
                .filter(|(k, _)| *k != d)
                .map(|(_, p)| p[r])
                .product();
            for i in 0..i_dim {
                g[d * core_len + i + r * i_dim] = point[d][i] * z;
            }
        }
    }
    Ok(g)
}

/// Gradient of the response at `x` restricted to the parameters the
/// variant covers (only the last core for LastCore).
pub fn grad_f(model: &CpdModel, x: &[f64], variant: HessianVariant) -> Result<DVector<f64>> {
    let g = full_gradient(model, x)?;
    Ok(match variant {
        HessianVariant::LastCore => {
            let len = model.core_len();
            g.rows(model.n_params() - len, len).into_owned()
        }
        _ => g,
    })
}

/// Gaussian with mean `f(x, v*)` and variance `gᵀĤ⁺g + 1/E[β]`.
pub fn predict_lla(post: &LaplacePosterior, x: &[f64]) -> Result<PredictiveDist> {
    let g = full_gradient(&post.mean, x)?;
    let point = post.mean.feature_spec.map_point(x)?;
    let mean = post.mean.response_at(&point);
    let variance = post.eig.pinv_quadratic_form(&g) + post.noise_variance();
    Ok(PredictiveDist::Gaussian { mean, variance })
}

pub fn predict_lla_batch(post: &LaplacePosterior, x: &DMatrix<f64>) -> Result<Vec<PredictiveDist>> {
    rows(x)
        .par_iter()
        .map(|row| predict_lla(post, row))
        .collect()
}

/// Equal-weight mixture over `S` posterior samples, each component with
/// variance `1/E[β]`.
pub fn predict_la(post: &LaplacePosterior, x: &[f64], n_samples: usize, seed: u64) -> Result<PredictiveDist> {
    let samples = sample_models(post, n_samples, seed)?;
    la_from_samples(post, &samples, x)
}

pub fn predict_la_batch(
    post: &LaplacePosterior,
    x: &DMatrix<f64>,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<PredictiveDist>> {
    let samples = sample_models(post, n_samples, seed)?;
    rows(x)
        .par_iter()
        .map(|row| la_from_samples(post, &samples, row))
        .collect()
}

/// Dispatches on the predictive mode; `seed` only affects LA.
pub fn predict_batch(
    post: &LaplacePosterior,
    x: &DMatrix<f64>,
    mode: PredictiveMode,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<PredictiveDist>> {
    match mode {
        PredictiveMode::Lla => predict_lla_batch(post, x),
        PredictiveMode::La => predict_la_batch(post, x, n_samples, seed),
    }
}

fn sample_models(post: &LaplacePosterior, n_samples: usize, seed: u64) -> Result<Vec<CpdModel>> {
    sample_posterior(post, n_samples, seed)?
        .iter()
        .map(|v| post.mean.with_vector(v))
        .collect()
}

fn la_from_samples(post: &LaplacePosterior, samples: &[CpdModel], x: &[f64]) -> Result<PredictiveDist> {
    let point = post.mean.feature_spec.map_point(x)?;
    if x.len() != post.mean.n_dims() {
        return Err(Error::Shape(format!(
            "point has {} coordinates, model expects {}",
            x.len(),
            post.mean.n_dims()
        )));
    }
    Ok(PredictiveDist::Mixture {
        means: samples.iter().map(|m| m.response_at(&point)).collect(),
        variance: post.noise_variance(),
    })
}

fn rows(x: &DMatrix<f64>) -> Vec<Vec<f64>> {
    x.row_iter().map(|r| r.iter().copied().collect()).collect()
}
