//! Outer Bayesian loop: ALS MAP fits alternating with mean-field Gamma
//! updates of the noise and weight precisions, followed by a Laplace
//! posterior over the cores.

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::als::{initial_model, refine_map, TrainConfig};
use crate::cpd::{build_features, model_response, CpdModel, FeatureMapSpec, FeatureSet};
use crate::error::{Error, Result};
use crate::hessian::{
    build_hessian, eig_decompose, HessianSpectrum, HessianVariant, TruncatedEig, DENSE_HESSIAN_CAP,
};

/// `Gam(a, b)` in shape/rate form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaPosterior {
    pub a: f64,
    pub b: f64,
}

impl GammaPosterior {
    pub const DEFAULT_PRIOR: GammaPosterior = GammaPosterior { a: 1e-6, b: 1e-6 };

    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
            return Err(Error::Config(format!(
                "Gamma parameters must be positive and finite (a = {a}, b = {b})"
            )));
        }
        Ok(Self { a, b })
    }

    pub fn mean(&self) -> f64 {
        self.a / self.b
    }
}

/// Noise-precision update: `a += N/2`, `b += ½·E‖y − f‖²`.
pub fn update_beta(q: GammaPosterior, n: usize, expected_sq_residual: f64) -> GammaPosterior {
    debug_assert!(expected_sq_residual >= 0.0);
    GammaPosterior {
        a: q.a + n as f64 / 2.0,
        b: q.b + 0.5 * expected_sq_residual,
    }
}

/// Shape after `rounds` updates that each add `count/2`.
fn shape_after(prior_a: f64, rounds: usize, count: usize) -> f64 {
    prior_a + (rounds * count) as f64 / 2.0
}

/// Weight-precision update: `a += DIR/2`, `b += ½·E[vᵀv]`.
pub fn update_gamma(
    q: GammaPosterior,
    n_dims: usize,
    local_dim: usize,
    rank: usize,
    expected_sq_norm: f64,
) -> GammaPosterior {
    debug_assert!(expected_sq_norm >= 0.0);
    GammaPosterior {
        a: q.a + (n_dims * local_dim * rank) as f64 / 2.0,
        b: q.b + 0.5 * expected_sq_norm,
    }
}

/// A precision that is either held fixed or carries a Gamma posterior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Precision {
    Fixed { value: f64 },
    Learned { q: GammaPosterior },
}

impl Precision {
    pub fn mean(&self) -> f64 {
        match self {
            Precision::Fixed { value } => *value,
            Precision::Learned { q } => q.mean(),
        }
    }

    pub fn posterior(&self) -> Option<GammaPosterior> {
        match self {
            Precision::Learned { q } => Some(*q),
            Precision::Fixed { .. } => None,
        }
    }
}

/// Eigenvalue cutoff, either absolute or as a fraction of `λ_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Threshold {
    Absolute(f64),
    Relative(f64),
}

impl Threshold {
    pub fn resolve(&self, spectrum: &HessianSpectrum) -> f64 {
        match *self {
            Threshold::Absolute(t) => t,
            Threshold::Relative(frac) => frac * spectrum.lambda_max(),
        }
    }

    pub fn value(&self) -> f64 {
        match *self {
            Threshold::Absolute(t) | Threshold::Relative(t) => t,
        }
    }

    pub fn validate(&self, variant: HessianVariant) -> Result<()> {
        let t = self.value();
        if !t.is_finite() {
            return Err(Error::Config(format!("threshold must be finite, got {t}")));
        }
        // The exact Hessian can be indefinite; only a positive cutoff keeps
        // the pseudo-inverse well defined.
        if variant == HessianVariant::Full && t <= 0.0 {
            return Err(Error::Config(
                "the full Hessian needs a positive threshold".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BayesConfig {
    pub rank: usize,
    pub feature_spec: FeatureMapSpec,
    pub epochs: usize,
    pub tol: f64,
    /// Variational rounds `T`; 0 keeps the hyperparameters at their start values.
    pub vi_rounds: usize,
    pub fixed_beta: Option<f64>,
    pub fixed_gamma: Option<f64>,
    pub beta_prior: GammaPosterior,
    pub gamma_prior: GammaPosterior,
    pub variant: HessianVariant,
    pub threshold: Threshold,
    pub seed: u64,
    pub init_scale: Option<f64>,
    pub dense_cap: usize,
}

impl Default for BayesConfig {
    fn default() -> Self {
        Self {
            rank: 2,
            feature_spec: FeatureMapSpec::unit_norm_polynomial(3),
            epochs: 25,
            tol: 1e-8,
            vi_rounds: 5,
            fixed_beta: None,
            fixed_gamma: None,
            beta_prior: GammaPosterior::DEFAULT_PRIOR,
            gamma_prior: GammaPosterior::DEFAULT_PRIOR,
            variant: HessianVariant::LastCore,
            threshold: Threshold::Relative(1e-5),
            seed: 0,
            init_scale: None,
            dense_cap: DENSE_HESSIAN_CAP,
        }
    }
}

impl BayesConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::Config("rank must be >= 1".into()));
        }
        self.feature_spec.validate()?;
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        for (name, v) in [("beta", self.fixed_beta), ("gamma", self.fixed_gamma)] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(Error::Config(format!("fixed {name} must be > 0, got {v}")));
                }
            }
        }
        GammaPosterior::new(self.beta_prior.a, self.beta_prior.b)?;
        GammaPosterior::new(self.gamma_prior.a, self.gamma_prior.b)?;
        self.threshold.validate(self.variant)
    }

    fn train_config(&self, beta: f64, gamma: f64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            beta,
            gamma,
            seed: self.seed,
            init_scale: self.init_scale,
            tol: self.tol,
        }
    }
}

/// Per-round record of the variational loop.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BayesDiagnostics {
    pub beta_trace: Vec<f64>,
    pub gamma_trace: Vec<f64>,
    pub loss_trace: Vec<f64>,
    pub sq_residual_trace: Vec<f64>,
}

/// MAP estimate with its final hyperparameters, before any curvature is
/// computed. One fit serves every Hessian variant and threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapFit {
    pub model: CpdModel,
    pub beta: Precision,
    pub gamma: Precision,
    pub diagnostics: BayesDiagnostics,
}

impl MapFit {
    pub fn spectrum(
        &self,
        fs: &FeatureSet,
        y: &DVector<f64>,
        variant: HessianVariant,
        dense_cap: usize,
    ) -> Result<HessianSpectrum> {
        let h = build_hessian(
            variant,
            &self.model,
            fs,
            y,
            self.beta.mean(),
            self.gamma.mean(),
            dense_cap,
        )?;
        eig_decompose(&h)
    }

    pub fn posterior(&self, eig: TruncatedEig) -> LaplacePosterior {
        LaplacePosterior {
            mean: self.model.clone(),
            variant: eig.variant,
            eig,
            beta: self.beta,
            gamma: self.gamma,
            diagnostics: self.diagnostics.clone(),
        }
    }
}

/// `q(v) = N(v*, Ĥ⁺)` on the covered parameters, point mass elsewhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaplacePosterior {
    pub mean: CpdModel,
    pub variant: HessianVariant,
    pub eig: TruncatedEig,
    pub beta: Precision,
    pub gamma: Precision,
    pub diagnostics: BayesDiagnostics,
}

impl LaplacePosterior {
    pub fn feature_spec(&self) -> &FeatureMapSpec {
        &self.mean.feature_spec
    }

    /// Observation-noise variance `1/E[β]`.
    pub fn noise_variance(&self) -> f64 {
        1.0 / self.beta.mean()
    }
}

/// Runs the variational loop on precomputed features and returns the MAP
/// stage only.
pub fn fit_map_stage(fs: &FeatureSet, y: &DVector<f64>, cfg: &BayesConfig) -> Result<MapFit> {
    cfg.validate()?;
    if fs.n_samples() != y.len() {
        return Err(Error::Shape(format!(
            "{} targets for {} samples",
            y.len(),
            fs.n_samples()
        )));
    }
    let n = fs.n_samples();
    let mut beta = match cfg.fixed_beta {
        Some(value) => Precision::Fixed { value },
        None => Precision::Learned { q: cfg.beta_prior },
    };
    let mut gamma = match cfg.fixed_gamma {
        Some(value) => Precision::Fixed { value },
        None => Precision::Learned { q: cfg.gamma_prior },
    };
    let start = cfg.train_config(beta.mean(), gamma.mean());
    let mut model = initial_model(fs.n_dims(), cfg.rank, &cfg.feature_spec, &start)?;
    let mut diag = BayesDiagnostics::default();

    for round in 0..cfg.vi_rounds {
        let est = refine_map(model, fs, y, &cfg.train_config(beta.mean(), gamma.mean()))?;
        model = est.model;
        let f = model_response(&model, fs)?;
        let sq_resid = (y - f).norm_squared();
        let sq_norm = model.squared_norm();
        // Shapes are set from the prior and the round count rather than
        // accumulated, so they stay exact in floating point.
        if let Precision::Learned { q } = beta {
            let mut q = update_beta(q, n, sq_resid);
            q.a = shape_after(cfg.beta_prior.a, round + 1, n);
            beta = Precision::Learned { q };
        }
        if let Precision::Learned { q } = gamma {
            let mut q = update_gamma(q, model.n_dims(), model.local_dim(), model.rank(), sq_norm);
            q.a = shape_after(cfg.gamma_prior.a, round + 1, model.n_params());
            gamma = Precision::Learned { q };
        }
        diag.loss_trace.push(est.final_loss);
        diag.sq_residual_trace.push(sq_resid);
        diag.beta_trace.push(beta.mean());
        diag.gamma_trace.push(gamma.mean());
    }
    // Final MAP under the hyperparameters the curvature will use.
    let est = refine_map(model, fs, y, &cfg.train_config(beta.mean(), gamma.mean()))?;
    diag.loss_trace.push(est.final_loss);
    if !beta.mean().is_finite() || !gamma.mean().is_finite() {
        return Err(Error::Numerical(
            "variational precision estimate is not finite".into(),
        ));
    }
    Ok(MapFit {
        model: est.model,
        beta,
        gamma,
        diagnostics: diag,
    })
}

/// Full pipeline on raw inputs: features, variational loop, curvature and
/// truncation.
pub fn fit_bayes(x: &DMatrix<f64>, y: &DVector<f64>, cfg: &BayesConfig) -> Result<LaplacePosterior> {
    cfg.validate()?;
    let fs = build_features(x, &cfg.feature_spec)?;
    fit_bayes_features(&fs, y, cfg)
}

pub fn fit_bayes_features(fs: &FeatureSet, y: &DVector<f64>, cfg: &BayesConfig) -> Result<LaplacePosterior> {
    let map = fit_map_stage(fs, y, cfg)?;
    let spectrum = map.spectrum(fs, y, cfg.variant, cfg.dense_cap)?;
    let eig = spectrum.truncate(cfg.threshold.resolve(&spectrum))?;
    Ok(map.posterior(eig))
}

/// Draws `v_s = v* + Σ_j λ_j^{-1/2} ε_{sj} u_j`. Sample `s` uses its own
/// ChaCha stream derived from `(seed, s)`, so the output does not depend on
/// scheduling. Parameters outside the covered block stay at `v*`.
pub fn sample_posterior(post: &LaplacePosterior, n_samples: usize, seed: u64) -> Result<Vec<DVector<f64>>> {
    if n_samples == 0 {
        return Err(Error::Config("number of samples must be >= 1".into()));
    }
    if post.eig.rank() == 0 {
        warn!("no eigenpairs above the threshold; posterior samples equal the MAP estimate");
    }
    let mean = post.mean.to_vector();
    Ok((0..n_samples)
        .into_par_iter()
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(s as u64);
            let mut v = mean.clone();
            post.eig
                .add_scaled_noise(&mut v, || StandardNormal.sample(&mut rng));
            v
        })
        .collect())
}
