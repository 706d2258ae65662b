//! C ABI over a fitted Laplace posterior.
//!
//! Every function returns a [`LatnkmStatus`]. On failure the message is
//! available from [`latnkm_last_error`] on the same thread. Inputs are
//! row-major `n × d` arrays.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use latnkm::cpd::FeatureKind;
use latnkm::experiment::{fit_dataset, ExperimentConfig, ModelArtifact, ARTIFACT_SCHEMA, ARTIFACT_VERSION};
use latnkm::hessian::HessianVariant;
use latnkm::predictive::{predict_batch, PredictiveDist, PredictiveMode};
use latnkm::Error;
use latnkm::data::Dataset;
use nalgebra::{DMatrix, DVector};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LatnkmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Data = 4,
    Numerical = 5,
    Io = 6,
    Artifact = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LatnkmHessian {
    Full = 0,
    Ggn = 1,
    Block = 2,
    Diag = 3,
    LastCore = 4,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LatnkmFeatures {
    UnitNormPolynomial = 0,
    Polynomial = 1,
}

/// Training options. A non-positive `beta` or `gamma` means "learn it".
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct LatnkmFitOptions {
    pub rank: usize,
    pub local_dim: usize,
    pub features: LatnkmFeatures,
    pub hessian: LatnkmHessian,
    pub threshold: f64,
    pub threshold_relative: bool,
    pub epochs: usize,
    pub vi_rounds: usize,
    pub beta: f64,
    pub gamma: f64,
    pub seed: u64,
}

/// Opaque fitted model.
pub struct LatnkmPosterior {
    artifact: ModelArtifact,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> LatnkmStatus {
    match e {
        Error::Config(_) => LatnkmStatus::Config,
        Error::InvalidData(_) | Error::Shape(_) | Error::Format { .. } | Error::IndexOutOfRange { .. } => {
            LatnkmStatus::Data
        }
        Error::TooLarge { .. } | Error::Solver(_) | Error::Numerical(_) => LatnkmStatus::Numerical,
        Error::Io { .. } => LatnkmStatus::Io,
        Error::Artifact(_) => LatnkmStatus::Artifact,
    }
}

struct Failure(LatnkmStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> LatnkmStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LatnkmStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            LatnkmStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(LatnkmStatus::NullPointer, format!("{what} is null"))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn matrix(x: *const f64, n: usize, d: usize) -> Result<DMatrix<f64>, Failure> {
    if n == 0 || d == 0 {
        return Err(Failure(LatnkmStatus::InvalidArgument, "n and d must be positive".into()));
    }
    let len = n
        .checked_mul(d)
        .ok_or_else(|| Failure(LatnkmStatus::InvalidArgument, "n * d overflows".into()))?;
    Ok(DMatrix::from_row_slice(n, d, slice(x, len, "x")?))
}

unsafe fn c_path<'a>(path: *const c_char) -> Result<&'a str, Failure> {
    if path.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(path)
        .to_str()
        .map_err(|_| Failure(LatnkmStatus::InvalidArgument, "path is not valid UTF-8".into()))
}

fn posterior_ref<'a>(h: *const LatnkmPosterior) -> Result<&'a LatnkmPosterior, Failure> {
    // SAFETY: callers pass handles obtained from this library.
    unsafe { h.as_ref() }.ok_or_else(|| null("posterior"))
}

impl From<LatnkmHessian> for HessianVariant {
    fn from(h: LatnkmHessian) -> Self {
        match h {
            LatnkmHessian::Full => HessianVariant::Full,
            LatnkmHessian::Ggn => HessianVariant::Ggn,
            LatnkmHessian::Block => HessianVariant::Block,
            LatnkmHessian::Diag => HessianVariant::Diag,
            LatnkmHessian::LastCore => HessianVariant::LastCore,
        }
    }
}

fn config_of(o: &LatnkmFitOptions) -> ExperimentConfig {
    let positive = |v: f64| (v > 0.0).then_some(v);
    ExperimentConfig {
        dataset: "in-memory".into(),
        rank: o.rank,
        local_dim: o.local_dim,
        features: Some(match o.features {
            LatnkmFeatures::UnitNormPolynomial => FeatureKind::UnitNormPolynomial,
            LatnkmFeatures::Polynomial => FeatureKind::Polynomial,
        }),
        hessian: o.hessian.into(),
        threshold: o.threshold,
        threshold_relative: o.threshold_relative,
        epochs: o.epochs,
        vi_rounds: o.vi_rounds,
        beta: positive(o.beta),
        gamma: positive(o.gamma),
        seed: o.seed,
        ..ExperimentConfig::default()
    }
}

/// Defaults: `R = 2`, `I = 4`, unit-norm features, last-core Hessian,
/// relative threshold `1e-5`, 25 epochs, 5 variational rounds.
#[no_mangle]
pub extern "C" fn latnkm_fit_options_default() -> LatnkmFitOptions {
    let c = ExperimentConfig::default();
    LatnkmFitOptions {
        rank: c.rank,
        local_dim: c.local_dim,
        features: LatnkmFeatures::UnitNormPolynomial,
        hessian: LatnkmHessian::LastCore,
        threshold: c.threshold,
        threshold_relative: c.threshold_relative,
        epochs: c.epochs,
        vi_rounds: c.vi_rounds,
        beta: 0.0,
        gamma: 0.0,
        seed: c.seed,
    }
}

/// Fits a posterior to `x` (`n × d`, row-major) and `y` (`n`). The inputs
/// are used as given, without standardization.
///
/// # Safety
/// `x` must point to `n * d` doubles, `y` to `n` doubles, and `out` to
/// writable storage for one handle pointer. `options` may be null.
#[no_mangle]
pub unsafe extern "C" fn latnkm_fit(
    x: *const f64,
    n: usize,
    d: usize,
    y: *const f64,
    options: *const LatnkmFitOptions,
    out: *mut *mut LatnkmPosterior,
) -> LatnkmStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let opts = options.as_ref().copied().unwrap_or_else(|| latnkm_fit_options_default());
        let cfg = config_of(&opts);
        cfg.validate()?;
        let train = Dataset::new("in-memory", matrix(x, n, d)?, DVector::from_column_slice(slice(y, n, "y")?))?;
        let posterior = fit_dataset(&train, &cfg.bayes_config(cfg.seed))?;
        let artifact = ModelArtifact {
            schema: ARTIFACT_SCHEMA.into(),
            version: ARTIFACT_VERSION,
            seed: cfg.seed,
            config: cfg,
            standardizer: None,
            posterior,
        };
        *out = Box::into_raw(Box::new(LatnkmPosterior { artifact }));
        Ok(())
    })
}

/// Loads a model artifact written by [`latnkm_save`] or the CLI.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn latnkm_load(path: *const c_char, out: *mut *mut LatnkmPosterior) -> LatnkmStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let artifact = ModelArtifact::load(c_path(path)?)?;
        *out = Box::into_raw(Box::new(LatnkmPosterior { artifact }));
        Ok(())
    })
}

/// # Safety
/// `h` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn latnkm_save(h: *const LatnkmPosterior, path: *const c_char) -> LatnkmStatus {
    guard(|| {
        let p = posterior_ref(h)?;
        p.artifact.save(c_path(path)?)?;
        Ok(())
    })
}

/// Input dimensionality `D` the model expects.
///
/// # Safety
/// `h` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn latnkm_n_dims(h: *const LatnkmPosterior, out: *mut usize) -> LatnkmStatus {
    guard(|| {
        let p = posterior_ref(h)?;
        *out.as_mut().ok_or_else(|| null("out"))? = p.artifact.posterior.mean.n_dims();
        Ok(())
    })
}

/// Number of retained eigenpairs of the posterior covariance.
///
/// # Safety
/// `h` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn latnkm_retained_rank(h: *const LatnkmPosterior, out: *mut usize) -> LatnkmStatus {
    guard(|| {
        let p = posterior_ref(h)?;
        *out.as_mut().ok_or_else(|| null("out"))? = p.artifact.posterior.eig.rank();
        Ok(())
    })
}

unsafe fn predict(
    h: *const LatnkmPosterior,
    x: *const f64,
    n: usize,
    d: usize,
    mode: PredictiveMode,
    samples: usize,
    seed: u64,
    mean: *mut f64,
    variance: *mut f64,
) -> LatnkmStatus {
    guard(|| {
        let p = posterior_ref(h)?;
        if mean.is_null() || variance.is_null() {
            return Err(null("output buffer"));
        }
        let xs = matrix(x, n, d)?;
        let model_d = p.artifact.posterior.mean.n_dims();
        if d != model_d {
            return Err(Failure(
                LatnkmStatus::Data,
                format!("inputs have {d} columns, model expects {model_d}"),
            ));
        }
        let dists = predict_batch(&p.artifact.posterior, &xs, mode, samples, seed)?;
        let mean = std::slice::from_raw_parts_mut(mean, n);
        let variance = std::slice::from_raw_parts_mut(variance, n);
        for (k, dist) in dists.iter().enumerate() {
            mean[k] = PredictiveDist::mean(dist);
            variance[k] = dist.variance();
        }
        Ok(())
    })
}

/// Linearized predictive mean and variance for each of `n` points.
///
/// # Safety
/// `x` must hold `n * d` doubles; `mean` and `variance` `n` each.
#[no_mangle]
pub unsafe extern "C" fn latnkm_predict_lla(
    h: *const LatnkmPosterior,
    x: *const f64,
    n: usize,
    d: usize,
    mean: *mut f64,
    variance: *mut f64,
) -> LatnkmStatus {
    predict(h, x, n, d, PredictiveMode::Lla, 1, 0, mean, variance)
}

/// Mean and total variance of the Monte-Carlo mixture over `samples`
/// posterior draws.
///
/// # Safety
/// As for [`latnkm_predict_lla`].
#[no_mangle]
pub unsafe extern "C" fn latnkm_predict_la(
    h: *const LatnkmPosterior,
    x: *const f64,
    n: usize,
    d: usize,
    samples: usize,
    seed: u64,
    mean: *mut f64,
    variance: *mut f64,
) -> LatnkmStatus {
    predict(h, x, n, d, PredictiveMode::La, samples, seed, mean, variance)
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `h` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn latnkm_free(h: *mut LatnkmPosterior) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Message for the last failed call on this thread, or null. Valid until
/// the next call into the library on this thread.
#[no_mangle]
pub extern "C" fn latnkm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}
