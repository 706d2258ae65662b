//! Experiment runner behind the command-line tool: configs, model
//! artifacts, evaluation repeats, cross-validation and Hessian sweeps.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cpd::{build_features, FeatureKind, FeatureMapSpec, FeatureSet};
use crate::data::{gen_cubic, kfold_indices, load_csv, split, Dataset, SplitOptions, Standardizer, SYNTHETIC_CUBIC};
use crate::error::{Error, Result};
use crate::hessian::{HessianVariant, DENSE_HESSIAN_CAP};
use crate::inference::{fit_bayes_features, fit_map_stage, BayesConfig, LaplacePosterior, MapFit, Threshold};
use crate::metrics::{evaluate, MetricOptions, MetricReport};
use crate::predictive::{predict_batch, PredictiveDist, PredictiveMode};

pub const ARTIFACT_SCHEMA: &str = "latnkm.model";
pub const ARTIFACT_VERSION: u32 = 1;

/// Relative threshold grid `{1e-5, 1e-3, 1e-2, 1e-1, 1, 10, 100}·λ_max`.
pub const RELATIVE_THRESHOLD_GRID: [f64; 7] = [1e-5, 1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0];

/// Protocol note written at the top of every cross-validation report.
pub const CV_PROTOCOL: &str = "k-fold cross-validation on the training split, selection by mean validation NLL, \
ties broken by smaller rank, then smaller local dimension, then larger threshold";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvGrid {
    pub ranks: Vec<usize>,
    pub local_dims: Vec<usize>,
    pub thresholds: Vec<f64>,
    pub folds: usize,
}

impl Default for CvGrid {
    fn default() -> Self {
        Self {
            ranks: vec![2, 3, 4, 5, 6],
            local_dims: vec![2, 3, 4, 5, 6],
            thresholds: RELATIVE_THRESHOLD_GRID.to_vec(),
            folds: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// CSV path or `synthetic-cubic`.
    pub dataset: String,
    pub target: Option<String>,
    pub rank: usize,
    pub local_dim: usize,
    /// Defaults to plain monomials for the synthetic problem and unit-norm
    /// monomials otherwise.
    pub features: Option<FeatureKind>,
    pub hessian: HessianVariant,
    pub threshold: f64,
    pub threshold_relative: bool,
    pub mode: PredictiveMode,
    pub samples: usize,
    pub epochs: usize,
    pub vi_rounds: usize,
    pub beta: Option<f64>,
    pub gamma: Option<f64>,
    pub train_frac: f64,
    pub repeats: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
    /// Defaults to true for CSV data and false for the synthetic problem.
    pub standardize: Option<bool>,
    pub drop_constant: bool,
    /// Report metrics in the original target units.
    pub raw_scale: bool,
    pub tol: f64,
    pub dense_cap: usize,
    pub interval_draws: usize,
    pub cv: CvGrid,
    /// Thresholds for `sweep-hessian`, read with `threshold_relative`.
    pub sweep_thresholds: Vec<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: SYNTHETIC_CUBIC.into(),
            target: None,
            rank: 2,
            local_dim: 4,
            features: None,
            hessian: HessianVariant::LastCore,
            threshold: 1e-5,
            threshold_relative: true,
            mode: PredictiveMode::Lla,
            samples: 500,
            epochs: 25,
            vi_rounds: 5,
            beta: None,
            gamma: None,
            train_frac: 0.9,
            repeats: 10,
            seed: 0,
            out: None,
            standardize: None,
            drop_constant: false,
            raw_scale: false,
            tol: 1e-8,
            dense_cap: DENSE_HESSIAN_CAP,
            interval_draws: crate::predictive::INTERVAL_DRAWS,
            cv: CvGrid::default(),
            sweep_thresholds: RELATIVE_THRESHOLD_GRID.to_vec(),
        }
    }
}

impl ExperimentConfig {
    /// Settings of the synthetic cubic experiment: `R = 2`, `I = 4`,
    /// `β = 1/9` fixed, last-core Hessian with the linearized predictive.
    pub fn synthetic_cubic() -> Self {
        Self {
            beta: Some(1.0 / 9.0),
            repeats: 20,
            ..Self::default()
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    /// Applies the keys present in a TOML document on top of `self`; keys the
    /// document omits keep their current values.
    pub fn overlay_toml_str(&self, s: &str) -> Result<Self> {
        let cfg_err = |e: &dyn std::fmt::Display| Error::Config(e.to_string());
        let mut base = toml::Table::try_from(self).map_err(|e| cfg_err(&e))?;
        let top: toml::Table = toml::from_str(s).map_err(|e| cfg_err(&e))?;
        merge(&mut base, top);
        base.try_into().map_err(|e| cfg_err(&e))
    }

    pub fn overlay_file(&self, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.overlay_toml_str(&text)
    }

    pub fn is_synthetic(&self) -> bool {
        self.dataset == SYNTHETIC_CUBIC
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("rank", self.rank),
            ("local_dim", self.local_dim),
            ("samples", self.samples),
            ("epochs", self.epochs),
            ("repeats", self.repeats),
            ("interval_draws", self.interval_draws),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        if !(self.train_frac > 0.0 && self.train_frac < 1.0) {
            return Err(Error::Config(format!("train_frac must lie in (0, 1), got {}", self.train_frac)));
        }
        if self.cv.folds < 2 {
            return Err(Error::Config("cv.folds must be >= 2".into()));
        }
        self.bayes_config(self.seed).validate()
    }

    pub fn feature_spec(&self) -> FeatureMapSpec {
        let kind = self.features.unwrap_or(if self.is_synthetic() {
            FeatureKind::Polynomial
        } else {
            FeatureKind::UnitNormPolynomial
        });
        FeatureMapSpec {
            kind,
            local_dim: self.local_dim,
        }
    }

    pub fn threshold(&self) -> Threshold {
        threshold_of(self.threshold, self.threshold_relative)
    }

    pub fn bayes_config(&self, seed: u64) -> BayesConfig {
        BayesConfig {
            rank: self.rank,
            feature_spec: self.feature_spec(),
            epochs: self.epochs,
            tol: self.tol,
            vi_rounds: self.vi_rounds,
            fixed_beta: self.beta,
            fixed_gamma: self.gamma,
            variant: self.hessian,
            threshold: self.threshold(),
            seed,
            dense_cap: self.dense_cap,
            ..BayesConfig::default()
        }
    }

    pub fn metric_options(&self, seed: u64) -> MetricOptions {
        let mut o = MetricOptions::default();
        o.interval.draws = self.interval_draws;
        o.interval.seed = seed;
        o
    }

    fn split_options(&self, seed: u64) -> SplitOptions {
        SplitOptions {
            train_frac: self.train_frac,
            seed,
            standardize: self.standardize.unwrap_or(!self.is_synthetic()),
            drop_constant: self.drop_constant,
        }
    }

    /// Train and test sets for one repeat.
    pub fn prepare(&self, seed: u64) -> Result<(Dataset, Dataset)> {
        if self.is_synthetic() {
            return Ok(gen_cubic(seed));
        }
        let ds = load_csv(&self.dataset, self.target.as_deref())?;
        split(&ds, &self.split_options(seed))
    }
}

fn threshold_of(t: f64, relative: bool) -> Threshold {
    if relative {
        Threshold::Relative(t)
    } else {
        Threshold::Absolute(t)
    }
}

/// Versioned model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub schema: String,
    pub version: u32,
    pub config: ExperimentConfig,
    /// Seed of the split and the initialization.
    pub seed: u64,
    pub standardizer: Option<Standardizer>,
    pub posterior: LaplacePosterior,
}

impl ModelArtifact {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Artifact(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let raw: serde_json::Value = serde_json::from_str(s).map_err(|e| Error::Artifact(e.to_string()))?;
        let schema = raw.get("schema").and_then(|v| v.as_str());
        let version = raw.get("version").and_then(|v| v.as_u64());
        if schema != Some(ARTIFACT_SCHEMA) || version != Some(u64::from(ARTIFACT_VERSION)) {
            return Err(Error::Artifact(format!(
                "expected schema {ARTIFACT_SCHEMA} version {ARTIFACT_VERSION}, found {schema:?} version {version:?}"
            )));
        }
        serde_json::from_value(raw).map_err(|e| Error::Artifact(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), &self.to_json()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

pub(crate) fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Trains on the split for `cfg.seed`.
fn merge(base: &mut toml::Table, top: toml::Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

pub fn cmd_fit(cfg: &ExperimentConfig) -> Result<ModelArtifact> {
    cfg.validate()?;
    let (train, _) = cfg.prepare(cfg.seed)?;
    let posterior = fit_dataset(&train, &cfg.bayes_config(cfg.seed))?;
    Ok(ModelArtifact {
        schema: ARTIFACT_SCHEMA.into(),
        version: ARTIFACT_VERSION,
        config: cfg.clone(),
        seed: cfg.seed,
        standardizer: train.standardizer.clone(),
        posterior,
    })
}

pub fn fit_dataset(train: &Dataset, bayes: &BayesConfig) -> Result<LaplacePosterior> {
    let fs = build_features(&train.x, &bayes.feature_spec)?;
    fit_bayes_features(&fs, &train.y, bayes)
}

/// Predictive distributions and targets on the reporting scale.
pub fn predict_dataset(
    post: &LaplacePosterior,
    test: &Dataset,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<(Vec<PredictiveDist>, Vec<f64>)> {
    if test.n_dims() != post.mean.n_dims() {
        return Err(Error::Shape(format!(
            "dataset has {} input columns, model expects {}",
            test.n_dims(),
            post.mean.n_dims()
        )));
    }
    let dists = predict_batch(post, &test.x, cfg.mode, cfg.samples, seed)?;
    match (&test.standardizer, cfg.raw_scale) {
        (Some(s), true) => Ok((
            dists.iter().map(|d| d.affine(s.y_std, s.y_mean)).collect(),
            s.inverse_y(&test.y).as_slice().to_vec(),
        )),
        _ => Ok((dists, test.y.as_slice().to_vec())),
    }
}

pub fn evaluate_posterior(post: &LaplacePosterior, test: &Dataset, cfg: &ExperimentConfig, seed: u64) -> Result<MetricReport> {
    let (dists, y) = predict_dataset(post, test, cfg, seed)?;
    evaluate(&dists, &y, &cfg.metric_options(seed))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Population standard deviation over repeats.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatRow {
    pub repeat: usize,
    pub seed: u64,
    pub metrics: MetricReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub mode: PredictiveMode,
    pub hessian: HessianVariant,
    pub rows: Vec<RepeatRow>,
    pub rmse: MeanStd,
    pub nll: MeanStd,
    pub ecp95: MeanStd,
    pub wcpi95: MeanStd,
    pub rce: MeanStd,
}

impl EvalReport {
    fn new(cfg: &ExperimentConfig, rows: Vec<RepeatRow>) -> Self {
        let col = |f: fn(&MetricReport) -> f64| MeanStd::of(&rows.iter().map(|r| f(&r.metrics)).collect::<Vec<_>>());
        Self {
            dataset: cfg.dataset.clone(),
            mode: cfg.mode,
            hessian: cfg.hessian,
            rmse: col(|m| m.rmse),
            nll: col(|m| m.nll),
            ecp95: col(|m| m.ecp95),
            wcpi95: col(|m| m.wcpi95),
            rce: col(|m| m.rce),
            rows,
        }
    }

    pub fn summary(&self) -> [(&'static str, MeanStd); 5] {
        [
            ("rmse", self.rmse),
            ("nll", self.nll),
            ("ecp95", self.ecp95),
            ("wcpi95", self.wcpi95),
            ("rce", self.rce),
        ]
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# dataset={} hessian={} mode={}", self.dataset, self.hessian, self.mode);
        let _ = writeln!(
            s,
            "{:>6} {:>20} {:>10} {:>10} {:>10} {:>10} {:>10}",
            "repeat", "seed", "rmse", "nll", "ecp95", "wcpi95", "rce"
        );
        for r in &self.rows {
            let m = &r.metrics;
            let _ = writeln!(
                s,
                "{:>6} {:>20} {:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>10.4}",
                r.repeat, r.seed, m.rmse, m.nll, m.ecp95, m.wcpi95, m.rce
            );
        }
        let cell = |m: MeanStd| format!("{:.3}±{:.3}", m.mean, m.std);
        let _ = writeln!(
            s,
            "{:>6} {:>20} {} {} {} {} {}",
            "mean",
            "",
            cell(self.rmse),
            cell(self.nll),
            cell(self.ecp95),
            cell(self.wcpi95),
            cell(self.rce)
        );
        s
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Artifact(e.to_string()))
    }
}

/// Repeats with seeds `cfg.seed + i`. With an artifact, every repeat
/// evaluates that model on its own test split and only the predictive
/// seed changes; otherwise each repeat splits and trains afresh.
pub fn cmd_eval(cfg: &ExperimentConfig, artifact: Option<&ModelArtifact>) -> Result<EvalReport> {
    cfg.validate()?;
    let rows = (0..cfg.repeats)
        .into_par_iter()
        .map(|i| {
            let seed = cfg.seed.wrapping_add(i as u64);
            let metrics = match artifact {
                Some(a) => {
                    let (_, test) = cfg.prepare(a.seed)?;
                    evaluate_posterior(&a.posterior, &test, cfg, seed)?
                }
                None => {
                    let (train, test) = cfg.prepare(seed)?;
                    let post = fit_dataset(&train, &cfg.bayes_config(seed))?;
                    evaluate_posterior(&post, &test, cfg, seed)?
                }
            };
            Ok(RepeatRow { repeat: i, seed, metrics })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::new(cfg, rows))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvCell {
    pub rank: usize,
    pub local_dim: usize,
    pub threshold: f64,
    /// Mean validation NLL; absent when the cell failed.
    pub nll: Option<f64>,
    pub fold_nll: Vec<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub protocol: String,
    pub folds: usize,
    pub threshold_relative: bool,
    pub hessian: HessianVariant,
    pub mode: PredictiveMode,
    pub cells: Vec<CvCell>,
    pub best: Option<CvCell>,
}

impl CvReport {
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# {} (k={})", self.protocol, self.folds);
        let _ = writeln!(
            s,
            "# hessian={} mode={} threshold={}",
            self.hessian,
            self.mode,
            if self.threshold_relative { "relative" } else { "absolute" }
        );
        let _ = writeln!(s, "{:>4} {:>4} {:>12} {:>12}", "R", "I", "threshold", "nll");
        for c in &self.cells {
            let nll = match (&c.nll, &c.error) {
                (Some(v), _) => format!("{v:.4}"),
                (None, Some(e)) => format!("failed: {e}"),
                (None, None) => "failed".into(),
            };
            let _ = writeln!(s, "{:>4} {:>4} {:>12.3e} {:>12}", c.rank, c.local_dim, c.threshold, nll);
        }
        if let Some(b) = &self.best {
            let _ = writeln!(s, "best R={} I={} threshold={:e}", b.rank, b.local_dim, b.threshold);
        }
        s
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Artifact(e.to_string()))
    }
}

/// Validation NLL for every threshold of one `(R, I)` pair on one fold.
/// The MAP fit and spectrum do not depend on the threshold, so they are
/// computed once.
fn fold_scores(
    cfg: &ExperimentConfig,
    train: &Dataset,
    val: &Dataset,
    thresholds: &[f64],
    seed: u64,
) -> Result<Vec<Result<f64>>> {
    let bayes = cfg.bayes_config(seed);
    bayes.validate()?;
    let fs = build_features(&train.x, &bayes.feature_spec)?;
    let map = fit_map_stage(&fs, &train.y, &bayes)?;
    let spectrum = map.spectrum(&fs, &train.y, bayes.variant, bayes.dense_cap)?;
    Ok(thresholds
        .iter()
        .map(|&t| {
            let th = threshold_of(t, cfg.threshold_relative);
            th.validate(bayes.variant)?;
            let post = map.posterior(spectrum.truncate(th.resolve(&spectrum))?);
            let (dists, y) = predict_dataset(&post, val, cfg, seed)?;
            crate::metrics::nll(&dists, &y)
        })
        .collect())
}

fn cell_order(a: &CvCell, b: &CvCell) -> std::cmp::Ordering {
    let (x, y) = (a.nll.unwrap_or(f64::INFINITY), b.nll.unwrap_or(f64::INFINITY));
    x.total_cmp(&y)
        .then(a.rank.cmp(&b.rank))
        .then(a.local_dim.cmp(&b.local_dim))
        .then(b.threshold.total_cmp(&a.threshold))
}

/// Grid search over `(R, I, t̂)` on the training split of `cfg.seed`.
pub fn cmd_cv(cfg: &ExperimentConfig) -> Result<CvReport> {
    cfg.validate()?;
    let grid = &cfg.cv;
    if grid.ranks.is_empty() || grid.local_dims.is_empty() || grid.thresholds.is_empty() {
        return Err(Error::Config("cross-validation grids must be nonempty".into()));
    }
    let (train, _) = cfg.prepare(cfg.seed)?;
    cv_on(cfg, &train)
}

/// Cross-validation on an already prepared training set.
pub fn cv_on(cfg: &ExperimentConfig, train: &Dataset) -> Result<CvReport> {
    let grid = &cfg.cv;
    let folds = kfold_indices(train.n_samples(), grid.folds, cfg.seed)?;
    let pairs: Vec<(usize, usize)> = grid
        .ranks
        .iter()
        .flat_map(|&r| grid.local_dims.iter().map(move |&i| (r, i)))
        .collect();
    let jobs: Vec<(usize, usize)> = (0..pairs.len()).flat_map(|p| (0..folds.len()).map(move |f| (p, f))).collect();
    let scores: Vec<Result<Vec<Result<f64>>>> = jobs
        .par_iter()
        .map(|&(p, f)| {
            let (rank, local_dim) = pairs[p];
            let cell_cfg = ExperimentConfig {
                rank,
                local_dim,
                ..cfg.clone()
            };
            let (tr, va) = &folds[f];
            fold_scores(&cell_cfg, &train.select_rows(tr), &train.select_rows(va), &grid.thresholds, cfg.seed)
        })
        .collect();

    let mut cells = Vec::new();
    for (p, &(rank, local_dim)) in pairs.iter().enumerate() {
        for (k, &threshold) in grid.thresholds.iter().enumerate() {
            let mut fold_nll = Vec::new();
            let mut error = None;
            for f in 0..folds.len() {
                let res = match &scores[p * folds.len() + f] {
                    Ok(per_t) => per_t[k].as_ref().map(|v| *v).map_err(|e| e.to_string()),
                    Err(e) => Err(e.to_string()),
                };
                match res {
                    Ok(v) if v.is_finite() => fold_nll.push(v),
                    Ok(v) => error = Some(format!("non-finite validation NLL {v}")),
                    Err(e) => error = Some(e),
                }
                if error.is_some() {
                    break;
                }
            }
            let nll = error.is_none().then(|| fold_nll.iter().sum::<f64>() / fold_nll.len() as f64);
            cells.push(CvCell {
                rank,
                local_dim,
                threshold,
                nll,
                fold_nll,
                error,
            });
        }
    }
    let best = cells.iter().filter(|c| c.nll.is_some()).min_by(|a, b| cell_order(a, b)).cloned();
    Ok(CvReport {
        protocol: CV_PROTOCOL.into(),
        folds: grid.folds,
        threshold_relative: cfg.threshold_relative,
        hessian: cfg.hessian,
        mode: cfg.mode,
        cells,
        best,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub variant: HessianVariant,
    pub threshold: f64,
    pub resolved_threshold: Option<f64>,
    pub retained: Option<usize>,
    pub nll: Option<f64>,
    pub rmse: Option<f64>,
    pub rce: Option<f64>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub dataset: String,
    pub mode: PredictiveMode,
    pub threshold_relative: bool,
    pub seed: u64,
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# dataset={} mode={} seed={}", self.dataset, self.mode, self.seed);
        let _ = writeln!(
            s,
            "{:>6} {:>12} {:>8} {:>10} {:>10} {:>10}",
            "hess", "threshold", "kept", "nll", "rmse", "rce"
        );
        let opt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
        for r in &self.rows {
            let _ = write!(
                s,
                "{:>6} {:>12.3e} {:>8} {:>10} {:>10} {:>10}",
                r.variant.name(),
                r.threshold,
                r.retained.map_or("-".to_string(), |k| k.to_string()),
                opt(r.nll),
                opt(r.rmse),
                opt(r.rce)
            );
            if let Some(n) = &r.note {
                let _ = write!(s, "  {n}");
            }
            s.push('\n');
        }
        s
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Artifact(e.to_string()))
    }
}

/// Every Hessian variant crossed with `cfg.sweep_thresholds` on the split
/// of `cfg.seed`, sharing one MAP fit.
pub fn cmd_sweep_hessian(cfg: &ExperimentConfig) -> Result<SweepReport> {
    cfg.validate()?;
    let (train, test) = cfg.prepare(cfg.seed)?;
    let bayes = cfg.bayes_config(cfg.seed);
    let fs = build_features(&train.x, &bayes.feature_spec)?;
    let map = fit_map_stage(&fs, &train.y, &bayes)?;
    let rows = HessianVariant::ALL
        .par_iter()
        .map(|&variant| sweep_variant(cfg, &map, &fs, &train.y, &test, variant))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();
    Ok(SweepReport {
        dataset: cfg.dataset.clone(),
        mode: cfg.mode,
        threshold_relative: cfg.threshold_relative,
        seed: cfg.seed,
        rows,
    })
}

fn sweep_variant(
    cfg: &ExperimentConfig,
    map: &MapFit,
    fs: &FeatureSet,
    y: &DVector<f64>,
    test: &Dataset,
    variant: HessianVariant,
) -> Vec<SweepRow> {
    let failed = |threshold: f64, note: String| SweepRow {
        variant,
        threshold,
        resolved_threshold: None,
        retained: None,
        nll: None,
        rmse: None,
        rce: None,
        note: Some(note),
    };
    let spectrum = match map.spectrum(fs, y, variant, cfg.dense_cap) {
        Ok(s) => s,
        Err(e) => {
            let note = match e {
                Error::TooLarge { size, cap, .. } => format!("skipped: {size} parameters exceed dense cap {cap}"),
                other => format!("failed: {other}"),
            };
            return cfg.sweep_thresholds.iter().map(|&t| failed(t, note.clone())).collect();
        }
    };
    cfg.sweep_thresholds
        .iter()
        .map(|&t| {
            let resolved = threshold_of(t, cfg.threshold_relative).resolve(&spectrum);
            if variant == HessianVariant::Full && resolved <= 0.0 {
                return failed(t, "skipped: full Hessian needs a positive threshold".into());
            }
            let run = || -> Result<SweepRow> {
                let eig = spectrum.truncate(resolved)?;
                let retained = eig.rank();
                let post = map.posterior(eig);
                let m = evaluate_posterior(&post, test, cfg, cfg.seed)?;
                Ok(SweepRow {
                    variant,
                    threshold: t,
                    resolved_threshold: Some(resolved),
                    retained: Some(retained),
                    nll: Some(m.nll),
                    rmse: Some(m.rmse),
                    rce: Some(m.rce),
                    note: None,
                })
            };
            run().unwrap_or_else(|e| failed(t, format!("failed: {e}")))
        })
        .collect()
}
