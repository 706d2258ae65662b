//! Accuracy and calibration metrics for regression predictive distributions.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::predictive::{IntervalOptions, PredictiveDist};

/// Nominal levels `0.50, 0.55, …, 0.95` used for the calibration error.
pub fn default_levels() -> Vec<f64> {
    (0..10).map(|k| (50 + 5 * k) as f64 / 100.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricOptions {
    pub levels: Vec<f64>,
    pub interval: IntervalOptions,
}

impl Default for MetricOptions {
    fn default() -> Self {
        Self {
            levels: default_levels(),
            interval: IntervalOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rmse: f64,
    pub nll: f64,
    pub ecp95: f64,
    pub wcpi95: f64,
    pub rce: f64,
    /// `(α_k, ĉ(α_k))` for every nominal level.
    pub coverage: Vec<(f64, f64)>,
}

impl MetricReport {
    /// Flat `key=value` lines.
    pub fn to_kv_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.scalars() {
            let _ = writeln!(s, "{k}={v}");
        }
        for (a, c) in &self.coverage {
            let _ = writeln!(s, "coverage@{a:.2}={c}");
        }
        s
    }

    pub fn scalars(&self) -> [(&'static str, f64); 5] {
        [
            ("rmse", self.rmse),
            ("nll", self.nll),
            ("ecp95", self.ecp95),
            ("wcpi95", self.wcpi95),
            ("rce", self.rce),
        ]
    }
}

fn check_lengths(n_dists: usize, n_targets: usize) -> Result<()> {
    if n_dists != n_targets {
        return Err(Error::Shape(format!(
            "{n_dists} predictive distributions for {n_targets} targets"
        )));
    }
    if n_targets == 0 {
        return Err(Error::InvalidData("metrics need at least one target".into()));
    }
    Ok(())
}

pub fn rmse(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_lengths(yhat.len(), y.len())?;
    let mse = y.iter().zip(yhat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64;
    Ok(mse.sqrt())
}

/// Mean negative log predictive density.
pub fn nll(dists: &[PredictiveDist], y: &[f64]) -> Result<f64> {
    check_lengths(dists.len(), y.len())?;
    let total = dists
        .iter()
        .zip(y)
        .map(|(d, &t)| d.log_pdf(t))
        .sum::<Result<f64>>()?;
    Ok(-total / y.len() as f64)
}

fn all_intervals(dists: &[PredictiveDist], levels: &[f64], opts: IntervalOptions) -> Result<Vec<Vec<(f64, f64)>>> {
    dists
        .par_iter()
        .enumerate()
        .map(|(i, d)| d.intervals(levels, opts, i as u64))
        .collect()
}

fn covered(y: f64, (lo, hi): (f64, f64)) -> bool {
    lo <= y && y <= hi
}

/// Fraction of targets inside their central `level` interval.
pub fn coverage(dists: &[PredictiveDist], y: &[f64], level: f64, opts: IntervalOptions) -> Result<f64> {
    check_lengths(dists.len(), y.len())?;
    let iv = all_intervals(dists, &[level], opts)?;
    Ok(iv.iter().zip(y).filter(|(i, &t)| covered(t, i[0])).count() as f64 / y.len() as f64)
}

/// Mean width of the central `level` intervals.
pub fn wcpi(dists: &[PredictiveDist], level: f64, opts: IntervalOptions) -> Result<f64> {
    if dists.is_empty() {
        return Err(Error::InvalidData("metrics need at least one target".into()));
    }
    let iv = all_intervals(dists, &[level], opts)?;
    Ok(iv.iter().map(|i| i[0].1 - i[0].0).sum::<f64>() / dists.len() as f64)
}

/// Mean of `|ĉ(α_k) − α_k|` over the nominal levels.
pub fn rce(dists: &[PredictiveDist], y: &[f64], levels: &[f64], opts: IntervalOptions) -> Result<f64> {
    check_lengths(dists.len(), y.len())?;
    let table = coverage_table(&all_intervals(dists, levels, opts)?, y, levels);
    rce_from_table(&table)
}

/// Calibration error from a precomputed `(α, ĉ(α))` table.
pub fn rce_from_table(table: &[(f64, f64)]) -> Result<f64> {
    if table.is_empty() {
        return Err(Error::Config("calibration error needs at least one level".into()));
    }
    Ok(table.iter().map(|(a, c)| (c - a).abs()).sum::<f64>() / table.len() as f64)
}

fn coverage_table(intervals: &[Vec<(f64, f64)>], y: &[f64], levels: &[f64]) -> Vec<(f64, f64)> {
    levels
        .iter()
        .enumerate()
        .map(|(k, &a)| {
            let hits = intervals.iter().zip(y).filter(|(iv, &t)| covered(t, iv[k])).count();
            (a, hits as f64 / y.len() as f64)
        })
        .collect()
}

/// Computes every metric in one pass over the intervals.
pub fn evaluate(dists: &[PredictiveDist], y: &[f64], opts: &MetricOptions) -> Result<MetricReport> {
    check_lengths(dists.len(), y.len())?;
    if opts.levels.is_empty() {
        return Err(Error::Config("calibration error needs at least one level".into()));
    }
    let mut levels = opts.levels.clone();
    levels.push(0.95);
    let intervals = all_intervals(dists, &levels, opts.interval)?;
    let means: Vec<f64> = dists.iter().map(PredictiveDist::mean).collect();
    let table = coverage_table(&intervals, y, &levels);
    let (ecp_level, ecp95) = table[table.len() - 1];
    debug_assert_eq!(ecp_level, 0.95);
    let wcpi95 = intervals
        .iter()
        .map(|iv| iv[levels.len() - 1].1 - iv[levels.len() - 1].0)
        .sum::<f64>()
        / y.len() as f64;
    let coverage = table[..table.len() - 1].to_vec();
    Ok(MetricReport {
        rmse: rmse(y, &means)?,
        nll: nll(dists, y)?,
        ecp95,
        wcpi95,
        rce: rce_from_table(&coverage)?,
        coverage,
    })
}
