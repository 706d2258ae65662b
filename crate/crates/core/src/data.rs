//! Dataset loading, standardization, splitting and the synthetic cubic problem.

use std::io::Read;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Name used for the built-in synthetic problem.
pub const SYNTHETIC_CUBIC: &str = "synthetic-cubic";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    /// `N × D` inputs.
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    /// Set when `x` and `y` are on the standardized scale.
    pub standardizer: Option<Standardizer>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::Shape(format!("{} input rows for {} targets", x.nrows(), y.len())));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("dataset contains NaN or infinite values".into()));
        }
        Ok(Self {
            name: name.into(),
            x,
            y,
            standardizer: None,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_dims(&self) -> usize {
        self.x.ncols()
    }

    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        Dataset {
            name: self.name.clone(),
            x: self.x.select_rows(rows),
            y: self.y.select_rows(rows),
            standardizer: self.standardizer.clone(),
        }
    }
}

/// Per-column affine normalization fitted on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    /// Original column indices kept after dropping constant columns.
    pub kept_columns: Vec<usize>,
    pub x_mean: Vec<f64>,
    pub x_std: Vec<f64>,
    pub y_mean: f64,
    pub y_std: f64,
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl Standardizer {
    /// Fits means and population standard deviations. Constant input
    /// columns are an error unless `drop_constant` is set.
    pub fn fit(x: &DMatrix<f64>, y: &DVector<f64>, drop_constant: bool) -> Result<Self> {
        if x.nrows() < 2 {
            return Err(Error::InvalidData("standardization needs at least two rows".into()));
        }
        let mut s = Standardizer {
            kept_columns: Vec::new(),
            x_mean: Vec::new(),
            x_std: Vec::new(),
            y_mean: 0.0,
            y_std: 0.0,
        };
        for (j, col) in x.column_iter().enumerate() {
            let (m, sd) = mean_std(col.iter().copied());
            if sd <= 0.0 {
                if drop_constant {
                    log::warn!("dropping constant input column {j}");
                    continue;
                }
                return Err(Error::InvalidData(format!(
                    "input column {j} is constant on the training rows (use --drop-constant)"
                )));
            }
            s.kept_columns.push(j);
            s.x_mean.push(m);
            s.x_std.push(sd);
        }
        if s.kept_columns.is_empty() {
            return Err(Error::InvalidData("no non-constant input columns".into()));
        }
        let (m, sd) = mean_std(y.iter().copied());
        if sd <= 0.0 {
            return Err(Error::InvalidData("target is constant on the training rows".into()));
        }
        s.y_mean = m;
        s.y_std = sd;
        Ok(s)
    }

    pub fn transform_x(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if let Some(&max) = self.kept_columns.iter().max() {
            if max >= x.ncols() {
                return Err(Error::Shape(format!(
                    "standardizer expects at least {} columns, got {}",
                    max + 1,
                    x.ncols()
                )));
            }
        }
        let mut out = x.select_columns(&self.kept_columns);
        for (j, mut col) in out.column_iter_mut().enumerate() {
            col.apply(|v| *v = (*v - self.x_mean[j]) / self.x_std[j]);
        }
        Ok(out)
    }

    pub fn transform_y(&self, y: &DVector<f64>) -> DVector<f64> {
        y.map(|v| (v - self.y_mean) / self.y_std)
    }

    pub fn inverse_y(&self, y: &DVector<f64>) -> DVector<f64> {
        y.map(|v| v * self.y_std + self.y_mean)
    }

    /// Inverse of [`Standardizer::transform_x`] on the kept columns.
    pub fn inverse_x(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = x.clone();
        for (j, mut col) in out.column_iter_mut().enumerate() {
            col.apply(|v| *v = *v * self.x_std[j] + self.x_mean[j]);
        }
        out
    }

    pub fn apply(&self, ds: &Dataset) -> Result<Dataset> {
        Ok(Dataset {
            name: ds.name.clone(),
            x: self.transform_x(&ds.x)?,
            y: self.transform_y(&ds.y),
            standardizer: Some(self.clone()),
        })
    }
}

/// Reads a headed CSV. The target is the named column, or the last column.
pub fn load_csv(path: impl AsRef<Path>, target: Option<&str>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    read_csv(file, target, &name)
}

/// Rows and columns in errors are 1-based and count the header as row 1.
pub fn read_csv<R: Read>(reader: R, target: Option<&str>, name: &str) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Format {
            row: 1,
            column: 0,
            message: e.to_string(),
        })?
        .clone();
    if headers.len() < 2 {
        return Err(Error::Format {
            row: 1,
            column: 0,
            message: "need at least one input column and a target".into(),
        });
    }
    let target_idx = match target {
        Some(t) => headers.iter().position(|h| h == t).ok_or_else(|| Error::Format {
            row: 1,
            column: 0,
            message: format!("target column {t:?} not found"),
        })?,
        None => headers.len() - 1,
    };
    let n_cols = headers.len();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let row = k + 2;
        let rec = rec.map_err(|e| Error::Format {
            row,
            column: 0,
            message: e.to_string(),
        })?;
        if rec.len() != n_cols {
            return Err(Error::Format {
                row,
                column: rec.len().min(n_cols) + 1,
                message: format!("expected {n_cols} fields, found {}", rec.len()),
            });
        }
        for (j, cell) in rec.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| Error::Format {
                row,
                column: j + 1,
                message: format!("not a number: {cell:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Format {
                    row,
                    column: j + 1,
                    message: format!("non-finite value {cell:?}"),
                });
            }
            if j == target_idx {
                ys.push(v);
            } else {
                xs.push(v);
            }
        }
    }
    if ys.is_empty() {
        return Err(Error::Format {
            row: 2,
            column: 0,
            message: "no data rows".into(),
        });
    }
    let x = DMatrix::from_row_slice(ys.len(), n_cols - 1, &xs);
    Dataset::new(name, x, DVector::from_vec(ys))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitOptions {
    pub train_frac: f64,
    pub seed: u64,
    pub standardize: bool,
    pub drop_constant: bool,
}

impl Default for SplitOptions {
    fn default() -> Self {
        Self {
            train_frac: 0.9,
            seed: 0,
            standardize: true,
            drop_constant: false,
        }
    }
}

/// Seeded permutation of `0..n`.
pub fn permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx
}

/// Random train/test split; the standardizer is fitted on the train side.
pub fn split(ds: &Dataset, opts: &SplitOptions) -> Result<(Dataset, Dataset)> {
    if !(opts.train_frac > 0.0 && opts.train_frac < 1.0) {
        return Err(Error::Config(format!("train fraction must lie in (0, 1), got {}", opts.train_frac)));
    }
    let n = ds.n_samples();
    let n_train = (opts.train_frac * n as f64).round() as usize;
    if n_train == 0 || n_train >= n {
        return Err(Error::InvalidData(format!(
            "split of {n} rows at fraction {} leaves an empty side",
            opts.train_frac
        )));
    }
    let idx = permutation(n, opts.seed);
    let train = ds.select_rows(&idx[..n_train]);
    let test = ds.select_rows(&idx[n_train..]);
    if !opts.standardize {
        return Ok((train, test));
    }
    let s = Standardizer::fit(&train.x, &train.y, opts.drop_constant)?;
    Ok((s.apply(&train)?, s.apply(&test)?))
}

/// Contiguous folds over a seeded permutation. Returns `(train, validation)` row sets.
pub fn kfold_indices(n: usize, k: usize, seed: u64) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    if k < 2 || k > n {
        return Err(Error::Config(format!("cannot make {k} folds from {n} rows")));
    }
    let idx = permutation(n, seed);
    Ok((0..k)
        .map(|f| {
            let lo = f * n / k;
            let hi = (f + 1) * n / k;
            let val = idx[lo..hi].to_vec();
            let train = idx[..lo].iter().chain(&idx[hi..]).copied().collect();
            (train, val)
        })
        .collect())
}

pub const CUBIC_TRAIN: usize = 20;
pub const CUBIC_TEST: usize = 100;
pub const CUBIC_NOISE_STD: f64 = 3.0;

/// `y = x³ + ε`, 20 train inputs on `[−4, 4]`, 100 test inputs on `[−5, 5]`.
pub fn gen_cubic(seed: u64) -> (Dataset, Dataset) {
    gen_cubic_with_noise(seed, CUBIC_NOISE_STD)
}

pub fn gen_cubic_with_noise(seed: u64, noise_std: f64) -> (Dataset, Dataset) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_std.max(0.0)).expect("finite noise level");
    let mut draw = |n: usize, half: f64| {
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-half..=half)).collect();
        let y: Vec<f64> = x.iter().map(|v| v * v * v + noise.sample(&mut rng)).collect();
        Dataset {
            name: SYNTHETIC_CUBIC.into(),
            x: DMatrix::from_vec(n, 1, x),
            y: DVector::from_vec(y),
            standardizer: None,
        }
    };
    let train = draw(CUBIC_TRAIN, 4.0);
    let test = draw(CUBIC_TEST, 5.0);
    (train, test)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn read(s: &str, target: Option<&str>) -> Result<Dataset> {
        read_csv(s.as_bytes(), target, "t")
    }

    #[test]
    fn small_csv() {
        let ds = read("a,b,y\n1,2,3\n4,5,6\n7,8,9", Some("y")).unwrap();
        assert_eq!((ds.n_samples(), ds.n_dims()), (3, 2));
        assert_eq!(ds.y.as_slice(), &[3.0, 6.0, 9.0]);
        assert_eq!(ds.x[(2, 1)], 8.0);
        let first = read("y,a,b\n1,2,3\n4,5,6", Some("y")).unwrap();
        assert_eq!(first.y.as_slice(), &[1.0, 4.0]);
        let last = read("a,b,y\n1,2,3\n4,5,6", None).unwrap();
        assert_eq!(last.y.as_slice(), &[3.0, 6.0]);
    }

    #[test]
    fn missing_target() {
        assert!(matches!(read("a,b,y\n1,2,3", Some("z")), Err(Error::Format { .. })));
    }

    #[test]
    fn nan_token_located() {
        match read("a,b,y\n1,2,3\n4,NaN,6", Some("y")) {
            Err(Error::Format { row, column, .. }) => assert_eq!((row, column), (3, 2)),
            other => panic!("{other:?}"),
        }
        match read("a,b,y\n1,x,3", None) {
            Err(Error::Format { row, column, .. }) => assert_eq!((row, column), (2, 2)),
            other => panic!("{other:?}"),
        }
        assert!(matches!(read("a,b,y\n1,2", None), Err(Error::Format { row: 2, .. })));
    }

    fn ramp(n: usize) -> Dataset {
        let x = DMatrix::from_fn(n, 2, |i, j| (i * (j + 2)) as f64 + (i as f64 * 0.7).sin());
        let y = DVector::from_fn(n, |i, _| (i as f64).sqrt());
        Dataset::new("ramp", x, y).unwrap()
    }

    #[test]
    fn split_sizes_and_determinism() {
        let ds = ramp(10);
        let opts = SplitOptions { seed: 4, ..Default::default() };
        let (tr, te) = split(&ds, &opts).unwrap();
        assert_eq!((tr.n_samples(), te.n_samples()), (9, 1));
        let (tr2, te2) = split(&ds, &opts).unwrap();
        assert_eq!(tr, tr2);
        assert_eq!(te, te2);
        assert!(split(&ds, &SplitOptions { train_frac: 0.99, ..opts }).is_err());
        assert!(matches!(split(&ds, &SplitOptions { train_frac: 1.0, ..opts }), Err(Error::Config(_))));
    }

    #[test]
    fn train_standardized() {
        let ds = ramp(30);
        let (tr, te) = split(&ds, &SplitOptions::default()).unwrap();
        for col in tr.x.column_iter() {
            let (m, s) = mean_std(col.iter().copied());
            assert!(m.abs() < 1e-10 && (s - 1.0).abs() < 1e-10);
        }
        let (m, s) = mean_std(tr.y.iter().copied());
        assert!(m.abs() < 1e-10 && (s - 1.0).abs() < 1e-10);
        assert_eq!(te.standardizer, tr.standardizer);
    }

    #[test]
    fn constant_columns() {
        let x = DMatrix::from_fn(12, 2, |i, j| if j == 0 { 1.0 } else { i as f64 });
        let y = DVector::from_fn(12, |i, _| i as f64 * 2.0);
        let ds = Dataset::new("c", x, y).unwrap();
        assert!(matches!(split(&ds, &SplitOptions::default()), Err(Error::InvalidData(_))));
        let (tr, te) = split(&ds, &SplitOptions { drop_constant: true, ..Default::default() }).unwrap();
        assert_eq!((tr.n_dims(), te.n_dims()), (1, 1));
    }

    #[test]
    fn distinct_seeds_differ() {
        assert_ne!(permutation(20, 1), permutation(20, 2));
    }

    #[test]
    fn folds_partition() {
        let folds = kfold_indices(23, 5, 9).unwrap();
        let mut all: Vec<usize> = folds.iter().flat_map(|(_, v)| v.clone()).collect();
        all.sort_unstable();
        assert_eq!(all, (0..23).collect::<Vec<_>>());
        for (tr, va) in &folds {
            assert_eq!(tr.len() + va.len(), 23);
        }
        assert_eq!(folds, kfold_indices(23, 5, 9).unwrap());
        assert!(kfold_indices(3, 5, 0).is_err());
    }

    #[test]
    fn cubic_protocol() {
        let (tr, te) = gen_cubic(3);
        assert_eq!((tr.n_samples(), tr.n_dims()), (20, 1));
        assert_eq!((te.n_samples(), te.n_dims()), (100, 1));
        assert!(tr.x.iter().all(|v| (-4.0..=4.0).contains(v)));
        assert!(te.x.iter().all(|v| (-5.0..=5.0).contains(v)));
        assert!(tr.standardizer.is_none());
        let (a, b) = gen_cubic_with_noise(3, 0.0);
        for ds in [a, b] {
            for (x, y) in ds.x.iter().zip(ds.y.iter()) {
                assert_eq!(*y, x * x * x);
            }
        }
        assert_eq!(gen_cubic(3), gen_cubic(3));
        assert_ne!(gen_cubic(3).0.y, gen_cubic(4).0.y);
    }

    proptest::proptest! {
        #[test]
        fn standardize_roundtrip(vals in proptest::collection::vec(-1e3f64..1e3, 6..40), shift in -50.0f64..50.0) {
            let n = vals.len() / 2;
            let x = DMatrix::from_fn(n, 2, |i, j| vals[2 * i + j] + shift * j as f64 + i as f64 * 1e-3);
            let y = DVector::from_fn(n, |i, _| vals[2 * i] * 0.5 - shift + i as f64);
            let s = Standardizer::fit(&x, &y, false).unwrap();
            let back_x = s.inverse_x(&s.transform_x(&x).unwrap());
            let back_y = s.inverse_y(&s.transform_y(&y));
            let scale = 1.0 + x.amax().max(y.amax());
            proptest::prop_assert!((back_x - &x).amax() <= 1e-12 * scale);
            proptest::prop_assert!((back_y - &y).amax() <= 1e-12 * scale);
        }
    }
}
