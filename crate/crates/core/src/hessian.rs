//! Curvature of the regularized loss at the MAP estimate and its
//! truncated eigendecomposition.
//!
//! | variant  | stored as                  | covers              |
//! |----------|----------------------------|---------------------|
//! | Full     | dense `DIR×DIR`            | all cores           |
//! | GGN      | dense `DIR×DIR`            | all cores           |
//! | Block    | `D` dense `IR×IR` blocks   | all cores           |
//! | Diag     | length-`DIR` vector        | all cores           |
//! | LastCore | one `IR×IR` block          | core `D` only       |
//!
//! Training cost is `O(N(DIR)²)` for the dense forms, `O(NDI²R²)` for Block,
//! `O(NDIR)` for Diag and `O(NI²R²)` for LastCore. The structured forms never
//! allocate a `DIR×DIR` matrix.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::cpd::{hadamard_except, row_khatri_rao, row_sums, CpdModel, FeatureSet};
use crate::error::{Error, Result};

/// Default cap on `D·I·R` for the dense variants.
pub const DENSE_HESSIAN_CAP: usize = 5000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HessianVariant {
    Full,
    Ggn,
    Block,
    Diag,
    #[serde(rename = "last")]
    LastCore,
}

impl HessianVariant {
    pub const ALL: [HessianVariant; 5] = [
        HessianVariant::Full,
        HessianVariant::Ggn,
        HessianVariant::Block,
        HessianVariant::Diag,
        HessianVariant::LastCore,
    ];

    pub fn is_dense(self) -> bool {
        matches!(self, HessianVariant::Full | HessianVariant::Ggn)
    }

    pub fn name(self) -> &'static str {
        match self {
            HessianVariant::Full => "full",
            HessianVariant::Ggn => "ggn",
            HessianVariant::Block => "block",
            HessianVariant::Diag => "diag",
            HessianVariant::LastCore => "last",
        }
    }
}

impl fmt::Display for HessianVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for HessianVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "full" => Ok(HessianVariant::Full),
            "ggn" => Ok(HessianVariant::Ggn),
            "block" => Ok(HessianVariant::Block),
            "diag" => Ok(HessianVariant::Diag),
            "last" | "lastcore" | "last_core" | "last-core" => Ok(HessianVariant::LastCore),
            other => Err(Error::Config(format!("unknown hessian variant '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum HessianBlocks {
    Dense(DMatrix<f64>),
    Blocks(Vec<DMatrix<f64>>),
    Diagonal(DVector<f64>),
    LastCore(DMatrix<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HessianMatrix {
    pub variant: HessianVariant,
    pub blocks: HessianBlocks,
    pub beta: f64,
    pub gamma: f64,
    pub n_dims: usize,
    pub core_len: usize,
}

impl HessianMatrix {
    /// Index in `v` of the first covered parameter.
    pub fn offset(&self) -> usize {
        match self.variant {
            HessianVariant::LastCore => (self.n_dims - 1) * self.core_len,
            _ => 0,
        }
    }

    /// Number of covered parameters.
    pub fn dim(&self) -> usize {
        match self.variant {
            HessianVariant::LastCore => self.core_len,
            _ => self.n_dims * self.core_len,
        }
    }

    /// Dense form over the covered parameters. Test and inspection helper.
    pub fn to_dense(&self) -> DMatrix<f64> {
        match &self.blocks {
            HessianBlocks::Dense(h) | HessianBlocks::LastCore(h) => h.clone(),
            HessianBlocks::Diagonal(d) => DMatrix::from_diagonal(d),
            HessianBlocks::Blocks(bs) => {
                let n = self.dim();
                let mut h = DMatrix::zeros(n, n);
                for (d, b) in bs.iter().enumerate() {
                    let o = d * self.core_len;
                    h.view_mut((o, o), b.shape()).copy_from(b);
                }
                h
            }
        }
    }
}

struct Parts {
    proj: Vec<DMatrix<f64>>,
    /// `A^(d)` for each core.
    design: Vec<DMatrix<f64>>,
}

fn parts(model: &CpdModel, fs: &FeatureSet, cores: impl Iterator<Item = usize>) -> Result<Parts> {
    let proj = model.projections(fs)?;
    let mut design = vec![DMatrix::zeros(0, 0); model.n_dims()];
    for d in cores {
        let z = hadamard_except(&proj, &[d]);
        design[d] = row_khatri_rao(&z, &fs.phi[d]);
    }
    Ok(Parts { proj, design })
}

fn check_inputs(model: &CpdModel, fs: &FeatureSet, y: &DVector<f64>, beta: f64, gamma: f64) -> Result<()> {
    if fs.n_samples() != y.len() {
        return Err(Error::Shape(format!(
            "{} targets for {} samples",
            y.len(),
            fs.n_samples()
        )));
    }
    if fs.n_dims() != model.n_dims() {
        return Err(Error::Shape("feature set / model dimension mismatch".into()));
    }
    if !beta.is_finite() || !gamma.is_finite() {
        return Err(Error::Config("beta and gamma must be finite".into()));
    }
    Ok(())
}

fn check_dense_cap(model: &CpdModel, cap: usize) -> Result<()> {
    let size = model.n_params();
    if size > cap {
        return Err(Error::TooLarge {
            what: "D·I·R",
            size,
            cap,
        });
    }
    Ok(())
}

fn ridge_gram(a: &DMatrix<f64>, beta: f64, gamma: f64) -> DMatrix<f64> {
    let mut h = a.tr_mul(a) * beta;
    for k in 0..h.nrows() {
        h[(k, k)] += gamma;
    }
    h
}

fn symmetrize(h: &mut DMatrix<f64>) {
    let n = h.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (h[(i, j)] + h[(j, i)]);
            h[(i, j)] = avg;
            h[(j, i)] = avg;
        }
    }
}

/// Exact Hessian of `J` assembled block by block.
///
/// Diagonal blocks are `βA_kᵀA_k + γI`. The `(k, r), (m, p)` sub-block for
/// `k ≠ m` is `β Φ_kᵀ T Φ_m` with
/// `T = diag(Z_k[:, r] ∘ Z_m[:, p]) + δ_rp diag((f − y) ∘ Z_{km}[:, r])`,
/// where `Z_{km}` is the Hadamard product of all projections except `k`, `m`.
pub fn full_hessian(
    model: &CpdModel,
    fs: &FeatureSet,
    y: &DVector<f64>,
    beta: f64,
    gamma: f64,
) -> Result<HessianMatrix> {
    full_hessian_capped(model, fs, y, beta, gamma, DENSE_HESSIAN_CAP)
}

pub fn full_hessian_capped(
    model: &CpdModel,
    fs: &FeatureSet,
    y: &DVector<f64>,
    beta: f64,
    gamma: f64,
    cap: usize,
) -> Result<HessianMatrix> {
    check_inputs(model, fs, y, beta, gamma)?;
    check_dense_cap(model, cap)?;
    let n_dims = model.n_dims();
    let (i_dim, rank, core_len) = (model.local_dim(), model.rank(), model.core_len());
    let Parts { proj, design } = parts(model, fs, 0..n_dims)?;
    let z_all: Vec<DMatrix<f64>> = (0..n_dims).map(|d| hadamard_except(&proj, &[d])).collect();
    let f = row_sums(&hadamard_except(&proj, &[]));
    let resid = &f - y;
    let n = fs.n_samples();

    let mut h = DMatrix::zeros(model.n_params(), model.n_params());
    for k in 0..n_dims {
        let ok = k * core_len;
        h.view_mut((ok, ok), (core_len, core_len))
            .copy_from(&ridge_gram(&design[k], beta, gamma));
        for m in 0..n_dims {
            if m == k {
                continue;
            }
            let om = m * core_len;
            let z_km = hadamard_except(&proj, &[k, m]);
            let (phi_k, phi_m) = (&fs.phi[k], &fs.phi[m]);
            let mut scaled = DMatrix::zeros(n, i_dim);
            for r in 0..rank {
                for p in 0..rank {
                    // diag(T) for this (r, p) pair
                    let t = DVector::from_fn(n, |row, _| {
                        let mut v = z_all[k][(row, r)] * z_all[m][(row, p)];
                        if r == p {
                            v += resid[row] * z_km[(row, r)];
                        }
                        v
                    });
                    for row in 0..n {
                        for j in 0..i_dim {
                            scaled[(row, j)] = t[row] * phi_m[(row, j)];
                        }
                    }
                    let sub = phi_k.tr_mul(&scaled) * beta;
                    h.view_mut((ok + r * i_dim, om + p * i_dim), (i_dim, i_dim))
                        .copy_from(&sub);
                }
            }
        }
    }
    symmetrize(&mut h);
    Ok(HessianMatrix {
        variant: HessianVariant::Full,
        blocks: HessianBlocks::Dense(h),
        beta,
        gamma,
        n_dims,
        core_len,
    })
}

/// Generalized Gauss–Newton curvature `βAᵀA + γI`, `A = [A^(1), …, A^(D)]`.
pub fn ggn_hessian(
    model: &CpdModel,
    fs: &FeatureSet,
    y: &DVector<f64>,
    beta: f64,
    gamma: f64,
) -> Result<HessianMatrix> {
    ggn_hessian_capped(model, fs, y, beta, gamma, DENSE_HESSIAN_CAP)
}

pub fn ggn_hessian_capped(
    model: &CpdModel,
    fs: &FeatureSet,
    y: &DVector<f64>,
    beta: f64,
    gamma: f64,
    cap: usize,
) -> Result<HessianMatrix> {
    check_inputs(model, fs, y, beta, gamma)?;
    check_dense_cap(model, cap)?;
    let n_dims = model.n_dims();
    let core_len = model.core_len();
    let Parts { design, .. } = parts(model, fs, 0..n_dims)?;
    let mut a = DMatrix::zeros(fs.n_samples(), model.n_params());
    for (d, ad) in design.iter().enumerate() {
        a.columns_mut(d * core_len, core_len).copy_from(ad);
    }
    let mut h = ridge_gram(&a, beta, gamma);
    symmetrize(&mut h);
    Ok(HessianMatrix {
        variant: HessianVariant::Ggn,
        blocks: HessianBlocks::Dense(h),
        beta,
        gamma,
        n_dims,
        core_len,
    })
}

/// Block-diagonal, diagonal or last-core curvature.
pub fn structured_hessian(
    model: &CpdModel,
    fs: &FeatureSet,
    y: &DVector<f64>,
    beta: f64,
    gamma: f64,
    variant: HessianVariant,
) -> Result<HessianMatrix> {
    check_inputs(model, fs, y, beta, gamma)?;
    let n_dims = model.n_dims();
    let core_len = model.core_len();
    let blocks = match variant {
        HessianVariant::Block => {
            let Parts { design, .. } = parts(model, fs, 0..n_dims)?;
            HessianBlocks::Blocks(design.iter().map(|a| ridge_gram(a, beta, gamma)).collect())
        }
        HessianVariant::Diag => {
            let Parts { design, .. } = parts(model, fs, 0..n_dims)?;
            let mut diag = DVector::zeros(model.n_params());
            for (d, a) in design.iter().enumerate() {
                for (c, col) in a.column_iter().enumerate() {
                    diag[d * core_len + c] = beta * col.norm_squared() + gamma;
                }
            }
            HessianBlocks::Diagonal(diag)
        }
        HessianVariant::LastCore => {
            let last = n_dims - 1;
            let Parts { design, .. } = parts(model, fs, std::iter::once(last))?;
            HessianBlocks::LastCore(ridge_gram(&design[last], beta, gamma))
        }
        other => {
            return Err(Error::Config(format!(
                "{other} is not a structured variant"
            )))
        }
    };
    Ok(HessianMatrix {
        variant,
        blocks,
        beta,
        gamma,
        n_dims,
        core_len,
    })
}

/// Dispatches on `variant`; `dense_cap` bounds `D·I·R` for Full and GGN.
pub fn build_hessian(
    variant: HessianVariant,
    model: &CpdModel,
    fs: &FeatureSet,
    y: &DVector<f64>,
    beta: f64,
    gamma: f64,
    dense_cap: usize,
) -> Result<HessianMatrix> {
    match variant {
        HessianVariant::Full => full_hessian_capped(model, fs, y, beta, gamma, dense_cap),
        HessianVariant::Ggn => ggn_hessian_capped(model, fs, y, beta, gamma, dense_cap),
        _ => structured_hessian(model, fs, y, beta, gamma, variant),
    }
}

/// Eigenpairs of one symmetric block, eigenvalues descending. `offset` is
/// the position of the block's first coordinate in the parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigBlock {
    pub offset: usize,
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

impl EigBlock {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn retain(&self, t_hat: f64) -> EigBlock {
        let keep = self.values.iter().take_while(|&&l| l >= t_hat).count();
        EigBlock {
            offset: self.offset,
            values: self.values.rows(0, keep).into_owned(),
            vectors: self.vectors.columns(0, keep).into_owned(),
        }
    }
}

/// Complete eigendecomposition of a Hessian approximation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HessianSpectrum {
    pub variant: HessianVariant,
    pub offset: usize,
    pub dim: usize,
    pub blocks: Vec<EigBlock>,
}

impl HessianSpectrum {
    pub fn lambda_max(&self) -> f64 {
        self.blocks
            .iter()
            .filter_map(|b| b.values.iter().copied().next())
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn lambda_min(&self) -> f64 {
        self.blocks
            .iter()
            .filter_map(|b| b.values.iter().copied().last())
            .fold(f64::INFINITY, f64::min)
    }

    /// Keeps eigenpairs with `λ ≥ t_hat`.
    pub fn truncate(&self, t_hat: f64) -> Result<TruncatedEig> {
        if !t_hat.is_finite() {
            return Err(Error::Config(format!("threshold must be finite, got {t_hat}")));
        }
        let blocks = self
            .blocks
            .iter()
            .map(|b| b.retain(t_hat))
            .filter(|b| !b.is_empty())
            .collect();
        Ok(TruncatedEig {
            variant: self.variant,
            t_hat,
            offset: self.offset,
            dim: self.dim,
            blocks,
        })
    }
}

/// Retained eigenpairs `Ĥ = Σ_j λ_j u_j u_jᵀ` with every `λ_j ≥ t̂`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncatedEig {
    pub variant: HessianVariant,
    pub t_hat: f64,
    /// First covered parameter index.
    pub offset: usize,
    /// Number of covered parameters.
    pub dim: usize,
    pub blocks: Vec<EigBlock>,
}

impl TruncatedEig {
    /// Number of retained eigenpairs (`R̂`).
    pub fn rank(&self) -> usize {
        self.blocks.iter().map(EigBlock::len).sum()
    }

    /// All retained eigenvalues, descending.
    pub fn values(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.blocks.iter().flat_map(|b| b.values.iter().copied()).collect();
        v.sort_by(|a, b| b.total_cmp(a));
        v
    }

    /// `Ĥ` as a dense matrix over the covered parameters.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(self.dim, self.dim);
        for b in &self.blocks {
            let o = b.offset - self.offset;
            let n = b.vectors.nrows();
            let scaled = &b.vectors * DMatrix::from_diagonal(&b.values);
            let part = scaled * b.vectors.transpose();
            let mut view = h.view_mut((o, o), (n, n));
            view += part;
        }
        h
    }

    /// `gᵀ Ĥ⁺ g = Σ_j (u_jᵀ g)² / λ_j` for a gradient over all parameters.
    pub fn pinv_quadratic_form(&self, g: &DVector<f64>) -> f64 {
        self.blocks
            .iter()
            .map(|b| {
                let seg = g.rows(b.offset, b.vectors.nrows());
                let proj = b.vectors.tr_mul(&seg);
                proj.iter()
                    .zip(b.values.iter())
                    .map(|(p, l)| p * p / l)
                    .sum::<f64>()
            })
            .sum()
    }

    /// Adds `Σ_j λ_j^{-1/2} ε_j u_j` to `v`, drawing one `ε_j` per retained
    /// eigenpair from `noise`.
    pub fn add_scaled_noise(&self, v: &mut DVector<f64>, mut noise: impl FnMut() -> f64) {
        for b in &self.blocks {
            let coeffs = DVector::from_iterator(b.len(), b.values.iter().map(|l| noise() / l.sqrt()));
            let delta = &b.vectors * coeffs;
            let mut seg = v.rows_mut(b.offset, delta.len());
            seg += delta;
        }
    }
}

fn sym_eig(m: &DMatrix<f64>, offset: usize) -> Result<EigBlock> {
    let n = m.nrows();
    if n == 0 {
        return Ok(EigBlock {
            offset,
            values: DVector::zeros(0),
            vectors: DMatrix::zeros(0, 0),
        });
    }
    let eig = SymmetricEigen::try_new(m.clone(), f64::EPSILON, 100_000)
        .ok_or_else(|| Error::Numerical("symmetric eigensolver did not converge".into()))?;
    if eig.eigenvalues.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite eigenvalue".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let values = DVector::from_iterator(n, order.iter().map(|&j| eig.eigenvalues[j]));
    let mut vectors = DMatrix::zeros(n, n);
    for (c, &j) in order.iter().enumerate() {
        let mut col = eig.eigenvectors.column(j).into_owned();
        // sign convention: largest-magnitude entry positive
        let lead = col.iamax();
        if col[lead] < 0.0 {
            col.neg_mut();
        }
        vectors.set_column(c, &col);
    }
    Ok(EigBlock {
        offset,
        values,
        vectors,
    })
}

/// Full spectrum of `h`, block by block for the structured variants.
pub fn eig_decompose(h: &HessianMatrix) -> Result<HessianSpectrum> {
    let offset = h.offset();
    let blocks = match &h.blocks {
        HessianBlocks::Dense(m) | HessianBlocks::LastCore(m) => vec![sym_eig(m, offset)?],
        HessianBlocks::Blocks(bs) => bs
            .iter()
            .enumerate()
            .map(|(d, b)| sym_eig(b, d * h.core_len))
            .collect::<Result<Vec<_>>>()?,
        HessianBlocks::Diagonal(diag) => {
            if diag.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical("non-finite diagonal curvature".into()));
            }
            diag.iter()
                .enumerate()
                .map(|(k, &l)| EigBlock {
                    offset: k,
                    values: DVector::from_element(1, l),
                    vectors: DMatrix::from_element(1, 1, 1.0),
                })
                .collect()
        }
    };
    Ok(HessianSpectrum {
        variant: h.variant,
        offset,
        dim: h.dim(),
        blocks,
    })
}

/// Eigendecomposition keeping pairs with `λ ≥ t_hat` (ties retained).
pub fn truncated_eig(h: &HessianMatrix, t_hat: f64) -> Result<TruncatedEig> {
    eig_decompose(h)?.truncate(t_hat)
}
