//! Fixed-length vectorization of compressed series, and the two linear
//! projectors: PCA (high variance) and TICA (high lagged autocorrelation).

use log::warn;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::RleSequence;

pub const DEFAULT_SEQ_LEN: usize = 512;
pub const DEFAULT_LATENT_DIM: usize = 8;
pub const DEFAULT_LAG: usize = 1;
pub const TICA_REGULARIZATION: f64 = 1e-6;
const EIGEN_TOLERANCE: f64 = 1e-10;

/// `sign(v) * ln(1 + |v|)`.
pub fn signed_log(v: f64) -> f64 {
    v.signum() * v.abs().ln_1p()
}

/// Mean and standard deviation of signed-log values over a training corpus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub mean: f64,
    pub std: f64,
}

impl Default for CorpusStats {
    fn default() -> Self {
        Self { mean: 0.0, std: 1.0 }
    }
}

fn recent(values: &[i64], len: usize) -> &[i64] {
    &values[values.len().saturating_sub(len)..]
}

impl CorpusStats {
    /// Statistics over the most recent `len` entries of each sequence, the
    /// part that is actually fed downstream.
    pub fn fit<'a>(seqs: impl IntoIterator<Item = &'a RleSequence>, len: usize) -> Self {
        let (mut n, mut sum, mut sum_sq) = (0usize, 0.0, 0.0);
        for s in seqs {
            for &v in recent(&s.values, len) {
                let x = signed_log(v as f64);
                n += 1;
                sum += x;
                sum_sq += x * x;
            }
        }
        if n == 0 {
            return Self::default();
        }
        let mean = sum / n as f64;
        let var = (sum_sq / n as f64 - mean * mean).max(0.0);
        let std = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
        Self { mean, std }
    }
}

/// `L` normalized entries; the first `valid` are data, the rest padding.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedVector {
    pub values: Vec<f64>,
    pub valid: usize,
}

impl FixedVector {
    pub fn data(&self) -> &[f64] {
        &self.values[..self.valid]
    }
}

/// Signed-log, z-score, then keep the most recent `len` entries and pad the
/// right with zeros.
pub fn vectorize(rle: &RleSequence, len: usize, stats: &CorpusStats) -> Result<FixedVector> {
    if len == 0 {
        return Err(Error::Config("sequence length must be positive".into()));
    }
    let kept = recent(&rle.values, len);
    let mut values: Vec<f64> = kept
        .iter()
        .map(|&v| (signed_log(v as f64) - stats.mean) / stats.std)
        .collect();
    let valid = values.len();
    values.resize(len, 0.0);
    Ok(FixedVector { values, valid })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProjectorKind {
    Pca,
    Tica,
}

impl ProjectorKind {
    pub fn name(self) -> &'static str {
        match self {
            ProjectorKind::Pca => "pca",
            ProjectorKind::Tica => "tica",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearProjector {
    pub kind: ProjectorKind,
    pub mean: Vec<f64>,
    /// `L x d`, one component per column.
    pub basis: DMatrix<f64>,
    /// Eigenvalue of each retained component, non-increasing.
    pub eigenvalues: Vec<f64>,
    /// Sum of all covariance eigenvalues (PCA) for explained-variance ratios.
    pub total_variance: f64,
    pub lag: usize,
    pub stats: CorpusStats,
}

impl LinearProjector {
    pub fn input_len(&self) -> usize {
        self.basis.nrows()
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        let centered = DVector::from_iterator(
            x.len(),
            x.iter().zip(&self.mean).map(|(v, m)| v - m),
        );
        (self.basis.transpose() * centered).iter().copied().collect()
    }

    pub fn explained_variance_ratio(&self) -> Vec<f64> {
        if self.total_variance <= 0.0 {
            return vec![0.0; self.eigenvalues.len()];
        }
        self.eigenvalues.iter().map(|e| e / self.total_variance).collect()
    }
}

fn to_matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    let l = rows.first().map(Vec::len).unwrap_or(0);
    if rows.iter().any(|r| r.len() != l) {
        return Err(Error::Config("rows have differing lengths".into()));
    }
    Ok(DMatrix::from_fn(n, l, |i, j| rows[i][j]))
}

fn column_means(x: &DMatrix<f64>) -> Vec<f64> {
    let n = x.nrows() as f64;
    x.column_iter().map(|c| c.sum() / n).collect()
}

fn center(x: &DMatrix<f64>, mean: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)] - mean[j])
}

/// Flip each column so its largest-magnitude entry is positive.
fn fix_signs(basis: &mut DMatrix<f64>) {
    for mut col in basis.column_iter_mut() {
        let mut best = 0usize;
        for (i, v) in col.iter().enumerate() {
            if v.abs() > col[best].abs() {
                best = i;
            }
        }
        if col[best] < 0.0 {
            col.neg_mut();
        }
    }
}

/// Eigenpairs of a symmetric matrix, sorted by descending eigenvalue.
fn sorted_eigen(m: DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let eig = SymmetricEigen::try_new(m, EIGEN_TOLERANCE, 0)
        .ok_or_else(|| Error::Numerical("symmetric eigensolver did not converge".into()))?;
    if eig.eigenvalues.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite eigenvalue".into()));
    }
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(eig.eigenvectors.nrows(), order.len(), |r, c| {
        eig.eigenvectors[(r, order[c])]
    });
    Ok((values, vectors))
}

pub fn pca_fit(rows: &[Vec<f64>], d: usize) -> Result<LinearProjector> {
    let x = to_matrix(rows)?;
    let (n, l) = x.shape();
    if d == 0 || n < d || d > l {
        return Err(Error::Config(format!(
            "PCA needs n >= d >= 1 and d <= L (n={n}, d={d}, L={l})"
        )));
    }
    let mean = column_means(&x);
    let xc = center(&x, &mean);
    let denom = if n > 1 { (n - 1) as f64 } else { 1.0 };
    let mut cov = xc.transpose() * &xc / denom;
    cov = (&cov + cov.transpose()) * 0.5;
    let (values, vectors) = sorted_eigen(cov)?;
    let scale = values.first().copied().unwrap_or(0.0).abs().max(1.0);
    let positive = values.iter().filter(|&&v| v > 1e-12 * scale).count();
    if positive < d {
        warn!("PCA: only {positive} positive eigenvalues for d={d}; padding with null-space directions");
    }
    let mut basis = vectors.columns(0, d).into_owned();
    fix_signs(&mut basis);
    Ok(LinearProjector {
        kind: ProjectorKind::Pca,
        mean,
        basis,
        eigenvalues: values[..d].iter().map(|v| v.max(0.0)).collect(),
        total_variance: values.iter().map(|v| v.max(0.0)).sum(),
        lag: 0,
        stats: CorpusStats::default(),
    })
}

/// Top-`d` solutions of `C_lag v = λ (C_0 + εI) v` with `C_lag` symmetrized.
/// Returned vectors satisfy `vᵀ (C_0 + εI) v = 1`.
pub fn tica_solve(c0: &DMatrix<f64>, clag: &DMatrix<f64>, d: usize) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let l = c0.nrows();
    if d == 0 || d > l {
        return Err(Error::Config(format!("TICA dimension {d} outside 1..={l}")));
    }
    let reg = c0 + DMatrix::identity(l, l) * TICA_REGULARIZATION;
    let reg = (&reg + reg.transpose()) * 0.5;
    let sym = (clag + clag.transpose()) * 0.5;
    let chol = reg
        .cholesky()
        .ok_or_else(|| Error::Numerical("regularized C_0 is not positive definite".into()))?;
    let lower = chol.l();
    let linv = lower
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("singular Cholesky factor".into()))?;
    let m = &linv * sym * linv.transpose();
    let m = (&m + m.transpose()) * 0.5;
    let (values, w) = sorted_eigen(m)?;
    let mut basis = linv.transpose() * w.columns(0, d);
    if basis.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite TICA component".into()));
    }
    fix_signs(&mut basis);
    Ok((values[..d].to_vec(), basis))
}

/// Rows are consecutive frames of one trajectory; the lagged covariance
/// pairs frame `i` with frame `i + lag`.
pub fn tica_fit(rows: &[Vec<f64>], d: usize, lag: usize) -> Result<LinearProjector> {
    let x = to_matrix(rows)?;
    let (n, l) = x.shape();
    if lag == 0 || lag >= l {
        return Err(Error::Config(format!("TICA lag must satisfy L > lag >= 1 (lag={lag}, L={l})")));
    }
    if lag >= n {
        return Err(Error::Config(format!("TICA needs more than lag={lag} rows, got {n}")));
    }
    if d == 0 || d > l {
        return Err(Error::Config(format!("TICA needs 1 <= d <= L (d={d}, L={l})")));
    }
    let mean = column_means(&x);
    let xc = center(&x, &mean);
    let m = n - lag;
    let head = xc.rows(0, m);
    let tail = xc.rows(lag, m);
    let c0 = xc.transpose() * &xc / n as f64;
    let clag = head.transpose() * tail / m as f64;
    let (eigenvalues, basis) = tica_solve(&c0, &clag, d)?;
    Ok(LinearProjector {
        kind: ProjectorKind::Tica,
        mean,
        basis,
        eigenvalues,
        total_variance: 0.0,
        lag,
        stats: CorpusStats::default(),
    })
}
