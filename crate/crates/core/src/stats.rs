// SPDX-License-Identifier: MIT OR Apache-2.0

//! Streaming token moments and truncated eigendecomposition.
//!
//! [`StreamingMoments`] accumulates the mean and centered scatter of a token
//! stream in one pass (Welford update, Chan merge for shards). It can also
//! track the uncentered second moment about a fixed external center, which is
//! what the gate basis is fitted on.
//!
//! Covariances use the population divisor `n`.

use nalgebra::{DMatrix, DVector};

use crate::embstore::EmbeddingSet;
use crate::error::{check_dim, GloceError, Result};

/// Negative eigenvalues down to `-PSD_CLAMP * trace` are rounding noise and
/// clamp to zero; anything below is an error.
pub const PSD_CLAMP: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct StreamingMoments {
    n: u64,
    mean: DVector<f64>,
    scatter: DMatrix<f64>,
    residual_center: Option<DVector<f64>>,
    residual_sum: Option<DMatrix<f64>>,
}

impl StreamingMoments {
    pub fn new(dim: usize) -> Self {
        StreamingMoments {
            n: 0,
            mean: DVector::zeros(dim),
            scatter: DMatrix::zeros(dim, dim),
            residual_center: None,
            residual_sum: None,
        }
    }

    /// Also accumulate `Σ (x - center)(x - center)^T`.
    pub fn with_residual_center(center: DVector<f64>) -> Self {
        let dim = center.len();
        let mut m = StreamingMoments::new(dim);
        m.residual_sum = Some(DMatrix::zeros(dim, dim));
        m.residual_center = Some(center);
        m
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    /// Sum of centered outer products.
    pub fn scatter(&self) -> &DMatrix<f64> {
        &self.scatter
    }

    /// `(1/n) Σ (x - center)(x - center)^T`, if a center was configured.
    pub fn residual_second_moment(&self) -> Option<DMatrix<f64>> {
        let sum = self.residual_sum.as_ref()?;
        if self.n == 0 {
            return Some(sum.clone());
        }
        Some(sum / self.n as f64)
    }

    pub fn accumulate(&mut self, token: &[f64]) -> Result<()> {
        check_dim(self.dim(), token.len())?;
        let x = DVector::from_column_slice(token);
        self.n += 1;
        let n = self.n as f64;
        let delta = &x - &self.mean;
        self.mean.axpy(1.0 / n, &delta, 1.0);
        // symmetric form of delta (x - mean_new)^T
        self.scatter.ger((n - 1.0) / n, &delta, &delta, 1.0);
        if let (Some(c), Some(r)) = (&self.residual_center, &mut self.residual_sum) {
            let d = &x - c;
            r.ger(1.0, &d, &d, 1.0);
        }
        Ok(())
    }

    pub fn accumulate_f32(&mut self, token: &[f32]) -> Result<()> {
        let t: Vec<f64> = token.iter().map(|&v| v as f64).collect();
        self.accumulate(&t)
    }

    /// Folds a block of tokens (rows of `rows`) in with a single merge.
    pub fn accumulate_block(&mut self, rows: &DMatrix<f64>) -> Result<()> {
        check_dim(self.dim(), rows.ncols())?;
        if rows.nrows() == 0 {
            return Ok(());
        }
        let mut block = StreamingMoments::new(self.dim());
        block.n = rows.nrows() as u64;
        block.mean = rows.row_mean().transpose();
        let mut centered = rows.clone();
        for mut r in centered.row_iter_mut() {
            r -= block.mean.transpose();
        }
        block.scatter = centered.tr_mul(&centered);
        symmetrize(&mut block.scatter);
        if let Some(c) = &self.residual_center {
            let mut res = rows.clone();
            for mut r in res.row_iter_mut() {
                r -= c.transpose();
            }
            let mut sum = res.tr_mul(&res);
            symmetrize(&mut sum);
            block.residual_center = Some(c.clone());
            block.residual_sum = Some(sum);
        }
        self.merge(&block)
    }

    /// Adds every token of every pass of `set`.
    pub fn accumulate_set(&mut self, set: &EmbeddingSet) -> Result<()> {
        check_dim(self.dim(), set.dim)?;
        for pass in set.pass_iter() {
            let rows = DMatrix::from_row_iterator(
                set.tokens_per_pass,
                set.dim,
                pass.iter().map(|&v| v as f64),
            );
            self.accumulate_block(&rows)?;
        }
        Ok(())
    }

    /// Combines two accumulators as if their streams were concatenated.
    pub fn merge(&mut self, other: &StreamingMoments) -> Result<()> {
        check_dim(self.dim(), other.dim())?;
        if self.residual_center != other.residual_center {
            return Err(GloceError::InvalidConfig(
                "cannot merge accumulators with different residual centers".into(),
            ));
        }
        if other.n == 0 {
            return Ok(());
        }
        if self.n == 0 {
            *self = other.clone();
            return Ok(());
        }
        let na = self.n as f64;
        let nb = other.n as f64;
        let n = na + nb;
        let delta = &other.mean - &self.mean;
        self.mean.axpy(nb / n, &delta, 1.0);
        self.scatter += &other.scatter;
        self.scatter.ger(na * nb / n, &delta, &delta, 1.0);
        if let (Some(a), Some(b)) = (&mut self.residual_sum, &other.residual_sum) {
            *a += b;
        }
        self.n += other.n;
        Ok(())
    }

    pub fn finalize(&self) -> Result<ConceptStats> {
        if self.n == 0 {
            return Err(GloceError::EmptyAccumulator);
        }
        let mut cov = &self.scatter / self.n as f64;
        symmetrize(&mut cov);
        ConceptStats::from_covariance(self.mean.clone(), cov, self.n)
    }
}

/// Mean, covariance and descending eigensystem of one concept.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptStats {
    pub count: u64,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    /// Descending, non-negative.
    pub eigvals: DVector<f64>,
    /// Orthonormal columns matching `eigvals`.
    pub eigvecs: DMatrix<f64>,
}

impl ConceptStats {
    pub fn from_covariance(mean: DVector<f64>, cov: DMatrix<f64>, count: u64) -> Result<Self> {
        check_dim(mean.len(), cov.nrows())?;
        check_dim(mean.len(), cov.ncols())?;
        let (eigvals, eigvecs) = psd_eigen_desc(&cov)?;
        Ok(ConceptStats {
            count,
            mean,
            cov,
            eigvals,
            eigvecs,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn trace(&self) -> f64 {
        self.eigvals.sum()
    }

    /// Statistics of every token in `set`.
    pub fn from_set(set: &EmbeddingSet) -> Result<Self> {
        Self::from_sets(std::slice::from_ref(set))
    }

    /// Statistics of the pooled tokens of several sets.
    pub fn from_sets(sets: &[EmbeddingSet]) -> Result<Self> {
        let first = sets.first().ok_or(GloceError::EmptyAccumulator)?;
        let mut m = StreamingMoments::new(first.dim);
        for s in sets {
            m.accumulate_set(s)?;
        }
        m.finalize()
    }
}

/// Leading `r` eigenvectors.
pub fn top_components(stats: &ConceptStats, r: usize) -> Result<DMatrix<f64>> {
    let d = stats.dim();
    if r == 0 || r > d {
        return Err(GloceError::RankOutOfRange { rank: r, max: d });
    }
    Ok(stats.eigvecs.columns(0, r).into_owned())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectrumRow {
    pub index: usize,
    pub eigenvalue: f64,
    pub cumulative: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumReport {
    pub rows: Vec<SpectrumRow>,
    /// Set when the trace is zero; all fractions are then reported as 0.
    pub zero_trace: bool,
}

impl SpectrumReport {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("index\teigenvalue\tcumulative_energy\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{}\t{:.9e}\t{:.9}\n",
                r.index, r.eigenvalue, r.cumulative
            ));
        }
        out
    }

    pub fn energy_at(&self, k: usize) -> Option<f64> {
        self.rows.get(k.checked_sub(1)?).map(|r| r.cumulative)
    }
}

/// First `k` eigenvalues with their cumulative energy fraction.
pub fn spectrum_report(stats: &ConceptStats, k: usize) -> Result<SpectrumReport> {
    let d = stats.dim();
    if k > d {
        return Err(GloceError::RankOutOfRange { rank: k, max: d });
    }
    let total = stats.trace();
    let zero_trace = total <= 0.0;
    let mut acc = 0.0;
    let rows = (0..k)
        .map(|i| {
            let ev = stats.eigvals[i];
            acc += ev;
            let cumulative = if zero_trace {
                0.0
            } else {
                (acc / total).min(1.0)
            };
            SpectrumRow {
                index: i + 1,
                eigenvalue: ev,
                cumulative,
            }
        })
        .collect();
    Ok(SpectrumReport { rows, zero_trace })
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Eigendecomposition of a symmetric matrix, sorted descending, without any
/// sign clamping.
///
/// Computed through the SVD, which stays accurate on the heavily repeated
/// spectra met here (Kronecker-structured Hessians, isotropic noise floors).
/// The right singular vectors are eigenvectors and each eigenvalue is
/// recovered with its sign as the Rayleigh quotient `vᵀ M v`.
pub(crate) fn symmetric_eigen_desc(m: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = m.nrows();
    let svd = m
        .clone()
        .try_svd(false, true, f64::EPSILON, 0)
        .ok_or(GloceError::EigenNonConvergence)?;
    let v = svd.v_t.ok_or(GloceError::EigenNonConvergence)?.transpose();
    let rayleigh: Vec<f64> = (0..n)
        .map(|i| v.column(i).dot(&(m * v.column(i))))
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        rayleigh[b]
            .partial_cmp(&rayleigh[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let vals = DVector::from_iterator(n, order.iter().map(|&i| rayleigh[i]));
    let mut vecs = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vecs.set_column(dst, &v.column(src));
    }
    Ok((vals, vecs))
}

/// Like [`symmetric_eigen_desc`], clamping small negative eigenvalues of a
/// PSD matrix to zero.
pub(crate) fn psd_eigen_desc(m: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (mut vals, vecs) = symmetric_eigen_desc(m)?;
    let trace: f64 = m.diagonal().sum();
    let floor = -PSD_CLAMP * trace.abs();
    for v in vals.iter_mut() {
        if *v < 0.0 {
            if *v >= floor {
                *v = 0.0;
            } else {
                return Err(GloceError::NotPositiveSemidefinite(*v));
            }
        }
    }
    Ok((vals, vecs))
}
