// SPDX-License-Identifier: MIT OR Apache-2.0

//! Closed-form erasers.
//!
//! Two solutions of the same constrained least-squares family live here:
//!
//! - [`solve_leace`]: the full-rank baseline `P = I - W⁺QW`, `b = (I - P)μ`,
//!   with `W` the pseudo-inverse square root of the covariance and `Q` the
//!   orthogonal projector onto `col(W·Cov(X, Z))`.
//! - [`compute_gloce_eraser`]: the low-rank map that strips the top target
//!   components and re-expresses what remains in the mapping subspace,
//!   `P = η V_map V_mapᵀ (I - V_tar V_tarᵀ)`, `b = η μ_map - P μ_tar`.
//!
//! The low-rank eraser is applied through its `r1` bottleneck
//! (`W_in = V_mapᵀ (I - V_tar V_tarᵀ)` is precomputed); the dense `D × D`
//! projection is only formed on request for diagnostics.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, GloceError, Result};
use crate::stats::{top_components, ConceptStats};

/// Eigenvalues below `PINV_RANK_TOL * max` are treated as zero when forming
/// pseudo-inverses.
pub const PINV_RANK_TOL: f64 = 1e-10;

/// Relative size of the part of `Cov(X, Z)` outside `range(Cov(X))` that is
/// still accepted as rounding noise.
pub const FEASIBILITY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct LeaceSolution {
    pub projection: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub whitening: DMatrix<f64>,
    /// Orthogonal projector onto the column space of `whitening · cross_cov`.
    pub projector: DMatrix<f64>,
}

impl LeaceSolution {
    pub fn apply(&self, token: &[f64]) -> Result<DVector<f64>> {
        check_dim(self.bias.len(), token.len())?;
        Ok(&self.projection * DVector::from_column_slice(token) + &self.bias)
    }
}

/// Baseline erasure of the linear information about `Z` carried by `X`,
/// given `Cov(X)` (through `stats_tar`) and `cross_cov = Cov(X, Z)`.
pub fn solve_leace(stats_tar: &ConceptStats, cross_cov: &DMatrix<f64>) -> Result<LeaceSolution> {
    let d = stats_tar.dim();
    check_dim(d, cross_cov.nrows())?;
    let smax = stats_tar.eigvals.iter().cloned().fold(0.0, f64::max);
    let kept: Vec<usize> = (0..d)
        .filter(|&i| smax > 0.0 && stats_tar.eigvals[i] > PINV_RANK_TOL * smax)
        .collect();

    let mut whitening = DMatrix::zeros(d, d);
    let mut unwhitening = DMatrix::zeros(d, d);
    let mut range = DMatrix::zeros(d, d);
    for &i in &kept {
        let v = stats_tar.eigvecs.column(i);
        let s = stats_tar.eigvals[i];
        let outer = v * v.transpose();
        whitening += &outer / s.sqrt();
        unwhitening += &outer * s.sqrt();
        range += outer;
    }

    let c_norm = cross_cov.norm();
    if c_norm > 0.0 {
        let outside = (cross_cov - &range * cross_cov).norm();
        if outside > FEASIBILITY_TOL * c_norm {
            return Err(GloceError::InfeasibleConstraint(outside / c_norm));
        }
    }

    let whitened = &whitening * cross_cov;
    let projector = column_space_projector(&whitened);
    let projection = DMatrix::identity(d, d) - &unwhitening * &projector * &whitening;
    let bias = (DMatrix::identity(d, d) - &projection) * &stats_tar.mean;
    Ok(LeaceSolution {
        projection,
        bias,
        whitening,
        projector,
    })
}

/// `U Uᵀ` over the left singular vectors of `m` with non-negligible singular
/// values.
pub(crate) fn column_space_projector(m: &DMatrix<f64>) -> DMatrix<f64> {
    let d = m.nrows();
    if m.ncols() == 0 || m.norm() == 0.0 {
        return DMatrix::zeros(d, d);
    }
    let svd = m.clone().svd(true, false);
    let u = svd.u.expect("requested U");
    let smax = svd.singular_values.max();
    let mut out = DMatrix::zeros(d, d);
    for (j, &s) in svd.singular_values.iter().enumerate() {
        if s > PINV_RANK_TOL * smax {
            let col = u.column(j);
            out += col * col.transpose();
        }
    }
    out
}

/// The compact form of an eraser that is stored in module files and used at
/// application time.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankEraser {
    pub eta: f64,
    /// `D × r1`.
    pub v_map: DMatrix<f64>,
    /// `r1 × D`, `V_mapᵀ (I - V_tar V_tarᵀ)`.
    pub w_in: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub mu_tar: DVector<f64>,
    pub mu_map: DVector<f64>,
}

impl LowRankEraser {
    pub fn dim(&self) -> usize {
        self.bias.len()
    }

    pub fn r1(&self) -> usize {
        self.v_map.ncols()
    }

    /// `η V_map (W_in x) + b`, never forming the `D × D` product.
    pub fn apply(&self, token: &[f64]) -> Result<DVector<f64>> {
        check_dim(self.dim(), token.len())?;
        let x = DVector::from_column_slice(token);
        let code = &self.w_in * x;
        Ok(&self.v_map * (code * self.eta) + &self.bias)
    }

    /// Dense `P* = η V_map W_in`. Diagnostics only.
    pub fn dense_projection(&self) -> DMatrix<f64> {
        &self.v_map * &self.w_in * self.eta
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EraserParams {
    pub eta: f64,
    pub r1: usize,
    pub r2: usize,
    /// `D × r1`, orthonormal.
    pub v_map: DMatrix<f64>,
    /// `D × r2`, orthonormal.
    pub v_tar: DMatrix<f64>,
    /// `r1 × D`.
    pub w_in: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub mu_tar: DVector<f64>,
    pub mu_map: DVector<f64>,
}

impl EraserParams {
    pub fn dim(&self) -> usize {
        self.bias.len()
    }

    pub fn low_rank(&self) -> LowRankEraser {
        LowRankEraser {
            eta: self.eta,
            v_map: self.v_map.clone(),
            w_in: self.w_in.clone(),
            bias: self.bias.clone(),
            mu_tar: self.mu_tar.clone(),
            mu_map: self.mu_map.clone(),
        }
    }

    pub fn dense_projection(&self) -> DMatrix<f64> {
        &self.v_map * &self.w_in * self.eta
    }
}

/// Low-rank closed-form eraser from target and mapping statistics.
///
/// `eta` scales the mapped component; `r1` is the mapping rank and `r2` the
/// number of target components removed.
pub fn compute_gloce_eraser(
    stats_tar: &ConceptStats,
    stats_map: &ConceptStats,
    eta: f64,
    r1: usize,
    r2: usize,
) -> Result<EraserParams> {
    let d = stats_tar.dim();
    check_dim(d, stats_map.dim())?;
    if !(eta >= 0.0 && eta.is_finite()) {
        return Err(GloceError::InvalidConfig(format!(
            "eta must be finite and non-negative, got {eta}"
        )));
    }
    let v_map = top_components(stats_map, r1)?;
    let v_tar = top_components(stats_tar, r2)?;
    let overlap = v_map.tr_mul(&v_tar); // r1 × r2
    let w_in = v_map.transpose() - overlap * v_tar.transpose();
    let mu_tar = stats_tar.mean.clone();
    let mu_map = stats_map.mean.clone();
    let bias = &mu_map * eta - &v_map * (&w_in * &mu_tar) * eta;
    Ok(EraserParams {
        eta,
        r1,
        r2,
        v_map,
        v_tar,
        w_in,
        bias,
        mu_tar,
        mu_map,
    })
}

pub fn apply_eraser(params: &EraserParams, token: &[f64]) -> Result<DVector<f64>> {
    check_dim(params.dim(), token.len())?;
    let x = DVector::from_column_slice(token);
    let code = &params.w_in * x;
    Ok(&params.v_map * (code * params.eta) + &params.bias)
}
