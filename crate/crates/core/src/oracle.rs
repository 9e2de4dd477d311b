// SPDX-License-Identifier: MIT OR Apache-2.0

//! Independent checks of the closed-form erasers.
//!
//! [`solve_constrained_ls`] minimizes `(1/N) Σ |P x_i + b - y_i|²` subject to
//! `P C = 0` without using any of the structure the closed forms rely on: the
//! bias is eliminated, `vec(P)` is restricted to the null space of the
//! constraint operator `Cᵀ ⊗ I`, and the reduced normal equations are solved
//! with a pseudo-inverse. At `D ≤ 16` the `D²` unknowns are handled densely.
//!
//! [`verify_closed_form`] compares that optimum against the low-rank eraser on
//! seeded synthetic data, and [`mc_constraint_check`] measures the empirical
//! cross-covariance `Cov(P X, Z)` on fresh Gaussian samples.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use crate::eraser::{compute_gloce_eraser, solve_leace, EraserParams};
use crate::error::{GloceError, Result};
use crate::rng::{normal_matrix, normal_vector, orthonormal_columns, substream};
use crate::stats::{symmetric_eigen_desc, ConceptStats, StreamingMoments};

pub const MAX_ORACLE_DIM: usize = 16;
pub const MAX_ORACLE_SAMPLES: usize = 4096;
/// Relative singular-value cutoff for the null space and the reduced solve.
pub const ORACLE_PINV_TOL: f64 = 1e-12;
/// Objective agreement, relative to `1 + |oracle objective|`.
pub const OBJECTIVE_TOL: f64 = 1e-6;
/// Normalized constraint residual `|P C|_F / (|P|_F |C|_F)`.
pub const RESIDUAL_TOL: f64 = 1e-10;
pub const MC_MIN_SAMPLES: usize = 1024;

#[derive(Debug, Clone, PartialEq)]
pub struct QpInstance {
    /// `N × D` inputs.
    pub samples: DMatrix<f64>,
    /// `N × D` regression targets.
    pub targets: DMatrix<f64>,
    /// `D × m`; feasible projections satisfy `P C = 0`.
    pub constraint: DMatrix<f64>,
}

impl QpInstance {
    pub fn validate(&self) -> Result<()> {
        let (n, d) = self.samples.shape();
        if d == 0 || d > MAX_ORACLE_DIM {
            return Err(GloceError::InvalidConfig(format!(
                "oracle dimension {d} outside 1..={MAX_ORACLE_DIM}"
            )));
        }
        if n < d {
            return Err(GloceError::NotEnoughSamples { need: d, got: n });
        }
        if n > MAX_ORACLE_SAMPLES {
            return Err(GloceError::InvalidConfig(format!(
                "oracle sample count {n} exceeds {MAX_ORACLE_SAMPLES}"
            )));
        }
        if self.targets.shape() != (n, d) {
            return Err(GloceError::DimensionMismatch {
                expected: n * d,
                got: self.targets.len(),
            });
        }
        if self.constraint.nrows() != d {
            return Err(GloceError::DimensionMismatch {
                expected: d,
                got: self.constraint.nrows(),
            });
        }
        let finite = |m: &DMatrix<f64>| m.iter().all(|v| v.is_finite());
        if !(finite(&self.samples) && finite(&self.targets) && finite(&self.constraint)) {
            return Err(GloceError::InvalidConfig(
                "oracle instance has non-finite entries".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSolution {
    pub projection: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub objective: f64,
    /// `|P C|_F / (|P|_F |C|_F)`, zero when either factor vanishes.
    pub constraint_residual: f64,
    /// Largest absolute entry of `P C`.
    pub constraint_max_abs: f64,
}

fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = DMatrix::zeros(ar * br, ac * bc);
    for i in 0..ar {
        for j in 0..ac {
            let s = a[(i, j)];
            if s != 0.0 {
                out.view_mut((i * br, j * bc), (br, bc)).copy_from(&(b * s));
            }
        }
    }
    out
}

/// Orthonormal basis of the null space of `a` (columns).
fn null_space(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.ncols();
    if a.nrows() == 0 || a.norm() == 0.0 {
        return DMatrix::identity(n, n);
    }
    // pad to square so the SVD returns a full right basis
    let mut sq = DMatrix::zeros(n.max(a.nrows()), n);
    sq.view_mut((0, 0), a.shape()).copy_from(a);
    let svd = sq.svd(false, true);
    let vt = svd.v_t.expect("requested V^T");
    let smax = svd.singular_values.max();
    let null: Vec<usize> = (0..n)
        .filter(|&i| svd.singular_values[i] <= ORACLE_PINV_TOL * smax)
        .collect();
    let mut basis = DMatrix::zeros(n, null.len());
    for (j, &i) in null.iter().enumerate() {
        basis.set_column(j, &vt.row(i).transpose());
    }
    basis
}

/// Solves `h z = g` for symmetric PSD `h` via an eigen pseudo-inverse.
fn psd_pinv_solve(h: &DMatrix<f64>, g: &DVector<f64>) -> Result<DVector<f64>> {
    if h.nrows() == 0 {
        return Ok(DVector::zeros(0));
    }
    let (vals, vecs) = symmetric_eigen_desc(h)?;
    let smax = vals.iter().cloned().fold(0.0, f64::max);
    let coeffs = vecs.tr_mul(g);
    let mut z = DVector::zeros(h.nrows());
    for i in 0..vals.len() {
        if smax > 0.0 && vals[i] > ORACLE_PINV_TOL * smax {
            z.axpy(coeffs[i] / vals[i], &vecs.column(i), 1.0);
        }
    }
    Ok(z)
}

/// Mean squared residual `(1/N) Σ |P x_i + b - y_i|²`.
pub fn objective(
    projection: &DMatrix<f64>,
    bias: &DVector<f64>,
    samples: &DMatrix<f64>,
    targets: &DMatrix<f64>,
) -> f64 {
    let n = samples.nrows() as f64;
    let mut pred = samples * projection.transpose();
    for mut r in pred.row_iter_mut() {
        r += bias.transpose();
    }
    (pred - targets).norm_squared() / n
}

pub fn constraint_residual(projection: &DMatrix<f64>, constraint: &DMatrix<f64>) -> (f64, f64) {
    let pc = projection * constraint;
    // floor the projection norm at 1 so a numerically-zero map is not
    // judged by the direction of its round-off
    let denom = projection.norm().max(1.0) * constraint.norm();
    let rel = if denom == 0.0 { 0.0 } else { pc.norm() / denom };
    (rel, pc.abs().max())
}

/// Generic equality-constrained least squares over `(P, b)`.
pub fn solve_constrained_ls(inst: &QpInstance) -> Result<OracleSolution> {
    inst.validate()?;
    let (n, d) = inst.samples.shape();
    let x_mean = inst.samples.row_mean().transpose();
    let y_mean = inst.targets.row_mean().transpose();
    let mut xc = inst.samples.clone();
    let mut yc = inst.targets.clone();
    for mut r in xc.row_iter_mut() {
        r -= x_mean.transpose();
    }
    for mut r in yc.row_iter_mut() {
        r -= y_mean.transpose();
    }
    let sxx = xc.tr_mul(&xc) / n as f64;
    let syx = yc.tr_mul(&xc) / n as f64;

    // column-major vec: vec(P A) = (Aᵀ ⊗ I) vec(P)
    let eye = DMatrix::identity(d, d);
    let hessian = kron(&sxx, &eye);
    let gradient = DVector::from_column_slice(syx.as_slice());
    let constraint_op = kron(&inst.constraint.transpose(), &eye);
    let basis = null_space(&constraint_op);

    let reduced_h = basis.tr_mul(&hessian) * &basis;
    let reduced_g = basis.tr_mul(&gradient);
    let z = psd_pinv_solve(&reduced_h, &reduced_g)?;
    let vec_p = &basis * z;
    let projection = DMatrix::from_column_slice(d, d, vec_p.as_slice());
    let bias = &y_mean - &projection * &x_mean;
    let obj = objective(&projection, &bias, &inst.samples, &inst.targets);
    let (constraint_residual, constraint_max_abs) =
        constraint_residual(&projection, &inst.constraint);
    Ok(OracleSolution {
        projection,
        bias,
        objective: obj,
        constraint_residual,
        constraint_max_abs,
    })
}

/// Regression targets of the low-rank objective,
/// `y = η (V_map V_mapᵀ (x - μ_tar) + μ_map)`.
pub fn gloce_targets(
    samples: &DMatrix<f64>,
    eta: f64,
    v_map: &DMatrix<f64>,
    mu_tar: &DVector<f64>,
    mu_map: &DVector<f64>,
) -> DMatrix<f64> {
    let p_map = v_map * v_map.transpose();
    let mut centered = samples.clone();
    for mut r in centered.row_iter_mut() {
        r -= mu_tar.transpose();
    }
    let mut y = centered * p_map.transpose();
    for mut r in y.row_iter_mut() {
        r += mu_map.transpose();
    }
    y * eta
}

/// Seeded Gaussian cloud with a decaying, full-rank spectrum.
pub fn synthetic_samples(seed: u64, stream: u64, d: usize, n: usize) -> DMatrix<f64> {
    let mut rng = substream(seed, stream);
    let basis = orthonormal_columns(&mut rng, d, d);
    let scales = DVector::from_fn(d, |i, _| 3.0 * 0.75f64.powi(i as i32) + 0.2);
    let mean = normal_vector(&mut rng, d) * 2.0;
    let z = normal_matrix(&mut rng, n, d);
    let mut x = z * DMatrix::from_diagonal(&scales) * basis.transpose();
    for mut r in x.row_iter_mut() {
        r += mean.transpose();
    }
    x
}

pub fn stats_of_rows(rows: &DMatrix<f64>) -> Result<ConceptStats> {
    let mut m = StreamingMoments::new(rows.ncols());
    m.accumulate_block(rows)?;
    m.finalize()
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyRow {
    pub seed: u64,
    pub d: usize,
    pub r1: usize,
    pub r2: usize,
    pub eta: f64,
    pub n: usize,
    pub closed_objective: f64,
    pub oracle_objective: f64,
    pub relative_gap: f64,
    pub closed_residual: f64,
    pub oracle_residual: f64,
    /// Closed form is no worse than the oracle.
    pub closed_le_oracle: bool,
    /// Oracle is no worse than the closed form.
    pub oracle_le_closed: bool,
    pub residual_ok: bool,
}

impl VerifyRow {
    fn new(
        seed: u64,
        (d, r1, r2, eta, n): (usize, usize, usize, f64, usize),
        closed_objective: f64,
        closed_residual: f64,
        oracle: &OracleSolution,
    ) -> Self {
        let o = oracle.objective;
        let tol = OBJECTIVE_TOL * (1.0 + o.abs());
        VerifyRow {
            seed,
            d,
            r1,
            r2,
            eta,
            n,
            closed_objective,
            oracle_objective: o,
            relative_gap: (closed_objective - o).abs() / (1.0 + o.abs()),
            closed_residual,
            oracle_residual: oracle.constraint_residual,
            closed_le_oracle: closed_objective <= o + tol,
            oracle_le_closed: o <= closed_objective + tol,
            residual_ok: closed_residual <= RESIDUAL_TOL
                && oracle.constraint_residual <= RESIDUAL_TOL,
        }
    }

    pub fn passed(&self) -> bool {
        self.closed_le_oracle && self.oracle_le_closed && self.residual_ok
    }

    pub const TSV_HEADER: &'static str =
        "seed\td\tr1\tr2\teta\tclosed_objective\toracle_objective\trelative_gap\tclosed_residual\toracle_residual\tpass";

    pub fn to_tsv(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{:.12e}\t{:.12e}\t{:.3e}\t{:.3e}\t{:.3e}\t{}",
            self.seed,
            self.d,
            self.r1,
            self.r2,
            self.eta,
            self.closed_objective,
            self.oracle_objective,
            self.relative_gap,
            self.closed_residual,
            self.oracle_residual,
            if self.passed() { "pass" } else { "fail" }
        )
    }
}

pub fn rows_to_tsv(rows: &[VerifyRow]) -> String {
    let mut out = String::from(VerifyRow::TSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(out, "{}", r.to_tsv());
    }
    out
}

/// Closed-form low-rank eraser versus the generic oracle on one seeded
/// instance.
pub fn verify_closed_form(
    seed: u64,
    d: usize,
    r1: usize,
    r2: usize,
    eta: f64,
    n: usize,
) -> Result<VerifyRow> {
    if d == 0 || d > MAX_ORACLE_DIM {
        return Err(GloceError::InvalidConfig(format!(
            "oracle dimension {d} outside 1..={MAX_ORACLE_DIM}"
        )));
    }
    let tar = synthetic_samples(seed, 0, d, n);
    let map = synthetic_samples(seed, 1, d, n);
    let stats_tar = stats_of_rows(&tar)?;
    let stats_map = stats_of_rows(&map)?;
    let eraser = compute_gloce_eraser(&stats_tar, &stats_map, eta, r1, r2)?;
    verify_eraser_on(seed, &eraser, &stats_tar, &tar, n)
}

fn verify_eraser_on(
    seed: u64,
    eraser: &EraserParams,
    stats_tar: &ConceptStats,
    samples: &DMatrix<f64>,
    n: usize,
) -> Result<VerifyRow> {
    let d = eraser.dim();
    let targets = gloce_targets(
        samples,
        eraser.eta,
        &eraser.v_map,
        &eraser.mu_tar,
        &eraser.mu_map,
    );
    // Cov(X, Z) = Cov(X) V_tar V_tarᵀ, so P Cov(X, Z) = 0 iff P Cov(X) V_tar = 0
    let constraint = &stats_tar.cov * &eraser.v_tar;
    let inst = QpInstance {
        samples: samples.clone(),
        targets,
        constraint,
    };
    let oracle = solve_constrained_ls(&inst)?;
    let dense = eraser.dense_projection();
    let closed = objective(&dense, &eraser.bias, &inst.samples, &inst.targets);
    let (closed_res, _) = constraint_residual(&dense, &inst.constraint);
    Ok(VerifyRow::new(
        seed,
        (d, eraser.r1, eraser.r2, eraser.eta, n),
        closed,
        closed_res,
        &oracle,
    ))
}

/// Full-rank baseline versus the oracle with targets `y = x`, for an
/// arbitrary cross-covariance `cross_cov = Cov(X, Z)`.
pub fn verify_leace(
    seed: u64,
    samples: &DMatrix<f64>,
    cross_cov: &DMatrix<f64>,
) -> Result<VerifyRow> {
    let stats = stats_of_rows(samples)?;
    let sol = solve_leace(&stats, cross_cov)?;
    let inst = QpInstance {
        samples: samples.clone(),
        targets: samples.clone(),
        constraint: cross_cov.clone(),
    };
    let oracle = solve_constrained_ls(&inst)?;
    let closed = objective(&sol.projection, &sol.bias, samples, samples);
    let (closed_res, _) = constraint_residual(&sol.projection, cross_cov);
    let (n, d) = samples.shape();
    Ok(VerifyRow::new(
        seed,
        (d, 0, cross_cov.ncols(), 1.0, n),
        closed,
        closed_res,
        &oracle,
    ))
}

/// Seeded baseline check with a random `D × m` cross-covariance.
pub fn verify_leace_seeded(seed: u64, d: usize, m: usize, n: usize) -> Result<VerifyRow> {
    let samples = synthetic_samples(seed, 0, d, n);
    let mut rng = substream(seed, 2);
    let cross_cov = normal_matrix(&mut rng, d, m);
    verify_leace(seed, &samples, &cross_cov)
}

/// Rank pairs swept by `verify` when none is given.
pub const DEFAULT_RANK_PAIRS: [(usize, usize); 3] = [(1, 3), (2, 3), (4, 8)];

/// Runs `seeds` instances. Without explicit ranks, instance `i` uses
/// `DEFAULT_RANK_PAIRS[i % 3]`.
pub fn verify_sweep(
    d: usize,
    seeds: u64,
    ranks: Option<(usize, usize)>,
    eta: f64,
    n: usize,
) -> Result<Vec<VerifyRow>> {
    (0..seeds)
        .map(|s| {
            let (r1, r2) = ranks.unwrap_or(DEFAULT_RANK_PAIRS[(s % 3) as usize]);
            verify_closed_form(s, d, r1, r2, eta, n)
        })
        .collect()
}

/// Normalized `|Cov(P X, Z)|_F / |Cov(X)|_F` on `n` fresh Gaussian samples
/// with the target statistics, `Z = V_tar V_tarᵀ (X - μ) + μ`.
pub fn mc_constraint_check_dense(
    projection: &DMatrix<f64>,
    v_tar: &DMatrix<f64>,
    stats_tar: &ConceptStats,
    n: usize,
    seed: u64,
) -> Result<f64> {
    if n < MC_MIN_SAMPLES {
        return Err(GloceError::NotEnoughSamples {
            need: MC_MIN_SAMPLES,
            got: n,
        });
    }
    let d = stats_tar.dim();
    let cov_norm = stats_tar.cov.norm();
    if cov_norm == 0.0 || stats_tar.trace() <= 0.0 {
        return Err(GloceError::DegenerateStats("zero covariance".into()));
    }
    let mut rng = substream(seed, 0);
    let z = normal_matrix(&mut rng, n, d);
    let root = &stats_tar.eigvecs * DMatrix::from_diagonal(&stats_tar.eigvals.map(f64::sqrt));
    let mut x = z * root.transpose();
    for mut r in x.row_iter_mut() {
        r += stats_tar.mean.transpose();
    }
    let p_tar = v_tar * v_tar.transpose();
    let mut centered = x.clone();
    for mut r in centered.row_iter_mut() {
        r -= stats_tar.mean.transpose();
    }
    let mut zs = centered * p_tar.transpose();
    for mut r in zs.row_iter_mut() {
        r += stats_tar.mean.transpose();
    }
    let px = &x * projection.transpose();
    let center = |m: &DMatrix<f64>| {
        let mean = m.row_mean();
        let mut c = m.clone();
        for mut r in c.row_iter_mut() {
            r -= &mean;
        }
        c
    };
    let cross = center(&px).tr_mul(&center(&zs)) / n as f64;
    Ok(cross.norm() / cov_norm)
}

pub fn mc_constraint_check(
    params: &EraserParams,
    stats_tar: &ConceptStats,
    n: usize,
    seed: u64,
) -> Result<f64> {
    mc_constraint_check_dense(
        &params.dense_projection(),
        &params.v_tar,
        stats_tar,
        n,
        seed,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kron_layout() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let b = DMatrix::identity(2, 2);
        let k = kron(&a, &b);
        assert_eq!(k[(0, 2)], 2.0);
        assert_eq!(k[(3, 1)], 3.0);
        assert_eq!(k[(3, 3)], 4.0);
        // vec(P A) = (Aᵀ ⊗ I) vec(P)
        let p = DMatrix::from_row_slice(2, 2, &[0.5, -1.0, 2.0, 0.25]);
        let lhs = DVector::from_column_slice((&p * &a).as_slice());
        let rhs = kron(&a.transpose(), &b) * DVector::from_column_slice(p.as_slice());
        assert!((lhs - rhs).abs().max() < 1e-15);
    }

    #[test]
    fn unconstrained_identity_fit() {
        let x = synthetic_samples(1, 0, 4, 64);
        let inst = QpInstance {
            samples: x.clone(),
            targets: x,
            constraint: DMatrix::zeros(4, 1),
        };
        let sol = solve_constrained_ls(&inst).unwrap();
        assert!((&sol.projection - DMatrix::identity(4, 4)).abs().max() < 1e-9);
        assert!(sol.bias.abs().max() < 1e-9);
        assert!(sol.objective < 1e-18);
    }

    #[test]
    fn fully_constrained_gives_mean() {
        let x = synthetic_samples(2, 0, 3, 50);
        let y = synthetic_samples(2, 1, 3, 50);
        let inst = QpInstance {
            samples: x,
            targets: y.clone(),
            constraint: DMatrix::identity(3, 3),
        };
        let sol = solve_constrained_ls(&inst).unwrap();
        assert!(sol.projection.abs().max() < 1e-12);
        assert!((&sol.bias - y.row_mean().transpose()).abs().max() < 1e-12);
    }

    #[test]
    fn oracle_respects_constraint_exactly() {
        let x = synthetic_samples(3, 0, 6, 200);
        let y = synthetic_samples(3, 1, 6, 200);
        let mut rng = substream(3, 5);
        let c = normal_matrix(&mut rng, 6, 2);
        let inst = QpInstance {
            samples: x,
            targets: y,
            constraint: c,
        };
        let sol = solve_constrained_ls(&inst).unwrap();
        assert!(sol.constraint_max_abs < 1e-10);
        assert!(sol.constraint_residual < RESIDUAL_TOL);
    }

    #[test]
    fn instance_validation() {
        let inst = QpInstance {
            samples: DMatrix::zeros(2, 4),
            targets: DMatrix::zeros(2, 4),
            constraint: DMatrix::zeros(4, 1),
        };
        assert!(matches!(
            solve_constrained_ls(&inst),
            Err(GloceError::NotEnoughSamples { .. })
        ));
        let big = QpInstance {
            samples: DMatrix::zeros(20, 17),
            targets: DMatrix::zeros(20, 17),
            constraint: DMatrix::zeros(17, 1),
        };
        assert!(solve_constrained_ls(&big).is_err());
    }

    #[test]
    fn zero_scale_both_zero() {
        let row = verify_closed_form(4, 6, 2, 3, 0.0, 256).unwrap();
        assert!(row.closed_objective.abs() < 1e-20);
        assert!(row.oracle_objective.abs() < 1e-20);
        assert!(row.passed());
    }

    #[test]
    fn default_instance_passes() {
        let row = verify_closed_form(0, 8, 2, 3, 1.0, 1024).unwrap();
        assert!(row.passed(), "{}", row.to_tsv());
    }

    #[test]
    fn annihilation_case_matches_oracle() {
        let x = synthetic_samples(6, 0, 5, 300);
        let stats = stats_of_rows(&x).unwrap();
        // same statistics for target and mapping: P* = 0, b* = η μ
        let e = compute_gloce_eraser(&stats, &stats, 1.7, 2, 2).unwrap();
        assert!(e.dense_projection().abs().max() < 1e-12);
        let row = verify_eraser_on(6, &e, &stats, &x, 300).unwrap();
        assert!(row.passed(), "{}", row.to_tsv());
    }

    #[test]
    fn mc_zero_projection_is_zero() {
        let x = synthetic_samples(7, 0, 4, 500);
        let stats = stats_of_rows(&x).unwrap();
        let v = stats.eigvecs.columns(0, 2).into_owned();
        let r = mc_constraint_check_dense(&DMatrix::zeros(4, 4), &v, &stats, 1024, 1).unwrap();
        assert_eq!(r, 0.0);
        assert!(mc_constraint_check_dense(&DMatrix::zeros(4, 4), &v, &stats, 100, 1).is_err());
    }
}
