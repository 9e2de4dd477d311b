// SPDX-License-Identifier: MIT OR Apache-2.0

//! Logistic gate.
//!
//! The gate opens on tokens with a large component along a low-rank basis
//! fitted to the target tokens after removing a surrogate mean:
//!
//! ```text
//! s(x) = sigmoid(alpha * (|V^T (x - beta)|^2 - gamma))
//! ```
//!
//! `V` spans the top eigenvectors of the uncentered residual moment
//! `E[(x - mu_sur)(x - mu_sur)^T]` over target tokens and `beta = mu_sur`.
//! `gamma` sits `tau1` spreads above the mean per-pass peak score of the
//! anchor concepts, and `alpha` is chosen so the gate reaches `u` at
//! `gamma + tau2`.

use nalgebra::{DMatrix, DVector};

use crate::embstore::EmbeddingSet;
use crate::error::{check_dim, GloceError, Result};
use crate::stats::{psd_eigen_desc, StreamingMoments};

/// How anchor score spread enters the gate threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GammaSpread {
    /// `gamma = E[p] + tau1 * Var[p]`.
    #[default]
    Variance,
    /// `gamma = E[p] + tau1 * Std[p]`.
    StdDev,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateParams {
    /// `D × r3`, orthonormal.
    pub v_gate: DMatrix<f64>,
    pub beta: DVector<f64>,
    pub alpha: f64,
    pub gamma: f64,
    pub tau1: f64,
    pub tau2: f64,
    pub u: f64,
}

impl GateParams {
    pub fn dim(&self) -> usize {
        self.beta.len()
    }

    pub fn r3(&self) -> usize {
        self.v_gate.ncols()
    }

    /// `|V^T (x - beta)|^2`.
    pub fn score(&self, token: &[f64]) -> Result<f64> {
        token_score(&self.v_gate, &self.beta, token)
    }

    pub fn value_at_score(&self, score: f64) -> f64 {
        sigmoid(self.alpha * (score - self.gamma))
    }
}

pub fn gate_value(g: &GateParams, token: &[f64]) -> Result<f64> {
    Ok(g.value_at_score(g.score(token)?))
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Steepness that maps a score `tau2` above the threshold to gate value `u`.
pub fn alpha_for(tau2: f64, u: f64) -> f64 {
    (u / (1.0 - u)).ln() / tau2
}

pub fn token_score(v_gate: &DMatrix<f64>, beta: &DVector<f64>, token: &[f64]) -> Result<f64> {
    check_dim(beta.len(), token.len())?;
    check_dim(beta.len(), v_gate.nrows())?;
    let mut total = 0.0;
    for col in v_gate.column_iter() {
        let c: f64 = col
            .iter()
            .zip(token.iter().zip(beta.iter()))
            .map(|(v, (x, b))| v * (x - b))
            .sum();
        total += c * c;
    }
    Ok(total)
}

/// Gate basis and center from the target tokens and the surrogate mean.
pub fn fit_gate_basis(
    target: &EmbeddingSet,
    mu_sur: &DVector<f64>,
    r3: usize,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let d = target.dim;
    check_dim(d, mu_sur.len())?;
    if r3 == 0 || r3 > d {
        return Err(GloceError::RankOutOfRange { rank: r3, max: d });
    }
    let mut m = StreamingMoments::with_residual_center(mu_sur.clone());
    m.accumulate_set(target)?;
    let moment = m
        .residual_second_moment()
        .expect("residual center configured");
    if moment.trace() <= 0.0 {
        return Err(GloceError::DegenerateGate);
    }
    let (_, vecs) = psd_eigen_desc(&moment)?;
    Ok((vecs.columns(0, r3).into_owned(), mu_sur.clone()))
}

/// Peak token score within one pass (`T*D` flat tokens).
pub fn gate_pass_score(v_gate: &DMatrix<f64>, beta: &DVector<f64>, pass: &[f32]) -> Result<f64> {
    let d = beta.len();
    if pass.is_empty() {
        return Err(GloceError::EmptyPass);
    }
    if !pass.len().is_multiple_of(d) {
        return Err(GloceError::DimensionMismatch {
            expected: d,
            got: pass.len() % d,
        });
    }
    let mut best = 0.0f64;
    let mut buf = vec![0.0; d];
    for tok in pass.chunks_exact(d) {
        for (b, &v) in buf.iter_mut().zip(tok) {
            *b = v as f64;
        }
        best = best.max(token_score(v_gate, beta, &buf)?);
    }
    Ok(best)
}

pub fn validate_tolerances(tau1: f64, tau2: f64, u: f64) -> Result<()> {
    if !(tau1 > 0.0 && tau1.is_finite()) {
        return Err(GloceError::InvalidConfig(format!(
            "tau1 must be positive, got {tau1}"
        )));
    }
    if !(tau2 > 0.0 && tau2.is_finite()) {
        return Err(GloceError::InvalidConfig(format!(
            "tau2 must be positive, got {tau2}"
        )));
    }
    if !(u > 0.5 && u < 1.0) {
        return Err(GloceError::InvalidConfig(format!(
            "u must lie in (0.5, 1), got {u}"
        )));
    }
    Ok(())
}

/// Per-pass peak scores pooled over every pass of every anchor set.
pub fn anchor_scores(
    v_gate: &DMatrix<f64>,
    beta: &DVector<f64>,
    anchors: &[EmbeddingSet],
) -> Result<Vec<f64>> {
    let mut scores = Vec::new();
    for a in anchors {
        check_dim(beta.len(), a.dim)?;
        for pass in a.pass_iter() {
            scores.push(gate_pass_score(v_gate, beta, pass)?);
        }
    }
    Ok(scores)
}

/// Threshold `gamma` and steepness `alpha` from anchor statistics.
pub fn calibrate_gate(
    v_gate: &DMatrix<f64>,
    beta: &DVector<f64>,
    anchors: &[EmbeddingSet],
    tau1: f64,
    tau2: f64,
    u: f64,
    spread: GammaSpread,
) -> Result<(f64, f64)> {
    validate_tolerances(tau1, tau2, u)?;
    let scores = anchor_scores(v_gate, beta, anchors)?;
    if scores.is_empty() {
        return Err(GloceError::NoAnchorPasses);
    }
    let gamma = threshold_from_scores(&scores, tau1, spread);
    Ok((gamma, alpha_for(tau2, u)))
}

pub fn threshold_from_scores(scores: &[f64], tau1: f64, spread: GammaSpread) -> f64 {
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    // population variance
    let var = scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n;
    let width = match spread {
        GammaSpread::Variance => var,
        GammaSpread::StdDev => var.sqrt(),
    };
    (mean + tau1 * width).max(0.0)
}

/// Fits the basis and calibrates the threshold in one go.
#[allow(clippy::too_many_arguments)]
pub fn fit_gate(
    target: &EmbeddingSet,
    mu_sur: &DVector<f64>,
    anchors: &[EmbeddingSet],
    r3: usize,
    tau1: f64,
    tau2: f64,
    u: f64,
    spread: GammaSpread,
) -> Result<GateParams> {
    validate_tolerances(tau1, tau2, u)?;
    let (v_gate, beta) = fit_gate_basis(target, mu_sur, r3)?;
    let (gamma, alpha) = calibrate_gate(&v_gate, &beta, anchors, tau1, tau2, u, spread)?;
    Ok(GateParams {
        v_gate,
        beta,
        alpha,
        gamma,
        tau1,
        tau2,
        u,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal_matrix, substream};

    fn set_from_rows(rows: &[Vec<f32>], tokens: usize) -> EmbeddingSet {
        let d = rows[0].len();
        let data: Vec<f32> = rows.iter().flatten().copied().collect();
        EmbeddingSet::new("s", d, tokens, rows.len() / tokens, data).unwrap()
    }

    #[test]
    fn one_direction_residual() {
        let mu = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let rows: Vec<Vec<f32>> = (0..4)
            .map(|i| vec![1.0 + 2.0 * (i as f32 + 1.0), 2.0, 3.0])
            .collect();
        let (v, beta) = fit_gate_basis(&set_from_rows(&rows, 2), &mu, 1).unwrap();
        assert_eq!(beta, mu);
        assert!((v[(0, 0)].abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_residual_is_degenerate() {
        let mu = DVector::from_vec(vec![1.0, 2.0]);
        let rows = vec![vec![1.0f32, 2.0]; 3];
        assert!(matches!(
            fit_gate_basis(&set_from_rows(&rows, 1), &mu, 1),
            Err(GloceError::DegenerateGate)
        ));
    }

    #[test]
    fn basis_matches_dense_moment() {
        let mut rng = substream(8, 0);
        let x = normal_matrix(&mut rng, 64, 8);
        let mu: DVector<f64> = DVector::from_fn(8, |i, _| 0.1 * i as f64);
        let rows: Vec<Vec<f32>> = x
            .row_iter()
            .map(|r| r.iter().map(|&v| (2.0 * v + 0.3) as f32).collect())
            .collect();
        let set = set_from_rows(&rows, 8);
        let (v, _) = fit_gate_basis(&set, &mu, 2).unwrap();

        let mut moment = DMatrix::zeros(8, 8);
        for tok in set.token_iter() {
            let d = DVector::from_iterator(8, tok.iter().map(|&t| t as f64)) - &mu;
            moment += &d * d.transpose();
        }
        moment /= set.token_count() as f64;
        let eig = moment.clone().symmetric_eigen();
        let mut idx: Vec<usize> = (0..8).collect();
        idx.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
        for (j, &i) in idx.iter().take(2).enumerate() {
            let oracle = eig.eigenvectors.column(i);
            let dot = oracle.dot(&v.column(j)).abs();
            assert!((dot - 1.0).abs() < 1e-8, "column {j}: |dot| = {dot}");
        }
    }

    #[test]
    fn pass_scores() {
        let v = DMatrix::from_column_slice(3, 1, &[0.0, 1.0, 0.0]);
        let beta = DVector::from_vec(vec![1.0, 1.0, 1.0]);
        assert_eq!(gate_pass_score(&v, &beta, &[1.0; 6]).unwrap(), 0.0);
        let pass = [1.0, 1.0, 1.0, 1.0, 4.0, 1.0];
        assert_eq!(gate_pass_score(&v, &beta, &pass).unwrap(), 9.0);
        assert_eq!(gate_pass_score(&v, &beta, &pass[3..]).unwrap(), 9.0);
        assert!(matches!(
            gate_pass_score(&v, &beta, &[]),
            Err(GloceError::EmptyPass)
        ));
    }

    #[test]
    fn calibration_arithmetic() {
        assert_eq!(
            threshold_from_scores(&[2.5, 2.5, 2.5], 1.5, GammaSpread::Variance),
            2.5
        );
        assert_eq!(
            threshold_from_scores(&[1.0, 3.0], 1.0, GammaSpread::Variance),
            3.0
        );
        assert_eq!(
            threshold_from_scores(&[1.0, 5.0], 1.0, GammaSpread::StdDev),
            5.0
        );
        let a = alpha_for(0.75, 0.99);
        assert!((a - 99f64.ln() / 0.75).abs() < 1e-12);
        assert!((a - 6.12683).abs() < 1e-5);
    }

    #[test]
    fn calibrate_from_anchor_sets() {
        let v = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let beta = DVector::zeros(2);
        // per-pass peaks are 1 and 3
        let a = set_from_rows(
            &[
                vec![1.0, 0.0],
                vec![0.0, 5.0],
                vec![3f32.sqrt(), 0.0],
                vec![0.0, 0.0],
            ],
            2,
        );
        let (gamma, alpha) =
            calibrate_gate(&v, &beta, &[a], 1.0, 0.75, 0.99, GammaSpread::Variance).unwrap();
        assert!((gamma - 3.0).abs() < 1e-6);
        assert!((alpha - alpha_for(0.75, 0.99)).abs() < 1e-15);
        assert!(matches!(
            calibrate_gate(&v, &beta, &[], 1.0, 0.75, 0.99, GammaSpread::Variance),
            Err(GloceError::NoAnchorPasses)
        ));
        assert!(calibrate_gate(&v, &beta, &[], 1.0, 0.75, 0.4, GammaSpread::Variance).is_err());
    }

    fn gate(gamma: f64) -> GateParams {
        GateParams {
            v_gate: DMatrix::from_column_slice(2, 1, &[1.0, 0.0]),
            beta: DVector::zeros(2),
            alpha: alpha_for(0.75, 0.99),
            gamma,
            tau1: 1.5,
            tau2: 0.75,
            u: 0.99,
        }
    }

    #[test]
    fn gate_identities() {
        let g = gate(4.0);
        let at = |score: f64| gate_value(&g, &[score.sqrt(), 0.0]).unwrap();
        assert!((at(4.0) - 0.5).abs() < 1e-12);
        assert!((at(4.75) - 0.99).abs() < 1e-9);
        assert!((at(3.25) - 0.01).abs() < 1e-9);
        let closed = gate_value(&g, &[0.0, 0.0]).unwrap();
        assert!((closed - sigmoid(-g.alpha * 4.0)).abs() < 1e-15);
        assert!(closed < 0.5);
    }

    #[test]
    fn gate_monotone_along_basis() {
        let g = gate(1.0);
        let mut prev = -1.0;
        for i in 0..40 {
            let s = gate_value(&g, &[0.05 * i as f64, 0.3]).unwrap();
            assert!(s > prev);
            prev = s;
        }
    }
}
