// SPDX-License-Identifier: MIT OR Apache-2.0

//! Gated erasure module for one (concept, layer) pair.
//!
//! Each token is blended with its erased image by the gate value:
//!
//! ```text
//! f(x) = (1 - s(x)) x + s(x) (P* x + b*)
//! ```
//!
//! Modules are stored in the `.glmod` format (all integers u32 LE, all reals
//! f32 LE):
//!
//! ```text
//! "GLMO" version=1 D r1 r3 eta alpha gamma tau1 tau2 u label_len label
//! V_map (D×r1 row-major) W_in (r1×D row-major) b mu_tar mu_map
//! V_gate (r3×D row-major) beta
//! ```
//!
//! Parameters are rounded to f32 when a module is built, so what is applied in
//! memory is exactly what a saved file reproduces.

use std::fmt;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::binio::{put_f32, put_u32, Reader};
use crate::config::Config;
use crate::embstore::EmbeddingSet;
use crate::eraser::{compute_gloce_eraser, EraserParams, LowRankEraser};
use crate::error::{check_dim, GloceError, Result};
use crate::gate::{fit_gate, GateParams};
use crate::stats::{ConceptStats, StreamingMoments};

pub const MODULE_MAGIC: &[u8; 4] = b"GLMO";
pub const MODULE_VERSION: u32 = 1;
/// Fixed header bytes before the label.
pub const MODULE_FIXED_HEADER: usize = 4 + 4 * 4 + 6 * 4 + 4;

/// Overrides the gate, for checking the two limits of the blend.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GateMode {
    #[default]
    Computed,
    /// `s ≡ 1`.
    Open,
    /// `s ≡ 0`.
    Closed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GloceModule {
    pub label: String,
    pub eraser: LowRankEraser,
    pub gate: GateParams,
}

fn round_f32(x: f64) -> f64 {
    x as f32 as f64
}

fn round_vec(v: &DVector<f64>) -> DVector<f64> {
    v.map(round_f32)
}

fn round_mat(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.map(round_f32)
}

impl GloceModule {
    /// Builds a module from already-fitted parts, rounding every parameter
    /// to f32.
    pub fn from_parts(
        label: impl Into<String>,
        eraser: &EraserParams,
        gate: &GateParams,
    ) -> Result<Self> {
        check_dim(eraser.dim(), gate.dim())?;
        Ok(GloceModule {
            label: label.into(),
            eraser: eraser.low_rank(),
            gate: gate.clone(),
        }
        .rounded())
    }

    /// Rounds every parameter to `f32` precision, the precision of the file
    /// format, so a save/load round trip is exact.
    pub fn rounded(self) -> Self {
        let e = self.eraser;
        let g = self.gate;
        GloceModule {
            label: self.label,
            eraser: LowRankEraser {
                eta: round_f32(e.eta),
                v_map: round_mat(&e.v_map),
                w_in: round_mat(&e.w_in),
                bias: round_vec(&e.bias),
                mu_tar: round_vec(&e.mu_tar),
                mu_map: round_vec(&e.mu_map),
            },
            gate: GateParams {
                v_gate: round_mat(&g.v_gate),
                beta: round_vec(&g.beta),
                alpha: round_f32(g.alpha),
                gamma: round_f32(g.gamma),
                tau1: round_f32(g.tau1),
                tau2: round_f32(g.tau2),
                u: round_f32(g.u),
            },
        }
    }

    pub fn dim(&self) -> usize {
        self.eraser.dim()
    }

    pub fn r1(&self) -> usize {
        self.eraser.r1()
    }

    pub fn r3(&self) -> usize {
        self.gate.r3()
    }

    /// Gate value of a single token.
    pub fn gate_value(&self, token: &[f64]) -> Result<f64> {
        crate::gate::gate_value(&self.gate, token)
    }

    /// Applies the gated eraser to one token, returning the output and the
    /// gate value used.
    pub fn apply_token(&self, token: &[f32], mode: GateMode) -> Result<(Vec<f32>, f64)> {
        check_dim(self.dim(), token.len())?;
        let x: Vec<f64> = token.iter().map(|&v| v as f64).collect();
        let s = match mode {
            GateMode::Computed => self.gate_value(&x)?,
            GateMode::Open => 1.0,
            GateMode::Closed => 0.0,
        };
        Ok((self.blend(&x, s)?, s))
    }

    pub(crate) fn blend(&self, x: &[f64], s: f64) -> Result<Vec<f32>> {
        if s == 0.0 {
            return Ok(x.iter().map(|&v| v as f32).collect());
        }
        let erased = self.eraser.apply(x)?;
        Ok(x.iter()
            .zip(erased.iter())
            .map(|(&xi, &ei)| ((1.0 - s) * xi + s * ei) as f32)
            .collect())
    }

    /// Applies the module to every token of a flat `T*D` pass.
    pub fn apply(&self, pass: &[f32]) -> Result<Vec<f32>> {
        Ok(self.apply_with(pass, GateMode::Computed)?.0)
    }

    /// Like [`apply`](Self::apply), also returning the per-token gate values.
    pub fn apply_with(&self, pass: &[f32], mode: GateMode) -> Result<(Vec<f32>, Vec<f64>)> {
        let d = self.dim();
        if !pass.len().is_multiple_of(d) {
            return Err(GloceError::DimensionMismatch {
                expected: d,
                got: pass.len() % d,
            });
        }
        let per_token: Vec<(Vec<f32>, f64)> = pass
            .par_chunks(d)
            .map(|tok| self.apply_token(tok, mode))
            .collect::<Result<_>>()?;
        let mut out = Vec::with_capacity(pass.len());
        let mut gates = Vec::with_capacity(per_token.len());
        for (tok, s) in per_token {
            out.extend_from_slice(&tok);
            gates.push(s);
        }
        Ok((out, gates))
    }

    /// Applies the module to every pass of `set`, keeping its shape and label.
    pub fn apply_set(&self, set: &EmbeddingSet) -> Result<(EmbeddingSet, Vec<f64>)> {
        check_dim(self.dim(), set.dim)?;
        let (data, gates) = self.apply_with(&set.data, GateMode::Computed)?;
        let out = EmbeddingSet::new(
            set.label.clone(),
            set.dim,
            set.tokens_per_pass,
            set.passes,
            data,
        )?;
        Ok((out, gates))
    }

    /// Number of parameters used at application time: `V_map`, `W_in`, `b`,
    /// `V_gate`, `beta`, plus `alpha` and `gamma`.
    pub fn param_count(&self) -> usize {
        let d = self.dim();
        d * self.r1() + self.r1() * d + d + self.r3() * d + d + 2
    }

    pub fn report(&self) -> ModuleReport {
        ModuleReport {
            label: self.label.clone(),
            dim: self.dim(),
            r1: self.r1(),
            r3: self.r3(),
            eta: self.eraser.eta,
            alpha: self.gate.alpha,
            gamma: self.gate.gamma,
            tau1: self.gate.tau1,
            tau2: self.gate.tau2,
            u: self.gate.u,
            param_count: self.param_count(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let d = self.dim();
        check_dim(d, self.gate.dim())?;
        check_dim(d, self.eraser.w_in.ncols())?;
        check_dim(d, self.gate.v_gate.nrows())?;
        check_dim(self.r1(), self.eraser.w_in.nrows())?;
        let label = self.label.as_bytes();
        let mut buf = Vec::with_capacity(
            MODULE_FIXED_HEADER + label.len() + 4 * (2 * self.r1() * d + 4 * d + self.r3() * d),
        );
        buf.extend_from_slice(MODULE_MAGIC);
        put_u32(&mut buf, MODULE_VERSION);
        put_u32(&mut buf, d as u32);
        put_u32(&mut buf, self.r1() as u32);
        put_u32(&mut buf, self.r3() as u32);
        for v in [
            self.eraser.eta,
            self.gate.alpha,
            self.gate.gamma,
            self.gate.tau1,
            self.gate.tau2,
            self.gate.u,
        ] {
            put_f32(&mut buf, v as f32);
        }
        put_u32(&mut buf, label.len() as u32);
        buf.extend_from_slice(label);
        let put_rows = |buf: &mut Vec<u8>, m: &DMatrix<f64>| {
            for r in 0..m.nrows() {
                for c in 0..m.ncols() {
                    put_f32(buf, m[(r, c)] as f32);
                }
            }
        };
        let put_vec = |buf: &mut Vec<u8>, v: &DVector<f64>| {
            for &x in v.iter() {
                put_f32(buf, x as f32);
            }
        };
        put_rows(&mut buf, &self.eraser.v_map);
        put_rows(&mut buf, &self.eraser.w_in);
        put_vec(&mut buf, &self.eraser.bias);
        put_vec(&mut buf, &self.eraser.mu_tar);
        put_vec(&mut buf, &self.eraser.mu_map);
        put_rows(&mut buf, &self.gate.v_gate.transpose());
        put_vec(&mut buf, &self.gate.beta);
        Ok(buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| GloceError::MalformedModule(m.to_string());
        let mut r = Reader::new(bytes);
        if r.take(4).ok_or_else(|| bad("file shorter than magic"))? != MODULE_MAGIC {
            return Err(bad("bad magic"));
        }
        let version = r.u32().ok_or_else(|| bad("truncated header"))?;
        if version != MODULE_VERSION {
            return Err(GloceError::MalformedModule(format!(
                "unsupported version {version}"
            )));
        }
        let d = r.u32().ok_or_else(|| bad("truncated header"))? as usize;
        let r1 = r.u32().ok_or_else(|| bad("truncated header"))? as usize;
        let r3 = r.u32().ok_or_else(|| bad("truncated header"))? as usize;
        if d == 0 || r1 == 0 || r3 == 0 || r1 > d || r3 > d {
            return Err(GloceError::MalformedModule(format!(
                "invalid shape D={d} r1={r1} r3={r3}"
            )));
        }
        let mut scalars = [0f64; 6];
        for s in scalars.iter_mut() {
            *s = r.f32().ok_or_else(|| bad("truncated header"))? as f64;
        }
        let [eta, alpha, gamma, tau1, tau2, u] = scalars;
        let label_len = r.u32().ok_or_else(|| bad("truncated header"))? as usize;
        let label = r.take(label_len).ok_or_else(|| bad("truncated label"))?;
        let label = std::str::from_utf8(label)
            .map_err(|_| bad("label is not UTF-8"))?
            .to_string();
        let floats = 2 * r1 * d + 4 * d + r3 * d;
        if r.remaining() != floats * 4 {
            return Err(GloceError::MalformedModule(format!(
                "payload is {} bytes, header implies {}",
                r.remaining(),
                floats * 4
            )));
        }
        let mut next = |n: usize| -> Result<Vec<f64>> {
            let v = r.f32s(n).ok_or_else(|| bad("truncated payload"))?;
            if v.iter().any(|x| !x.is_finite()) {
                return Err(bad("non-finite parameter"));
            }
            Ok(v.into_iter().map(|x| x as f64).collect())
        };
        let v_map = DMatrix::from_row_slice(d, r1, &next(d * r1)?);
        let w_in = DMatrix::from_row_slice(r1, d, &next(r1 * d)?);
        let bias = DVector::from_vec(next(d)?);
        let mu_tar = DVector::from_vec(next(d)?);
        let mu_map = DVector::from_vec(next(d)?);
        let v_gate = DMatrix::from_row_slice(r3, d, &next(r3 * d)?).transpose();
        let beta = DVector::from_vec(next(d)?);
        Ok(GloceModule {
            label,
            eraser: LowRankEraser {
                eta,
                v_map,
                w_in,
                bias,
                mu_tar,
                mu_map,
            },
            gate: GateParams {
                v_gate,
                beta,
                alpha,
                gamma,
                tau1,
                tau2,
                u,
            },
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// Payload size in bytes of a `.glmod` file (header and label excluded).
pub fn module_payload_bytes(dim: usize, r1: usize, r3: usize) -> usize {
    4 * (2 * r1 * dim + 4 * dim + r3 * dim)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModuleReport {
    pub label: String,
    pub dim: usize,
    pub r1: usize,
    pub r3: usize,
    pub eta: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub tau1: f64,
    pub tau2: f64,
    pub u: f64,
    pub param_count: usize,
}

impl fmt::Display for ModuleReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "label\t{}", self.label)?;
        writeln!(f, "dim\t{}", self.dim)?;
        writeln!(f, "r1\t{}", self.r1)?;
        writeln!(f, "r3\t{}", self.r3)?;
        writeln!(f, "eta\t{}", self.eta)?;
        writeln!(f, "alpha\t{}", self.alpha)?;
        writeln!(f, "gamma\t{}", self.gamma)?;
        writeln!(f, "tau1\t{}", self.tau1)?;
        writeln!(f, "tau2\t{}", self.tau2)?;
        writeln!(f, "u\t{}", self.u)?;
        write!(f, "params_per_layer\t{}", self.param_count)
    }
}

pub fn inspect(m: &GloceModule) -> ModuleReport {
    m.report()
}

fn common_dim(groups: &[&[EmbeddingSet]]) -> Result<usize> {
    let mut dim = None;
    for set in groups.iter().flat_map(|g| g.iter()) {
        match dim {
            None => dim = Some(set.dim),
            Some(d) => check_dim(d, set.dim)?,
        }
    }
    dim.ok_or(GloceError::EmptyAccumulator)
}

/// Fits a module end to end: target and mapping statistics, the closed-form
/// eraser, the gate basis and the gate calibration.
///
/// Mapping dumps are pooled into one set of statistics; so are surrogate
/// dumps, whose mean centers the gate.
pub fn assemble(
    label: impl Into<String>,
    target: &EmbeddingSet,
    map_pool: &[EmbeddingSet],
    surrogate: &[EmbeddingSet],
    anchors: &[EmbeddingSet],
    cfg: &Config,
) -> Result<GloceModule> {
    let d = common_dim(&[std::slice::from_ref(target), map_pool, surrogate, anchors])?;
    cfg.validate(d)?;
    if map_pool.is_empty() {
        return Err(GloceError::InvalidConfig(
            "at least one mapping dump is required".into(),
        ));
    }
    if surrogate.is_empty() {
        return Err(GloceError::InvalidConfig(
            "at least one surrogate dump is required".into(),
        ));
    }
    let stats_tar = ConceptStats::from_set(target).map_err(|e| e.in_stage("target statistics"))?;
    let stats_map =
        ConceptStats::from_sets(map_pool).map_err(|e| e.in_stage("mapping statistics"))?;
    let eraser = compute_gloce_eraser(&stats_tar, &stats_map, cfg.eta, cfg.r1, cfg.r2)
        .map_err(|e| e.in_stage("eraser"))?;
    let mut sur = StreamingMoments::new(d);
    for s in surrogate {
        sur.accumulate_set(s)
            .map_err(|e| e.in_stage("surrogate mean"))?;
    }
    let gate = fit_gate(
        target,
        sur.mean(),
        anchors,
        cfg.r3,
        cfg.tau1,
        cfg.effective_tau2(),
        cfg.u,
        cfg.gamma_spread,
    )
    .map_err(|e| e.in_stage("gate"))?;
    GloceModule::from_parts(label, &eraser, &gate)
}
