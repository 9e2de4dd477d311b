// SPDX-License-Identifier: MIT OR Apache-2.0

//! Multi-concept erasure.
//!
//! A [`ModuleBank`] holds one module per target concept for a single layer.
//! Every token is handled by the module whose gate value is highest; the
//! others leave it alone. Ties go to the earlier module.
//!
//! Banks are stored as `.glbk` containers: `"GLBK"`, u32 LE version = 1,
//! u32 LE count, then for each module a u64 LE byte length followed by the
//! module's `.glmod` bytes.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::binio::{put_u32, put_u64, Reader};
use crate::error::{check_dim, GloceError, Result};
use crate::module::GloceModule;

pub const BANK_MAGIC: &[u8; 4] = b"GLBK";
pub const BANK_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ModuleBank {
    modules: Vec<GloceModule>,
}

/// Which module handled a token. `module` is `None` when every gate value is
/// exactly zero, in which case the token passes through unchanged.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Route {
    pub module: Option<usize>,
    pub gate: f64,
}

impl ModuleBank {
    pub fn new(modules: Vec<GloceModule>) -> Result<Self> {
        let first = modules.first().ok_or(GloceError::EmptyBank)?;
        let d = first.dim();
        let mut seen = HashSet::new();
        for m in &modules {
            check_dim(d, m.dim())?;
            if !seen.insert(m.label.as_str()) {
                return Err(GloceError::DuplicateLabel(m.label.clone()));
            }
        }
        Ok(ModuleBank { modules })
    }

    pub fn dim(&self) -> usize {
        self.modules[0].dim()
    }

    pub fn modules(&self) -> &[GloceModule] {
        &self.modules
    }

    pub fn len(&self) -> usize {
        self.modules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modules.is_empty()
    }

    pub fn labels(&self) -> Vec<&str> {
        self.modules.iter().map(|m| m.label.as_str()).collect()
    }

    /// Module with the highest gate value for `token`.
    pub fn route_token(&self, token: &[f64]) -> Result<Route> {
        let mut best = 0usize;
        let mut best_s = f64::NEG_INFINITY;
        for (i, m) in self.modules.iter().enumerate() {
            let s = m.gate_value(token)?;
            if s > best_s {
                best = i;
                best_s = s;
            }
        }
        Ok(Route {
            module: (best_s > 0.0).then_some(best),
            gate: best_s,
        })
    }

    /// Routes and applies every token of a flat `T*D` pass.
    pub fn route_and_apply(&self, pass: &[f32]) -> Result<(Vec<f32>, Vec<Route>)> {
        let d = self.dim();
        if !pass.len().is_multiple_of(d) {
            return Err(GloceError::DimensionMismatch {
                expected: d,
                got: pass.len() % d,
            });
        }
        let per_token: Vec<(Vec<f32>, Route)> = pass
            .par_chunks(d)
            .map(|tok| {
                let x: Vec<f64> = tok.iter().map(|&v| v as f64).collect();
                let route = self.route_token(&x)?;
                let out = match route.module {
                    Some(i) => self.modules[i].blend(&x, route.gate)?,
                    None => tok.to_vec(),
                };
                Ok((out, route))
            })
            .collect::<Result<_>>()?;
        let mut out = Vec::with_capacity(pass.len());
        let mut routes = Vec::with_capacity(per_token.len());
        for (tok, r) in per_token {
            out.extend_from_slice(&tok);
            routes.push(r);
        }
        Ok((out, routes))
    }

    /// Labels of the routed modules, `None` for untouched tokens.
    pub fn route_labels(&self, routes: &[Route]) -> Vec<Option<&str>> {
        routes
            .iter()
            .map(|r| r.module.map(|i| self.modules[i].label.as_str()))
            .collect()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        if self.modules.is_empty() {
            return Err(GloceError::EmptyBank);
        }
        let mut buf = Vec::new();
        buf.extend_from_slice(BANK_MAGIC);
        put_u32(&mut buf, BANK_VERSION);
        put_u32(&mut buf, self.modules.len() as u32);
        for m in &self.modules {
            let blob = m.to_bytes()?;
            put_u64(&mut buf, blob.len() as u64);
            buf.extend_from_slice(&blob);
        }
        Ok(buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| GloceError::MalformedBank(m.to_string());
        let mut r = Reader::new(bytes);
        if r.take(4).ok_or_else(|| bad("file shorter than magic"))? != BANK_MAGIC {
            return Err(bad("bad magic"));
        }
        let version = r.u32().ok_or_else(|| bad("truncated header"))?;
        if version != BANK_VERSION {
            return Err(GloceError::MalformedBank(format!(
                "unsupported version {version}"
            )));
        }
        let count = r.u32().ok_or_else(|| bad("truncated header"))? as usize;
        if count == 0 {
            return Err(bad("bank holds no modules"));
        }
        let mut modules = Vec::with_capacity(count.min(1 << 16));
        for i in 0..count {
            let len = r.u64().ok_or_else(|| bad("truncated module length"))?;
            let blob = usize::try_from(len)
                .ok()
                .and_then(|n| r.take(n))
                .ok_or_else(|| bad("truncated module blob"))?;
            let m = GloceModule::from_bytes(blob)
                .map_err(|e| GloceError::MalformedBank(format!("module {i}: {e}")))?;
            modules.push(m);
        }
        if r.remaining() != 0 {
            return Err(bad("trailing bytes after last module"));
        }
        ModuleBank::new(modules).map_err(|e| GloceError::MalformedBank(e.to_string()))
    }
}

pub fn save_bank(bank: &ModuleBank, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, bank.to_bytes()?)?;
    Ok(())
}

pub fn load_bank(path: impl AsRef<Path>) -> Result<ModuleBank> {
    ModuleBank::from_bytes(&fs::read(path)?)
}
