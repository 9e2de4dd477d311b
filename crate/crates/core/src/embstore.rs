// SPDX-License-Identifier: MIT OR Apache-2.0

//! Token-embedding dumps.
//!
//! An [`EmbeddingSet`] holds `P` passes of `T` tokens of dimension `D` for a
//! single concept at a single layer. A pass is one layer output for one image
//! at one timestep. Sets are stored on disk in the `.gemb` format:
//!
//! ```text
//! offset  size  field
//! 0       4     magic "GEMB"
//! 4       4     u32 LE version (= 1)
//! 8       4     u32 LE D
//! 12      4     u32 LE T
//! 16      4     u32 LE P
//! 20      16    reserved, zero
//! 36      4     u32 LE label_len
//! 40      n     label, UTF-8
//! 40+n    ...   P*T*D f32 LE, pass-major, then token, then dim
//! ```

use std::cmp::Ordering;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::binio::{put_f32, put_u32, Reader};
use crate::error::{GloceError, Result};
use crate::rng::substream;

pub const DUMP_MAGIC: &[u8; 4] = b"GEMB";
pub const DUMP_VERSION: u32 = 1;
/// Bytes before the label: magic, version, D, T, P, reserved, label_len.
pub const DUMP_FIXED_HEADER: usize = 40;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    pub label: String,
    pub dim: usize,
    pub tokens_per_pass: usize,
    pub passes: usize,
    pub data: Vec<f32>,
}

impl EmbeddingSet {
    /// Builds a set and checks its invariants.
    pub fn new(
        label: impl Into<String>,
        dim: usize,
        tokens_per_pass: usize,
        passes: usize,
        data: Vec<f32>,
    ) -> Result<Self> {
        let set = EmbeddingSet {
            label: label.into(),
            dim,
            tokens_per_pass,
            passes,
            data,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.tokens_per_pass == 0 || self.passes == 0 {
            return Err(GloceError::InvalidEmbeddingSet(format!(
                "D, T, P must be positive (got {}, {}, {})",
                self.dim, self.tokens_per_pass, self.passes
            )));
        }
        let expected = self.passes * self.tokens_per_pass * self.dim;
        if self.data.len() != expected {
            return Err(GloceError::InvalidEmbeddingSet(format!(
                "data length {} != P*T*D = {expected}",
                self.data.len()
            )));
        }
        if let Some(i) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(GloceError::InvalidEmbeddingSet(format!(
                "non-finite value at index {i}"
            )));
        }
        Ok(())
    }

    pub fn token_count(&self) -> usize {
        self.passes * self.tokens_per_pass
    }

    /// One pass as a flat `T*D` slice.
    pub fn pass(&self, p: usize) -> &[f32] {
        let len = self.tokens_per_pass * self.dim;
        &self.data[p * len..(p + 1) * len]
    }

    pub fn pass_iter(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.tokens_per_pass * self.dim)
    }

    pub fn token_iter(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim)
    }

    /// All tokens stacked as an `N × D` matrix in f64.
    pub fn token_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_iterator(
            self.token_count(),
            self.dim,
            self.data.iter().map(|&v| v as f64),
        )
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let label = self.label.as_bytes();
        let mut buf = Vec::with_capacity(DUMP_FIXED_HEADER + label.len() + self.data.len() * 4);
        buf.extend_from_slice(DUMP_MAGIC);
        put_u32(&mut buf, DUMP_VERSION);
        for n in [self.dim, self.tokens_per_pass, self.passes, label.len()] {
            if n > u32::MAX as usize {
                return Err(GloceError::InvalidEmbeddingSet(format!(
                    "header field {n} exceeds u32"
                )));
            }
        }
        put_u32(&mut buf, self.dim as u32);
        put_u32(&mut buf, self.tokens_per_pass as u32);
        put_u32(&mut buf, self.passes as u32);
        buf.extend_from_slice(&[0u8; 16]);
        put_u32(&mut buf, label.len() as u32);
        buf.extend_from_slice(label);
        for &v in &self.data {
            put_f32(&mut buf, v);
        }
        Ok(buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| GloceError::MalformedDump(msg.to_string());
        let mut r = Reader::new(bytes);
        let magic = r.take(4).ok_or_else(|| bad("file shorter than magic"))?;
        if magic != DUMP_MAGIC {
            return Err(bad("bad magic"));
        }
        let version = r.u32().ok_or_else(|| bad("truncated header"))?;
        if version != DUMP_VERSION {
            return Err(GloceError::MalformedDump(format!(
                "unsupported version {version}"
            )));
        }
        let dim = r.u32().ok_or_else(|| bad("truncated header"))? as usize;
        let tokens = r.u32().ok_or_else(|| bad("truncated header"))? as usize;
        let passes = r.u32().ok_or_else(|| bad("truncated header"))? as usize;
        let reserved = r.take(16).ok_or_else(|| bad("truncated header"))?;
        if reserved.iter().any(|&b| b != 0) {
            return Err(bad("reserved header bytes are not zero"));
        }
        let label_len = r.u32().ok_or_else(|| bad("truncated header"))? as usize;
        let label = r.take(label_len).ok_or_else(|| bad("truncated label"))?;
        let label = std::str::from_utf8(label)
            .map_err(|_| bad("label is not UTF-8"))?
            .to_string();
        let count = (dim as u64) * (tokens as u64) * (passes as u64);
        if count.saturating_mul(4) != r.remaining() as u64 {
            return Err(GloceError::MalformedDump(format!(
                "payload is {} bytes, header implies {}",
                r.remaining(),
                count.saturating_mul(4)
            )));
        }
        let data = r
            .f32s(count as usize)
            .ok_or_else(|| bad("truncated payload"))?;
        EmbeddingSet::new(label, dim, tokens, passes, data)
            .map_err(|e| GloceError::MalformedDump(e.to_string()))
    }
}

/// Writes `set` to `path`. Invalid sets are rejected before the file is touched.
pub fn write_dump(set: &EmbeddingSet, path: impl AsRef<Path>) -> Result<()> {
    let bytes = set.to_bytes()?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_dump(path: impl AsRef<Path>) -> Result<EmbeddingSet> {
    let bytes = fs::read(path)?;
    EmbeddingSet::from_bytes(&bytes)
}

/// Size in bytes of a `.gemb` file with the given shape and label length.
pub fn dump_file_size(dim: usize, tokens: usize, passes: usize, label_len: usize) -> usize {
    DUMP_FIXED_HEADER + label_len + dim * tokens * passes * 4
}

/// Parameters of a synthetic low-rank Gaussian concept.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConcept {
    pub mean: DVector<f64>,
    /// `D × k`, orthonormal columns.
    pub basis: DMatrix<f64>,
    /// Length `k`, positive and descending.
    pub scales: Vec<f64>,
    pub noise_sigma: f64,
    /// Share of each pass (a prefix) occupied by the concept, in (0, 1].
    pub concept_token_fraction: f64,
}

impl SynthConcept {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        let bad = |m: String| GloceError::InvalidConfig(m);
        if self.mean.len() != dim {
            return Err(GloceError::DimensionMismatch {
                expected: dim,
                got: self.mean.len(),
            });
        }
        if self.basis.nrows() != dim {
            return Err(GloceError::DimensionMismatch {
                expected: dim,
                got: self.basis.nrows(),
            });
        }
        if self.basis.ncols() != self.scales.len() {
            return Err(GloceError::DimensionMismatch {
                expected: self.basis.ncols(),
                got: self.scales.len(),
            });
        }
        let k = self.basis.ncols();
        if k > 0 {
            let gram = self.basis.transpose() * &self.basis;
            let err = (gram - DMatrix::<f64>::identity(k, k)).abs().max();
            if err > 1e-10 {
                return Err(bad(format!(
                    "basis columns not orthonormal (error {err:e})"
                )));
            }
        }
        if self.scales.windows(2).any(|w| w[0] < w[1]) {
            return Err(bad("scales must be sorted descending".into()));
        }
        if self.scales.iter().any(|&s| s < 0.0 || !s.is_finite()) {
            return Err(bad("scales must be finite and non-negative".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(bad("noise_sigma must be finite and non-negative".into()));
        }
        if !(self.concept_token_fraction > 0.0 && self.concept_token_fraction <= 1.0) {
            return Err(bad("concept_token_fraction must lie in (0, 1]".into()));
        }
        Ok(())
    }

    fn draw<R: Rng>(&self, rng: &mut R, out: &mut [f32]) {
        let k = self.scales.len();
        let z: Vec<f64> = (0..k)
            .map(|i| self.scales[i] * rng.sample::<f64, _>(StandardNormal))
            .collect();
        for (d, slot) in out.iter_mut().enumerate() {
            let mut v = self.mean[d];
            for (i, zi) in z.iter().enumerate() {
                v += self.basis[(d, i)] * zi;
            }
            let w: f64 = rng.sample(StandardNormal);
            v += self.noise_sigma * w;
            *slot = v as f32;
        }
    }
}

/// Number of concept tokens at the start of each pass.
pub fn concept_prefix_len(fraction: f64, tokens_per_pass: usize) -> usize {
    (fraction * tokens_per_pass as f64).round() as usize
}

/// Generates `passes` passes whose first `round(fraction*T)` tokens come from
/// `concept` and whose remaining tokens come from `background`.
pub fn synth_concept_set(
    label: impl Into<String>,
    concept: &SynthConcept,
    background: &SynthConcept,
    dim: usize,
    tokens_per_pass: usize,
    passes: usize,
    seed: u64,
) -> Result<EmbeddingSet> {
    concept.validate(dim)?;
    background.validate(dim)?;
    let prefix = concept_prefix_len(concept.concept_token_fraction, tokens_per_pass);
    if prefix < 1 {
        return Err(GloceError::InvalidConfig(format!(
            "concept fraction {} leaves no concept tokens in a pass of {tokens_per_pass}",
            concept.concept_token_fraction
        )));
    }
    let mut data = vec![0f32; passes * tokens_per_pass * dim];
    for (p, pass) in data.chunks_exact_mut(tokens_per_pass * dim).enumerate() {
        let mut rng = substream(seed, p as u64);
        for (t, token) in pass.chunks_exact_mut(dim).enumerate() {
            if t < prefix {
                concept.draw(&mut rng, token);
            } else {
                background.draw(&mut rng, token);
            }
        }
    }
    EmbeddingSet::new(label, dim, tokens_per_pass, passes, data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnchorMode {
    /// Highest cosine similarity first (anchor concepts).
    Similar,
    /// Lowest cosine similarity first (mapping concepts).
    Dissimilar,
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Picks `k` labels from `pool` ranked by cosine similarity to `target`.
/// Ties go to the lexicographically smaller label.
pub fn select_anchors(
    pool: &[(String, Vec<f64>)],
    target: &[f64],
    k: usize,
    mode: AnchorMode,
) -> Result<Vec<String>> {
    if pool.is_empty() {
        return Err(GloceError::EmptyPool);
    }
    if k > pool.len() {
        return Err(GloceError::PoolTooSmall {
            requested: k,
            available: pool.len(),
        });
    }
    if target.iter().all(|&v| v == 0.0) {
        return Err(GloceError::ZeroNorm("target".into()));
    }
    let mut scored = Vec::with_capacity(pool.len());
    for (label, v) in pool {
        if v.len() != target.len() {
            return Err(GloceError::DimensionMismatch {
                expected: target.len(),
                got: v.len(),
            });
        }
        if v.iter().all(|&x| x == 0.0) {
            return Err(GloceError::ZeroNorm(label.clone()));
        }
        scored.push((label.as_str(), cosine_similarity(v, target)));
    }
    scored.sort_by(|a, b| {
        let primary = match mode {
            AnchorMode::Similar => b.1.partial_cmp(&a.1),
            AnchorMode::Dissimilar => a.1.partial_cmp(&b.1),
        };
        primary
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.0.cmp(b.0))
    });
    Ok(scored
        .into_iter()
        .take(k)
        .map(|(l, _)| l.to_string())
        .collect())
}
