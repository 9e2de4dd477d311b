// SPDX-License-Identifier: MIT OR Apache-2.0

//! Seeded synthetic concept families.
//!
//! A [`Scenario`] places every target concept at a fixed offset along its own
//! axis from a shared background mean. Anchor concepts sit at the background
//! mean but vary along all target axes, mapping concepts sit off-axis, and the
//! surrogate is the generic background distribution. All other structure lives
//! in the orthogonal complement of the target axes.

use nalgebra::{DMatrix, DVector};

use crate::embstore::{synth_concept_set, EmbeddingSet, SynthConcept};
use crate::error::{GloceError, Result};
use crate::rng::{normal_vector, orthonormal_columns, substream};

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub dim: usize,
    pub tokens_per_pass: usize,
    pub passes: usize,
    pub targets: usize,
    /// Rank of each target's own variation.
    pub target_rank: usize,
    /// Offset of each target mean along its axis.
    pub separation: f64,
    /// Spread of anchor tokens along each target axis.
    pub anchor_spread: f64,
    pub noise_sigma: f64,
    pub concept_fraction: f64,
    pub seed: u64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        ScenarioSpec {
            dim: 32,
            tokens_per_pass: 16,
            passes: 48,
            targets: 1,
            target_rank: 4,
            separation: 8.0,
            anchor_spread: 1.0,
            noise_sigma: 0.05,
            concept_fraction: 0.5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    Target(usize),
    Anchor,
    Background,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub spec: ScenarioSpec,
    /// `D × targets`, one orthonormal axis per target.
    pub axes: DMatrix<f64>,
    pub background: SynthConcept,
    pub targets: Vec<SynthConcept>,
    pub anchor: SynthConcept,
    pub mapping: SynthConcept,
}

const BACKGROUND_SCALES: [f64; 4] = [1.5, 1.2, 1.0, 0.8];
const MAPPING_SCALES: [f64; 2] = [2.0, 1.0];
const ANCHOR_OWN_SCALES: [f64; 2] = [0.8, 0.6];

impl Scenario {
    pub fn new(spec: ScenarioSpec) -> Result<Self> {
        let d = spec.dim;
        let c = spec.targets;
        let free = d.saturating_sub(c);
        let needed = BACKGROUND_SCALES
            .len()
            .max(spec.target_rank)
            .max(MAPPING_SCALES.len() + 1);
        if c == 0 || free < needed {
            return Err(GloceError::InvalidConfig(format!(
                "dimension {d} too small for {c} targets of rank {}",
                spec.target_rank
            )));
        }
        let mut rng = substream(spec.seed, 1_000);
        let q = orthonormal_columns(&mut rng, d, d);
        let axes = q.columns(0, c).into_owned();
        let complement = q.columns(c, free).into_owned();
        let mut sub_basis = |k: usize| -> DMatrix<f64> {
            if k == 0 {
                return DMatrix::zeros(d, 0);
            }
            &complement * orthonormal_columns(&mut rng, free, k)
        };

        let bg_mean = normal_vector(&mut substream(spec.seed, 1_001), d) * 2.0;
        let background = SynthConcept {
            mean: bg_mean.clone(),
            basis: sub_basis(BACKGROUND_SCALES.len()),
            scales: BACKGROUND_SCALES.to_vec(),
            noise_sigma: spec.noise_sigma,
            concept_token_fraction: 1.0,
        };

        let target_scales: Vec<f64> = (0..spec.target_rank)
            .map(|i| 2.0 - 1.5 * i as f64 / spec.target_rank.max(1) as f64)
            .collect();
        let targets = (0..c)
            .map(|i| SynthConcept {
                mean: &bg_mean + axes.column(i) * spec.separation,
                basis: sub_basis(spec.target_rank),
                scales: target_scales.clone(),
                noise_sigma: spec.noise_sigma,
                concept_token_fraction: spec.concept_fraction,
            })
            .collect();

        let own = sub_basis(ANCHOR_OWN_SCALES.len());
        let mut anchor_dirs: Vec<(f64, DVector<f64>)> = (0..c)
            .map(|i| (spec.anchor_spread, axes.column(i).into_owned()))
            .chain(
                ANCHOR_OWN_SCALES
                    .iter()
                    .enumerate()
                    .map(|(j, &s)| (s, own.column(j).into_owned())),
            )
            .collect();
        anchor_dirs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
        let anchor_scales: Vec<f64> = anchor_dirs.iter().map(|(s, _)| *s).collect();
        let cols: Vec<DVector<f64>> = anchor_dirs.into_iter().map(|(_, v)| v).collect();
        let anchor_basis = DMatrix::from_columns(&cols);
        let anchor = SynthConcept {
            mean: bg_mean.clone(),
            basis: anchor_basis,
            scales: anchor_scales,
            noise_sigma: spec.noise_sigma,
            concept_token_fraction: spec.concept_fraction,
        };

        let map_dirs = sub_basis(MAPPING_SCALES.len() + 1);
        let mapping = SynthConcept {
            mean: &bg_mean + map_dirs.column(0) * 3.0,
            basis: map_dirs.columns(1, MAPPING_SCALES.len()).into_owned(),
            scales: MAPPING_SCALES.to_vec(),
            noise_sigma: spec.noise_sigma,
            concept_token_fraction: spec.concept_fraction,
        };

        Ok(Scenario {
            spec,
            axes,
            background,
            targets,
            anchor,
            mapping,
        })
    }

    fn set(&self, label: String, concept: &SynthConcept, stream: u64) -> Result<EmbeddingSet> {
        let s = &self.spec;
        synth_concept_set(
            label,
            concept,
            &self.background,
            s.dim,
            s.tokens_per_pass,
            s.passes,
            s.seed.wrapping_mul(1_000_003).wrapping_add(stream),
        )
    }

    pub fn target_label(i: usize) -> String {
        format!("target_{i}")
    }

    /// Target `i`: concept tokens in a prefix of every pass, background after.
    pub fn target_set(&self, i: usize) -> Result<EmbeddingSet> {
        let concept = self.targets.get(i).ok_or_else(|| {
            GloceError::InvalidConfig(format!("scenario has {} targets", self.targets.len()))
        })?;
        self.set(Self::target_label(i), concept, 10 + i as u64)
    }

    pub fn anchor_set(&self) -> Result<EmbeddingSet> {
        self.set("anchor".into(), &self.anchor, 1)
    }

    pub fn mapping_set(&self) -> Result<EmbeddingSet> {
        self.set("mapping".into(), &self.mapping, 2)
    }

    pub fn surrogate_set(&self) -> Result<EmbeddingSet> {
        self.set("surrogate".into(), &self.background, 3)
    }

    pub fn background_mean(&self) -> &DVector<f64> {
        &self.background.mean
    }

    /// One pass holding `counts.0` tokens of target `target`, then `counts.1`
    /// anchor tokens, then `counts.2` background tokens.
    pub fn mixed_pass(
        &self,
        target: usize,
        counts: (usize, usize, usize),
        seed: u64,
    ) -> Result<(Vec<f32>, Vec<TokenKind>)> {
        let concept = self.targets.get(target).ok_or_else(|| {
            GloceError::InvalidConfig(format!("scenario has {} targets", self.targets.len()))
        })?;
        let d = self.spec.dim;
        let mut out = Vec::with_capacity((counts.0 + counts.1 + counts.2) * d);
        let mut kinds = Vec::new();
        let pieces: [(&SynthConcept, usize, TokenKind); 3] = [
            (concept, counts.0, TokenKind::Target(target)),
            (&self.anchor, counts.1, TokenKind::Anchor),
            (&self.background, counts.2, TokenKind::Background),
        ];
        for (k, (c, n, kind)) in pieces.into_iter().enumerate() {
            if n == 0 {
                continue;
            }
            let mut one = c.clone();
            one.concept_token_fraction = 1.0;
            let set = synth_concept_set(
                "mixed",
                &one,
                &one,
                d,
                n,
                1,
                seed.wrapping_mul(7).wrapping_add(k as u64),
            )?;
            out.extend_from_slice(&set.data);
            kinds.extend(std::iter::repeat_n(kind, n));
        }
        Ok((out, kinds))
    }
}
