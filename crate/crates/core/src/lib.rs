// SPDX-License-Identifier: MIT OR Apache-2.0

//! Training-free localized concept erasure for per-layer token embeddings.
//!
//! A [`GloceModule`] is fitted in closed form from a few embedding dumps:
//!
//! 1. [`stats`] accumulates token moments and principal components of the
//!    target and mapping concepts.
//! 2. [`eraser`] removes the top target components and maps what remains onto
//!    the mapping subspace with a rank-`r1` projection and a bias.
//! 3. [`gate`] fits a low-rank logistic gate on surrogate-centered target
//!    residuals and calibrates its threshold on anchor concepts.
//! 4. [`module`] blends each token with its erased image by the gate value;
//!    [`composer`] routes tokens across several modules.
//!
//! [`oracle`] solves the same constrained least-squares problems generically
//! and is used to check the closed forms.

mod binio;
pub mod cli;
pub mod composer;
pub mod config;
pub mod embstore;
pub mod eraser;
pub mod error;
pub mod gate;
pub mod module;
pub mod oracle;
pub mod rng;
pub mod scenario;
pub mod stats;

pub use composer::{load_bank, save_bank, ModuleBank, Route};
pub use config::{Config, Tau2Mode};
pub use embstore::{
    read_dump, select_anchors, synth_concept_set, write_dump, AnchorMode, EmbeddingSet,
    SynthConcept,
};
pub use eraser::{
    apply_eraser, compute_gloce_eraser, solve_leace, EraserParams, LeaceSolution, LowRankEraser,
};
pub use error::{GloceError, Result};
pub use gate::{
    calibrate_gate, fit_gate_basis, gate_pass_score, gate_value, GammaSpread, GateParams,
};
pub use module::{assemble, inspect, GateMode, GloceModule, ModuleReport};
pub use stats::{spectrum_report, top_components, ConceptStats, SpectrumReport, StreamingMoments};
