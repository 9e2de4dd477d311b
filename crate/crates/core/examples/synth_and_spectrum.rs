// SPDX-License-Identifier: MIT OR Apache-2.0

//! Generates a low-rank synthetic concept and prints its eigenvalue spectrum.
//!
//! ```bash
//! cargo run --example synth_and_spectrum
//! ```

use gloce::embstore::{synth_concept_set, SynthConcept};
use gloce::rng::{normal_vector, orthonormal_columns, substream};
use gloce::{spectrum_report, ConceptStats};

fn main() -> gloce::Result<()> {
    let d = 64;
    let mut rng = substream(7, 0);
    let concept = SynthConcept {
        mean: normal_vector(&mut rng, d),
        basis: orthonormal_columns(&mut rng, d, 4),
        scales: vec![2.0, 1.5, 1.2, 1.0],
        noise_sigma: 0.03,
        concept_token_fraction: 1.0,
    };
    // 64 passes of 77 tokens, every token drawn from the concept
    let set = synth_concept_set("rank4", &concept, &concept, d, 77, 64, 1)?;
    let stats = ConceptStats::from_set(&set)?;
    let report = spectrum_report(&stats, 8)?;
    print!("{}", report.to_tsv());
    println!("top-4 energy: {:.4}", report.energy_at(4).unwrap_or(0.0));
    Ok(())
}
