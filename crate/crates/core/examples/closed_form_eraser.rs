// SPDX-License-Identifier: MIT OR Apache-2.0

//! Fits the low-rank eraser from target and mapping statistics and applies it
//! to a single token.
//!
//! ```bash
//! cargo run --example closed_form_eraser
//! ```

use gloce::oracle::{stats_of_rows, synthetic_samples};
use gloce::{apply_eraser, compute_gloce_eraser};

fn main() -> gloce::Result<()> {
    let d = 8;
    let target = stats_of_rows(&synthetic_samples(3, 0, d, 2000))?;
    let mapping = stats_of_rows(&synthetic_samples(3, 1, d, 2000))?;

    // remove the top 3 target components, map onto the top 2 mapping ones
    let eraser = compute_gloce_eraser(&target, &mapping, 1.0, 2, 3)?;
    let p = eraser.dense_projection();
    println!("rank of the projection: {}", p.rank(1e-10));
    println!(
        "|P Cov V_tar| = {:.3e}",
        (&p * &target.cov * &eraser.v_tar).norm()
    );

    // the target mean lands on the mapping mean
    let out = apply_eraser(&eraser, target.mean.as_slice())?;
    println!(
        "|E(mu_tar) - mu_map| = {:.3e}",
        (out - &mapping.mean).norm()
    );
    Ok(())
}
