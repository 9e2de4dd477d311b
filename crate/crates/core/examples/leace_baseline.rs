// SPDX-License-Identifier: MIT OR Apache-2.0

//! Full-rank least-squares concept erasure and its check against the generic
//! constrained solver.
//!
//! ```bash
//! cargo run --example leace_baseline
//! ```

use gloce::oracle::{stats_of_rows, synthetic_samples, verify_leace, VerifyRow};
use gloce::rng::{normal_matrix, substream};
use gloce::solve_leace;

fn main() -> gloce::Result<()> {
    let d = 6;
    let x = synthetic_samples(2, 0, d, 600);
    let stats = stats_of_rows(&x)?;
    let cross_cov = normal_matrix(&mut substream(2, 1), d, 2);

    let sol = solve_leace(&stats, &cross_cov)?;
    println!("|P C| = {:.3e}", (&sol.projection * &cross_cov).norm());
    println!(
        "|P^2 - P| = {:.3e} (oblique projection)",
        (&sol.projection * &sol.projection - &sol.projection).norm()
    );

    let row = verify_leace(2, &x, &cross_cov)?;
    println!("{}", VerifyRow::TSV_HEADER);
    println!("{}", row.to_tsv());
    Ok(())
}
