// SPDX-License-Identifier: MIT OR Apache-2.0

//! Compares the closed-form eraser with the generic constrained solver over
//! a sweep of seeds and ranks.
//!
//! ```bash
//! cargo run --example verify_closed_form
//! ```

use gloce::oracle::{rows_to_tsv, verify_sweep};

fn main() -> gloce::Result<()> {
    let rows = verify_sweep(8, 9, None, 1.0, 1024)?;
    print!("{}", rows_to_tsv(&rows));
    let passed = rows.iter().filter(|r| r.passed()).count();
    println!("{passed}/{} instances agree", rows.len());
    Ok(())
}
