// SPDX-License-Identifier: MIT OR Apache-2.0

//! Accumulates token moments in shards and merges them.
//!
//! ```bash
//! cargo run --example streaming_moments
//! ```

use gloce::oracle::synthetic_samples;
use gloce::StreamingMoments;

fn main() -> gloce::Result<()> {
    let d = 6;
    let rows = synthetic_samples(1, 0, d, 1000);

    // one token at a time
    let mut single = StreamingMoments::new(d);
    for r in rows.row_iter() {
        let token: Vec<f64> = r.iter().copied().collect();
        single.accumulate(&token)?;
    }

    // four shards of 250 tokens, merged afterwards
    let mut merged = StreamingMoments::new(d);
    for s in 0..4 {
        let mut shard = StreamingMoments::new(d);
        shard.accumulate_block(&rows.rows(s * 250, 250).into_owned())?;
        merged.merge(&shard)?;
    }

    let (a, b) = (single.finalize()?, merged.finalize()?);
    println!("tokens: {}", a.count);
    println!("mean difference: {:.3e}", (&a.mean - &b.mean).norm());
    println!(
        "covariance difference: {:.3e}",
        (&a.cov - &b.cov).norm() / a.cov.norm()
    );
    println!("leading eigenvalues: {:.4?}", &a.eigvals.as_slice()[..3]);
    Ok(())
}
