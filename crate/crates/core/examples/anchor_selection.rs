// SPDX-License-Identifier: MIT OR Apache-2.0

//! Ranks candidate concepts by cosine similarity to a target embedding:
//! the closest become anchors, the farthest become mapping concepts.
//!
//! ```bash
//! cargo run --example anchor_selection
//! ```

use gloce::{select_anchors, AnchorMode};

fn main() -> gloce::Result<()> {
    let target = [1.0, 0.2, 0.0];
    let pool: Vec<(String, Vec<f64>)> = [
        ("painter", [0.9, 0.3, 0.1]),
        ("sculptor", [0.8, 0.1, 0.4]),
        ("landscape", [0.1, 0.9, 0.2]),
        ("dog", [-0.2, 0.1, 1.0]),
        ("portrait", [0.7, 0.6, 0.0]),
    ]
    .into_iter()
    .map(|(l, v)| (l.to_string(), v.to_vec()))
    .collect();

    println!(
        "anchors: {:?}",
        select_anchors(&pool, &target, 2, AnchorMode::Similar)?
    );
    println!(
        "mapping: {:?}",
        select_anchors(&pool, &target, 2, AnchorMode::Dissimilar)?
    );
    Ok(())
}
