// SPDX-License-Identifier: MIT OR Apache-2.0

//! Assembles a module and applies it to a pass mixing target, anchor and
//! background tokens. Only the target tokens change.
//!
//! ```bash
//! cargo run --example localized_erasure
//! ```

use gloce::scenario::{Scenario, ScenarioSpec, TokenKind};
use gloce::{assemble, Config, GateMode};

fn main() -> gloce::Result<()> {
    let sc = Scenario::new(ScenarioSpec::default())?;
    let d = sc.spec.dim;
    let cfg = Config {
        d,
        ..Config::default()
    };
    let module = assemble(
        "target_0",
        &sc.target_set(0)?,
        &[sc.mapping_set()?],
        &[sc.surrogate_set()?],
        &[sc.anchor_set()?],
        &cfg,
    )?;
    println!("{}", module.report());

    let (pass, kinds) = sc.mixed_pass(0, (4, 4, 4), 42)?;
    let (out, gates) = module.apply_with(&pass, GateMode::Computed)?;
    println!("\nkind\tgate\trelative_change");
    for (t, (kind, s)) in kinds.iter().zip(&gates).enumerate() {
        let x = &pass[t * d..(t + 1) * d];
        let y = &out[t * d..(t + 1) * d];
        let diff: f32 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
        let norm: f32 = x.iter().map(|a| a * a).sum();
        let kind = match kind {
            TokenKind::Target(_) => "target",
            TokenKind::Anchor => "anchor",
            TokenKind::Background => "background",
        };
        println!("{kind}\t{s:.4}\t{:.4}", (diff / norm).sqrt());
    }
    Ok(())
}
