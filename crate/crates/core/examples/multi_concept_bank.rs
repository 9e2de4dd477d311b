// SPDX-License-Identifier: MIT OR Apache-2.0

//! One module per target concept, combined into a bank that routes each token
//! to the module with the highest gate value.
//!
//! ```bash
//! cargo run --example multi_concept_bank
//! ```

use gloce::scenario::{Scenario, ScenarioSpec};
use gloce::{assemble, Config, ModuleBank};

fn main() -> gloce::Result<()> {
    let sc = Scenario::new(ScenarioSpec {
        targets: 3,
        ..ScenarioSpec::default()
    })?;
    let cfg = Config {
        d: sc.spec.dim,
        ..Config::default()
    };
    let (mapping, surrogate, anchor) = (sc.mapping_set()?, sc.surrogate_set()?, sc.anchor_set()?);
    let mut modules = Vec::new();
    for i in 0..3 {
        let target = sc.target_set(i)?;
        modules.push(assemble(
            Scenario::target_label(i),
            &target,
            std::slice::from_ref(&mapping),
            std::slice::from_ref(&surrogate),
            std::slice::from_ref(&anchor),
            &cfg,
        )?);
    }
    let bank = ModuleBank::new(modules)?;

    for i in 0..3 {
        let (pass, _) = sc.mixed_pass(i, (6, 3, 3), i as u64)?;
        let (_, routes) = bank.route_and_apply(&pass)?;
        // tokens whose best gate stays below one half are left essentially untouched
        let labels: Vec<&str> = bank
            .route_labels(&routes)
            .into_iter()
            .zip(&routes)
            .map(|(l, r)| if r.gate >= 0.5 { l.unwrap_or("-") } else { "-" })
            .collect();
        println!(
            "6 target_{i}, 3 anchor, 3 background tokens: {}",
            labels.join(" ")
        );
    }
    Ok(())
}
