// SPDX-License-Identifier: MIT OR Apache-2.0

//! Fits a gate on a synthetic target and calibrates it on anchor passes.
//!
//! ```bash
//! cargo run --example gate_calibration
//! ```

use gloce::gate::{anchor_scores, fit_gate};
use gloce::scenario::{Scenario, ScenarioSpec};
use gloce::{Config, StreamingMoments};

fn main() -> gloce::Result<()> {
    let sc = Scenario::new(ScenarioSpec::default())?;
    let cfg = Config::default();
    let target = sc.target_set(0)?;
    let anchor = sc.anchor_set()?;
    let mut surrogate = StreamingMoments::new(sc.spec.dim);
    surrogate.accumulate_set(&sc.surrogate_set()?)?;

    let gate = fit_gate(
        &target,
        surrogate.mean(),
        std::slice::from_ref(&anchor),
        cfg.r3,
        cfg.tau1,
        cfg.effective_tau2(),
        cfg.u,
        cfg.gamma_spread,
    )?;
    let scores = anchor_scores(&gate.v_gate, &gate.beta, std::slice::from_ref(&anchor))?;
    let open = scores
        .iter()
        .filter(|&&p| gate.value_at_score(p) > 0.5)
        .count();
    println!("alpha = {:.6}, gamma = {:.4}", gate.alpha, gate.gamma);
    println!(
        "s(gamma - tau2) = {:.6}",
        gate.value_at_score(gate.gamma - gate.tau2)
    );
    println!(
        "s(gamma + tau2) = {:.6}",
        gate.value_at_score(gate.gamma + gate.tau2)
    );
    println!(
        "anchor passes whose peak token opens the gate: {open}/{}",
        scores.len()
    );

    let first_target_token: Vec<f64> = target.pass(0)[..sc.spec.dim]
        .iter()
        .map(|&v| v as f64)
        .collect();
    let score = gate.score(&first_target_token)?;
    println!(
        "target token score {score:.2} -> s = {:.6}",
        gate.value_at_score(score)
    );
    Ok(())
}
