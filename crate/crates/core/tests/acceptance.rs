// SPDX-License-Identifier: MIT OR Apache-2.0

//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the report is printed by a plain
//! `cargo test`; the process exits non-zero if any criterion fails.

use std::time::{Duration, Instant};

use gloce::composer::ModuleBank;
use gloce::config::Config;
use gloce::embstore::{synth_concept_set, EmbeddingSet, SynthConcept, DUMP_MAGIC};
use gloce::eraser::{compute_gloce_eraser, solve_leace};
use gloce::error::GloceError;
use gloce::gate::{alpha_for, GateParams};
use gloce::module::{assemble, GloceModule};
use gloce::oracle::{
    mc_constraint_check, mc_constraint_check_dense, stats_of_rows, synthetic_samples,
    verify_leace_seeded, verify_sweep, OBJECTIVE_TOL, RESIDUAL_TOL,
};
use gloce::rng::{normal_matrix, normal_vector, orthonormal_columns, substream};
use gloce::scenario::{Scenario, ScenarioSpec, TokenKind};
use gloce::stats::{spectrum_report, top_components, ConceptStats, StreamingMoments};
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn err(e: GloceError) -> String {
    format!("error[{}]: {e}", e.name())
}

fn rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

fn vrel(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

/// Closed-form eraser against the generic constrained solver.
fn closed_form_optimality() -> Outcome {
    let start = Instant::now();
    let mut rows = Vec::new();
    for ranks in [(1, 3), (2, 3), (4, 8)] {
        rows.extend(verify_sweep(8, 20, Some(ranks), 1.0, 1024).map_err(err)?);
    }
    let elapsed = start.elapsed();
    let worst_gap = rows.iter().map(|r| r.relative_gap).fold(0.0, f64::max);
    let worst_res = rows
        .iter()
        .map(|r| r.closed_residual.max(r.oracle_residual))
        .fold(0.0, f64::max);
    let failed = rows.iter().filter(|r| !r.passed()).count();
    check(
        failed == 0 && worst_gap <= OBJECTIVE_TOL && worst_res <= RESIDUAL_TOL && elapsed < Duration::from_secs(10),
        format!(
            "{} instances, {failed} failed, max gap {worst_gap:.2e}, max residual {worst_res:.2e}, {:.2} s",
            rows.len(),
            elapsed.as_secs_f64()
        ),
    )
}

/// Full-rank baseline: analytic identity-covariance case and a seeded case.
fn leace_baseline() -> Outcome {
    let d = 7;
    let mut rng = substream(11, 0);
    let mean = normal_vector(&mut rng, d);
    let c = normal_matrix(&mut rng, d, 2);
    let stats =
        ConceptStats::from_covariance(mean.clone(), DMatrix::identity(d, d), 100).map_err(err)?;
    let sol = solve_leace(&stats, &c).map_err(err)?;
    let ctc_inv = (c.transpose() * &c)
        .try_inverse()
        .ok_or("singular test constraint")?;
    let p = DMatrix::identity(d, d) - &c * ctc_inv * c.transpose();
    let b = (DMatrix::identity(d, d) - &p) * &mean;
    let p_err = (&sol.projection - &p).abs().max();
    let b_err = (&sol.bias - &b).abs().max();
    let seeded = verify_leace_seeded(3, 6, 2, 512).map_err(err)?;
    check(
        p_err <= 1e-12 && b_err <= 1e-12 && seeded.relative_gap <= 1e-6 && seeded.passed(),
        format!(
            "identity case |dP| {p_err:.1e}, |db| {b_err:.1e}; D=6 gap {:.2e}",
            seeded.relative_gap
        ),
    )
}

/// Sample cross-covariance between erased output and the target component.
fn constraint_monte_carlo() -> Outcome {
    let d = 8;
    let stats_tar = stats_of_rows(&synthetic_samples(5, 0, d, 2048)).map_err(err)?;
    let stats_map = stats_of_rows(&synthetic_samples(5, 1, d, 2048)).map_err(err)?;
    let params = compute_gloce_eraser(&stats_tar, &stats_map, 1.0, 2, 3).map_err(err)?;
    let gloce = mc_constraint_check(&params, &stats_tar, 4096, 9).map_err(err)?;
    let identity =
        mc_constraint_check_dense(&DMatrix::identity(d, d), &params.v_tar, &stats_tar, 4096, 9)
            .map_err(err)?;
    check(
        gloce <= 1e-2 && identity > 0.1,
        format!("erased {gloce:.2e} (<= 1e-2), identity control {identity:.3} (> 0.1)"),
    )
}

/// Gate value at the edges of the transition band and the steepness.
fn gate_identities() -> Outcome {
    let cfg = Config::default();
    let tau2 = cfg.effective_tau2();
    let alpha = alpha_for(tau2, cfg.u);
    let expected = 99f64.ln() / 0.75;
    let mut worst = (alpha - expected).abs();
    for gamma in [0.0, 0.3, 4.0, 17.5] {
        let g = GateParams {
            v_gate: DMatrix::identity(3, 1),
            beta: DVector::zeros(3),
            alpha,
            gamma,
            tau1: cfg.tau1,
            tau2,
            u: cfg.u,
        };
        worst = worst
            .max((g.value_at_score(gamma + tau2) - cfg.u).abs())
            .max((g.value_at_score(gamma - tau2) - (1.0 - cfg.u)).abs());
    }
    check(
        worst <= 1e-9 && (alpha - 6.12683).abs() < 1e-5,
        format!("alpha {alpha:.9} vs ln(99)/0.75, worst deviation {worst:.1e}"),
    )
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn tokens_f64(flat: &[f32], d: usize, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), d, |i, j| flat[rows[i] * d + j] as f64)
}

fn centered_norm(m: &DMatrix<f64>, basis: &DMatrix<f64>) -> f64 {
    let mut c = m.clone();
    let mu = m.row_mean();
    for mut r in c.row_iter_mut() {
        r -= &mu;
    }
    (c * basis).norm()
}

/// Gate opens only on target tokens, which lose their target variation,
/// while background tokens pass through.
fn localized_erasure() -> Outcome {
    let sc = Scenario::new(ScenarioSpec::default()).map_err(err)?;
    let d = sc.spec.dim;
    let target = sc.target_set(0).map_err(err)?;
    let cfg = Config {
        d,
        ..Config::default()
    };
    let module = assemble(
        "target_0",
        &target,
        &[sc.mapping_set().map_err(err)?],
        &[sc.surrogate_set().map_err(err)?],
        &[sc.anchor_set().map_err(err)?],
        &cfg,
    )
    .map_err(err)?;
    let v_tar =
        top_components(&ConceptStats::from_set(&target).map_err(err)?, cfg.r2).map_err(err)?;

    let mut s = [Vec::new(), Vec::new(), Vec::new()];
    let (mut bg_change, mut bg_count) = (0.0, 0usize);
    let (mut before, mut after) = (Vec::new(), Vec::new());
    for p in 0..40u64 {
        let (pass, kinds) = sc.mixed_pass(0, (24, 24, 29), 100 + p).map_err(err)?;
        let (out, gates) = module
            .apply_with(&pass, gloce::GateMode::Computed)
            .map_err(err)?;
        let mut tgt_rows = Vec::new();
        for (t, (kind, g)) in kinds.iter().zip(&gates).enumerate() {
            let slot = match kind {
                TokenKind::Target(_) => {
                    tgt_rows.push(t);
                    0
                }
                TokenKind::Anchor => 1,
                TokenKind::Background => {
                    let x = &pass[t * d..(t + 1) * d];
                    let y = &out[t * d..(t + 1) * d];
                    let diff: f64 = x.iter().zip(y).map(|(a, b)| ((a - b) as f64).powi(2)).sum();
                    let norm: f64 = x.iter().map(|&a| (a as f64).powi(2)).sum();
                    bg_change += (diff / norm).sqrt();
                    bg_count += 1;
                    2
                }
            };
            s[slot].push(*g);
        }
        before.push(tokens_f64(&pass, d, &tgt_rows));
        after.push(tokens_f64(&out, d, &tgt_rows));
    }
    let stack = |ms: &[DMatrix<f64>]| {
        let rows: Vec<_> = ms
            .iter()
            .flat_map(|m| m.row_iter().map(|r| r.into_owned()).collect::<Vec<_>>())
            .collect();
        DMatrix::from_rows(&rows)
    };
    let reduction =
        1.0 - centered_norm(&stack(&after), &v_tar) / centered_norm(&stack(&before), &v_tar);
    let (st, sa, sb) = (mean(&s[0]), mean(&s[1]), mean(&s[2]));
    let bg = bg_change / bg_count as f64;
    check(
        st >= 0.9 && sa <= 0.1 && sb <= 0.1 && bg <= 0.05 && reduction >= 0.9,
        format!(
            "mean s target {st:.4} anchor {sa:.2e} background {sb:.2e}; background change {:.3}%; target-subspace reduction {:.2}%",
            100.0 * bg,
            100.0 * reduction
        ),
    )
}

/// Low-rank concept concentrates its energy in the leading components.
fn spectrum_property() -> Outcome {
    let d = 64;
    let mut rng = substream(21, 0);
    let scales = vec![2.0, 1.5, 1.2, 1.0];
    let sigma = 0.03;
    let concept = SynthConcept {
        mean: normal_vector(&mut rng, d),
        basis: orthonormal_columns(&mut rng, d, 4),
        scales: scales.clone(),
        noise_sigma: sigma,
        concept_token_fraction: 1.0,
    };
    let set = synth_concept_set("rank4", &concept, &concept, d, 77, 64, 3).map_err(err)?;
    let report = spectrum_report(&ConceptStats::from_set(&set).map_err(err)?, 8).map_err(err)?;
    let snr = scales.iter().map(|s| s * s).sum::<f64>() / (d as f64 * sigma * sigma);
    let e4 = report.energy_at(4).ok_or("spectrum shorter than 4")?;
    check(
        snr >= 100.0 && e4 >= 0.99,
        format!("SNR {snr:.0}, top-4 cumulative energy {:.3}%", 100.0 * e4),
    )
}

/// Two-pass reference moments.
fn batch_moments(rows: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = rows.nrows() as f64;
    let mu = rows.row_mean().transpose();
    let mut c = rows.clone();
    for mut r in c.row_iter_mut() {
        r -= mu.transpose();
    }
    (mu, c.tr_mul(&c) / n)
}

fn streaming_moments() -> Outcome {
    let d = 12;
    let rows = synthetic_samples(8, 0, d, 3000) + DMatrix::from_element(3000, d, 40.0);
    let (mu, cov) = batch_moments(&rows);
    let stream = |order: &[usize]| -> Result<ConceptStats, String> {
        let mut acc = StreamingMoments::new(d);
        for &i in order {
            let r: Vec<f64> = rows.row(i).iter().copied().collect();
            acc.accumulate(&r).map_err(err)?;
        }
        acc.finalize().map_err(err)
    };
    let order: Vec<usize> = (0..rows.nrows()).collect();
    let single = stream(&order)?;
    let batch_err = rel(&single.cov, &cov).max(vrel(&single.mean, &mu));

    let mut merged = StreamingMoments::new(d);
    for (a, b) in [(0, 700), (700, 2100), (2100, 3000)] {
        let mut shard = StreamingMoments::new(d);
        shard
            .accumulate_block(&rows.rows(a, b - a).into_owned())
            .map_err(err)?;
        merged.merge(&shard).map_err(err)?;
    }
    let merged = merged.finalize().map_err(err)?;
    let merge_err = rel(&merged.cov, &single.cov).max(vrel(&merged.mean, &single.mean));

    let mut shuffled = order.clone();
    shuffled.shuffle(&mut substream(8, 1));
    let perm = stream(&shuffled)?;
    let perm_err = rel(&perm.cov, &single.cov).max(vrel(&perm.mean, &single.mean));
    check(
        batch_err <= 1e-10 && merge_err <= 1e-9 && perm_err <= 1e-9,
        format!(
            "streaming vs batch {batch_err:.1e}, merge {merge_err:.1e}, permutation {perm_err:.1e}"
        ),
    )
}

fn fit_scenario_modules(sc: &Scenario, cfg: &Config) -> Result<Vec<GloceModule>, String> {
    let mapping = [sc.mapping_set().map_err(err)?];
    let surrogate = [sc.surrogate_set().map_err(err)?];
    let anchor = [sc.anchor_set().map_err(err)?];
    (0..sc.spec.targets)
        .map(|i| {
            let target = sc.target_set(i).map_err(err)?;
            assemble(
                Scenario::target_label(i),
                &target,
                &mapping,
                &surrogate,
                &anchor,
                cfg,
            )
            .map_err(err)
        })
        .collect()
}

fn composer() -> Outcome {
    // singleton bank and per-concept routing
    let sc = Scenario::new(ScenarioSpec {
        targets: 3,
        ..ScenarioSpec::default()
    })
    .map_err(err)?;
    let cfg = Config {
        d: sc.spec.dim,
        ..Config::default()
    };
    let modules = fit_scenario_modules(&sc, &cfg)?;
    let single = ModuleBank::new(vec![modules[0].clone()]).map_err(err)?;
    let (probe, _) = sc.mixed_pass(0, (20, 20, 37), 5).map_err(err)?;
    let (via_bank, _) = single.route_and_apply(&probe).map_err(err)?;
    let via_module = modules[0].apply(&probe).map_err(err)?;
    let bitwise = via_bank
        .iter()
        .map(|v| v.to_bits())
        .eq(via_module.iter().map(|v| v.to_bits()));

    let bank = ModuleBank::new(modules).map_err(err)?;
    let mut worst_share = 1.0f64;
    for i in 0..3 {
        let (pass, _) = sc.mixed_pass(i, (500, 0, 0), 50 + i as u64).map_err(err)?;
        let (_, routes) = bank.route_and_apply(&pass).map_err(err)?;
        let own = routes.iter().filter(|r| r.module == Some(i)).count();
        worst_share = worst_share.min(own as f64 / routes.len() as f64);
    }

    // 50-module bank
    let start = Instant::now();
    let big = Scenario::new(ScenarioSpec {
        dim: 128,
        targets: 50,
        target_rank: 2,
        tokens_per_pass: 16,
        passes: 8,
        ..ScenarioSpec::default()
    })
    .map_err(err)?;
    let cfg = Config {
        d: 128,
        ..Config::default()
    };
    let bank50 = ModuleBank::new(fit_scenario_modules(&big, &cfg)?).map_err(err)?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("bank.glbk");
    gloce::save_bank(&bank50, &path).map_err(err)?;
    let loaded = gloce::load_bank(&path).map_err(err)?;
    let build = start.elapsed();
    let (pass, _) = big.mixed_pass(17, (20, 20, 37), 9).map_err(err)?;
    let route_start = Instant::now();
    let (_, routes) = loaded.route_and_apply(&pass).map_err(err)?;
    let route = route_start.elapsed();
    let to_17 = routes[..20].iter().filter(|r| r.module == Some(17)).count();
    let total = build + route;
    check(
        bitwise && worst_share >= 0.99 && loaded == bank50 && total < Duration::from_secs(5) && to_17 == 20,
        format!(
            "singleton bitwise {bitwise}; worst own-module share {:.2}%; 50-module bank assemble+save+load {:.2} s, 77-token route {:.1} ms",
            100.0 * worst_share,
            build.as_secs_f64(),
            1e3 * route.as_secs_f64()
        ),
    )
}

fn expect_named<T>(r: gloce::Result<T>, name: &str) -> bool {
    matches!(r, Err(e) if e.name() == name)
}

fn binary_formats() -> Outcome {
    let sc = Scenario::new(ScenarioSpec::default()).map_err(err)?;
    let set: EmbeddingSet = sc.target_set(0).map_err(err)?;
    let dump = set.to_bytes().map_err(err)?;
    let dump_ok = EmbeddingSet::from_bytes(&dump)
        .map_err(err)?
        .to_bytes()
        .map_err(err)?
        == dump;
    assert_eq!(&dump[..4], DUMP_MAGIC);

    let cfg = Config {
        d: sc.spec.dim,
        ..Config::default()
    };
    let modules = fit_scenario_modules(
        &Scenario::new(ScenarioSpec {
            targets: 2,
            ..ScenarioSpec::default()
        })
        .map_err(err)?,
        &cfg,
    )?;
    let module = modules[0].to_bytes().map_err(err)?;
    let module_ok = GloceModule::from_bytes(&module)
        .map_err(err)?
        .to_bytes()
        .map_err(err)?
        == module;
    let bank = ModuleBank::new(modules)
        .map_err(err)?
        .to_bytes()
        .map_err(err)?;
    let bank_ok = ModuleBank::from_bytes(&bank)
        .map_err(err)?
        .to_bytes()
        .map_err(err)?
        == bank;

    let corrupt = |b: &[u8]| {
        let mut c = b.to_vec();
        c[0] ^= 0xff;
        c
    };
    let truncated = |b: &[u8]| b[..b.len() - 3].to_vec();
    let padded = |b: &[u8]| [b, &[0u8; 4]].concat();
    let mut rejected = 0;
    for bytes in [corrupt(&dump), truncated(&dump), padded(&dump)] {
        rejected += expect_named(EmbeddingSet::from_bytes(&bytes), "MalformedDump") as usize;
    }
    for bytes in [corrupt(&module), truncated(&module), padded(&module)] {
        rejected += expect_named(GloceModule::from_bytes(&bytes), "MalformedModule") as usize;
    }
    for bytes in [corrupt(&bank), truncated(&bank), padded(&bank)] {
        rejected += expect_named(ModuleBank::from_bytes(&bytes), "MalformedBank") as usize;
    }
    check(
        dump_ok && module_ok && bank_ok && rejected == 9,
        format!("round trips dump {dump_ok} module {module_ok} bank {bank_ok}; {rejected}/9 corruptions rejected by name"),
    )
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("closed-form optimality", closed_form_optimality),
        ("full-rank baseline", leace_baseline),
        ("constraint monte carlo", constraint_monte_carlo),
        ("gate calibration identities", gate_identities),
        ("localized erasure", localized_erasure),
        ("spectrum property", spectrum_property),
        ("streaming moments", streaming_moments),
        ("composer", composer),
        ("binary formats", binary_formats),
    ];
    let mut failures = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        match run() {
            Ok(detail) => println!("PASS  criterion {} ({name}): {detail}", i + 1),
            Err(detail) => {
                failures += 1;
                println!("FAIL  criterion {} ({name}): {detail}", i + 1);
            }
        }
    }
    println!(
        "acceptance: {}/{} criteria passed",
        criteria.len() - failures,
        criteria.len()
    );
    if failures > 0 {
        std::process::exit(1);
    }
}
