// SPDX-License-Identifier: MIT OR Apache-2.0

//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 on a domain error (the error name is printed
//! on stderr as `error[Name]: message`), 2 on a usage error.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::composer::{load_bank, save_bank, ModuleBank};
use crate::config::Config;
use crate::embstore::{read_dump, write_dump, EmbeddingSet};
use crate::error::{GloceError, Result};
use crate::module::{assemble, GloceModule};
use crate::oracle::{rows_to_tsv, verify_sweep};
use crate::scenario::{Scenario, ScenarioSpec};
use crate::stats::{spectrum_report, ConceptStats};

pub const THREADS_ENV: &str = "GLOCE_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "gloce",
    version,
    about = "Closed-form gated concept erasure on token-embedding dumps"
)]
struct Cli {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// `key = value` config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for synthetic data (default 0).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Embedding dimension (default 64; `verify` defaults to 8).
    #[arg(long, global = true)]
    d: Option<usize>,
    /// Mapping rank (default 2).
    #[arg(long, global = true)]
    r1: Option<usize>,
    /// Number of target components removed (default 16).
    #[arg(long, global = true)]
    r2: Option<usize>,
    /// Gate rank (default 1).
    #[arg(long, global = true)]
    r3: Option<usize>,
    /// Mapping strength (default 1).
    #[arg(long, global = true)]
    eta: Option<f64>,
    /// Threshold margin in units of the anchor-score spread (default 1.5).
    #[arg(long, global = true)]
    tau1: Option<f64>,
    /// Explicit tau2; by default tau2 = tau1 / 2.
    #[arg(long, global = true)]
    tau2: Option<f64>,
    /// Gate value reached at threshold + tau2 (default 0.99).
    #[arg(long, global = true)]
    u: Option<f64>,
    /// `variance` (default) or `stddev`.
    #[arg(long, global = true)]
    gamma_spread: Option<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<Config> {
        let mut cfg = match &self.config {
            Some(p) => Config::load(p)?,
            None => Config::default(),
        };
        let mut set = |k: &str, v: Option<String>| -> Result<()> {
            match v {
                Some(v) => cfg.set(k, &v),
                None => Ok(()),
            }
        };
        set("seed", self.seed.map(|v| v.to_string()))?;
        set("d", self.d.map(|v| v.to_string()))?;
        set("r1", self.r1.map(|v| v.to_string()))?;
        set("r2", self.r2.map(|v| v.to_string()))?;
        set("r3", self.r3.map(|v| v.to_string()))?;
        set("eta", self.eta.map(|v| v.to_string()))?;
        set("tau1", self.tau1.map(|v| v.to_string()))?;
        set("tau2", self.tau2.map(|v| v.to_string()))?;
        set("u", self.u.map(|v| v.to_string()))?;
        set("gamma_spread", self.gamma_spread.clone())?;
        Ok(cfg)
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a seeded synthetic scenario (target, mapping, surrogate, anchor
    /// and mixed test dumps) into a directory.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 16)]
        tokens: usize,
        #[arg(long, default_value_t = 48)]
        passes: usize,
        #[arg(long, default_value_t = 1)]
        targets: usize,
    },
    /// Print the covariance spectrum of a dump as TSV.
    Spectrum {
        #[arg(long = "in")]
        input: PathBuf,
        /// Number of leading eigenvalues (default: all).
        #[arg(long)]
        k: Option<usize>,
    },
    /// Fit a module from target, mapping, surrogate and anchor dumps.
    Fit {
        #[arg(long)]
        target: PathBuf,
        #[arg(long = "map", required = true)]
        map: Vec<PathBuf>,
        #[arg(long, required = true)]
        surrogate: Vec<PathBuf>,
        #[arg(long = "anchor", required = true)]
        anchor: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Module label (default: the target dump's label).
        #[arg(long)]
        label: Option<String>,
    },
    /// Apply a module to every pass of a dump.
    Apply {
        #[arg(long)]
        module: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Print per-pass gate statistics as TSV.
        #[arg(long)]
        report: bool,
    },
    /// Bundle modules into a bank.
    Compose {
        #[arg(long = "module", required = true)]
        modules: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Route every token of a dump through a bank.
    Route {
        #[arg(long)]
        bank: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check the closed-form eraser against the constrained least-squares
    /// oracle on seeded instances. Without --r1/--r2 the rank pairs
    /// (1,3), (2,3), (4,8) are cycled. Uses --d (default 8).
    Verify {
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        #[arg(long, default_value_t = 1024)]
        n: usize,
    },
    /// Print a module or bank summary.
    Inspect {
        #[arg(long)]
        module: Option<PathBuf>,
        #[arg(long)]
        bank: Option<PathBuf>,
    },
}

/// Parses `argv` (including the program name), runs the subcommand and
/// returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    init_threads();
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match execute(&cli, &mut out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.name());
            1
        }
    }
}

fn init_threads() {
    let n = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .unwrap_or(0);
    if n > 0 {
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
}

fn read_all(paths: &[PathBuf]) -> Result<Vec<EmbeddingSet>> {
    paths.iter().map(read_dump).collect()
}

fn execute(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    let cfg = cli.cfg.resolve()?;
    match &cli.cmd {
        Command::Synth {
            out: dir,
            tokens,
            passes,
            targets,
        } => synth(dir, &cfg, *tokens, *passes, *targets, out),
        Command::Spectrum { input, k } => {
            let set = read_dump(input)?;
            let stats = ConceptStats::from_set(&set)?;
            let rep = spectrum_report(&stats, k.unwrap_or(set.dim))?;
            if rep.zero_trace {
                writeln!(out, "# zero trace")?;
            }
            write!(out, "{}", rep.to_tsv())?;
            Ok(())
        }
        Command::Fit {
            target,
            map,
            surrogate,
            anchor,
            out: path,
            label,
        } => {
            let target = read_dump(target)?;
            let map = read_all(map)?;
            let sur = read_all(surrogate)?;
            let anc = read_all(anchor)?;
            let label = label.clone().unwrap_or_else(|| target.label.clone());
            let m = assemble(label, &target, &map, &sur, &anc, &cfg)?;
            m.save(path)?;
            writeln!(out, "{}", m.report())?;
            Ok(())
        }
        Command::Apply {
            module,
            input,
            out: path,
            report,
        } => {
            let m = GloceModule::load(module)?;
            let set = read_dump(input)?;
            let (result, gates) = m.apply_set(&set)?;
            write_dump(&result, path)?;
            if *report {
                write!(out, "{}", gate_report(&gates, set.tokens_per_pass))?;
            }
            Ok(())
        }
        Command::Compose { modules, out: path } => {
            let ms = modules
                .iter()
                .map(GloceModule::load)
                .collect::<Result<Vec<_>>>()?;
            let bank = ModuleBank::new(ms)?;
            save_bank(&bank, path)?;
            writeln!(out, "modules\t{}", bank.len())?;
            Ok(())
        }
        Command::Route {
            bank,
            input,
            out: path,
        } => {
            let bank = load_bank(bank)?;
            let set = read_dump(input)?;
            if set.dim != bank.dim() {
                return Err(GloceError::DimensionMismatch {
                    expected: bank.dim(),
                    got: set.dim,
                });
            }
            let (data, routes) = bank.route_and_apply(&set.data)?;
            let result = EmbeddingSet::new(
                set.label.clone(),
                set.dim,
                set.tokens_per_pass,
                set.passes,
                data,
            )?;
            write_dump(&result, path)?;
            let mut counts = vec![0usize; bank.len()];
            let mut untouched = 0usize;
            for r in &routes {
                match r.module {
                    Some(i) => counts[i] += 1,
                    None => untouched += 1,
                }
            }
            writeln!(out, "module\ttokens")?;
            for (label, c) in bank.labels().iter().zip(&counts) {
                writeln!(out, "{label}\t{c}")?;
            }
            writeln!(out, "-\t{untouched}")?;
            Ok(())
        }
        Command::Verify { seeds, n } => {
            let d = cli.cfg.d.unwrap_or(8);
            let ranks = match (cli.cfg.r1, cli.cfg.r2) {
                (None, None) => None,
                _ => Some((cfg.r1, cfg.r2)),
            };
            let rows = verify_sweep(d, *seeds, ranks, cfg.eta, *n)?;
            write!(out, "{}", rows_to_tsv(&rows))?;
            let failed = rows.iter().filter(|r| !r.passed()).count();
            if failed > 0 {
                return Err(GloceError::VerificationFailed(failed));
            }
            Ok(())
        }
        Command::Inspect { module, bank } => {
            match (module, bank) {
                (Some(p), _) => writeln!(out, "{}", GloceModule::load(p)?.report())?,
                (None, Some(p)) => {
                    let bank = load_bank(p)?;
                    for (i, m) in bank.modules().iter().enumerate() {
                        if i > 0 {
                            writeln!(out)?;
                        }
                        writeln!(out, "{}", m.report())?;
                    }
                }
                (None, None) => {
                    return Err(GloceError::InvalidConfig(
                        "inspect needs --module or --bank".into(),
                    ))
                }
            }
            Ok(())
        }
    }
}

fn synth(
    dir: &Path,
    cfg: &Config,
    tokens: usize,
    passes: usize,
    targets: usize,
    out: &mut dyn Write,
) -> Result<()> {
    let spec = ScenarioSpec {
        dim: cfg.d,
        tokens_per_pass: tokens,
        passes,
        targets,
        seed: cfg.seed,
        ..ScenarioSpec::default()
    };
    let sc = Scenario::new(spec)?;
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut emit = |name: String, set: &EmbeddingSet| -> Result<()> {
        let path = dir.join(&name);
        write_dump(set, &path)?;
        written.push(name);
        Ok(())
    };
    for i in 0..targets {
        emit(
            format!("{}.gemb", Scenario::target_label(i)),
            &sc.target_set(i)?,
        )?;
    }
    emit("mapping.gemb".into(), &sc.mapping_set()?)?;
    emit("surrogate.gemb".into(), &sc.surrogate_set()?)?;
    emit("anchor.gemb".into(), &sc.anchor_set()?)?;
    let quarter = (tokens / 4).max(1);
    let bg = tokens.saturating_sub(2 * quarter).max(1);
    for i in 0..targets {
        let mut data = Vec::new();
        for p in 0..4u64 {
            let (pass, _) =
                sc.mixed_pass(i, (quarter, quarter, bg), cfg.seed ^ (p << 32) ^ i as u64)?;
            data.extend(pass);
        }
        let set = EmbeddingSet::new(format!("mixed_{i}"), cfg.d, 2 * quarter + bg, 4, data)?;
        emit(format!("mixed_{i}.gemb"), &set)?;
    }
    for name in written {
        writeln!(out, "{}", dir.join(name).display())?;
    }
    Ok(())
}

/// Per-pass `min`, `mean`, `max` of the gate and the share of tokens with
/// `s > 0.5`.
pub fn gate_report(gates: &[f64], tokens_per_pass: usize) -> String {
    let mut s = String::from("pass\tmin_s\tmean_s\tmax_s\topen_fraction\n");
    for (p, chunk) in gates.chunks(tokens_per_pass).enumerate() {
        let n = chunk.len() as f64;
        let min = chunk.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = chunk.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mean = chunk.iter().sum::<f64>() / n;
        let open = chunk.iter().filter(|&&g| g > 0.5).count() as f64 / n;
        s.push_str(&format!("{p}\t{min:.6}\t{mean:.6}\t{max:.6}\t{open:.4}\n"));
    }
    s
}
