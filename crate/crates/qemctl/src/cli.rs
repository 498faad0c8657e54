//! Command-line front end.
//!
//! Four subcommands cover the full experiment lifecycle:
//!
//! * `collect` — run the expert behavior policy (with exploration) against
//!   the plant and write one JSONL trace file per seed;
//! * `train` — fit the context tree, forecaster, and bandit priors from the
//!   collected traces and persist them as a single stack artifact;
//! * `compare` — run the three-strategy paired comparison and emit the
//!   summary CSV, per-run trace CSVs, and a JSON report;
//! * `oracle` — verify the analytic formulas against seeded Monte Carlo and
//!   hand-derived anchors, printing a pass/fail table.
//!
//! A single TOML file configures everything; the `--seeds`, `--out`,
//! `--lambda`, and `--deterministic` flags override individual knobs after
//! parsing, so quick sweeps never require editing the file. Exit codes: 0 on
//! success, 1 for usage or configuration errors, 2 for runtime failures.
//! Outputs carry no timestamps, so identical inputs reproduce identical
//! bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::orchestrator::{
    collect_traces, paired_comparison, train_offline, BehaviorPolicy, ComparisonReport,
    PairedRuns, TrainedStack,
};
use crate::plant::{
    analytic_detection_rate, analytic_logical_error, drift_base_rate, lambda_factor,
    sample_memory_cycle, stream_rng, DriftMode, DriftParams, STREAM_DRIFT, STREAM_SHOTS,
};
use crate::policy::ActionModel;
use crate::telemetry::{read_records_path, write_records, TelemetryRecord};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

// ---------------------------------------------------------------------------
// Argument parsing
// ---------------------------------------------------------------------------

#[derive(Debug, Parser)]
#[command(
    name = "qemctl",
    version,
    about = "Closed-loop adaptive error-mitigation experiments",
    propagate_version = true
)]
pub struct Cli {
    #[command(flatten)]
    pub overrides: Overrides,
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every subcommand; each overrides one configuration knob.
#[derive(Debug, Args)]
pub struct Overrides {
    /// Experiment configuration file (TOML). Omitted: reference defaults.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Output directory for all artifacts (default from config).
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,

    /// Use exactly N consecutive seeds, starting from the configured first
    /// seed, for both collection and evaluation.
    #[arg(long, global = true, value_name = "N",
          value_parser = clap::value_parser!(u64).range(1..))]
    pub seeds: Option<u64>,

    /// Cost multiplier λ for the policy.
    #[arg(long, global = true, value_name = "X")]
    pub lambda: Option<f64>,

    /// Select actions by posterior mean instead of Thompson sampling.
    #[arg(long, global = true)]
    pub deterministic: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the expert behavior policy and write one trace file per seed.
    Collect,
    /// Train contexts, forecaster, and policy priors from collected traces.
    Train,
    /// Paired three-strategy comparison: summary CSV, trace CSVs, JSON report.
    Compare,
    /// Check analytic formulas against Monte Carlo and hand-derived anchors.
    Oracle,
}

/// Replace `list` with exactly `n` consecutive seeds from its first entry.
fn retarget_seeds(list: &mut Vec<u64>, n: u64) {
    let s0 = list.first().copied().unwrap_or(1);
    *list = (s0..s0 + n).collect();
}

/// Load the configuration (file or reference defaults) and apply flag
/// overrides, re-validating afterward so a bad override fails as a usage
/// error rather than deep inside a run.
fn load_config(ov: &Overrides) -> Result<ExperimentConfig> {
    let mut cfg = match &ov.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::reference(),
    };
    if let Some(dir) = &ov.out {
        cfg.output.dir = dir.clone();
    }
    if let Some(lambda) = ov.lambda {
        cfg.policy.lambda = lambda;
    }
    if ov.deterministic {
        cfg.policy.deterministic = true;
    }
    if let Some(n) = ov.seeds {
        retarget_seeds(&mut cfg.run.seeds, n);
        retarget_seeds(&mut cfg.run.collect_seeds, n);
    }
    cfg.validate()?;
    Ok(cfg)
}

// ---------------------------------------------------------------------------
// Entry point
// ---------------------------------------------------------------------------

/// Parse arguments, run the selected command, and return the process exit
/// code. `main` stays a one-line shim so everything here is testable.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help/--version land here too; they are successes.
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_usage() {
                EXIT_USAGE
            } else {
                EXIT_RUNTIME
            }
        }
    }
}

fn execute(cli: &Cli) -> Result<()> {
    let cfg = load_config(&cli.overrides)?;
    match cli.command {
        Command::Collect => cmd_collect(&cfg),
        Command::Train => cmd_train(&cfg),
        Command::Compare => cmd_compare(&cfg),
        Command::Oracle => cmd_oracle(),
    }
}

// ---------------------------------------------------------------------------
// collect
// ---------------------------------------------------------------------------

fn trace_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("traces_seed{seed}.jsonl"))
}

fn cmd_collect(cfg: &ExperimentConfig) -> Result<()> {
    fs::create_dir_all(&cfg.output.dir)?;
    let runs = collect_traces(cfg, &cfg.run.collect_seeds, BehaviorPolicy::Expert)?;
    for (seed, run) in cfg.run.collect_seeds.iter().zip(&runs) {
        let path = trace_path(&cfg.output.dir, *seed);
        write_records(&path, run)?;
        println!("wrote {} ({} records)", path.display(), run.len());
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

fn stack_path(dir: &Path) -> PathBuf {
    dir.join("stack.json")
}

fn cmd_train(cfg: &ExperimentConfig) -> Result<()> {
    let mut runs: Vec<Vec<TelemetryRecord>> = Vec::new();
    for &seed in &cfg.run.collect_seeds {
        let path = trace_path(&cfg.output.dir, seed);
        let records = read_records_path(&path).map_err(|e| match e {
            Error::Io(io) => {
                Error::Config(format!("cannot read trace file {}: {io}", path.display()))
            }
            other => other,
        })?;
        runs.push(records);
    }
    let stack = train_offline(&runs, cfg)?;
    fs::create_dir_all(&cfg.output.dir)?;
    let path = stack_path(&cfg.output.dir);
    stack.save(&path)?;
    println!(
        "trained on {} runs: {} contexts, state dim {}, {} inducing points",
        runs.len(),
        stack.contexts.num_contexts(),
        stack.forecaster.encoder.dim(),
        stack.forecaster.z.len(),
    );
    println!("wrote {} (hash {})", path.display(), &stack.content_hash[..12]);
    Ok(())
}

// ---------------------------------------------------------------------------
// compare
// ---------------------------------------------------------------------------

/// Full-precision float for CSV cells: `Display` prints the shortest string
/// that round-trips, so CSV and JSON agree to the last bit.
fn cell(x: f64) -> String {
    format!("{x}")
}

fn summary_csv(report: &ComparisonReport) -> String {
    let mut out = String::from("class,benchmark,unmitigated,adaptive,gain_pct\n");
    for row in &report.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            row.class,
            row.benchmark,
            cell(row.unmitigated),
            cell(row.adaptive),
            cell(row.gain_pct)
        );
    }
    out
}

/// Per-run trace: the noise trajectory (the unmitigated partner's effective
/// rate), both fidelity traces, and the adaptive action — enough to plot the
/// barcode and overlay figures externally.
fn trace_csv(pair: &PairedRuns) -> String {
    let mut out = String::from("cycle,p_eff,F_unmitigated,F_adaptive,action_level\n");
    for ((u, a), cycle) in pair
        .unmitigated
        .records
        .iter()
        .zip(&pair.adaptive.records)
        .zip(0u32..)
    {
        debug_assert_eq!(u.cycle, cycle);
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            cycle,
            cell(u.p_eff),
            cell(u.fidelity),
            cell(a.fidelity),
            a.action_level.label()
        );
    }
    out
}

fn cmd_compare(cfg: &ExperimentConfig) -> Result<()> {
    let stack = TrainedStack::load(&stack_path(&cfg.output.dir))?;
    let (report, pairs) = paired_comparison(&stack, cfg, &cfg.run.seeds)?;

    fs::create_dir_all(&cfg.output.dir)?;
    let summary = cfg.output.dir.join("summary.csv");
    fs::write(&summary, summary_csv(&report))?;
    for pair in &pairs {
        let path = cfg
            .output
            .dir
            .join(format!("trace_{}_seed{}.csv", pair.workload, pair.seed));
        fs::write(&path, trace_csv(pair))?;
    }
    let report_path = cfg.output.dir.join("report.json");
    let mut json = serde_json::to_string_pretty(&report)?;
    json.push('\n');
    fs::write(&report_path, json)?;

    // Human-readable recap of the two artifacts.
    println!("{:<14} {:<12} {:>12} {:>10} {:>9}", "class", "benchmark", "unmitigated", "adaptive", "gain");
    for row in &report.rows {
        println!(
            "{:<14} {:<12} {:>12.4} {:>10.4} {:>8.1}%",
            row.class, row.benchmark, row.unmitigated, row.adaptive, row.gain_pct
        );
    }
    println!(
        "sign test: {} of {} seeds improved, one-sided p = {:.4}",
        report.sign_test.wins, report.sign_test.n, report.sign_test.p_value
    );
    println!(
        "intervention cost: adaptive {:.1} vs static-severe {:.1} ({:.1}% lower), NONE fraction {:.2}",
        report.cost_adaptive,
        report.cost_static,
        100.0 * report.cost_reduction,
        report.none_fraction
    );
    println!(
        "SEVERE usage: {:.2} in noisiest quartile vs {:.2} in quietest",
        report.severe_frac_top_quartile, report.severe_frac_bottom_quartile
    );
    println!(
        "wrote {}, {} trace CSVs, {}",
        summary.display(),
        pairs.len(),
        report_path.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// oracle
// ---------------------------------------------------------------------------

struct Check {
    name: &'static str,
    pass: bool,
    detail: String,
}

/// Monte Carlo vs. analytic logical-error and detection rates over the
/// (distance, rate) grid, 10^5 shots per cell, 4 binomial standard errors.
fn check_mc_grid() -> Check {
    const SHOTS: u64 = 100_000;
    let mut rng = stream_rng(0x0AC1E, STREAM_SHOTS);
    let mut worst = 0.0f64;
    let mut pass = true;
    for &d in &[1u32, 3, 5] {
        for &p in &[0.01, 0.05, 0.1, 0.3] {
            let counts = sample_memory_cycle(d, p, SHOTS, 0, &mut rng);
            let eps = analytic_logical_error(d, p);
            let det = analytic_detection_rate(d, p);
            let eps_hat = counts.decode_errors as f64 / SHOTS as f64;
            let det_hat = counts.detection_events as f64 / SHOTS as f64;
            let eps_tol = 4.0 * (eps * (1.0 - eps) / SHOTS as f64).sqrt();
            let det_tol = 4.0 * (det * (1.0 - det) / SHOTS as f64).sqrt();
            if (eps_hat - eps).abs() > eps_tol || (det_hat - det).abs() > det_tol {
                pass = false;
            }
            if eps_tol > 0.0 {
                worst = worst.max((eps_hat - eps).abs() / eps_tol);
            }
        }
    }
    Check {
        name: "logical error & detection: MC vs analytic (12 cells)",
        pass,
        detail: format!("worst cell at {:.2} of tolerance", worst),
    }
}

fn check_lambda_ratio() -> Check {
    let eps3 = analytic_logical_error(3, 0.1);
    let eps5 = analytic_logical_error(5, 0.1);
    let lam = lambda_factor(eps3, eps5).unwrap_or(f64::NAN);
    Check {
        name: "distance-scaling ratio d=3 -> d=5 at p=0.1",
        pass: (lam - 3.271).abs() < 1e-3,
        detail: format!("{lam:.5} (expect 3.271)"),
    }
}

fn check_drift_anchors() -> Check {
    let params = DriftParams {
        mode: DriftMode::Deterministic,
        peak: None,
        ..DriftParams::default()
    };
    let rate = |t| drift_base_rate(t, &params, &mut stream_rng(1, STREAM_DRIFT));
    let pass = rate(0) == 0.01 && rate(50) == 0.015 && rate(150) == 0.005;
    Check {
        name: "sinusoidal drift anchors at t = 0/50/150",
        pass,
        detail: format!("{}/{}/{}", rate(0), rate(50), rate(150)),
    }
}

fn check_detection_anchor() -> Check {
    let det = analytic_detection_rate(3, 0.1);
    Check {
        name: "detection rate d=3, p=0.1",
        pass: (det - 0.27).abs() < 1e-12,
        detail: format!("{det:.6} (expect 0.270000)"),
    }
}

fn check_bandit_posterior() -> Check {
    let mut model = ActionModel::new(2, 1.0);
    let pass = match model.update(&[1.0, 0.0], 0.5).and_then(|()| model.posterior(1.0)) {
        Ok((theta, _)) => (theta[0] - 0.25).abs() < 1e-15 && theta[1].abs() < 1e-15,
        Err(_) => false,
    };
    Check {
        name: "bandit rank-one posterior update",
        pass,
        detail: "theta = (0.25, 0) after one observation".into(),
    }
}

fn cmd_oracle() -> Result<()> {
    let checks = [
        check_mc_grid(),
        check_lambda_ratio(),
        check_drift_anchors(),
        check_detection_anchor(),
        check_bandit_posterior(),
    ];
    let width = checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
    let mut failed = 0;
    for c in &checks {
        let verdict = if c.pass { "PASS" } else { "FAIL" };
        println!("{verdict}  {:<width$}  {}", c.name, c.detail);
        failed += usize::from(!c.pass);
    }
    if failed > 0 {
        return Err(Error::SelfCheck(format!(
            "{failed} of {} oracle checks failed",
            checks.len()
        )));
    }
    println!("all {} checks passed", checks.len());
    Ok(())
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
