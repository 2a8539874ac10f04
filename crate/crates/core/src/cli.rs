//! Command-line front end: configuration, the six subcommands and report
//! emission.
//!
//! Every command produces a JSON [`Report`] and most also produce a CSV
//! table. With `--out PATH` they go to `PATH.json` and `PATH.csv`; without
//! it the JSON report is written to stdout. Wall-clock timings live under
//! the report's `timings` key so that the remainder is a pure function of
//! the configuration and seed.

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::arith::{is_prime_u64, jacobi, PrimeCache};
use crate::charsum::{
    cancellation_scan, charsum_naive, charsum_prime_reduced, dual_charsum_closed,
    dual_charsum_naive, CharSumError, CharSumRow, CHARSUM_TOL,
};
use crate::form::{parse_form, LatticeTriple, QuarticForm};
use crate::poisson::{poisson_check, BumpWeight, CharacterMode, PoissonReport};
use crate::sieve::{
    brute_count, count_with_sieve, detector, exponent_fit, optimize_p2_exponent, term_budget,
    ExponentBudget, SievePlan,
};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Bound `(d - 1)^n` on `|c(p, x)| / p^{3/2}` for a smooth quartic in three
/// variables.
pub const KATZ_BOUND: f64 = 27.0;
pub const POISSON_TOL: f64 = 1e-6;
pub const TRIVIAL_POISSON_TOL: f64 = 1e-8;
pub const DOUBLING_TOL: f64 = 1e-8;

/// Comma-separated list of non-negative integers; the empty string is the
/// empty list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct List(pub Vec<u64>);

fn parse_list(s: &str) -> Result<List, String> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<u64>()
                .map_err(|e| format!("bad list entry {t:?}: {e}"))
        })
        .collect::<Result<Vec<_>, _>>()
        .map(List)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Oracle,
    Katz,
    Dual,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Character {
    Jacobi,
    Trivial,
}

/// Run configuration. Every field is optional; flags override values from
/// `--config`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, Args)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Form file: JSON object mapping "i,j,k" exponents to integer coefficients.
    #[arg(long, global = true)]
    pub form: Option<PathBuf>,
    /// Box radius.
    #[arg(long = "B", global = true)]
    #[serde(rename = "B")]
    pub b: Option<u64>,
    /// Comma-separated list of box radii.
    #[arg(long = "B-grid", global = true, value_parser = parse_list)]
    #[serde(rename = "B_grid")]
    pub b_grid: Option<List>,
    /// Slack exponent in the prime window sizes.
    #[arg(long, global = true)]
    pub eps: Option<f64>,
    /// Constant in `P2 >= C log B`.
    #[arg(long = "C", global = true)]
    #[serde(rename = "C")]
    pub c: Option<f64>,
    /// First prime list (sieve), or prime list (charsum), or q values (poisson).
    #[arg(long, global = true, value_parser = parse_list)]
    pub primes1: Option<List>,
    /// Second prime list (sieve), or q' values (poisson).
    #[arg(long, global = true, value_parser = parse_list)]
    pub primes2: Option<List>,
    /// Suppress the inadmissible-plan warning.
    #[arg(long, global = true, num_args = 0..=1, default_missing_value = "true")]
    pub force: Option<bool>,
    /// Quadrature tolerance.
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    /// Dual frequency truncation `max |h_i|`.
    #[arg(long, global = true)]
    pub truncation: Option<u64>,
    /// Worker threads (default: logical cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Seed for sampled frequencies and points.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Prime cache directory (falls back to SQSIEVE_CACHE_DIR).
    #[arg(long = "cache-dir", global = true)]
    pub cache_dir: Option<PathBuf>,
    /// Output path stem; writes STEM.json and STEM.csv.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Character-sum suite.
    #[arg(long, global = true, value_enum)]
    pub suite: Option<Suite>,
    /// Samples per prime for sampled suites.
    #[arg(long, global = true)]
    pub samples: Option<usize>,
    /// Character used by the Poisson check.
    #[arg(long, global = true, value_enum)]
    pub character: Option<Character>,
}

macro_rules! overlay {
    ($base:expr, $top:expr, $($f:ident),*) => {
        RunConfig { $($f: $top.$f.or($base.$f)),* }
    };
}

impl RunConfig {
    /// Fields of `top` win over fields of `self`.
    pub fn overlay(self, top: RunConfig) -> RunConfig {
        overlay!(
            self, top, form, b, b_grid, eps, c, primes1, primes2, force, tol, truncation, workers,
            seed, cache_dir, out, suite, samples, character
        )
    }

    pub fn from_file(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config file {}", path.display()))?;
        serde_json::from_str(&text)
            .with_context(|| format!("parsing config file {}", path.display()))
    }

    /// Configuration with host-specific fields cleared.
    pub fn canonical(&self) -> RunConfig {
        RunConfig {
            workers: None,
            cache_dir: None,
            out: None,
            ..self.clone()
        }
    }

    /// SHA-256 of the canonical configuration as JSON.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(&self.canonical()).expect("config serializes");
        Sha256::digest(&bytes)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in [("tol", self.tol), ("C", self.c)] {
            if let Some(v) = v {
                ensure!(
                    v > 0.0 && v.is_finite(),
                    "--{name} must be positive (got {v})"
                );
            }
        }
        if let Some(e) = self.eps {
            ensure!(
                (0.0..1.0).contains(&e),
                "--eps must lie in [0, 1) (got {e})"
            );
        }
        if let Some(w) = self.workers {
            ensure!(w > 0, "--workers must be positive");
        }
        Ok(())
    }

    fn load_form(&self) -> Result<QuarticForm> {
        let path = self
            .form
            .as_ref()
            .context("--form PATH is required for this command")?;
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading form file {}", path.display()))?;
        parse_form(&text).with_context(|| format!("parsing form file {}", path.display()))
    }

    fn b_values(&self, default: Option<&[u64]>) -> Result<Vec<u64>> {
        match (&self.b_grid, self.b, default) {
            (Some(g), _, _) => {
                ensure!(!g.0.is_empty(), "--B-grid is empty");
                Ok(g.0.clone())
            }
            (None, Some(b), _) => Ok(vec![b]),
            (None, None, Some(d)) => Ok(d.to_vec()),
            _ => bail!("--B or --B-grid is required for this command"),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "sqsieve",
    version,
    about = "Square-sieve experiments for y^2 = F(x1, x2, x3)"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON configuration file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub opts: RunConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Exact counts N(B) over a grid of B.
    Count,
    /// Sieve bound against the exact count.
    Sieve,
    /// Character-sum oracle, cancellation and dual-collapse suites.
    Charsum,
    /// Direct-versus-dual Poisson summation matrix.
    Poisson,
    /// Term budget scan over the P2 exponent.
    Budget,
    /// Log-log fit of N(B).
    Fit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: impl Display) -> Self {
        Self {
            name: name.to_string(),
            passed,
            detail: detail.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config_hash: String,
    pub config: RunConfig,
    pub passed: bool,
    pub checks: Vec<Check>,
    pub warnings: Vec<String>,
    pub result: Value,
    pub timings: Value,
}

/// CSV table with a header row.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w =
            csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn opt<T: Display>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

#[derive(Debug)]
pub struct Outcome {
    pub report: Report,
    pub table: Option<Table>,
}

struct Partial {
    checks: Vec<Check>,
    warnings: Vec<String>,
    result: Value,
    timings: Value,
    table: Option<Table>,
}

/// Runs one command against a merged configuration.
pub fn execute(command: Command, cfg: &RunConfig) -> Result<Outcome> {
    cfg.validate()?;
    if let Some(n) = cfg.workers {
        // a pool installed by an earlier call in this process is kept
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    let part = match command {
        Command::Count => cmd_count(cfg)?,
        Command::Sieve => cmd_sieve(cfg)?,
        Command::Charsum => cmd_charsum(cfg)?,
        Command::Poisson => cmd_poisson(cfg)?,
        Command::Budget => cmd_budget(cfg)?,
        Command::Fit => cmd_fit(cfg)?,
    };
    let name = serde_json::to_value(command)?
        .as_str()
        .unwrap_or_default()
        .to_string();
    let report = Report {
        command: name,
        version: VERSION.to_string(),
        seed: cfg.seed(),
        config_hash: cfg.hash(),
        config: cfg.canonical(),
        passed: part.checks.iter().all(|c| c.passed),
        checks: part.checks,
        warnings: part.warnings,
        result: part.result,
        timings: part.timings,
    };
    Ok(Outcome {
        report,
        table: part.table,
    })
}

/// Writes the outcome to `out` (as `.json` and `.csv`) or the report to stdout.
pub fn emit(outcome: &Outcome, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(&outcome.report)?;
    match out {
        Some(stem) => {
            if let Some(dir) = stem.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            }
            let json_path = stem.with_extension("json");
            fs::write(&json_path, text + "\n")
                .with_context(|| format!("writing {}", json_path.display()))?;
            if let Some(t) = &outcome.table {
                t.write(&stem.with_extension("csv"))?;
            }
        }
        None => println!("{text}"),
    }
    Ok(())
}

/// Parses arguments, runs the command and returns the process exit code:
/// 0 when every check passes, 1 when a check fails, 2 on errors.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let go = || -> Result<bool> {
        let base = match &cli.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        let cfg = base.overlay(cli.opts.clone());
        let outcome = execute(cli.command, &cfg)?;
        for w in &outcome.report.warnings {
            log::warn!("{w}");
        }
        for c in outcome.report.checks.iter().filter(|c| !c.passed) {
            eprintln!("check failed: {} ({})", c.name, c.detail);
        }
        emit(&outcome, cfg.out.as_deref())?;
        Ok(outcome.report.passed)
    };
    match go() {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("error: {e:#}");
            2
        }
    }
}

fn cmd_count(cfg: &RunConfig) -> Result<Partial> {
    let form = cfg.load_form()?;
    let grid = cfg.b_values(None)?;
    let mut table = Table::new(&["B", "N", "sieve_rhs", "ratio", "seconds"]);
    let mut counts = Vec::new();
    let mut timings = Vec::new();
    for &b in &grid {
        let r = brute_count(&form, b)?;
        table.rows.push(vec![
            b.to_string(),
            r.exact_count.to_string(),
            String::new(),
            String::new(),
            r.timings.count_seconds.to_string(),
        ]);
        counts.push((b, r.exact_count));
        timings.push(json!({"B": b, "seconds": r.timings.count_seconds}));
    }
    let mut sorted = counts.clone();
    sorted.sort();
    let monotone = sorted.windows(2).all(|w| w[0].1 <= w[1].1);
    Ok(Partial {
        checks: vec![Check::new(
            "monotone_in_B",
            monotone,
            "N(B) nondecreasing over nested boxes",
        )],
        warnings: vec![],
        result: json!({
            "counts": counts.iter().map(|&(b, n)| json!({"B": b, "N": n})).collect::<Vec<_>>(),
        }),
        timings: Value::Array(timings),
        table: Some(table),
    })
}

fn build_plan(cfg: &RunConfig, b: u64) -> Result<SievePlan> {
    let c = cfg.c.unwrap_or(1.0);
    Ok(match (&cfg.primes1, &cfg.primes2) {
        (Some(p1), Some(p2)) => SievePlan::forced(b, p1.0.clone(), p2.0.clone(), c)?,
        (None, None) => {
            let cache = PrimeCache::from_flag_or_env(cfg.cache_dir.as_deref());
            SievePlan::with_cache(b, cfg.eps.unwrap_or(0.0), c, cache.as_ref())?
        }
        _ => bail!("--primes1 and --primes2 must be given together"),
    })
}

/// `D(n)^2 = sum_{q, q'} (n / q q')` at seeded sample points.
fn detector_identity(form: &QuarticForm, plan: &SievePlan, seed: u64) -> (usize, usize) {
    let moduli: Vec<i128> = plan
        .moduli()
        .iter()
        .map(|&(a, b)| (a * b) as i128)
        .collect();
    let pairs = moduli.len() * moduli.len();
    let samples = (1_000_000 / pairs.max(1)).clamp(1, 64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = plan.b as i64;
    let bad = (0..samples)
        .filter(|_| {
            let x = [0; 3].map(|_: i32| rng.random_range(-b..=b));
            let n = form.eval_i128(x[0], x[1], x[2]);
            let d = detector(n, plan) as i128;
            let double: i128 = moduli
                .iter()
                .flat_map(|&q| moduli.iter().map(move |&r| (q, r)))
                .map(|(q, r)| jacobi(n, q * r).expect("odd modulus") as i128)
                .sum();
            d * d != double
        })
        .count();
    (samples, bad)
}

fn cmd_sieve(cfg: &RunConfig) -> Result<Partial> {
    let form = cfg.load_form()?;
    let b = cfg.b.context("--B is required for sieve")?;
    let plan = build_plan(cfg, b)?;
    let mut warnings = Vec::new();
    if !plan.admissible && !cfg.force.unwrap_or(false) {
        warnings.push(format!(
            "plan is inadmissible (P1 = {}, P2 = {}, need P2 >= C log B and 10 P2 <= P1); pass --force to silence",
            plan.p1, plan.p2
        ));
    }
    let (report, rhs) = count_with_sieve(&form, &plan)?;
    let (samples, bad) = detector_identity(&form, &plan, cfg.seed());
    let split =
        (rhs.diagonal + rhs.off_diagonal - rhs.value).abs() <= 1e-9 * rhs.value.abs().max(1.0);
    let checks = vec![
        Check::new(
            "detector_square",
            bad == 0,
            format!("{bad} of {samples} sampled points disagree"),
        ),
        Check::new(
            "diagonal_split",
            split,
            "diagonal + off_diagonal = sieve_rhs",
        ),
        Check::new(
            "square_floor",
            rhs.value >= rhs.coprime_square_floor,
            format!("{} >= {}", rhs.value, rhs.coprime_square_floor),
        ),
    ];
    let mut table = Table::new(&["B", "N", "sieve_rhs", "ratio", "seconds"]);
    let seconds = report.timings.count_seconds + report.timings.sieve_seconds.unwrap_or(0.0);
    table.rows.push(vec![
        b.to_string(),
        report.exact_count.to_string(),
        rhs.value.to_string(),
        opt(report.ratio),
        seconds.to_string(),
    ]);
    Ok(Partial {
        checks,
        warnings,
        result: json!({
            "plan": plan,
            "N": report.exact_count,
            "sieve_rhs": rhs,
            "ratio": report.ratio,
        }),
        timings: serde_json::to_value(&report.timings)?,
        table: Some(table),
    })
}

const CHARSUM_HEADER: [&str; 9] = [
    "p",
    "x1",
    "x2",
    "x3",
    "re",
    "im",
    "ratio_to_p32",
    "suite",
    "error",
];

fn charsum_row(table: &mut Table, row: &CharSumRow, suite: &str) {
    table.rows.push(vec![
        row.p.to_string(),
        row.x1.to_string(),
        row.x2.to_string(),
        row.x3.to_string(),
        row.re.to_string(),
        row.im.to_string(),
        row.ratio_to_p32.to_string(),
        suite.to_string(),
        String::new(),
    ]);
}

fn error_row(table: &mut Table, p: u64, suite: &str, err: impl Display) {
    let mut r = vec![p.to_string()];
    r.extend(std::iter::repeat_n(String::new(), 6));
    r.push(suite.to_string());
    r.push(err.to_string());
    table.rows.push(r);
}

fn cube(p: u64) -> Vec<LatticeTriple> {
    let p = p as i64;
    (0..p)
        .flat_map(|a| (0..p).flat_map(move |b| (0..p).map(move |c| LatticeTriple::new(a, b, c))))
        .collect()
}

fn suite_oracle(
    form: &QuarticForm,
    primes: &[u64],
    table: &mut Table,
    checks: &mut Vec<Check>,
) -> Value {
    let mut max_dev = 0.0f64;
    let mut errors = 0;
    for &p in primes {
        let res: Result<Vec<(CharSumRow, f64)>, CharSumError> = cube(p)
            .into_par_iter()
            .map(|x| {
                let fast = charsum_prime_reduced(form, p, x)?;
                let slow = charsum_naive(form, p, x)?;
                Ok((CharSumRow::from_value(&fast), fast.distance(&slow)))
            })
            .collect();
        match res {
            Ok(rows) => {
                for (row, dev) in rows {
                    max_dev = max_dev.max(dev);
                    charsum_row(table, &row, "oracle");
                }
            }
            Err(e) => {
                errors += 1;
                error_row(table, p, "oracle", e);
            }
        }
    }
    checks.push(Check::new(
        "oracle_reduced_vs_naive",
        errors == 0 && max_dev <= CHARSUM_TOL,
        format!("max deviation {max_dev:e}, {errors} primes failed"),
    ));
    if *form == QuarticForm::klein() {
        let v = charsum_prime_reduced(form, 3, LatticeTriple::ZERO).map(|v| v.exact);
        checks.push(Check::new(
            "oracle_anchor",
            matches!(v, Ok(Some(-6))),
            "c(3, 0) = -6",
        ));
    }
    json!({"primes": primes, "max_deviation": max_dev, "errors": errors})
}

fn suite_katz(
    form: &QuarticForm,
    primes: &[u64],
    samples: usize,
    seed: u64,
    table: &mut Table,
    checks: &mut Vec<Check>,
) -> Result<Value> {
    let rows = cancellation_scan(form, primes, samples, seed)?;
    let mut per_prime: Vec<Value> = Vec::new();
    for &p in primes {
        let m = rows
            .iter()
            .filter(|r| r.p == p)
            .map(|r| r.ratio_to_p32)
            .fold(0.0, f64::max);
        per_prime.push(json!({"p": p, "max_ratio": m}));
    }
    let max = rows.iter().map(|r| r.ratio_to_p32).fold(0.0, f64::max);
    for r in &rows {
        charsum_row(table, r, "katz");
    }
    checks.push(Check::new(
        "katz_ratio",
        max <= KATZ_BOUND,
        format!("max |c(p,x)|/p^1.5 = {max} (bound {KATZ_BOUND})"),
    ));
    Ok(json!({"primes": primes, "samples": samples, "max_ratio": max, "per_prime": per_prime}))
}

fn suite_dual(
    form: &QuarticForm,
    primes: &[u64],
    samples: usize,
    seed: u64,
    table: &mut Table,
    checks: &mut Vec<Check>,
) -> Value {
    let mut mismatches = 0;
    let mut errors = 0;
    let mut checked = 0;
    for &p in primes {
        let res: Result<Vec<(CharSumRow, bool)>, CharSumError> =
            crate::charsum::sample_frequencies(p, samples, seed)
                .into_par_iter()
                .map(|x| {
                    let naive = dual_charsum_naive(form, p, x)?;
                    let closed = dual_charsum_closed(form, p, x)?;
                    let (r, frac) = naive.rounded();
                    Ok((
                        CharSumRow::from_value(&naive),
                        Some(r) == closed.exact && frac <= CHARSUM_TOL,
                    ))
                })
                .collect();
        match res {
            Ok(rows) => {
                for (row, ok) in rows {
                    checked += 1;
                    mismatches += (!ok) as usize;
                    charsum_row(table, &row, "dual");
                }
            }
            Err(e) => {
                errors += 1;
                error_row(table, p, "dual", e);
            }
        }
    }
    checks.push(Check::new(
        "dual_collapse",
        mismatches == 0 && errors == 0,
        format!(
            "{mismatches} of {checked} samples differ from p^3 (F(x)/p), {errors} primes failed"
        ),
    ));
    if *form == QuarticForm::klein() {
        let at = |x| dual_charsum_naive(form, 3, x).map(|v| v.rounded().0).ok();
        let ok = at(LatticeTriple::new(1, 1, 1)) == Some(0)
            && at(LatticeTriple::new(1, 1, 0)) == Some(27);
        checks.push(Check::new(
            "dual_anchors",
            ok,
            "C(3,(1,1,1)) = 0 and C(3,(1,1,0)) = 27",
        ));
    }
    json!({"primes": primes, "samples": samples, "mismatches": mismatches, "errors": errors})
}

fn cmd_charsum(cfg: &RunConfig) -> Result<Partial> {
    let form = cfg.load_form()?;
    let suite = cfg.suite.unwrap_or(Suite::All);
    let custom = cfg.primes1.as_ref().map(|l| l.0.clone());
    let seed = cfg.seed();
    let mut table = Table::new(&CHARSUM_HEADER);
    let mut checks = Vec::new();
    let mut result = serde_json::Map::new();
    let primes_or = |d: Vec<u64>| custom.clone().unwrap_or(d);
    if matches!(suite, Suite::Oracle | Suite::All) {
        let primes = primes_or(vec![3, 5, 7, 11, 13]);
        result.insert(
            "oracle".into(),
            suite_oracle(&form, &primes, &mut table, &mut checks),
        );
    }
    if matches!(suite, Suite::Katz | Suite::All) {
        let primes = primes_or((3..=97).filter(|&p| is_prime_u64(p)).collect());
        let samples = cfg.samples.unwrap_or(200);
        result.insert(
            "katz".into(),
            suite_katz(&form, &primes, samples, seed, &mut table, &mut checks)?,
        );
    }
    if matches!(suite, Suite::Dual | Suite::All) {
        let primes = primes_or(vec![3, 5, 7]);
        let samples = cfg.samples.unwrap_or(50);
        result.insert(
            "dual".into(),
            suite_dual(&form, &primes, samples, seed, &mut table, &mut checks),
        );
    }
    Ok(Partial {
        checks,
        warnings: vec![],
        result: Value::Object(result),
        timings: Value::Null,
        table: Some(table),
    })
}

/// One cell of the Poisson matrix with its truncation-doubling comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoissonCell {
    #[serde(flatten)]
    pub report: PoissonReport,
    /// `|rhs(2T) - rhs(T)| / |rhs(T)|`.
    pub doubling_change: f64,
}

/// `poisson_check` at truncation `T` and `2T`.
pub fn poisson_cell(
    form: &QuarticForm,
    q: u64,
    q_prime: u64,
    b: u64,
    truncation: Option<u64>,
    tol: f64,
    mode: CharacterMode,
) -> Result<PoissonCell> {
    let w = BumpWeight::canonical();
    let report = poisson_check(form, q, q_prime, b, &w, truncation, tol, mode)?;
    let doubled = poisson_check(
        form,
        q,
        q_prime,
        b,
        &w,
        Some(2 * report.truncation),
        tol,
        mode,
    )?;
    let d = num_complex::Complex64::new(
        doubled.rhs_re - report.rhs_re,
        doubled.rhs_im - report.rhs_im,
    );
    let scale = report.rhs_re.hypot(report.rhs_im).max(f64::MIN_POSITIVE);
    Ok(PoissonCell {
        doubling_change: d.norm() / scale,
        report,
    })
}

pub const DEFAULT_POISSON_MATRIX: [(u64, u64); 3] = [(3, 5), (3, 7), (5, 7)];
pub const DEFAULT_POISSON_B: [u64; 2] = [40, 60];

fn cmd_poisson(cfg: &RunConfig) -> Result<Partial> {
    let form = cfg.load_form()?;
    let pairs: Vec<(u64, u64)> = match (&cfg.primes1, &cfg.primes2) {
        (Some(a), Some(b)) => {
            ensure!(
                a.0.len() == b.0.len(),
                "--primes1 and --primes2 must have equal length for poisson"
            );
            a.0.iter().copied().zip(b.0.iter().copied()).collect()
        }
        (None, None) => DEFAULT_POISSON_MATRIX.to_vec(),
        _ => bail!("--primes1 and --primes2 must be given together"),
    };
    let bs = cfg.b_values(Some(&DEFAULT_POISSON_B))?;
    ensure!(
        !pairs.is_empty(),
        "poisson matrix is empty: give at least one (q, q') pair"
    );
    let tol = cfg.tol.unwrap_or(1e-12);
    let mode = match cfg.character.unwrap_or(Character::Jacobi) {
        Character::Jacobi => CharacterMode::Jacobi,
        Character::Trivial => CharacterMode::Trivial,
    };
    let limit = match mode {
        CharacterMode::Jacobi => POISSON_TOL,
        CharacterMode::Trivial => TRIVIAL_POISSON_TOL,
    };
    let mut cells = Vec::new();
    let mut failures = Vec::new();
    let mut table = Table::new(&[
        "q",
        "q_prime",
        "B",
        "lhs",
        "rhs_re",
        "rhs_im",
        "rel_error",
        "truncation",
        "doubling_change",
        "error",
    ]);
    for &(q, qp) in &pairs {
        for &b in &bs {
            match poisson_cell(&form, q, qp, b, cfg.truncation, tol, mode) {
                Ok(c) => {
                    let r = &c.report;
                    table.rows.push(vec![
                        q.to_string(),
                        qp.to_string(),
                        b.to_string(),
                        r.lhs.to_string(),
                        r.rhs_re.to_string(),
                        r.rhs_im.to_string(),
                        r.rel_error.to_string(),
                        r.truncation.to_string(),
                        c.doubling_change.to_string(),
                        String::new(),
                    ]);
                    cells.push(c);
                }
                Err(e) => {
                    let mut row = vec![q.to_string(), qp.to_string(), b.to_string()];
                    row.extend(std::iter::repeat_n(String::new(), 6));
                    row.push(format!("{e:#}"));
                    table.rows.push(row);
                    failures
                        .push(json!({"q": q, "q_prime": qp, "B": b, "error": format!("{e:#}")}));
                }
            }
        }
    }
    let max_rel = cells.iter().map(|c| c.report.rel_error).fold(0.0, f64::max);
    let max_doubling = cells.iter().map(|c| c.doubling_change).fold(0.0, f64::max);
    let checks = vec![
        Check::new(
            "cells_computed",
            failures.is_empty(),
            format!("{} cells failed", failures.len()),
        ),
        Check::new(
            "rel_error",
            max_rel <= limit,
            format!("max rel_error {max_rel:e} (limit {limit:e})"),
        ),
        Check::new(
            "truncation_doubling",
            max_doubling <= DOUBLING_TOL,
            format!("max relative rhs change {max_doubling:e} (limit {DOUBLING_TOL:e})"),
        ),
    ];
    Ok(Partial {
        checks,
        warnings: vec![],
        result: json!({
            "cells": cells,
            "failures": failures,
            "max_rel_error": max_rel,
            "max_doubling_change": max_doubling,
        }),
        timings: Value::Null,
        table: Some(table),
    })
}

fn cmd_budget(cfg: &RunConfig) -> Result<Partial> {
    let scan = optimize_p2_exponent(5, 50, 1, Ratio::from_integer(2))?;
    let mut table = Table::new(&[
        "p2_exponent",
        "p1_exponent",
        "e1",
        "e2",
        "e3",
        "e4",
        "dominant",
    ]);
    for r in &scan.rows {
        table.rows.push(
            [
                r.p2_exponent,
                r.p1_exponent,
                r.e1,
                r.e2,
                r.e3,
                r.e4,
                r.dominant,
            ]
            .iter()
            .map(f64::to_string)
            .collect(),
        );
    }
    let choice = ExponentBudget::new(Ratio::new(3, 5), Ratio::new(3, 10));
    let target = Ratio::new(21, 10);
    let b = cfg.b.unwrap_or(1 << 20) as f64;
    let tb = term_budget(b, b.powf(0.6), b.powf(0.3))?;
    let checks = vec![
        Check::new(
            "argmin_p2_exponent",
            (scan.argmin_p2_exponent - 0.30).abs() <= 0.01 + 1e-12,
            format!("argmin {}", scan.argmin_p2_exponent),
        ),
        Check::new(
            "t1_equals_t2",
            choice.terms[0] == choice.terms[1] && choice.terms[0] == target,
            format!("exponents {} and {}", choice.terms[0], choice.terms[1]),
        ),
        Check::new(
            "optimal_exponent",
            choice.dominant() == target && (scan.min_exponent - 2.1).abs() < 1e-12,
            format!(
                "dominant {} at the choice, {} on the grid",
                choice.dominant(),
                scan.min_exponent
            ),
        ),
    ];
    Ok(Partial {
        checks,
        warnings: vec![],
        result: json!({
            "scan": scan,
            "choice": {
                "p1_exponent": "3/5",
                "p2_exponent": "3/10",
                "exponents": choice.terms.iter().map(|t| t.to_string()).collect::<Vec<_>>(),
                "dominant": choice.dominant().to_string(),
            },
            "term_budget": {"B": b, "values": tb},
        }),
        timings: Value::Null,
        table: Some(table),
    })
}

fn cmd_fit(cfg: &RunConfig) -> Result<Partial> {
    let form = cfg.load_form()?;
    let grid = cfg.b_values(Some(&[8, 16, 32, 64]))?;
    let fit = exponent_fit(&form, &grid)?;
    let monotone = fit.points.windows(2).all(|w| w[0].1 <= w[1].1);
    let mut table = Table::new(&["B", "N", "residual"]);
    let mut res = fit.residuals.iter();
    for &(b, n) in &fit.points {
        let r = if n > 0 {
            res.next().map(f64::to_string)
        } else {
            None
        };
        table
            .rows
            .push(vec![b.to_string(), n.to_string(), r.unwrap_or_default()]);
    }
    Ok(Partial {
        checks: vec![
            Check::new("monotone_in_B", monotone, "N(B) nondecreasing"),
            Check::new(
                "finite_slope",
                fit.slope.is_finite(),
                format!("slope {}", fit.slope),
            ),
        ],
        warnings: fit
            .excluded
            .iter()
            .map(|b| format!("N({b}) = 0 excluded from the fit"))
            .collect(),
        result: serde_json::to_value(&fit)?,
        timings: Value::Null,
        table: Some(table),
    })
}
