//! Experiment runner: configuration, suites, result rows and artifacts.
//!
//! Every suite writes rows of the form
//! `suite,parameters,quantity,estimate,ci_half_width,target,tolerance,rule,pass`
//! where `rule` states how `pass` follows from the numbers:
//!
//! ```text
//! rel       |estimate - target| <= tolerance * |target|
//! abs       |estimate - target| <= tolerance
//! at_most   estimate <= target
//! at_least  estimate >= target
//! info      no threshold (pass = na)
//! ```
//!
//! Paths are simulated on a rayon pool whose size comes from `SHE_RENORM_WORKERS`.
//! Results are collected in path order, so the worker count never changes an output.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::OnceLock;
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::constants::{
    alternative_limit_coefficient, c0, constant_report, heat_norm_asymptotic_error,
    heat_norm_relative_error, limit_coefficient, variance_blowup,
};
use crate::error::{Error, Result};
use crate::functionals::{
    beta_variance_exact, convolution_mode_variances, decompose_increment, simulate_beta, BetaConfig,
};
use crate::noise::{bracket_norm, BracketKind, RngStream};
use crate::sewing::{
    brownian_path, characterization_check, level_gap_tail_bound, level_gaps, sew,
    CharacterizationTolerance, DyadicSeries, FrozenGerm, Germ, ItoGerm, MAX_LEVEL,
};
use crate::solver::{
    default_cutoff, grid_index, solve_path, Channels, InitialSpec, Nonlinearity, Placement,
    SimConfig,
};
use crate::spectral::{
    apply_heat, basis_value, heat_deriv_l2norm_sq, heat_kernel_value, laplace_eigenvalue,
};
use crate::spectral::{synthesize_grid, SpectralField};
use crate::stats::holder_seminorm;
use crate::stats::{
    ks_two_sample, loglog_slope, lp_moment, mean_estimate, sample_corr, sup_lp_norm,
    variance_estimate,
};

pub const SCHEMA_VERSION: u32 = 1;
pub const WORKERS_ENV: &str = "SHE_RENORM_WORKERS";
pub const CSV_HEADER: &str =
    "suite,parameters,quantity,estimate,ci_half_width,target,tolerance,rule,pass";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    Constants,
    HeatCheck,
    BlowupCurve,
    BetaStats,
    Simulate,
    Converge,
    Decompose,
    SewingCheck,
    HolderNorms,
}

impl Suite {
    pub const ALL: [Suite; 9] = [
        Suite::Constants,
        Suite::HeatCheck,
        Suite::BlowupCurve,
        Suite::BetaStats,
        Suite::Simulate,
        Suite::Converge,
        Suite::Decompose,
        Suite::SewingCheck,
        Suite::HolderNorms,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Suite::Constants => "constants",
            Suite::HeatCheck => "heat-check",
            Suite::BlowupCurve => "blowup-curve",
            Suite::BetaStats => "beta-stats",
            Suite::Simulate => "simulate",
            Suite::Converge => "converge",
            Suite::Decompose => "decompose",
            Suite::SewingCheck => "sewing-check",
            Suite::HolderNorms => "holder-norms",
        }
    }
}

impl std::str::FromStr for Suite {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config {
                field: "suite".into(),
                reason: format!("unknown suite `{s}`"),
            })
    }
}

impl std::fmt::Display for Suite {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Flat experiment configuration shared by all suites.
///
/// Fields a suite does not use are ignored by it but still enter the config hash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub master_seed: u64,
    pub paths: usize,
    /// Paths for the Brownian part of `sewing-check`.
    pub ito_paths: usize,
    pub epsilons: Vec<f64>,
    /// Basis indices of the recorded `beta^n`.
    pub modes: Vec<usize>,
    pub nonlinearity: Nonlinearity,
    pub initial: InitialSpec,
    pub placement: Placement,
    /// `dt = dt_factor * eps^2` (refined onto a 1e-3 grid when times demand it).
    pub dt_factor: f64,
    pub t_end: f64,
    pub times: Vec<f64>,
    pub x0: f64,
    pub s: f64,
    pub lags: Vec<f64>,
    pub limit_cutoff: usize,
    pub limit_dt: f64,
    /// Override of the noise prefactor (limit coefficient when `eps = 0`).
    pub coefficient: Option<f64>,
    /// Sewing level compared against the direct sum.
    pub level: u32,
    pub gammas: Vec<f64>,
    pub alpha: f64,
    pub p: f64,
    pub pair_budget: usize,
    pub holder_grid: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            master_seed: 20_240_601,
            paths: 256,
            ito_paths: 1024,
            epsilons: vec![0.1],
            modes: vec![2, 3, 4, 5],
            nonlinearity: Nonlinearity::Sine { a: 1.0 },
            initial: InitialSpec::Constant { c: 0.5 },
            placement: Placement::Half,
            dt_factor: 0.1,
            t_end: 1.0,
            times: vec![1.0],
            x0: 0.0,
            s: 0.25,
            lags: vec![0.01, 0.02, 0.05, 0.1],
            limit_cutoff: 80,
            limit_dt: 1e-3,
            coefficient: None,
            level: 12,
            gammas: vec![0.0, 0.25, 0.5],
            alpha: 0.25,
            p: 4.0,
            pair_budget: 2048,
            holder_grid: 256,
        }
    }
}

impl ExperimentConfig {
    /// Defaults of one suite.
    pub fn defaults(suite: Suite) -> Self {
        let base = Self::default();
        match suite {
            Suite::Constants => Self {
                times: (0..=8).map(|i| 10f64.powf(-6.0 + 0.5 * i as f64)).collect(),
                ..base
            },
            Suite::HeatCheck => Self {
                times: vec![1e-3, 1e-2, 0.1],
                ..base
            },
            Suite::BlowupCurve => Self {
                epsilons: vec![0.1, 0.05, 0.025, 0.0125],
                ..base
            },
            Suite::BetaStats => Self {
                epsilons: vec![0.2, 0.1, 0.05],
                paths: 4096,
                times: vec![0.1, 1.0],
                ..base
            },
            Suite::Simulate => Self {
                paths: 16,
                times: vec![0.25, 0.5, 1.0],
                ..base
            },
            Suite::Converge => Self {
                epsilons: vec![0.4, 0.2, 0.1, 0.05],
                paths: 4096,
                t_end: 0.5,
                ..base
            },
            Suite::Decompose => Self {
                epsilons: vec![0.1, 0.05, 0.025],
                paths: 64,
                placement: Placement::None,
                initial: InitialSpec::SmoothSine { a: 0.5, k: 1 },
                ..base
            },
            Suite::SewingCheck => Self {
                paths: 64,
                modes: (1..=16).collect(),
                ..base
            },
            Suite::HolderNorms => Self {
                epsilons: vec![0.2, 0.1, 0.05],
                initial: InitialSpec::WeierstrassQuarter { a: 0.5, depth: 8 },
                times: vec![0.25, 0.5, 0.75, 1.0],
                s: 0.5,
                lags: vec![1e-3, 2e-3, 5e-3, 1e-2],
                ..base
            },
        }
    }

    /// Defaults of `suite`, overlaid by a JSON object (a config or a manifest) and then by
    /// single-field overrides. Errors name the offending field.
    pub fn resolve(
        suite: Suite,
        file: Option<Value>,
        overrides: &[(String, Value)],
    ) -> Result<Self> {
        let defaults = match serde_json::to_value(Self::defaults(suite)) {
            Ok(Value::Object(m)) => m,
            _ => unreachable!("config serializes to an object"),
        };
        let mut merged = defaults.clone();
        let mut touched = Vec::new();
        if let Some(v) = file {
            let obj = match v {
                Value::Object(mut m)
                    if m.contains_key("config") && m.contains_key("results_sha256") =>
                {
                    match m.remove("config") {
                        Some(Value::Object(c)) => c,
                        _ => {
                            return Err(Error::Config {
                                field: "config".into(),
                                reason: "must be an object".into(),
                            })
                        }
                    }
                }
                Value::Object(m) => m,
                _ => {
                    return Err(Error::Config {
                        field: "<root>".into(),
                        reason: "must be a JSON object".into(),
                    })
                }
            };
            for (k, v) in obj {
                overlay(&mut merged, &mut touched, k, v)?;
            }
        }
        for (k, v) in overrides {
            overlay(&mut merged, &mut touched, k.clone(), v.clone())?;
        }
        let cfg: Self = match serde_json::from_value(Value::Object(merged.clone())) {
            Ok(c) => c,
            Err(e) => return Err(blame(&defaults, &merged, &touched, e)),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config or manifest file, then applies overrides.
    pub fn load(suite: Suite, path: Option<&Path>, overrides: &[(String, Value)]) -> Result<Self> {
        let file = match path {
            Some(p) => {
                let text = fs::read_to_string(p)?;
                Some(serde_json::from_str(&text).map_err(|e| Error::Config {
                    field: "<file>".into(),
                    reason: e.to_string(),
                })?)
            }
            None => None,
        };
        Self::resolve(suite, file, overrides)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: &str| {
            Err(Error::Config {
                field: field.into(),
                reason: reason.into(),
            })
        };
        if self.schema_version != SCHEMA_VERSION {
            return bad("schema_version", "unsupported schema version");
        }
        if self.paths < 2 {
            return bad("paths", "need at least two paths");
        }
        if self.epsilons.is_empty() || self.epsilons.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
            return bad("epsilons", "need a nonempty list of finite values >= 0");
        }
        if !(self.dt_factor > 0.0 && self.dt_factor.is_finite()) {
            return bad("dt_factor", "must be finite and > 0");
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return bad("t_end", "must be finite and > 0");
        }
        if self.times.windows(2).any(|w| w[0] >= w[1]) || self.times.iter().any(|t| !(*t >= 0.0)) {
            return bad("times", "must be nonnegative and strictly increasing");
        }
        if self.lags.windows(2).any(|w| w[0] >= w[1]) || self.lags.iter().any(|t| !(*t > 0.0)) {
            return bad("lags", "must be positive and strictly increasing");
        }
        if self.modes.is_empty() || self.modes.contains(&0) {
            return bad("modes", "need a nonempty list of basis indices >= 1");
        }
        if !(1.0..=8.0).contains(&self.p) {
            return bad("p", "must lie in [1, 8]");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha", "must lie in (0, 1)");
        }
        if self.level + 1 > MAX_LEVEL || self.level < 7 {
            return bad("level", "must lie in 7..=13");
        }
        if !self.holder_grid.is_power_of_two() || self.holder_grid < 8 {
            return bad("holder_grid", "must be a power of two >= 8");
        }
        if !(self.limit_dt > 0.0) || self.limit_cutoff == 0 {
            return bad("limit_dt", "limit runs need dt > 0 and a positive cutoff");
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        hex_sha256(
            serde_json::to_string(self)
                .expect("config serializes")
                .as_bytes(),
        )
    }
}

fn overlay(
    merged: &mut Map<String, Value>,
    touched: &mut Vec<String>,
    k: String,
    v: Value,
) -> Result<()> {
    if !merged.contains_key(&k) {
        return Err(Error::Config {
            field: k,
            reason: "unknown field".into(),
        });
    }
    if !touched.contains(&k) {
        touched.push(k.clone());
    }
    merged.insert(k, v);
    Ok(())
}

/// Names the first changed field that fails to deserialize on its own.
fn blame(
    defaults: &Map<String, Value>,
    merged: &Map<String, Value>,
    touched: &[String],
    err: serde_json::Error,
) -> Error {
    for k in touched {
        let mut single = defaults.clone();
        single.insert(k.clone(), merged[k].clone());
        if let Err(e) = serde_json::from_value::<ExperimentConfig>(Value::Object(single)) {
            return Error::Config {
                field: k.clone(),
                reason: e.to_string(),
            };
        }
    }
    Error::Config {
        field: "<root>".into(),
        reason: err.to_string(),
    }
}

fn hex_sha256(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Seed of one named random stream family, derived from the master seed.
pub fn derive_seed(master: u64, tag: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(tag.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

/// `dt_factor * eps^2` if every anchor time lies on that grid, otherwise the largest
/// `1 / (1000 k)` below it.
pub fn choose_dt(eps: f64, factor: f64, anchors: &[f64]) -> f64 {
    let dt = factor * eps * eps;
    if anchors.iter().all(|&t| grid_index(t, dt).is_some()) {
        return dt;
    }
    let k = (1.0 / (1000.0 * dt)).ceil().max(1.0);
    1.0 / (1000.0 * k)
}

/// Worker count from `SHE_RENORM_WORKERS`, defaulting to all cores.
pub fn worker_count() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .filter(|&n: &usize| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

fn pool() -> &'static rayon::ThreadPool {
    static POOL: OnceLock<rayon::ThreadPool> = OnceLock::new();
    POOL.get_or_init(|| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(worker_count())
            .build()
            .expect("thread pool builds")
    })
}

/// Runs `f` for path indices `0..n` on the worker pool, results in index order.
pub fn map_paths<T: Send>(n: usize, f: impl Fn(u64) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    pool().install(|| (0..n as u64).into_par_iter().map(&f).collect())
}

/// How `pass` is decided from estimate, target and tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    Info,
    Rel,
    Abs,
    AtMost,
    AtLeast,
}

impl Rule {
    pub fn name(&self) -> &'static str {
        match self {
            Rule::Info => "info",
            Rule::Rel => "rel",
            Rule::Abs => "abs",
            Rule::AtMost => "at_most",
            Rule::AtLeast => "at_least",
        }
    }

    pub fn judge(&self, estimate: f64, target: f64, tolerance: f64) -> Option<bool> {
        match self {
            Rule::Info => None,
            Rule::Rel => Some((estimate - target).abs() <= tolerance * target.abs()),
            Rule::Abs => Some((estimate - target).abs() <= tolerance),
            Rule::AtMost => Some(estimate <= target),
            Rule::AtLeast => Some(estimate >= target),
        }
    }
}

/// One line of the results CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub suite: String,
    pub parameters: String,
    pub quantity: String,
    pub estimate: f64,
    pub ci_half_width: f64,
    pub target: f64,
    pub tolerance: f64,
    pub rule: Rule,
    pub pass: Option<bool>,
}

impl ResultRow {
    pub fn info(quantity: &str, parameters: &str, estimate: f64, ci_half_width: f64) -> Self {
        Self {
            suite: String::new(),
            parameters: parameters.into(),
            quantity: quantity.into(),
            estimate,
            ci_half_width,
            target: f64::NAN,
            tolerance: f64::NAN,
            rule: Rule::Info,
            pass: None,
        }
    }

    pub fn check(
        quantity: &str,
        parameters: &str,
        estimate: f64,
        ci_half_width: f64,
        rule: Rule,
        target: f64,
        tolerance: f64,
    ) -> Self {
        Self {
            suite: String::new(),
            parameters: parameters.into(),
            quantity: quantity.into(),
            estimate,
            ci_half_width,
            target,
            tolerance,
            rule,
            pass: rule.judge(estimate, target, tolerance),
        }
    }

    /// Attaches a reference value to an informational row.
    pub fn with_target(mut self, target: f64) -> Self {
        self.target = target;
        self
    }

    pub fn to_csv_line(&self) -> String {
        let pass = match self.pass {
            Some(true) => "true",
            Some(false) => "false",
            None => "na",
        };
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.suite,
            self.parameters,
            self.quantity,
            fmt_f(self.estimate),
            fmt_f(self.ci_half_width),
            fmt_f(self.target),
            fmt_f(self.tolerance),
            self.rule.name(),
            pass
        )
    }
}

/// 17 significant digits, round-trip safe.
pub fn fmt_f(x: f64) -> String {
    format!("{x:.16e}")
}

/// Collects rows, flushing each to the CSV sink as it arrives.
pub struct Recorder {
    suite: Suite,
    rows: Vec<ResultRow>,
    notes: Vec<String>,
    artifacts: Vec<(String, String)>,
    sink: Option<BufWriter<File>>,
}

impl Recorder {
    pub fn new(suite: Suite) -> Self {
        Self {
            suite,
            rows: Vec::new(),
            notes: Vec::new(),
            artifacts: Vec::new(),
            sink: None,
        }
    }

    fn with_sink(suite: Suite, path: &Path) -> Result<Self> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "{CSV_HEADER}")?;
        w.flush()?;
        Ok(Self {
            sink: Some(w),
            ..Self::new(suite)
        })
    }

    pub fn push(&mut self, mut row: ResultRow) -> Result<()> {
        row.suite = self.suite.name().into();
        if let Some(w) = self.sink.as_mut() {
            writeln!(w, "{}", row.to_csv_line())?;
            w.flush()?;
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn note(&mut self, text: impl Into<String>) {
        self.notes.push(text.into());
    }

    pub fn artifact(&mut self, name: &str, contents: String) {
        self.artifacts.push((name.into(), contents));
    }

    pub fn rows(&self) -> &[ResultRow] {
        &self.rows
    }

    pub fn notes(&self) -> &[String] {
        &self.notes
    }
}

/// Renders rows as the CSV body (header included).
pub fn render_csv(rows: &[ResultRow]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.to_csv_line());
        s.push('\n');
    }
    s
}

/// Run metadata written next to the results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub suite: String,
    pub tool_version: String,
    pub config_hash: String,
    pub master_seed: u64,
    pub workers: usize,
    pub started_unix_ms: u64,
    pub finished_unix_ms: u64,
    pub pass: bool,
    pub checks_passed: usize,
    pub checks_failed: usize,
    /// `quantity[parameters]` of every failed check.
    pub failed: Vec<String>,
    pub results_sha256: String,
    pub config: ExperimentConfig,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub manifest: Manifest,
    pub rows: Vec<ResultRow>,
    pub notes: Vec<String>,
    pub csv: String,
    pub summary: String,
}

fn unix_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

/// Runs a suite; with `out_dir`, writes `results.csv`, `manifest.json`, `summary.txt`
/// and any suite artifacts there.
pub fn run(suite: Suite, cfg: &ExperimentConfig, out_dir: Option<&Path>) -> Result<RunOutcome> {
    cfg.validate()?;
    let started = unix_ms();
    let mut rec = match out_dir {
        Some(d) => {
            fs::create_dir_all(d)?;
            Recorder::with_sink(suite, &d.join("results.csv"))?
        }
        None => Recorder::new(suite),
    };
    run_suite(suite, cfg, &mut rec)?;
    let csv = render_csv(&rec.rows);
    let failed: Vec<String> = rec
        .rows
        .iter()
        .filter(|r| r.pass == Some(false))
        .map(|r| format!("{}[{}]", r.quantity, r.parameters))
        .collect();
    let checks_passed = rec.rows.iter().filter(|r| r.pass == Some(true)).count();
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        suite: suite.name().into(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        config_hash: cfg.hash(),
        master_seed: cfg.master_seed,
        workers: worker_count(),
        started_unix_ms: started,
        finished_unix_ms: unix_ms(),
        pass: failed.is_empty(),
        checks_passed,
        checks_failed: failed.len(),
        failed,
        results_sha256: hex_sha256(csv.as_bytes()),
        config: cfg.clone(),
    };
    let summary = render_summary(&manifest, &rec.rows, &rec.notes);
    if let Some(d) = out_dir {
        for (name, body) in &rec.artifacts {
            fs::write(d.join(name), body)?;
        }
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(d.join("manifest.json"), json + "\n")?;
        fs::write(d.join("summary.txt"), &summary)?;
    }
    Ok(RunOutcome {
        manifest,
        notes: rec.notes,
        rows: rec.rows,
        csv,
        summary,
    })
}

/// Human-readable report.
pub fn render_summary(manifest: &Manifest, rows: &[ResultRow], notes: &[String]) -> String {
    let mut s = format!(
        "suite {}  (version {}, seed {}, config {})\n",
        manifest.suite,
        manifest.tool_version,
        manifest.master_seed,
        &manifest.config_hash[..12]
    );
    for r in rows {
        let flag = match r.pass {
            Some(true) => "PASS",
            Some(false) => "FAIL",
            None => "    ",
        };
        let params = if r.parameters.is_empty() {
            String::new()
        } else {
            format!(" [{}]", r.parameters)
        };
        s.push_str(&format!(
            "{flag} {}{params}: {:.6e} +- {:.2e}",
            r.quantity, r.estimate, r.ci_half_width
        ));
        if r.rule != Rule::Info {
            s.push_str(&format!(
                "  ({} target {:.6e}, tol {:.3e})",
                r.rule.name(),
                r.target,
                r.tolerance
            ));
        } else if r.target.is_finite() {
            s.push_str(&format!("  (reference {:.6e})", r.target));
        }
        s.push('\n');
    }
    for n in notes {
        s.push_str(&format!("note: {n}\n"));
    }
    s.push_str(&format!(
        "{}: {} checks passed, {} failed\n",
        if manifest.pass { "PASS" } else { "FAIL" },
        manifest.checks_passed,
        manifest.checks_failed
    ));
    s
}

/// Dispatches to the suite implementation.
pub fn run_suite(suite: Suite, cfg: &ExperimentConfig, rec: &mut Recorder) -> Result<()> {
    match suite {
        Suite::Constants => suite_constants(cfg, rec),
        Suite::HeatCheck => suite_heat_check(cfg, rec),
        Suite::BlowupCurve => suite_blowup(cfg, rec),
        Suite::BetaStats => suite_beta_stats(cfg, rec),
        Suite::Simulate => suite_simulate(cfg, rec),
        Suite::Converge => suite_converge(cfg, rec),
        Suite::Decompose => suite_decompose(cfg, rec),
        Suite::SewingCheck => suite_sewing(cfg, rec),
        Suite::HolderNorms => suite_holder(cfg, rec),
    }
}

fn slope_or_nan(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    loglog_slope(xs, ys).map_or((f64::NAN, f64::NAN), |f| (f.slope, f.ci_half_width))
}

fn sorted_desc(v: &[f64]) -> Vec<f64> {
    let mut v = v.to_vec();
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

fn smallest(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::INFINITY, f64::min)
}

fn suite_constants(cfg: &ExperimentConfig, rec: &mut Recorder) -> Result<()> {
    for r in constant_report() {
        rec.push(ResultRow::check(
            &r.name,
            "",
            r.oracle,
            0.0,
            Rule::Rel,
            r.closed_form,
            r.tolerance,
        ))?;
    }
    rec.push(ResultRow::info("c0", "", c0(), 0.0))?;
    rec.push(ResultRow::info(
        "limit_coefficient",
        "",
        limit_coefficient(),
        0.0,
    ))?;
    rec.push(ResultRow::info(
        "alternative_limit_coefficient",
        "",
        alternative_limit_coefficient(),
        0.0,
    ))?;
    let mut errs = Vec::new();
    let mut worst: f64 = 0.0;
    for &t in &cfg.times {
        let e = heat_norm_relative_error(t)?;
        worst = worst.max(heat_norm_asymptotic_error(t)?);
        rec.push(ResultRow::info(
            "heat_norm_relative_error",
            &format!("t={t}"),
            e,
            0.0,
        ))?;
        errs.push(e);
    }
    rec.push(ResultRow::check(
        "heat_norm_scaled_error_max",
        "",
        worst,
        0.0,
        Rule::AtMost,
        1.0,
        f64::NAN,
    ))?;
    // exact zeros (rounding) cannot enter a log-log fit
    let (ts, es): (Vec<f64>, Vec<f64>) = cfg
        .times
        .iter()
        .zip(&errs)
        .filter(|(_, e)| **e > 0.0)
        .map(|(t, e)| (*t, *e))
        .unzip();
    if es.len() < errs.len() {
        rec.note("some relative heat-norm errors are exactly zero in double precision and were left out of the fit");
    }
    let (slope, ci) = slope_or_nan(&ts, &es);
    rec.push(ResultRow::check(
        "heat_norm_relative_error_slope",
        "",
        slope,
        ci,
        Rule::Abs,
        0.5,
        0.1,
    ))
}

/// Periodic heat kernel derivative of order `j` in {1, 2} by the image sum.
fn kernel_derivative(j: u32, t: f64, x: f64) -> f64 {
    let pref = 1.0 / (4.0 * std::f64::consts::PI * t).sqrt();
    (-12..=12)
        .map(|k| {
            let y = x - k as f64;
            let g = pref * (-y * y / (4.0 * t)).exp();
            match j {
                1 => -g * y / (2.0 * t),
                _ => g * (y * y / (4.0 * t * t) - 1.0 / (2.0 * t)),
            }
        })
        .sum()
}

fn suite_heat_check(cfg: &ExperimentConfig, rec: &mut Recorder) -> Result<()> {
    use std::f64::consts::PI;
    for &t in &cfg.times {
        if !(t > 0.0) {
            return Err(Error::Config {
                field: "times".into(),
                reason: "heat-check needs t > 0".into(),
            });
        }
        let params = format!("t={t}");
        // spectral synthesis of p_t(. - 0) against the image sum
        let k_max = ((46.0 / (4.0 * PI * PI * t)).sqrt()).ceil() as usize + 1;
        let m = 2 * k_max + 1;
        let f = SpectralField::from_coeffs(
            (1..=m)
                .map(|n| basis_value(n, 0.0) * (-laplace_eigenvalue(n) * t).exp())
                .collect(),
        )?;
        let peak = heat_kernel_value(t, 0.0)?;
        let mut worst: f64 = 0.0;
        for x in [0.0, 0.05, 0.1, 0.25, 0.5, 0.75] {
            worst = worst.max((f.synthesize(x) - heat_kernel_value(t, x)?).abs() / peak);
        }
        rec.push(ResultRow::check(
            "kernel_modes_vs_images",
            &params,
            worst,
            0.0,
            Rule::AtMost,
            1e-12,
            f64::NAN,
        ))?;
        for j in [1u32, 2] {
            let direct = heat_deriv_l2norm_sq(j, t)?;
            let g = |x: f64| kernel_derivative(j, t, x).powi(2);
            let quad = crate::constants::adaptive_simpson(&g, -0.5, 0.5, 1e-13 * direct, 50);
            rec.push(ResultRow::check(
                &format!("deriv{j}_norm_modes_vs_quadrature"),
                &params,
                quad,
                0.0,
                Rule::Rel,
                direct,
                1e-8,
            ))?;
        }
        let psi = cfg.initial.coefficients(64);
        let two = apply_heat(&apply_heat(&psi, 0.5 * t)?, 0.5 * t)?;
        let one = apply_heat(&psi, t)?;
        let d = two.max_abs_diff(&one) / psi.norm_l2().max(1e-300);
        rec.push(ResultRow::check(
            "semigroup_defect",
            &params,
            d,
            0.0,
            Rule::AtMost,
            1e-14,
            f64::NAN,
        ))?;
    }
    Ok(())
}

fn suite_blowup(cfg: &ExperimentConfig, rec: &mut Recorder) -> Result<()> {
    let eps = sorted_desc(&cfg.epsilons);
    if eps.iter().any(|e| *e <= 0.0) {
        return Err(Error::Config {
            field: "epsilons".into(),
            reason: "blow-up curve needs eps > 0".into(),
        });
    }
    for &gamma in &cfg.gammas {
        let vals: Vec<f64> = eps
            .iter()
            .map(|&e| variance_blowup(gamma, e))
            .collect::<Result<_>>()?;
        for (e, v) in eps.iter().zip(&vals) {
            rec.push(ResultRow::info(
                "variance_blowup",
                &format!("gamma={gamma};eps={e}"),
                *v,
                0.0,
            ))?;
        }
        let params = format!("gamma={gamma}");
        if gamma == 0.5 {
            let (slope, ci) = slope_or_nan(&eps, &vals);
            rec.push(ResultRow::check(
                "blowup_slope",
                &params,
                slope,
                ci,
                Rule::Abs,
                -1.0,
                0.1,
            ))?;
        } else if gamma == 0.0 {
            let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            rec.push(ResultRow::check(
                "blowup_relative_change",
                &params,
                (hi - lo) / lo,
                0.0,
                Rule::AtMost,
                0.05,
                f64::NAN,
            ))?;
        } else if gamma == 0.25 && vals.len() >= 3 {
            // logarithmic growth: equal increments per halving of eps
            let d: Vec<f64> = vals.windows(2).map(|w| w[1] - w[0]).collect();
            let mean = d.iter().sum::<f64>() / d.len() as f64;
            let spread = (d.iter().copied().fold(f64::NEG_INFINITY, f64::max)
                - d.iter().copied().fold(f64::INFINITY, f64::min))
                / mean;
            rec.push(ResultRow::check(
                "blowup_increment_spread",
                &params,
                spread,
                0.0,
                Rule::AtMost,
                0.1,
                f64::NAN,
            ))?;
        }
    }
    for &e in &eps {
        for alpha in [-1.75, 1.75] {
            let params = format!("eps={e};alpha={alpha}");
            rec.push(ResultRow::info(
                "bracket_norm_grad",
                &params,
                bracket_norm(BracketKind::GradMollified { epsilon: e }, alpha)?,
                0.0,
            ))?;
            rec.push(ResultRow::info(
                "bracket_norm_fractional",
                &params,
                bracket_norm(BracketKind::FractionalQuarter { epsilon: e }, alpha)?,
                0.0,
            ))?;
        }
    }
    Ok(())
}

fn suite_beta_stats(cfg: &ExperimentConfig, rec: &mut Recorder) -> Result<()> {
    if cfg.times.len() < 2 {
        return Err(Error::Config {
            field: "times".into(),
            reason: "need the window [times[0], times[last]]".into(),
        });
    }
    let (s, t) = (cfg.times[0], cfg.times[cfg.times.len() - 1]);
    let eps_list = sorted_desc(&cfg.epsilons);
    let eps_min = smallest(&eps_list);
    let seed = derive_seed(cfg.master_seed, "beta");
    let mut deviations = Vec::new();
    for &eps in &eps_list {
        let mut bc = BetaConfig::new(eps);
        bc.modes = cfg.modes.clone();
        bc.times = if s == 0.0 { vec![t] } else { vec![s, t] };
        bc.placement = cfg.placement;
        bc.dt = choose_dt(eps, cfg.dt_factor, &bc.times);
        let paths = map_paths(cfg.paths, |p| simulate_beta(&bc, RngStream::new(seed, p)))?;
        let mut incs = Vec::new();
        let mut ratio_sum = 0.0;
        for &n in &cfg.modes {
            let inc: Vec<f64> = paths
                .iter()
                .map(|b| b.increment(n, s, t))
                .collect::<Result<_>>()?;
            let params = format!("eps={eps};n={n}");
            let m = mean_estimate(&inc)?;
            rec.push(
                ResultRow::info("beta_increment_mean", &params, m.value, m.ci_half_width)
                    .with_target(0.0),
            )?;
            let v = variance_estimate(&inc)?;
            let (rate, ci) = (v.value / (t - s), v.ci_half_width / (t - s));
            if eps == eps_min {
                rec.push(ResultRow::check(
                    "beta_variance_rate",
                    &params,
                    rate,
                    ci,
                    Rule::Rel,
                    c0(),
                    0.10,
                ))?;
            } else {
                rec.push(
                    ResultRow::info("beta_variance_rate", &params, rate, ci).with_target(c0()),
                )?;
            }
            // the scheme's own finite-eps rate, computed without sampling
            let exact = beta_variance_exact(&bc, n, s, t)? / (t - s);
            rec.push(
                ResultRow::info("beta_variance_rate_exact", &params, exact, 0.0).with_target(c0()),
            )?;
            let tol = 4.0 * (2.0 / cfg.paths as f64).sqrt();
            rec.push(ResultRow::check(
                "beta_variance_mc_vs_exact",
                &params,
                rate,
                ci,
                Rule::Rel,
                exact,
                tol,
            ))?;
            ratio_sum += rate / c0();
            incs.push(inc);
        }
        let dev = (ratio_sum / cfg.modes.len() as f64 - 1.0).abs();
        rec.push(ResultRow::info(
            "beta_relative_deviation",
            &format!("eps={eps}"),
            dev,
            0.0,
        ))?;
        deviations.push(dev);
        if eps == eps_min {
            let bound = 4.0 / (cfg.paths as f64).sqrt();
            for i in 0..cfg.modes.len() {
                for j in i + 1..cfg.modes.len() {
                    let r = sample_corr(&incs[i], &incs[j])?;
                    let params = format!("eps={eps};n={};m={}", cfg.modes[i], cfg.modes[j]);
                    rec.push(ResultRow::check(
                        "beta_correlation",
                        &params,
                        r,
                        0.0,
                        Rule::Abs,
                        0.0,
                        bound,
                    ))?;
                }
            }
        }
    }
    if eps_list.len() >= 3 {
        let (slope, ci) = slope_or_nan(&eps_list, &deviations);
        rec.push(ResultRow::check(
            "beta_deviation_slope",
            "",
            slope,
            ci,
            Rule::Abs,
            0.55,
            0.25,
        ))?;
    }
    Ok(())
}

/// Simulation settings for `eps` (limit equation when `eps = 0`) saving at `save_times`.
fn sim_config(cfg: &ExperimentConfig, eps: f64, save_times: Vec<f64>) -> SimConfig {
    let t_end = *save_times.last().expect("nonempty save times");
    let (mode_cutoff, dt) = if eps == 0.0 {
        (cfg.limit_cutoff, cfg.limit_dt)
    } else {
        (
            default_cutoff(eps),
            choose_dt(eps, cfg.dt_factor, &save_times),
        )
    };
    SimConfig {
        epsilon: eps,
        mode_cutoff,
        dt,
        t_end,
        nonlinearity: cfg.nonlinearity,
        initial: cfg.initial,
        coefficient: cfg.coefficient,
        placement: cfg.placement,
        save_times,
        channels: Channels::default(),
    }
}

fn suite_simulate(cfg: &ExperimentConfig, rec: &mut Recorder) -> Result<()> {
    let eps = cfg.epsilons[0];
    if cfg.times.is_empty() {
        return Err(Error::Config {
            field: "times".into(),
            reason: "need at least one save time".into(),
        });
    }
    let sim = sim_config(cfg, eps, cfg.times.clone());
    sim.validate()?;
    let seed = derive_seed(cfg.master_seed, "simulate");
    let trajs = map_paths(cfg.paths, |p| {
        solve_path(&sim, RngStream::new(seed, p)).map(|tr| tr.u)
    })?;
    for (i, &t) in cfg.times.iter().enumerate() {
        let params = format!("eps={eps};t={t}");
        let point: Vec<f64> = trajs.iter().map(|u| u[i].synthesize(cfg.x0)).collect();
        let m = mean_estimate(&point)?;
        rec.push(ResultRow::info(
            "u_at_x0_mean",
            &params,
            m.value,
            m.ci_half_width,
        ))?;
        let v = variance_estimate(&point)?;
        rec.push(ResultRow::info(
            "u_at_x0_variance",
            &params,
            v.value,
            v.ci_half_width,
        ))?;
        let mode: Vec<f64> = trajs
            .iter()
            .map(|u| u[i].coeff(2.min(sim.mode_cutoff)))
            .collect();
        let v = variance_estimate(&mode)?;
        rec.push(ResultRow::info(
            "u_mode2_variance",
            &params,
            v.value,
            v.ci_half_width,
        ))?;
    }
    let deterministic = matches!(cfg.nonlinearity, Nonlinearity::Zero)
        || cfg.coefficient == Some(0.0)
        || (sim.is_limit() && cfg.nonlinearity.is_constant().is_some());
    if deterministic {
        let psi = cfg.initial.coefficients(sim.mode_cutoff);
        let mut worst: f64 = 0.0;
        for u in &trajs {
            for (snap, &t) in u.iter().zip(&cfg.times) {
                worst = worst.max(snap.max_abs_diff(&apply_heat(&psi, t)?));
            }
        }
        let row = ResultRow::check(
            "deterministic_check",
            &format!("eps={eps}"),
            worst,
            0.0,
            Rule::AtMost,
            1e-12,
            f64::NAN,
        );
        rec.note(format!(
            "deterministic check: {}",
            if row.pass == Some(true) {
                "pass"
            } else {
                "fail"
            }
        ));
        rec.push(row)?;
    }
    let mut body = String::from("path,t,n,coefficient\n");
    for (p, u) in trajs.iter().enumerate().take(4) {
        for (snap, &t) in u.iter().zip(&cfg.times) {
            for (i, c) in snap.coeffs().iter().enumerate() {
                body.push_str(&format!("{p},{t},{},{}\n", i + 1, fmt_f(*c)));
            }
        }
    }
    rec.artifact("trajectories.csv", body);
    Ok(())
}

fn point_samples(cfg: &ExperimentConfig, sim: &SimConfig, tag: &str) -> Result<Vec<f64>> {
    sim.validate()?;
    let seed = derive_seed(cfg.master_seed, tag);
    map_paths(cfg.paths, |p| {
        solve_path(sim, RngStream::new(seed, p)).map(|tr| tr.u[0].synthesize(cfg.x0))
    })
}

fn suite_converge(cfg: &ExperimentConfig, rec: &mut Recorder) -> Result<()> {
    let eps_list = sorted_desc(&cfg.epsilons);
    if eps_list.iter().any(|e| *e <= 0.0) {
        return Err(Error::Config {
            field: "epsilons".into(),
            reason: "mollified runs need eps > 0".into(),
        });
    }
    let t = cfg.t_end;
    let mut lim = sim_config(cfg, 0.0, vec![t]);
    lim.coefficient = Some(cfg.coefficient.unwrap_or_else(limit_coefficient));
    let limit = point_samples(cfg, &lim, "converge/limit")?;
    lim.coefficient = Some(alternative_limit_coefficient());
    let alternative = point_samples(cfg, &lim, "converge/alternative")?;
    let lv = variance_estimate(&limit)?;
    let lm = mean_estimate(&limit)?;
    rec.push(ResultRow::info(
        "limit_mean",
        "",
        lm.value,
        lm.ci_half_width,
    ))?;
    rec.push(ResultRow::info(
        "limit_variance",
        "",
        lv.value,
        lv.ci_half_width,
    ))?;
    let av = variance_estimate(&alternative)?;
    rec.push(ResultRow::info(
        "alternative_limit_variance",
        "",
        av.value,
        av.ci_half_width,
    ))?;

    let n = cfg.paths as f64;
    // 95% critical value of the two-sample statistic
    let ks_band = 1.358 * (2.0 / n).sqrt();
    let mut ks = Vec::new();
    let mut last = None;
    for &eps in &eps_list {
        let mut sim = sim_config(cfg, eps, vec![t]);
        sim.coefficient = None;
        let samples = point_samples(cfg, &sim, "converge/mollified")?;
        let params = format!("eps={eps}");
        let r = ks_two_sample(&samples, &limit)?;
        rec.push(ResultRow::info(
            "ks_statistic",
            &params,
            r.statistic,
            ks_band,
        ))?;
        rec.push(ResultRow::info("ks_p_value", &params, r.p_value, 0.0))?;
        let m = mean_estimate(&samples)?;
        let v = variance_estimate(&samples)?;
        rec.push(
            ResultRow::info("mollified_mean", &params, m.value, m.ci_half_width)
                .with_target(lm.value),
        )?;
        rec.push(
            ResultRow::info("mollified_variance", &params, v.value, v.ci_half_width)
                .with_target(lv.value),
        )?;
        // leading Gaussian part g(u_0) X of the mollified solution, which the limit does not carry
        let steps = sim.step_of(t)?;
        let vx = convolution_mode_variances(eps, sim.mode_cutoff, sim.dt, sim.placement, steps)?;
        let point: f64 = vx
            .iter()
            .enumerate()
            .map(|(j, v)| v * basis_value(j + 1, cfg.x0).powi(2))
            .sum();
        let g0 = cfg.nonlinearity.g(cfg.initial.eval(cfg.x0));
        rec.push(ResultRow::info(
            "direct_noise_variance",
            &params,
            g0 * g0 * point,
            0.0,
        ))?;
        ks.push(r.statistic);
        last = Some((eps, m, v));
    }
    let rise = ks
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::NEG_INFINITY, f64::max);
    if ks.len() >= 2 {
        rec.push(ResultRow::check(
            "ks_max_increase",
            "",
            rise,
            0.0,
            Rule::AtMost,
            ks_band,
            f64::NAN,
        ))?;
    }
    if let Some((eps, m, v)) = last {
        let params = format!("eps={eps}");
        rec.push(ResultRow::check(
            "mean_vs_limit",
            &params,
            m.value,
            m.ci_half_width,
            Rule::Rel,
            lm.value,
            0.15,
        ))?;
        rec.push(ResultRow::check(
            "variance_vs_limit",
            &params,
            v.value,
            v.ci_half_width,
            Rule::Rel,
            lv.value,
            0.15,
        ))?;
        let gap = (av.value / v.value - 1.0).abs();
        rec.push(ResultRow::check(
            "alternative_variance_gap",
            &params,
            gap,
            0.0,
            Rule::AtLeast,
            0.5,
            f64::NAN,
        ))?;
    }
    Ok(())
}

fn test_function(m: usize) -> SpectralField {
    let mut phi = SpectralField::unit(m, 1);
    phi.axpy(0.5, &SpectralField::unit(m, 3));
    phi
}

fn suite_decompose(cfg: &ExperimentConfig, rec: &mut Recorder) -> Result<()> {
    let eps_list = sorted_desc(&cfg.epsilons);
    if eps_list.iter().any(|e| *e <= 0.0) {
        return Err(Error::Config {
            field: "epsilons".into(),
            reason: "decomposition needs eps > 0".into(),
        });
    }
    let s = cfg.s;
    let ts: Vec<f64> = cfg.lags.iter().map(|l| s + l).collect();
    let seed = derive_seed(cfg.master_seed, "decompose");
    // norms[e][lag][term]
    let mut norms = Vec::new();
    let mut worst: f64 = 0.0;
    for &eps in &eps_list {
        let mut anchors = vec![s];
        anchors.extend(&ts);
        let mut sim = sim_config(cfg, eps, vec![*ts.last().expect("lags nonempty")]);
        sim.dt = choose_dt(eps, cfg.dt_factor, &anchors);
        sim.channels.dense_from = Some(s);
        sim.validate()?;
        let phi = test_function(sim.mode_cutoff);
        let parts = map_paths(cfg.paths, |p| {
            let tr = solve_path(&sim, RngStream::new(seed, p))?;
            decompose_increment(&tr, &phi, s, &ts)
        })?;
        for d in parts.iter().flatten() {
            let scale = d
                .terms
                .iter()
                .map(|v| v.abs())
                .fold(d.k_total.abs().max(d.martingale.abs()), f64::max);
            if scale > 0.0 {
                worst = worst.max((d.sum() - d.martingale).abs() / scale);
            }
        }
        let mut per_lag = Vec::new();
        for (li, lag) in cfg.lags.iter().enumerate() {
            let mut per_term = Vec::new();
            for k in 0..6 {
                let v: Vec<f64> = parts.iter().map(|p| p[li].terms[k]).collect();
                let e = lp_moment(&v, 2.0)?;
                rec.push(ResultRow::info(
                    &format!("term{}_l2", k + 1),
                    &format!("eps={eps};lag={lag}"),
                    e.value,
                    e.ci_half_width,
                ))?;
                per_term.push(e.value);
            }
            let v: Vec<f64> = parts.iter().map(|p| p[li].martingale).collect();
            let e = lp_moment(&v, 2.0)?;
            rec.push(ResultRow::info(
                "martingale_l2",
                &format!("eps={eps};lag={lag}"),
                e.value,
                e.ci_half_width,
            ))?;
            per_lag.push(per_term);
        }
        norms.push(per_lag);
    }
    rec.push(ResultRow::check(
        "identity_relative_error_max",
        "",
        worst,
        0.0,
        Rule::AtMost,
        1e-10,
        f64::NAN,
    ))?;
    let last_lag = cfg.lags.len() - 1;
    if eps_list.len() >= 3 {
        for k in [1usize, 2] {
            let ys: Vec<f64> = norms.iter().map(|n| n[last_lag][k]).collect();
            let (slope, ci) = slope_or_nan(&eps_list, &ys);
            let params = format!("lag={}", cfg.lags[last_lag]);
            rec.push(ResultRow::check(
                &format!("term{}_eps_slope", k + 1),
                &params,
                slope,
                ci,
                Rule::Abs,
                0.25,
                0.1,
            ))?;
        }
    }
    if cfg.lags.len() >= 3 {
        let fine = norms.last().expect("epsilons nonempty");
        for k in [3usize, 4, 5] {
            let ys: Vec<f64> = fine.iter().map(|n| n[k]).collect();
            let (slope, ci) = slope_or_nan(&cfg.lags, &ys);
            let params = format!("eps={}", smallest(&eps_list));
            rec.push(ResultRow::check(
                &format!("term{}_lag_slope", k + 1),
                &params,
                slope,
                ci,
                Rule::Abs,
                0.625,
                0.15,
            ))?;
        }
    }
    Ok(())
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn suite_sewing(cfg: &ExperimentConfig, rec: &mut Recorder) -> Result<()> {
    // Ito germ against the closed form
    let ito_seed = derive_seed(cfg.master_seed, "sewing/ito");
    let levels: Vec<u32> = (4..=cfg.level).step_by(2).collect();
    let errs_by_path = map_paths(cfg.ito_paths, |p| {
        let germ = ItoGerm {
            w: brownian_path(&RngStream::new(ito_seed, p), MAX_LEVEL),
        };
        let w1 = *germ.w.values.last().expect("nonempty path");
        let exact = 0.5 * (w1 * w1 - 1.0);
        levels
            .iter()
            .map(|&l| sew(&germ, l).map(|a| a.last() - exact))
            .collect::<Result<Vec<f64>>>()
    })?;
    let mut rms = Vec::new();
    for (i, l) in levels.iter().enumerate() {
        let e: Vec<f64> = errs_by_path.iter().map(|v| v[i]).collect();
        let r = lp_moment(&e, 2.0)?;
        rec.push(ResultRow::info(
            "ito_l2_error",
            &format!("level={l}"),
            r.value,
            r.ci_half_width,
        ))?;
        rms.push(r.value);
    }
    let mesh: Vec<f64> = levels.iter().map(|&l| 2f64.powi(-(l as i32))).collect();
    let (slope, ci) = slope_or_nan(&mesh, &rms);
    let per_two = 4f64.powf(-slope);
    rec.push(ResultRow::check(
        "ito_error_ratio_per_two_levels",
        "",
        per_two,
        ci * per_two * 4f64.ln(),
        Rule::Abs,
        0.5,
        0.08,
    ))?;

    // frozen germ on simulated paths
    let eps = cfg.epsilons[0];
    if eps <= 0.0 {
        return Err(Error::Config {
            field: "epsilons".into(),
            reason: "sewing-check needs eps > 0".into(),
        });
    }
    let n = 1usize << MAX_LEVEL;
    let grid: Vec<f64> = (0..=n).map(|i| i as f64 / n as f64).collect();
    let mut sim = sim_config(cfg, eps, grid);
    sim.dt = 1.0 / n as f64;
    sim.channels.beta_modes = cfg.modes.clone();
    sim.validate()?;
    let phi = test_function(sim.mode_cutoff);
    let seed = derive_seed(cfg.master_seed, "sewing/frozen");
    let germs = map_paths(cfg.paths, |p| {
        let tr = solve_path(&sim, RngStream::new(seed, p))?;
        FrozenGerm::new(&tr, &phi, 1.0)
    })?;
    let refs: Vec<&dyn Germ> = germs.iter().map(|g| g as &dyn Germ).collect();
    let gaps = level_gaps(&refs, 6..=cfg.level)?;
    for (l, g) in &gaps {
        rec.push(ResultRow::info(
            "frozen_level_gap",
            &format!("level={l}"),
            *g,
            0.0,
        ))?;
    }
    let xs: Vec<f64> = gaps.iter().map(|(l, _)| 2f64.powi(-(*l as i32))).collect();
    let ys: Vec<f64> = gaps.iter().map(|(_, g)| *g).collect();
    let (gs, _) = slope_or_nan(&xs, &ys);
    let r_theory = 2f64.powf(-0.125);
    rec.push(
        ResultRow::info("frozen_level_gap_ratio", "", 2f64.powf(-gs), 0.0).with_target(r_theory),
    )?;
    let below = gaps
        .iter()
        .find(|(l, _)| *l + 1 == cfg.level)
        .map_or(f64::NAN, |(_, g)| *g);
    let bound = level_gap_tail_bound(below, r_theory);
    let direct: Vec<Vec<f64>> = germs.iter().map(|g| g.direct_sum()).collect();
    let mut diffs: Vec<f64> = germs
        .iter()
        .zip(&direct)
        .map(|(g, d)| sew(g, cfg.level).map(|a| (a.last() - d[n]).abs()))
        .collect::<Result<_>>()?;
    let med = median(&mut diffs);
    let params = format!("eps={eps};level={}", cfg.level);
    rec.push(ResultRow::check(
        "frozen_sewn_vs_direct_median",
        &params,
        med,
        0.0,
        Rule::AtMost,
        bound,
        f64::NAN,
    ))?;

    let tol = CharacterizationTolerance::default();
    let control: Vec<DyadicSeries> = direct
        .iter()
        .map(|d| DyadicSeries::new(MAX_LEVEL, d.clone()))
        .collect::<Result<_>>()?;
    let report = characterization_check(&control, &refs, tol)?;
    rec.push(ResultRow::info(
        "characterization_control_mean_z",
        "",
        report.max_mean_z,
        0.0,
    ))?;
    rec.push(ResultRow::check(
        "characterization_control_pass",
        "",
        f64::from(u8::from(report.pass)),
        0.0,
        Rule::Abs,
        1.0,
        0.0,
    ))?;
    let drifted: Vec<DyadicSeries> = direct
        .iter()
        .map(|d| {
            DyadicSeries::new(
                MAX_LEVEL,
                d.iter().zip(&sim.save_times).map(|(v, t)| v + t).collect(),
            )
        })
        .collect::<Result<_>>()?;
    let report = characterization_check(&drifted, &refs, tol)?;
    rec.push(ResultRow::info(
        "characterization_drift_mean_z",
        "",
        report.max_mean_z,
        0.0,
    ))?;
    rec.push(ResultRow::check(
        "characterization_drift_pass",
        "",
        f64::from(u8::from(report.pass)),
        0.0,
        Rule::Abs,
        0.0,
        0.0,
    ))
}

fn suite_holder(cfg: &ExperimentConfig, rec: &mut Recorder) -> Result<()> {
    let eps_list = sorted_desc(&cfg.epsilons);
    let inc_times: Vec<f64> = cfg.lags.iter().map(|l| cfg.s + l).collect();
    let mut all: Vec<f64> = cfg
        .times
        .iter()
        .chain(&inc_times)
        .copied()
        .chain([cfg.s])
        .collect();
    all.sort_by(f64::total_cmp);
    all.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    let idx = |t: f64| {
        all.iter()
            .position(|a| (a - t).abs() < 1e-12)
            .expect("time recorded")
    };
    let seed = derive_seed(cfg.master_seed, "holder");
    let mut norms = Vec::new();
    let mut slopes = Vec::new();
    for &eps in &eps_list {
        let sim = sim_config(cfg, eps, all.clone());
        sim.validate()?;
        if cfg.holder_grid < 2 * sim.mode_cutoff + 2 {
            return Err(Error::Config {
                field: "holder_grid".into(),
                reason: format!(
                    "must be at least {} for eps = {eps}",
                    2 * sim.mode_cutoff + 2
                ),
            });
        }
        let fields = map_paths(cfg.paths, |p| {
            let tr = solve_path(&sim, RngStream::new(seed, p))?;
            tr.u.iter()
                .map(|u| synthesize_grid(u, cfg.holder_grid).map(|g| g.into_values()))
                .collect::<Result<Vec<_>>>()
        })?;
        let mut best: f64 = 0.0;
        let mut best_ci = 0.0;
        for &t in &cfg.times {
            let i = idx(t);
            let ens: Vec<Vec<f64>> = fields.iter().map(|f| f[i].clone()).collect();
            let h = holder_seminorm(&ens, cfg.alpha, cfg.p, cfg.pair_budget)?;
            rec.push(ResultRow::info(
                "holder_norm",
                &format!("eps={eps};t={t}"),
                h.norm(),
                h.ci_half_width,
            ))?;
            if h.norm() > best {
                best = h.norm();
                best_ci = h.ci_half_width;
            }
        }
        rec.push(ResultRow::info(
            "holder_norm_sup_t",
            &format!("eps={eps}"),
            best,
            best_ci,
        ))?;
        norms.push(best);
        let si = idx(cfg.s);
        let mut incs = Vec::new();
        for (lag, &t) in cfg.lags.iter().zip(&inc_times) {
            let ti = idx(t);
            let diffs: Vec<Vec<f64>> = fields
                .iter()
                .map(|f| f[ti].iter().zip(&f[si]).map(|(a, b)| a - b).collect())
                .collect();
            let v = sup_lp_norm(&diffs, cfg.p)?;
            rec.push(ResultRow::info(
                "increment_norm",
                &format!("eps={eps};lag={lag}"),
                v,
                0.0,
            ))?;
            incs.push(v);
        }
        let (slope, ci) = slope_or_nan(&cfg.lags, &incs);
        slopes.push((eps, slope, ci));
    }
    let hi = norms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = norms.iter().copied().fold(f64::INFINITY, f64::min);
    rec.push(ResultRow::check(
        "holder_norm_ratio_across_eps",
        "",
        hi / lo,
        0.0,
        Rule::AtMost,
        2.0,
        f64::NAN,
    ))?;
    let n_slopes = slopes.len();
    for (k, (eps, slope, ci)) in slopes.into_iter().enumerate() {
        let params = format!("eps={eps}");
        if k + 1 == n_slopes {
            rec.push(ResultRow::check(
                "increment_norm_slope",
                &params,
                slope,
                ci,
                Rule::AtLeast,
                0.10,
                f64::NAN,
            ))?;
        } else {
            rec.push(
                ResultRow::info("increment_norm_slope", &params, slope, ci).with_target(0.125),
            )?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_names_round_trip() {
        for s in Suite::ALL {
            assert_eq!(s.name().parse::<Suite>().unwrap(), s);
        }
        assert!("nope".parse::<Suite>().is_err());
    }

    #[test]
    fn rules_judge() {
        assert_eq!(Rule::Rel.judge(1.05, 1.0, 0.1), Some(true));
        assert_eq!(Rule::Rel.judge(1.2, 1.0, 0.1), Some(false));
        assert_eq!(Rule::Abs.judge(-0.05, 0.0, 0.0625), Some(true));
        assert_eq!(Rule::AtMost.judge(f64::NAN, 1.0, f64::NAN), Some(false));
        assert_eq!(Rule::AtLeast.judge(0.2, 0.1, f64::NAN), Some(true));
        assert_eq!(Rule::Info.judge(0.2, 0.1, 0.0), None);
    }

    #[test]
    fn csv_line_layout() {
        let mut r = ResultRow::check("q", "eps=0.1", 1.5, 0.25, Rule::Abs, 1.0, 0.5);
        r.suite = "constants".into();
        let line = r.to_csv_line();
        assert_eq!(line.split(',').count(), CSV_HEADER.split(',').count());
        assert!(line.starts_with("constants,eps=0.1,q,1.5000000000000000e0,"));
        assert!(line.ends_with(",abs,true"));
        let v: f64 = line.split(',').nth(3).unwrap().parse().unwrap();
        assert_eq!(v, 1.5);
    }

    #[test]
    fn fmt_round_trips() {
        for x in [std::f64::consts::PI, 1e-300, -2.5e17, 0.1 + 0.2] {
            assert_eq!(fmt_f(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn config_overrides_and_errors() {
        let cfg = ExperimentConfig::resolve(
            Suite::BetaStats,
            None,
            &[("paths".into(), Value::from(128))],
        )
        .unwrap();
        assert_eq!(cfg.paths, 128);
        assert_eq!(cfg.epsilons, vec![0.2, 0.1, 0.05]);
        let err =
            ExperimentConfig::resolve(Suite::BetaStats, None, &[("pathz".into(), Value::from(1))])
                .unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "pathz"));
        let err = ExperimentConfig::resolve(
            Suite::BetaStats,
            None,
            &[("paths".into(), Value::from("x"))],
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "paths"));
        let err =
            ExperimentConfig::resolve(Suite::BetaStats, None, &[("paths".into(), Value::from(1))])
                .unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "paths"));
    }

    #[test]
    fn config_reads_manifest_config() {
        let cfg = ExperimentConfig {
            paths: 77,
            ..ExperimentConfig::defaults(Suite::Simulate)
        };
        let manifest = serde_json::json!({ "results_sha256": "x", "config": cfg });
        let back = ExperimentConfig::resolve(Suite::Simulate, Some(manifest), &[]).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn dt_selection() {
        assert_eq!(choose_dt(0.1, 0.1, &[0.1, 1.0]), 0.1 * 0.1 * 0.1);
        let dt = choose_dt(0.4, 0.1, &[0.5]);
        assert!((dt - 1e-3).abs() < 1e-18);
        assert!(grid_index(0.5, dt).is_some());
        let dt = choose_dt(0.025, 0.1, &[0.25, 0.26]);
        assert!(dt <= 0.1 * 0.025 * 0.025 + 1e-18 && grid_index(0.26, dt).is_some());
    }

    #[test]
    fn seeds_are_distinct_and_stable() {
        assert_eq!(derive_seed(1, "a"), derive_seed(1, "a"));
        assert_ne!(derive_seed(1, "a"), derive_seed(1, "b"));
        assert_ne!(derive_seed(1, "a"), derive_seed(2, "a"));
    }

    #[test]
    fn constants_suite_passes_except_heat_slope() {
        let cfg = ExperimentConfig::defaults(Suite::Constants);
        let out = run(Suite::Constants, &cfg, None).unwrap();
        for r in &out.rows {
            if r.quantity != "heat_norm_relative_error_slope" {
                assert_ne!(r.pass, Some(false), "{r:?}");
            }
        }
    }

    #[test]
    fn simulate_zero_nonlinearity_is_deterministic() {
        let cfg = ExperimentConfig {
            nonlinearity: Nonlinearity::Zero,
            paths: 2,
            times: vec![0.05, 0.1],
            ..ExperimentConfig::defaults(Suite::Simulate)
        };
        let out = run(Suite::Simulate, &cfg, None).unwrap();
        let row = out
            .rows
            .iter()
            .find(|r| r.quantity == "deterministic_check")
            .unwrap();
        assert_eq!(row.pass, Some(true));
        assert!(out.summary.contains("deterministic check: pass"));
    }

    #[test]
    fn run_writes_artifacts_and_is_reproducible() {
        let dir = std::env::temp_dir().join(format!("she-renorm-exp-{}", std::process::id()));
        let cfg = ExperimentConfig {
            paths: 3,
            times: vec![0.05],
            ..ExperimentConfig::defaults(Suite::Simulate)
        };
        let a = run(Suite::Simulate, &cfg, Some(&dir)).unwrap();
        let written = fs::read_to_string(dir.join("results.csv")).unwrap();
        assert_eq!(written, a.csv);
        assert!(dir.join("manifest.json").exists() && dir.join("trajectories.csv").exists());
        let b = run(Suite::Simulate, &cfg, None).unwrap();
        assert_eq!(a.csv, b.csv);
        assert_eq!(a.manifest.results_sha256, b.manifest.results_sha256);
        fs::remove_dir_all(&dir).ok();
    }
}
