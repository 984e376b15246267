//! Acceptance criteria, one test per criterion.
//!
//! Each test runs a suite with its default configuration, then re-checks the estimates
//! against the tolerances pinned below rather than trusting the suite's own verdicts.
//! Run with `cargo test -p she-renorm --test acceptance -- --nocapture`.

use std::f64::consts::PI;
use std::fs;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use she_renorm::experiment::{run, ExperimentConfig, ResultRow, RunOutcome, Suite};

struct Timed {
    out: RunOutcome,
    elapsed: Duration,
}

fn run_default(suite: Suite) -> Timed {
    let cfg = ExperimentConfig::defaults(suite);
    let start = Instant::now();
    let out = run(suite, &cfg, None).unwrap_or_else(|e| panic!("{suite} failed to run: {e}"));
    Timed {
        out,
        elapsed: start.elapsed(),
    }
}

fn beta_run() -> &'static Timed {
    static CELL: OnceLock<Timed> = OnceLock::new();
    CELL.get_or_init(|| run_default(Suite::BetaStats))
}

fn row<'a>(rows: &'a [ResultRow], quantity: &str, parameters: &str) -> &'a ResultRow {
    rows.iter()
        .find(|r| r.quantity == quantity && r.parameters == parameters)
        .unwrap_or_else(|| panic!("missing row {quantity} [{parameters}]"))
}

fn value(rows: &[ResultRow], quantity: &str, parameters: &str) -> f64 {
    row(rows, quantity, parameters).estimate
}

/// Collects the sub-checks of one criterion and prints a single verdict line.
struct Criterion {
    id: u32,
    title: &'static str,
    parts: Vec<(bool, String)>,
}

impl Criterion {
    fn new(id: u32, title: &'static str) -> Self {
        Self {
            id,
            title,
            parts: Vec::new(),
        }
    }

    fn check(&mut self, ok: bool, detail: String) {
        self.parts.push((ok, detail));
    }

    fn runtime(&mut self, elapsed: Duration, budget_s: f64) {
        let s = elapsed.as_secs_f64();
        self.check(
            s <= budget_s,
            format!("runtime {s:.1}s (budget {budget_s}s)"),
        );
    }

    fn finish(self) {
        let ok = self.parts.iter().all(|p| p.0);
        let detail: Vec<String> = self
            .parts
            .iter()
            .map(|(p, d)| format!("{}{d}", if *p { "" } else { "[x] " }))
            .collect();
        println!(
            "{} criterion {} ({}): {}",
            if ok { "PASS" } else { "FAIL" },
            self.id,
            self.title,
            detail.join("; ")
        );
        assert!(ok, "criterion {} failed", self.id);
    }
}

fn c0_reference() -> f64 {
    1.0 / (64.0 * PI.sqrt())
}

#[test]
fn criterion_1_renormalization_constant() {
    let t = beta_run();
    let rows = &t.out.rows;
    let mut c = Criterion::new(1, "renormalization constant");
    let c0 = c0_reference();
    for n in 2..=5 {
        let rate = value(rows, "beta_variance_rate", &format!("eps=0.05;n={n}"));
        let rel = (rate / c0 - 1.0).abs();
        c.check(
            rel <= 0.10,
            format!(
                "n={n} rate {rate:.4e} off c0 by {:.1}% (tol 10%)",
                100.0 * rel
            ),
        );
    }
    let slope = value(rows, "beta_deviation_slope", "");
    c.check(
        (0.3..=0.8).contains(&slope),
        format!("deviation slope {slope:.3} (want [0.3, 0.8])"),
    );
    c.runtime(t.elapsed, 600.0);
    c.finish();
}

#[test]
fn criterion_2_independence() {
    let t = beta_run();
    let mut c = Criterion::new(2, "independence of beta modes");
    let bound = 4.0 / 4096f64.sqrt();
    let worst = t
        .out
        .rows
        .iter()
        .filter(|r| r.quantity == "beta_correlation" && r.parameters.starts_with("eps=0.05;"))
        .map(|r| r.estimate.abs())
        .fold(0.0, f64::max);
    let count = t
        .out
        .rows
        .iter()
        .filter(|r| r.quantity == "beta_correlation")
        .count();
    c.check(count == 6, format!("{count} mode pairs probed"));
    c.check(
        worst < bound,
        format!("max |corr| {worst:.4} (bound {bound:.4})"),
    );
    c.finish();
}

#[test]
fn criterion_3_constants_table() {
    let t = run_default(Suite::Constants);
    let rows = &t.out.rows;
    let mut c = Criterion::new(3, "constants table");
    let r = row(rows, "c0 vs limit_coefficient^2", "");
    let rel = (r.estimate / r.target - 1.0).abs();
    c.check(rel <= 1e-15, format!("c0 vs coefficient^2 rel {rel:.1e}"));
    c.check(
        (r.estimate / c0_reference() - 1.0).abs() <= 1e-15,
        "c0 equals (64 sqrt pi)^-1".into(),
    );
    let r = row(rows, "gaussian_x4 vs quadrature", "");
    let rel = (r.estimate / r.target - 1.0).abs();
    c.check(
        rel <= 1e-12,
        format!("x^4 gaussian integral vs quadrature rel {rel:.1e}"),
    );
    let r = row(rows, "heat norm leading term at t=1e-4", "");
    let rel = (r.estimate / r.target - 1.0).abs();
    c.check(
        rel < 0.02,
        format!("heat norm asymptotic rel error {rel:.2e} at t=1e-4"),
    );
    let slope = value(rows, "heat_norm_relative_error_slope", "");
    c.check(
        (slope - 0.5).abs() <= 0.1,
        format!("heat norm error slope {slope:.3} (want 0.5 +- 0.1)"),
    );
    c.runtime(t.elapsed, 1.0);
    c.finish();
}

#[test]
fn criterion_4_blowup_curve() {
    let t = run_default(Suite::BlowupCurve);
    let rows = &t.out.rows;
    let mut c = Criterion::new(4, "variance blow-up curve");
    let curve = |gamma: &str| -> Vec<(f64, f64)> {
        rows.iter()
            .filter(|r| {
                r.quantity == "variance_blowup"
                    && r.parameters.starts_with(&format!("gamma={gamma};"))
            })
            .map(|r| {
                (
                    r.parameters.rsplit('=').next().unwrap().parse().unwrap(),
                    r.estimate,
                )
            })
            .collect()
    };
    // least squares on logs, written out here as an independent check of the suite's fit
    let half = curve("0.5");
    let (xs, ys): (Vec<f64>, Vec<f64>) = half.iter().map(|(e, v)| (e.ln(), v.ln())).unzip();
    let (mx, my) = (
        xs.iter().sum::<f64>() / xs.len() as f64,
        ys.iter().sum::<f64>() / ys.len() as f64,
    );
    let slope = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (x - mx) * (y - my))
        .sum::<f64>()
        / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    c.check(
        (slope + 1.0).abs() <= 0.1,
        format!("gamma=1/2 slope {slope:.3} (want -1 +- 0.1)"),
    );
    let zero: Vec<f64> = curve("0").into_iter().map(|p| p.1).collect();
    let lo = zero.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = zero.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    c.check(
        (hi - lo) / lo < 0.05,
        format!("gamma=0 change {:.3} (want < 0.05)", (hi - lo) / lo),
    );
    let quarter: Vec<f64> = curve("0.25").into_iter().map(|p| p.1).collect();
    let d: Vec<f64> = quarter.windows(2).map(|w| w[1] - w[0]).collect();
    let mean = d.iter().sum::<f64>() / d.len() as f64;
    let spread = (d.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        - d.iter().copied().fold(f64::INFINITY, f64::min))
        / mean.abs();
    c.check(
        spread <= 0.10,
        format!("gamma=1/4 increment spread {spread:.3} of their mean (want <= 0.10)"),
    );
    c.runtime(t.elapsed, 1.0);
    c.finish();
}

#[test]
fn criterion_5_decomposition() {
    let t = run_default(Suite::Decompose);
    let rows = &t.out.rows;
    let mut c = Criterion::new(5, "six-term decomposition");
    let worst = value(rows, "identity_relative_error_max", "");
    c.check(
        worst <= 1e-10,
        format!("identity error {worst:.1e} (tol 1e-10)"),
    );
    for k in [2, 3] {
        let s = value(rows, &format!("term{k}_eps_slope"), "lag=0.1");
        c.check(
            (s - 0.25).abs() <= 0.1,
            format!("term{k} eps slope {s:.3} (want 0.25 +- 0.1)"),
        );
    }
    for k in [4, 5, 6] {
        let s = value(rows, &format!("term{k}_lag_slope"), "eps=0.025");
        c.check(
            (s - 0.625).abs() <= 0.15,
            format!("term{k} lag slope {s:.3} (want 0.625 +- 0.15)"),
        );
    }
    c.runtime(t.elapsed, 900.0);
    c.finish();
}

#[test]
fn criterion_6_convergence_in_law() {
    let t = run_default(Suite::Converge);
    let rows = &t.out.rows;
    let mut c = Criterion::new(6, "convergence in law and coefficient discrimination");
    let band = 1.358 * (2.0 / 4096f64).sqrt();
    let ks: Vec<f64> = ["0.4", "0.2", "0.1", "0.05"]
        .iter()
        .map(|e| value(rows, "ks_statistic", &format!("eps={e}")))
        .collect();
    let rise = ks
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::NEG_INFINITY, f64::max);
    c.check(
        rise <= band,
        format!("KS {ks:.3?} largest rise {rise:.3} (band {band:.3})"),
    );
    let (lm, lv) = (
        value(rows, "limit_mean", ""),
        value(rows, "limit_variance", ""),
    );
    let (m, v) = (
        value(rows, "mollified_mean", "eps=0.05"),
        value(rows, "mollified_variance", "eps=0.05"),
    );
    let av = value(rows, "alternative_limit_variance", "");
    c.check(
        (m / lm - 1.0).abs() <= 0.15,
        format!("mean {m:.4} vs limit {lm:.4}"),
    );
    c.check(
        (v / lv - 1.0).abs() <= 0.15,
        format!("variance {v:.3e} vs limit {lv:.3e}"),
    );
    c.check(
        (av / v - 1.0).abs() > 0.5,
        format!(
            "alternative variance {av:.3e} differs by {:.2}",
            (av / v - 1.0).abs()
        ),
    );
    c.runtime(t.elapsed, 1800.0);
    c.finish();
}

#[test]
fn criterion_7_uniform_holder_bounds() {
    let t = run_default(Suite::HolderNorms);
    let rows = &t.out.rows;
    let mut c = Criterion::new(7, "uniform Holder bounds");
    let norms: Vec<f64> = ["0.2", "0.1", "0.05"]
        .iter()
        .map(|e| value(rows, "holder_norm_sup_t", &format!("eps={e}")))
        .collect();
    let ratio = norms.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        / norms.iter().copied().fold(f64::INFINITY, f64::min);
    c.check(
        ratio < 2.0,
        format!("norms {norms:.4?} vary by factor {ratio:.2} (want < 2)"),
    );
    let s = value(rows, "increment_norm_slope", "eps=0.05");
    c.check(s >= 0.10, format!("increment slope {s:.3} (want >= 0.10)"));
    c.runtime(t.elapsed, 1200.0);
    c.finish();
}

#[test]
fn criterion_8_sewing() {
    let t = run_default(Suite::SewingCheck);
    let rows = &t.out.rows;
    let mut c = Criterion::new(8, "stochastic sewing");
    let ratio = value(rows, "ito_error_ratio_per_two_levels", "");
    c.check(
        (ratio - 0.5).abs() <= 0.08,
        format!("Ito error ratio per two levels {ratio:.3} (want 0.5 +- 0.08)"),
    );
    let r = row(rows, "frozen_sewn_vs_direct_median", "eps=0.1;level=12");
    c.check(
        r.estimate <= r.target,
        format!(
            "frozen sewn vs direct {:.2e} within gap bound {:.2e}",
            r.estimate, r.target
        ),
    );
    c.check(
        value(rows, "characterization_control_pass", "") == 1.0,
        "direct Ito sum passes characterization".into(),
    );
    c.check(
        value(rows, "characterization_drift_pass", "") == 0.0,
        "drift-injected candidate is rejected".into(),
    );
    c.runtime(t.elapsed, 300.0);
    c.finish();
}

#[test]
fn criterion_9_determinism() {
    let mut c = Criterion::new(9, "byte-identical replay from the manifest");
    let root = tempfile::tempdir().unwrap();
    let cases: [(Suite, &[(&str, &str)]); 5] = [
        (Suite::Constants, &[]),
        (Suite::HeatCheck, &[]),
        (Suite::BlowupCurve, &[]),
        (Suite::Simulate, &[]),
        (Suite::BetaStats, &[("paths", "64"), ("epsilons", "[0.2]")]),
    ];
    for (suite, sets) in cases {
        let overrides: Vec<(String, serde_json::Value)> = sets
            .iter()
            .map(|(k, v)| (k.to_string(), serde_json::from_str(v).unwrap()))
            .collect();
        let cfg = ExperimentConfig::resolve(suite, None, &overrides).unwrap();
        let first = root.path().join(format!("{suite}-a"));
        run(suite, &cfg, Some(&first)).unwrap();
        let manifest: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(first.join("manifest.json")).unwrap())
                .unwrap();
        let replay_cfg = ExperimentConfig::resolve(suite, Some(manifest), &[]).unwrap();
        let second = root.path().join(format!("{suite}-b"));
        run(suite, &replay_cfg, Some(&second)).unwrap();
        let a = fs::read(first.join("results.csv")).unwrap();
        let b = fs::read(second.join("results.csv")).unwrap();
        c.check(
            a == b && !a.is_empty(),
            format!("{suite} {} bytes", a.len()),
        );
    }
    c.finish();
}
