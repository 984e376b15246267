//! `she-renorm`: runs one experiment suite and writes results, manifest and summary.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};
use she_renorm::experiment::{run, ExperimentConfig, Suite};

#[derive(Parser)]
#[command(
    name = "she-renorm",
    version,
    about = "Monte Carlo suites for the mollified multiplicative SHE"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-form constants against independent oracles
    Constants(Opts),
    /// Heat kernel and semigroup identities
    HeatCheck(Opts),
    /// Variance blow-up of the fractional-noise products
    BlowupCurve(Opts),
    /// Variance and correlation of the iterated integrals beta
    BetaStats(Opts),
    /// Simulate paths and report point statistics
    Simulate(Opts),
    /// Convergence in law towards the limit equation
    Converge(Opts),
    /// Six-term decomposition of the noise term
    Decompose(Opts),
    /// Stochastic sewing of the Ito and frozen germs
    SewingCheck(Opts),
    /// Uniform Holder norms and time increments
    HolderNorms(Opts),
}

#[derive(Args, Clone)]
struct Opts {
    /// Config JSON, or a manifest from an earlier run
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (default `out/<suite>`)
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    paths: Option<usize>,
    /// Comma-separated list; 0 selects the limit equation where supported
    #[arg(long, value_delimiter = ',')]
    epsilon: Option<Vec<f64>>,
    /// Nonlinearity family: zero, constant, linear, sine, tanh
    #[arg(long)]
    g: Option<String>,
    /// Parameter of the nonlinearity (`c` for constant, `a` for sine and tanh)
    #[arg(long, default_value_t = 1.0)]
    g_param: f64,
    /// Semigroup placement on the noise increment: full, half, none
    #[arg(long)]
    placement: Option<String>,
    #[arg(long, value_delimiter = ',')]
    times: Option<Vec<f64>>,
    #[arg(long)]
    t_end: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    modes: Option<Vec<usize>>,
    #[arg(long)]
    level: Option<u32>,
    #[arg(long)]
    coefficient: Option<f64>,
    /// Any config field as `key=<json>`, repeatable
    #[arg(long = "set", value_name = "KEY=JSON")]
    set: Vec<String>,
}

impl Opts {
    fn overrides(&self) -> Result<Vec<(String, Value)>, String> {
        let mut out: Vec<(String, Value)> = Vec::new();
        let mut put = |k: &str, v: Value| out.push((k.to_string(), v));
        if let Some(v) = self.seed {
            put("master_seed", json!(v));
        }
        if let Some(v) = self.paths {
            put("paths", json!(v));
        }
        if let Some(v) = &self.epsilon {
            put("epsilons", json!(v));
        }
        if let Some(g) = &self.g {
            let v = match g.as_str() {
                "zero" | "linear" => json!({ "family": g }),
                "constant" => json!({ "family": "constant", "c": self.g_param }),
                "sine" | "tanh" => json!({ "family": g, "a": self.g_param }),
                other => return Err(format!("unknown nonlinearity `{other}`")),
            };
            put("nonlinearity", v);
        }
        if let Some(v) = &self.placement {
            put("placement", json!(v));
        }
        if let Some(v) = &self.times {
            put("times", json!(v));
        }
        if let Some(v) = self.t_end {
            put("t_end", json!(v));
        }
        if let Some(v) = &self.modes {
            put("modes", json!(v));
        }
        if let Some(v) = self.level {
            put("level", json!(v));
        }
        if let Some(v) = self.coefficient {
            put("coefficient", json!(v));
        }
        for s in &self.set {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| format!("`--set {s}`: expected KEY=JSON"))?;
            let v: Value = serde_json::from_str(v).map_err(|e| format!("`--set {k}`: {e}"))?;
            put(k, v);
        }
        Ok(out)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (suite, opts) = match cli.command {
        Command::Constants(o) => (Suite::Constants, o),
        Command::HeatCheck(o) => (Suite::HeatCheck, o),
        Command::BlowupCurve(o) => (Suite::BlowupCurve, o),
        Command::BetaStats(o) => (Suite::BetaStats, o),
        Command::Simulate(o) => (Suite::Simulate, o),
        Command::Converge(o) => (Suite::Converge, o),
        Command::Decompose(o) => (Suite::Decompose, o),
        Command::SewingCheck(o) => (Suite::SewingCheck, o),
        Command::HolderNorms(o) => (Suite::HolderNorms, o),
    };
    let overrides = match opts.overrides() {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let cfg = match ExperimentConfig::load(suite, opts.config.as_deref(), &overrides) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let out = opts
        .out
        .unwrap_or_else(|| PathBuf::from("out").join(suite.name()));
    match run(suite, &cfg, Some(&out)) {
        Ok(outcome) => {
            print!("{}", outcome.summary);
            println!("results written to {}", out.display());
            if outcome.manifest.pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
