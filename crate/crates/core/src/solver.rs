//! Exponential-Euler time stepping for the mollified equation
//! `du = Laplacian u dt + eps^{3/4} g(u) grad xi_eps` and for its limit
//! `du = Laplacian u dt + c g'g(u) xi`.
//!
//! One step reads
//!
//! ```text
//! u_{i+1} = P_dt u_i + P_{theta dt} Proj_M( g(u_i) * eta_i )
//! ```
//!
//! with `eta_i` the noise increment field and the product formed on the grid.

use std::f64::consts::{PI, SQRT_2};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::constants::limit_coefficient;
use crate::error::{Error, Result};
use crate::functionals::BetaPaths;
use crate::noise::{gradient_noise_into, BrownianIncrements, RngStream};
use crate::spectral::{basis_triple, heat_multipliers, GridTransform, SpectralField};

/// The coefficient `g` of the noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Nonlinearity {
    Zero,
    Constant {
        c: f64,
    },
    Linear,
    /// `sin(a u)`
    Sine {
        a: f64,
    },
    /// `tanh(a u)`
    Tanh {
        a: f64,
    },
}

impl Nonlinearity {
    #[inline]
    pub fn g(&self, u: f64) -> f64 {
        match *self {
            Self::Zero => 0.0,
            Self::Constant { c } => c,
            Self::Linear => u,
            Self::Sine { a } => (a * u).sin(),
            Self::Tanh { a } => (a * u).tanh(),
        }
    }

    #[inline]
    pub fn dg(&self, u: f64) -> f64 {
        match *self {
            Self::Zero | Self::Constant { .. } => 0.0,
            Self::Linear => 1.0,
            Self::Sine { a } => a * (a * u).cos(),
            Self::Tanh { a } => {
                let t = (a * u).tanh();
                a * (1.0 - t * t)
            }
        }
    }

    /// `g'(u) g(u)`
    #[inline]
    pub fn gdg(&self, u: f64) -> f64 {
        self.g(u) * self.dg(u)
    }

    /// Whether `g` is constant (so the noise term is additive).
    pub fn is_constant(&self) -> Option<f64> {
        match *self {
            Self::Zero => Some(0.0),
            Self::Constant { c } => Some(c),
            _ => None,
        }
    }

    /// Upper bound for `|g(0)| + sup|g'| + sup|g''| + sup|g'''|`.
    pub fn derivative_bound(&self) -> f64 {
        match *self {
            Self::Zero => 0.0,
            Self::Constant { c } => c.abs(),
            Self::Linear => 1.0,
            Self::Sine { a } => {
                let a = a.abs();
                a + a * a + a * a * a
            }
            Self::Tanh { a } => {
                // sup |sech^2| = 1, sup |2 tanh sech^2| = 4 / (3 sqrt 3), sup |g'''| / a^3 = 2
                let a = a.abs();
                a + 4.0 / (3.0 * 3f64.sqrt()) * a * a + 2.0 * a * a * a
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Self::Constant { c } => c.is_finite(),
            Self::Sine { a } | Self::Tanh { a } => a.is_finite(),
            _ => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config {
                field: "nonlinearity".into(),
                reason: "parameters must be finite".into(),
            })
        }
    }
}

/// The initial condition `psi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum InitialSpec {
    Constant {
        c: f64,
    },
    /// `a sin(2 pi k x)`
    SmoothSine {
        a: f64,
        k: usize,
    },
    /// `sum_{j < depth} a 2^{-j/4} cos(2 pi 2^j x)`, exactly 1/4-Holder as `depth -> infinity`.
    WeierstrassQuarter {
        a: f64,
        depth: u32,
    },
}

impl InitialSpec {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            Self::Constant { c } => c,
            Self::SmoothSine { a, k } => a * (2.0 * PI * k as f64 * x).sin(),
            Self::WeierstrassQuarter { a, depth } => (0..depth)
                .map(|j| {
                    a * 2f64.powf(-(j as f64) / 4.0) * (2.0 * PI * 2f64.powi(j as i32) * x).cos()
                })
                .sum(),
        }
    }

    /// Exact projection onto the first `m` basis functions.
    pub fn coefficients(&self, m: usize) -> SpectralField {
        let mut f = SpectralField::zeros(m);
        let c = f.coeffs_mut();
        match *self {
            Self::Constant { c: v } => c[0] = v,
            Self::SmoothSine { a, k } => {
                if k == 0 {
                    return f;
                }
                if 2 * k <= m {
                    c[2 * k - 1] = a / SQRT_2;
                }
            }
            Self::WeierstrassQuarter { a, depth } => {
                for j in 0..depth {
                    let k = 1usize << j;
                    if 2 * k < m {
                        c[2 * k] = a * 2f64.powf(-(j as f64) / 4.0) / SQRT_2;
                    }
                }
            }
        }
        f
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Self::Constant { c } => c.is_finite(),
            Self::SmoothSine { a, .. } => a.is_finite(),
            Self::WeierstrassQuarter { a, depth } => a.is_finite() && depth <= 40,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config {
                field: "initial".into(),
                reason: "parameters must be finite (depth <= 40)".into(),
            })
        }
    }
}

/// Where the semigroup acts on the noise increment: `P_{theta dt}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    Full,
    #[default]
    Half,
    None,
}

impl Placement {
    pub fn theta(&self) -> f64 {
        match self {
            Self::Full => 1.0,
            Self::Half => 0.5,
            Self::None => 0.0,
        }
    }
}

/// Auxiliary channels recorded alongside `u` on the same noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct Channels {
    /// Record the stochastic convolution `X = J_{0,.}[1]` at the save times.
    pub convolution: bool,
    /// Record `beta^{eps,n}` for these basis indices at the save times.
    pub beta_modes: Vec<usize>,
    /// Record `u` and `X` at every step from this time on.
    pub dense_from: Option<f64>,
}

/// Full description of one simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Mollification scale; 0 selects the limit equation.
    pub epsilon: f64,
    pub mode_cutoff: usize,
    pub dt: f64,
    pub t_end: f64,
    pub nonlinearity: Nonlinearity,
    pub initial: InitialSpec,
    /// Noise prefactor: defaults to 1 (on top of `eps^{3/4}`) when mollified and to
    /// `(8 pi^{1/4})^{-1}` for the limit equation.
    #[serde(default)]
    pub coefficient: Option<f64>,
    #[serde(default)]
    pub placement: Placement,
    pub save_times: Vec<f64>,
    #[serde(default)]
    pub channels: Channels,
}

/// `ceil(2 / eps)` with a guard against representation error.
pub fn min_cutoff(eps: f64) -> usize {
    (2.0 / eps - 1e-9).ceil() as usize
}

/// Default cutoff for the mollified equation: `max(64, 2 ceil(2/eps))`.
pub fn default_cutoff(eps: f64) -> usize {
    64.max(2 * min_cutoff(eps))
}

impl SimConfig {
    /// Mollified run with the default cutoff, `dt = eps^2 / 10` and `t_end = 1`.
    pub fn mollified(eps: f64) -> Self {
        Self {
            epsilon: eps,
            mode_cutoff: default_cutoff(eps),
            dt: eps * eps / 10.0,
            t_end: 1.0,
            nonlinearity: Nonlinearity::Sine { a: 1.0 },
            initial: InitialSpec::Constant { c: 0.5 },
            coefficient: None,
            placement: Placement::Half,
            save_times: vec![1.0],
            channels: Channels::default(),
        }
    }

    /// Limit-equation run.
    pub fn limit(mode_cutoff: usize, dt: f64) -> Self {
        Self {
            epsilon: 0.0,
            mode_cutoff,
            dt,
            ..Self::mollified(0.1)
        }
    }

    pub fn is_limit(&self) -> bool {
        self.epsilon == 0.0
    }

    pub fn effective_coefficient(&self) -> f64 {
        match self.coefficient {
            Some(c) => c,
            None if self.is_limit() => limit_coefficient(),
            None => 1.0,
        }
    }

    pub fn n_steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }

    /// Step index of a time on the grid.
    pub fn step_of(&self, t: f64) -> Result<usize> {
        grid_index(t, self.dt).ok_or(Error::BadTime {
            value: t,
            expected: "a multiple of dt",
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: String| {
            Err(Error::Config {
                field: field.into(),
                reason,
            })
        };
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return bad("epsilon", "must be finite and >= 0".into());
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("dt", "must be finite and > 0".into());
        }
        if !(self.t_end > 0.0 && self.t_end <= 1.0 + 1e-12) {
            return bad("t_end", "must lie in (0, 1]".into());
        }
        if self.mode_cutoff < 1 {
            return bad("mode_cutoff", "must be at least 1".into());
        }
        if self.epsilon > 0.0 {
            let limit = self.epsilon * self.epsilon / 10.0;
            if self.dt > limit * (1.0 + 1e-9) {
                return Err(Error::InsufficientResolution { dt: self.dt, limit });
            }
            if self.mode_cutoff < min_cutoff(self.epsilon) {
                return bad(
                    "mode_cutoff",
                    format!(
                        "must be at least ceil(2/eps) = {}",
                        min_cutoff(self.epsilon)
                    ),
                );
            }
        } else if self.channels.convolution || !self.channels.beta_modes.is_empty() {
            return bad(
                "channels",
                "convolution and beta channels need epsilon > 0".into(),
            );
        }
        let n = self.n_steps();
        if n == 0 || ((n as f64) * self.dt - self.t_end).abs() > 1e-9 * self.t_end {
            return bad("t_end", "must be a positive multiple of dt".into());
        }
        if let Some(c) = self.coefficient {
            if !c.is_finite() {
                return bad("coefficient", "must be finite".into());
            }
        }
        self.nonlinearity.validate()?;
        self.initial.validate()?;
        let mut prev = None;
        for &t in &self.save_times {
            if !(0.0..=self.t_end * (1.0 + 1e-12)).contains(&t) {
                return bad("save_times", format!("{t} outside [0, t_end]"));
            }
            let i = self.step_of(t).map_err(|_| Error::Config {
                field: "save_times".into(),
                reason: format!("{t} is not a multiple of dt"),
            })?;
            if prev.is_some_and(|p| i <= p) {
                return bad("save_times", "must be strictly increasing".into());
            }
            prev = Some(i);
        }
        if let Some(&n) = self
            .channels
            .beta_modes
            .iter()
            .find(|&&n| n < 1 || n > self.mode_cutoff)
        {
            return bad("channels.beta_modes", format!("mode {n} outside 1..=M"));
        }
        if let Some(t) = self.channels.dense_from {
            if t > self.t_end || self.step_of(t).is_err() {
                return bad(
                    "channels.dense_from",
                    "must be a multiple of dt in [0, t_end]".into(),
                );
            }
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(json.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

/// Reusable per-worker stepping state.
#[derive(Debug, Clone)]
pub struct Stepper {
    eps: f64,
    coefficient: f64,
    nonlinearity: Nonlinearity,
    heat_dt: Vec<f64>,
    heat_theta: Vec<f64>,
    transform: GridTransform,
    noise: Vec<f64>,
    u_grid: Vec<f64>,
    noise_grid: Vec<f64>,
    product: Vec<f64>,
}

impl Stepper {
    pub fn new(cfg: &SimConfig) -> Result<Self> {
        cfg.validate()?;
        let m = cfg.mode_cutoff;
        let transform = GridTransform::for_cutoff(m);
        let n = transform.n_grid();
        Ok(Self {
            eps: cfg.epsilon,
            coefficient: cfg.effective_coefficient(),
            nonlinearity: cfg.nonlinearity,
            heat_dt: heat_multipliers(m, cfg.dt),
            heat_theta: heat_multipliers(m, cfg.placement.theta() * cfg.dt),
            transform,
            noise: vec![0.0; m],
            u_grid: vec![0.0; n],
            noise_grid: vec![0.0; n],
            product: vec![0.0; m],
        })
    }

    pub fn mode_cutoff(&self) -> usize {
        self.heat_dt.len()
    }

    pub fn transform(&mut self) -> &mut GridTransform {
        &mut self.transform
    }

    /// Noise field of the last step: `eta` for the mollified equation, `sum dw_m e_m` for the limit.
    pub fn noise(&self) -> &[f64] {
        &self.noise
    }

    /// Multipliers of `P_dt` and `P_{theta dt}`.
    pub fn multipliers(&self) -> (&[f64], &[f64]) {
        (&self.heat_dt, &self.heat_theta)
    }

    /// Prepares the noise field of a step from its increments.
    pub fn load_noise(&mut self, dw: &[f64]) -> Result<()> {
        if dw.len() != self.noise.len() {
            return Err(Error::CutoffMismatch {
                left: self.noise.len(),
                right: dw.len(),
            });
        }
        if self.eps > 0.0 {
            gradient_noise_into(dw, self.eps, &mut self.noise)?;
        } else {
            self.noise.copy_from_slice(dw);
        }
        Ok(())
    }

    /// Advances `u` in place with the noise loaded by [`Stepper::load_noise`].
    pub fn advance(&mut self, u: &mut [f64]) -> Result<()> {
        let m = self.mode_cutoff();
        if u.len() != m {
            return Err(Error::CutoffMismatch {
                left: u.len(),
                right: m,
            });
        }
        let limit = self.eps == 0.0;
        let constant = if limit {
            // g'g vanishes for constant g
            self.nonlinearity.is_constant().map(|_| 0.0)
        } else {
            self.nonlinearity.is_constant()
        };
        match constant {
            Some(c) => {
                let c = c * self.coefficient;
                for i in 0..m {
                    self.product[i] = c * self.noise[i];
                }
            }
            None => {
                self.transform.synthesize_into(u, &mut self.u_grid)?;
                self.transform
                    .synthesize_into(&self.noise, &mut self.noise_grid)?;
                let g = self.nonlinearity;
                let c = self.coefficient;
                for (v, w) in self.u_grid.iter_mut().zip(&self.noise_grid) {
                    let h = if limit { g.gdg(*v) } else { g.g(*v) };
                    *v = c * h * w;
                }
                self.transform
                    .analyze_into(&self.u_grid, &mut self.product)?;
            }
        }
        for i in 0..m {
            u[i] = self.heat_dt[i] * u[i] + self.heat_theta[i] * self.product[i];
        }
        Ok(())
    }

    /// One full step from increments.
    pub fn step(&mut self, u: &mut [f64], dw: &[f64]) -> Result<()> {
        self.load_noise(dw)?;
        self.advance(u)
    }
}

/// One step of the mollified equation.
pub fn step_mollified(
    u: &SpectralField,
    inc: &BrownianIncrements,
    cfg: &SimConfig,
) -> Result<SpectralField> {
    if cfg.is_limit() {
        return Err(Error::Config {
            field: "epsilon".into(),
            reason: "must be > 0 for the mollified equation".into(),
        });
    }
    one_step(u, inc, cfg)
}

/// One step of the limit equation.
pub fn step_limit(
    u: &SpectralField,
    inc: &BrownianIncrements,
    cfg: &SimConfig,
) -> Result<SpectralField> {
    if !cfg.is_limit() {
        return Err(Error::Config {
            field: "epsilon".into(),
            reason: "must be 0 for the limit equation".into(),
        });
    }
    one_step(u, inc, cfg)
}

fn one_step(u: &SpectralField, inc: &BrownianIncrements, cfg: &SimConfig) -> Result<SpectralField> {
    if (inc.dt() - cfg.dt).abs() > 1e-15 * cfg.dt {
        return Err(Error::param("inc.dt", "must equal cfg.dt"));
    }
    let mut stepper = Stepper::new(cfg)?;
    let mut out = u.clone();
    stepper.step(out.coeffs_mut(), inc.dw())?;
    Ok(out)
}

/// Per-step record of `u` (and `X` when available) from a start step on.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseRecord {
    pub start_step: usize,
    pub dt: f64,
    pub u: Vec<SpectralField>,
    pub x: Option<Vec<SpectralField>>,
}

impl DenseRecord {
    pub fn time_of(&self, offset: usize) -> f64 {
        (self.start_step + offset) as f64 * self.dt
    }

    pub fn end_step(&self) -> usize {
        self.start_step + self.u.len() - 1
    }
}

/// A simulated path with its auxiliary channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub config: SimConfig,
    pub config_hash: String,
    /// The stream that drove the path; step `i` used block `stream.step_counter + i`.
    pub stream: RngStream,
    pub times: Vec<f64>,
    pub u: Vec<SpectralField>,
    pub x: Option<Vec<SpectralField>>,
    pub beta: Option<BetaPaths>,
    pub dense: Option<DenseRecord>,
}

impl Trajectory {
    /// Replays the increments of local step `i`.
    pub fn increments(&self, i: usize) -> BrownianIncrements {
        let mut inc = BrownianIncrements::zeros(self.config.mode_cutoff, self.config.dt)
            .expect("validated dt");
        inc.fill_from(&self.stream, self.stream.step_counter + i as u64);
        inc
    }

    /// Snapshot at a save time.
    pub fn at(&self, t: f64) -> Option<&SpectralField> {
        self.times
            .iter()
            .position(|s| (s - t).abs() <= 1e-9 * t.max(1e-12))
            .map(|i| &self.u[i])
    }
}

/// Index `i` with `t = i dt`, allowing for rounding in decimal time literals.
pub fn grid_index(t: f64, dt: f64) -> Option<usize> {
    let r = t / dt;
    let i = r.round();
    (t >= 0.0 && r.is_finite() && (r - i).abs() <= 1e-6).then_some(i as usize)
}

/// Runs one path from `psi` to `t_end`.
pub fn solve_path(cfg: &SimConfig, stream: RngStream) -> Result<Trajectory> {
    let mut stepper = Stepper::new(cfg)?;
    let m = cfg.mode_cutoff;
    let n_steps = cfg.n_steps();
    let mut save_steps = Vec::with_capacity(cfg.save_times.len());
    for &t in &cfg.save_times {
        save_steps.push(cfg.step_of(t)?);
    }
    let mut save_iter = cfg.save_times.iter();
    let dense_start = cfg
        .channels
        .dense_from
        .map(|t| cfg.step_of(t))
        .transpose()?;
    let mollified = !cfg.is_limit();
    let need_x = mollified
        && (cfg.channels.convolution
            || !cfg.channels.beta_modes.is_empty()
            || dense_start.is_some());

    let mut u = cfg.initial.coefficients(m);
    let mut x = vec![0.0; m];
    let beta_modes = cfg.channels.beta_modes.clone();
    let mut beta_now = vec![0.0; beta_modes.len()];

    let mut times = Vec::new();
    let mut snaps = Vec::new();
    let mut x_snaps = Vec::new();
    let mut beta_vals: Vec<Vec<f64>> = vec![Vec::new(); beta_modes.len()];
    let mut dense = dense_start.map(|s| DenseRecord {
        start_step: s,
        dt: cfg.dt,
        u: Vec::with_capacity(n_steps + 1 - s),
        x: need_x.then(|| Vec::with_capacity(n_steps + 1 - s)),
    });
    let mut inc = BrownianIncrements::zeros(m, cfg.dt)?;
    let mut next_save = 0;

    for i in 0..=n_steps {
        while next_save < save_steps.len() && save_steps[next_save] == i {
            times.push(*save_iter.next().expect("one time per save step"));
            snaps.push(u.clone());
            if cfg.channels.convolution {
                x_snaps.push(SpectralField::from_coeffs(x.clone())?);
            }
            for (vals, b) in beta_vals.iter_mut().zip(&beta_now) {
                vals.push(*b);
            }
            next_save += 1;
        }
        if let Some(d) = dense.as_mut() {
            if i >= d.start_step {
                d.u.push(u.clone());
                if let Some(xs) = d.x.as_mut() {
                    xs.push(SpectralField::from_coeffs(x.clone())?);
                }
            }
        }
        if i == n_steps {
            break;
        }
        inc.fill_from(&stream, stream.step_counter + i as u64);
        stepper.load_noise(inc.dw())?;
        if need_x {
            let eta = stepper.noise();
            for (b, &n) in beta_now.iter_mut().zip(&beta_modes) {
                *b += basis_triple(n, &x, eta);
            }
            let (hd, ht) = stepper.multipliers();
            for j in 0..m {
                x[j] = hd[j] * x[j] + ht[j] * eta[j];
            }
        }
        stepper.advance(u.coeffs_mut())?;
    }

    let beta = (!beta_modes.is_empty()).then(|| BetaPaths {
        modes: beta_modes,
        times: times.clone(),
        values: beta_vals,
    });
    Ok(Trajectory {
        config: cfg.clone(),
        config_hash: cfg.config_hash(),
        stream,
        times,
        u: snaps,
        x: cfg.channels.convolution.then_some(x_snaps),
        beta,
        dense,
    })
}
