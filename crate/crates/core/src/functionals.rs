//! Stochastic integrals on a shared noise path.
//!
//! With `eta_i` the noise field of step `i` (see [`crate::noise::gradient_noise_field`]):
//!
//! ```text
//! K_{s,t}[f]   = sum_i (f_i, eta_i)
//! J_{s,t}[f]   : Y_{i+1} = P_dt Y_i + P_{theta dt} Proj_M(f_i eta_i),  Y_s = 0
//! X            = J_{0,.}[1]
//! beta^n_t     = K_{0,t}[e_n X]
//! ```
//!
//! All sums are left-point (Ito).

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::{gradient_noise_into, BrownianIncrements, RngStream};
use crate::solver::{grid_index, Nonlinearity, Placement, Trajectory};
use crate::spectral::{
    apply_heat, basis_product, basis_triple, basis_value, heat_multipliers, laplace_eigenvalue,
    GridField, GridTransform, SpectralField,
};

/// Time series of `beta^{eps,n}` for several basis indices on a shared time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaPaths {
    pub modes: Vec<usize>,
    pub times: Vec<f64>,
    /// `values[j][i]` is `beta^{modes[j]}` at `times[i]`.
    pub values: Vec<Vec<f64>>,
}

impl BetaPaths {
    fn index_of_time(&self, t: f64) -> Result<usize> {
        self.times
            .iter()
            .position(|s| (s - t).abs() <= 1e-9 * t.max(1e-12))
            .ok_or(Error::BadTime {
                value: t,
                expected: "one of the recorded times",
            })
    }

    fn index_of_mode(&self, n: usize) -> Result<usize> {
        self.modes
            .iter()
            .position(|&m| m == n)
            .ok_or(Error::param("n", format!("mode {n} was not recorded")))
    }

    /// `beta^n_t`; time zero is always available since `beta_0 = 0`.
    pub fn value(&self, n: usize, t: f64) -> Result<f64> {
        let j = self.index_of_mode(n)?;
        match self.index_of_time(t) {
            Ok(i) => Ok(self.values[j][i]),
            Err(_) if t == 0.0 => Ok(0.0),
            Err(e) => Err(e),
        }
    }

    /// `beta^n_t - beta^n_s`.
    pub fn increment(&self, n: usize, s: f64, t: f64) -> Result<f64> {
        Ok(self.value(n, t)? - self.value(n, s)?)
    }
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::param("epsilon", "must be finite and > 0"));
    }
    Ok(())
}

/// One step of `X = J_{0,.}[1]`: `X <- P_dt X + P_{theta dt} eta`.
pub fn evolve_convolution(
    x: &SpectralField,
    inc: &BrownianIncrements,
    eps: f64,
    placement: Placement,
) -> Result<SpectralField> {
    let m = x.mode_cutoff();
    if inc.mode_cutoff() != m {
        return Err(Error::CutoffMismatch {
            left: m,
            right: inc.mode_cutoff(),
        });
    }
    check_eps(eps)?;
    let mut eta = vec![0.0; m];
    gradient_noise_into(inc.dw(), eps, &mut eta)?;
    let hd = heat_multipliers(m, inc.dt());
    let ht = heat_multipliers(m, placement.theta() * inc.dt());
    let coeffs = (0..m)
        .map(|i| hd[i] * x.coeffs()[i] + ht[i] * eta[i])
        .collect();
    SpectralField::from_coeffs(coeffs)
}

/// `beta` increments `(Proj_M(e_n X), eta)` with the product formed on the grid.
pub fn beta_step(
    beta: &[f64],
    modes: &[usize],
    x: &SpectralField,
    inc: &BrownianIncrements,
    eps: f64,
) -> Result<Vec<f64>> {
    let m = x.mode_cutoff();
    if inc.mode_cutoff() != m {
        return Err(Error::CutoffMismatch {
            left: m,
            right: inc.mode_cutoff(),
        });
    }
    if beta.len() != modes.len() {
        return Err(Error::param("beta", "one value per mode is required"));
    }
    let mut eta = SpectralField::zeros(m);
    gradient_noise_into(inc.dw(), eps, eta.coeffs_mut())?;
    let mut t = GridTransform::for_cutoff(m);
    let n_grid = t.n_grid();
    let xv = t.synthesize(x)?;
    let mut out = beta.to_vec();
    for (b, &n) in out.iter_mut().zip(modes) {
        if n < 1 || n > m {
            return Err(Error::param("modes", format!("mode {n} outside 1..={m}")));
        }
        let prod: Vec<f64> = xv
            .iter()
            .enumerate()
            .map(|(j, v)| v * basis_value(n, j as f64 / n_grid as f64))
            .collect();
        *b += t.analyze(&prod, m)?.dot(&eta);
    }
    Ok(out)
}

/// Settings for simulating the `beta` channel alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaConfig {
    pub epsilon: f64,
    pub mode_cutoff: usize,
    pub dt: f64,
    pub modes: Vec<usize>,
    /// Recording times; the run ends at the last one.
    pub times: Vec<f64>,
    #[serde(default)]
    pub placement: Placement,
}

impl BetaConfig {
    /// Cutoff `2 ceil(2/eps)`, `dt = eps^2/10`, modes `2..=9`, times `{0.1, 1}`.
    pub fn new(eps: f64) -> Self {
        Self {
            epsilon: eps,
            mode_cutoff: 2 * crate::solver::min_cutoff(eps),
            dt: eps * eps / 10.0,
            modes: (2..=9).collect(),
            times: vec![0.1, 1.0],
            placement: Placement::Half,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_eps(self.epsilon)?;
        if !(self.dt > 0.0 && self.dt <= self.epsilon * self.epsilon / 10.0 * (1.0 + 1e-9)) {
            return Err(Error::InsufficientResolution {
                dt: self.dt,
                limit: self.epsilon * self.epsilon / 10.0,
            });
        }
        if self.modes.is_empty() || self.modes.iter().any(|&n| n < 1 || n > self.mode_cutoff) {
            return Err(Error::Config {
                field: "modes".into(),
                reason: "must be nonempty and within 1..=M".into(),
            });
        }
        let steps = self.steps()?;
        if steps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config {
                field: "times".into(),
                reason: "must be strictly increasing".into(),
            });
        }
        Ok(())
    }

    fn steps(&self) -> Result<Vec<usize>> {
        self.times
            .iter()
            .map(|&t| match grid_index(t, self.dt) {
                Some(i) if t <= 1.0 + 1e-12 => Ok(i),
                _ => Err(Error::Config {
                    field: "times".into(),
                    reason: format!("{t} is not a multiple of dt in [0, 1]"),
                }),
            })
            .collect()
    }
}

/// Simulates `X` and `beta` only, using the exact spectral product.
///
/// Draws the same increments as [`crate::solver::solve_path`] for the same stream, so the
/// result coincides with the `beta` channel of a full trajectory.
pub fn simulate_beta(cfg: &BetaConfig, stream: RngStream) -> Result<BetaPaths> {
    cfg.validate()?;
    let m = cfg.mode_cutoff;
    let steps = cfg.steps()?;
    let n_steps = *steps.last().unwrap_or(&0);
    let hd = heat_multipliers(m, cfg.dt);
    let ht = heat_multipliers(m, cfg.placement.theta() * cfg.dt);
    let mut inc = BrownianIncrements::zeros(m, cfg.dt)?;
    let mut x = vec![0.0; m];
    let mut eta = vec![0.0; m];
    let mut beta = vec![0.0; cfg.modes.len()];
    let mut values = vec![Vec::with_capacity(steps.len()); cfg.modes.len()];
    let mut next = 0;
    for i in 0..=n_steps {
        while next < steps.len() && steps[next] == i {
            for (v, b) in values.iter_mut().zip(&beta) {
                v.push(*b);
            }
            next += 1;
        }
        if i == n_steps {
            break;
        }
        inc.fill_from(&stream, stream.step_counter + i as u64);
        gradient_noise_into(inc.dw(), cfg.epsilon, &mut eta)?;
        for (b, &n) in beta.iter_mut().zip(&cfg.modes) {
            *b += basis_triple(n, &x, &eta);
        }
        for j in 0..m {
            x[j] = hd[j] * x[j] + ht[j] * eta[j];
        }
    }
    Ok(BetaPaths {
        modes: cfg.modes.clone(),
        times: cfg.times.clone(),
        values,
    })
}

/// Per-step variance of each coefficient of `eta`.
fn eta_variances(m: usize, dt: f64, eps: f64) -> Result<Vec<f64>> {
    let mut var_eta = vec![0.0; m];
    let mut unit = vec![0.0; m];
    let mut out = vec![0.0; m];
    for j in 0..m {
        unit[j] = 1.0;
        gradient_noise_into(&unit, eps, &mut out)?;
        unit[j] = 0.0;
        for (v, o) in var_eta.iter_mut().zip(&out) {
            *v += o * o * dt;
        }
    }
    Ok(var_eta)
}

/// Exact variance of each coefficient of `X` after `steps` steps from zero.
pub fn convolution_mode_variances(
    eps: f64,
    m: usize,
    dt: f64,
    placement: Placement,
    steps: usize,
) -> Result<Vec<f64>> {
    check_eps(eps)?;
    let var_eta = eta_variances(m, dt, eps)?;
    let hd = heat_multipliers(m, dt);
    let ht = heat_multipliers(m, placement.theta() * dt);
    let mut v = vec![0.0; m];
    for _ in 0..steps {
        for j in 0..m {
            v[j] = hd[j] * hd[j] * v[j] + ht[j] * ht[j] * var_eta[j];
        }
    }
    Ok(v)
}

/// Exact `Var(beta^n_t - beta^n_s)` for the discrete scheme of [`simulate_beta`].
///
/// The increments are martingale differences and the modes of `X` are independent
/// Ornstein-Uhlenbeck recursions, so the variance is a finite spectral sum.
pub fn beta_variance_exact(cfg: &BetaConfig, n: usize, s: f64, t: f64) -> Result<f64> {
    cfg.validate()?;
    let m = cfg.mode_cutoff;
    if n < 1 || n > m {
        return Err(Error::param("n", format!("mode {n} outside 1..={m}")));
    }
    let (a, b) = match (grid_index(s, cfg.dt), grid_index(t, cfg.dt)) {
        (Some(a), Some(b)) if a <= b => (a, b),
        _ => return Err(Error::param("times", "s <= t on the dt grid is required")),
    };
    let var_eta = eta_variances(m, cfg.dt, cfg.epsilon)?;
    // E[(Proj_M(e_n e_j), eta)^2] for unit X in mode j
    let weights: Vec<f64> = (0..m)
        .map(|j| {
            let mut e = SpectralField::zeros(m);
            e.coeffs_mut()[j] = 1.0;
            basis_product(n, &e, m)
                .coeffs()
                .iter()
                .zip(&var_eta)
                .map(|(c, v)| c * c * v)
                .sum()
        })
        .collect();
    let hd = heat_multipliers(m, cfg.dt);
    let ht = heat_multipliers(m, cfg.placement.theta() * cfg.dt);
    let mut v = vec![0.0; m];
    let mut total = 0.0;
    for i in 0..b {
        if i >= a {
            total += v.iter().zip(&weights).map(|(x, w)| x * w).sum::<f64>();
        }
        for j in 0..m {
            v[j] = hd[j] * hd[j] * v[j] + ht[j] * ht[j] * var_eta[j];
        }
    }
    Ok(total)
}

/// Replays the noise fields `eta_i` of a path.
#[derive(Debug, Clone)]
pub struct NoiseReplay {
    pub stream: RngStream,
    pub mode_cutoff: usize,
    pub dt: f64,
    pub epsilon: f64,
    pub placement: Placement,
    inc: BrownianIncrements,
}

impl NoiseReplay {
    pub fn new(
        stream: RngStream,
        mode_cutoff: usize,
        dt: f64,
        epsilon: f64,
        placement: Placement,
    ) -> Result<Self> {
        check_eps(epsilon)?;
        Ok(Self {
            stream,
            mode_cutoff,
            dt,
            epsilon,
            placement,
            inc: BrownianIncrements::zeros(mode_cutoff, dt)?,
        })
    }

    /// Replay of the noise that drove a trajectory.
    pub fn of(traj: &Trajectory) -> Result<Self> {
        let c = &traj.config;
        Self::new(traj.stream, c.mode_cutoff, c.dt, c.epsilon, c.placement)
    }

    /// Writes `eta_i` into `out`.
    pub fn eta_into(&mut self, step: usize, out: &mut [f64]) -> Result<()> {
        self.inc
            .fill_from(&self.stream, self.stream.step_counter + step as u64);
        gradient_noise_into(self.inc.dw(), self.epsilon, out)
    }

    pub fn eta(&mut self, step: usize) -> Result<SpectralField> {
        let mut out = SpectralField::zeros(self.mode_cutoff);
        self.eta_into(step, out.coeffs_mut())?;
        Ok(out)
    }
}

/// `J_{s,t}[f]` over steps `start..end`; `f(i)` supplies the integrand at step `i`.
pub fn j_integral(
    mut f: impl FnMut(usize) -> Result<SpectralField>,
    replay: &mut NoiseReplay,
    start: usize,
    end: usize,
) -> Result<SpectralField> {
    let m = replay.mode_cutoff;
    let hd = heat_multipliers(m, replay.dt);
    let ht = heat_multipliers(m, replay.placement.theta() * replay.dt);
    let mut t = GridTransform::for_cutoff(m);
    let mut eta = vec![0.0; m];
    let mut eg = vec![0.0; t.n_grid()];
    let mut fg = vec![0.0; t.n_grid()];
    let mut prod = vec![0.0; m];
    let mut y = vec![0.0; m];
    for i in start..end {
        let fi = f(i)?;
        if fi.mode_cutoff() != m {
            return Err(Error::CutoffMismatch {
                left: fi.mode_cutoff(),
                right: m,
            });
        }
        replay.eta_into(i, &mut eta)?;
        t.synthesize_into(&eta, &mut eg)?;
        t.synthesize_into(fi.coeffs(), &mut fg)?;
        fg.iter_mut().zip(&eg).for_each(|(a, b)| *a *= b);
        t.analyze_into(&fg, &mut prod)?;
        for j in 0..m {
            y[j] = hd[j] * y[j] + ht[j] * prod[j];
        }
    }
    SpectralField::from_coeffs(y)
}

/// `K_{s,t}[f]` over steps `start..end`.
pub fn k_integral(
    mut f: impl FnMut(usize) -> Result<SpectralField>,
    replay: &mut NoiseReplay,
    start: usize,
    end: usize,
) -> Result<f64> {
    let m = replay.mode_cutoff;
    let mut eta = vec![0.0; m];
    let mut acc = 0.0;
    for i in start..end {
        let fi = f(i)?;
        if fi.mode_cutoff() != m {
            return Err(Error::CutoffMismatch {
                left: fi.mode_cutoff(),
                right: m,
            });
        }
        replay.eta_into(i, &mut eta)?;
        acc += fi
            .coeffs()
            .iter()
            .zip(&eta)
            .map(|(a, b)| a * b)
            .sum::<f64>();
    }
    Ok(acc)
}

/// Nodes and weights of the 16-point Gauss-Legendre rule on `[0, 1]`.
pub fn gauss_legendre_16() -> &'static ([f64; 16], [f64; 16]) {
    static RULE: OnceLock<([f64; 16], [f64; 16])> = OnceLock::new();
    RULE.get_or_init(|| {
        let n = 16;
        let mut nodes = [0.0; 16];
        let mut weights = [0.0; 16];
        for i in 0..n {
            // Newton iteration on P_n from the Chebyshev-like initial guess
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            nodes[i] = 0.5 * (1.0 - x);
            weights[i] = 1.0 / ((1.0 - x * x) * dp * dp);
        }
        (nodes, weights)
    })
}

/// `int_0^1 g'(theta a + (1 - theta) b) d theta` by 16-node Gauss-Legendre.
#[inline]
pub fn averaged_derivative_at(g: &Nonlinearity, a: f64, b: f64) -> f64 {
    let (nodes, weights) = gauss_legendre_16();
    nodes
        .iter()
        .zip(weights)
        .map(|(th, w)| w * g.dg(th * a + (1.0 - th) * b))
        .sum()
}

/// Pointwise `G_{s,r}[u]` from `u_r` and `P_{r-s} u_s` on a grid.
pub fn averaged_derivative(
    u_r: &GridField,
    pu_s: &GridField,
    g: &Nonlinearity,
) -> Result<GridField> {
    if u_r.n_grid() != pu_s.n_grid() {
        return Err(Error::BadGridSize(pu_s.n_grid()));
    }
    GridField::new(
        u_r.values()
            .iter()
            .zip(pu_s.values())
            .map(|(a, b)| averaged_derivative_at(g, *a, *b))
            .collect(),
    )
}

/// Quadrature for the drift `int_s^t (u_r, Laplacian phi) dr`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DriftQuadrature {
    /// Trapezoid rule on the step grid.
    #[default]
    Trapezoid,
    /// `sum_i (u_i, (P_dt - I) phi)`: the exact drift of the exponential-Euler step.
    SchemeExact,
}

fn dense_range(traj: &Trajectory, s: f64, t: f64) -> Result<(usize, usize)> {
    let d = traj.dense.as_ref().ok_or(Error::MissingChannel("dense"))?;
    if !(t > s) {
        return Err(Error::BadTime {
            value: t,
            expected: "t > s",
        });
    }
    let dt = traj.config.dt;
    if dt > (t - s) / 10.0 {
        return Err(Error::InsufficientResolution {
            dt,
            limit: (t - s) / 10.0,
        });
    }
    let si = traj.config.step_of(s)?;
    let ti = traj.config.step_of(t)?;
    if si < d.start_step || ti > d.end_step() {
        return Err(Error::MissingChannel("dense record does not cover [s, t]"));
    }
    Ok((si - d.start_step, ti - d.start_step))
}

/// `M_t(phi) - M_s(phi)` with `M_t(phi) = (u_t, phi) - (psi, phi) - int_0^t (u_r, Laplacian phi) dr`.
pub fn martingale_increment(
    traj: &Trajectory,
    phi: &SpectralField,
    s: f64,
    t: f64,
    q: DriftQuadrature,
) -> Result<f64> {
    let (a, b) = dense_range(traj, s, t)?;
    let d = traj.dense.as_ref().expect("checked");
    let m = traj.config.mode_cutoff;
    if phi.mode_cutoff() != m {
        return Err(Error::CutoffMismatch {
            left: phi.mode_cutoff(),
            right: m,
        });
    }
    let dt = traj.config.dt;
    let drift = match q {
        DriftQuadrature::Trapezoid => {
            let lap_phi = SpectralField::from_coeffs(
                (0..m)
                    .map(|i| -laplace_eigenvalue(i + 1) * phi.coeffs()[i])
                    .collect(),
            )?;
            let vals: Vec<f64> = (a..=b).map(|i| d.u[i].dot(&lap_phi)).collect();
            dt * (vals.iter().sum::<f64>() - 0.5 * (vals[0] + vals[vals.len() - 1]))
        }
        DriftQuadrature::SchemeExact => {
            let mut w = apply_heat(phi, dt)?;
            w.axpy(-1.0, phi);
            (a..b).map(|i| d.u[i].dot(&w)).sum()
        }
    };
    Ok(d.u[b].dot(phi) - d.u[a].dot(phi) - drift)
}

/// The six terms of the increment decomposition at one end time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub s: f64,
    pub t: f64,
    pub terms: [f64; 6],
    /// `K_{s,t}[phi g(u)]` computed directly.
    pub k_total: f64,
    /// Martingale increment with the scheme-exact drift.
    pub martingale: f64,
}

impl Decomposition {
    pub fn sum(&self) -> f64 {
        self.terms.iter().sum()
    }
}

/// Splits `K_{s,t}[phi g(u)]` into the six frozen/remainder terms for every `t` in `ts`.
///
/// With `v_r = P_{r-s} u_s`:
///
/// ```text
/// 1: K[phi g'g(v) X]                  4: K[phi g'(v) (J_{s,.}[g(v)] - g(v) J_{s,.}[1])]
/// 2: K[phi g(v)]                      5: K[phi g'(v) J_{s,.}[g(u) - g(v)]]
/// 3: -K[phi g'g(v) P_{.-s} X_s]       6: K[phi (G_{s,.}[u] - g'(v)) J_{s,.}[g(u)]]
/// ```
pub fn decompose_increment(
    traj: &Trajectory,
    phi: &SpectralField,
    s: f64,
    ts: &[f64],
) -> Result<Vec<Decomposition>> {
    let cfg = &traj.config;
    if cfg.is_limit() {
        return Err(Error::Config {
            field: "epsilon".into(),
            reason: "decomposition needs epsilon > 0".into(),
        });
    }
    let m = cfg.mode_cutoff;
    if phi.mode_cutoff() != m {
        return Err(Error::CutoffMismatch {
            left: phi.mode_cutoff(),
            right: m,
        });
    }
    let t_max = ts.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (a, b) = dense_range(traj, s, t_max)?;
    let d = traj.dense.as_ref().expect("checked");
    let xs =
        d.x.as_ref()
            .ok_or(Error::MissingChannel("dense convolution"))?;
    let mut ends = Vec::with_capacity(ts.len());
    for &t in ts {
        let (_, e) = dense_range(traj, s, t)?;
        ends.push(e);
    }

    let g = cfg.nonlinearity;
    let dt = cfg.dt;
    let hd = heat_multipliers(m, dt);
    let ht = heat_multipliers(m, cfg.placement.theta() * dt);
    let mut tr = GridTransform::for_cutoff(m);
    let n = tr.n_grid();
    let inv_n = 1.0 / n as f64;
    let mut replay = NoiseReplay::of(traj)?;

    let phi_g = tr.synthesize(phi)?;
    let u_s = &d.u[a];
    let x_s = &xs[a];
    let mut y1 = vec![0.0; m];
    let mut y2 = vec![0.0; m];
    let mut y3 = vec![0.0; m];
    let mut eta = vec![0.0; m];
    let mut v = vec![0.0; m];
    let mut px = vec![0.0; m];
    let mut prod = vec![0.0; m];
    let [mut ug, mut vg, mut xg, mut pxg, mut eg, mut y1g, mut y2g, mut y3g, mut work] =
        std::array::from_fn(|_| vec![0.0; n]);

    let mut terms = [0.0f64; 6];
    let mut k_total = 0.0;
    let mut out = Vec::with_capacity(ts.len());
    let record =
        |i: usize, terms: &[f64; 6], k_total: f64, out: &mut Vec<Decomposition>| -> Result<()> {
            for (j, &e) in ends.iter().enumerate() {
                if e == i {
                    let martingale =
                        martingale_increment(traj, phi, s, ts[j], DriftQuadrature::SchemeExact)?;
                    out.push(Decomposition {
                        s,
                        t: ts[j],
                        terms: *terms,
                        k_total,
                        martingale,
                    });
                }
            }
            Ok(())
        };

    for i in a..b {
        // sums so far cover steps a..i, i.e. the interval [s, i dt]
        record(i, &terms, k_total, &mut out)?;
        let lag = (i - a) as f64 * dt;
        let decay = heat_multipliers(m, lag);
        for j in 0..m {
            v[j] = decay[j] * u_s.coeffs()[j];
            px[j] = decay[j] * x_s.coeffs()[j];
        }
        replay.eta_into(d.start_step + i, &mut eta)?;
        tr.synthesize_into(d.u[i].coeffs(), &mut ug)?;
        tr.synthesize_into(&v, &mut vg)?;
        tr.synthesize_into(xs[i].coeffs(), &mut xg)?;
        tr.synthesize_into(&px, &mut pxg)?;
        tr.synthesize_into(&eta, &mut eg)?;
        tr.synthesize_into(&y1, &mut y1g)?;
        tr.synthesize_into(&y2, &mut y2g)?;
        tr.synthesize_into(&y3, &mut y3g)?;

        let mut step_terms = [0.0f64; 6];
        let mut step_total = 0.0;
        for j in 0..n {
            let (uj, vj, e, p) = (ug[j], vg[j], eg[j], phi_g[j]);
            let gv = g.g(vj);
            let dgv = g.dg(vj);
            let gdgv = gv * dgv;
            let y4 = y1g[j] + y3g[j];
            let big_g = averaged_derivative_at(&g, uj, vj);
            let pe = p * e;
            step_terms[0] += pe * gdgv * xg[j];
            step_terms[1] += pe * gv;
            step_terms[2] -= pe * gdgv * pxg[j];
            step_terms[3] += pe * dgv * (y1g[j] - gv * y2g[j]);
            step_terms[4] += pe * dgv * y3g[j];
            step_terms[5] += pe * (big_g - dgv) * y4;
            step_total += pe * g.g(uj);
        }
        for (acc, v) in terms.iter_mut().zip(step_terms) {
            *acc += v * inv_n;
        }
        k_total += step_total * inv_n;

        // J recursions, left-point integrands
        for j in 0..n {
            work[j] = g.g(vg[j]) * eg[j];
        }
        tr.analyze_into(&work, &mut prod)?;
        for j in 0..m {
            y1[j] = hd[j] * y1[j] + ht[j] * prod[j];
            y2[j] = hd[j] * y2[j] + ht[j] * eta[j];
        }
        for j in 0..n {
            work[j] = (g.g(ug[j]) - g.g(vg[j])) * eg[j];
        }
        tr.analyze_into(&work, &mut prod)?;
        for j in 0..m {
            y3[j] = hd[j] * y3[j] + ht[j] * prod[j];
        }
    }
    record(b, &terms, k_total, &mut out)?;
    out.sort_by(|p, q| p.t.total_cmp(&q.t));
    Ok(out)
}
