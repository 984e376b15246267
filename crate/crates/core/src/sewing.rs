//! Stochastic sewing on dyadic partitions of `[0, 1]`.
//!
//! A germ `A_{s,t}` is sewn at level `L` by summing it over the `2^L` dyadic
//! subintervals. The characterization check estimates the remainder
//! `R_{s,t} = cal(A)_t - cal(A)_s - A_{s,t}` over an ensemble of paths, both in `L_2`
//! (scaled by `|t - s|^{beta_1}`) and through its mean, which must vanish for
//! martingale germs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::solver::Trajectory;
use crate::spectral::{GridTransform, SpectralField};
use crate::stats::{lp_moment, mean_estimate};

/// Declared regularity of a germ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GermExponents {
    pub beta1: f64,
    pub beta2: f64,
    pub gamma1: f64,
    pub gamma2: f64,
}

/// A two-parameter process `A_{s,t}` evaluated on one path.
pub trait Germ {
    fn eval(&self, s: f64, t: f64) -> Result<f64>;
    fn exponents(&self) -> GermExponents;
}

/// Values of a sewn process on the level-`L` dyadic grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SewnPath {
    pub level: u32,
    pub values: Vec<f64>,
}

impl SewnPath {
    /// Value at the dyadic time `i / 2^level`.
    pub fn at(&self, i: usize) -> f64 {
        self.values[i]
    }

    pub fn last(&self) -> f64 {
        *self
            .values
            .last()
            .expect("sewn path has at least two points")
    }

    /// Value at time `t`, which must lie on the grid.
    pub fn at_time(&self, t: f64) -> Result<f64> {
        let scale = (1u64 << self.level) as f64;
        let i = (t * scale).round();
        if (i / scale - t).abs() > 1e-12 || !(0.0..=scale).contains(&i) {
            return Err(Error::BadTime {
                value: t,
                expected: "a point of the sewing grid",
            });
        }
        Ok(self.values[i as usize])
    }
}

/// Maximum sewing level.
pub const MAX_LEVEL: u32 = 14;

/// `cal(A)_t = sum of A over the level-L subintervals of [0, t]`.
pub fn sew(germ: &dyn Germ, level: u32) -> Result<SewnPath> {
    if level > MAX_LEVEL {
        return Err(Error::param(
            "level",
            format!("must be at most {MAX_LEVEL}"),
        ));
    }
    let n = 1usize << level;
    let h = 1.0 / n as f64;
    let mut values = Vec::with_capacity(n + 1);
    values.push(0.0);
    let mut acc = 0.0;
    for i in 0..n {
        let (s, t) = (i as f64 * h, (i + 1) as f64 * h);
        acc += germ.eval(s, t)?;
        values.push(acc);
    }
    Ok(SewnPath { level, values })
}

/// `A_{s,t} = h(t) - h(s)`.
pub struct AdditiveGerm<F: Fn(f64) -> f64> {
    pub h: F,
}

impl<F: Fn(f64) -> f64> Germ for AdditiveGerm<F> {
    fn eval(&self, s: f64, t: f64) -> Result<f64> {
        Ok((self.h)(t) - (self.h)(s))
    }

    fn exponents(&self) -> GermExponents {
        GermExponents {
            beta1: f64::INFINITY,
            beta2: f64::INFINITY,
            gamma1: 0.0,
            gamma2: 0.0,
        }
    }
}

/// `A_{s,t} = (t - s)^beta`.
pub struct PowerGerm {
    pub beta: f64,
}

impl Germ for PowerGerm {
    fn eval(&self, s: f64, t: f64) -> Result<f64> {
        Ok((t - s).powf(self.beta))
    }

    fn exponents(&self) -> GermExponents {
        GermExponents {
            beta1: self.beta,
            beta2: self.beta,
            gamma1: 1.0,
            gamma2: 1.0,
        }
    }
}

/// Values of a process on the level-`L` dyadic grid, looked up by time.
#[derive(Debug, Clone, PartialEq)]
pub struct DyadicSeries {
    pub level: u32,
    pub values: Vec<f64>,
}

impl DyadicSeries {
    pub fn new(level: u32, values: Vec<f64>) -> Result<Self> {
        if values.len() != (1usize << level) + 1 {
            return Err(Error::param("values", "need 2^level + 1 grid values"));
        }
        Ok(Self { level, values })
    }

    pub fn index(&self, t: f64) -> Result<usize> {
        let scale = (1u64 << self.level) as f64;
        let i = (t * scale).round();
        if (i / scale - t).abs() > 1e-12 || !(0.0..=scale).contains(&i) {
            return Err(Error::BadTime {
                value: t,
                expected: "a point of the dyadic grid",
            });
        }
        Ok(i as usize)
    }

    pub fn at(&self, t: f64) -> Result<f64> {
        Ok(self.values[self.index(t)?])
    }
}

/// Brownian path on the level-`L` grid from the stream, `W_0 = 0`.
pub fn brownian_path(stream: &crate::noise::RngStream, level: u32) -> DyadicSeries {
    let n = 1usize << level;
    let dt = 1.0 / n as f64;
    let mut inc = crate::noise::BrownianIncrements::zeros(1, dt).expect("positive dt");
    let mut w = Vec::with_capacity(n + 1);
    w.push(0.0);
    for i in 0..n {
        inc.fill_from(stream, i as u64);
        w.push(w[i] + inc.dw()[0]);
    }
    DyadicSeries { level, values: w }
}

/// Ito germ `A_{s,t} = W_s (W_t - W_s)`; sews to `int W dW = (W_1^2 - 1)/2`.
pub struct ItoGerm {
    pub w: DyadicSeries,
}

impl Germ for ItoGerm {
    fn eval(&self, s: f64, t: f64) -> Result<f64> {
        let ws = self.w.at(s).map_err(|e| Error::Germ {
            s,
            t,
            reason: e.to_string(),
        })?;
        let wt = self.w.at(t).map_err(|e| Error::Germ {
            s,
            t,
            reason: e.to_string(),
        })?;
        Ok(ws * (wt - ws))
    }

    fn exponents(&self) -> GermExponents {
        GermExponents {
            beta1: 1.0,
            beta2: f64::INFINITY,
            gamma1: 1.0,
            gamma2: 0.0,
        }
    }
}

/// `A_{s,t} = c sum_n (g'g(u_s) e_n, phi)(beta^n_t - beta^n_s)`.
#[derive(Debug, Clone)]
pub struct FrozenGerm {
    pub level: u32,
    pub modes: Vec<usize>,
    /// `coeffs[i][j] = c (g'g(u_{t_i}) e_{modes[j]}, phi)` at the grid time `t_i`.
    coeffs: Vec<Vec<f64>>,
    /// `beta[j][i]` at the grid time `t_i`.
    beta: Vec<Vec<f64>>,
}

impl FrozenGerm {
    /// Builds the germ from a trajectory saved at every point of a dyadic grid of `[0, 1]`.
    pub fn new(traj: &Trajectory, phi: &SpectralField, coefficient: f64) -> Result<Self> {
        let beta = traj.beta.as_ref().ok_or(Error::MissingChannel("beta"))?;
        let n = traj.times.len().saturating_sub(1);
        if n == 0 || !n.is_power_of_two() || (traj.times[n] - 1.0).abs() > 1e-12 {
            return Err(Error::MissingChannel(
                "snapshots on a dyadic grid of [0, 1]",
            ));
        }
        let level = n.trailing_zeros();
        for (i, t) in traj.times.iter().enumerate() {
            if (t - i as f64 / n as f64).abs() > 1e-12 {
                return Err(Error::MissingChannel(
                    "snapshots on a dyadic grid of [0, 1]",
                ));
            }
        }
        let m = traj.config.mode_cutoff;
        if phi.mode_cutoff() != m {
            return Err(Error::CutoffMismatch {
                left: phi.mode_cutoff(),
                right: m,
            });
        }
        let g = traj.config.nonlinearity;
        let mut tr = GridTransform::for_cutoff(m);
        let phi_g = tr.synthesize(phi)?;
        let mut ug = vec![0.0; tr.n_grid()];
        let mut coeffs = Vec::with_capacity(n + 1);
        for u in &traj.u {
            tr.synthesize_into(u.coeffs(), &mut ug)?;
            for (v, p) in ug.iter_mut().zip(&phi_g) {
                *v = g.gdg(*v) * p;
            }
            let h = tr.analyze(&ug, m)?;
            coeffs.push(
                beta.modes
                    .iter()
                    .map(|&k| coefficient * h.coeff(k))
                    .collect(),
            );
        }
        Ok(Self {
            level,
            modes: beta.modes.clone(),
            coeffs,
            beta: beta.values.clone(),
        })
    }

    fn index(&self, t: f64) -> Option<usize> {
        let scale = (1u64 << self.level) as f64;
        let i = (t * scale).round();
        ((i / scale - t).abs() <= 1e-12 && (0.0..=scale).contains(&i)).then_some(i as usize)
    }

    /// Running sum over every grid step: the unfrozen left-point Ito sum.
    pub fn direct_sum(&self) -> Vec<f64> {
        let n = 1usize << self.level;
        let mut out = Vec::with_capacity(n + 1);
        out.push(0.0);
        let mut acc = 0.0;
        for i in 0..n {
            acc += self.coeffs[i]
                .iter()
                .zip(&self.beta)
                .map(|(c, b)| c * (b[i + 1] - b[i]))
                .sum::<f64>();
            out.push(acc);
        }
        out
    }
}

impl Germ for FrozenGerm {
    fn eval(&self, s: f64, t: f64) -> Result<f64> {
        let (i, j) = match (self.index(s), self.index(t)) {
            (Some(i), Some(j)) if i <= j => (i, j),
            _ => {
                return Err(Error::Germ {
                    s,
                    t,
                    reason: "times must be ordered points of the recorded grid".into(),
                })
            }
        };
        Ok(self.coeffs[i]
            .iter()
            .zip(&self.beta)
            .map(|(c, b)| c * (b[j] - b[i]))
            .sum())
    }

    fn exponents(&self) -> GermExponents {
        GermExponents {
            beta1: 0.625,
            beta2: f64::INFINITY,
            gamma1: f64::NAN,
            gamma2: 0.0,
        }
    }
}

/// `sqrt(E|cal(A)^{(L+1)}_1 - cal(A)^{(L)}_1|^2)` over an ensemble, for each `L` in `levels`.
pub fn level_gaps(
    germs: &[&dyn Germ],
    levels: std::ops::RangeInclusive<u32>,
) -> Result<Vec<(u32, f64)>> {
    let mut out = Vec::new();
    for l in levels {
        let mut diffs = Vec::with_capacity(germs.len());
        for g in germs {
            diffs.push(sew(*g, l + 1)?.last() - sew(*g, l)?.last());
        }
        out.push((l, lp_moment(&diffs, 2.0)?.value));
    }
    Ok(out)
}

/// Tail bound `G_L r / (1 - r)` of the remaining level gaps under geometric decay with ratio `r`.
pub fn level_gap_tail_bound(gap: f64, ratio: f64) -> f64 {
    gap * ratio / (1.0 - ratio)
}

/// Thresholds of the characterization check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CharacterizationTolerance {
    /// Largest dyadic level probed (pairs with `t - s = 2^{-l}`, `l <= max_level`).
    pub max_level: u32,
    /// Allowed growth of the `L_2` ratio between the coarse half and the full level range.
    pub refinement_growth: f64,
    /// Largest admissible `|mean| / standard error` of a remainder.
    pub mean_z: f64,
}

impl Default for CharacterizationTolerance {
    fn default() -> Self {
        Self {
            max_level: 6,
            refinement_growth: 2.0,
            mean_z: 4.5,
        }
    }
}

/// Outcome of [`characterization_check`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharacterizationReport {
    /// `sup_{pairs at level l} ||R_{s,t}||_{L_2} / |t-s|^{beta_1}` per level.
    pub ratio_by_level: Vec<f64>,
    /// Largest `|mean(R_{s,t})| / SE` over all probed pairs.
    pub max_mean_z: f64,
    pub ratio_finite: bool,
    pub ratio_stable: bool,
    pub mean_ok: bool,
    pub pass: bool,
}

/// Checks candidate paths (one per germ, each on a dyadic grid of `[0, 1]`) against the
/// sewing bounds of the germs.
pub fn characterization_check(
    candidates: &[DyadicSeries],
    germs: &[&dyn Germ],
    tol: CharacterizationTolerance,
) -> Result<CharacterizationReport> {
    if candidates.len() != germs.len() {
        return Err(Error::param("germs", "need one germ per candidate path"));
    }
    if candidates.len() < 2 {
        return Err(Error::TooFewPaths {
            got: candidates.len(),
            need: 2,
        });
    }
    let beta1 = germs[0].exponents().beta1;
    let mut ratio_by_level = Vec::new();
    let mut max_mean_z: f64 = 0.0;
    let mut rem = vec![0.0; candidates.len()];
    for l in 0..=tol.max_level {
        let n = 1usize << l;
        let h = 1.0 / n as f64;
        let mut worst: f64 = 0.0;
        for i in 0..n {
            let (s, t) = (i as f64 * h, (i + 1) as f64 * h);
            for ((r, c), g) in rem.iter_mut().zip(candidates).zip(germs) {
                *r = c.at(t)? - c.at(s)? - g.eval(s, t)?;
            }
            worst = worst.max(lp_moment(&rem, 2.0)?.value / h.powf(beta1));
            let n_paths = rem.len() as f64;
            let mean = rem.iter().sum::<f64>() / n_paths;
            let sd = (rem.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n_paths - 1.0)).sqrt();
            let se = sd / n_paths.sqrt();
            let z = if se > 0.0 {
                mean.abs() / se
            } else if mean.abs() > 1e-14 {
                f64::INFINITY
            } else {
                0.0
            };
            max_mean_z = max_mean_z.max(z);
        }
        ratio_by_level.push(worst);
    }
    let ratio_finite = ratio_by_level.iter().all(|r| r.is_finite());
    let half = ratio_by_level.len().div_ceil(2);
    let coarse = ratio_by_level[..half].iter().copied().fold(0.0, f64::max);
    let all = ratio_by_level.iter().copied().fold(0.0, f64::max);
    let ratio_stable = all <= tol.refinement_growth * coarse.max(1e-300) || all == 0.0;
    let mean_ok = max_mean_z <= tol.mean_z;
    Ok(CharacterizationReport {
        ratio_by_level,
        max_mean_z,
        ratio_finite,
        ratio_stable,
        mean_ok,
        pass: ratio_finite && ratio_stable && mean_ok,
    })
}

/// Mean of the sewn endpoint over an ensemble, with its interval.
pub fn sewn_endpoint_mean(germs: &[&dyn Germ], level: u32) -> Result<crate::stats::Estimate> {
    let v: Vec<f64> = germs
        .iter()
        .map(|g| sew(*g, level).map(|p| p.last()))
        .collect::<Result<_>>()?;
    mean_estimate(&v)
}
