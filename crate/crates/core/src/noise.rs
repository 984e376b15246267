//! Cylindrical Wiener noise on the `e_n` basis and its gradient mollification.
//!
//! A stream is keyed by `(master_seed, path_index)`; the draws for step `i`
//! start at a fixed offset in the ChaCha keystream, so any step can be
//! replayed without regenerating its predecessors.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{apply_gradient, apply_heat, wavenumber, SpectralField};

/// Keystream words reserved per step (allows up to 2^19 normals per step).
const WORDS_PER_STEP: u128 = 1 << 20;

/// Counter-based random stream owned by one path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngStream {
    pub master_seed: u64,
    pub path_index: u64,
    pub step_counter: u64,
}

impl RngStream {
    pub fn new(master_seed: u64, path_index: u64) -> Self {
        Self {
            master_seed,
            path_index,
            step_counter: 0,
        }
    }

    /// Same stream positioned at `step`.
    pub fn at_step(self, step: u64) -> Self {
        Self {
            step_counter: step,
            ..self
        }
    }

    /// Generator positioned at the start of the block for `step`.
    pub fn rng_for_step(&self, step: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(self.path_index);
        rng.set_word_pos(step as u128 * WORDS_PER_STEP);
        rng
    }
}

/// One time step of the Brownian motions `w^1, ..., w^M`.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianIncrements {
    dw: Vec<f64>,
    dt: f64,
}

impl BrownianIncrements {
    pub fn new(dw: Vec<f64>, dt: f64) -> Result<Self> {
        check_dt(dt)?;
        if dw.is_empty() {
            return Err(Error::param("dw", "mode cutoff must be at least 1"));
        }
        if dw.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("dw", "increments must be finite"));
        }
        Ok(Self { dw, dt })
    }

    pub fn zeros(m: usize, dt: f64) -> Result<Self> {
        Self::new(vec![0.0; m], dt)
    }

    pub fn dw(&self) -> &[f64] {
        &self.dw
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn mode_cutoff(&self) -> usize {
        self.dw.len()
    }

    /// Redraws in place for `step` of `stream` without allocating.
    pub fn fill_from(&mut self, stream: &RngStream, step: u64) {
        let mut rng = stream.rng_for_step(step);
        let sd = self.dt.sqrt();
        for v in self.dw.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v = sd * z;
        }
    }

    /// The increments as a spectral field `sum_m dw_m e_m`.
    pub fn as_field(&self) -> SpectralField {
        SpectralField::from_coeffs(self.dw.clone()).expect("increments are finite and nonempty")
    }
}

fn check_dt(dt: f64) -> Result<()> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::param("dt", "time step must be finite and > 0"));
    }
    Ok(())
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::param("epsilon", "must be finite and > 0"));
    }
    Ok(())
}

/// Draws the increments for the current step and advances the counter.
pub fn sample_increments(stream: &mut RngStream, m: usize, dt: f64) -> Result<BrownianIncrements> {
    let mut inc = BrownianIncrements::zeros(m, dt)?;
    inc.fill_from(stream, stream.step_counter);
    stream.step_counter += 1;
    Ok(inc)
}

/// Replays the increments of `step` without touching any counter.
pub fn replay_increments(
    stream: &RngStream,
    step: u64,
    m: usize,
    dt: f64,
) -> Result<BrownianIncrements> {
    let mut inc = BrownianIncrements::zeros(m, dt)?;
    inc.fill_from(stream, step);
    Ok(inc)
}

/// Multiplier of `grad P_{eps^2}` on the pair of wavenumber `k`: `2 pi k exp(-4 pi^2 k^2 eps^2)`.
pub fn grad_mollifier_multiplier(k: usize, eps: f64) -> f64 {
    let w = 2.0 * PI * k as f64;
    w * (-w * w * eps * eps).exp()
}

/// `grad P_{eps^2} f`.
pub fn grad_mollifier_action(field: &SpectralField, eps: f64) -> Result<SpectralField> {
    check_eps(eps)?;
    Ok(apply_gradient(&apply_heat(field, eps * eps)?))
}

/// Discrete Ito pairing `sum_m h_m dw_m`.
pub fn white_noise_pairing(h: &SpectralField, inc: &BrownianIncrements) -> Result<f64> {
    if h.mode_cutoff() != inc.mode_cutoff() {
        return Err(Error::CutoffMismatch {
            left: h.mode_cutoff(),
            right: inc.mode_cutoff(),
        });
    }
    Ok(h.coeffs().iter().zip(inc.dw()).map(|(a, b)| a * b).sum())
}

/// One-step increment of the noise `eps^{3/4} grad xi_eps` as a field `eta`.
///
/// `eta = -eps^{3/4} grad P_{eps^2} W` with `W = sum_m dw_m e_m`, so that
/// `(f, eta) = eps^{3/4} sum_m (grad P_{eps^2} f, e_m) dw_m` for every band-limited `f`.
pub fn gradient_noise_field(inc: &BrownianIncrements, eps: f64) -> Result<SpectralField> {
    let mut out = SpectralField::zeros(inc.mode_cutoff());
    gradient_noise_into(inc.dw(), eps, out.coeffs_mut())?;
    Ok(out)
}

/// Allocation-free form of [`gradient_noise_field`].
pub fn gradient_noise_into(dw: &[f64], eps: f64, out: &mut [f64]) -> Result<()> {
    check_eps(eps)?;
    let m = dw.len();
    assert_eq!(out.len(), m);
    out.iter_mut().for_each(|v| *v = 0.0);
    let amp = eps.powf(0.75);
    let mut k = 1;
    while 2 * k < m {
        let c = amp * grad_mollifier_multiplier(k, eps);
        // -grad maps sin -> -cos and cos -> +sin on the pair
        out[2 * k] = -c * dw[2 * k - 1];
        out[2 * k - 1] = c * dw[2 * k];
        k += 1;
    }
    Ok(())
}

/// Noise families whose bracket norm is available in closed form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BracketKind {
    /// `eps^{3/4} grad xi_eps`
    GradMollified { epsilon: f64 },
    /// `(-Laplacian)^{1/4} xi_eps`
    FractionalQuarter { epsilon: f64 },
}

impl BracketKind {
    pub fn epsilon(&self) -> f64 {
        match *self {
            Self::GradMollified { epsilon } | Self::FractionalQuarter { epsilon } => epsilon,
        }
    }

    /// `||zeta(1_{[s, s+n^{-2}]} (x) e_n)||_{L_2(Omega)}`, independent of `s`.
    pub fn cell_value(&self, n: usize) -> f64 {
        let k = wavenumber(n);
        let nf = n as f64;
        match *self {
            Self::GradMollified { epsilon } => {
                epsilon.powf(0.75) * grad_mollifier_multiplier(k, epsilon) / nf
            }
            Self::FractionalQuarter { epsilon } => {
                let w = 2.0 * PI * k as f64;
                w.sqrt() * (-w * w * epsilon * epsilon).exp() / nf
            }
        }
    }
}

/// Mode scan limit for the bracket norm.
pub fn bracket_scan_limit(eps: f64) -> usize {
    64usize.max((10.0 / eps - 1e-9).ceil() as usize)
}

/// `sup_n n^alpha * cell(n)` over `n <= max(64, ceil(10/eps))`.
pub fn bracket_norm(kind: BracketKind, alpha: f64) -> Result<f64> {
    let eps = kind.epsilon();
    check_eps(eps)?;
    if !alpha.is_finite() {
        return Err(Error::param("alpha", "must be finite"));
    }
    Ok(bracket_norm_scan(kind, alpha, bracket_scan_limit(eps)))
}

/// Bracket norm with an explicit scan limit.
pub fn bracket_norm_scan(kind: BracketKind, alpha: f64, n_max: usize) -> f64 {
    (1..=n_max)
        .map(|n| (n as f64).powf(alpha) * kind.cell_value(n))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn nonpositive_dt_rejected() {
        let mut s = RngStream::new(1, 0);
        assert!(sample_increments(&mut s, 4, 0.0).is_err());
        assert!(sample_increments(&mut s, 4, -1.0).is_err());
        assert_eq!(s.step_counter, 0);
    }

    #[test]
    fn replay_is_bit_identical_and_counter_advances() {
        let mut s = RngStream::new(42, 3);
        let a = sample_increments(&mut s, 16, 1e-3).unwrap();
        let b = sample_increments(&mut s, 16, 1e-3).unwrap();
        assert_eq!(s.step_counter, 2);
        assert_ne!(a, b);
        assert_eq!(replay_increments(&s, 0, 16, 1e-3).unwrap(), a);
        assert_eq!(replay_increments(&s, 1, 16, 1e-3).unwrap(), b);
        // prefix property: fewer modes read the same leading draws
        let short = replay_increments(&s, 1, 5, 1e-3).unwrap();
        assert_eq!(short.dw(), &b.dw()[..5]);
    }

    #[test]
    fn distinct_paths_differ() {
        let a = replay_increments(&RngStream::new(7, 0), 0, 8, 1.0).unwrap();
        let b = replay_increments(&RngStream::new(7, 1), 0, 8, 1.0).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn mode_one_variance_lln() {
        let dt = 1e-3;
        let k = 1_000_000u64;
        let s = RngStream::new(2024, 0);
        let mut inc = BrownianIncrements::zeros(1, dt).unwrap();
        let (mut s1, mut s2) = (0.0, 0.0);
        for step in 0..k {
            inc.fill_from(&s, step);
            let v = inc.dw()[0];
            s1 += v;
            s2 += v * v;
        }
        let mean = s1 / k as f64;
        let var = s2 / k as f64 - mean * mean;
        // sd of the sample variance of N(0, dt) is dt sqrt(2/K); the tolerance is 3 dt / sqrt(K)
        assert!((var - dt).abs() < 3.0 * dt / (k as f64).sqrt(), "var {var}");
    }

    #[test]
    fn ito_isometry_and_linearity_probe() {
        let m = 5;
        let h = SpectralField::from_coeffs(vec![0.0, 1.0, 1.0, 0.0, 0.0]).unwrap();
        let dt = 1e-2;
        let k = 100_000u64;
        let s = RngStream::new(9, 0);
        let mut inc = BrownianIncrements::zeros(m, dt).unwrap();
        let mut s2 = 0.0;
        for step in 0..k {
            inc.fill_from(&s, step);
            s2 += white_noise_pairing(&h, &inc).unwrap().powi(2);
        }
        let var = s2 / k as f64;
        assert!((var / 2e-2 - 1.0).abs() < 0.05, "var {var}");

        let ones = BrownianIncrements::new(vec![1.0; m], dt).unwrap();
        let h = SpectralField::from_coeffs(vec![0.5, -2.0, 3.0, 0.25, 1.0]).unwrap();
        assert_abs_diff_eq!(white_noise_pairing(&h, &ones).unwrap(), 2.75);
        assert_eq!(
            white_noise_pairing(&SpectralField::zeros(m), &ones).unwrap(),
            0.0
        );
        assert!(matches!(
            white_noise_pairing(&SpectralField::zeros(4), &ones),
            Err(Error::CutoffMismatch { left: 4, right: 5 })
        ));
    }

    #[test]
    fn orthogonal_pairings_uncorrelated() {
        let m = 9;
        let dt = 1e-2;
        let h1 =
            SpectralField::from_coeffs(vec![1.0, 0.5, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0]).unwrap();
        let h2 =
            SpectralField::from_coeffs(vec![0.0, 0.0, 2.0, 0.0, 1.0, 0.0, 0.0, 0.3, 0.0]).unwrap();
        assert_eq!(h1.dot(&h2), 0.0);
        let k = 100_000u64;
        let s = RngStream::new(77, 4);
        let mut inc = BrownianIncrements::zeros(m, dt).unwrap();
        let mut cov = 0.0;
        for step in 0..k {
            inc.fill_from(&s, step);
            cov +=
                white_noise_pairing(&h1, &inc).unwrap() * white_noise_pairing(&h2, &inc).unwrap();
        }
        cov /= k as f64;
        let tol = 5.0 / (k as f64).sqrt() * h1.norm_l2() * h2.norm_l2() * dt;
        assert!(cov.abs() < tol, "cov {cov} tol {tol}");
    }

    #[test]
    fn grad_mollifier_examples() {
        let eps = 0.1;
        let g = grad_mollifier_action(&SpectralField::unit(5, 2), eps).unwrap();
        assert_abs_diff_eq!(
            g.coeff(3),
            2.0 * PI * (-4.0 * PI * PI * eps * eps).exp(),
            epsilon = 1e-14
        );
        assert!(
            grad_mollifier_action(&SpectralField::unit(5, 1), eps)
                .unwrap()
                .norm_l2()
                == 0.0
        );
        assert!(grad_mollifier_action(&SpectralField::unit(5, 1), 0.0).is_err());
    }

    #[test]
    fn grad_mollifier_peak_location() {
        for &eps in &[0.05, 0.02, 0.01] {
            let m = 2 * (3.0 / eps) as usize + 1;
            let best = (1..m / 2)
                .max_by(|&a, &b| {
                    let na = grad_mollifier_action(&SpectralField::unit(m, 2 * a), eps)
                        .unwrap()
                        .norm_l2();
                    let nb = grad_mollifier_action(&SpectralField::unit(m, 2 * b), eps)
                        .unwrap()
                        .norm_l2();
                    na.partial_cmp(&nb).unwrap()
                })
                .unwrap();
            let kstar = 1.0 / (2.0 * PI * eps * 2f64.sqrt());
            assert!(
                (best as f64 - kstar).abs() <= 1.0,
                "eps {eps}: {best} vs {kstar}"
            );
        }
    }

    #[test]
    fn noise_field_pairing_identity() {
        let m = 13;
        let eps = 0.15;
        let inc = replay_increments(&RngStream::new(5, 5), 0, m, 1e-3).unwrap();
        let eta = gradient_noise_field(&inc, eps).unwrap();
        for n in 1..=m {
            let f = SpectralField::unit(m, n);
            let lhs = f.dot(&eta);
            let rhs = eps.powf(0.75)
                * white_noise_pairing(&grad_mollifier_action(&f, eps).unwrap(), &inc).unwrap();
            assert!((lhs - rhs).abs() < 1e-15, "n={n}");
        }
    }

    #[test]
    fn bracket_cell_matches_monte_carlo() {
        // brute force: pair e_n against the noise over one step of length n^{-2}
        for &(eps, n) in &[(0.1, 4usize), (0.05, 9), (0.2, 3)] {
            let kind = BracketKind::GradMollified { epsilon: eps };
            let m = n + 2;
            let dt = 1.0 / (n * n) as f64;
            let k = 20_000u64;
            let s = RngStream::new(31, n as u64);
            let mut inc = BrownianIncrements::zeros(m, dt).unwrap();
            let f = SpectralField::unit(m, n);
            let mut s2 = 0.0;
            let mut s4 = 0.0;
            for step in 0..k {
                inc.fill_from(&s, step);
                let eta = gradient_noise_field(&inc, eps).unwrap();
                let v = f.dot(&eta).powi(2);
                s2 += v;
                s4 += v * v;
            }
            let mean = s2 / k as f64;
            let se = ((s4 / k as f64 - mean * mean) / k as f64).sqrt();
            let exact = kind.cell_value(n).powi(2);
            assert!(
                (mean - exact).abs() < 3.0 * se,
                "eps {eps} n {n}: {mean} vs {exact}"
            );
        }
    }

    #[test]
    fn bracket_norm_scan_is_saturated() {
        for &eps in &[0.2, 0.05] {
            for kind in [
                BracketKind::GradMollified { epsilon: eps },
                BracketKind::FractionalQuarter { epsilon: eps },
            ] {
                for &alpha in &[-1.75, 0.0, 1.75] {
                    let v = bracket_norm(kind, alpha).unwrap();
                    let wide = bracket_norm_scan(kind, alpha, 4 * bracket_scan_limit(eps));
                    assert!((v - wide).abs() <= 1e-12 * wide, "{kind:?} {alpha}");
                }
            }
        }
    }

    #[test]
    fn bracket_norm_literal_scaling() {
        // with the literal definition the gradient family at alpha = -7/4 is attained at n = 2 and
        // vanishes like eps^{3/4}; at alpha = +7/4 it grows like 1/eps
        let g = |eps: f64, a: f64| {
            bracket_norm(BracketKind::GradMollified { epsilon: eps }, a).unwrap()
        };
        let ratio_neg = g(0.025, -1.75) / g(0.05, -1.75);
        let want = 0.5f64.powf(0.75) * (4.0 * PI * PI * (0.05f64.powi(2) - 0.025f64.powi(2))).exp();
        assert!((ratio_neg / want - 1.0).abs() < 1e-12, "{ratio_neg}");
        let ratio_pos = g(0.025, 1.75) / g(0.05, 1.75);
        assert!((ratio_pos - 2.0).abs() < 0.15, "{ratio_pos}");
        let f = |eps: f64| {
            bracket_norm(BracketKind::FractionalQuarter { epsilon: eps }, -1.75).unwrap()
        };
        assert!((f(0.0125) / f(0.025) - 1.0).abs() < 0.05);
        assert!(f(0.0125) > 0.01);
        assert!(bracket_norm(BracketKind::GradMollified { epsilon: -0.1 }, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn grad_mollifier_linear_and_commutes_with_heat(
            a in proptest::collection::vec(-2.0f64..2.0, 11),
            b in proptest::collection::vec(-2.0f64..2.0, 11),
            c in -3.0f64..3.0,
            t in 0.0f64..0.05,
            eps in 0.01f64..0.5,
        ) {
            let fa = SpectralField::from_coeffs(a).unwrap();
            let fb = SpectralField::from_coeffs(b).unwrap();
            let mut lin = fa.clone();
            lin.axpy(c, &fb);
            let mut rhs = grad_mollifier_action(&fa, eps).unwrap();
            rhs.axpy(c, &grad_mollifier_action(&fb, eps).unwrap());
            let lhs = grad_mollifier_action(&lin, eps).unwrap();
            prop_assert!(lhs.max_abs_diff(&rhs) < 1e-11);
            let x = apply_heat(&grad_mollifier_action(&fa, eps).unwrap(), t).unwrap();
            let y = grad_mollifier_action(&apply_heat(&fa, t).unwrap(), eps).unwrap();
            prop_assert!(x.max_abs_diff(&y) < 1e-12);
        }

        #[test]
        fn same_triple_same_draws(seed in any::<u64>(), path in 0u64..1000, step in 0u64..1_000_000) {
            let s = RngStream::new(seed, path);
            let a = replay_increments(&s, step, 6, 0.5).unwrap();
            let b = replay_increments(&s.at_step(step), step, 6, 0.5).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
