//! Closed-form constants of the renormalised limit, each paired with an
//! independently computed oracle.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::heat_deriv_l2norm_sq;

/// Variance rate of the limiting Brownian motions, `(64 sqrt(pi))^{-1}`.
pub fn c0() -> f64 {
    1.0 / (64.0 * PI.sqrt())
}

/// Coefficient of `g'g(u) xi` in the limit equation, `(8 pi^{1/4})^{-1}`.
pub fn limit_coefficient() -> f64 {
    1.0 / (8.0 * PI.powf(0.25))
}

/// The alternative coefficient `(4 pi^{1/4})^{-1}` appearing in the solution definition.
pub fn alternative_limit_coefficient() -> f64 {
    1.0 / (4.0 * PI.powf(0.25))
}

/// `integral_R x^4 exp(-8 pi^2 x^2) dx = 3 / (512 sqrt(2) pi^{9/2})`.
pub fn gaussian_x4_integral() -> f64 {
    3.0 / (512.0 * 2f64.sqrt() * PI.powf(4.5))
}

/// Same integral by the standard moment `(3/4) sqrt(pi) a^{-5/2}` with `a = 8 pi^2`.
pub fn gaussian_x4_by_moment() -> f64 {
    let a = 8.0 * PI * PI;
    0.75 * PI.sqrt() * a.powf(-2.5)
}

/// Same integral by adaptive Simpson quadrature on `[-1, 1]` (the tail is below 1e-33).
pub fn gaussian_x4_quadrature() -> f64 {
    let f = |x: f64| x.powi(4) * (-8.0 * PI * PI * x * x).exp();
    2.0 * adaptive_simpson(&f, 0.0, 1.0, 1e-17, 60)
}

/// Leading constant of `||grad^2 P_t||^2_{L_2} ~ C t^{-5/2}`: `3 / (32 sqrt(2 pi))`.
pub fn heat_norm_leading_constant() -> f64 {
    3.0 / (32.0 * (2.0 * PI).sqrt())
}

/// `|mode sum - leading term| * t^2` for `||grad^2 P_t||^2`.
pub fn heat_norm_asymptotic_error(t: f64) -> Result<f64> {
    let direct = heat_deriv_l2norm_sq(2, t)?;
    Ok((direct - heat_norm_leading_constant() * t.powf(-2.5)).abs() * t * t)
}

/// Relative deviation of the leading term from the mode sum.
pub fn heat_norm_relative_error(t: f64) -> Result<f64> {
    let direct = heat_deriv_l2norm_sq(2, t)?;
    Ok((direct - heat_norm_leading_constant() * t.powf(-2.5)).abs() / direct)
}

/// `c0` through the chain `eps^3 integral_0^inf C (2 eps^2 + tau)^{-5/2} d tau`, by quadrature.
///
/// The result does not depend on `eps`; the substitution `tau = 2 eps^2 (1/v - 1)` maps the
/// half line onto `(0, 1]`.
pub fn c0_by_chain(eps: f64) -> Result<f64> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::param("epsilon", "must be finite and > 0"));
    }
    let a = 2.0 * eps * eps;
    let h = heat_norm_leading_constant();
    // d tau = a v^{-2} dv and (a + tau) = a / v
    let f = |v: f64| {
        if v == 0.0 {
            0.0
        } else {
            h * (a / v).powf(-2.5) * a / (v * v)
        }
    };
    Ok(eps.powi(3) * adaptive_simpson(&f, 0.0, 1.0, 1e-16, 60))
}

/// `int_0^1 Var <X_eps (-Laplacian)^{gamma/2} xi_eps, 1>`-type spectral sum:
/// `sum_{k>=1} 2 mu^{2 gamma} e^{-4 mu eps^2} int_0^1 (1 - e^{-2 mu t}) / (2 mu) dt`, `mu = (2 pi k)^2`.
pub fn variance_blowup(gamma: f64, eps: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::param("gamma", "must lie in [0, 1]"));
    }
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::param("epsilon", "must be finite and > 0"));
    }
    let mut sum = 0.0;
    let mut k = 1u64;
    loop {
        let mu = (2.0 * PI * k as f64).powi(2);
        let x = 2.0 * mu;
        // int_0^1 (1 - e^{-x t}) dt = 1 - (1 - e^{-x}) / x
        let time_integral = 1.0 - (-(-x).exp_m1()) / x;
        let term = 2.0 * mu.powf(2.0 * gamma) * (-4.0 * mu * eps * eps).exp() * time_integral / x;
        sum += term;
        if (term < 1e-17 * sum && 4.0 * mu * eps * eps > 2.0 * gamma * mu.ln()) || term == 0.0 {
            break;
        }
        k += 1;
    }
    Ok(sum)
}

/// One row of the constants table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantReport {
    pub name: String,
    pub closed_form: f64,
    pub oracle: f64,
    pub relative_difference: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl ConstantReport {
    pub fn new(name: &str, closed_form: f64, oracle: f64, tolerance: f64) -> Self {
        let relative_difference = ((closed_form - oracle) / closed_form).abs();
        Self {
            name: name.to_string(),
            closed_form,
            oracle,
            relative_difference,
            tolerance,
            pass: relative_difference <= tolerance,
        }
    }
}

/// All closed-form constants with their oracles.
pub fn constant_report() -> Vec<ConstantReport> {
    let t: f64 = 1e-4;
    vec![
        ConstantReport::new(
            "c0 vs limit_coefficient^2",
            c0(),
            limit_coefficient().powi(2),
            1e-15,
        ),
        ConstantReport::new(
            "c0 vs heat-norm chain",
            c0(),
            c0_by_chain(0.1).expect("valid epsilon"),
            1e-10,
        ),
        ConstantReport::new(
            "gaussian_x4 vs quadrature",
            gaussian_x4_integral(),
            gaussian_x4_quadrature(),
            1e-12,
        ),
        ConstantReport::new(
            "gaussian_x4 vs moment formula",
            gaussian_x4_integral(),
            gaussian_x4_by_moment(),
            1e-14,
        ),
        ConstantReport::new(
            "heat constant vs (2pi)^4 gaussian_x4",
            heat_norm_leading_constant(),
            (2.0 * PI).powi(4) * gaussian_x4_integral(),
            1e-14,
        ),
        ConstantReport::new(
            "heat norm leading term at t=1e-4",
            heat_norm_leading_constant() * t.powf(-2.5),
            heat_deriv_l2norm_sq(2, t).expect("valid time"),
            0.02,
        ),
    ]
}

fn simpson(f: &impl Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
    let m = 0.5 * (a + b);
    let fm = f(m);
    ((b - a) / 6.0 * (fa + 4.0 * fm + fb), m, fm)
}

/// Adaptive Simpson quadrature with Richardson correction.
pub fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64, max_depth: u32) -> f64 {
    let fa = f(a);
    let fb = f(b);
    let (whole, m, fm) = simpson(f, a, fa, b, fb);
    simpson_rec(f, a, fa, b, fb, whole, m, fm, tol, max_depth)
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec(
    f: &impl Fn(f64) -> f64,
    a: f64,
    fa: f64,
    b: f64,
    fb: f64,
    whole: f64,
    m: f64,
    fm: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let (left, lm, flm) = simpson(f, a, fa, m, fm);
    let (right, rm, frm) = simpson(f, m, fm, b, fb);
    let delta = left + right - whole;
    if depth == 0 || (delta.abs() <= 15.0 * tol && (b - a) < 0.25) {
        return left + right + delta / 15.0;
    }
    simpson_rec(f, a, fa, m, fm, left, lm, flm, 0.5 * tol, depth - 1)
        + simpson_rec(f, m, fm, b, fb, right, rm, frm, 0.5 * tol, depth - 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn c0_value_and_square_relation() {
        // 1 / (64 * 1.7724538509055159)
        assert!((c0() - 8.815_462_242_933_692e-3).abs() < 1e-17, "{}", c0());
        assert!((c0() - limit_coefficient().powi(2)).abs() <= 1e-15 * c0());
        assert!((limit_coefficient() - c0().sqrt()).abs() < 1e-16);
        assert!(limit_coefficient() > 0.0 && limit_coefficient() < 1.0);
        assert!((limit_coefficient() - 0.093_890_693).abs() < 1e-8);
        assert!((alternative_limit_coefficient() - 2.0 * limit_coefficient()).abs() < 1e-16);
    }

    #[test]
    fn c0_chain_is_independent_of_eps() {
        for &eps in &[1.0, 0.1, 0.01] {
            let v = c0_by_chain(eps).unwrap();
            assert!((v / c0() - 1.0).abs() < 1e-10, "eps {eps}: {v}");
        }
        // closed-form chain: C (2/3) 2^{-3/2}
        let chain = heat_norm_leading_constant() * (2.0 / 3.0) * 2f64.powf(-1.5);
        assert!((chain / c0() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn gaussian_integral_oracles() {
        let g = gaussian_x4_integral();
        assert!(g > 0.0);
        assert!((g - 2.3999e-5).abs() < 1e-8, "{g}");
        assert!((gaussian_x4_quadrature() / g - 1.0).abs() < 1e-12);
        assert!((gaussian_x4_by_moment() / g - 1.0).abs() < 1e-14);
    }

    #[test]
    fn heat_norm_error_bounded_and_small() {
        let mut t = 1e-6;
        while t <= 1e-2 {
            let e = heat_norm_asymptotic_error(t).unwrap();
            assert!(e.is_finite() && e < 1.0, "t {t}: {e}");
            t *= 10.0;
        }
        assert!(heat_norm_relative_error(1e-4).unwrap() < 0.02);
    }

    #[test]
    fn heat_norm_correction_is_exponentially_small() {
        // Poisson summation: the only correction is sum_{j != 0} of the Fourier transform, ~ exp(-1/(8t))
        let t = 0.05;
        let rel = heat_norm_relative_error(t).unwrap();
        let scale = (-1.0 / (8.0 * t)).exp();
        assert!(
            rel < 100.0 * scale && rel > 1e-3 * scale,
            "{rel} vs {scale}"
        );
    }

    #[test]
    fn variance_blowup_regimes() {
        assert!(variance_blowup(1.5, 0.1).is_err());
        assert!(variance_blowup(0.5, 0.0).is_err());
        // gamma = 0 has a finite limit, approached linearly in eps
        let a = variance_blowup(0.0, 1e-3).unwrap();
        let b = variance_blowup(0.0, 5e-4).unwrap();
        let c = variance_blowup(0.0, 2.5e-4).unwrap();
        assert!((a - c).abs() / c < 2e-2);
        let r = (b - c) / (a - b);
        assert!((r - 0.5).abs() < 0.05, "{r}");
        // monotone decreasing in eps for gamma >= 1/4
        for &gamma in &[0.25, 0.5, 1.0] {
            let mut prev = f64::INFINITY;
            for &eps in &[0.0125, 0.025, 0.05, 0.1] {
                let v = variance_blowup(gamma, eps).unwrap();
                assert!(v < prev);
                prev = v;
            }
        }
    }

    #[test]
    fn variance_blowup_matches_brute_force_time_quadrature() {
        // oracle: integrate the time factor numerically instead of in closed form
        let (gamma, eps) = (0.5, 0.05);
        let mut oracle = 0.0;
        for k in 1..400u64 {
            let mu = (2.0 * PI * k as f64).powi(2);
            let f = |t: f64| (1.0 - (-2.0 * mu * t).exp()) / (2.0 * mu);
            let ti = adaptive_simpson(&f, 0.0, 1.0, 1e-14, 40);
            oracle += 2.0 * mu.powf(2.0 * gamma) * (-4.0 * mu * eps * eps).exp() * ti;
        }
        let v = variance_blowup(gamma, eps).unwrap();
        assert!((v / oracle - 1.0).abs() < 1e-9, "{v} vs {oracle}");
    }

    #[test]
    fn report_rows_pass() {
        for row in constant_report() {
            assert!(row.pass, "{row:?}");
        }
    }
}
