//! Spectral calculus on the one-dimensional torus `T = R/Z`.
//!
//! Fields are stored as coefficients on the real orthonormal basis
//!
//! ```text
//! e_1 = 1,  e_{2k} = sqrt(2) sin(2 pi k x),  e_{2k+1} = sqrt(2) cos(2 pi k x)
//! ```
//!
//! so coefficient index `i` (zero based) carries basis function `e_{i+1}` with
//! wavenumber `k(n) = floor(n / 2)`. Every linear operator here (heat
//! semigroup, gradient, fractional Laplacian) is a per-mode multiplier or a
//! rotation inside a sine/cosine pair, so all of them commute exactly.

use std::f64::consts::{PI, SQRT_2};
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Wavenumber of the one-based basis index `n`.
#[inline]
pub fn wavenumber(n: usize) -> usize {
    n / 2
}

/// `(2 pi k)^2`, the eigenvalue of `-Laplacian` on mode `n`.
#[inline]
pub fn laplace_eigenvalue(n: usize) -> f64 {
    let w = 2.0 * PI * wavenumber(n) as f64;
    w * w
}

/// Evaluates the basis function `e_n` at `x`.
pub fn basis_value(n: usize, x: f64) -> f64 {
    let k = wavenumber(n) as f64;
    if n == 1 {
        1.0
    } else if n % 2 == 0 {
        SQRT_2 * (2.0 * PI * k * x).sin()
    } else {
        SQRT_2 * (2.0 * PI * k * x).cos()
    }
}

/// Smallest power-of-two grid that holds `4 * m` points (at least `2m + 2`).
pub fn default_grid_size(m: usize) -> usize {
    (4 * m).max(2 * m + 2).max(4).next_power_of_two()
}

/// A real field on the torus, band-limited to the first `mode_cutoff` basis functions.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    coeffs: Vec<f64>,
}

impl SpectralField {
    pub fn zeros(m: usize) -> Self {
        assert!(m >= 1, "mode cutoff must be at least 1");
        Self {
            coeffs: vec![0.0; m],
        }
    }

    pub fn from_coeffs(coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(Error::param("coeffs", "mode cutoff must be at least 1"));
        }
        if let Some(i) = coeffs.iter().position(|c| !c.is_finite()) {
            return Err(Error::param(
                "coeffs",
                format!("coefficient {} is not finite", i + 1),
            ));
        }
        Ok(Self { coeffs })
    }

    /// Unit field `e_n` with cutoff `m`.
    pub fn unit(m: usize, n: usize) -> Self {
        assert!(n >= 1 && n <= m, "basis index {n} outside 1..={m}");
        let mut f = Self::zeros(m);
        f.coeffs[n - 1] = 1.0;
        f
    }

    pub fn mode_cutoff(&self) -> usize {
        self.coeffs.len()
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    /// Coefficient of the one-based basis function `e_n` (zero beyond the cutoff).
    pub fn coeff(&self, n: usize) -> f64 {
        self.coeffs.get(n.wrapping_sub(1)).copied().unwrap_or(0.0)
    }

    /// Same field with a different cutoff: truncated or zero padded.
    pub fn resized(&self, m: usize) -> Self {
        let mut coeffs = vec![0.0; m];
        let len = m.min(self.coeffs.len());
        coeffs[..len].copy_from_slice(&self.coeffs[..len]);
        Self { coeffs }
    }

    /// L2(T) inner product.
    pub fn dot(&self, other: &Self) -> f64 {
        self.coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn norm_l2(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        let m = self.mode_cutoff().max(other.mode_cutoff());
        (1..=m)
            .map(|n| (self.coeff(n) - other.coeff(n)).abs())
            .fold(0.0, f64::max)
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self {
            coeffs: self.coeffs.iter().map(|c| a * c).collect(),
        }
    }

    /// `self += a * other` on the common modes.
    pub fn axpy(&mut self, a: f64, other: &Self) {
        for (x, y) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *x += a * y;
        }
    }

    /// Point evaluation `sum_n coeffs_n e_n(x)`.
    pub fn synthesize(&self, x: f64) -> f64 {
        synthesize(self, x)
    }
}

/// Samples of a field on the uniform grid `x_j = j / n_grid`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    values: Vec<f64>,
}

impl GridField {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        let n = values.len();
        if n < 2 || !n.is_power_of_two() {
            return Err(Error::BadGridSize(n));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("values", "grid values must be finite"));
        }
        Ok(Self { values })
    }

    /// Samples `f` on a grid of `n_grid` points.
    pub fn from_fn(n_grid: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new((0..n_grid).map(|j| f(j as f64 / n_grid as f64)).collect())
    }

    pub fn n_grid(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn point(&self, j: usize) -> f64 {
        j as f64 / self.values.len() as f64
    }
}

/// Point evaluation of a spectral field.
pub fn synthesize(field: &SpectralField, x: f64) -> f64 {
    let c = field.coeffs();
    let mut acc = c[0];
    let mut k = 1usize;
    while 2 * k <= c.len() {
        let theta = 2.0 * PI * k as f64 * x;
        let (s, co) = theta.sin_cos();
        acc += SQRT_2 * c[2 * k - 1] * s;
        if 2 * k < c.len() {
            acc += SQRT_2 * c[2 * k] * co;
        }
        k += 1;
    }
    acc
}

/// Forward transform of grid samples onto the first `m` basis functions.
pub fn analyze(grid: &GridField, m: usize) -> Result<SpectralField> {
    let mut t = GridTransform::new(grid.n_grid())?;
    t.analyze(grid.values(), m)
}

/// Samples a spectral field on a grid of `n_grid` points.
pub fn synthesize_grid(field: &SpectralField, n_grid: usize) -> Result<GridField> {
    let mut t = GridTransform::new(n_grid)?;
    Ok(GridField {
        values: t.synthesize(field)?,
    })
}

/// FFT-backed transform pair between `SpectralField` and grid samples.
///
/// Holds its own FFT plans and scratch buffers; one instance per worker.
pub struct GridTransform {
    n_grid: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    buf: Vec<Complex<f64>>,
    scratch: Vec<Complex<f64>>,
}

impl std::fmt::Debug for GridTransform {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GridTransform")
            .field("n_grid", &self.n_grid)
            .finish()
    }
}

impl Clone for GridTransform {
    fn clone(&self) -> Self {
        Self::new(self.n_grid).expect("grid size was validated at construction")
    }
}

impl GridTransform {
    pub fn new(n_grid: usize) -> Result<Self> {
        if n_grid < 2 || !n_grid.is_power_of_two() {
            return Err(Error::BadGridSize(n_grid));
        }
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n_grid);
        let inverse = planner.plan_fft_inverse(n_grid);
        let scratch_len = forward
            .get_inplace_scratch_len()
            .max(inverse.get_inplace_scratch_len());
        Ok(Self {
            n_grid,
            forward,
            inverse,
            buf: vec![Complex::new(0.0, 0.0); n_grid],
            scratch: vec![Complex::new(0.0, 0.0); scratch_len],
        })
    }

    /// Transform sized by [`default_grid_size`].
    pub fn for_cutoff(m: usize) -> Self {
        Self::new(default_grid_size(m)).expect("default grid size is a power of two")
    }

    pub fn n_grid(&self) -> usize {
        self.n_grid
    }

    fn check_cutoff(&self, m: usize) -> Result<()> {
        if self.n_grid < 2 * m + 2 {
            return Err(Error::CutoffTooLarge {
                m,
                n_grid: self.n_grid,
            });
        }
        Ok(())
    }

    pub fn synthesize_into(&mut self, coeffs: &[f64], out: &mut [f64]) -> Result<()> {
        self.check_cutoff(coeffs.len())?;
        assert_eq!(out.len(), self.n_grid);
        let n = self.n_grid;
        self.buf
            .iter_mut()
            .for_each(|z| *z = Complex::new(0.0, 0.0));
        self.buf[0] = Complex::new(coeffs[0], 0.0);
        let m = coeffs.len();
        let mut k = 1;
        while 2 * k <= m {
            let sin_c = coeffs[2 * k - 1];
            let cos_c = if 2 * k < m { coeffs[2 * k] } else { 0.0 };
            let z = Complex::new(cos_c, -sin_c) / SQRT_2;
            self.buf[k] = z;
            self.buf[n - k] = z.conj();
            k += 1;
        }
        self.inverse
            .process_with_scratch(&mut self.buf, &mut self.scratch);
        for (o, z) in out.iter_mut().zip(&self.buf) {
            *o = z.re;
        }
        Ok(())
    }

    pub fn synthesize(&mut self, field: &SpectralField) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.n_grid];
        self.synthesize_into(field.coeffs(), &mut out)?;
        Ok(out)
    }

    pub fn analyze_into(&mut self, values: &[f64], coeffs: &mut [f64]) -> Result<()> {
        let m = coeffs.len();
        self.check_cutoff(m)?;
        assert_eq!(values.len(), self.n_grid);
        for (z, v) in self.buf.iter_mut().zip(values) {
            *z = Complex::new(*v, 0.0);
        }
        self.forward
            .process_with_scratch(&mut self.buf, &mut self.scratch);
        let inv_n = 1.0 / self.n_grid as f64;
        coeffs[0] = self.buf[0].re * inv_n;
        let mut k = 1;
        while 2 * k <= m {
            let z = self.buf[k] * inv_n;
            coeffs[2 * k - 1] = -SQRT_2 * z.im;
            if 2 * k < m {
                coeffs[2 * k] = SQRT_2 * z.re;
            }
            k += 1;
        }
        Ok(())
    }

    pub fn analyze(&mut self, values: &[f64], m: usize) -> Result<SpectralField> {
        let mut coeffs = vec![0.0; m];
        self.analyze_into(values, &mut coeffs)?;
        Ok(SpectralField { coeffs })
    }
}

/// Heat semigroup `P_t`: mode `n` is multiplied by `exp(-(2 pi k)^2 t)`.
pub fn apply_heat(field: &SpectralField, t: f64) -> Result<SpectralField> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::BadTime {
            value: t,
            expected: "finite and >= 0",
        });
    }
    let coeffs = field
        .coeffs()
        .iter()
        .enumerate()
        .map(|(i, c)| c * (-laplace_eigenvalue(i + 1) * t).exp())
        .collect();
    Ok(SpectralField { coeffs })
}

/// Per-mode multipliers of `P_t` for the first `m` basis functions.
pub fn heat_multipliers(m: usize, t: f64) -> Vec<f64> {
    (1..=m)
        .map(|n| (-laplace_eigenvalue(n) * t).exp())
        .collect()
}

/// Spatial derivative, truncated to the cutoff of the input.
///
/// The sine mode `e_{2k}` maps to `2 pi k e_{2k+1}` and the cosine mode
/// `e_{2k+1}` maps to `-2 pi k e_{2k}`.
pub fn apply_gradient(field: &SpectralField) -> SpectralField {
    let c = field.coeffs();
    let m = c.len();
    let mut out = vec![0.0; m];
    let mut k = 1;
    while 2 * k <= m {
        let w = 2.0 * PI * k as f64;
        let s = 2 * k - 1;
        let co = 2 * k;
        if co < m {
            out[co] += w * c[s];
            out[s] -= w * c[co];
        }
        k += 1;
    }
    SpectralField { coeffs: out }
}

/// `(-Laplacian)^{gamma/2}`: mode `n` is multiplied by `(2 pi k)^gamma`.
pub fn apply_fractional_laplacian(field: &SpectralField, gamma: f64) -> Result<SpectralField> {
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(Error::param("gamma", "must be finite and >= 0"));
    }
    let coeffs = field
        .coeffs()
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let k = wavenumber(i + 1);
            if k == 0 {
                if gamma == 0.0 {
                    *c
                } else {
                    0.0
                }
            } else {
                c * (2.0 * PI * k as f64).powf(gamma)
            }
        })
        .collect();
    Ok(SpectralField { coeffs })
}

/// Periodic heat kernel `p_t(x)` by its image sum, truncated once terms drop below 1e-16.
pub fn heat_kernel_value(t: f64, x: f64) -> Result<f64> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::BadTime {
            value: t,
            expected: "finite and > 0",
        });
    }
    let pref = 1.0 / (4.0 * PI * t).sqrt();
    let x0 = x - x.floor();
    let term = |k: i64| pref * (-(x0 - k as f64).powi(2) / (4.0 * t)).exp();
    // images k = 0, 1 straddle x0; walk outwards on both sides
    let mut sum = 0.0;
    let mut k = 0i64;
    loop {
        let v = term(k);
        sum += v;
        if v < 1e-16 {
            break;
        }
        k -= 1;
    }
    let mut k = 1i64;
    loop {
        let v = term(k);
        sum += v;
        if v < 1e-16 {
            break;
        }
        k += 1;
    }
    Ok(sum)
}

/// `||grad^j p_t||^2 = sum_{k in Z} (2 pi k)^{2j} exp(-8 pi^2 k^2 t)` for the periodic heat kernel.
pub fn heat_deriv_l2norm_sq(j: u32, t: f64) -> Result<f64> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::BadTime {
            value: t,
            expected: "finite and > 0",
        });
    }
    let mut sum = if j == 0 { 1.0 } else { 0.0 };
    let peak = (j as f64 / (8.0 * PI * PI * t)).sqrt();
    let mut k = 1u64;
    loop {
        let kf = k as f64;
        let w = 2.0 * PI * kf;
        let term = 2.0 * w.powi(2 * j as i32) * (-8.0 * PI * PI * kf * kf * t).exp();
        sum += term;
        if kf > peak && (term <= 1e-18 * sum || term == 0.0) {
            break;
        }
        k += 1;
    }
    Ok(sum)
}

/// Exact `Proj_m(e_n * field)` by trigonometric product rules.
pub fn basis_product(n: usize, field: &SpectralField, m: usize) -> SpectralField {
    let mut out = vec![0.0; m];
    for_each_basis_product(n, field.coeffs(), |idx, v| {
        if idx < m {
            out[idx] += v;
        }
    });
    SpectralField { coeffs: out }
}

/// `integral of e_n * a * b` for band-limited `a`, `b`, without forming the product.
pub fn basis_triple(n: usize, a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for_each_basis_product(n, a, |idx, v| {
        if let Some(bv) = b.get(idx) {
            acc += v * bv;
        }
    });
    acc
}

#[inline]
fn for_each_basis_product(n: usize, coeffs: &[f64], mut emit: impl FnMut(usize, f64)) {
    const H: f64 = std::f64::consts::FRAC_1_SQRT_2;
    assert!(n >= 1);
    if n == 1 {
        for (i, c) in coeffs.iter().enumerate() {
            emit(i, *c);
        }
        return;
    }
    let q = wavenumber(n) as i64;
    let n_is_sin = n % 2 == 0;
    // cos(2 pi j x) and sin(2 pi j x) expressed on the basis
    let add_cos = |j: i64, v: f64, emit: &mut dyn FnMut(usize, f64)| {
        let j = j.unsigned_abs() as usize;
        if j == 0 {
            emit(0, v);
        } else {
            emit(2 * j, v * H);
        }
    };
    let add_sin = |j: i64, v: f64, emit: &mut dyn FnMut(usize, f64)| {
        if j > 0 {
            emit(2 * j as usize - 1, v * H);
        } else if j < 0 {
            emit(2 * (-j) as usize - 1, -v * H);
        }
    };
    for (i, &a) in coeffs.iter().enumerate() {
        if a == 0.0 {
            continue;
        }
        let mode = i + 1;
        if mode == 1 {
            emit(n - 1, a);
            continue;
        }
        let k = wavenumber(mode) as i64;
        let mode_is_sin = mode % 2 == 0;
        match (n_is_sin, mode_is_sin) {
            (false, false) => {
                add_cos(k - q, a, &mut emit);
                add_cos(k + q, a, &mut emit);
            }
            (true, false) => {
                add_sin(q + k, a, &mut emit);
                add_sin(q - k, a, &mut emit);
            }
            (false, true) => {
                add_sin(k + q, a, &mut emit);
                add_sin(k - q, a, &mut emit);
            }
            (true, true) => {
                add_cos(k - q, a, &mut emit);
                add_cos(k + q, -a, &mut emit);
            }
        }
    }
}
