//! Periodic pseudospectral discretization.
//!
//! A [`Field`] is a real function on a uniform periodic grid of `N` points
//! over `[0, L)`. It carries both its samples and its Fourier coefficients
//! `c(k)` in FFT order, normalized so that `f(x) = sum_k c(k) exp(i xi_k x)`
//! with `xi_k = 2 pi k / L`. The Nyquist coefficient is always zero, so every
//! field is exactly band-limited to `|k| < N/2`.
//!
//! With this normalization `int_0^L |f|^2 dx = L sum_k |c(k)|^2` on both
//! geometries, which is the discrete form of Plancherel used for all norms
//! and pairings below.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

pub type C64 = Complex64;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn forward_plan(n: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_forward(n))
}

fn inverse_plan(n: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(n))
}

/// Samples -> normalized coefficients (divided by the transform length).
fn analyze(samples: &[f64]) -> Vec<C64> {
    let n = samples.len();
    let mut buf: Vec<C64> = samples.iter().map(|&x| C64::new(x, 0.0)).collect();
    forward_plan(n).process(&mut buf);
    let inv = 1.0 / n as f64;
    buf.iter_mut().for_each(|c| *c *= inv);
    buf
}

/// Normalized coefficients -> real samples.
fn synthesize(coeffs: &[C64]) -> Vec<f64> {
    let mut buf = coeffs.to_vec();
    inverse_plan(buf.len()).process(&mut buf);
    buf.into_iter().map(|c| c.re).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GeometryKind {
    /// The unit circle `R / Z`.
    Circle,
    /// The real line, approximated by a torus of period `L`.
    LineApprox,
}

/// Periodic grid description.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Geometry {
    kind: GeometryKind,
    period: f64,
    n_modes: usize,
}

impl Geometry {
    pub fn new(kind: GeometryKind, period: f64, n_modes: usize) -> Result<Self> {
        if n_modes < 8 || n_modes % 2 != 0 {
            return Err(Error::InvalidGrid(format!(
                "n_modes must be even and at least 8, got {n_modes}"
            )));
        }
        if !(period.is_finite() && period >= 1.0) {
            return Err(Error::InvalidGrid(format!("period must be >= 1, got {period}")));
        }
        if kind == GeometryKind::Circle && period != 1.0 {
            return Err(Error::InvalidGrid(format!(
                "the circle has period 1, got {period}"
            )));
        }
        Ok(Self { kind, period, n_modes })
    }

    pub fn circle(n_modes: usize) -> Result<Self> {
        Self::new(GeometryKind::Circle, 1.0, n_modes)
    }

    pub fn line_approx(period: f64, n_modes: usize) -> Result<Self> {
        Self::new(GeometryKind::LineApprox, period, n_modes)
    }

    pub fn kind(&self) -> GeometryKind {
        self.kind
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    /// Largest retained mode index; the Nyquist index `N/2` is always zero.
    pub fn max_index(&self) -> i64 {
        self.n_modes as i64 / 2 - 1
    }

    /// `xi_k = 2 pi k / L`.
    pub fn wavenumber(&self, k: i64) -> f64 {
        2.0 * PI * k as f64 / self.period
    }

    /// Largest frequency magnitude on the grid, Nyquist included.
    pub fn max_frequency(&self) -> f64 {
        self.wavenumber(self.n_modes as i64 / 2)
    }

    /// Mode index stored at FFT slot `i`.
    pub fn index_to_k(&self, i: usize) -> i64 {
        let n = self.n_modes as i64;
        let i = i as i64;
        if i < n / 2 {
            i
        } else {
            i - n
        }
    }

    /// FFT slot of mode `k`, if it is retained (`|k| < N/2`).
    pub fn k_to_index(&self, k: i64) -> Option<usize> {
        if k.abs() > self.max_index() {
            return None;
        }
        let n = self.n_modes as i64;
        Some(if k >= 0 { k as usize } else { (n + k) as usize })
    }

    /// The frequency set `{2 pi k / L : |k| <= N/2}` in increasing order.
    /// Coefficients at the two Nyquist endpoints are identically zero.
    pub fn frequency_set(&self) -> Vec<f64> {
        let h = self.n_modes as i64 / 2;
        (-h..=h).map(|k| self.wavenumber(k)).collect()
    }

    /// Frequencies in FFT order, Nyquist slot reported as zero.
    pub fn fft_frequencies(&self) -> Vec<f64> {
        (0..self.n_modes)
            .map(|i| {
                if i == self.n_modes / 2 {
                    0.0
                } else {
                    self.wavenumber(self.index_to_k(i))
                }
            })
            .collect()
    }

    pub fn grid_points(&self) -> Vec<f64> {
        let dx = self.period / self.n_modes as f64;
        (0..self.n_modes).map(|j| j as f64 * dx).collect()
    }
}

/// A real-valued function on a periodic grid.
#[derive(Debug, Clone)]
pub struct Field {
    geometry: Geometry,
    samples: Vec<f64>,
    coeffs: Vec<C64>,
}

impl Field {
    pub fn zeros(geometry: Geometry) -> Self {
        let n = geometry.n_modes();
        Self { geometry, samples: vec![0.0; n], coeffs: vec![C64::new(0.0, 0.0); n] }
    }

    pub fn constant(geometry: Geometry, value: f64) -> Self {
        let mut f = Self::zeros(geometry);
        f.samples.iter_mut().for_each(|s| *s = value);
        f.coeffs[0] = C64::new(value, 0.0);
        f
    }

    /// Builds a field from grid samples. The Nyquist component is removed,
    /// so the stored samples may differ from the input when it was present.
    pub fn from_samples(geometry: Geometry, samples: Vec<f64>) -> Result<Self> {
        if samples.len() != geometry.n_modes() {
            return Err(Error::InvalidGrid(format!(
                "expected {} samples, got {}",
                geometry.n_modes(),
                samples.len()
            )));
        }
        Self::from_coeffs(geometry, analyze(&samples))
    }

    pub fn from_fn(geometry: Geometry, f: impl Fn(f64) -> f64) -> Self {
        let samples = geometry.grid_points().into_iter().map(f).collect();
        Self::from_samples(geometry, samples).expect("sample count matches grid")
    }

    /// Builds a field from FFT-ordered coefficients. The input is projected
    /// onto real functions (`c(-k) = conj c(k)`) and the Nyquist slot zeroed.
    pub fn from_coeffs(geometry: Geometry, mut coeffs: Vec<C64>) -> Result<Self> {
        let n = geometry.n_modes();
        if coeffs.len() != n {
            return Err(Error::InvalidGrid(format!(
                "expected {n} coefficients, got {}",
                coeffs.len()
            )));
        }
        coeffs[0].im = 0.0;
        coeffs[n / 2] = C64::new(0.0, 0.0);
        for i in 1..n / 2 {
            let avg = 0.5 * (coeffs[i] + coeffs[n - i].conj());
            coeffs[i] = avg;
            coeffs[n - i] = avg.conj();
        }
        let samples = synthesize(&coeffs);
        Ok(Self { geometry, samples, coeffs })
    }

    /// Field from a map `k -> c(k)` over retained modes.
    pub fn from_modes(geometry: Geometry, c: impl Fn(i64) -> C64) -> Self {
        let coeffs = (0..geometry.n_modes())
            .map(|i| c(geometry.index_to_k(i)))
            .collect();
        Self::from_coeffs(geometry, coeffs).expect("length matches grid")
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn coeffs(&self) -> &[C64] {
        &self.coeffs
    }

    /// Coefficient of mode `k`; zero outside the retained band.
    pub fn coeff(&self, k: i64) -> C64 {
        self.geometry
            .k_to_index(k)
            .map_or(C64::new(0.0, 0.0), |i| self.coeffs[i])
    }

    fn check_same(&self, other: &Field) -> Result<()> {
        if self.geometry != other.geometry {
            Err(Error::GeometryMismatch)
        } else {
            Ok(())
        }
    }

    fn zip_with(&self, other: &Field, f: impl Fn(f64, f64) -> f64, g: impl Fn(C64, C64) -> C64) -> Result<Field> {
        self.check_same(other)?;
        Ok(Field {
            geometry: self.geometry,
            samples: self.samples.iter().zip(&other.samples).map(|(&a, &b)| f(a, b)).collect(),
            coeffs: self.coeffs.iter().zip(&other.coeffs).map(|(&a, &b)| g(a, b)).collect(),
        })
    }

    pub fn add(&self, other: &Field) -> Result<Field> {
        self.zip_with(other, |a, b| a + b, |a, b| a + b)
    }

    pub fn sub(&self, other: &Field) -> Result<Field> {
        self.zip_with(other, |a, b| a - b, |a, b| a - b)
    }

    /// `self + a * other`
    pub fn axpy(&self, a: f64, other: &Field) -> Result<Field> {
        self.zip_with(other, |x, y| x + a * y, |x, y| x + y * a)
    }

    pub fn scale(&self, a: f64) -> Field {
        Field {
            geometry: self.geometry,
            samples: self.samples.iter().map(|x| a * x).collect(),
            coeffs: self.coeffs.iter().map(|c| c * a).collect(),
        }
    }

    /// `int f g dx`
    pub fn inner(&self, other: &Field) -> Result<f64> {
        self.check_same(other)?;
        let s: f64 = self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| (a * b.conj()).re)
            .sum();
        Ok(self.geometry.period() * s)
    }

    pub fn l2_norm(&self) -> f64 {
        let s: f64 = self.coeffs.iter().map(|c| c.norm_sqr()).sum();
        (self.geometry.period() * s).sqrt()
    }

    pub fn integral(&self) -> f64 {
        self.geometry.period() * self.coeffs[0].re
    }

    pub fn max_abs(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }

    /// Spectral derivative.
    pub fn derivative(&self) -> Field {
        self.map_symbol(|xi| C64::new(0.0, xi))
    }

    /// `x -> f(x + h)`, applied as a phase.
    pub fn shift(&self, h: f64) -> Field {
        self.map_symbol(|xi| C64::from_polar(1.0, xi * h))
    }

    /// Multiplies each coefficient by `symbol(xi)` without a finiteness check.
    pub(crate) fn map_symbol(&self, symbol: impl Fn(f64) -> C64) -> Field {
        let freqs = self.geometry.fft_frequencies();
        let coeffs = self.coeffs.iter().zip(&freqs).map(|(c, &xi)| c * symbol(xi)).collect();
        Field::from_coeffs(self.geometry, coeffs).expect("length preserved")
    }

    /// Largest relative deviation from `other`, measured in L2.
    pub fn relative_distance(&self, other: &Field) -> Result<f64> {
        let d = self.sub(other)?.l2_norm();
        let s = self.l2_norm().max(other.l2_norm());
        Ok(if s == 0.0 { d } else { d / s })
    }
}

/// Fourier multipliers used throughout the crate. Each symbol satisfies
/// `m(-xi) = conj m(xi)`, so real fields stay real.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Multiplier {
    Identity,
    /// `d^n/dx^n`
    Derivative(u32),
    /// `kappa - d`
    KappaMinusD(f64),
    /// `kappa + d`
    KappaPlusD(f64),
    /// `(kappa - d)^{-1}`, symbol `1/(kappa - i xi)`
    ResolventMinus(f64),
    /// `(kappa + d)^{-1}`, symbol `1/(kappa + i xi)`
    ResolventPlus(f64),
    /// `(4 kappa^2 - d^2)^{-1}`
    HelmholtzInverse(f64),
    /// Equicontinuity multiplier `w(xi; kappa)`.
    Equicontinuity(f64),
    /// `f -> f(. + h)`
    Translation(f64),
}

impl Multiplier {
    pub fn symbol(&self, xi: f64) -> C64 {
        let i = C64::new(0.0, 1.0);
        match *self {
            Multiplier::Identity => C64::new(1.0, 0.0),
            Multiplier::Derivative(n) => (i * xi).powu(n),
            Multiplier::KappaMinusD(k) => C64::new(k, -xi),
            Multiplier::KappaPlusD(k) => C64::new(k, xi),
            Multiplier::ResolventMinus(k) => C64::new(k, -xi).inv(),
            Multiplier::ResolventPlus(k) => C64::new(k, xi).inv(),
            Multiplier::HelmholtzInverse(k) => C64::new(1.0 / (4.0 * k * k + xi * xi), 0.0),
            Multiplier::Equicontinuity(k) => C64::new(w_symbol(xi, k), 0.0),
            Multiplier::Translation(h) => C64::from_polar(1.0, xi * h),
        }
    }
}

/// `w(xi; kappa) = 3 kappa^2 xi^2 / (4 (xi^2 + kappa^2)(xi^2 + 4 kappa^2))`.
pub fn w_symbol(xi: f64, kappa: f64) -> f64 {
    let (x2, k2) = (xi * xi, kappa * kappa);
    3.0 * k2 * x2 / (4.0 * (x2 + k2) * (x2 + 4.0 * k2))
}

/// The same multiplier written as a difference of two resolvent symbols.
pub fn w_symbol_difference_form(xi: f64, kappa: f64) -> f64 {
    let (x2, k2) = (xi * xi, kappa * kappa);
    k2 / (x2 + 4.0 * k2) - 0.25 * k2 / (x2 + k2)
}

pub fn apply_multiplier(f: &Field, m: Multiplier) -> Result<Field> {
    apply_symbol(f, |xi| m.symbol(xi))
}

/// Applies an arbitrary symbol. Fails if the symbol is not finite at a
/// retained frequency. The result is projected onto real fields.
pub fn apply_symbol(f: &Field, symbol: impl Fn(f64) -> C64) -> Result<Field> {
    let g = f.geometry();
    let mut coeffs = Vec::with_capacity(g.n_modes());
    for (i, c) in f.coeffs().iter().enumerate() {
        if i == g.n_modes() / 2 {
            coeffs.push(C64::new(0.0, 0.0));
            continue;
        }
        let xi = g.wavenumber(g.index_to_k(i));
        let m = symbol(xi);
        if !(m.re.is_finite() && m.im.is_finite()) {
            return Err(Error::SingularMultiplier { xi });
        }
        coeffs.push(c * m);
    }
    Field::from_coeffs(*g, coeffs)
}

/// `H^s_kappa` index: weight `(4 kappa^2 + xi^2)^{s/2}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SobolevIndex {
    s: f64,
    kappa: f64,
}

impl SobolevIndex {
    pub fn new(s: f64, kappa: f64) -> Result<Self> {
        if !(kappa >= 1.0) {
            return Err(Error::KappaTooSmall(kappa));
        }
        Ok(Self { s, kappa })
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }
}

fn weighted_norm(f: &Field, weight: impl Fn(f64) -> f64) -> f64 {
    let g = f.geometry();
    let s: f64 = f
        .coeffs()
        .iter()
        .enumerate()
        .map(|(i, c)| weight(g.wavenumber(g.index_to_k(i))) * c.norm_sqr())
        .sum();
    (g.period() * s).sqrt()
}

/// `|| (4 kappa^2 + xi^2)^{s/2} f^ ||`.
pub fn sobolev_norm(f: &Field, idx: SobolevIndex) -> f64 {
    let k2 = 4.0 * idx.kappa * idx.kappa;
    weighted_norm(f, |xi| (k2 + xi * xi).powf(idx.s))
}

/// Inhomogeneous `H^s` norm with weight `(1 + xi^2)^{s/2}`.
pub fn bessel_norm(f: &Field, s: f64) -> f64 {
    weighted_norm(f, |xi| (1.0 + xi * xi).powf(s))
}

/// Dealiasing rule for pointwise products.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dealias {
    /// Plain collocation product on the native grid.
    None,
    /// Zero-pad to `factor * N` points before multiplying.
    Padded { factor: usize },
}

impl Default for Dealias {
    fn default() -> Self {
        Dealias::Padded { factor: 2 }
    }
}

fn padded_samples(f: &Field, m: usize) -> Vec<f64> {
    let g = f.geometry();
    let n = g.n_modes();
    let mut buf = vec![C64::new(0.0, 0.0); m];
    for i in 0..n {
        if i == n / 2 {
            continue;
        }
        let k = g.index_to_k(i);
        let j = if k >= 0 { k as usize } else { (m as i64 + k) as usize };
        buf[j] = f.coeffs()[i];
    }
    synthesize(&buf)
}

/// Pointwise product of any number of fields on a common geometry.
///
/// With `Padded { factor: 2 }` the result is exact for up to three
/// band-limited factors.
pub fn product_many(fields: &[&Field], dealias: Dealias) -> Result<Field> {
    let first = fields
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty product".into()))?;
    let g = *first.geometry();
    for f in fields {
        if *f.geometry() != g {
            return Err(Error::GeometryMismatch);
        }
    }
    match dealias {
        Dealias::None => {
            let mut s = vec![1.0; g.n_modes()];
            for f in fields {
                s.iter_mut().zip(f.samples()).for_each(|(a, b)| *a *= b);
            }
            Field::from_samples(g, s)
        }
        Dealias::Padded { factor } => {
            if factor == 0 {
                return Err(Error::InvalidArgument("padding factor must be positive".into()));
            }
            let n = g.n_modes();
            let m = factor * n;
            let mut s = vec![1.0; m];
            for f in fields {
                s.iter_mut()
                    .zip(padded_samples(f, m))
                    .for_each(|(a, b)| *a *= b);
            }
            let fine = analyze(&s);
            let coeffs = (0..n)
                .map(|i| {
                    let k = g.index_to_k(i);
                    let j = if k >= 0 { k as usize } else { (m as i64 + k) as usize };
                    fine[j]
                })
                .collect();
            Field::from_coeffs(g, coeffs)
        }
    }
}

pub fn product(f: &Field, g: &Field, dealias: Dealias) -> Result<Field> {
    product_many(&[f, g], dealias)
}
