//! Fixed-point inversion of `q -> (mu / 4 kappa) r(kappa, q)`.
//!
//! The forward map solves `(4 kappa^2 - d^2) x = q (gamma + c)` with `c` the
//! free diagonal, so the inverse is the fixed point of
//! `q = [(4 kappa^2 - d^2) x - gamma(q) q] / c`.

use crate::error::{Error, Result};
use crate::lax::{greens_diagnostics, torus_factor, DiagnosticsOptions};
use crate::spectral::{apply_symbol, bessel_norm, product, Dealias, Field, C64};
use crate::Mu;

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 100;
/// Consecutive residual increases that count as divergence.
const GROWTH_LIMIT: usize = 3;

#[derive(Debug, Clone)]
pub struct InversionReport {
    pub q_recovered: Field,
    pub iterations: usize,
    /// `|| forward_r(q_recovered) - target ||_{H^2}`.
    pub final_residual: f64,
    /// Residual after each iteration.
    pub contraction_estimates: Vec<f64>,
}

impl InversionReport {
    /// Ratios of successive residuals.
    pub fn contraction_factors(&self) -> Vec<f64> {
        self.contraction_estimates
            .windows(2)
            .filter(|w| w[0] > 0.0)
            .map(|w| w[1] / w[0])
            .collect()
    }
}

pub fn forward_r(q: &Field, kappa: f64, mu: Mu) -> Result<Field> {
    let d = greens_diagnostics(q, kappa, mu, &DiagnosticsOptions::default())?;
    Ok(d.r.scale(mu.value() / (4.0 * kappa)))
}

pub fn invert_r(target: &Field, kappa: f64, mu: Mu, tol: f64, max_iter: usize) -> Result<InversionReport> {
    if !(tol > 0.0) || max_iter == 0 {
        return Err(Error::InvalidArgument(format!("need tol > 0 and max_iter > 0, got {tol}, {max_iter}")));
    }
    let g = *target.geometry();
    let free = torus_factor(kappa, &g);
    let k2 = 4.0 * kappa * kappa;
    let source = apply_symbol(target, |xi| C64::new(k2 + xi * xi, 0.0))?;
    let opts = DiagnosticsOptions::default();

    let mut q = source.scale(1.0 / free);
    let mut residuals = Vec::new();
    let mut growth = 0;
    for it in 1..=max_iter {
        let d = greens_diagnostics(&q, kappa, mu, &opts)?;
        let res = bessel_norm(&d.r.scale(mu.value() / (4.0 * kappa)).sub(target)?, 2.0);
        if !res.is_finite() {
            return Err(Error::InversionDiverged { iterations: it, residual: res });
        }
        if let Some(&prev) = residuals.last() {
            growth = if res > prev { growth + 1 } else { 0 };
            if growth >= GROWTH_LIMIT {
                return Err(Error::InversionDiverged { iterations: it, residual: res });
            }
        }
        residuals.push(res);
        if res <= tol {
            return Ok(InversionReport { q_recovered: q, iterations: it, final_residual: res, contraction_estimates: residuals });
        }
        let gq = product(&d.gamma, &q, Dealias::default())?;
        q = source.sub(&gq)?.scale(1.0 / free);
    }
    Err(Error::MaxIterations { iterations: max_iter, residual: *residuals.last().unwrap() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::initial::{cosine, random_smooth, scale_into_ball};
    use crate::spectral::{Geometry, Multiplier, apply_multiplier};

    #[test]
    fn zero_target_in_one_step() {
        let g = Geometry::circle(32).unwrap();
        let rep = invert_r(&Field::zeros(g), 6.0, Mu::Focusing, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        assert_eq!(rep.iterations, 1);
        assert_eq!(rep.q_recovered.l2_norm(), 0.0);
    }

    #[test]
    fn forward_is_helmholtz_to_leading_order() {
        let g = Geometry::circle(64).unwrap();
        for eps in [1e-2, 1e-3] {
            let q = cosine(g, eps, 1).unwrap();
            let lin = apply_multiplier(&q, Multiplier::HelmholtzInverse(3.0)).unwrap();
            let gap = forward_r(&q, 3.0, Mu::Defocusing).unwrap().sub(&lin).unwrap().l2_norm();
            assert!(gap < 10.0 * eps.powi(3), "{eps} {gap}");
        }
    }

    #[test]
    fn round_trip_cosine() {
        let g = Geometry::circle(64).unwrap();
        let q = cosine(g, 0.1, 1).unwrap();
        for mu in Mu::both() {
            let rep = invert_r(&forward_r(&q, 6.0, mu).unwrap(), 6.0, mu, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
            assert!(rep.q_recovered.sub(&q).unwrap().l2_norm() < 1e-10, "{rep:?}");
            let c = &rep.contraction_estimates;
            assert!(c.windows(2).all(|w| w[1] < w[0]));
        }
    }

    #[test]
    fn round_trip_on_line() {
        let g = Geometry::line_approx(16.0, 128).unwrap();
        let q = scale_into_ball(&random_smooth(g, 5, 4.0), 4.0, 0.05).unwrap();
        let rep = invert_r(&forward_r(&q, 4.0, Mu::Focusing).unwrap(), 4.0, Mu::Focusing, 1e-12, 100).unwrap();
        assert!(rep.q_recovered.sub(&q).unwrap().l2_norm() < 1e-9);
    }

    #[test]
    fn translation_equivariance() {
        let g = Geometry::circle(64).unwrap();
        let q = scale_into_ball(&random_smooth(g, 2, 4.0), 6.0, 0.05).unwrap();
        let t = forward_r(&q, 6.0, Mu::Defocusing).unwrap();
        let h = 0.137;
        let a = invert_r(&t.shift(h), 6.0, Mu::Defocusing, 1e-12, 100).unwrap().q_recovered;
        let b = invert_r(&t, 6.0, Mu::Defocusing, 1e-12, 100).unwrap().q_recovered.shift(h);
        assert!(a.sub(&b).unwrap().l2_norm() < 1e-10);
    }

    #[test]
    fn contraction_improves_with_kappa() {
        let g = Geometry::circle(64).unwrap();
        let q = cosine(g, 0.3, 1).unwrap();
        let factor = |k: f64| {
            let rep = invert_r(&forward_r(&q, k, Mu::Focusing).unwrap(), k, Mu::Focusing, 1e-13, 100).unwrap();
            rep.contraction_factors()[0]
        };
        let f = [factor(2.0), factor(4.0), factor(8.0)];
        assert!(f[0] > f[1] && f[1] > f[2], "{f:?}");
    }
}
