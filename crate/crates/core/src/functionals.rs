//! Mass, energy, the trace functional `A(kappa, q)` and the quantities built
//! from it.

use crate::error::{Error, Result};
use crate::lax::{
    self, build_lax, eigenvalues, greens_diagnostics, lambda_factor, torus_factor, DiagnosticsOptions,
    GreensDiagnostics, SeriesReport, DEFAULT_DELTA, SERIES_MAX_TERMS, SERIES_REL_TOL,
};
use crate::spectral::{apply_symbol, bessel_norm, product, w_symbol, Dealias, Field, C64};
use crate::Mu;

/// `M(q) = (1/2) int q^2`.
pub fn mass(q: &Field) -> f64 {
    0.5 * q.inner(q).expect("same geometry")
}

/// `H(q) = (1/2) int (q')^2 + mu q^4`.
pub fn hamiltonian(q: &Field, mu: Mu) -> f64 {
    let dq = q.derivative();
    let q2 = product(q, q, Dealias::default()).expect("same geometry");
    0.5 * (dq.inner(&dq).expect("same geometry") + mu.value() * q2.inner(&q2).expect("same geometry"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlphaMethod {
    /// `mu lambda sum_m ((-mu)^{m-1} / m) tr T^m`.
    Series,
    /// `lambda sum log(1 + mu t_i)` over the eigenvalues of `T`.
    Logdet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalReport {
    pub mass: f64,
    pub h_mkdv: f64,
    pub alpha: f64,
    /// Quadratic part, from its closed form.
    pub alpha2: f64,
    /// `alpha - alpha2`.
    pub alpha_tail: f64,
    pub kappa: f64,
    pub mu: Mu,
    /// Per-power magnitudes (series method only).
    pub series: Option<SeriesReport>,
}

/// Closed form of the quadratic part of `A`:
/// `mu c_L sum_xi L |q^(xi)|^2 2 kappa / (4 kappa^2 + xi^2)`, valid for any `kappa > 0`.
pub fn alpha2(q: &Field, kappa: f64, mu: Mu) -> f64 {
    let g = q.geometry();
    let l = g.period();
    let sum: f64 = g
        .fft_frequencies()
        .iter()
        .zip(q.coeffs())
        .map(|(xi, c)| c.norm_sqr() * 2.0 * kappa / (4.0 * kappa * kappa + xi * xi))
        .sum();
    mu.value() * torus_factor(kappa, g) * l * sum
}

/// `log(1 + z) - z` without cancellation for small `z`.
fn log1p_minus_id(z: C64) -> C64 {
    if z.norm() < 0.1 {
        // sum_{m >= 2} (-1)^{m+1} z^m / m
        let mut power = z;
        let mut acc = C64::new(0.0, 0.0);
        for m in 2..60 {
            power *= -z;
            let t = power / m as f64;
            acc += t;
            if t.norm() < 1e-18 * acc.norm() {
                break;
            }
        }
        acc
    } else {
        (C64::new(1.0, 0.0) + z).ln() - z
    }
}

/// `A(kappa, q)` with the default cutoff (every grid mode retained).
pub fn alpha(q: &Field, kappa: f64, mu: Mu, method: AlphaMethod) -> Result<FunctionalReport> {
    alpha_with_cutoff(q, kappa, mu, method, q.geometry().n_modes() / 2)
}

/// The quadratic part is taken from its closed form, since the truncated
/// trace of `T` converges only like `1/K`; higher powers come from the
/// band-limited matrix.
pub fn alpha_with_cutoff(q: &Field, kappa: f64, mu: Mu, method: AlphaMethod, cutoff: usize) -> Result<FunctionalReport> {
    let g = q.geometry();
    let lambda = lambda_factor(kappa, g)?;
    let sys = build_lax(q, kappa, mu, cutoff)?;
    let t = sys.t_matrix();
    let m = mu.value();
    let a2 = alpha2(q, kappa, mu);
    let (tail, series) = match method {
        AlphaMethod::Logdet => {
            let mut acc = C64::new(0.0, 0.0);
            for ti in eigenvalues(&t)? {
                let z = ti * m;
                let one_plus = C64::new(1.0, 0.0) + z;
                if one_plus.re <= 0.0 && one_plus.im.abs() <= 1e-12 {
                    return Err(Error::LogBranch { re: one_plus.re, im: one_plus.im });
                }
                acc += log1p_minus_id(z);
            }
            (lambda * acc.re, None)
        }
        AlphaMethod::Series => {
            let ball = sys.ball_check();
            if ball > DEFAULT_DELTA {
                return Err(Error::OutsideBall { ball_check: ball, delta: DEFAULT_DELTA });
            }
            let mut power = t.clone();
            let mut terms = Vec::new();
            let mut tail = 0.0;
            let mut first = None;
            let mut done = None;
            for k in 1..=SERIES_MAX_TERMS {
                if k > 1 {
                    power = &power * &t;
                }
                let term = m * lambda * (-m).powi(k as i32 - 1) / k as f64 * power.trace().re;
                terms.push(term.abs());
                if k > 1 {
                    tail += term;
                }
                let reference = *first.get_or_insert(term.abs());
                if term.abs() <= SERIES_REL_TOL * reference {
                    done = Some(k);
                    break;
                }
            }
            let Some(k) = done else {
                let n = terms.len();
                return Err(Error::SeriesDivergent { terms: n, last_ratio: terms[n - 1] / terms[n - 2] });
            };
            (tail, Some(SeriesReport { terms, truncated_at: k, ball_check: ball, spectral_radius: None }))
        }
    };
    let alpha = a2 + tail;
    Ok(FunctionalReport {
        mass: mass(q),
        h_mkdv: hamiltonian(q, mu),
        alpha,
        alpha2: a2,
        alpha_tail: tail,
        kappa,
        mu,
        series,
    })
}

/// `|A(kappa, q) - (mu / kappa) M(q) + (mu / 4 kappa^3) H(q)|`.
pub fn alpha_expansion_residual(q: &Field, kappa: f64, mu: Mu) -> Result<f64> {
    let r = alpha(q, kappa, mu, AlphaMethod::Logdet)?;
    let m = mu.value();
    Ok((r.alpha - m / kappa * r.mass + m / (4.0 * kappa.powi(3)) * r.h_mkdv).abs())
}

fn diagnostics(q: &Field, kappa: f64, mu: Mu) -> Result<GreensDiagnostics> {
    greens_diagnostics(q, kappa, mu, &DiagnosticsOptions::default())
}

/// `int r(kappa) d_x r(varkappa)`.
pub fn poisson_bracket_r(q: &Field, kappa: f64, varkappa: f64, mu: Mu) -> Result<f64> {
    if kappa == varkappa {
        return Err(Error::EqualParameters);
    }
    let a = diagnostics(q, kappa, mu)?;
    let b = diagnostics(q, varkappa, mu)?;
    a.r.inner(&b.r.derivative())
}

/// Default finite-difference step `1e-5 (1 + ||q||)`.
pub fn default_step(q: &Field) -> f64 {
    1e-5 * (1.0 + q.l2_norm())
}

/// `(<f, r(kappa)>, [A(q + h f) - A(q - h f)] / 2h)`.
pub fn variational_check(q: &Field, kappa: f64, mu: Mu, f: &Field, h: Option<f64>) -> Result<(f64, f64)> {
    let h = h.unwrap_or_else(|| default_step(q));
    let pairing = f.inner(&diagnostics(q, kappa, mu)?.r)?;
    let plus = alpha(&q.axpy(h, f)?, kappa, mu, AlphaMethod::Logdet)?.alpha;
    let minus = alpha(&q.axpy(-h, f)?, kappa, mu, AlphaMethod::Logdet)?.alpha;
    Ok((pairing, (plus - minus) / (2.0 * h)))
}

/// Residuals of the two-parameter identities, with the norm of the larger
/// side of each for scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoParameterResiduals {
    pub first: f64,
    pub second: f64,
    pub scale_first: f64,
    pub scale_second: f64,
}

impl TwoParameterResiduals {
    pub fn relative(&self) -> (f64, f64) {
        let rel = |r: f64, s: f64| if s == 0.0 { r } else { r / s };
        (rel(self.first, self.scale_first), rel(self.second, self.scale_second))
    }
}

/// With `g = gamma + 1`:
///
/// ```text
/// p(k) r(h) - r(k) p(h) =  d{p p - r r - mu g g} / (2 (k - h))
/// p(k) r(h) + r(k) p(h) = -d{p p + r r - mu g g} / (2 (k + h))
/// ```
pub fn two_parameter_identities(q: &Field, kappa: f64, varkappa: f64, mu: Mu) -> Result<TwoParameterResiduals> {
    if kappa == varkappa {
        return Err(Error::EqualParameters);
    }
    let g = *q.geometry();
    let a = diagnostics(q, kappa, mu)?;
    let b = diagnostics(q, varkappa, mu)?;
    let d = Dealias::default();
    let ga = a.gamma.add(&Field::constant(g, torus_factor(kappa, &g)))?;
    let gb = b.gamma.add(&Field::constant(g, torus_factor(varkappa, &g)))?;
    let pr = product(&a.p, &b.r, d)?;
    let rp = product(&a.r, &b.p, d)?;
    let pp = product(&a.p, &b.p, d)?;
    let rr = product(&a.r, &b.r, d)?;
    let gg = product(&ga, &gb, d)?.scale(mu.value());

    let lhs1 = pr.sub(&rp)?;
    let rhs1 = pp.sub(&rr)?.sub(&gg)?.derivative().scale(1.0 / (2.0 * (kappa - varkappa)));
    let lhs2 = pr.add(&rp)?;
    let rhs2 = pp.add(&rr)?.sub(&gg)?.derivative().scale(-1.0 / (2.0 * (kappa + varkappa)));
    Ok(TwoParameterResiduals {
        first: lhs1.sub(&rhs1)?.l2_norm(),
        second: lhs2.sub(&rhs2)?.l2_norm(),
        scale_first: lhs1.l2_norm().max(rhs1.l2_norm()),
        scale_second: lhs2.l2_norm().max(rhs2.l2_norm()),
    })
}

/// `<q, w(-i d, kappa) q>`.
pub fn w_pairing(q: &Field, kappa: f64) -> Result<f64> {
    let wq = apply_symbol(q, |xi| C64::new(w_symbol(xi, kappa), 0.0))?;
    q.inner(&wq)
}

/// `A^[2](kappa) - A^[2](kappa / 2) / 2` and `(2 mu / kappa) <q, w q>`.
pub fn w_identity(q: &Field, kappa: f64, mu: Mu) -> Result<(f64, f64)> {
    let lhs = alpha2(q, kappa, mu) - 0.5 * alpha2(q, kappa / 2.0, mu);
    Ok((lhs, 2.0 * mu.value() / kappa * w_pairing(q, kappa)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquicontinuityProfile {
    pub s: f64,
    pub kappa: f64,
    /// `(N, (kappa N)^{2s} <q, w(-i d, kappa N) q>)` over dyadic `N`.
    pub terms: Vec<(u64, f64)>,
    pub total: f64,
}

/// Dyadic `N = 1, 2, 4, ...` up to `n_max`, by default the first `N` with
/// `kappa N` beyond the largest grid frequency.
pub fn equicontinuity_profile(q: &Field, s: f64, kappa: f64, n_max: Option<u64>) -> Result<EquicontinuityProfile> {
    if !(0.0..1.0).contains(&s) {
        return Err(Error::InvalidArgument(format!("need 0 <= s < 1, got {s}")));
    }
    if !(kappa >= 1.0) {
        return Err(Error::KappaTooSmall(kappa));
    }
    let top = n_max.unwrap_or_else(|| {
        let xi = q.geometry().max_frequency();
        let mut n = 1u64;
        while kappa * (n as f64) < xi {
            n *= 2;
        }
        n
    });
    let mut terms = Vec::new();
    let mut n = 1u64;
    while n <= top {
        let kn = kappa * n as f64;
        terms.push((n, kn.powf(2.0 * s) * w_pairing(q, kn)?));
        n *= 2;
    }
    let total = terms.iter().map(|t| t.1).sum();
    Ok(EquicontinuityProfile { s, kappa, terms, total })
}

/// Fitted constants of the two-sided bound
///
/// ```text
/// sum_N (kN)^{2s} <q, w(kN) q>  <=  C1 ||q||_{H^s}^2
/// ||q||_{H^s}^2  <=  C2 (||q||_{H^-1}^2 + k^2 sum_N N^{2s} <q, w(kN) q>)
/// ```
///
/// Each constant is the largest ratio over the corpus at a given `kappa`.
#[derive(Debug, Clone, PartialEq)]
pub struct SandwichReport {
    pub s: f64,
    pub kappas: Vec<f64>,
    pub c1: Vec<f64>,
    pub c2: Vec<f64>,
}

impl SandwichReport {
    /// Largest relative deviation from the mean, for each constant.
    pub fn spread(&self) -> (f64, f64) {
        fn dev(v: &[f64]) -> f64 {
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            v.iter().map(|x| (x - mean).abs() / mean).fold(0.0, f64::max)
        }
        (dev(&self.c1), dev(&self.c2))
    }
}

pub fn sandwich_constants(corpus: &[Field], s: f64, kappas: &[f64]) -> Result<SandwichReport> {
    let mut c1 = Vec::with_capacity(kappas.len());
    let mut c2 = Vec::with_capacity(kappas.len());
    for &kappa in kappas {
        let (mut best1, mut best2) = (0.0f64, 0.0f64);
        for q in corpus {
            let prof = equicontinuity_profile(q, s, kappa, None)?;
            let hs = bessel_norm(q, s).powi(2);
            let hm1 = bessel_norm(q, -1.0).powi(2);
            // kappa^2 sum N^{2s} <q, w q> = kappa^{2 - 2s} * total
            let lower = hm1 + kappa.powf(2.0 - 2.0 * s) * prof.total;
            best1 = best1.max(prof.total / hs);
            best2 = best2.max(hs / lower);
        }
        c1.push(best1);
        c2.push(best2);
    }
    Ok(SandwichReport { s, kappas: kappas.to_vec(), c1, c2 })
}

/// Quadratic-part helper for tests and reports: `gamma - gamma^[2]` on the
/// given geometry, including the periodic mean correction.
pub fn gamma_remainder(q: &Field, d: &GreensDiagnostics, mu: Mu) -> Result<Field> {
    let g = *q.geometry();
    let quad = lax::gamma2(q, d.kappa, mu)?
        .scale(torus_factor(d.kappa, &g))
        .add(&Field::constant(g, lax::gamma2_mean_defect(q, d.kappa, mu)?))?;
    d.gamma.sub(&quad)
}

/// `p - p^[1] - p^[3]`, with the same periodic bookkeeping as [`gamma_remainder`].
pub fn p_remainder(q: &Field, d: &GreensDiagnostics, mu: Mu) -> Result<Field> {
    let g = *q.geometry();
    let c = torus_factor(d.kappa, &g);
    let defect = lax::gamma2_mean_defect(q, d.kappa, mu)?;
    let p1 = lax::p1(q, d.kappa, mu)?;
    let p3 = lax::p3(q, d.kappa, mu)?.scale(c).axpy(defect, &p1)?;
    d.p.sub(&p1.scale(c))?.sub(&p3)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::initial::{cosine, random_smooth, scale_into_ball, soliton};
    use crate::spectral::Geometry;
    use std::f64::consts::PI;

    fn circle(n: usize) -> Geometry {
        Geometry::circle(n).unwrap()
    }

    #[test]
    fn mass_and_energy_of_cosine() {
        let q = cosine(circle(32), 1.0, 1).unwrap();
        assert!((mass(&q) - 0.25).abs() < 1e-14);
        for mu in Mu::both() {
            let h = PI * PI + 3.0 * mu.value() / 16.0;
            assert!((hamiltonian(&q, mu) - h).abs() < 1e-12);
        }
        let z = Field::zeros(circle(32));
        assert_eq!((mass(&z), hamiltonian(&z, Mu::Focusing)), (0.0, 0.0));
    }

    #[test]
    fn soliton_mass_is_one() {
        let q = soliton(Geometry::line_approx(64.0, 1024).unwrap(), 1.0, 32.0).unwrap();
        assert!((mass(&q) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn alpha2_of_single_mode() {
        let q = cosine(circle(32), 1.0, 1).unwrap();
        let expect = 5.0 / (4.0 * PI * PI + 100.0);
        assert!((alpha2(&q, 5.0, Mu::Defocusing) - expect).abs() < 1e-15);
        assert!((expect - 0.03585).abs() < 1e-5);
    }

    #[test]
    fn alpha_of_zero_vanishes() {
        let z = Field::zeros(circle(32));
        for m in [AlphaMethod::Series, AlphaMethod::Logdet] {
            let r = alpha(&z, 3.0, Mu::Defocusing, m).unwrap();
            assert_eq!(r.alpha, 0.0);
        }
    }

    #[test]
    fn series_and_logdet_agree() {
        let g = circle(64);
        for kappa in [2.0, 6.0] {
            let q = scale_into_ball(&random_smooth(g, 5, 4.0), kappa, 0.08).unwrap();
            for mu in Mu::both() {
                let a = alpha(&q, kappa, mu, AlphaMethod::Series).unwrap();
                let b = alpha(&q, kappa, mu, AlphaMethod::Logdet).unwrap();
                assert!((a.alpha - b.alpha).abs() < 1e-10 * a.alpha.abs().max(1e-300), "{a:?} {b:?}");
                assert!((a.alpha - a.alpha2 - a.alpha_tail).abs() < 1e-18);
                assert!(a.series.unwrap().truncated_at > 1);
            }
        }
    }

    #[test]
    fn logdet_detects_branch() {
        // focusing, large constant: T has eigenvalues near a^2 / (kappa^2 + xi^2)
        let q = Field::constant(circle(16), 3.0);
        let err = alpha(&q, 1.0, Mu::Focusing, AlphaMethod::Logdet);
        assert!(matches!(err, Err(Error::LogBranch { .. })), "{err:?}");
        let err = alpha(&q, 1.0, Mu::Focusing, AlphaMethod::Series);
        assert!(matches!(err, Err(Error::OutsideBall { .. })));
    }

    #[test]
    fn bracket_is_antisymmetric_and_small() {
        let q = cosine(circle(64), 0.1, 1).unwrap();
        for mu in Mu::both() {
            let ab = poisson_bracket_r(&q, 4.0, 6.0, mu).unwrap();
            let ba = poisson_bracket_r(&q, 6.0, 4.0, mu).unwrap();
            assert!((ab + ba).abs() < 1e-12);
            assert!(ab.abs() < 1e-10 * 1e-2);
        }
        assert!(matches!(poisson_bracket_r(&q, 4.0, 4.0, Mu::Focusing), Err(Error::EqualParameters)));
    }

    #[test]
    fn variational_derivative_is_r() {
        let g = circle(64);
        let q = scale_into_ball(&random_smooth(g, 1, 4.0), 4.0, 0.05).unwrap();
        let f = random_smooth(g, 2, 4.0).scale(0.1);
        for mu in Mu::both() {
            let (pairing, fd) = variational_check(&q, 4.0, mu, &f, None).unwrap();
            assert!((pairing - fd).abs() <= 1e-7 * (1.0 + pairing.abs()), "{pairing} {fd}");
        }
        let (a, b) = variational_check(&q, 4.0, Mu::Focusing, &Field::zeros(g), None).unwrap();
        assert_eq!((a, b), (0.0, 0.0));
    }

    #[test]
    fn two_parameter_identities_hold() {
        let q = cosine(circle(128), 0.1, 1).unwrap();
        for mu in Mu::both() {
            let (a, b) = two_parameter_identities(&q, 4.0, 7.0, mu).unwrap().relative();
            assert!(a < 1e-8 && b < 1e-8, "{a} {b}");
        }
        let z = two_parameter_identities(&Field::zeros(circle(32)), 4.0, 7.0, Mu::Focusing).unwrap();
        assert_eq!((z.first, z.second), (0.0, 0.0));
    }

    #[test]
    fn sandwich_single_mode_ratios() {
        // closed-form sums for q = cos(2 pi x), s = 1/4
        let q = cosine(circle(128), 1.0, 1).unwrap();
        let rep = sandwich_constants(&[q], 0.25, &[1.0, 8.0]).unwrap();
        assert!((rep.c2[0] - 4.144).abs() < 1e-3 && (rep.c2[1] - 0.334).abs() < 1e-3, "{rep:?}");
        let flat = sandwich_constants(&[Field::constant(circle(32), 1.0)], 0.25, &[1.0, 8.0]).unwrap();
        assert_eq!(flat.c1, vec![0.0, 0.0]);
        assert!(flat.c2.iter().all(|c| (c - 1.0).abs() < 1e-12));
    }

    #[test]
    fn w_identity_and_profile() {
        let q = cosine(circle(64), 1.0, 1).unwrap();
        for mu in Mu::both() {
            for kappa in [1.0, 3.0, 10.0] {
                let (lhs, rhs) = w_identity(&q, kappa, mu).unwrap();
                assert!((lhs - rhs).abs() < 1e-14, "{lhs} {rhs}");
            }
        }
        let prof = equicontinuity_profile(&q, 0.0, 1.0, None).unwrap();
        for &(n, t) in &prof.terms {
            assert!((t - w_symbol(2.0 * PI, n as f64) / 2.0).abs() < 1e-15);
        }
        assert!(prof.terms.iter().all(|t| t.1 >= 0.0));
        let z = equicontinuity_profile(&Field::zeros(circle(16)), 0.5, 2.0, Some(8)).unwrap();
        assert_eq!(z.total, 0.0);
        assert_eq!(z.terms.len(), 4);
    }

    // For q = a cos(2 pi x) the quadratic part alone leaves
    // (a^2 / 2) [2k / (4k^2 + xi^2) - 1 / 2k + xi^2 / 8k^3] at xi = 2 pi,
    // which at k = 8 is about A / 42.
    #[test]
    fn expansion_residual_matches_quadratic_remainder() {
        let q = cosine(circle(128), 0.1, 1).unwrap();
        let (k, xi2) = (8.0f64, 4.0 * PI * PI);
        let quad = 0.005 * (2.0 * k / (4.0 * k * k + xi2) - 0.5 / k + xi2 / (8.0 * k.powi(3)));
        for mu in Mu::both() {
            let a = alpha(&q, k, mu, AlphaMethod::Logdet).unwrap().alpha;
            let res = alpha_expansion_residual(&q, k, mu).unwrap();
            assert!((res - quad).abs() < 0.05 * quad, "{res} {quad}");
            assert!(res * 30.0 < a.abs());
        }
    }
}
