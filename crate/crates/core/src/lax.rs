//! Truncated-Fourier Lax operator and Green's-function diagnostics.
//!
//! The operator
//!
//! ```text
//! L_q(kappa) = [[kappa - d, 0], [0, kappa + d]] + [[0, q], [-mu q, 0]]
//! ```
//!
//! is represented on the retained modes `|k| <= K` in the orthonormal basis
//! `exp(i xi_k x) / sqrt(L)`. Multiplication by `q` becomes the Toeplitz
//! matrix `Q(xi, eta) = c(xi - eta)`, and the free resolvents are diagonal.
//!
//! The diagonal of an integral kernel with matrix `M` has Fourier
//! coefficients `(1/L) sum_{xi - eta = zeta} M(xi, eta)`. For the first few
//! orders of the Neumann series these anti-diagonal sums decay only
//! algebraically in the cutoff, so by default the truncated first-order part
//! of `p, r` and second-order part of `gamma` (plus the third-order parts of
//! `p, r`) are swapped for their closed forms. The remaining terms carry at
//! least four resolvent factors and are well resolved by the truncation.

use nalgebra::{DMatrix, Schur};

use crate::error::{Error, Result};
use crate::spectral::{apply_multiplier, product, Dealias, Field, Geometry, GeometryKind, Multiplier, C64};
use crate::Mu;

/// Smallness constant used for every ball hypothesis.
pub const DEFAULT_DELTA: f64 = 0.1;
/// Neumann/trace series stop once a term falls below this fraction of the first.
pub const SERIES_REL_TOL: f64 = 1e-14;
/// Largest power of `T = (kappa - d)^{-1} q (kappa + d)^{-1} q` summed.
pub const SERIES_MAX_TERMS: usize = 40;
/// Condition estimates above this are treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

fn check_kappa(kappa: f64) -> Result<()> {
    if kappa >= 1.0 && kappa.is_finite() {
        Ok(())
    } else {
        Err(Error::KappaTooSmall(kappa))
    }
}

/// `1` on the line, `tanh(kappa / 2)` on the circle.
pub fn lambda_factor(kappa: f64, geometry: &Geometry) -> Result<f64> {
    check_kappa(kappa)?;
    Ok(match geometry.kind() {
        GeometryKind::Circle => (kappa / 2.0).tanh(),
        GeometryKind::LineApprox => 1.0,
    })
}

/// Ratio between a torus anti-diagonal sum (scaled by `lambda / L`) and the
/// corresponding line integral. Exactly one on the circle; on the
/// line approximation it is `coth(kappa L / 2)`, the periodization error.
pub fn torus_factor(kappa: f64, geometry: &Geometry) -> f64 {
    match geometry.kind() {
        GeometryKind::Circle => 1.0,
        GeometryKind::LineApprox => 1.0 / (kappa * geometry.period() / 2.0).tanh(),
    }
}

/// `kappa^{-1/2} ||q||_{L^2}`.
pub fn ball_check(q: &Field, kappa: f64) -> f64 {
    q.l2_norm() / kappa.sqrt()
}

fn scale_rows(m: &mut DMatrix<C64>, d: &[C64]) {
    for (i, mut row) in m.row_iter_mut().enumerate() {
        row *= d[i];
    }
}

fn scale_cols(m: &mut DMatrix<C64>, d: &[C64]) {
    for (j, mut col) in m.column_iter_mut().enumerate() {
        col *= d[j];
    }
}

/// Eigenvalues of a square complex matrix from its Schur form.
pub fn eigenvalues(m: &DMatrix<C64>) -> Result<Vec<C64>> {
    if m.iter().all(|z| *z == C64::new(0.0, 0.0)) {
        return Ok(vec![C64::new(0.0, 0.0); m.nrows()]);
    }
    let schur = Schur::try_new(m.clone(), 1e-15, 10_000)
        .ok_or_else(|| Error::InvalidArgument("Schur iteration did not converge".into()))?;
    let t = schur.unpack().1;
    Ok((0..t.nrows()).map(|i| t[(i, i)]).collect())
}

/// Frobenius (Hilbert-Schmidt) norm.
pub fn hilbert_schmidt_norm(t: &DMatrix<C64>) -> f64 {
    t.norm()
}

/// Matrix form of `L_q(kappa)` on the retained band `|k| <= K`.
#[derive(Debug, Clone)]
pub struct LaxSystem {
    q: Field,
    kappa: f64,
    mu: Mu,
    cutoff: usize,
    freqs: Vec<f64>,
    d_minus: Vec<C64>,
    d_plus: Vec<C64>,
    q_matrix: DMatrix<C64>,
}

pub fn build_lax(q: &Field, kappa: f64, mu: Mu, cutoff: usize) -> Result<LaxSystem> {
    check_kappa(kappa)?;
    let g = q.geometry();
    let max = g.n_modes() / 2;
    if cutoff > max || cutoff == 0 {
        return Err(Error::CutoffTooLarge { cutoff, max });
    }
    let k = cutoff as i64;
    let ks: Vec<i64> = (-k..=k).collect();
    let freqs: Vec<f64> = ks.iter().map(|&k| g.wavenumber(k)).collect();
    let d_minus = freqs.iter().map(|&xi| C64::new(kappa, -xi).inv()).collect();
    let d_plus = freqs.iter().map(|&xi| C64::new(kappa, xi).inv()).collect();
    let n = ks.len();
    let q_matrix = DMatrix::from_fn(n, n, |i, j| q.coeff(ks[i] - ks[j]));
    Ok(LaxSystem { q: q.clone(), kappa, mu, cutoff, freqs, d_minus, d_plus, q_matrix })
}

/// Blocks of `R - R_0` on the retained band.
#[derive(Debug, Clone)]
pub struct ResolventBlocks {
    pub g11: DMatrix<C64>,
    pub g12: DMatrix<C64>,
    pub g21: DMatrix<C64>,
    pub g22: DMatrix<C64>,
}

impl LaxSystem {
    pub fn q(&self) -> &Field {
        &self.q
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn mu(&self) -> Mu {
        self.mu
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    pub fn dim(&self) -> usize {
        self.freqs.len()
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.freqs
    }

    pub fn d_minus(&self) -> &[C64] {
        &self.d_minus
    }

    pub fn d_plus(&self) -> &[C64] {
        &self.d_plus
    }

    pub fn q_matrix(&self) -> &DMatrix<C64> {
        &self.q_matrix
    }

    /// `Q D_+` (columns scaled).
    fn q_dplus(&self) -> DMatrix<C64> {
        let mut m = self.q_matrix.clone();
        scale_cols(&mut m, &self.d_plus);
        m
    }

    /// `T = D_- Q D_+ Q`.
    pub fn t_matrix(&self) -> DMatrix<C64> {
        let mut t = self.q_dplus() * &self.q_matrix;
        scale_rows(&mut t, &self.d_minus);
        t
    }

    /// The full `2n x 2n` matrix of `L_q(kappa)`.
    pub fn full_matrix(&self) -> DMatrix<C64> {
        let n = self.dim();
        let mu = self.mu.value();
        let mut m = DMatrix::zeros(2 * n, 2 * n);
        for i in 0..n {
            m[(i, i)] = C64::new(self.kappa, -self.freqs[i]);
            m[(n + i, n + i)] = C64::new(self.kappa, self.freqs[i]);
            for j in 0..n {
                m[(i, n + j)] = self.q_matrix[(i, j)];
                m[(n + i, j)] = -self.q_matrix[(i, j)] * mu;
            }
        }
        m
    }

    pub fn ball_check(&self) -> f64 {
        ball_check(&self.q, self.kappa)
    }

    /// Spectral radius of `mu T`.
    pub fn spectral_radius(&self) -> Result<f64> {
        Ok(eigenvalues(&self.t_matrix())?
            .into_iter()
            .fold(0.0, |m, z| m.max(z.norm())))
    }

    /// `R - R_0` by dense elimination. The lower-right block of `L_q` is
    /// diagonal, so the inverse is assembled from the Schur complement
    /// `S = (kappa - d) + mu Q D_+ Q`.
    pub fn resolvent_direct(&self) -> Result<(ResolventBlocks, f64)> {
        let n = self.dim();
        let mu = self.mu.value();
        let qd = self.q_dplus();
        let mut s = &qd * &self.q_matrix * C64::new(mu, 0.0);
        for i in 0..n {
            s[(i, i)] += C64::new(self.kappa, -self.freqs[i]);
        }
        let s_norm = one_norm(&s);
        let g11_full = s
            .clone()
            .lu()
            .try_inverse()
            .ok_or(Error::SingularOperator(f64::INFINITY))?;
        let cond = s_norm * one_norm(&g11_full);
        if !(cond < MAX_CONDITION) {
            return Err(Error::SingularOperator(cond));
        }
        let g12 = -(&g11_full * &qd);
        let mut g21 = &self.q_matrix * &g11_full * C64::new(mu, 0.0);
        scale_rows(&mut g21, &self.d_plus);
        let g22 = -(&g21 * &qd);
        let mut g11 = g11_full;
        for i in 0..n {
            g11[(i, i)] -= self.d_minus[i];
        }
        Ok((ResolventBlocks { g11, g12, g21, g22 }, cond))
    }

    /// `R - R_0 = sum_{l >= 1} (-1)^l (R_0 Q~)^l R_0`, summed until a term
    /// drops below `SERIES_REL_TOL` times the first.
    pub fn resolvent_series(&self, delta: f64) -> Result<(ResolventBlocks, SeriesReport)> {
        let ball = self.ball_check();
        if ball > delta {
            return Err(Error::OutsideBall { ball_check: ball, delta });
        }
        let rho = self.spectral_radius()?;
        if rho >= 1.0 {
            return Err(Error::SpectralRadius(rho));
        }
        let n = self.dim();
        let mu = C64::new(self.mu.value(), 0.0);
        let mut dm_q = self.q_matrix.clone();
        scale_rows(&mut dm_q, &self.d_minus);
        let mut dp_q = self.q_matrix.clone();
        scale_rows(&mut dp_q, &self.d_plus);

        let zero = || DMatrix::<C64>::zeros(n, n);
        let mut acc = ResolventBlocks { g11: zero(), g12: zero(), g21: zero(), g22: zero() };
        // current power (R_0 Q~)^l R_0; odd powers are block off-diagonal
        let mut x11 = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(self.d_minus.clone()));
        let mut x22 = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(self.d_plus.clone()));
        let mut x12 = zero();
        let mut x21 = zero();
        let mut terms = Vec::new();
        let max_l = 2 * SERIES_MAX_TERMS;
        for l in 1..=max_l {
            let odd = l % 2 == 1;
            if odd {
                x12 = &dm_q * &x22;
                x21 = &dp_q * &x11 * (-mu);
            } else {
                x11 = &dm_q * &x21;
                x22 = &dp_q * &x12 * (-mu);
            }
            let sign = C64::new(if odd { -1.0 } else { 1.0 }, 0.0);
            let size = if odd {
                (x12.norm_squared() + x21.norm_squared()).sqrt()
            } else {
                (x11.norm_squared() + x22.norm_squared()).sqrt()
            };
            if odd {
                acc.g12 += &x12 * sign;
                acc.g21 += &x21 * sign;
            } else {
                acc.g11 += &x11 * sign;
                acc.g22 += &x22 * sign;
            }
            terms.push(size);
            // compare against the first term of the same parity
            let reference = if odd { terms[0] } else { terms.get(1).copied().unwrap_or(size) };
            if l >= 2 && (size <= SERIES_REL_TOL * reference || size == 0.0) {
                return Ok((
                    acc,
                    SeriesReport { terms, truncated_at: l, ball_check: ball, spectral_radius: Some(rho) },
                ));
            }
        }
        let k = terms.len();
        Err(Error::SeriesDivergent { terms: k, last_ratio: terms[k - 1] / terms[k - 3] })
    }

    /// Coefficients `(lambda / L) sum_{xi - eta = zeta} M(xi, eta)` for
    /// `|zeta| <= 2K`, indexed by `zeta + 2K`.
    fn diagonal_sums(&self, m: &DMatrix<C64>) -> Vec<C64> {
        let n = self.dim();
        let mut out = vec![C64::new(0.0, 0.0); 2 * n - 1];
        for j in 0..n {
            for i in 0..n {
                // k_i - k_j + 2K = i - j + (n - 1)
                out[i + n - 1 - j] += m[(i, j)];
            }
        }
        out
    }

    fn diagonal_field(&self, sums: &[C64], scale: f64) -> Field {
        let k2 = 2 * self.cutoff as i64;
        Field::from_modes(*self.q.geometry(), |z| {
            if z.abs() > k2 {
                C64::new(0.0, 0.0)
            } else {
                sums[(z + k2) as usize] * scale
            }
        })
    }

    /// Truncated low-order Neumann pieces, extracted on the diagonal exactly
    /// like the full resolvent: `(gamma^(2), r^(1), p^(1))`.
    fn truncated_low_order(&self, scale: f64) -> [Field; 3] {
        let n = self.dim();
        let mu = self.mu.value();
        let mu_c = C64::new(mu, 0.0);
        let (dm, dp) = (&self.d_minus, &self.d_plus);
        // G12 = -D_- Q D_+, G21 = mu D_+ Q D_-
        let g12_1 = DMatrix::from_fn(n, n, |i, j| -dm[i] * self.q_matrix[(i, j)] * dp[j]);
        let g21_1 = DMatrix::from_fn(n, n, |i, j| dp[i] * self.q_matrix[(i, j)] * dm[j] * mu);
        // G11 = -mu D_- (Q D_+ Q) D_-, G22 = -mu D_+ (Q D_- Q) D_+ and Q D_- Q = (Q D_+ Q)^*
        let qdq_plus = self.q_dplus() * &self.q_matrix;
        let mut g22_2 = qdq_plus.adjoint() * (-mu_c);
        scale_rows(&mut g22_2, dp);
        scale_cols(&mut g22_2, dp);
        let mut g11_2 = qdq_plus * (-mu_c);
        scale_rows(&mut g11_2, dm);
        scale_cols(&mut g11_2, dm);

        let gamma2 = self.combine(&g11_2, &g22_2, 1.0, scale);
        let (r1, p1) = self.off_diagonal(&g12_1, &g21_1, scale);
        [gamma2, r1, p1]
    }

    /// Truncated third-order pieces `(r^(3), p^(3))`.
    fn truncated_third_order(&self, scale: f64) -> (Field, Field) {
        let mu_c = C64::new(self.mu.value(), 0.0);
        let (dm, dp) = (&self.d_minus, &self.d_plus);
        let qdq_plus = self.q_dplus() * &self.q_matrix;
        let mut dm_q = self.q_matrix.clone();
        scale_rows(&mut dm_q, dm);
        let mut dp_q = self.q_matrix.clone();
        scale_rows(&mut dp_q, dp);
        // G12 = mu D_- Q D_+ Q D_- Q D_+, G21 = -D_+ Q D_- Q D_+ Q D_-
        let mut g12 = &qdq_plus * &dm_q * mu_c;
        scale_rows(&mut g12, dm);
        scale_cols(&mut g12, dp);
        let mut g21 = qdq_plus.adjoint() * &dp_q * C64::new(-1.0, 0.0);
        scale_rows(&mut g21, dp);
        scale_cols(&mut g21, dm);
        self.off_diagonal(&g12, &g21, scale)
    }

    fn combine(&self, a: &DMatrix<C64>, b: &DMatrix<C64>, sb: f64, scale: f64) -> Field {
        let sa = self.diagonal_sums(a);
        let sbv = self.diagonal_sums(b);
        let s: Vec<C64> = sa.iter().zip(&sbv).map(|(x, y)| x + y * sb).collect();
        self.diagonal_field(&s, scale)
    }

    /// `(r, p) = lambda (G21 -+ mu G12)` on the diagonal.
    fn off_diagonal(&self, g12: &DMatrix<C64>, g21: &DMatrix<C64>, scale: f64) -> (Field, Field) {
        let mu = self.mu.value();
        (self.combine(g21, g12, -mu, scale), self.combine(g21, g12, mu, scale))
    }
}

fn one_norm(m: &DMatrix<C64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Per-term magnitudes of a truncated series.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesReport {
    pub terms: Vec<f64>,
    pub truncated_at: usize,
    pub ball_check: f64,
    pub spectral_radius: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResolventMethod {
    /// Neumann series in `R_0 Q~`.
    Series,
    /// Dense LU inversion.
    Direct,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagnosticsOptions {
    pub method: ResolventMethod,
    /// Retained modes `|k| <= cutoff`; `None` keeps every grid mode.
    pub cutoff: Option<usize>,
    pub delta: f64,
    /// Replace the slowly converging low-order anti-diagonal sums by their
    /// closed forms.
    pub low_order_exact: bool,
}

impl Default for DiagnosticsOptions {
    fn default() -> Self {
        Self { method: ResolventMethod::Direct, cutoff: None, delta: DEFAULT_DELTA, low_order_exact: true }
    }
}

impl DiagnosticsOptions {
    pub fn with_method(method: ResolventMethod) -> Self {
        Self { method, ..Self::default() }
    }

    pub fn resolve_cutoff(&self, geometry: &Geometry) -> usize {
        self.cutoff.unwrap_or(geometry.n_modes() / 2)
    }
}

/// Diagonal Green's-function data at one spectral parameter.
#[derive(Debug, Clone)]
pub struct GreensDiagnostics {
    pub gamma: Field,
    pub p: Field,
    pub r: Field,
    pub kappa: f64,
    pub lambda: f64,
    /// Present for the series method.
    pub series: Option<SeriesReport>,
    /// One-norm condition estimate of the Schur complement (direct method).
    pub condition: Option<f64>,
}

pub fn greens_diagnostics(q: &Field, kappa: f64, mu: Mu, opts: &DiagnosticsOptions) -> Result<GreensDiagnostics> {
    let g = q.geometry();
    let lambda = lambda_factor(kappa, g)?;
    let sys = build_lax(q, kappa, mu, opts.resolve_cutoff(g))?;
    let (blocks, series, condition) = match opts.method {
        ResolventMethod::Direct => {
            let (b, c) = sys.resolvent_direct()?;
            (b, None, Some(c))
        }
        ResolventMethod::Series => {
            let (b, s) = sys.resolvent_series(opts.delta)?;
            (b, Some(s), None)
        }
    };
    let scale = lambda / g.period();
    let mut gamma = sys.combine(&blocks.g11, &blocks.g22, 1.0, scale);
    let (mut r, mut p) = sys.off_diagonal(&blocks.g12, &blocks.g21, scale);

    if opts.low_order_exact {
        let [g2t, r1t, p1t] = sys.truncated_low_order(scale);
        let (r3t, p3t) = sys.truncated_third_order(scale);
        let c = torus_factor(kappa, g);
        let defect = gamma2_mean_defect(q, kappa, mu)?;
        let g2 = gamma2(q, kappa, mu)?.scale(c).add(&Field::constant(*g, defect))?;
        let (r1e, p1e) = (r1(q, kappa, mu)?, p1(q, kappa, mu)?);
        // periodic third-order sums: closed form plus the double-pole term,
        // which is the mean defect of gamma acting on the first-order part
        let r3e = r3(q, kappa, mu)?.scale(c).axpy(defect, &r1e)?;
        let p3e = p3(q, kappa, mu)?.scale(c).axpy(defect, &p1e)?;
        gamma = gamma.sub(&g2t)?.add(&g2)?;
        r = r.sub(&r1t)?.sub(&r3t)?.axpy(c, &r1e)?.add(&r3e)?;
        p = p.sub(&p1t)?.sub(&p3t)?.axpy(c, &p1e)?.add(&p3e)?;
    }
    Ok(GreensDiagnostics { gamma, p, r, kappa, lambda, series, condition })
}

/// Extra zero-mode term in the exact periodic lattice sum for the quadratic
/// part of `gamma`, from the double pole of `D_- Q D_+ Q D_-` on the diagonal.
/// The same constant multiplies `r^[1]`, `p^[1]` in the cubic sums:
/// `-mu lambda L kappa csch^2(kappa L / 2) sum |c_k|^2 / (4 kappa^2 + xi_k^2)`.
pub fn gamma2_mean_defect(q: &Field, kappa: f64, mu: Mu) -> Result<f64> {
    let g = q.geometry();
    let lambda = lambda_factor(kappa, g)?;
    let l = g.period();
    let csch2 = (kappa * l / 2.0).sinh().powi(-2);
    if csch2 == 0.0 {
        return Ok(0.0);
    }
    let sum: f64 = g
        .fft_frequencies()
        .iter()
        .zip(q.coeffs())
        .map(|(xi, c)| c.norm_sqr() / (4.0 * kappa * kappa + xi * xi))
        .sum();
    Ok(-mu.value() * lambda * l * kappa * csch2 * sum)
}

/// Relative residuals of the first-order system satisfied by the diagonal
/// Green's function, each normalized by the larger side. The `1` in
/// `gamma + 1` is the free diagonal, which on the line approximation is the
/// periodization factor `coth(kappa L / 2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdentityResiduals {
    /// `gamma' = 2 q p`
    pub gamma: f64,
    /// `p' = -2 kappa r + 2 mu q (gamma + 1)`
    pub p: f64,
    /// `r' = -2 kappa p`
    pub r: f64,
    /// `(mu / 4 kappa) r = (4 kappa^2 - d^2)^{-1} (q + gamma q)`
    pub r_equation: f64,
}

impl IdentityResiduals {
    pub fn max(&self) -> f64 {
        self.gamma.max(self.p).max(self.r).max(self.r_equation)
    }
}

fn relative_gap(lhs: &Field, rhs: &Field) -> Result<f64> {
    let scale = lhs.l2_norm().max(rhs.l2_norm());
    let gap = lhs.sub(rhs)?.l2_norm();
    Ok(if scale == 0.0 { gap } else { gap / scale })
}

pub fn identity_residuals(q: &Field, d: &GreensDiagnostics, mu: Mu) -> Result<IdentityResiduals> {
    let m = mu.value();
    let k = d.kappa;
    let dealias = Dealias::default();
    let free = torus_factor(k, q.geometry());
    let g1 = d.gamma.add(&Field::constant(*q.geometry(), free))?;
    let qp = product(q, &d.p, dealias)?;
    let qg1 = product(q, &g1, dealias)?;
    let p_rhs = d.r.scale(-2.0 * k).axpy(2.0 * m, &qg1)?;
    let q_plus = qg1.clone();
    Ok(IdentityResiduals {
        gamma: relative_gap(&d.gamma.derivative(), &qp.scale(2.0))?,
        p: relative_gap(&d.p.derivative(), &p_rhs)?,
        r: relative_gap(&d.r.derivative(), &d.p.scale(-2.0 * k))?,
        r_equation: relative_gap(
            &d.r.scale(m / (4.0 * k)),
            &apply_multiplier(&q_plus, Multiplier::HelmholtzInverse(k))?,
        )?,
    })
}

/// `gamma^[2] = -2 mu (2 kappa - d)^{-1} q * (2 kappa + d)^{-1} q`.
pub fn gamma2(q: &Field, kappa: f64, mu: Mu) -> Result<Field> {
    check_kappa(kappa)?;
    let a = apply_multiplier(q, Multiplier::ResolventMinus(2.0 * kappa))?;
    let b = apply_multiplier(q, Multiplier::ResolventPlus(2.0 * kappa))?;
    Ok(product(&a, &b, Dealias::default())?.scale(-2.0 * mu.value()))
}

/// `p^[1] = -2 mu d (4 kappa^2 - d^2)^{-1} q`.
pub fn p1(q: &Field, kappa: f64, mu: Mu) -> Result<Field> {
    check_kappa(kappa)?;
    let h = apply_multiplier(q, Multiplier::HelmholtzInverse(kappa))?;
    Ok(h.derivative().scale(-2.0 * mu.value()))
}

/// Cubic part of `p`: `-2 mu d (4 kappa^2 - d^2)^{-1} (q gamma^[2])`.
///
/// This is `-(r^[3])' / (2 kappa)`; the coefficient follows from
/// `r' = -2 kappa p` and is confirmed against the truncated third-order
/// Neumann term in the tests.
pub fn p3(q: &Field, kappa: f64, mu: Mu) -> Result<Field> {
    let qg = product(q, &gamma2(q, kappa, mu)?, Dealias::default())?;
    let h = apply_multiplier(&qg, Multiplier::HelmholtzInverse(kappa))?;
    Ok(h.derivative().scale(-2.0 * mu.value()))
}

/// `r^[1] = 4 mu kappa (4 kappa^2 - d^2)^{-1} q`.
pub fn r1(q: &Field, kappa: f64, mu: Mu) -> Result<Field> {
    check_kappa(kappa)?;
    Ok(apply_multiplier(q, Multiplier::HelmholtzInverse(kappa))?.scale(4.0 * mu.value() * kappa))
}

/// `r^[3] = 4 mu kappa (4 kappa^2 - d^2)^{-1} (q gamma^[2])`.
pub fn r3(q: &Field, kappa: f64, mu: Mu) -> Result<Field> {
    let qg = product(q, &gamma2(q, kappa, mu)?, Dealias::default())?;
    Ok(apply_multiplier(&qg, Multiplier::HelmholtzInverse(kappa))?.scale(4.0 * mu.value() * kappa))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn circle(n: usize) -> Geometry {
        Geometry::circle(n).unwrap()
    }

    fn cosine(g: Geometry, a: f64, k: f64) -> Field {
        let w = g.wavenumber(1) * k;
        Field::from_fn(g, |x| a * (w * x).cos())
    }

    fn opts(method: ResolventMethod, cutoff: usize) -> DiagnosticsOptions {
        DiagnosticsOptions { cutoff: Some(cutoff), ..DiagnosticsOptions::with_method(method) }
    }

    #[test]
    fn zero_potential_is_trivial() {
        let g = circle(32);
        for method in [ResolventMethod::Direct, ResolventMethod::Series] {
            let d = greens_diagnostics(&Field::zeros(g), 2.0, Mu::Defocusing, &opts(method, 8)).unwrap();
            assert_eq!(d.gamma.max_abs(), 0.0);
            assert_eq!(d.p.max_abs(), 0.0);
            assert_eq!(d.r.max_abs(), 0.0);
        }
    }

    #[test]
    fn small_kappa_rejected() {
        let g = circle(32);
        let err = greens_diagnostics(&Field::zeros(g), 0.5, Mu::Focusing, &DiagnosticsOptions::default());
        assert!(matches!(err, Err(Error::KappaTooSmall(_))));
        assert!(matches!(build_lax(&Field::zeros(g), 2.0, Mu::Focusing, 17), Err(Error::CutoffTooLarge { .. })));
    }

    #[test]
    fn cosine_gives_two_off_diagonals() {
        let g = circle(32);
        let sys = build_lax(&cosine(g, 0.3, 1.0), 2.0, Mu::Defocusing, 6).unwrap();
        let q = sys.q_matrix();
        for i in 0..sys.dim() {
            for j in 0..sys.dim() {
                let expect = if i.abs_diff(j) == 1 { 0.15 } else { 0.0 };
                assert!((q[(i, j)] - C64::new(expect, 0.0)).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn schur_complement_matches_full_inverse() {
        let g = circle(32);
        let q = Field::from_fn(g, |x| 0.4 * (TAU * x).sin() + 0.2 * (2.0 * TAU * x).cos());
        for mu in Mu::both() {
            let sys = build_lax(&q, 1.5, mu, 8).unwrap();
            let (b, _) = sys.resolvent_direct().unwrap();
            let full = sys.full_matrix().try_inverse().unwrap();
            let n = sys.dim();
            for i in 0..n {
                for j in 0..n {
                    let d = if i == j { (sys.d_minus()[i], sys.d_plus()[i]) } else { (C64::new(0.0, 0.0), C64::new(0.0, 0.0)) };
                    assert!((full[(i, j)] - d.0 - b.g11[(i, j)]).norm() < 1e-12);
                    assert!((full[(i, n + j)] - b.g12[(i, j)]).norm() < 1e-12);
                    assert!((full[(n + i, j)] - b.g21[(i, j)]).norm() < 1e-12);
                    assert!((full[(n + i, n + j)] - d.1 - b.g22[(i, j)]).norm() < 1e-12);
                }
            }
        }
    }

    const TAU: f64 = std::f64::consts::TAU;

    // For constant q = a every mode decouples into a 2x2 system, and the
    // lattice sums have closed forms in terms of beta = sqrt(kappa^2 + mu a^2).
    #[test]
    fn constant_potential_closed_form() {
        let g = circle(64);
        let a = 0.05;
        let kappa = 3.0;
        for mu in Mu::both() {
            let m = mu.value();
            let beta = (kappa * kappa + m * a * a).sqrt();
            let lam = (kappa / 2.0).tanh();
            let coth = |z: f64| 1.0 / z.tanh();
            let gamma = lam * (kappa / beta) * coth(beta / 2.0) - 1.0;
            let r = lam * m * a * coth(beta / 2.0) / beta;
            for method in [ResolventMethod::Direct, ResolventMethod::Series] {
                // the third-order tail left after truncation is about a^3 / xi_K^3
                let d = greens_diagnostics(&Field::constant(g, a), kappa, mu, &opts(method, 32)).unwrap();
                assert!((d.gamma.coeff(0).re - gamma).abs() < 1e-12, "{} vs {gamma}", d.gamma.coeff(0));
                assert!((d.r.coeff(0).re - r).abs() < 1e-11, "{} vs {r}", d.r.coeff(0));
                assert!(d.p.max_abs() < 1e-14);
                assert!(d.gamma.sub(&Field::constant(g, gamma)).unwrap().max_abs() < 1e-12);
            }
        }
    }

    #[test]
    fn series_agrees_with_direct() {
        let g = circle(64);
        let q = Field::from_fn(g, |x| 0.1 * (TAU * x).sin() + 0.05 * (3.0 * TAU * x).cos());
        for mu in Mu::both() {
            let a = greens_diagnostics(&q, 4.0, mu, &opts(ResolventMethod::Direct, 16)).unwrap();
            let b = greens_diagnostics(&q, 4.0, mu, &opts(ResolventMethod::Series, 16)).unwrap();
            let s = b.series.unwrap();
            assert!(s.spectral_radius.unwrap() < 1.0);
            assert!(s.ball_check < DEFAULT_DELTA);
            for (x, y) in [(&a.gamma, &b.gamma), (&a.p, &b.p), (&a.r, &b.r)] {
                assert!(x.sub(y).unwrap().max_abs() < 1e-13);
            }
        }
    }

    #[test]
    fn series_refuses_outside_ball() {
        let g = circle(32);
        let err = greens_diagnostics(&cosine(g, 0.5, 1.0), 2.0, Mu::Defocusing, &opts(ResolventMethod::Series, 8));
        assert!(matches!(err, Err(Error::OutsideBall { .. })));
    }

    // The truncated third-order Neumann term with a generous cutoff must
    // reproduce the closed cubic forms. A larger kappa keeps the periodic
    // double-pole corrections (of size csch^2(kappa/2)) out of the way.
    #[test]
    fn cubic_terms_match_truncated_series() {
        let g = circle(256);
        let q = Field::from_fn(g, |x| 0.05 * (TAU * x).cos() + 0.03 * (2.0 * TAU * x).sin());
        let kappa = 14.0;
        for mu in Mu::both() {
            let sys = build_lax(&q, kappa, mu, 128).unwrap();
            let (r3t, p3t) = sys.truncated_third_order(lambda_factor(kappa, &g).unwrap());
            let r3e = r3(&q, kappa, mu).unwrap();
            let p3e = p3(&q, kappa, mu).unwrap();
            let rel = |a: &Field, b: &Field| a.sub(b).unwrap().l2_norm() / b.l2_norm();
            assert!(rel(&r3t, &r3e) < 1e-3, "r3 {}", rel(&r3t, &r3e));
            assert!(rel(&p3t, &p3e) < 1e-3, "p3 {}", rel(&p3t, &p3e));
            assert!(rel(&p3t, &p3e.scale(2.0)) > 0.4);
        }
    }

    #[test]
    fn cubic_periodic_sums_include_double_pole_term() {
        let g = circle(256);
        let q = Field::from_fn(g, |x| 0.05 * (TAU * x).cos() + 0.03 * (2.0 * TAU * x).sin());
        let kappa = 2.0;
        for mu in Mu::both() {
            let sys = build_lax(&q, kappa, mu, 128).unwrap();
            let (r3t, p3t) = sys.truncated_third_order(lambda_factor(kappa, &g).unwrap());
            let defect = gamma2_mean_defect(&q, kappa, mu).unwrap();
            let r3e = r3(&q, kappa, mu).unwrap().axpy(defect, &r1(&q, kappa, mu).unwrap()).unwrap();
            let p3e = p3(&q, kappa, mu).unwrap().axpy(defect, &p1(&q, kappa, mu).unwrap()).unwrap();
            let rel = |a: &Field, b: &Field| a.sub(b).unwrap().l2_norm() / b.l2_norm();
            assert!(rel(&r3t, &r3e) < 1e-6, "r3 {}", rel(&r3t, &r3e));
            assert!(rel(&p3t, &p3e) < 1e-6, "p3 {}", rel(&p3t, &p3e));
        }
    }

    #[test]
    fn quadratic_gamma_matches_truncated_series() {
        let g = circle(256);
        let q = Field::from_fn(g, |x| 0.05 * (TAU * x).cos() + 0.03 * (3.0 * TAU * x).sin());
        let kappa = 2.0;
        for mu in Mu::both() {
            let sys = build_lax(&q, kappa, mu, 128).unwrap();
            let [g2t, _, _] = sys.truncated_low_order(lambda_factor(kappa, &g).unwrap());
            let exact = gamma2(&q, kappa, mu)
                .unwrap()
                .add(&Field::constant(g, gamma2_mean_defect(&q, kappa, mu).unwrap()))
                .unwrap();
            let rel = g2t.sub(&exact).unwrap().l2_norm() / exact.l2_norm();
            assert!(rel < 1e-2, "{rel}");
        }
    }

    #[test]
    fn first_order_matches_linearization() {
        let g = circle(64);
        let kappa = 2.0;
        for a in [1e-2, 1e-3] {
            let q = cosine(g, a, 1.0);
            let d = greens_diagnostics(&q, kappa, Mu::Focusing, &opts(ResolventMethod::Direct, 16)).unwrap();
            let r1e = r1(&q, kappa, Mu::Focusing).unwrap();
            let p1e = p1(&q, kappa, Mu::Focusing).unwrap();
            assert!(d.r.sub(&r1e).unwrap().max_abs() < 10.0 * a * a * a);
            assert!(d.p.sub(&p1e).unwrap().max_abs() < 10.0 * a * a * a);
        }
    }

    #[test]
    fn gamma2_single_mode() {
        // q = a cos(2 pi x): the zero mode of gamma^[2] is -mu a^2 (4 kappa^2 - xi^2) / (4 kappa^2 + xi^2)^2
        let g = circle(32);
        let (a, kappa) = (0.2, 3.0);
        let gam = gamma2(&cosine(g, a, 1.0), kappa, Mu::Defocusing).unwrap();
        let (k2, x2) = (4.0 * kappa * kappa, TAU * TAU);
        let expect = -a * a * (k2 - x2) / ((k2 + x2) * (k2 + x2));
        assert!((gam.coeff(0).re - expect).abs() < 1e-15);
    }

    #[test]
    fn hilbert_schmidt_decays_with_kappa() {
        let g = circle(64);
        let q = cosine(g, 0.3, 1.0);
        let norms: Vec<f64> = [4.0, 8.0, 16.0]
            .iter()
            .map(|&k| hilbert_schmidt_norm(&build_lax(&q, k, Mu::Defocusing, 16).unwrap().t_matrix()))
            .collect();
        assert!(norms.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn identities_hold_on_both_geometries() {
        for g in [circle(128), Geometry::line_approx(8.0, 256).unwrap()] {
            for kappa in [2.0, 8.0] {
                let q = crate::initial::scale_into_ball(&crate::initial::random_smooth(g, 11, 4.0), kappa, 0.05).unwrap();
                for mu in Mu::both() {
                    let d = greens_diagnostics(&q, kappa, mu, &DiagnosticsOptions::default()).unwrap();
                    let res = identity_residuals(&q, &d, mu).unwrap();
                    assert!(res.max() < 1e-9, "{g:?} kappa {kappa} {res:?}");
                }
            }
        }
    }
}
