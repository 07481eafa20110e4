//! Time stepping for the mKdV family of Hamiltonian flows.
//!
//! Every flow is written in Fourier variables as `q_t = L q + N(q)` with a
//! diagonal linear symbol `L(xi)` that is integrated exactly, either by the
//! exponential time-differencing scheme of Cox and Matthews (`EtdRk4`) or by
//! the Lawson integrating-factor Runge-Kutta scheme (`IfRk4`).
//!
//! | flow         | `L(xi)`                                           | `N(q)`                                   |
//! |--------------|---------------------------------------------------|------------------------------------------|
//! | mKdV         | `i xi^3`                                          | `2 mu (q^3)'`                            |
//! | renormalized | `i xi^3`                                          | `2 mu (q^3)' - 6 mu (int q^2) q'`        |
//! | mass         | `i xi`                                            | `0`                                      |
//! | `H_kappa`    | `i xi 4k^2 (1 - 4k^2 c / (4k^2 + xi^2))`          | `-4 mu k^3 (r - c r^[1])'`               |
//! | difference   | mKdV minus `H_kappa`                              | mKdV minus `H_kappa`                     |
//!
//! where `c` is the periodization factor of the geometry (one on the circle).

use crate::error::{Error, Result};
use crate::functionals::{alpha, hamiltonian, mass, AlphaMethod};
use crate::lax::{ball_check, greens_diagnostics, torus_factor, DiagnosticsOptions, DEFAULT_DELTA};
use crate::spectral::{product, product_many, sobolev_norm, Dealias, Field, Geometry, SobolevIndex, C64};
use crate::{lax, Mu};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Hamiltonian {
    Mkdv,
    RenormMkdv,
    Mass,
    HKappa(f64),
    Difference(f64),
}

impl Hamiltonian {
    fn kappa(self) -> Option<f64> {
        match self {
            Hamiltonian::HKappa(k) | Hamiltonian::Difference(k) => Some(k),
            _ => None,
        }
    }

    /// Diagonal linear part of the vector field at frequency `xi`.
    pub fn linear_symbol(self, xi: f64, g: &Geometry) -> C64 {
        let cubic = C64::new(0.0, xi * xi * xi);
        let hk = |k: f64| {
            let k2 = 4.0 * k * k;
            C64::new(0.0, xi * k2 * (1.0 - k2 * torus_factor(k, g) / (k2 + xi * xi)))
        };
        match self {
            Hamiltonian::Mkdv | Hamiltonian::RenormMkdv => cubic,
            Hamiltonian::Mass => C64::new(0.0, xi),
            Hamiltonian::HKappa(k) => hk(k),
            Hamiltonian::Difference(k) => cubic - hk(k),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Integrator {
    EtdRk4,
    IfRk4,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowSpec {
    pub hamiltonian: Hamiltonian,
    pub mu: Mu,
    /// Step size magnitude; the sign of `t_final` sets the direction.
    pub dt: f64,
    pub t_final: f64,
    pub integrator: Integrator,
    /// Save a state every this many steps (the final state is always saved).
    pub save_every: usize,
    /// Spectral parameters at which `A` is logged.
    pub probes: Vec<f64>,
    /// Lax cutoff for flows that need `r`; `None` keeps every mode.
    pub cutoff: Option<usize>,
    pub dealias: Dealias,
}

impl FlowSpec {
    pub fn new(hamiltonian: Hamiltonian, mu: Mu, dt: f64, t_final: f64) -> Self {
        Self {
            hamiltonian,
            mu,
            dt,
            t_final,
            integrator: Integrator::EtdRk4,
            save_every: usize::MAX,
            probes: Vec::new(),
            cutoff: None,
            dealias: Dealias::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConservedRecord {
    pub t: f64,
    pub mass: f64,
    pub h_mkdv: f64,
    /// `(kappa, A(kappa))`; `None` when `A` could not be evaluated.
    pub alpha: Vec<(f64, Option<f64>)>,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Field>,
    pub conserved_log: Vec<ConservedRecord>,
}

impl Trajectory {
    pub fn last(&self) -> &Field {
        self.states.last().expect("trajectories are never empty")
    }

    /// Largest relative drift of mass, energy and each logged `A`, as
    /// `|X(t) - X(0)| / (1 + |X(0)|)`.
    pub fn max_drifts(&self) -> Drifts {
        let first = &self.conserved_log[0];
        let rel = |a: f64, b: f64| (a - b).abs() / (1.0 + b.abs());
        let mut d = Drifts { mass: 0.0, h_mkdv: 0.0, alpha: first.alpha.iter().map(|a| (a.0, 0.0)).collect() };
        for rec in &self.conserved_log {
            d.mass = d.mass.max(rel(rec.mass, first.mass));
            d.h_mkdv = d.h_mkdv.max(rel(rec.h_mkdv, first.h_mkdv));
            for (slot, (a, a0)) in d.alpha.iter_mut().zip(rec.alpha.iter().zip(&first.alpha)) {
                slot.1 = slot.1.max(match (a.1, a0.1) {
                    (Some(x), Some(y)) => rel(x, y),
                    _ => f64::NAN,
                });
            }
        }
        d
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Drifts {
    pub mass: f64,
    pub h_mkdv: f64,
    pub alpha: Vec<(f64, f64)>,
}

/// Largest step allowed for data of size `q`: `|dt| rho <= 2.5`, where
/// `rho = 6 |q|_inf^2 xi_max` bounds the linearized cubic term and
/// `8 kappa |q|_inf^2` the smoothed `H_kappa` nonlinearity.
pub fn stability_bound(h: Hamiltonian, q: &Field) -> f64 {
    let a2 = q.max_abs().powi(2);
    let xi = q.geometry().max_frequency();
    let rho = match h {
        Hamiltonian::Mass => 0.0,
        Hamiltonian::Mkdv | Hamiltonian::RenormMkdv => 6.0 * a2 * xi,
        Hamiltonian::HKappa(k) => 8.0 * k * a2,
        Hamiltonian::Difference(k) => 6.0 * a2 * xi + 8.0 * k * a2,
    };
    if rho == 0.0 {
        f64::INFINITY
    } else {
        2.5 / rho
    }
}

/// The nonlinear part `N(q)` of a flow.
pub fn nonlinear_part(h: Hamiltonian, mu: Mu, q: &Field, opts: &DiagnosticsOptions, dealias: Dealias) -> Result<Field> {
    let m = mu.value();
    let cubic = || -> Result<Field> { Ok(product_many(&[q, q, q], dealias)?.derivative().scale(2.0 * m)) };
    let hk = |k: f64| -> Result<Field> {
        let d = greens_diagnostics(q, k, mu, opts)?;
        let c = torus_factor(k, q.geometry());
        let smooth = d.r.axpy(-c, &lax::r1(q, k, mu)?)?;
        Ok(smooth.derivative().scale(-4.0 * m * k.powi(3)))
    };
    match h {
        Hamiltonian::Mkdv => cubic(),
        Hamiltonian::RenormMkdv => cubic()?.axpy(-6.0 * m * q.inner(q)?, &q.derivative()),
        Hamiltonian::Mass => Ok(Field::zeros(*q.geometry())),
        Hamiltonian::HKappa(k) => hk(k),
        Hamiltonian::Difference(k) => cubic()?.sub(&hk(k)?),
    }
}

/// Precomputed exponential coefficients for one step size.
struct Stepper {
    g: Geometry,
    hamiltonian: Hamiltonian,
    mu: Mu,
    integrator: Integrator,
    h: f64,
    e: Vec<C64>,
    e2: Vec<C64>,
    // ETDRK4 weights (Kassam-Trefethen contour means)
    q: Vec<C64>,
    f1: Vec<C64>,
    f2: Vec<C64>,
    f3: Vec<C64>,
    opts: DiagnosticsOptions,
    dealias: Dealias,
    /// `int q0^2` for the renormalized flow, zero otherwise.
    frozen: f64,
}

const CONTOUR_POINTS: usize = 32;

impl Stepper {
    fn new(q0: &Field, spec: &FlowSpec, h: f64) -> Self {
        let g = *q0.geometry();
        // the renormalizing transport has a conserved speed, so it is exact in the linear part
        let frozen = match spec.hamiltonian {
            Hamiltonian::RenormMkdv => q0.inner(q0).unwrap_or(0.0),
            _ => 0.0,
        };
        let drift = -6.0 * spec.mu.value() * frozen;
        let lin: Vec<C64> = g
            .fft_frequencies()
            .iter()
            .map(|&xi| spec.hamiltonian.linear_symbol(xi, &g) + C64::new(0.0, drift * xi))
            .collect();
        let e = lin.iter().map(|l| (l * h).exp()).collect();
        let e2 = lin.iter().map(|l| (l * h / 2.0).exp()).collect();
        let (mut q, mut f1, mut f2, mut f3) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        if spec.integrator == Integrator::EtdRk4 {
            let roots: Vec<C64> = (0..CONTOUR_POINTS)
                .map(|j| C64::from_polar(1.0, std::f64::consts::PI * (j as f64 + 0.5) * 2.0 / CONTOUR_POINTS as f64))
                .collect();
            let mean = |f: &dyn Fn(C64) -> C64, l: C64| {
                roots.iter().map(|r| f(l * h + r)).sum::<C64>() / CONTOUR_POINTS as f64 * h
            };
            for &l in &lin {
                q.push(mean(&|z| ((z / 2.0).exp() - 1.0) / z, l));
                f1.push(mean(&|z| (-4.0 - z + z.exp() * (4.0 - 3.0 * z + z * z)) / (z * z * z), l));
                f2.push(mean(&|z| (2.0 + z + z.exp() * (z - 2.0)) / (z * z * z), l));
                f3.push(mean(&|z| (-4.0 - 3.0 * z - z * z + z.exp() * (4.0 - z)) / (z * z * z), l));
            }
        }
        let opts = DiagnosticsOptions { cutoff: spec.cutoff, ..DiagnosticsOptions::default() };
        Stepper {
            g,
            hamiltonian: spec.hamiltonian,
            mu: spec.mu,
            integrator: spec.integrator,
            h,
            e,
            e2,
            q,
            f1,
            f2,
            f3,
            opts,
            dealias: spec.dealias,
            frozen,
        }
    }

    fn field(&self, c: Vec<C64>) -> Field {
        Field::from_coeffs(self.g, c).expect("grid length")
    }

    fn n(&self, v: &Field) -> Result<Vec<C64>> {
        let out = match self.hamiltonian {
            Hamiltonian::RenormMkdv => nonlinear_part(Hamiltonian::Mkdv, self.mu, v, &self.opts, self.dealias)?
                .axpy(-6.0 * self.mu.value() * (v.inner(v)? - self.frozen), &v.derivative())?,
            h => nonlinear_part(h, self.mu, v, &self.opts, self.dealias)?,
        };
        Ok(out.coeffs().to_vec())
    }

    fn step(&self, v: &Field) -> Result<Field> {
        if self.hamiltonian == Hamiltonian::Mass {
            let c = v.coeffs().iter().zip(&self.e).map(|(a, e)| a * e).collect();
            return Ok(self.field(c));
        }
        let u = v.coeffs();
        let len = u.len();
        let comb = |f: &dyn Fn(usize) -> C64| -> Field { self.field((0..len).map(f).collect()) };
        match self.integrator {
            Integrator::EtdRk4 => {
                let nv = self.n(v)?;
                let a = comb(&|i| self.e2[i] * u[i] + self.q[i] * nv[i]);
                let na = self.n(&a)?;
                let b = comb(&|i| self.e2[i] * u[i] + self.q[i] * na[i]);
                let nb = self.n(&b)?;
                let ac = a.coeffs();
                let c = comb(&|i| self.e2[i] * ac[i] + self.q[i] * (2.0 * nb[i] - nv[i]));
                let nc = self.n(&c)?;
                Ok(comb(&|i| {
                    self.e[i] * u[i] + nv[i] * self.f1[i] + 2.0 * (na[i] + nb[i]) * self.f2[i] + nc[i] * self.f3[i]
                }))
            }
            Integrator::IfRk4 => {
                let h = self.h;
                let k1 = self.n(v)?;
                let a = comb(&|i| self.e2[i] * (u[i] + k1[i] * (h / 2.0)));
                let k2 = self.n(&a)?;
                let b = comb(&|i| self.e2[i] * u[i] + k2[i] * (h / 2.0));
                let k3 = self.n(&b)?;
                let c = comb(&|i| self.e[i] * u[i] + self.e2[i] * k3[i] * h);
                let k4 = self.n(&c)?;
                Ok(comb(&|i| {
                    self.e[i] * u[i]
                        + (self.e[i] * k1[i] + 2.0 * self.e2[i] * (k2[i] + k3[i]) + k4[i]) * (h / 6.0)
                }))
            }
        }
    }
}

fn record(q: &Field, t: f64, spec: &FlowSpec) -> ConservedRecord {
    ConservedRecord {
        t,
        mass: mass(q),
        h_mkdv: hamiltonian(q, spec.mu),
        alpha: spec
            .probes
            .iter()
            .map(|&k| (k, alpha(q, k, spec.mu, AlphaMethod::Logdet).ok().map(|r| r.alpha)))
            .collect(),
    }
}

fn step_count(dt: f64, t_final: f64) -> Result<usize> {
    if !(dt > 0.0) || !t_final.is_finite() {
        return Err(Error::InvalidArgument(format!("need dt > 0 and finite t_final, got {dt}, {t_final}")));
    }
    let n = (t_final.abs() / dt).round();
    if (n * dt - t_final.abs()).abs() > 1e-9 * t_final.abs().max(dt) {
        return Err(Error::InvalidArgument(format!("t_final {t_final} is not a multiple of dt {dt}")));
    }
    Ok(n as usize)
}

pub fn evolve(q0: &Field, spec: &FlowSpec) -> Result<Trajectory> {
    let steps = step_count(spec.dt, spec.t_final)?;
    let bound = stability_bound(spec.hamiltonian, q0);
    if spec.dt > bound {
        return Err(Error::StepTooLarge { dt: spec.dt, bound });
    }
    if let Some(k) = spec.hamiltonian.kappa() {
        let b = ball_check(q0, k);
        if b > DEFAULT_DELTA {
            return Err(Error::OutsideBall { ball_check: b, delta: DEFAULT_DELTA });
        }
    }
    let h = spec.dt * spec.t_final.signum();
    let stepper = Stepper::new(q0, spec, h);
    let save_every = spec.save_every.max(1);

    let mut traj = Trajectory { times: vec![0.0], states: vec![q0.clone()], conserved_log: vec![record(q0, 0.0, spec)] };
    let mut q = q0.clone();
    for n in 1..=steps {
        let t_prev = (n - 1) as f64 * h;
        let next = stepper.step(&q).map_err(|e| Error::FlowFailed {
            t: t_prev,
            source: Box::new(e),
            last_good: Box::new(q.clone()),
        })?;
        if !next.is_finite() {
            return Err(Error::NonFinite { t: n as f64 * h, last_good: Box::new(q) });
        }
        q = next;
        if n % save_every == 0 || n == steps {
            let t = if n == steps { spec.t_final } else { n as f64 * h };
            traj.conserved_log.push(record(&q, t, spec));
            traj.times.push(t);
            traj.states.push(q.clone());
        }
    }
    Ok(traj)
}

/// Advance `q` by a single step of size `h` (either sign).
pub fn single_step(q: &Field, hamiltonian: Hamiltonian, mu: Mu, h: f64, integrator: Integrator) -> Result<Field> {
    let mut spec = FlowSpec::new(hamiltonian, mu, h.abs(), h);
    spec.integrator = integrator;
    Stepper::new(q, &spec, h).step(q)
}

/// Shift each state by `6 mu t int q^2`, turning renormalized-mKdV
/// solutions into mKdV solutions on the circle.
pub fn gauge_transform(traj: &Trajectory, mu: Mu) -> Result<Trajectory> {
    let mut out = traj.clone();
    for ((state, &t), rec) in out.states.iter_mut().zip(&traj.times).zip(&traj.conserved_log) {
        if state.geometry().kind() != crate::GeometryKind::Circle {
            return Err(Error::GaugeNeedsCircle);
        }
        *state = state.shift(6.0 * mu.value() * t * 2.0 * rec.mass);
    }
    Ok(out)
}

/// Which evolution law of `r(varkappa)` to test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RLaw {
    /// `r_t = -r''' + 6 mu q^2 r'`
    Mkdv,
    /// Along `H_kappa`:
    /// `r_t = 4k^2 r' + 8 h k^4 / (k^2 - h^2) [p(h)(gamma(k) + 1) - p(k)(gamma(h) + 1)]`
    HKappa(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RResidual {
    pub residual: f64,
    /// Residual after Richardson extrapolation of the difference from `dt` and `dt / 2`.
    pub extrapolated: f64,
    /// `||r(varkappa)||` at the base point.
    pub r_norm: f64,
}

impl RResidual {
    pub fn relative(&self) -> f64 {
        if self.r_norm == 0.0 {
            self.residual
        } else {
            self.residual / self.r_norm
        }
    }

    pub fn relative_extrapolated(&self) -> f64 {
        if self.r_norm == 0.0 {
            self.extrapolated
        } else {
            self.extrapolated / self.r_norm
        }
    }
}

/// Central time difference of `r(varkappa, q(t))` along the flow, taken in
/// the interaction picture of the flow's linear symbol `P` so the stiff
/// dispersion does not enter the `O(dt^2)` error:
/// `[e^{-hP} r(q(h)) - e^{hP} r(q(-h))] / 2h` against the law with `P r` removed.
pub fn r_evolution_residual(q: &Field, varkappa: f64, mu: Mu, law: RLaw, dt: f64) -> Result<RResidual> {
    let (fd, rhs, r_norm) = r_law_terms(q, varkappa, mu, law, dt)?;
    let (fd_half, _, _) = r_law_terms(q, varkappa, mu, law, dt / 2.0)?;
    let richardson = fd_half.scale(4.0 / 3.0).sub(&fd.scale(1.0 / 3.0))?;
    Ok(RResidual {
        residual: fd.sub(&rhs)?.l2_norm(),
        extrapolated: richardson.sub(&rhs)?.l2_norm(),
        r_norm,
    })
}

fn r_law_terms(q: &Field, varkappa: f64, mu: Mu, law: RLaw, dt: f64) -> Result<(Field, Field, f64)> {
    let g = *q.geometry();
    let opts = DiagnosticsOptions::default();
    let m = mu.value();
    let (flow, lin): (Hamiltonian, Box<dyn Fn(f64) -> C64>) = match law {
        RLaw::Mkdv => (Hamiltonian::Mkdv, Box::new(|xi: f64| C64::new(0.0, xi * xi * xi))),
        RLaw::HKappa(k) => {
            if k == varkappa {
                return Err(Error::EqualParameters);
            }
            (Hamiltonian::HKappa(k), Box::new(move |xi: f64| C64::new(0.0, 4.0 * k * k * xi)))
        }
    };
    // the flow's own symbol is the linearized r-evolution, so it removes the fast phases
    let g_ref = g;
    let flow_lin = move |xi: f64| flow.linear_symbol(xi, &g_ref);
    let forward = single_step(q, flow, mu, dt, Integrator::EtdRk4)?;
    let backward = single_step(q, flow, mu, -dt, Integrator::EtdRk4)?;
    let r_plus = greens_diagnostics(&forward, varkappa, mu, &opts)?.r;
    let r_minus = greens_diagnostics(&backward, varkappa, mu, &opts)?.r;
    let fd = r_plus
        .map_symbol(|xi| (-flow_lin(xi) * dt).exp())
        .sub(&r_minus.map_symbol(|xi| (flow_lin(xi) * dt).exp()))?
        .scale(1.0 / (2.0 * dt));

    let here = greens_diagnostics(q, varkappa, mu, &opts)?;
    let d = Dealias::default();
    let rhs = match law {
        RLaw::Mkdv => product(&product(q, q, d)?, &here.r.derivative(), d)?.scale(6.0 * m),
        RLaw::HKappa(k) => {
            let big = greens_diagnostics(q, k, mu, &opts)?;
            let gk = big.gamma.add(&Field::constant(g, torus_factor(k, &g)))?;
            let gh = here.gamma.add(&Field::constant(g, torus_factor(varkappa, &g)))?;
            let coef = 8.0 * varkappa * k.powi(4) / (k * k - varkappa * varkappa);
            product(&here.p, &gk, d)?.sub(&product(&big.p, &gh, d)?)?.scale(coef)
        }
    };
    let rhs = rhs.add(&here.r.map_symbol(|xi| lin(xi) - flow_lin(xi)))?;
    Ok((fd, rhs, here.r.l2_norm()))
}

/// `|| mkdv(t) q0 - difference(t) H_kappa(t) q0 ||` in L2.
pub fn commuting_composition_check(q0: &Field, kappa: f64, mu: Mu, t: f64, dt: f64) -> Result<f64> {
    if t == 0.0 {
        return Ok(0.0);
    }
    let run = |h: Hamiltonian, q: &Field| evolve(q, &FlowSpec::new(h, mu, dt, t)).map(|tr| tr.last().clone());
    let direct = run(Hamiltonian::Mkdv, q0)?;
    let composed = run(Hamiltonian::Difference(kappa), &run(Hamiltonian::HKappa(kappa), q0)?)?;
    Ok(direct.sub(&composed)?.l2_norm())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub kappa: f64,
    /// `sup_{|t| <= T} || r(varkappa; q(t)) - r(varkappa; q0) ||_{H^2_varkappa}`
    /// along the difference flow.
    pub value: f64,
}

pub fn kappa_approximation_sweep(
    q0: &Field,
    varkappa: f64,
    mu: Mu,
    t_final: f64,
    kappas: &[f64],
    dt: f64,
) -> Result<Vec<SweepPoint>> {
    if varkappa < 4.0 {
        return Err(Error::InvalidArgument(format!("varkappa must be at least 4, got {varkappa}")));
    }
    let opts = DiagnosticsOptions::default();
    let r0 = greens_diagnostics(q0, varkappa, mu, &opts)?.r;
    let norm = SobolevIndex::new(2.0, varkappa)?;
    kappas
        .iter()
        .map(|&kappa| {
            if kappa < 2.0 * varkappa {
                return Err(Error::InvalidArgument(format!("need kappa >= 2 varkappa, got {kappa}")));
            }
            let mut sup = 0.0f64;
            for dir in [1.0, -1.0] {
                let mut spec = FlowSpec::new(Hamiltonian::Difference(kappa), mu, dt, dir * t_final);
                spec.save_every = 1;
                for q in evolve(q0, &spec)?.states.iter().skip(1) {
                    let r = greens_diagnostics(q, varkappa, mu, &opts)?.r;
                    sup = sup.max(sobolev_norm(&r.sub(&r0)?, norm));
                }
            }
            Ok(SweepPoint { kappa, value: sup })
        })
        .collect()
}
