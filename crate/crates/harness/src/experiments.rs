//! Subcommand bodies. Each returns an [`Outcome`]; writing files is left to
//! [`emit`] so every command shares the same provenance and layout.

use std::path::{Path, PathBuf};

use mkdv_core::fit::loglog_slope;
use mkdv_core::flows::{commuting_composition_check, evolve, gauge_transform, kappa_approximation_sweep, Hamiltonian};
use mkdv_core::functionals::{
    alpha_expansion_residual, equicontinuity_profile, gamma_remainder, p_remainder, poisson_bracket_r,
    sandwich_constants, w_identity,
};
use mkdv_core::initial::corpus;
use mkdv_core::inverse_map::{forward_r, invert_r};
use mkdv_core::lax::{greens_diagnostics, identity_residuals, DiagnosticsOptions, ResolventMethod};
use mkdv_core::spectral::{apply_multiplier, bessel_norm, sobolev_norm};
use mkdv_core::{Error, Field, Multiplier, Mu, Result, SobolevIndex};
use rayon::prelude::*;
use rayon::ThreadPool;
use serde_json::{json, Value};

use crate::config::{ExperimentConfig, Suite, SweepKind};
use crate::output::{write_csv, write_json, write_plot, write_table, Bound, Provenance, ResultRow};

pub struct Table {
    pub suffix: String,
    pub columns: Vec<String>,
    pub data: Vec<Vec<f64>>,
}

pub struct Plot {
    pub suffix: String,
    pub blocks: Vec<(String, Vec<(f64, f64)>)>,
}

pub struct Outcome {
    pub prov: Provenance,
    pub rows: Vec<ResultRow>,
    pub report: Value,
    pub tables: Vec<Table>,
    pub plots: Vec<Plot>,
}

impl Outcome {
    fn new(cfg: &ExperimentConfig, subcommand: &str) -> Self {
        Outcome { prov: Provenance::new(cfg, subcommand), rows: Vec::new(), report: json!({}), tables: Vec::new(), plots: Vec::new() }
    }

    fn check(&mut self, params: &str, metric: &str, value: f64, tol: f64, bound: Bound) {
        let row = self.prov.row(params, metric, value, tol, bound);
        self.rows.push(row);
    }

    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }
}

/// Write every artifact of an outcome and return the paths in write order.
pub fn emit(out: &Outcome, dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let p = out.prov.path(dir, "results.csv");
    write_csv(&p, &out.prov, &out.rows)?;
    written.push(p);
    let p = out.prov.path(dir, "report.json");
    write_json(&p, &out.prov, &json!({ "rows": &out.rows, "details": &out.report }))?;
    written.push(p);
    for t in &out.tables {
        let p = out.prov.path(dir, &format!("{}.csv", t.suffix));
        let cols: Vec<&str> = t.columns.iter().map(String::as_str).collect();
        write_table(&p, &out.prov, &cols, &t.data)?;
        written.push(p);
    }
    for pl in &out.plots {
        let p = out.prov.path(dir, &format!("{}.dat", pl.suffix));
        write_plot(&p, &out.prov, &pl.blocks)?;
        written.push(p);
    }
    Ok(written)
}

fn params(kappa: f64, mu: Mu) -> String {
    format!("kappa={kappa};mu={}", mu.value())
}

fn max_of(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0, f64::max)
}

fn relative_h1(a: &Field, b: &Field) -> Result<f64> {
    let scale = bessel_norm(a, 1.0).max(bessel_norm(b, 1.0));
    let gap = bessel_norm(&a.sub(b)?, 1.0);
    Ok(if scale == 0.0 { gap } else { gap / scale })
}

fn l1_norm(f: &Field) -> f64 {
    let g = f.geometry();
    g.period() / g.n_modes() as f64 * f.samples().iter().map(|x| x.abs()).sum::<f64>()
}

fn grid_pairs(q: &Field) -> Vec<(f64, f64)> {
    q.geometry().grid_points().into_iter().zip(q.samples().iter().copied()).collect()
}

pub fn run_evolve(cfg: &ExperimentConfig) -> Result<Outcome> {
    let mut out = Outcome::new(cfg, "evolve");
    let q0 = cfg.initial_field()?;
    let spec = cfg.flow_spec();
    let traj = evolve(&q0, &spec)?;
    let drifts = traj.max_drifts();
    let tol = cfg.tolerances.conservation;
    let p = format!("flow={:?};mu={}", spec.hamiltonian, spec.mu.value());
    out.check(&p, "mass_drift", drifts.mass, tol, Bound::AtMost);
    out.check(&p, "h_mkdv_drift", drifts.h_mkdv, tol, Bound::AtMost);
    for (k, d) in &drifts.alpha {
        out.check(&format!("{p};probe={k}"), "alpha_drift", *d, tol, Bound::AtMost);
    }

    let mut columns = vec!["t".to_string(), "mass".into(), "h_mkdv".into()];
    columns.extend(spec.probes.iter().map(|k| format!("alpha_{k}")));
    let data = traj
        .conserved_log
        .iter()
        .map(|r| {
            let mut row = vec![r.t, r.mass, r.h_mkdv];
            row.extend(r.alpha.iter().map(|a| a.1.unwrap_or(f64::NAN)));
            row
        })
        .collect();
    out.tables.push(Table { suffix: "conserved".into(), columns, data });
    let blocks = traj.times.iter().zip(&traj.states).map(|(t, q)| (format!("t = {t}"), grid_pairs(q))).collect();
    out.plots.push(Plot { suffix: "snapshots".into(), blocks });
    out.report = json!({
        "steps": (spec.t_final / spec.dt).abs().round(),
        "saved_states": traj.states.len(),
        "final_l2": traj.last().l2_norm(),
        "drifts": { "mass": drifts.mass, "h_mkdv": drifts.h_mkdv, "alpha": drifts.alpha },
    });
    Ok(out)
}

pub fn run_verify(cfg: &ExperimentConfig, pool: &ThreadPool) -> Result<Outcome> {
    let mut out = Outcome::new(cfg, "verify");
    let g = cfg.geometry()?;
    let tol = &cfg.tolerances;
    let points: Vec<(f64, Mu)> =
        cfg.probes.kappas.iter().flat_map(|&k| Mu::both().into_iter().map(move |m| (k, m))).collect();
    let corpus_at = |k: f64| corpus(g, cfg.corpus.seed, cfg.corpus.size, k, cfg.corpus.radius);
    let mut details = serde_json::Map::new();

    for suite in &cfg.verify.suites {
        match suite {
            Suite::Identities | Suite::Resolvent => {
                let series = *suite == Suite::Resolvent;
                let worst: Vec<f64> = pool.install(|| {
                    points
                        .par_iter()
                        .map(|&(k, mu)| -> Result<f64> {
                            let mut w = 0.0f64;
                            for q in corpus_at(k)? {
                                let d = greens_diagnostics(&q, k, mu, &DiagnosticsOptions::default())?;
                                w = w.max(if series {
                                    let opts = DiagnosticsOptions::with_method(ResolventMethod::Series);
                                    let s = greens_diagnostics(&q, k, mu, &opts)?;
                                    max_of([
                                        relative_h1(&d.gamma, &s.gamma)?,
                                        relative_h1(&d.p, &s.p)?,
                                        relative_h1(&d.r, &s.r)?,
                                    ])
                                } else {
                                    identity_residuals(&q, &d, mu)?.max()
                                });
                            }
                            Ok(w)
                        })
                        .collect::<Result<Vec<_>>>()
                })?;
                let (metric, t) = if series { ("series_direct_h1_gap", tol.resolvent) } else { ("identity_residual", tol.identity) };
                for (&(k, mu), w) in points.iter().zip(&worst) {
                    out.check(&params(k, mu), metric, *w, t, Bound::AtMost);
                }
                details.insert(metric.into(), json!(worst));
            }
            Suite::Brackets => {
                let h = cfg.probes.varkappa;
                let pairs: Vec<(f64, Mu)> = points.iter().copied().filter(|p| p.0 != h).collect();
                let worst: Vec<f64> = pool.install(|| {
                    pairs
                        .par_iter()
                        .map(|&(k, mu)| -> Result<f64> {
                            let mut w = 0.0f64;
                            for q in corpus_at(k.min(h))? {
                                let opts = DiagnosticsOptions::default();
                                let ra = greens_diagnostics(&q, k, mu, &opts)?.r.l2_norm();
                                let rb = greens_diagnostics(&q, h, mu, &opts)?.r.l2_norm();
                                let b = poisson_bracket_r(&q, k, h, mu)?.abs();
                                w = w.max(if ra * rb > 0.0 { b / (ra * rb) } else { b });
                            }
                            Ok(w)
                        })
                        .collect::<Result<Vec<_>>>()
                })?;
                for (&(k, mu), w) in pairs.iter().zip(&worst) {
                    out.check(&format!("{};varkappa={h}", params(k, mu)), "normalized_bracket", *w, tol.bracket, Bound::AtMost);
                }
                details.insert("normalized_bracket".into(), json!(worst));
            }
            Suite::Conservation => {
                let sub = run_evolve(cfg)?;
                details.insert("conservation".into(), sub.report.clone());
                out.rows.extend(sub.rows.into_iter().map(|mut r| {
                    r.experiment = out.prov.experiment.clone();
                    r
                }));
            }
        }
    }
    out.report = Value::Object(details);
    Ok(out)
}

pub fn run_sweep(cfg: &ExperimentConfig, pool: &ThreadPool) -> Result<Outcome> {
    let mut out = Outcome::new(cfg, "sweep-kappa");
    let q = cfg.initial_field()?;
    let mu = cfg.mu();
    let kappas = &cfg.sweep.kappas;
    let tol = &cfg.tolerances;
    let pm = format!("mu={}", mu.value());
    match cfg.sweep.kind {
        SweepKind::Expansion => {
            let res: Vec<f64> = pool.install(|| {
                kappas.par_iter().map(|&k| alpha_expansion_residual(&q, k, mu)).collect::<Result<Vec<_>>>()
            })?;
            let slope = slope(kappas, &res)?;
            out.check(&pm, "expansion_residual_slope", slope, tol.expansion_slope, Bound::AtMost);
            out.tables.push(series_table("expansion", &["kappa", "residual"], kappas, &[&res]));
            out.plots.push(Plot { suffix: "expansion".into(), blocks: vec![("kappa residual".into(), zip(kappas, &res))] });
            out.report = json!({ "kappas": kappas, "residuals": res, "slope": slope });
        }
        SweepKind::Remainders => {
            let pairs: Vec<(f64, f64)> = pool.install(|| {
                kappas
                    .par_iter()
                    .map(|&k| -> Result<(f64, f64)> {
                        let d = greens_diagnostics(&q, k, mu, &DiagnosticsOptions::default())?;
                        Ok((
                            l1_norm(&gamma_remainder(&q, &d, mu)?),
                            sobolev_norm(&p_remainder(&q, &d, mu)?, SobolevIndex::new(1.0, k)?),
                        ))
                    })
                    .collect::<Result<Vec<_>>>()
            })?;
            let (gam, p): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let sg = slope(kappas, &gam)?;
            let sp = slope(kappas, &p)?;
            out.check(&pm, "gamma_remainder_l1_slope", sg, tol.gamma_remainder_slope, Bound::AtMost);
            out.check(&pm, "p_remainder_h1_slope", sp, tol.p_remainder_slope, Bound::AtMost);
            out.tables.push(series_table("remainders", &["kappa", "gamma_remainder_l1", "p_remainder_h1"], kappas, &[&gam, &p]));
            out.plots.push(Plot {
                suffix: "remainders".into(),
                blocks: vec![("kappa gamma_remainder".into(), zip(kappas, &gam)), ("kappa p_remainder".into(), zip(kappas, &p))],
            });
            out.report = json!({ "kappas": kappas, "gamma_remainder": gam, "p_remainder": p, "slopes": [sg, sp] });
        }
        SweepKind::Commuting => {
            let h = cfg.probes.varkappa;
            let (dt, t) = (cfg.flow.dt, cfg.flow.t_final);
            let sweep = pool.install(|| {
                kappas
                    .par_iter()
                    .map(|&k| kappa_approximation_sweep(&q, h, mu, t, &[k], dt).map(|v| v[0].value))
                    .collect::<Result<Vec<_>>>()
            })?;
            let decreasing = sweep.windows(2).all(|w| w[1] < w[0]);
            out.check(&format!("{pm};varkappa={h}"), "strictly_decreasing", f64::from(u8::from(decreasing)), 1.0, Bound::AtLeast);
            let comp = commuting_composition_check(&q, kappas[0], mu, t, dt)?;
            out.check(&format!("{pm};kappa={}", kappas[0]), "composition_gap", comp, tol.composition, Bound::AtMost);
            out.tables.push(series_table("commuting", &["kappa", "sup_r_change_h2"], kappas, &[&sweep]));
            out.plots.push(Plot { suffix: "commuting".into(), blocks: vec![("kappa sup_r_change".into(), zip(kappas, &sweep))] });
            out.report = json!({ "kappas": kappas, "varkappa": h, "values": sweep, "composition_gap": comp });
        }
    }
    Ok(out)
}

/// Fitted log-log slope; needs two or more positive points.
fn slope(x: &[f64], y: &[f64]) -> Result<f64> {
    loglog_slope(x, y).ok_or_else(|| Error::InvalidArgument(format!("cannot fit a slope to {y:?} over {x:?}")))
}

fn zip(x: &[f64], y: &[f64]) -> Vec<(f64, f64)> {
    x.iter().copied().zip(y.iter().copied()).collect()
}

fn series_table(suffix: &str, columns: &[&str], x: &[f64], ys: &[&Vec<f64>]) -> Table {
    let data = x
        .iter()
        .enumerate()
        .map(|(i, &xi)| std::iter::once(xi).chain(ys.iter().map(|y| y[i])).collect())
        .collect();
    Table { suffix: suffix.into(), columns: columns.iter().map(|c| c.to_string()).collect(), data }
}

pub fn run_invert(cfg: &ExperimentConfig) -> Result<Outcome> {
    let mut out = Outcome::new(cfg, "invert-r");
    let q = cfg.initial_field()?;
    let mu = cfg.mu();
    let inv = &cfg.invert;
    let k = inv.kappa;
    let tol = cfg.tolerances.round_trip;
    let p = params(k, mu);

    let rep = invert_r(&forward_r(&q, k, mu)?, k, mu, inv.tol, inv.max_iter)?;
    let q_trip = rep.q_recovered.sub(&q)?.l2_norm();
    out.check(&p, "final_residual_h2", rep.final_residual, inv.tol, Bound::AtMost);
    out.check(&p, "q_round_trip_l2", q_trip, tol, Bound::AtMost);

    let target = apply_multiplier(&q, Multiplier::HelmholtzInverse(k))?;
    let back = invert_r(&target, k, mu, inv.tol, inv.max_iter)?.q_recovered;
    let r_trip = forward_r(&back, k, mu)?.sub(&target)?.l2_norm();
    out.check(&p, "r_round_trip_l2", r_trip, tol, Bound::AtMost);

    let shift = 0.1 * q.geometry().period();
    let shifted = invert_r(&target.shift(shift), k, mu, inv.tol, inv.max_iter)?.q_recovered;
    let equiv = shifted.sub(&back.shift(shift))?.l2_norm();
    out.check(&format!("{p};shift={shift}"), "translation_equivariance_l2", equiv, 0.1 * tol, Bound::AtMost);

    let its: Vec<(f64, f64)> = rep.contraction_estimates.iter().enumerate().map(|(i, r)| ((i + 1) as f64, *r)).collect();
    out.plots.push(Plot { suffix: "residuals".into(), blocks: vec![("iteration residual_h2".into(), its)] });
    out.plots.push(Plot { suffix: "recovered".into(), blocks: vec![("x q_recovered".into(), grid_pairs(&rep.q_recovered))] });
    out.report = json!({
        "iterations": rep.iterations,
        "final_residual": rep.final_residual,
        "contraction_estimates": rep.contraction_estimates,
        "contraction_factors": rep.contraction_factors(),
        "q_round_trip": q_trip,
        "r_round_trip": r_trip,
        "translation_equivariance": equiv,
    });
    Ok(out)
}

pub fn run_equicontinuity(cfg: &ExperimentConfig) -> Result<Outcome> {
    let mut out = Outcome::new(cfg, "equicontinuity");
    let q = cfg.initial_field()?;
    let g = cfg.geometry()?;
    let s = cfg.probes.s;
    let kappas = &cfg.probes.kappas;
    let tol = &cfg.tolerances;

    let mut gaps = Vec::new();
    for &k in kappas {
        for mu in Mu::both() {
            let (lhs, rhs) = w_identity(&q, k, mu)?;
            let scale = lhs.abs().max(rhs.abs());
            let gap = if scale == 0.0 { 0.0 } else { (lhs - rhs).abs() / scale };
            out.check(&params(k, mu), "w_identity_relative_gap", gap, tol.w_identity, Bound::AtMost);
            gaps.push(gap);
        }
    }

    let prof = equicontinuity_profile(&q, s, kappas[0], None)?;
    let data = prof.terms.iter().map(|&(n, t)| vec![n as f64, t]).collect();
    out.tables.push(Table { suffix: "profile".into(), columns: vec!["N".into(), "term".into()], data });

    let pool = corpus(g, cfg.corpus.seed, cfg.corpus.size, 1.0, cfg.corpus.radius)?;
    let sandwich = sandwich_constants(&pool, s, kappas)?;
    let (s1, s2) = sandwich.spread();
    out.check(&format!("s={s}"), "sandwich_c1_spread", s1, tol.sandwich_spread, Bound::AtMost);
    out.check(&format!("s={s}"), "sandwich_c2_spread", s2, tol.sandwich_spread, Bound::AtMost);
    out.tables.push(series_table("sandwich", &["kappa", "c1", "c2"], kappas, &[&sandwich.c1, &sandwich.c2]));
    out.report = json!({
        "w_identity_gaps": gaps,
        "profile": { "s": s, "kappa": prof.kappa, "terms": prof.terms, "total": prof.total },
        "sandwich": { "kappas": sandwich.kappas, "c1": sandwich.c1, "c2": sandwich.c2, "spread": [s1, s2] },
    });
    Ok(out)
}

pub fn run_gauge(cfg: &ExperimentConfig) -> Result<Outcome> {
    let mut out = Outcome::new(cfg, "gauge-check");
    let q = cfg.initial_field()?;
    let mut spec = cfg.flow_spec();
    spec.probes.clear();
    spec.hamiltonian = Hamiltonian::RenormMkdv;
    let renorm = gauge_transform(&evolve(&q, &spec)?, spec.mu)?;
    spec.hamiltonian = Hamiltonian::Mkdv;
    let direct = evolve(&q, &spec)?;
    let gaps: Vec<(f64, f64)> = renorm
        .states
        .iter()
        .zip(&direct.states)
        .zip(&direct.times)
        .map(|((a, b), &t)| a.sub(b).map(|d| (t, d.l2_norm())))
        .collect::<Result<_>>()?;
    let worst = max_of(gaps.iter().map(|g| g.1));
    out.check(&format!("mu={}", spec.mu.value()), "max_l2_gap", worst, cfg.tolerances.gauge, Bound::AtMost);
    out.plots.push(Plot { suffix: "gap".into(), blocks: vec![("t l2_gap".into(), gaps.clone())] });
    out.report = json!({ "gaps": gaps, "max_gap": worst });
    Ok(out)
}
