//! Experiment configuration, read from TOML with one section per module.
//!
//! Every field has an explicit default, and the fully resolved config is what
//! gets hashed and echoed into each output file.

use std::path::{Path, PathBuf};

use mkdv_core::flows::{FlowSpec, Hamiltonian, Integrator};
use mkdv_core::initial::{scale_into_ball, InitialData};
use mkdv_core::{Field, Geometry, Mu};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {}: {1}", .0.display())]
    Read(PathBuf, std::io::Error),
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeometryChoice {
    Circle,
    Line,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometrySection {
    pub kind: GeometryChoice,
    /// Period of the large torus; ignored on the circle.
    pub period: f64,
    pub n: usize,
}

impl Default for GeometrySection {
    fn default() -> Self {
        GeometrySection { kind: GeometryChoice::Circle, period: 1.0, n: 128 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Zero,
    Constant,
    Cosine,
    Soliton,
    RandomSmooth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialSection {
    pub family: Family,
    /// Amplitude for `constant` and `cosine`.
    pub a: f64,
    /// Mode number for `cosine`.
    pub k: i64,
    /// Soliton speed.
    pub c: f64,
    pub x0: f64,
    pub seed: u64,
    pub decay: f64,
    /// If set, rescale so that `kappa^{-1/2} ||q|| = ball_radius` at `ball_kappa`.
    pub ball_radius: Option<f64>,
    pub ball_kappa: f64,
}

impl Default for InitialSection {
    fn default() -> Self {
        InitialSection {
            family: Family::Cosine,
            a: 0.1,
            k: 1,
            c: 1.0,
            x0: 0.5,
            seed: 1,
            decay: 4.0,
            ball_radius: None,
            ball_kappa: 4.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MuChoice {
    Focusing,
    Defocusing,
}

impl From<MuChoice> for Mu {
    fn from(m: MuChoice) -> Mu {
        match m {
            MuChoice::Focusing => Mu::Focusing,
            MuChoice::Defocusing => Mu::Defocusing,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowChoice {
    Mkdv,
    Renorm,
    Mass,
    HKappa,
    Difference,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntegratorChoice {
    Etdrk4,
    Ifrk4,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowSection {
    pub hamiltonian: FlowChoice,
    /// Spectral parameter of `h_kappa` and `difference`.
    pub kappa: f64,
    pub mu: MuChoice,
    pub dt: f64,
    pub t_final: f64,
    pub integrator: IntegratorChoice,
    pub save_every: usize,
}

impl Default for FlowSection {
    fn default() -> Self {
        FlowSection {
            hamiltonian: FlowChoice::Mkdv,
            kappa: 16.0,
            mu: MuChoice::Focusing,
            dt: 1e-4,
            t_final: 0.01,
            integrator: IntegratorChoice::Etdrk4,
            save_every: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeSection {
    pub kappas: Vec<f64>,
    pub varkappa: f64,
    pub s: f64,
}

impl Default for ProbeSection {
    fn default() -> Self {
        ProbeSection { kappas: vec![4.0, 8.0], varkappa: 4.0, s: 0.25 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSection {
    pub size: usize,
    pub radius: f64,
    pub seed: u64,
}

impl Default for CorpusSection {
    fn default() -> Self {
        CorpusSection { size: 20, radius: 0.05, seed: 1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Identities,
    Resolvent,
    Brackets,
    Conservation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    Expansion,
    Remainders,
    Commuting,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySection {
    pub suites: Vec<Suite>,
}

impl Default for VerifySection {
    fn default() -> Self {
        VerifySection { suites: vec![Suite::Identities, Suite::Resolvent, Suite::Brackets, Suite::Conservation] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub kind: SweepKind,
    pub kappas: Vec<f64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection { kind: SweepKind::Expansion, kappas: vec![8.0, 16.0, 32.0, 64.0] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InvertSection {
    pub kappa: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for InvertSection {
    fn default() -> Self {
        InvertSection { kappa: 6.0, tol: 1e-10, max_iter: 100 }
    }
}

/// Pass thresholds. `--tol-scale` multiplies the magnitude thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub identity: f64,
    pub resolvent: f64,
    pub bracket: f64,
    pub conservation: f64,
    pub expansion_slope: f64,
    pub gamma_remainder_slope: f64,
    pub p_remainder_slope: f64,
    pub composition: f64,
    pub round_trip: f64,
    pub w_identity: f64,
    pub sandwich_spread: f64,
    pub gauge: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            identity: 1e-8,
            resolvent: 1e-8,
            bracket: 1e-10,
            conservation: 1e-6,
            expansion_slope: -4.5,
            gamma_remainder_slope: -2.5,
            p_remainder_slope: -1.5,
            composition: 1e-5,
            round_trip: 1e-9,
            w_identity: 1e-10,
            sandwich_spread: 0.5,
            gauge: 1e-6,
        }
    }
}

impl Tolerances {
    /// Scale the magnitude thresholds. Slopes and the relative spread are
    /// shape criteria and stay fixed.
    pub fn scaled(&self, s: f64) -> Tolerances {
        Tolerances {
            identity: self.identity * s,
            resolvent: self.resolvent * s,
            bracket: self.bracket * s,
            conservation: self.conservation * s,
            composition: self.composition * s,
            round_trip: self.round_trip * s,
            w_identity: self.w_identity * s,
            gauge: self.gauge * s,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Experiment id, used as the output file stem.
    pub id: Option<String>,
    pub geometry: GeometrySection,
    pub initial: InitialSection,
    pub flow: FlowSection,
    pub probes: ProbeSection,
    pub corpus: CorpusSection,
    pub verify: VerifySection,
    pub sweep: SweepSection,
    pub invert: InvertSection,
    pub tolerances: Tolerances,
    pub output: OutputSection,
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub tol_scale: Option<f64>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read(path.to_path_buf(), e))?;
        Self::from_toml(&text)
    }

    /// Fold the overrides in, so the hash covers what actually runs.
    pub fn apply(mut self, o: &Overrides) -> Result<Self, ConfigError> {
        if let Some(dir) = &o.out {
            self.output.dir = Some(dir.clone());
        }
        if let Some(seed) = o.seed {
            self.initial.seed = seed;
            self.corpus.seed = seed;
        }
        if let Some(s) = o.tol_scale {
            if !(s > 0.0 && s.is_finite()) {
                return Err(ConfigError::Invalid(format!("tol-scale must be positive, got {s}")));
            }
            self.tolerances = self.tolerances.scaled(s);
        }
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.geometry.n < 4 || self.geometry.n % 2 != 0 {
            return bad(format!("geometry.n must be even and at least 4, got {}", self.geometry.n));
        }
        if self.probes.kappas.is_empty() {
            return bad("probes.kappas is empty".into());
        }
        if self.corpus.size == 0 {
            return bad("corpus.size must be positive".into());
        }
        Ok(())
    }

    /// The resolved config without the output location, which does not
    /// affect any emitted number.
    pub fn to_toml(&self) -> String {
        let mut c = self.clone();
        c.output = OutputSection::default();
        toml::to_string(&c).expect("config serializes")
    }

    /// SHA-256 of [`Self::to_toml`], hex encoded.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn geometry(&self) -> mkdv_core::Result<Geometry> {
        match self.geometry.kind {
            GeometryChoice::Circle => Geometry::circle(self.geometry.n),
            GeometryChoice::Line => Geometry::line_approx(self.geometry.period, self.geometry.n),
        }
    }

    pub fn initial_data(&self) -> InitialData {
        let i = &self.initial;
        match i.family {
            Family::Zero => InitialData::Zero,
            Family::Constant => InitialData::Constant(i.a),
            Family::Cosine => InitialData::Cosine { a: i.a, k: i.k },
            Family::Soliton => InitialData::Soliton { c: i.c, x0: i.x0 },
            Family::RandomSmooth => InitialData::RandomSmooth { seed: i.seed, decay: i.decay },
        }
    }

    pub fn initial_field(&self) -> mkdv_core::Result<Field> {
        let q = self.initial_data().build(self.geometry()?)?;
        match self.initial.ball_radius {
            Some(r) => scale_into_ball(&q, self.initial.ball_kappa, r),
            None => Ok(q),
        }
    }

    pub fn mu(&self) -> Mu {
        self.flow.mu.into()
    }

    pub fn flow_spec(&self) -> FlowSpec {
        let f = &self.flow;
        let h = match f.hamiltonian {
            FlowChoice::Mkdv => Hamiltonian::Mkdv,
            FlowChoice::Renorm => Hamiltonian::RenormMkdv,
            FlowChoice::Mass => Hamiltonian::Mass,
            FlowChoice::HKappa => Hamiltonian::HKappa(f.kappa),
            FlowChoice::Difference => Hamiltonian::Difference(f.kappa),
        };
        let mut spec = FlowSpec::new(h, self.mu(), f.dt, f.t_final);
        spec.integrator = match f.integrator {
            IntegratorChoice::Etdrk4 => Integrator::EtdRk4,
            IntegratorChoice::Ifrk4 => Integrator::IfRk4,
        };
        spec.save_every = f.save_every.max(1);
        spec.probes = self.probes.kappas.clone();
        spec
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output.dir.clone().unwrap_or_else(|| PathBuf::from("out"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = ExperimentConfig::from_toml("").unwrap();
        assert_eq!(c, ExperimentConfig::default());
        assert_eq!(c.tolerances.identity, 1e-8);
    }

    #[test]
    fn sections_parse_and_unknown_keys_fail() {
        let c = ExperimentConfig::from_toml("[geometry]\nkind = \"line\"\nperiod = 16.0\nn = 64\n[flow]\nhamiltonian = \"h_kappa\"\nkappa = 8.0\n").unwrap();
        assert_eq!(c.geometry.kind, GeometryChoice::Line);
        assert_eq!(c.flow_spec().hamiltonian, Hamiltonian::HKappa(8.0));
        assert!(ExperimentConfig::from_toml("[geometry]\nsize = 3\n").is_err());
    }

    #[test]
    fn overrides_change_the_hash() {
        let base = ExperimentConfig::default();
        let h0 = base.hash();
        assert_eq!(h0, ExperimentConfig::default().hash());
        let moved = base.clone().apply(&Overrides { out: Some("elsewhere".into()), ..Default::default() }).unwrap();
        assert_eq!(moved.hash(), h0);
        let o = Overrides { seed: Some(9), tol_scale: Some(10.0), ..Default::default() };
        let c = base.apply(&o).unwrap();
        assert_eq!((c.initial.seed, c.corpus.seed), (9, 9));
        assert_eq!(c.tolerances.identity, 1e-7);
        assert_eq!(c.tolerances.expansion_slope, -4.5);
        assert_ne!(c.hash(), h0);
        assert!(ExperimentConfig::default().apply(&Overrides { tol_scale: Some(-1.0), ..Default::default() }).is_err());
    }
}
