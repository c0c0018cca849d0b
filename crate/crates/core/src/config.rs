//! Declarative scenario configuration (TOML) and its translation into solver objects.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::catalog::{self, CasimirWitness, Params};
use crate::error::{HelidiffError, Result};
use crate::fokker_planck::{EquilibriumSpec, FpFriction, FpModel};
use crate::grid::GridGeometry;
use crate::operator::{CoordinateMap, Hamiltonian, OperatorField};
use crate::sde::{
    DomainSpec, FrictionSpec, InitSpec, NoiseSpec, SdeSystem, StratonovichScheme,
};

pub const DEFAULT_PARTICLES: usize = 200_000;
pub const PAPER_SCALE_PARTICLES: usize = 8_000_000;

/// Artifacts a run may write.
pub const OUTPUT_KINDS: &[&str] = &[
    "histogram",
    "snapshots",
    "trajectory",
    "trackers",
    "entropy",
    "grid",
    "comparison",
    "moments",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    /// Figure the scenario reproduces, recorded in the manifest.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub figure: Option<String>,
    pub operator: String,
    #[serde(default)]
    pub operator_params: Params,
    #[serde(default)]
    pub hamiltonian: HamiltonianConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub friction: FrictionConfig,
    #[serde(default = "default_domain")]
    pub domain: DomainSpec,
    #[serde(default = "default_init")]
    pub init: InitSpec,
    #[serde(default)]
    pub integrator: IntegratorConfig,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_outputs")]
    pub outputs: Vec<String>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub histogram: HistogramConfig,
    #[serde(default)]
    pub equilibrium: EquilibriumConfig,
}

fn default_domain() -> DomainSpec {
    DomainSpec::cube(3, 2.0 * std::f64::consts::PI)
}

fn default_init() -> InitSpec {
    InitSpec::Flat
}

fn default_seed() -> u64 {
    1
}

fn default_outputs() -> Vec<String> {
    vec!["histogram".into(), "trackers".into(), "comparison".into()]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HamiltonianConfig {
    #[serde(default = "default_hamiltonian")]
    pub name: String,
    #[serde(default)]
    pub params: Params,
}

fn default_hamiltonian() -> String {
    "none".into()
}

impl Default for HamiltonianConfig {
    fn default() -> Self {
        HamiltonianConfig {
            name: default_hamiltonian(),
            params: Params::new(),
        }
    }
}

/// A single amplitude for every axis or one per axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Amplitude {
    Scalar(f64),
    PerAxis(Vec<f64>),
}

impl Amplitude {
    pub fn values(&self) -> Vec<f64> {
        match self {
            Amplitude::Scalar(a) => vec![*a],
            Amplitude::PerAxis(v) => v.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CoordinateMapConfig {
    Identity,
    /// `y^k = s_k x^k`.
    Stretch { factors: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    #[serde(default = "default_amplitude")]
    pub amplitude: Amplitude,
    #[serde(default = "default_map")]
    pub coordinate_map: CoordinateMapConfig,
}

fn default_amplitude() -> Amplitude {
    Amplitude::Scalar(1.0)
}

fn default_map() -> CoordinateMapConfig {
    CoordinateMapConfig::Identity
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            amplitude: default_amplitude(),
            coordinate_map: default_map(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrictionConfig {
    #[serde(default)]
    pub enabled: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    /// Recompute `β` every step so the mean energy is stationary.
    #[serde(default)]
    pub adaptive: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorConfig {
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_steps")]
    pub steps: u64,
    /// Zero writes only the initial and final snapshots.
    #[serde(default)]
    pub snapshot_every: u64,
    #[serde(default = "default_tracker_every")]
    pub tracker_every: u64,
    #[serde(default)]
    pub scheme: StratonovichScheme,
    /// Grid solver step; the stability bound is used when absent or larger.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_dt: Option<f64>,
}

fn default_dt() -> f64 {
    1e-3
}

fn default_steps() -> u64 {
    200_000
}

fn default_tracker_every() -> u64 {
    100
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            dt: default_dt(),
            steps: default_steps(),
            snapshot_every: 0,
            tracker_every: default_tracker_every(),
            scheme: StratonovichScheme::Heun,
            grid_dt: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SolverConfig {
    Particles { n: usize },
    Grid { shape: [usize; 3] },
    Both { n: usize, shape: [usize; 3] },
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig::Particles {
            n: DEFAULT_PARTICLES,
        }
    }
}

impl SolverConfig {
    pub fn particles(&self) -> Option<usize> {
        match self {
            SolverConfig::Particles { n } | SolverConfig::Both { n, .. } => Some(*n),
            SolverConfig::Grid { .. } => None,
        }
    }

    pub fn grid(&self) -> Option<[usize; 3]> {
        match self {
            SolverConfig::Grid { shape } | SolverConfig::Both { shape, .. } => Some(*shape),
            SolverConfig::Particles { .. } => None,
        }
    }

    pub fn set_particles(&mut self, count: usize) {
        match self {
            SolverConfig::Particles { n } | SolverConfig::Both { n, .. } => *n = count,
            SolverConfig::Grid { .. } => {}
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistogramConfig {
    #[serde(default = "default_histogram_shape")]
    pub shape: [usize; 3],
    #[serde(default)]
    pub deposit: crate::diagnostics::DepositScheme,
}

fn default_histogram_shape() -> [usize; 3] {
    [16, 16, 1]
}

impl Default for HistogramConfig {
    fn default() -> Self {
        HistogramConfig {
            shape: default_histogram_shape(),
            deposit: Default::default(),
        }
    }
}

/// Analytic equilibrium the final density is compared against.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EquilibriumConfig {
    #[default]
    None,
    Flat,
    /// `(A/λ) e^{−γC}` from the operator's registered `(λ, C)`.
    CasimirFoliation {
        #[serde(default)]
        gamma: f64,
    },
    /// `A e^{−βH₀}`.
    Boltzmann { beta: f64 },
    /// `A e^{−βH₀ − γC}`.
    CasimirBoltzmann { beta: f64, gamma: f64 },
}

/// Everything a run needs, built and checked before any compute starts.
#[derive(Clone, Debug)]
pub struct ResolvedScenario {
    pub config: ScenarioConfig,
    pub operator: OperatorField,
    pub hamiltonian: Option<Hamiltonian>,
    pub noise: NoiseSpec,
    pub witness: Option<CasimirWitness>,
    pub equilibrium: Option<EquilibriumSpec>,
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            HelidiffError::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        ScenarioConfig::from_toml_str(&text)
    }

    /// Minimal configuration with every optional field at its default.
    pub fn minimal(name: &str, operator: &str) -> Self {
        ScenarioConfig::from_toml_str(&format!("name = \"{name}\"\noperator = \"{operator}\"\n"))
            .expect("minimal config parses")
    }

    /// Restores the paper's ensemble size.
    pub fn paper_scale(&mut self) {
        self.solver.set_particles(PAPER_SCALE_PARTICLES);
    }

    /// Sets the particle count of a particle or combined run.
    pub fn set_particles(&mut self, n: usize) {
        self.solver.set_particles(n);
    }

    /// Checks every field and builds the solver objects.
    pub fn resolve(&self) -> Result<ResolvedScenario> {
        if self.name.trim().is_empty() {
            return Err(HelidiffError::Config("scenario name must not be empty".into()));
        }
        let cat = catalog::catalog_operator(&self.operator, &self.operator_params)?;
        let operator = cat.operator();
        let n = operator.dim();
        let hamiltonian =
            catalog::catalog_hamiltonian(&self.hamiltonian.name, &self.hamiltonian.params)?;
        let map = match &self.noise.coordinate_map {
            CoordinateMapConfig::Identity => CoordinateMap::identity(n),
            CoordinateMapConfig::Stretch { factors } => {
                if factors.len() != n || factors.iter().any(|f| !(*f != 0.0 && f.is_finite())) {
                    return Err(HelidiffError::Config(format!(
                        "stretch map needs {n} finite non-zero factors"
                    )));
                }
                CoordinateMap::diag_stretch(factors)
            }
        };
        let noise = NoiseSpec::new(self.noise.amplitude.values(), map)?;
        self.domain.validate(n)?;
        let it = &self.integrator;
        if !(it.dt > 0.0 && it.dt.is_finite()) || it.steps == 0 {
            return Err(HelidiffError::Config(format!(
                "integrator needs dt > 0 and steps ≥ 1 (dt = {}, steps = {})",
                it.dt, it.steps
            )));
        }
        if let Some(gdt) = it.grid_dt {
            if !(gdt > 0.0 && gdt.is_finite()) {
                return Err(HelidiffError::Config("grid_dt must be positive".into()));
            }
        }
        if self.friction.enabled {
            if hamiltonian.is_none() {
                return Err(HelidiffError::Config("friction needs a Hamiltonian".into()));
            }
            if self.friction.adaptive == self.friction.beta.is_some() {
                return Err(HelidiffError::Config(
                    "enabled friction needs exactly one of beta or adaptive = true".into(),
                ));
            }
        }
        match &self.init {
            InitSpec::Gaussian { center, sigma } => {
                if center.len() != n || !(*sigma >= 0.0) {
                    return Err(HelidiffError::Config(format!(
                        "gaussian init needs {n} center coordinates and sigma ≥ 0"
                    )));
                }
            }
            InitSpec::Point { center } if center.len() != n => {
                return Err(HelidiffError::Config(format!("point init needs {n} coordinates")));
            }
            InitSpec::Flat if self.domain == DomainSpec::Unbounded => {
                return Err(HelidiffError::Config(
                    "flat initial condition needs a periodic box".into(),
                ));
            }
            _ => {}
        }
        if let Some(p) = self.solver.particles() {
            if p == 0 {
                return Err(HelidiffError::Config("particle count must be at least 1".into()));
            }
        }
        if let Some(shape) = self.solver.grid() {
            if n != 3 {
                return Err(HelidiffError::Config("the grid solver needs a 3D operator".into()));
            }
            if shape.iter().any(|s| *s < 4) {
                return Err(HelidiffError::Config("grid axes need at least 4 cells".into()));
            }
            if !matches!(self.domain, DomainSpec::PeriodicBox { .. }) {
                return Err(HelidiffError::Config("the grid solver needs a periodic box".into()));
            }
            if matches!(self.init, InitSpec::Point { .. }) {
                return Err(HelidiffError::Config(
                    "point initial condition cannot be represented on a grid".into(),
                ));
            }
            for (a, (s, h)) in shape.iter().zip(self.histogram.shape.iter()).enumerate() {
                if *h == 0 || s % h != 0 {
                    return Err(HelidiffError::Config(format!(
                        "histogram axis {a} ({h} cells) must divide the grid axis ({s} cells)"
                    )));
                }
            }
        }
        if self.histogram.shape.contains(&0) {
            return Err(HelidiffError::Config("histogram shape must be positive".into()));
        }
        for o in &self.outputs {
            if !OUTPUT_KINDS.contains(&o.as_str()) {
                return Err(HelidiffError::Config(format!(
                    "unknown output '{o}'; valid outputs: {}",
                    OUTPUT_KINDS.join(", ")
                )));
            }
        }
        let witness = catalog::casimir_witness(&self.operator);
        let equilibrium = self.build_equilibrium(hamiltonian.as_ref(), witness.as_ref())?;
        if equilibrium.is_some() && n != 3 {
            return Err(HelidiffError::Config("equilibria are defined on 3D grids only".into()));
        }
        if (self.outputs.iter().any(|o| o == "histogram" || o == "comparison")) && n != 3 {
            return Err(HelidiffError::Config(
                "histogram outputs need a 3D operator".into(),
            ));
        }
        Ok(ResolvedScenario {
            config: self.clone(),
            operator,
            hamiltonian,
            noise,
            witness,
            equilibrium,
        })
    }

    fn build_equilibrium(
        &self,
        hamiltonian: Option<&Hamiltonian>,
        witness: Option<&CasimirWitness>,
    ) -> Result<Option<EquilibriumSpec>> {
        let need_witness = || {
            witness.cloned().ok_or_else(|| {
                HelidiffError::Config(format!(
                    "operator '{}' has no registered Casimir; valid choices: uniform_z, \
                     grad_casimir, lambda_grad_casimir, euler_rigid_body",
                    self.operator
                ))
            })
        };
        let need_h = || {
            hamiltonian
                .cloned()
                .ok_or_else(|| HelidiffError::Config("this equilibrium needs a Hamiltonian".into()))
        };
        Ok(match &self.equilibrium {
            EquilibriumConfig::None => None,
            EquilibriumConfig::Flat => Some(EquilibriumSpec::Flat),
            EquilibriumConfig::CasimirFoliation { gamma } => {
                let w = need_witness()?;
                Some(EquilibriumSpec::CasimirFoliation {
                    lambda: w.lambda,
                    casimir: w.casimir,
                    foliation: std::sync::Arc::new(|c| c),
                    gamma: *gamma,
                })
            }
            EquilibriumConfig::Boltzmann { beta } => Some(EquilibriumSpec::Boltzmann {
                hamiltonian: need_h()?,
                beta: *beta,
            }),
            EquilibriumConfig::CasimirBoltzmann { beta, gamma } => {
                let w = need_witness()?;
                Some(EquilibriumSpec::CasimirBoltzmann {
                    hamiltonian: need_h()?,
                    beta: *beta,
                    casimirs: vec![(w.casimir, *gamma)],
                })
            }
        })
    }
}

impl ResolvedScenario {
    pub fn friction(&self) -> FrictionSpec {
        let f = &self.config.friction;
        match (f.enabled, f.adaptive, f.beta) {
            (false, _, _) => FrictionSpec::Off,
            (true, true, _) => FrictionSpec::Adaptive,
            (true, false, Some(b)) => FrictionSpec::Fixed(b),
            (true, false, None) => FrictionSpec::Off,
        }
    }

    pub fn sde_system(&self) -> Result<SdeSystem> {
        Ok(SdeSystem::new(
            self.operator.clone(),
            self.hamiltonian.clone(),
            self.noise.clone(),
            self.friction(),
            self.config.domain.clone(),
        )?
        .with_scheme(self.config.integrator.scheme))
    }

    pub fn fp_model(&self) -> Result<FpModel> {
        let friction = match self.friction() {
            FrictionSpec::Off => FpFriction::Off,
            FrictionSpec::Fixed(b) => FpFriction::Fixed(b),
            FrictionSpec::Adaptive => FpFriction::EnergyConsistent,
        };
        FpModel::new(
            self.operator.clone(),
            self.hamiltonian.clone(),
            self.noise.clone(),
            friction,
        )
    }

    /// Box of the periodic domain as a grid of the given shape.
    pub fn geometry(&self, shape: [usize; 3]) -> Result<GridGeometry> {
        match &self.config.domain {
            DomainSpec::PeriodicBox { center, side } => {
                GridGeometry::new(shape, [center[0], center[1], center[2]], *side)
            }
            DomainSpec::Unbounded => Err(HelidiffError::Config(
                "grids need a periodic box domain".into(),
            )),
        }
    }

    /// Named scalars recorded per particle: energy and, if registered, the Casimir.
    pub fn tracker_functions(&self) -> BTreeMap<String, crate::sde::Tracker> {
        let mut out = BTreeMap::new();
        if let Some(h) = &self.hamiltonian {
            let h = h.clone();
            out.insert(
                "energy".to_string(),
                crate::sde::Tracker::new("energy", move |x: &[f64]| h.eval(x)),
            );
        }
        if let Some(w) = &self.witness {
            out.insert(
                "casimir".to_string(),
                crate::sde::Tracker::from_arc("casimir", w.casimir.clone()),
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_takes_defaults() {
        let c = ScenarioConfig::minimal("t", "beltrami");
        assert_eq!(c.integrator.dt, 1e-3);
        assert_eq!(c.solver.particles(), Some(DEFAULT_PARTICLES));
        assert_eq!(c.init, InitSpec::Flat);
        c.resolve().unwrap();
    }

    #[test]
    fn round_trip_is_identity() {
        let text = r#"
name = "rt"
operator = "landau_lifshitz"
operator_params = { gamma = 0.5, sigma = 0.25 }
seed = 9
outputs = ["moments", "trackers"]

[hamiltonian]
name = "half_square"

[noise]
amplitude = [1.0, 0.5, 0.0]
coordinate_map = { kind = "stretch", factors = [2.0, 1.0, 1.0] }

[domain]
kind = "unbounded"

[init]
kind = "gaussian"
center = [0.0, 0.0, 2.0]
sigma = 0.5

[integrator]
dt = 0.005
steps = 400
scheme = "midpoint"

[solver]
kind = "particles"
n = 1000
"#;
        let a = ScenarioConfig::from_toml_str(text).unwrap();
        let b = ScenarioConfig::from_toml_str(&a.to_toml_string().unwrap()).unwrap();
        assert_eq!(a, b);
        a.resolve().unwrap();
    }

    #[test]
    fn missing_operator_is_rejected() {
        assert!(ScenarioConfig::from_toml_str("name = \"x\"\n").is_err());
    }

    #[test]
    fn unknown_fields_and_names_are_rejected() {
        assert!(ScenarioConfig::from_toml_str("name = \"x\"\noperator = \"beltrami\"\nbogus = 1\n")
            .is_err());
        let c = ScenarioConfig::minimal("x", "not_an_operator");
        let err = c.resolve().unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("beltrami"));
    }

    #[test]
    fn friction_without_hamiltonian_is_rejected() {
        let mut c = ScenarioConfig::minimal("x", "beltrami");
        c.friction.enabled = true;
        c.friction.beta = Some(1.0);
        assert!(c.resolve().is_err());
    }
}
