//! Built-in scenarios, one per reproduced figure, at desk scale.

use std::f64::consts::PI;

use crate::catalog::Params;
use crate::config::{
    Amplitude, EquilibriumConfig, HamiltonianConfig, IntegratorConfig, ScenarioConfig,
    SolverConfig, DEFAULT_PARTICLES,
};
use crate::error::{HelidiffError, Result};
use crate::sde::{DomainSpec, InitSpec, StratonovichScheme};

pub const BUILTIN_NAMES: &[&str] = &[
    "fig2a", "fig2b", "fig3a", "fig3b", "fig4", "fig5", "fig6", "fig7", "fig8", "fig9", "fig10",
];

/// Grid resolution used by the built-in grid runs.
pub const BUILTIN_GRID: [usize; 3] = [32, 32, 32];

fn base(name: &str, figure: &str, operator: &str) -> ScenarioConfig {
    let mut c = ScenarioConfig::minimal(name, operator);
    c.figure = Some(figure.to_string());
    c
}

fn hamiltonian(name: &str) -> HamiltonianConfig {
    HamiltonianConfig {
        name: name.to_string(),
        params: Params::new(),
    }
}

fn outputs(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

/// Trajectory scenario: a few particles started from one point.
fn orbit(
    name: &str,
    figure: &str,
    operator: &str,
    domain: DomainSpec,
    noise: f64,
    particles: usize,
) -> ScenarioConfig {
    let mut c = base(name, figure, operator);
    c.hamiltonian = hamiltonian("rigid_body");
    c.noise.amplitude = Amplitude::Scalar(noise);
    c.domain = domain;
    c.init = InitSpec::Point {
        center: vec![1.0, 0.5, 0.0],
    };
    c.integrator = IntegratorConfig {
        dt: 1e-3,
        steps: 200_000,
        snapshot_every: 100,
        tracker_every: 100,
        scheme: StratonovichScheme::Heun,
        grid_dt: None,
    };
    c.solver = SolverConfig::Particles { n: particles };
    c.outputs = outputs(&["trajectory", "trackers"]);
    c
}

/// Relaxation scenario on the `2π` box from a flat initial density.
fn relaxation(name: &str, figure: &str, operator: &str, grid: bool) -> ScenarioConfig {
    let mut c = base(name, figure, operator);
    c.integrator = IntegratorConfig {
        dt: 5e-3,
        steps: 1_000,
        snapshot_every: 0,
        tracker_every: 100,
        scheme: StratonovichScheme::Heun,
        grid_dt: None,
    };
    c.solver = if grid {
        SolverConfig::Both {
            n: DEFAULT_PARTICLES,
            shape: BUILTIN_GRID,
        }
    } else {
        SolverConfig::Particles {
            n: DEFAULT_PARTICLES,
        }
    };
    c.outputs = outputs(&["histogram", "trackers", "entropy", "comparison"]);
    if grid {
        c.outputs.push("grid".into());
    }
    c
}

/// Configuration of a built-in scenario.
pub fn builtin(name: &str) -> Result<ScenarioConfig> {
    let c = match name {
        "fig2a" => orbit(name, "Fig. 2(a)", "euler_rigid_body", DomainSpec::Unbounded, 0.0, 1),
        "fig2b" => {
            let mut c = orbit(name, "Fig. 2(b)", "euler_rigid_body", DomainSpec::Unbounded, 1.0, 100);
            c.integrator.scheme = StratonovichScheme::Midpoint;
            c
        }
        "fig3a" => orbit(name, "Fig. 3(a)", "spiral", DomainSpec::cube(3, 2.0 * PI), 0.0, 1),
        "fig3b" => orbit(name, "Fig. 3(b)", "spiral", DomainSpec::cube(3, 2.0 * PI), 1.0, 100),
        "fig4" => {
            let mut c = relaxation(name, "Fig. 4", "uniform_z", false);
            c.equilibrium = EquilibriumConfig::Flat;
            c
        }
        "fig5" => {
            let mut c = relaxation(name, "Fig. 5", "grad_casimir", false);
            c.equilibrium = EquilibriumConfig::Flat;
            c
        }
        "fig6" => {
            let mut c = relaxation(name, "Fig. 6", "lambda_grad_casimir", false);
            c.equilibrium = EquilibriumConfig::CasimirFoliation { gamma: 0.0 };
            c
        }
        "fig7" => {
            let mut c = relaxation(name, "Fig. 7", "beltrami", true);
            c.equilibrium = EquilibriumConfig::Flat;
            c
        }
        "fig8" => relaxation(name, "Fig. 8", "antisym", true),
        "fig9" => relaxation(name, "Fig. 9", "unit_norm", true),
        "fig10" => {
            let mut c = base(name, "Fig. 10", "landau_lifshitz");
            c.hamiltonian = hamiltonian("half_square");
            c.domain = DomainSpec::Unbounded;
            c.noise.amplitude = Amplitude::Scalar(0.3);
            c.init = InitSpec::Gaussian {
                center: vec![0.0, 0.0, 2.0],
                sigma: 1.0,
            };
            c.integrator = IntegratorConfig {
                dt: 5e-3,
                steps: 2_000,
                snapshot_every: 200,
                tracker_every: 20,
                scheme: StratonovichScheme::Heun,
                grid_dt: None,
            };
            c.solver = SolverConfig::Particles {
                n: DEFAULT_PARTICLES,
            };
            c.outputs = outputs(&["moments", "trackers", "snapshots"]);
            c
        }
        other => {
            return Err(HelidiffError::Config(format!(
                "unknown scenario '{other}'; built-in names: {}",
                BUILTIN_NAMES.join(", ")
            )))
        }
    };
    Ok(c)
}
