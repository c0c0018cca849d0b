//! Scenario execution and artifact writing behind the command-line front end.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classify::{classify, ClassificationReport, VolumeWeight};
use crate::config::{ResolvedScenario, ScenarioConfig};
use crate::diagnostics::{
    compare, deposit_histogram, entropy, ComparisonReport, EntropyAux, EntropyKind, EntropyTrace,
};
use crate::error::{HelidiffError, Result};
use crate::fokker_planck::{make_equilibrium, EquilibriumSpec, FokkerPlanck3, FpFriction};
use crate::grid::{DensityGrid, GridGeometry};
use crate::sampling::SampleSpec;
use crate::scenarios;
use crate::sde::{run_ensemble, Ensemble, InitSpec, RunPlan};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

/// Particles whose paths are written by the `trajectory` output.
const TRAJECTORY_PARTICLES: usize = 8;

/// Grid samples of the entropy trace per run.
const GRID_ENTROPY_SAMPLES: u64 = 200;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputEntry {
    pub path: String,
    pub kind: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub scenario: String,
    pub figure: Option<String>,
    pub operator: String,
    pub seed: u64,
    pub config: String,
    pub outputs: Vec<OutputEntry>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: Vec<f64>,
    /// `⟨(x^i)²⟩` over live particles.
    pub second: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParticleSummary {
    pub particles: usize,
    pub steps: u64,
    pub final_time: f64,
    pub flagged: usize,
    pub rejected: u64,
    pub tracker_max_rel_change: BTreeMap<String, f64>,
    pub moments: Moments,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSummary {
    pub shape: [usize; 3],
    pub dt: f64,
    pub steps: u64,
    pub final_time: f64,
    pub clipped_mass: f64,
    pub mass_error: f64,
    pub max_rel_deviation_from_mean: f64,
    /// Largest decrease between consecutive samples of each recorded entropy.
    pub entropy_worst_decrease: BTreeMap<String, f64>,
}

/// Everything `run` measured, also written to `summary.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub scenario: String,
    pub figure: Option<String>,
    pub particles: Option<ParticleSummary>,
    pub grid: Option<GridSummary>,
    /// Keys: `particles_vs_equilibrium`, `grid_vs_equilibrium`, `particles_vs_grid`.
    pub comparisons: BTreeMap<String, ComparisonReport>,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub manifest: Manifest,
    pub manifest_path: PathBuf,
    pub summary: RunSummary,
    /// Final particle histogram, if the particle solver ran and the run is 3D on a box.
    pub histogram: Option<DensityGrid>,
    pub grid: Option<DensityGrid>,
}

/// Loads a configuration from a TOML path or a built-in scenario name.
pub fn load_scenario(spec: &str) -> Result<ScenarioConfig> {
    let path = Path::new(spec);
    if path.is_file() {
        return ScenarioConfig::load(path);
    }
    if scenarios::BUILTIN_NAMES.contains(&spec) {
        return scenarios::builtin(spec);
    }
    Err(HelidiffError::Config(format!(
        "'{spec}' is neither a config file nor a built-in scenario ({})",
        scenarios::BUILTIN_NAMES.join(", ")
    )))
}

/// Classification of the configured operator, with `λ⁻¹` as the volume weight when
/// the operator registers an integrating factor.
pub fn cmd_classify(cfg: &ScenarioConfig, samples: usize) -> Result<ClassificationReport> {
    let resolved = cfg.resolve()?;
    let weight = match &resolved.witness {
        Some(w) if resolved.operator.dim() == 3 => {
            let lambda = w.lambda.clone();
            VolumeWeight::new("inverse_lambda", move |x: &[f64]| 1.0 / lambda(x))
        }
        _ => VolumeWeight::unit(),
    };
    let side = match &cfg.domain {
        crate::sde::DomainSpec::PeriodicBox { side, .. } => *side,
        crate::sde::DomainSpec::Unbounded => 4.0,
    };
    let spec = SampleSpec::cube(resolved.operator.dim(), side, samples);
    classify(&resolved.operator, &weight, &spec)
}

/// Loads a density from a binary grid (with sidecar) or a CSV slice.
pub fn load_density(path: &Path) -> Result<DensityGrid> {
    let is_csv = path
        .extension()
        .map(|e| e.eq_ignore_ascii_case("csv"))
        .unwrap_or(false);
    if is_csv {
        DensityGrid::read_slice_csv(path)
    } else {
        DensityGrid::read_binary(path)
    }
}

pub fn cmd_compare(a: &Path, b: &Path) -> Result<ComparisonReport> {
    compare(&load_density(a)?, &load_density(b)?)
}

/// Collects output files and their hashes in write order.
struct ArtifactWriter {
    root: PathBuf,
    entries: Vec<OutputEntry>,
}

impl ArtifactWriter {
    fn new(root: &Path) -> Result<Self> {
        fs::create_dir_all(root)?;
        Ok(ArtifactWriter {
            root: root.to_path_buf(),
            entries: Vec::new(),
        })
    }

    fn write(&mut self, rel: &str, kind: &str, bytes: &[u8]) -> Result<()> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, bytes)?;
        self.record(rel, kind, bytes);
        Ok(())
    }

    fn record(&mut self, rel: &str, kind: &str, bytes: &[u8]) {
        self.entries.push(OutputEntry {
            path: rel.to_string(),
            kind: kind.to_string(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len() as u64,
        });
    }

    fn write_grid(&mut self, stem: &str, kind: &str, grid: &DensityGrid) -> Result<()> {
        let bin = format!("{stem}.bin");
        let (p, side) = grid.write_binary(&self.root.join(&bin))?;
        self.record(&bin, kind, &fs::read(p)?);
        self.record(&format!("{bin}.json"), kind, &fs::read(side)?);
        let m = grid.marginalize_z();
        self.write(&format!("{stem}_xy.csv"), kind, m.slice_csv(0)?.as_bytes())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn wants(cfg: &ScenarioConfig, kind: &str) -> bool {
    cfg.outputs.iter().any(|o| o == kind)
}

/// Equilibrium averaged over the cells of `geom`, from a finer evaluation.
pub fn equilibrium_on(spec: &EquilibriumSpec, geom: &GridGeometry) -> Result<DensityGrid> {
    let factor = [4, 4, if geom.shape[2] == 1 { 32 } else { 4 }];
    let fine = GridGeometry::new(
        [
            geom.shape[0] * factor[0],
            geom.shape[1] * factor[1],
            geom.shape[2] * factor[2],
        ],
        geom.center,
        geom.side,
    )?;
    make_equilibrium(spec, &fine)?.coarsen(factor)
}

fn moments(ens: &Ensemble) -> Moments {
    let n = ens.dim();
    let live: Vec<&[f64]> = ens
        .positions()
        .chunks(n)
        .zip(ens.flagged())
        .filter(|(_, f)| !**f)
        .map(|(x, _)| x)
        .collect();
    let count = live.len().max(1) as f64;
    let col = |f: &dyn Fn(&[f64]) -> f64| -> f64 {
        crate::sampling::pairwise_sum(&live.iter().map(|x| f(x)).collect::<Vec<_>>()) / count
    };
    Moments {
        mean: (0..n).map(|i| col(&|x| x[i])).collect(),
        second: (0..n).map(|i| col(&|x| x[i] * x[i])).collect(),
    }
}

fn snapshot_bytes(ens: &Ensemble) -> Vec<u8> {
    let mut out = Vec::with_capacity(ens.positions().len() * 8);
    for v in ens.positions() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Initial density for the grid solver.
fn initial_grid(init: &InitSpec, geom: &GridGeometry) -> Result<DensityGrid> {
    match init {
        InitSpec::Flat => Ok(DensityGrid::uniform(geom.clone())),
        InitSpec::Gaussian { center, sigma } => {
            if *sigma <= 0.0 {
                return Err(HelidiffError::Config(
                    "a grid run needs a gaussian init with sigma > 0".into(),
                ));
            }
            let side = geom.side;
            DensityGrid::from_fn(geom.clone(), |x| {
                let r2: f64 = (0..3)
                    .map(|a| {
                        let d = (x[a] - center[a]) - side * ((x[a] - center[a]) / side).round();
                        d * d
                    })
                    .sum();
                (-0.5 * r2 / (sigma * sigma)).exp()
            })
            .normalized()
        }
        InitSpec::Point { .. } => Err(HelidiffError::Config(
            "point initial condition cannot be represented on a grid".into(),
        )),
    }
}

/// Runs a scenario and writes its artifacts under `out_dir`.
pub fn cmd_run(cfg: &ScenarioConfig, out_dir: &Path) -> Result<RunOutcome> {
    let scenario = cfg.resolve()?;
    let cfg = &scenario.config;
    let mut writer = ArtifactWriter::new(out_dir)?;
    writer.write("config.toml", "config", cfg.to_toml_string()?.as_bytes())?;
    let mut comparisons = BTreeMap::new();
    let hist_geom = match scenario.config.domain {
        crate::sde::DomainSpec::PeriodicBox { .. } if scenario.operator.dim() == 3 => {
            Some(scenario.geometry(cfg.histogram.shape)?)
        }
        _ => None,
    };
    let eq_hist = match (&scenario.equilibrium, &hist_geom) {
        (Some(spec), Some(g)) => Some(equilibrium_on(spec, g)?),
        _ => None,
    };

    let (particles, histogram) = match cfg.solver.particles() {
        Some(n) => {
            let (summary, hist) = run_particles(&scenario, n, hist_geom.as_ref(), &mut writer)?;
            (Some(summary), hist)
        }
        None => (None, None),
    };
    let (grid_summary, grid) = match cfg.solver.grid() {
        Some(shape) => {
            let (s, g) = run_grid(&scenario, shape, &mut writer)?;
            (Some(s), Some(g))
        }
        None => (None, None),
    };

    if let (Some(h), Some(eq)) = (&histogram, &eq_hist) {
        comparisons.insert("particles_vs_equilibrium".to_string(), compare(h, eq)?);
    }
    let grid_coarse = match (&grid, &hist_geom) {
        (Some(g), Some(hg)) => {
            let f = [0, 1, 2].map(|a| g.geometry.shape[a] / hg.shape[a]);
            Some(g.coarsen(f)?)
        }
        _ => None,
    };
    if let (Some(gc), Some(eq)) = (&grid_coarse, &eq_hist) {
        comparisons.insert("grid_vs_equilibrium".to_string(), compare(gc, eq)?);
    }
    if let (Some(h), Some(gc)) = (&histogram, &grid_coarse) {
        comparisons.insert("particles_vs_grid".to_string(), compare(h, gc)?);
    }
    if wants(cfg, "comparison") {
        writer.write(
            "comparison.json",
            "comparison",
            serde_json::to_string_pretty(&comparisons)?.as_bytes(),
        )?;
        if let Some(eq) = &eq_hist {
            writer.write_grid("equilibrium", "comparison", eq)?;
        }
    }

    let summary = RunSummary {
        scenario: cfg.name.clone(),
        figure: cfg.figure.clone(),
        particles,
        grid: grid_summary,
        comparisons,
    };
    writer.write("summary.json", "summary", serde_json::to_string_pretty(&summary)?.as_bytes())?;
    let manifest = Manifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        scenario: cfg.name.clone(),
        figure: cfg.figure.clone(),
        operator: cfg.operator.clone(),
        seed: cfg.seed,
        config: cfg.to_toml_string()?,
        outputs: writer.entries.clone(),
    };
    let manifest_path = out_dir.join("manifest.json");
    fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(RunOutcome {
        manifest,
        manifest_path,
        summary,
        histogram,
        grid,
    })
}

fn run_particles(
    scenario: &ResolvedScenario,
    n: usize,
    hist_geom: Option<&GridGeometry>,
    writer: &mut ArtifactWriter,
) -> Result<(ParticleSummary, Option<DensityGrid>)> {
    let cfg = &scenario.config;
    let sys = scenario.sde_system()?;
    let mut ens = Ensemble::sample(&cfg.init, &cfg.domain, &scenario.operator, n, cfg.seed)?;
    let it = &cfg.integrator;
    let plan = RunPlan {
        dt: it.dt,
        steps: it.steps,
        snapshot_every: it.snapshot_every,
        tracker_every: it.tracker_every,
    };
    let dim = ens.dim();
    let trackers: Vec<_> = scenario.tracker_functions().into_values().collect();
    let want_traj = wants(cfg, "trajectory");
    let want_snap = wants(cfg, "snapshots");
    let want_moments = wants(cfg, "moments");
    let want_entropy = wants(cfg, "entropy") && hist_geom.is_some();
    let mut traj = String::from("step,t,particle");
    for i in 0..dim {
        traj.push_str(&format!(",x{}", i + 1));
    }
    traj.push('\n');
    let mut moments_csv = String::from("t");
    for i in 0..dim {
        moments_csv.push_str(&format!(",mean_x{}", i + 1));
    }
    for i in 0..dim {
        moments_csv.push_str(&format!(",sq_x{}", i + 1));
    }
    moments_csv.push('\n');
    let mut entropy_trace = EntropyTrace::new(EntropyKind::S);
    let mut snapshots: Vec<(String, Vec<u8>, String)> = Vec::new();
    let deposit = cfg.histogram.deposit;

    let history = run_ensemble(&mut ens, &sys, &plan, trackers, |e| {
        if want_traj {
            for p in 0..e.len().min(TRAJECTORY_PARTICLES) {
                traj.push_str(&format!("{},{:e},{}", e.step_index(), e.time(), p));
                for v in e.particle(p) {
                    traj.push_str(&format!(",{v:e}"));
                }
                traj.push('\n');
            }
        }
        if want_moments {
            let m = moments(e);
            moments_csv.push_str(&format!("{:e}", e.time()));
            for v in m.mean.iter().chain(&m.second) {
                moments_csv.push_str(&format!(",{v:e}"));
            }
            moments_csv.push('\n');
        }
        if want_entropy {
            let h = deposit_histogram(e, hist_geom.expect("checked above"), deposit)?;
            let s = entropy(&h, EntropyKind::S, &EntropyAux::None)?;
            // Sampling noise makes a histogram entropy non-monotone; record, do not enforce.
            entropy_trace.times.push(e.time());
            entropy_trace.values.push(s.value);
        }
        if want_snap {
            let meta = serde_json::json!({
                "particles": e.len(),
                "dim": e.dim(),
                "step": e.step_index(),
                "time": e.time(),
                "layout": "row-major little-endian f64",
            });
            snapshots.push((
                format!("snapshots/step_{:09}.bin", e.step_index()),
                snapshot_bytes(e),
                serde_json::to_string_pretty(&meta)?,
            ));
        }
        Ok(())
    })?;

    for (path, bytes, meta) in &snapshots {
        writer.write(path, "snapshots", bytes)?;
        writer.write(&format!("{path}.json"), "snapshots", meta.as_bytes())?;
    }
    if want_traj {
        writer.write("trajectory.csv", "trajectory", traj.as_bytes())?;
    }
    if want_moments {
        writer.write("moments.csv", "moments", moments_csv.as_bytes())?;
    }
    if want_entropy {
        writer.write("particles_entropy_S.csv", "entropy", entropy_trace.to_csv().as_bytes())?;
    }
    let mut rel = BTreeMap::new();
    if wants(cfg, "trackers") {
        for t in &history.trackers {
            writer.write(&format!("tracker_{}.csv", t.name()), "trackers", t.to_csv().as_bytes())?;
        }
        if !history.betas.is_empty() {
            let mut s = String::from("t,beta\n");
            for (t, b) in &history.betas {
                s.push_str(&format!("{t:e},{b:e}\n"));
            }
            writer.write("beta.csv", "trackers", s.as_bytes())?;
        }
    }
    for t in &history.trackers {
        rel.insert(t.name().to_string(), t.max_rel_change());
    }
    let histogram = match hist_geom {
        Some(g) => {
            let h = deposit_histogram(&ens, g, deposit)?;
            if wants(cfg, "histogram") {
                writer.write_grid("particles_histogram", "histogram", &h)?;
            }
            Some(h)
        }
        None => None,
    };
    let summary = ParticleSummary {
        particles: ens.len(),
        steps: it.steps,
        final_time: ens.time(),
        flagged: history.flagged,
        rejected: history.rejected,
        tracker_max_rel_change: rel,
        moments: moments(&ens),
    };
    Ok((summary, histogram))
}

fn run_grid(
    scenario: &ResolvedScenario,
    shape: [usize; 3],
    writer: &mut ArtifactWriter,
) -> Result<(GridSummary, DensityGrid)> {
    let cfg = &scenario.config;
    let geom = scenario.geometry(shape)?;
    let model = scenario.fp_model()?;
    let mut solver = FokkerPlanck3::new(&model, geom.clone())?;
    let mut f = initial_grid(&cfg.init, &geom)?;
    let beta_est = match model.friction {
        FpFriction::Off => 0.0,
        FpFriction::Fixed(b) => b,
        FpFriction::EnergyConsistent => solver.energy_consistent_beta(&f.values)?.abs(),
    };
    let t_end = cfg.integrator.dt * cfg.integrator.steps as f64;
    let mut dt = solver.stable_dt(beta_est);
    if let Some(g) = cfg.integrator.grid_dt {
        dt = dt.min(g);
    }
    let steps = (t_end / dt).ceil().max(1.0) as u64;
    let dt = t_end / steps as f64;
    log::info!("grid run: {steps} steps of {dt:e} to t = {t_end}");

    let lambda = scenario.witness.as_ref().map(|w| w.lambda.clone());
    let mut traces = vec![EntropyTrace::new(EntropyKind::S)];
    if lambda.is_some() {
        traces.push(EntropyTrace::new(EntropyKind::SigmaLambda));
    }
    let record = |f: &DensityGrid, traces: &mut Vec<EntropyTrace>| -> Result<()> {
        for tr in traces.iter_mut() {
            let v = match (tr.kind, &lambda) {
                (EntropyKind::SigmaLambda, Some(l)) => {
                    let l = l.clone();
                    let lf = move |x: &[f64]| l(x);
                    entropy(f, tr.kind, &EntropyAux::Lambda(&lf))?
                }
                _ => entropy(f, tr.kind, &EntropyAux::None)?,
            };
            tr.times.push(f.time);
            tr.values.push(v.value);
        }
        Ok(())
    };
    let mass0 = f.mass();
    let every = (steps / GRID_ENTROPY_SAMPLES).max(1);
    record(&f, &mut traces)?;
    for s in 1..=steps {
        solver.step(&mut f, dt)?;
        if s % every == 0 || s == steps {
            record(&f, &mut traces)?;
        }
    }
    f.time = t_end;
    if wants(cfg, "entropy") {
        for tr in &traces {
            writer.write(
                &format!("grid_entropy_{}.csv", tr.kind.label()),
                "entropy",
                tr.to_csv().as_bytes(),
            )?;
        }
    }
    if wants(cfg, "grid") {
        writer.write_grid("grid_final", "grid", &f)?;
    }
    let summary = GridSummary {
        shape,
        dt,
        steps,
        final_time: t_end,
        clipped_mass: solver.clipped_mass(),
        mass_error: (f.mass() - mass0).abs(),
        max_rel_deviation_from_mean: f.max_rel_deviation_from_mean(),
        entropy_worst_decrease: traces
            .iter()
            .map(|t| (t.kind.label().to_string(), t.worst_decrease()))
            .collect(),
    };
    Ok((summary, f))
}
