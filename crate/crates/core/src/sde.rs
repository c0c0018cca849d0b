//! Particle ensembles driven by the perturbed conservative equations of motion
//!
//! ```text
//! dx^i = [J^{ij} − ½β M^{ik} M^{jk}] ∂_j H₀ dt + M^{ik} a_k ∘ dW_k,     M^{ik} = J^{ir} R^k_r
//! ```
//!
//! integrated in the Stratonovich sense. The stochastic Heun predictor-corrector is
//! the default scheme; an implicit midpoint scheme is available for long runs where
//! the per-step Casimir bias of Heun accumulates.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use smallvec::smallvec;

use crate::error::{HelidiffError, Result};
use crate::operator::{noise_matrix, CoordinateMap, Hamiltonian, MatBuf, OperatorField, PointBuf};
use crate::rng;
use crate::sampling::pairwise_sum;

/// Smallest denominator accepted when the friction constant is computed from the ensemble.
pub const MIN_BETA_DENOMINATOR: f64 = 1e-12;

const MIDPOINT_MAX_ITER: usize = 60;
const MIDPOINT_TOL: f64 = 1e-13;

/// White-noise forcing: per-axis amplitudes and the map `R` into the noise coordinates.
#[derive(Clone, Debug)]
pub struct NoiseSpec {
    amplitude: Vec<f64>,
    map: CoordinateMap,
}

impl NoiseSpec {
    /// `amplitude` holds one value per axis, or a single value used on every axis.
    pub fn new(amplitude: Vec<f64>, map: CoordinateMap) -> Result<Self> {
        let n = map.dim();
        if amplitude.len() != 1 && amplitude.len() != n {
            return Err(HelidiffError::Config(format!(
                "noise amplitude needs 1 or {n} entries, got {}",
                amplitude.len()
            )));
        }
        if amplitude.iter().any(|a| !a.is_finite() || *a < 0.0) {
            return Err(HelidiffError::Config(
                "noise amplitude must be finite and non-negative".into(),
            ));
        }
        let amplitude = if amplitude.len() == 1 {
            vec![amplitude[0]; n]
        } else {
            amplitude
        };
        Ok(NoiseSpec { amplitude, map })
    }

    pub fn isotropic(amplitude: f64, dim: usize) -> Result<Self> {
        NoiseSpec::new(vec![amplitude], CoordinateMap::identity(dim))
    }

    pub fn off(dim: usize) -> Self {
        NoiseSpec {
            amplitude: vec![0.0; dim],
            map: CoordinateMap::identity(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.map.dim()
    }

    pub fn amplitude(&self) -> &[f64] {
        &self.amplitude
    }

    pub fn map(&self) -> &CoordinateMap {
        &self.map
    }

    pub fn is_off(&self) -> bool {
        self.amplitude.iter().all(|a| *a == 0.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FrictionSpec {
    Off,
    Fixed(f64),
    /// `β` recomputed every step so that the ensemble mean of `H₀` is stationary.
    Adaptive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DomainSpec {
    #[serde(alias = "box")]
    PeriodicBox { center: Vec<f64>, side: f64 },
    Unbounded,
}

impl DomainSpec {
    pub fn cube(dim: usize, side: f64) -> Self {
        DomainSpec::PeriodicBox {
            center: vec![0.0; dim],
            side,
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if let DomainSpec::PeriodicBox { center, side } = self {
            if center.len() != dim {
                return Err(HelidiffError::Config(format!(
                    "box center has {} coordinates, operator dimension is {dim}",
                    center.len()
                )));
            }
            if !(*side > 0.0 && side.is_finite()) {
                return Err(HelidiffError::Config(format!("box side must be positive, got {side}")));
            }
        }
        Ok(())
    }

    /// Maps `x` into the box `[c − L/2, c + L/2)` on every axis.
    #[inline]
    pub fn wrap(&self, x: &mut [f64]) {
        if let DomainSpec::PeriodicBox { center, side } = self {
            for (v, c) in x.iter_mut().zip(center.iter()) {
                let lo = c - 0.5 * side;
                if *v < lo || *v >= lo + side {
                    let mut r = (*v - lo).rem_euclid(*side) + lo;
                    if r >= lo + side {
                        r = lo;
                    }
                    *v = r;
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StratonovichScheme {
    /// Predictor-corrector with coefficients averaged over `x` and the predicted point.
    #[default]
    Heun,
    /// `x' = x + F((x + x')/2) ΔW`, solved by fixed-point iteration.
    Midpoint,
}

/// Initial particle distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitSpec {
    /// Uniform over the periodic box.
    Flat,
    Gaussian { center: Vec<f64>, sigma: f64 },
    Point { center: Vec<f64> },
}

/// Everything that defines the equations of motion.
#[derive(Clone, Debug)]
pub struct SdeSystem {
    pub operator: OperatorField,
    pub hamiltonian: Option<Hamiltonian>,
    pub noise: NoiseSpec,
    pub friction: FrictionSpec,
    pub domain: DomainSpec,
    pub scheme: StratonovichScheme,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Outcome {
    Moved,
    Rejected,
    NonFinite,
}

impl SdeSystem {
    pub fn new(
        operator: OperatorField,
        hamiltonian: Option<Hamiltonian>,
        noise: NoiseSpec,
        friction: FrictionSpec,
        domain: DomainSpec,
    ) -> Result<Self> {
        let n = operator.dim();
        if noise.dim() != n {
            return Err(HelidiffError::Config(format!(
                "noise dimension {} does not match operator dimension {n}",
                noise.dim()
            )));
        }
        domain.validate(n)?;
        if friction != FrictionSpec::Off && hamiltonian.is_none() {
            return Err(HelidiffError::Config(
                "friction needs a Hamiltonian to act on".into(),
            ));
        }
        if let FrictionSpec::Fixed(b) = friction {
            if !b.is_finite() {
                return Err(HelidiffError::Config("friction beta must be finite".into()));
            }
        }
        Ok(SdeSystem {
            operator,
            hamiltonian,
            noise,
            friction,
            domain,
            scheme: StratonovichScheme::Heun,
        })
    }

    pub fn with_scheme(mut self, scheme: StratonovichScheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn dim(&self) -> usize {
        self.operator.dim()
    }

    /// Drift velocity `J∇H₀ − ½β MMᵀ∇H₀`.
    pub fn drift(&self, x: &[f64], beta: f64) -> PointBuf {
        let n = self.dim();
        let mut out: PointBuf = smallvec![0.0; n];
        self.increment(x, beta, 1.0, &vec![0.0; n], &mut out);
        out
    }

    /// `out = drift(x)·dt + M(x)(a ⊙ dw)`.
    fn increment(&self, x: &[f64], beta: f64, dt: f64, dw: &[f64], out: &mut [f64]) {
        let n = self.dim();
        let j = self.operator.eval(x);
        let noisy = !self.noise.is_off();
        let m: MatBuf = if noisy || beta != 0.0 {
            noise_matrix(&j, &self.noise.map, x)
        } else {
            MatBuf::new()
        };
        out.iter_mut().for_each(|v| *v = 0.0);
        if let Some(h) = &self.hamiltonian {
            let mut g: PointBuf = smallvec![0.0; n];
            h.grad_into(x, &mut g);
            j.apply_into(&g, out);
            for v in out.iter_mut() {
                *v *= dt;
            }
            if beta != 0.0 {
                let mut mtg: PointBuf = smallvec![0.0; n];
                for (k, t) in mtg.iter_mut().enumerate() {
                    *t = (0..n).map(|i| m[i * n + k] * g[i]).sum();
                }
                for (i, o) in out.iter_mut().enumerate() {
                    let s: f64 = (0..n).map(|k| m[i * n + k] * mtg[k]).sum();
                    *o -= 0.5 * beta * s * dt;
                }
            }
        }
        if noisy {
            let a = &self.noise.amplitude;
            for (i, o) in out.iter_mut().enumerate() {
                *o += (0..n).map(|k| m[i * n + k] * a[k] * dw[k]).sum::<f64>();
            }
        }
    }

    fn advance(&self, x: &mut [f64], beta: f64, dt: f64, dw: &[f64]) -> Outcome {
        let n = self.dim();
        let mut k1: PointBuf = smallvec![0.0; n];
        self.increment(x, beta, dt, dw, &mut k1);
        let mut pred: PointBuf = x.iter().zip(&k1).map(|(a, b)| a + b).collect();
        self.domain.wrap(&mut pred);
        if !pred.iter().all(|v| v.is_finite()) {
            return Outcome::NonFinite;
        }
        if !self.operator.in_domain(&pred) {
            return Outcome::Rejected;
        }
        let mut k2: PointBuf = smallvec![0.0; n];
        self.increment(&pred, beta, dt, dw, &mut k2);
        let mut next: PointBuf = (0..n).map(|i| x[i] + 0.5 * (k1[i] + k2[i])).collect();

        if self.scheme == StratonovichScheme::Midpoint {
            let mut converged = false;
            let mut mid: PointBuf = smallvec![0.0; n];
            let mut k: PointBuf = smallvec![0.0; n];
            for _ in 0..MIDPOINT_MAX_ITER {
                for i in 0..n {
                    mid[i] = 0.5 * (x[i] + next[i]);
                }
                self.domain.wrap(&mut mid);
                if !self.operator.in_domain(&mid) {
                    return Outcome::Rejected;
                }
                self.increment(&mid, beta, dt, dw, &mut k);
                let mut change = 0.0_f64;
                let mut scale = 1.0_f64;
                for i in 0..n {
                    let v = x[i] + k[i];
                    change = change.max((v - next[i]).abs());
                    scale = scale.max(v.abs());
                    next[i] = v;
                }
                if !change.is_finite() {
                    return Outcome::NonFinite;
                }
                if change <= MIDPOINT_TOL * scale {
                    converged = true;
                    break;
                }
            }
            if !converged {
                return Outcome::NonFinite;
            }
        }

        self.domain.wrap(&mut next);
        if !next.iter().all(|v| v.is_finite()) {
            return Outcome::NonFinite;
        }
        if !self.operator.in_domain(&next) {
            return Outcome::Rejected;
        }
        x.copy_from_slice(&next);
        Outcome::Moved
    }

    /// Friction constant for the current state: fixed, zero, or the ensemble estimate
    /// that makes `d⟨H₀⟩/dt = 0`.
    pub fn resolve_beta(&self, ens: &Ensemble) -> Result<f64> {
        match self.friction {
            FrictionSpec::Off => Ok(0.0),
            FrictionSpec::Fixed(b) => Ok(b),
            FrictionSpec::Adaptive => self.adaptive_beta(ens),
        }
    }

    /// `β = ⟨M̃^{ik}∂_i(M̃^{jk}∂_jH₀)⟩ / ⟨|Mᵀ∇H₀|²⟩` over the live particles, where `M̃`
    /// carries the noise amplitudes. The numerator is the generator of the
    /// Stratonovich noise applied to `H₀`, the denominator the friction dissipation.
    pub fn adaptive_beta(&self, ens: &Ensemble) -> Result<f64> {
        let h = self
            .hamiltonian
            .as_ref()
            .ok_or_else(|| HelidiffError::Config("adaptive friction needs a Hamiltonian".into()))?;
        let n = self.dim();
        let step = self.operator.fd_step();
        let amp = self.noise.amplitude.clone();
        let terms: Vec<(f64, f64)> = ens
            .positions
            .par_chunks(n)
            .zip(ens.flagged.par_iter())
            .filter(|(_, f)| !**f)
            .map(|(x, _)| {
                let column_dot_grad = |p: &[f64], k: usize, scaled: bool| -> f64 {
                    let j = self.operator.eval(p);
                    let m = noise_matrix(&j, &self.noise.map, p);
                    let g = h.grad(p);
                    let a = if scaled { amp[k] } else { 1.0 };
                    (0..n).map(|i| m[i * n + k] * a * g[i]).sum()
                };
                let j = self.operator.eval(x);
                let m = noise_matrix(&j, &self.noise.map, x);
                let mut num = 0.0;
                let mut den = 0.0;
                let mut xp: PointBuf = smallvec![0.0; n];
                let mut xm: PointBuf = smallvec![0.0; n];
                for k in 0..n {
                    let v = column_dot_grad(x, k, false);
                    den += v * v;
                    if amp[k] == 0.0 {
                        continue;
                    }
                    for i in 0..n {
                        let c = m[i * n + k] * amp[k];
                        xp[i] = x[i] + step * c;
                        xm[i] = x[i] - step * c;
                    }
                    num += (column_dot_grad(&xp, k, true) - column_dot_grad(&xm, k, true))
                        / (2.0 * step);
                }
                (num, den)
            })
            .collect();
        let nums: Vec<f64> = terms.iter().map(|t| t.0).collect();
        let dens: Vec<f64> = terms.iter().map(|t| t.1).collect();
        let count = terms.len().max(1) as f64;
        let den = pairwise_sum(&dens) / count;
        if den < MIN_BETA_DENOMINATOR {
            return Err(HelidiffError::UndefinedBeta { denominator: den });
        }
        Ok(pairwise_sum(&nums) / count / den)
    }
}

/// Particle positions plus the bookkeeping needed to reproduce them.
#[derive(Clone, Debug, PartialEq)]
pub struct Ensemble {
    dim: usize,
    positions: Vec<f64>,
    flagged: Vec<bool>,
    seed: u64,
    step: u64,
    time: f64,
    rejected: u64,
}

impl Ensemble {
    /// `positions` is row-major, `N × dim`.
    pub fn new(dim: usize, positions: Vec<f64>, seed: u64) -> Result<Self> {
        if dim == 0 || positions.is_empty() || !positions.len().is_multiple_of(dim) {
            return Err(HelidiffError::Contract(format!(
                "ensemble needs N ≥ 1 rows of {dim} coordinates, got {} values",
                positions.len()
            )));
        }
        if positions.iter().any(|v| !v.is_finite()) {
            return Err(HelidiffError::Contract("initial positions must be finite".into()));
        }
        let n = positions.len() / dim;
        Ok(Ensemble {
            dim,
            positions,
            flagged: vec![false; n],
            seed,
            step: 0,
            time: 0.0,
            rejected: 0,
        })
    }

    /// Draws `n_particles` initial positions. Points outside the operator domain are redrawn.
    pub fn sample(
        init: &InitSpec,
        domain: &DomainSpec,
        operator: &OperatorField,
        n_particles: usize,
        seed: u64,
    ) -> Result<Self> {
        let dim = operator.dim();
        if n_particles == 0 {
            return Err(HelidiffError::Config("particle count must be at least 1".into()));
        }
        match init {
            InitSpec::Flat => {
                if !matches!(domain, DomainSpec::PeriodicBox { .. }) {
                    return Err(HelidiffError::Config(
                        "flat initial condition needs a periodic box".into(),
                    ));
                }
            }
            InitSpec::Gaussian { center, sigma } => {
                if center.len() != dim || !(*sigma >= 0.0) {
                    return Err(HelidiffError::Config(format!(
                        "gaussian init needs a {dim}-component center and sigma ≥ 0"
                    )));
                }
            }
            InitSpec::Point { center } => {
                if center.len() != dim {
                    return Err(HelidiffError::Config(format!(
                        "point init needs a {dim}-component center"
                    )));
                }
            }
        }
        let mut positions = vec![0.0; n_particles * dim];
        positions
            .par_chunks_mut(dim)
            .enumerate()
            .try_for_each(|(pid, x)| -> Result<()> {
                let mut r = rng::init_rng(seed, pid as u64);
                for _attempt in 0..1000 {
                    match init {
                        InitSpec::Flat => {
                            if let DomainSpec::PeriodicBox { center, side } = domain {
                                for (k, v) in x.iter_mut().enumerate() {
                                    *v = center[k] + side * (rng::uniform(&mut r) - 0.5);
                                }
                            }
                        }
                        InitSpec::Gaussian { center, sigma } => {
                            rng::fill_normals(&mut r, x);
                            for (k, v) in x.iter_mut().enumerate() {
                                *v = center[k] + sigma * *v;
                            }
                        }
                        InitSpec::Point { center } => x.copy_from_slice(center),
                    }
                    domain.wrap(x);
                    if operator.in_domain(x) {
                        return Ok(());
                    }
                }
                Err(HelidiffError::Config(format!(
                    "could not place particle {pid} inside the domain of '{}'",
                    operator.name()
                )))
            })?;
        Ensemble::new(dim, positions, seed)
    }

    pub fn len(&self) -> usize {
        self.flagged.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flagged.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn particle(&self, i: usize) -> &[f64] {
        &self.positions[i * self.dim..(i + 1) * self.dim]
    }

    pub fn flagged(&self) -> &[bool] {
        &self.flagged
    }

    pub fn flagged_count(&self) -> usize {
        self.flagged.iter().filter(|f| **f).count()
    }

    /// Steps refused because the update left the operator domain.
    pub fn rejected_count(&self) -> u64 {
        self.rejected
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn step_index(&self) -> u64 {
        self.step
    }

    pub fn time(&self) -> f64 {
        self.time
    }
}

/// Advances every live particle by one step. Non-finite updates flag and freeze the
/// particle; updates that leave the operator domain are refused for that step.
pub fn step_stratonovich(ens: &mut Ensemble, sys: &SdeSystem, beta: f64, dt: f64) -> Result<()> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(HelidiffError::Config(format!("time step must be positive, got {dt}")));
    }
    if ens.dim != sys.dim() {
        return Err(HelidiffError::Contract(format!(
            "ensemble dimension {} does not match system dimension {}",
            ens.dim,
            sys.dim()
        )));
    }
    let n = ens.dim;
    let seed = ens.seed;
    let step = ens.step;
    let sqrt_dt = dt.sqrt();
    let noisy = !sys.noise.is_off();
    let rejected: u64 = ens
        .positions
        .par_chunks_mut(n)
        .zip(ens.flagged.par_iter_mut())
        .enumerate()
        .map(|(pid, (x, flag))| {
            if *flag {
                return 0;
            }
            let mut dw: PointBuf = smallvec![0.0; n];
            if noisy {
                rng::fill_normals(&mut rng::step_rng(seed, pid as u64, step), &mut dw);
                for v in dw.iter_mut() {
                    *v *= sqrt_dt;
                }
            }
            match sys.advance(x, beta, dt, &dw) {
                Outcome::Moved => 0,
                Outcome::Rejected => 1,
                Outcome::NonFinite => {
                    *flag = true;
                    0
                }
            }
        })
        .sum();
    ens.rejected += rejected;
    ens.step += 1;
    ens.time = ens.step as f64 * dt;
    Ok(())
}

type ScalarFn = dyn Fn(&[f64]) -> f64 + Send + Sync;

/// Summary of one tracked scalar over the live particles at one time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackerPoint {
    pub t: f64,
    pub mean: f64,
    pub var: f64,
    pub min: f64,
    pub max: f64,
    /// `max_p |q_p(t) − q_p(0)| / |q_p(0)|`.
    pub max_rel_change: f64,
}

/// Per-particle scalar (energy, Casimir) sampled every few steps.
#[derive(Clone)]
pub struct Tracker {
    name: String,
    f: Arc<ScalarFn>,
    initial: Vec<f64>,
    points: Vec<TrackerPoint>,
}

impl fmt::Debug for Tracker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tracker")
            .field("name", &self.name)
            .field("points", &self.points.len())
            .finish()
    }
}

impl Tracker {
    pub fn new<F>(name: impl Into<String>, f: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        Tracker {
            name: name.into(),
            f: Arc::new(f),
            initial: Vec::new(),
            points: Vec::new(),
        }
    }

    pub fn from_arc(name: impl Into<String>, f: Arc<ScalarFn>) -> Self {
        Tracker {
            name: name.into(),
            f,
            initial: Vec::new(),
            points: Vec::new(),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn points(&self) -> &[TrackerPoint] {
        &self.points
    }

    /// Largest relative change seen at any recorded time.
    pub fn max_rel_change(&self) -> f64 {
        self.points.iter().map(|p| p.max_rel_change).fold(0.0, f64::max)
    }

    pub fn record(&mut self, ens: &Ensemble) {
        let n = ens.dim;
        let values: Vec<f64> = ens.positions.par_chunks(n).map(|x| (self.f)(x)).collect();
        if self.initial.is_empty() {
            self.initial = values.clone();
        }
        let live: Vec<usize> = (0..values.len()).filter(|i| !ens.flagged[*i]).collect();
        let lv: Vec<f64> = live.iter().map(|i| values[*i]).collect();
        let count = lv.len().max(1) as f64;
        let mean = pairwise_sum(&lv) / count;
        let dev: Vec<f64> = lv.iter().map(|v| (v - mean) * (v - mean)).collect();
        let rel = live
            .iter()
            .map(|i| {
                let q0 = self.initial[*i];
                let d = (values[*i] - q0).abs();
                if q0 != 0.0 {
                    d / q0.abs()
                } else {
                    d
                }
            })
            .fold(0.0, f64::max);
        self.points.push(TrackerPoint {
            t: ens.time,
            mean,
            var: pairwise_sum(&dev) / count,
            min: lv.iter().cloned().fold(f64::INFINITY, f64::min),
            max: lv.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            max_rel_change: rel,
        });
    }

    /// CSV with header `t,mean,var,min,max,max_rel_change`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,mean,var,min,max,max_rel_change\n");
        for p in &self.points {
            s.push_str(&format!(
                "{:e},{:e},{:e},{:e},{:e},{:e}\n",
                p.t, p.mean, p.var, p.min, p.max, p.max_rel_change
            ));
        }
        s
    }
}

/// Time-stepping schedule.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunPlan {
    pub dt: f64,
    pub steps: u64,
    /// Zero disables intermediate snapshots; the final state is always reported.
    pub snapshot_every: u64,
    pub tracker_every: u64,
}

#[derive(Debug)]
pub struct EnsembleHistory {
    pub trackers: Vec<Tracker>,
    /// `β` used at every tracker sample, when friction is on.
    pub betas: Vec<(f64, f64)>,
    pub snapshot_steps: Vec<u64>,
    pub flagged: usize,
    pub rejected: u64,
}

/// Runs `plan.steps` steps, recording trackers and handing snapshots to `on_snapshot`
/// (at step 0, every `snapshot_every` steps, and at the end).
pub fn run_ensemble<F>(
    ens: &mut Ensemble,
    sys: &SdeSystem,
    plan: &RunPlan,
    mut trackers: Vec<Tracker>,
    mut on_snapshot: F,
) -> Result<EnsembleHistory>
where
    F: FnMut(&Ensemble) -> Result<()>,
{
    if !(plan.dt > 0.0) || plan.steps == 0 {
        return Err(HelidiffError::Config("dt and steps must be positive".into()));
    }
    let tracker_every = plan.tracker_every.max(1);
    let mut betas = Vec::new();
    let mut snapshot_steps = vec![ens.step];
    on_snapshot(ens)?;
    for t in trackers.iter_mut() {
        t.record(ens);
    }
    for s in 1..=plan.steps {
        let beta = sys.resolve_beta(ens)?;
        step_stratonovich(ens, sys, beta, plan.dt)?;
        if s % tracker_every == 0 || s == plan.steps {
            for t in trackers.iter_mut() {
                t.record(ens);
            }
            if sys.friction != FrictionSpec::Off {
                betas.push((ens.time, beta));
            }
        }
        let snap = plan.snapshot_every > 0 && s % plan.snapshot_every == 0;
        if snap || s == plan.steps {
            snapshot_steps.push(ens.step);
            on_snapshot(ens)?;
        }
    }
    let flagged = ens.flagged_count();
    if flagged > 0 {
        log::warn!("{flagged} particles produced non-finite states and were frozen");
    }
    Ok(EnsembleHistory {
        trackers,
        betas,
        snapshot_steps,
        flagged,
        rejected: ens.rejected,
    })
}
