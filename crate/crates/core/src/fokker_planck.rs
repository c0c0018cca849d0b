//! Fokker-Planck evolution of a density on a periodic 3D grid.
//!
//! The equation is kept in flux form, `∂f/∂t = ∂_i G^i` with
//!
//! ```text
//! G^i = −(J∇H₀)^i f + β u₁^i f + ½ M̃^{ik} ∂_j(M̃^{jk} f),    u₁ = ½ M Mᵀ ∇H₀,
//! ```
//!
//! `M = J Rᵀ` and `M̃ = M diag(a)` carrying the noise amplitudes. The last term is
//! split as `b̃^i f + D^{ij} ∂_j f` with `D = ½ M̃ M̃ᵀ` and `b̃^i = ½ M̃^{ik} ∂_j M̃^{jk}`, both
//! evaluated analytically at cell faces, so only `f` and its gradient are
//! discretized. Face fluxes make mass conservation exact up to round-off.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use smallvec::smallvec;

use crate::classify::{field_charge_3d, field_force};
use crate::error::{HelidiffError, Result};
use crate::grid::{DensityGrid, GridGeometry};
use crate::operator::{
    noise_matrix, Hamiltonian, MatBuf, OperatorField, PointBuf, VectorField3,
};
use crate::sampling::pairwise_sum;
use crate::sde::NoiseSpec;

/// Clipped negative mass tolerated over a whole run before it is declared under-resolved.
pub const CLIP_BUDGET: f64 = 1e-6;
/// Denominator below which `compute_beta` reports an undefined friction constant.
pub const MIN_BETA_DENOMINATOR: f64 = 1e-12;

const POWER_ITERATIONS: usize = 40;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FpFriction {
    Off,
    Fixed(f64),
    /// `β` chosen at every stage so the discrete energy `Σ f H₀ ΔV` is stationary.
    EnergyConsistent,
}

/// Continuous problem: operator, energy, noise and friction.
#[derive(Clone, Debug)]
pub struct FpModel {
    pub operator: OperatorField,
    pub hamiltonian: Option<Hamiltonian>,
    pub noise: NoiseSpec,
    pub friction: FpFriction,
}

impl FpModel {
    /// Pure diffusion `∂f/∂t = ½∂_i[J^{ik} ∂_j(J^{jk} f)]` with unit noise.
    pub fn diffusion(operator: OperatorField) -> Result<Self> {
        let n = operator.dim();
        FpModel::new(
            operator,
            None,
            NoiseSpec::isotropic(1.0, n)?,
            FpFriction::Off,
        )
    }

    pub fn new(
        operator: OperatorField,
        hamiltonian: Option<Hamiltonian>,
        noise: NoiseSpec,
        friction: FpFriction,
    ) -> Result<Self> {
        if operator.dim() != 3 {
            return Err(HelidiffError::Config(format!(
                "the grid solver is three-dimensional; '{}' has dimension {}",
                operator.name(),
                operator.dim()
            )));
        }
        if noise.dim() != 3 {
            return Err(HelidiffError::Config("noise must be three-dimensional".into()));
        }
        if friction != FpFriction::Off && hamiltonian.is_none() {
            return Err(HelidiffError::Config("friction needs a Hamiltonian".into()));
        }
        Ok(FpModel {
            operator,
            hamiltonian,
            noise,
            friction,
        })
    }
}

/// `Σ_j ∂_j M^{jk}` for `M = J Rᵀ`.
fn noise_divergence(model: &FpModel, x: &[f64]) -> PointBuf {
    let n = model.operator.dim();
    let d = model.operator.divergence(x);
    let map = model.noise.map();
    if map.is_identity() {
        return d;
    }
    let r = map.jacobian(x);
    let mut out: PointBuf = smallvec![0.0; n];
    for (k, o) in out.iter_mut().enumerate() {
        *o = (0..n).map(|q| d[q] * r[k * n + q]).sum();
    }
    // J^{jr} ∂_j R^k_r
    let j = model.operator.eval(x);
    let h = model.operator.fd_step();
    let mut xp: PointBuf = PointBuf::from_slice(x);
    for jj in 0..n {
        let x0 = xp[jj];
        xp[jj] = x0 + h;
        let rp = map.jacobian(&xp);
        xp[jj] = x0 - h;
        let rm = map.jacobian(&xp);
        xp[jj] = x0;
        for (k, o) in out.iter_mut().enumerate() {
            for q in 0..n {
                *o += j.get(jj, q) * (rp[k * n + q] - rm[k * n + q]) / (2.0 * h);
            }
        }
    }
    out
}

/// Coefficients of the flux through the `+axis` face of every cell.
#[derive(Clone, Debug, Default)]
struct FaceCoeffs {
    /// `−(J∇H₀)^d + b̃^d`, the β-independent advection velocity.
    u0: Vec<f64>,
    /// `u₁^d = ½(MMᵀ∇H₀)^d`; the friction flux is `β u₁ f`.
    u1: Vec<f64>,
    /// `D^{dj}` for `j = 0, 1, 2`.
    diff: [Vec<f64>; 3],
}

/// Grid discretization of an [`FpModel`].
pub struct FokkerPlanck3 {
    geometry: GridGeometry,
    faces: [FaceCoeffs; 3],
    /// `neighbors[axis][0|1][cell]`: periodic neighbor at offset −1 / +1.
    neighbors: [[Vec<u32>; 2]; 3],
    friction: FpFriction,
    has_friction_term: bool,
    energy: Option<Vec<f64>>,
    clipped: f64,
    clip_budget: f64,
    cached_beta: f64,
}

impl fmt::Debug for FokkerPlanck3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FokkerPlanck3")
            .field("geometry", &self.geometry)
            .field("friction", &self.friction)
            .finish()
    }
}

/// Bookkeeping returned by [`FokkerPlanck3::step`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    pub beta: f64,
    pub clipped: f64,
}

impl FokkerPlanck3 {
    pub fn new(model: &FpModel, geometry: GridGeometry) -> Result<Self> {
        let n_cells = geometry.len();
        let amp = model.noise.amplitude().to_vec();
        let mut faces: [FaceCoeffs; 3] = Default::default();
        for (axis, face) in faces.iter_mut().enumerate() {
            let rows: Vec<[f64; 5]> = (0..n_cells)
                .into_par_iter()
                .map(|idx| {
                    let x = geometry.face_center(geometry.unravel(idx), axis);
                    face_row(model, &amp, &x, axis)
                })
                .collect();
            face.u0 = rows.iter().map(|r| r[0]).collect();
            face.u1 = rows.iter().map(|r| r[1]).collect();
            for j in 0..3 {
                face.diff[j] = rows.iter().map(|r| r[2 + j]).collect();
            }
        }
        let all_finite = faces.iter().all(|f| {
            f.u0.iter()
                .chain(&f.u1)
                .chain(f.diff.iter().flatten())
                .all(|v| v.is_finite())
        });
        if !all_finite {
            return Err(HelidiffError::Numerical(format!(
                "non-finite coefficients for '{}' on the grid",
                model.operator.name()
            )));
        }
        let energy = model.hamiltonian.as_ref().map(|h| {
            (0..n_cells)
                .into_par_iter()
                .map(|idx| h.eval(&geometry.cell_center(geometry.unravel(idx))))
                .collect()
        });
        if n_cells > u32::MAX as usize {
            return Err(HelidiffError::Config(format!("grid of {n_cells} cells is too large")));
        }
        let neighbors: [[Vec<u32>; 2]; 3] = std::array::from_fn(|a| {
            [-1isize, 1].map(|off| {
                (0..n_cells)
                    .map(|idx| geometry.shift(geometry.unravel(idx), a, off) as u32)
                    .collect()
            })
        });
        Ok(FokkerPlanck3 {
            geometry,
            faces,
            neighbors,
            friction: model.friction,
            has_friction_term: model.hamiltonian.is_some(),
            energy,
            clipped: 0.0,
            clip_budget: CLIP_BUDGET,
            cached_beta: 0.0,
        })
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn with_clip_budget(mut self, budget: f64) -> Self {
        self.clip_budget = budget;
        self
    }

    /// Negative mass removed so far.
    pub fn clipped_mass(&self) -> f64 {
        self.clipped
    }

    /// `H₀` at cell centers, when the model has an energy.
    pub fn energy_field(&self) -> Option<&[f64]> {
        self.energy.as_deref()
    }

    pub fn energy(&self, f: &DensityGrid) -> Option<f64> {
        self.energy.as_ref().map(|e| f.integrate(e))
    }

    /// Flux of one part of the operator through every `+axis` face.
    fn flux(&self, f: &[f64], axis: usize, part: Part) -> Vec<f64> {
        let g = &self.geometry;
        let face = &self.faces[axis];
        let h = [g.spacing(0), g.spacing(1), g.spacing(2)];
        let nb = &self.neighbors;
        (0..g.len())
            .into_par_iter()
            .map(|idx| {
                let up = nb[axis][1][idx] as usize;
                let f_face = 0.5 * (f[idx] + f[up]);
                match part {
                    Part::Friction => face.u1[idx] * f_face,
                    Part::Main => {
                        let mut flux = face.u0[idx] * f_face;
                        for j in 0..3 {
                            let dj = face.diff[j][idx];
                            if dj == 0.0 {
                                continue;
                            }
                            let grad = if j == axis {
                                (f[up] - f[idx]) / h[j]
                            } else {
                                let (p, m) = (&nb[j][1], &nb[j][0]);
                                let here = f[p[idx] as usize] - f[m[idx] as usize];
                                let there = f[p[up] as usize] - f[m[up] as usize];
                                0.25 * (here + there) / h[j]
                            };
                            flux += dj * grad;
                        }
                        flux
                    }
                }
            })
            .collect()
    }

    fn divergence_of_part(&self, f: &[f64], part: Part) -> Vec<f64> {
        let g = &self.geometry;
        let fluxes: Vec<Vec<f64>> = (0..3).map(|a| self.flux(f, a, part)).collect();
        let inv_h = [1.0 / g.spacing(0), 1.0 / g.spacing(1), 1.0 / g.spacing(2)];
        let nb = &self.neighbors;
        (0..g.len())
            .into_par_iter()
            .map(|idx| {
                let mut s = 0.0;
                for (a, fl) in fluxes.iter().enumerate() {
                    s += (fl[idx] - fl[nb[a][0][idx] as usize]) * inv_h[a];
                }
                s
            })
            .collect()
    }

    /// `∂f/∂t` at the given friction constant.
    pub fn rhs(&self, f: &DensityGrid, beta: f64) -> Vec<f64> {
        self.rhs_values(&f.values, beta)
    }

    fn rhs_values(&self, f: &[f64], beta: f64) -> Vec<f64> {
        let mut out = self.divergence_of_part(f, Part::Main);
        if beta != 0.0 && self.has_friction_term {
            let fr = self.divergence_of_part(f, Part::Friction);
            out.par_iter_mut().zip(fr.par_iter()).for_each(|(o, v)| *o += beta * v);
        }
        out
    }

    /// `β` making `d/dt Σ f H₀ ΔV = 0` for the discrete right-hand side at `f`.
    pub fn energy_consistent_beta(&self, f: &[f64]) -> Result<f64> {
        let e = self
            .energy
            .as_ref()
            .ok_or_else(|| HelidiffError::Config("energy-consistent β needs a Hamiltonian".into()))?;
        let l0 = self.divergence_of_part(f, Part::Main);
        let l1 = self.divergence_of_part(f, Part::Friction);
        let a: Vec<f64> = l0.iter().zip(e).map(|(x, y)| x * y).collect();
        let b: Vec<f64> = l1.iter().zip(e).map(|(x, y)| x * y).collect();
        let (a, b) = (pairwise_sum(&a), pairwise_sum(&b));
        let dv = self.geometry.cell_volume();
        if (b * dv).abs() < MIN_BETA_DENOMINATOR {
            return Err(HelidiffError::UndefinedBeta {
                denominator: (b * dv).abs(),
            });
        }
        Ok(-a / b)
    }

    fn beta_for(&self, f: &[f64]) -> Result<f64> {
        match self.friction {
            FpFriction::Off => Ok(0.0),
            FpFriction::Fixed(b) => Ok(b),
            FpFriction::EnergyConsistent => self.energy_consistent_beta(f),
        }
    }

    /// `β` used by the most recent step.
    pub fn last_beta(&self) -> f64 {
        self.cached_beta
    }

    /// One SSP-RK2 step: `f₁ = f + dt L f`, `f ← ½f + ½(f₁ + dt L f₁)`, then
    /// negative values are clipped and the mass restored.
    pub fn step(&mut self, f: &mut DensityGrid, dt: f64) -> Result<StepReport> {
        if f.geometry != self.geometry {
            return Err(HelidiffError::Contract("density grid does not match solver grid".into()));
        }
        let beta0 = self.beta_for(&f.values)?;
        let k1 = self.rhs_values(&f.values, beta0);
        let f1: Vec<f64> = f.values.iter().zip(&k1).map(|(a, b)| a + dt * b).collect();
        let beta1 = self.beta_for(&f1)?;
        let k2 = self.rhs_values(&f1, beta1);
        let mass_before = pairwise_sum(&f.values);
        f.values
            .par_iter_mut()
            .zip(f1.par_iter().zip(k2.par_iter()))
            .for_each(|(v, (a, b))| *v = 0.5 * *v + 0.5 * (a + dt * b));
        f.time += dt;
        if f.values.iter().any(|v| !v.is_finite()) {
            return Err(HelidiffError::Numerical(format!(
                "density became non-finite at t = {}",
                f.time
            )));
        }
        let negative: Vec<f64> = f.values.iter().map(|v| v.min(0.0)).collect();
        let clipped = -pairwise_sum(&negative) * self.geometry.cell_volume();
        if clipped > 0.0 {
            f.values.iter_mut().for_each(|v| *v = v.max(0.0));
            let after = pairwise_sum(&f.values);
            if after > 0.0 {
                let s = mass_before / after;
                f.values.iter_mut().for_each(|v| *v *= s);
            }
            self.clipped += clipped;
            log::debug!("clipped {clipped:e} negative mass at t = {}", f.time);
            if self.clipped > self.clip_budget {
                return Err(HelidiffError::Resolution {
                    clipped: self.clipped,
                    budget: self.clip_budget,
                });
            }
        }
        self.cached_beta = 0.5 * (beta0 + beta1);
        Ok(StepReport {
            beta: self.cached_beta,
            clipped,
        })
    }

    /// `Σ |∂f/∂t| ΔV`.
    pub fn stationary_residual(&self, f: &DensityGrid, beta: f64) -> f64 {
        let r: Vec<f64> = self.rhs(f, beta).iter().map(|v| v.abs()).collect();
        pairwise_sum(&r) * self.geometry.cell_volume()
    }

    /// `0.2 Δx² / max D` capped by an advective CFL limit.
    pub fn heuristic_dt(&self, beta: f64) -> f64 {
        let g = &self.geometry;
        let hmin = (0..3).map(|a| g.spacing(a)).fold(f64::INFINITY, f64::min);
        let mut dmax = 0.0_f64;
        let mut umax = 0.0_f64;
        for (a, face) in self.faces.iter().enumerate() {
            dmax = dmax.max(face.diff[a].iter().cloned().fold(0.0, f64::max));
            for (u0, u1) in face.u0.iter().zip(&face.u1) {
                umax = umax.max((u0 + beta * u1).abs());
            }
        }
        let mut dt = f64::INFINITY;
        if dmax > 0.0 {
            dt = dt.min(0.2 * hmin * hmin / dmax);
        }
        if umax > 0.0 {
            dt = dt.min(0.5 * hmin / umax);
        }
        if dt.is_finite() {
            dt
        } else {
            1.0
        }
    }

    /// Power-iteration estimate of the largest `|λ|` of the linear right-hand side.
    pub fn spectral_bound(&self, beta: f64) -> f64 {
        let g = &self.geometry;
        let mut v: Vec<f64> = (0..g.len())
            .map(|idx| {
                let [i, j, k] = g.unravel(idx);
                (((i * 7 + j * 13 + k * 29) % 17) as f64) - 8.0
            })
            .collect();
        let norm = |x: &[f64]| pairwise_sum(&x.iter().map(|a| a * a).collect::<Vec<_>>()).sqrt();
        let mut rho = 0.0;
        for _ in 0..POWER_ITERATIONS {
            let nv = norm(&v);
            if nv == 0.0 {
                return 0.0;
            }
            v.iter_mut().for_each(|a| *a /= nv);
            let w = self.rhs_values(&v, beta);
            rho = norm(&w);
            v = w;
        }
        rho
    }

    /// Heuristic step, reduced if `dt·ρ` exceeds the RK2 stability limit of 2.
    pub fn stable_dt(&self, beta: f64) -> f64 {
        let dt = self.heuristic_dt(beta);
        let rho = self.spectral_bound(beta);
        if dt * rho > 2.0 {
            log::info!("time step {dt:e} reduced: spectral bound {rho:e}");
            1.8 / rho
        } else {
            dt
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Part {
    Main,
    Friction,
}

/// `[u₀, u₁, D^{d0}, D^{d1}, D^{d2}]` at a point for face normal `d`.
fn face_row(model: &FpModel, amp: &[f64], x: &[f64; 3], d: usize) -> [f64; 5] {
    let j = model.operator.eval(x);
    let m: MatBuf = noise_matrix(&j, model.noise.map(), x);
    let divm = noise_divergence(model, x);
    let mut row = [0.0; 5];
    let mut b = 0.0;
    for k in 0..3 {
        b += 0.5 * amp[k] * amp[k] * m[d * 3 + k] * divm[k];
    }
    for jj in 0..3 {
        row[2 + jj] = (0..3)
            .map(|k| 0.5 * amp[k] * amp[k] * m[d * 3 + k] * m[jj * 3 + k])
            .sum();
    }
    row[0] = b;
    if let Some(h) = &model.hamiltonian {
        let g = h.grad(x);
        let u0: f64 = (0..3).map(|q| j.get(d, q) * g[q]).sum();
        row[0] -= u0;
        let mtg: [f64; 3] = std::array::from_fn(|k| (0..3).map(|i| m[i * 3 + k] * g[i]).sum());
        row[1] = 0.5 * (0..3).map(|k| m[d * 3 + k] * mtg[k]).sum::<f64>();
    }
    row
}

/// Expanded form `½(Δ⊥f + ∇f·b + ¼f𝔅)` of pure operator diffusion with
/// `Δ⊥f = ∂_i(J^{ik}J^{jk}∂_j f)`, all derivatives of `f` by centered differences.
/// Independent of the flux discretization; used to cross-check it.
pub fn expanded_diffusion_rhs(f: &DensityGrid, w: &VectorField3) -> Vec<f64> {
    let g = &f.geometry;
    let h = [g.spacing(0), g.spacing(1), g.spacing(2)];
    let vals = &f.values;
    let grad = |c: [usize; 3]| -> [f64; 3] {
        std::array::from_fn(|a| (vals[g.shift(c, a, 1)] - vals[g.shift(c, a, -1)]) / (2.0 * h[a]))
    };
    // V^i = J^{ik}J^{jk} ∂_j f = (|w|² δ_ij − w_i w_j) ∂_j f
    let flux: Vec<[f64; 3]> = (0..g.len())
        .into_par_iter()
        .map(|idx| {
            let c = g.unravel(idx);
            let x = g.cell_center(c);
            let v = w.eval(&x);
            let df = grad(c);
            let w2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
            let wd = v[0] * df[0] + v[1] * df[1] + v[2] * df[2];
            std::array::from_fn(|i| w2 * df[i] - v[i] * wd)
        })
        .collect();
    (0..g.len())
        .into_par_iter()
        .map(|idx| {
            let c = g.unravel(idx);
            let x = g.cell_center(c);
            let mut lap = 0.0;
            for a in 0..3 {
                lap += (flux[g.shift(c, a, 1)][a] - flux[g.shift(c, a, -1)][a]) / (2.0 * h[a]);
            }
            let b = field_force(w, &x);
            let df = grad(c);
            let drift = b[0] * df[0] + b[1] * df[1] + b[2] * df[2];
            0.5 * (lap + drift + 0.25 * vals[idx] * field_charge_3d(w, &x))
        })
        .collect()
}

/// `β = −Σ (M̃ᵀ∇H₀)·(M̃ᵀ∇f) / Σ f |Mᵀ∇H₀|²` by midpoint quadrature with centered `∇f`.
pub fn compute_beta(f: &DensityGrid, model: &FpModel) -> Result<f64> {
    let h0 = model
        .hamiltonian
        .as_ref()
        .ok_or_else(|| HelidiffError::Config("compute_beta needs a Hamiltonian".into()))?;
    let g = &f.geometry;
    let h = [g.spacing(0), g.spacing(1), g.spacing(2)];
    let amp = model.noise.amplitude();
    let terms: Vec<(f64, f64)> = (0..g.len())
        .into_par_iter()
        .map(|idx| {
            let c = g.unravel(idx);
            let x = g.cell_center(c);
            let j = model.operator.eval(&x);
            let m = noise_matrix(&j, model.noise.map(), &x);
            let gh = h0.grad(&x);
            let df: [f64; 3] = std::array::from_fn(|a| {
                (f.values[g.shift(c, a, 1)] - f.values[g.shift(c, a, -1)]) / (2.0 * h[a])
            });
            let mut num = 0.0;
            let mut den = 0.0;
            for k in 0..3 {
                let mh: f64 = (0..3).map(|i| m[i * 3 + k] * gh[i]).sum();
                let mf: f64 = (0..3).map(|i| m[i * 3 + k] * df[i]).sum();
                num += amp[k] * amp[k] * mh * mf;
                den += f.values[idx] * mh * mh;
            }
            (num, den)
        })
        .collect();
    let dv = g.cell_volume();
    let num = pairwise_sum(&terms.iter().map(|t| t.0).collect::<Vec<_>>()) * dv;
    let den = pairwise_sum(&terms.iter().map(|t| t.1).collect::<Vec<_>>()) * dv;
    if den < MIN_BETA_DENOMINATOR {
        return Err(HelidiffError::UndefinedBeta { denominator: den });
    }
    Ok(-num / den)
}

type ScalarFn = dyn Fn(&[f64]) -> f64 + Send + Sync;
type FoliationFn = dyn Fn(f64) -> f64 + Send + Sync;

/// Closed-form stationary densities.
#[derive(Clone)]
pub enum EquilibriumSpec {
    Flat,
    /// `(A/λ) exp{−γ ℱ(C)}`.
    CasimirFoliation {
        lambda: Arc<ScalarFn>,
        casimir: Arc<ScalarFn>,
        foliation: Arc<FoliationFn>,
        gamma: f64,
    },
    /// `(A/|w|) e^{−ζ}`.
    ZetaPotential { w: VectorField3, zeta: Arc<ScalarFn> },
    /// `A exp{−β H₀}`.
    Boltzmann { hamiltonian: Hamiltonian, beta: f64 },
    /// `A exp{−β H₀ − Σ γ_i C_i}`.
    CasimirBoltzmann {
        hamiltonian: Hamiltonian,
        beta: f64,
        casimirs: Vec<(Arc<ScalarFn>, f64)>,
    },
}

impl fmt::Debug for EquilibriumSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.kind())
    }
}

impl EquilibriumSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            EquilibriumSpec::Flat => "flat",
            EquilibriumSpec::CasimirFoliation { .. } => "casimir_foliation",
            EquilibriumSpec::ZetaPotential { .. } => "zeta_potential",
            EquilibriumSpec::Boltzmann { .. } => "boltzmann",
            EquilibriumSpec::CasimirBoltzmann { .. } => "casimir_boltzmann",
        }
    }

    /// `log f` up to an additive constant.
    pub fn log_density(&self, x: &[f64]) -> f64 {
        match self {
            EquilibriumSpec::Flat => 0.0,
            EquilibriumSpec::CasimirFoliation {
                lambda,
                casimir,
                foliation,
                gamma,
            } => -lambda(x).ln() - gamma * foliation(casimir(x)),
            EquilibriumSpec::ZetaPotential { w, zeta } => {
                let v = w.eval(&[x[0], x[1], x[2]]);
                -0.5 * (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).ln() - zeta(x)
            }
            EquilibriumSpec::Boltzmann { hamiltonian, beta } => -beta * hamiltonian.eval(x),
            EquilibriumSpec::CasimirBoltzmann {
                hamiltonian,
                beta,
                casimirs,
            } => {
                -beta * hamiltonian.eval(x)
                    - casimirs.iter().map(|(c, g)| g * c(x)).sum::<f64>()
            }
        }
    }
}

/// Evaluates the closed form at cell centers and normalizes it.
pub fn make_equilibrium(spec: &EquilibriumSpec, geometry: &GridGeometry) -> Result<DensityGrid> {
    if let EquilibriumSpec::Flat = spec {
        return Ok(DensityGrid::uniform(geometry.clone()));
    }
    let mut f = DensityGrid::from_fn(geometry.clone(), |x| spec.log_density(x));
    let top = f.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        return Err(HelidiffError::Numerical(format!(
            "{} equilibrium is not finite on the grid",
            spec.kind()
        )));
    }
    f.values.par_iter_mut().for_each(|v| *v = (*v - top).exp());
    f.normalize()?;
    Ok(f)
}

/// `∂f/∂t` of the `n`-dimensional equation at `x` for a density given as a function,
/// by nested central differences of step `h`:
/// `∂_i[−(J∇H₀)^i f + β u₁^i f + ½ M̃^{ik} ∂_j(M̃^{jk} f)]`.
pub fn fpe_pointwise(
    operator: &OperatorField,
    hamiltonian: Option<&Hamiltonian>,
    noise: &NoiseSpec,
    beta: f64,
    f: &dyn Fn(&[f64]) -> f64,
    x: &[f64],
    h: f64,
) -> f64 {
    let n = operator.dim();
    let amp = noise.amplitude();
    let mt = |y: &[f64]| -> MatBuf {
        let mut m = noise_matrix(&operator.eval(y), noise.map(), y);
        for i in 0..n {
            for k in 0..n {
                m[i * n + k] *= amp[k];
            }
        }
        m
    };
    let flux = |y: &[f64], i: usize| -> f64 {
        let fy = f(y);
        let mut g = 0.0;
        if let Some(ham) = hamiltonian {
            let gh = ham.grad(y);
            let j = operator.eval(y);
            g -= (0..n).map(|q| j.get(i, q) * gh[q]).sum::<f64>() * fy;
            if beta != 0.0 {
                let m = noise_matrix(&j, noise.map(), y);
                let u1: f64 = (0..n)
                    .map(|k| m[i * n + k] * (0..n).map(|p| m[p * n + k] * gh[p]).sum::<f64>())
                    .sum();
                g += 0.5 * beta * u1 * fy;
            }
        }
        let m = mt(y);
        let mut yp: PointBuf = PointBuf::from_slice(y);
        for k in 0..n {
            let mut dq = 0.0;
            for jj in 0..n {
                let y0 = yp[jj];
                yp[jj] = y0 + h;
                let qp = mt(&yp)[jj * n + k] * f(&yp);
                yp[jj] = y0 - h;
                let qm = mt(&yp)[jj * n + k] * f(&yp);
                yp[jj] = y0;
                dq += (qp - qm) / (2.0 * h);
            }
            g += 0.5 * m[i * n + k] * dq;
        }
        g
    };
    let mut xp: PointBuf = PointBuf::from_slice(x);
    let mut out = 0.0;
    for i in 0..n {
        let x0 = xp[i];
        xp[i] = x0 + h;
        let gp = flux(&xp, i);
        xp[i] = x0 - h;
        let gm = flux(&xp, i);
        xp[i] = x0;
        out += (gp - gm) / (2.0 * h);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog;
    use std::f64::consts::PI;

    #[test]
    fn zero_rhs_leaves_density_bitwise() {
        let op = crate::operator::OperatorField::new("zero", 3, |_x: &[f64]| {
            crate::operator::Bivector::zeros(3)
        });
        let model = FpModel::diffusion(op).unwrap();
        let geom = GridGeometry::cube(8, 2.0 * PI);
        let mut fp = FokkerPlanck3::new(&model, geom.clone()).unwrap();
        let mut f = DensityGrid::from_fn(geom, |x| 1.0 + 0.3 * x[0].sin());
        let before = f.values.clone();
        fp.step(&mut f, 0.1).unwrap();
        assert_eq!(before, f.values);
    }

    #[test]
    fn flat_beltrami_is_stationary_to_round_off() {
        let model = FpModel::diffusion(catalog::beltrami().to_operator()).unwrap();
        let geom = GridGeometry::cube(16, 2.0 * PI);
        let fp = FokkerPlanck3::new(&model, geom.clone()).unwrap();
        let f = DensityGrid::uniform(geom);
        assert!(fp.rhs(&f, 0.0).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn mass_is_conserved() {
        let model = FpModel::diffusion(catalog::antisym().to_operator()).unwrap();
        let geom = GridGeometry::cube(12, 2.0 * PI);
        let mut fp = FokkerPlanck3::new(&model, geom.clone()).unwrap();
        let mut f = DensityGrid::from_fn(geom, |x| 2.0 + (x[0] + x[1]).cos())
            .normalized()
            .unwrap();
        let dt = fp.stable_dt(0.0);
        for _ in 0..20 {
            fp.step(&mut f, dt).unwrap();
        }
        assert!((f.mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn flat_equilibrium_value() {
        let geom = GridGeometry::cube(4, 6.0);
        let f = make_equilibrium(&EquilibriumSpec::Flat, &geom).unwrap();
        assert!(f.values.iter().all(|v| (*v - 1.0 / 216.0).abs() < 1e-15));
    }

    #[test]
    fn grid_solver_rejects_other_dimensions() {
        assert!(FpModel::diffusion(catalog::symplectic(2)).is_err());
    }
}
