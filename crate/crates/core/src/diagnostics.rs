//! Density estimates from ensembles, entropy functionals and grid comparisons.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classify::{field_charge_3d, VolumeWeight};
use crate::error::{HelidiffError, Result};
use crate::grid::{DensityGrid, GridGeometry};
use crate::operator::{cross3, VectorField3};
use crate::sampling::pairwise_sum;
use crate::sde::Ensemble;

/// Densities below this value are left out of logarithmic integrands.
pub const DENSITY_FLOOR: f64 = 1e-30;

/// Particles per private deposit buffer. Fixed so that the merge order never
/// depends on the thread count.
const DEPOSIT_CHUNK: usize = 1 << 16;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepositScheme {
    /// Cloud-in-cell (trilinear) weights.
    #[default]
    Cic,
    /// Nearest grid point.
    Ngp,
}

fn axis_weights(x: f64, geom: &GridGeometry, axis: usize, scheme: DepositScheme) -> [(usize, f64); 2] {
    let n = geom.shape[axis] as isize;
    let s = (x - geom.lower(axis)) / geom.spacing(axis);
    match scheme {
        DepositScheme::Ngp => {
            let i = (s.floor() as isize).rem_euclid(n) as usize;
            [(i, 1.0), (i, 0.0)]
        }
        DepositScheme::Cic => {
            let s = s - 0.5;
            let f = s.floor();
            let t = s - f;
            let i0 = (f as isize).rem_euclid(n) as usize;
            let i1 = (f as isize + 1).rem_euclid(n) as usize;
            [(i0, 1.0 - t), (i1, t)]
        }
    }
}

/// Particle density on `geom`, normalized to unit mass. Positions outside the box are
/// wrapped periodically; flagged particles are skipped.
pub fn deposit_histogram(
    ens: &Ensemble,
    geom: &GridGeometry,
    scheme: DepositScheme,
) -> Result<DensityGrid> {
    if ens.dim() != 3 {
        return Err(HelidiffError::Contract(format!(
            "histograms are three-dimensional, ensemble has dimension {}",
            ens.dim()
        )));
    }
    let live = ens.len() - ens.flagged_count();
    if live == 0 {
        return Err(HelidiffError::Contract("cannot deposit an empty ensemble".into()));
    }
    let pos = ens.positions();
    let flags = ens.flagged();
    let partials: Vec<Vec<f64>> = (0..ens.len())
        .collect::<Vec<_>>()
        .par_chunks(DEPOSIT_CHUNK)
        .map(|ids| {
            let mut buf = vec![0.0; geom.len()];
            for &p in ids {
                if flags[p] {
                    continue;
                }
                let x = &pos[3 * p..3 * p + 3];
                let wx = axis_weights(x[0], geom, 0, scheme);
                let wy = axis_weights(x[1], geom, 1, scheme);
                let wz = axis_weights(x[2], geom, 2, scheme);
                for (i, a) in wx {
                    for (j, b) in wy {
                        for (k, c) in wz {
                            let w = a * b * c;
                            if w != 0.0 {
                                buf[geom.index(i, j, k)] += w;
                            }
                        }
                    }
                }
            }
            buf
        })
        .collect();
    let mut counts = vec![0.0; geom.len()];
    for part in &partials {
        for (c, v) in counts.iter_mut().zip(part) {
            *c += v;
        }
    }
    let scale = 1.0 / (live as f64 * geom.cell_volume());
    Ok(DensityGrid {
        geometry: geom.clone(),
        values: counts.into_iter().map(|c| c * scale).collect(),
        time: ens.time(),
    })
}

/// Pearson χ² of nearest-cell counts against a uniform distribution, with its
/// degrees of freedom.
pub fn chi_square_uniform(ens: &Ensemble, geom: &GridGeometry) -> Result<(f64, usize)> {
    let h = deposit_histogram(ens, geom, DepositScheme::Ngp)?;
    let n = (ens.len() - ens.flagged_count()) as f64;
    let k = geom.len();
    let expected = n / k as f64;
    let terms: Vec<f64> = h
        .values
        .iter()
        .map(|v| {
            let c = v * n * geom.cell_volume();
            (c - expected) * (c - expected) / expected
        })
        .collect();
    Ok((pairwise_sum(&terms), k - 1))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EntropyKind {
    /// `S = −∫ f log f dV`.
    #[serde(rename = "S")]
    S,
    /// `Σ_λ = −∫ f log(fλ) dV`.
    #[serde(rename = "sigma_lambda")]
    SigmaLambda,
    /// `Σ_ζ = −∫ f [log(f|w|) + ζ] dV`.
    #[serde(rename = "sigma_zeta")]
    SigmaZeta,
    /// Shannon entropy of the density as seen in grid coordinates.
    #[serde(rename = "S_c")]
    Sc,
    /// `Σ = S_c + ⟨log g⟩` for the invariant measure `g dV`.
    #[serde(rename = "sigma")]
    Sigma,
}

impl EntropyKind {
    pub fn label(&self) -> &'static str {
        match self {
            EntropyKind::S => "S",
            EntropyKind::SigmaLambda => "sigma_lambda",
            EntropyKind::SigmaZeta => "sigma_zeta",
            EntropyKind::Sc => "S_c",
            EntropyKind::Sigma => "sigma",
        }
    }
}

/// Extra fields some entropy kinds need.
pub enum EntropyAux<'a> {
    None,
    Lambda(&'a (dyn Fn(&[f64]) -> f64 + Sync)),
    Zeta {
        w: &'a VectorField3,
        zeta: &'a (dyn Fn(&[f64]) -> f64 + Sync),
    },
    Weight(&'a VolumeWeight),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EntropyValue {
    pub value: f64,
    /// Cells left out because `f < DENSITY_FLOOR`.
    pub floored_cells: usize,
}

/// Midpoint-rule quadrature of the chosen entropy integrand.
pub fn entropy(f: &DensityGrid, kind: EntropyKind, aux: &EntropyAux<'_>) -> Result<EntropyValue> {
    let need = |what: &str| {
        HelidiffError::Contract(format!("entropy kind {} needs {what}", kind.label()))
    };
    match (kind, aux) {
        (EntropyKind::SigmaLambda, EntropyAux::Lambda(_))
        | (EntropyKind::SigmaZeta, EntropyAux::Zeta { .. })
        | (EntropyKind::Sigma, EntropyAux::Weight(_))
        | (EntropyKind::S, _)
        | (EntropyKind::Sc, _) => {}
        (EntropyKind::SigmaLambda, _) => return Err(need("λ")),
        (EntropyKind::SigmaZeta, _) => return Err(need("w and ζ")),
        (EntropyKind::Sigma, _) => return Err(need("a volume weight")),
    }
    let g = &f.geometry;
    let terms: Vec<(f64, bool)> = f
        .values
        .par_iter()
        .enumerate()
        .map(|(idx, &v)| {
            if v < DENSITY_FLOOR {
                return (0.0, true);
            }
            let base = -v * v.ln();
            let extra = match (kind, aux) {
                (EntropyKind::SigmaLambda, EntropyAux::Lambda(l)) => {
                    -v * l(&g.cell_center(g.unravel(idx))).ln()
                }
                (EntropyKind::SigmaZeta, EntropyAux::Zeta { w, zeta }) => {
                    let x = g.cell_center(g.unravel(idx));
                    let wv = w.eval(&x);
                    let n = (wv[0] * wv[0] + wv[1] * wv[1] + wv[2] * wv[2]).sqrt();
                    -v * (n.ln() + zeta(&x))
                }
                (EntropyKind::Sigma, EntropyAux::Weight(wt)) => {
                    v * wt.eval(&g.cell_center(g.unravel(idx))).ln()
                }
                _ => 0.0,
            };
            (base + extra, false)
        })
        .collect();
    let floored = terms.iter().filter(|t| t.1).count();
    if floored > 0 {
        log::debug!("{floored} cells below the density floor");
    }
    let vals: Vec<f64> = terms.iter().map(|t| t.0).collect();
    Ok(EntropyValue {
        value: pairwise_sum(&vals) * g.cell_volume(),
        floored_cells: floored,
    })
}

/// Entropy sampled along a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyTrace {
    pub kind: EntropyKind,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl EntropyTrace {
    pub fn new(kind: EntropyKind) -> Self {
        EntropyTrace {
            kind,
            times: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn push(&mut self, t: f64, value: f64) -> Result<()> {
        if let Some(last) = self.times.last() {
            if t <= *last {
                return Err(HelidiffError::Contract(format!(
                    "entropy trace times must increase ({t} after {last})"
                )));
            }
        }
        if !value.is_finite() {
            return Err(HelidiffError::Numerical(format!("non-finite entropy at t = {t}")));
        }
        self.times.push(t);
        self.values.push(value);
        Ok(())
    }

    /// Most negative step-to-step change (zero for a non-decreasing trace).
    pub fn worst_decrease(&self) -> f64 {
        self.values
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(0.0, f64::min)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,value\n");
        for (t, v) in self.times.iter().zip(&self.values) {
            s.push_str(&format!("{t:e},{v:e}\n"));
        }
        s
    }
}

/// Terms of `dS/dt = ½∫ f[−𝔅/4 + |w×∇log f|²] dV`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyProduction {
    pub total: f64,
    pub charge_term: f64,
    pub quadratic_term: f64,
}

/// Entropy production of operator diffusion for the density on the grid, with
/// centered differences for `∇f`.
pub fn entropy_production_rate(f: &DensityGrid, w: &VectorField3) -> EntropyProduction {
    let g = &f.geometry;
    let h = [g.spacing(0), g.spacing(1), g.spacing(2)];
    let vals = &f.values;
    let terms: Vec<(f64, f64)> = (0..g.len())
        .into_par_iter()
        .map(|idx| {
            let v = vals[idx];
            let c = g.unravel(idx);
            let x = g.cell_center(c);
            let charge = -0.125 * v * field_charge_3d(w, &x);
            if v < DENSITY_FLOOR {
                return (charge, 0.0);
            }
            let df: [f64; 3] = std::array::from_fn(|a| {
                (vals[g.shift(c, a, 1)] - vals[g.shift(c, a, -1)]) / (2.0 * h[a])
            });
            let wx = cross3(&w.eval(&x), &df);
            let q = 0.5 * (wx[0] * wx[0] + wx[1] * wx[1] + wx[2] * wx[2]) / v;
            (charge, q)
        })
        .collect();
    let dv = g.cell_volume();
    let charge_term = pairwise_sum(&terms.iter().map(|t| t.0).collect::<Vec<_>>()) * dv;
    let quadratic_term = pairwise_sum(&terms.iter().map(|t| t.1).collect::<Vec<_>>()) * dv;
    EntropyProduction {
        total: charge_term + quadratic_term,
        charge_term,
        quadratic_term,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub l1_distance: f64,
    pub l2_distance: f64,
    /// `max |f₁ − f₂| · V`, the largest cell deviation relative to a flat density.
    pub max_rel_deviation: f64,
    pub pearson_correlation: f64,
    pub shape: [usize; 3],
    pub normalization: String,
}

/// Distances between two densities on the same grid, each renormalized to unit mass.
pub fn compare(f1: &DensityGrid, f2: &DensityGrid) -> Result<ComparisonReport> {
    if f1.geometry.shape != f2.geometry.shape {
        return Err(HelidiffError::Contract(format!(
            "cannot compare grids of shape {:?} and {:?}",
            f1.geometry.shape, f2.geometry.shape
        )));
    }
    if (f1.geometry.side - f2.geometry.side).abs() > 1e-9 * f1.geometry.side {
        return Err(HelidiffError::Contract(format!(
            "cannot compare boxes of side {} and {}",
            f1.geometry.side, f2.geometry.side
        )));
    }
    let a = f1.clone().normalized()?;
    let b = f2.clone().normalized()?;
    let dv = a.geometry.cell_volume();
    let diff: Vec<f64> = a.values.iter().zip(&b.values).map(|(x, y)| x - y).collect();
    let l1 = pairwise_sum(&diff.iter().map(|d| d.abs()).collect::<Vec<_>>()) * dv;
    let l2 = (pairwise_sum(&diff.iter().map(|d| d * d).collect::<Vec<_>>()) * dv).sqrt();
    let maxdev = diff.iter().map(|d| d.abs()).fold(0.0, f64::max) * a.geometry.volume();
    let ma = a.mean();
    let mb = b.mean();
    let cov = pairwise_sum(
        &a.values
            .iter()
            .zip(&b.values)
            .map(|(x, y)| (x - ma) * (y - mb))
            .collect::<Vec<_>>(),
    );
    let va = pairwise_sum(&a.values.iter().map(|x| (x - ma) * (x - ma)).collect::<Vec<_>>());
    let vb = pairwise_sum(&b.values.iter().map(|y| (y - mb) * (y - mb)).collect::<Vec<_>>());
    let pearson = if va == 0.0 && vb == 0.0 {
        1.0
    } else if va == 0.0 || vb == 0.0 {
        0.0
    } else {
        cov / (va * vb).sqrt()
    };
    Ok(ComparisonReport {
        l1_distance: l1,
        l2_distance: l2,
        max_rel_deviation: maxdev,
        pearson_correlation: pearson,
        shape: a.geometry.shape,
        normalization: "both inputs rescaled to unit mass on the common grid".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_point_deposit_is_a_delta() {
        let geom = GridGeometry::cube(4, 4.0);
        let c = geom.cell_center([1, 2, 3]);
        let ens = Ensemble::new(3, c.repeat(5), 0).unwrap();
        for scheme in [DepositScheme::Cic, DepositScheme::Ngp] {
            let h = deposit_histogram(&ens, &geom, scheme).unwrap();
            assert!((h.mass() - 1.0).abs() < 1e-15);
            let idx = geom.index(1, 2, 3);
            assert!((h.values[idx] - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn flat_entropy_is_log_volume() {
        let f = DensityGrid::uniform(GridGeometry::cube(6, 6.0));
        let s = entropy(&f, EntropyKind::S, &EntropyAux::None).unwrap();
        assert!((s.value - 216f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn unit_lambda_matches_shannon_bitwise() {
        let f = DensityGrid::from_fn(GridGeometry::cube(6, 6.0), |x| 1.0 + 0.5 * x[0].sin())
            .normalized()
            .unwrap();
        let one = |_x: &[f64]| 1.0;
        let s = entropy(&f, EntropyKind::S, &EntropyAux::None).unwrap();
        let sl = entropy(&f, EntropyKind::SigmaLambda, &EntropyAux::Lambda(&one)).unwrap();
        assert_eq!(s.value.to_bits(), sl.value.to_bits());
    }

    #[test]
    fn entropy_kind_requires_its_field() {
        let f = DensityGrid::uniform(GridGeometry::cube(2, 1.0));
        assert!(entropy(&f, EntropyKind::SigmaLambda, &EntropyAux::None).is_err());
    }

    #[test]
    fn comparison_of_identical_grids() {
        let f = DensityGrid::from_fn(GridGeometry::cube(5, 3.0), |x| 2.0 + x[1].cos());
        let r = compare(&f, &f).unwrap();
        assert_eq!(r.l1_distance, 0.0);
        assert_eq!(r.l2_distance, 0.0);
        assert!((r.pearson_correlation - 1.0).abs() < 1e-12);
    }

    #[test]
    fn trace_rejects_non_increasing_times() {
        let mut t = EntropyTrace::new(EntropyKind::S);
        t.push(0.0, 1.0).unwrap();
        assert!(t.push(0.0, 1.0).is_err());
    }
}
