//! Geometric diagnostics of antisymmetric operators and their classification.
//!
//! The 3D routines work on the vector-field form `w`: helicity `h = w·(∇×w)`,
//! field force `b = w×(∇×w)` and field charge `𝔅 = 4∇·b`. The `n`-dimensional
//! routines work on `J^{ij}` with a volume weight `g`:
//!
//! * cocurrent components `c_j = ∂_i(g J^{ij})`, zero for every `j` exactly when
//!   `g dx¹∧…∧dxⁿ` is invariant under every flow `X = J(dH)`;
//! * field force `b^i = g J^{ij} c_j` (the Hodge-dual components of the `n−1` form);
//! * field charge `𝔅 = 4 ∂_i b^i`.
//!
//! Class labels are assigned from sampled statistics, so a report records the
//! sample count and the tolerance that produced its label.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use smallvec::{smallvec, SmallVec};

use crate::error::{HelidiffError, Result};
use crate::operator::{
    cross3, curl_from_jacobian, dot3, Bivector, OperatorField, PointBuf, Vec3, VectorField3,
    NESTED_FD_STEP,
};
use crate::sampling::{pairwise_sum, SampleSpec};

/// Tolerance for labels when every first derivative is analytic.
pub const ANALYTIC_TOLERANCE: f64 = 1e-6;
/// Tolerance for labels that rest on finite-difference derivatives only.
pub const FD_TOLERANCE: f64 = 1e-3;
/// Smallest `|w|` for which normalized quantities are defined.
pub const MIN_NORM: f64 = 1e-12;
/// Smallest `|det J|` accepted by [`closure_test`].
pub const MIN_DET: f64 = 1e-10;

type ScalarFn = dyn Fn(&[f64]) -> f64 + Send + Sync;
type GradFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;

/// Density `g` of the volume form `g dx¹ ∧ … ∧ dxⁿ`.
#[derive(Clone)]
pub struct VolumeWeight {
    name: String,
    g: Arc<ScalarFn>,
    grad: Option<Arc<GradFn>>,
    fd_step: f64,
}

impl fmt::Debug for VolumeWeight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VolumeWeight").field("name", &self.name).finish()
    }
}

impl VolumeWeight {
    pub fn new<F>(name: impl Into<String>, g: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        VolumeWeight {
            name: name.into(),
            g: Arc::new(g),
            grad: None,
            fd_step: crate::operator::DEFAULT_FD_STEP,
        }
    }

    pub fn with_grad<F>(mut self, grad: F) -> Self
    where
        F: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        self.grad = Some(Arc::new(grad));
        self
    }

    /// `g ≡ 1`.
    pub fn unit() -> Self {
        VolumeWeight::new("unit", |_x: &[f64]| 1.0)
            .with_grad(|_x: &[f64], out: &mut [f64]| out.iter_mut().for_each(|v| *v = 0.0))
    }

    /// `g = λ⁻¹ = (1 + cos²x)^{-1/2}`, the invariant density of `lambda_grad_casimir`.
    pub fn inverse_lambda() -> Self {
        VolumeWeight::new("inverse_lambda", |x: &[f64]| {
            1.0 / (1.0 + x[0].cos().powi(2)).sqrt()
        })
        .with_grad(|x: &[f64], out: &mut [f64]| {
            let (s, c) = x[0].sin_cos();
            out.iter_mut().for_each(|v| *v = 0.0);
            out[0] = c * s * (1.0 + c * c).powf(-1.5);
        })
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "unit" => Ok(VolumeWeight::unit()),
            "inverse_lambda" => Ok(VolumeWeight::inverse_lambda()),
            other => Err(HelidiffError::Config(format!(
                "unknown volume weight '{other}'; valid names: unit, inverse_lambda"
            ))),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn has_analytic_grad(&self) -> bool {
        self.grad.is_some()
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.g)(x)
    }

    pub fn grad_into(&self, x: &[f64], out: &mut [f64]) {
        match &self.grad {
            Some(gr) => gr(x, out),
            None => {
                let h = self.fd_step;
                let mut xp: PointBuf = SmallVec::from_slice(x);
                for (m, o) in out.iter_mut().enumerate().take(x.len()) {
                    let x0 = xp[m];
                    xp[m] = x0 + h;
                    let gp = self.eval(&xp);
                    xp[m] = x0 - h;
                    let gm = self.eval(&xp);
                    xp[m] = x0;
                    *o = (gp - gm) / (2.0 * h);
                }
            }
        }
    }
}

/// `h = w·(∇×w)`.
pub fn helicity_density(w: &VectorField3, x: &Vec3) -> f64 {
    dot3(&w.eval(x), &w.curl(x))
}

/// `b = w × (∇×w)`.
pub fn field_force(w: &VectorField3, x: &Vec3) -> Vec3 {
    cross3(&w.eval(x), &w.curl(x))
}

/// `b̂ = ŵ × (∇×ŵ)` with `ŵ = w/|w|`.
pub fn normalized_field_force(w: &VectorField3, x: &Vec3) -> Result<Vec3> {
    let v = w.eval(x);
    let n = dot3(&v, &v).sqrt();
    if n < MIN_NORM {
        return Err(HelidiffError::Domain {
            point: x.to_vec(),
            reason: format!("|w| = {n:e} too small to normalize"),
        });
    }
    let jac = w.jacobian(x);
    let mut jhat = [[0.0; 3]; 3];
    for j in 0..3 {
        let wdw: f64 = (0..3).map(|k| v[k] * jac[k][j]).sum();
        for i in 0..3 {
            jhat[i][j] = jac[i][j] / n - v[i] * wdw / (n * n * n);
        }
    }
    let what = [v[0] / n, v[1] / n, v[2] / n];
    Ok(cross3(&what, &curl_from_jacobian(&jhat)))
}

fn charge_step(analytic: bool, fd_step: f64) -> f64 {
    if analytic {
        fd_step
    } else {
        NESTED_FD_STEP
    }
}

/// `𝔅 = 4∇·[w × (∇×w)]`, differentiating `b` by central differences.
pub fn field_charge_3d(w: &VectorField3, x: &Vec3) -> f64 {
    let h = charge_step(w.has_analytic_jacobian(), w.fd_step());
    let b_at = |p: &Vec3| {
        let jac = if w.has_analytic_jacobian() {
            w.jacobian(p)
        } else {
            w.fd_jacobian(p, h)
        };
        cross3(&w.eval(p), &curl_from_jacobian(&jac))
    };
    let mut div = 0.0;
    for i in 0..3 {
        let mut xp = *x;
        let mut xm = *x;
        xp[i] += h;
        xm[i] -= h;
        div += (b_at(&xp)[i] - b_at(&xm)[i]) / (2.0 * h);
    }
    4.0 * div
}

/// `|∇×w − (b×w + h w)/w²|`.
pub fn curl_decomposition_residual(w: &VectorField3, x: &Vec3) -> Result<f64> {
    let v = w.eval(x);
    let w2 = dot3(&v, &v);
    if w2.sqrt() < MIN_NORM {
        return Err(HelidiffError::Domain {
            point: x.to_vec(),
            reason: "curl decomposition needs w ≠ 0".into(),
        });
    }
    let c = w.curl(x);
    let h = dot3(&v, &c);
    let b = cross3(&v, &c);
    let bw = cross3(&b, &v);
    let r: f64 = (0..3)
        .map(|i| {
            let d = c[i] - (bw[i] + h * v[i]) / w2;
            d * d
        })
        .sum();
    Ok(r.sqrt())
}

fn all_derivs(j: &OperatorField, x: &[f64]) -> Vec<Bivector> {
    (0..j.dim()).map(|m| j.deriv(x, m)).collect()
}

/// Largest cyclic sum `J^{im}∂_m J^{jk} + J^{jm}∂_m J^{ki} + J^{km}∂_m J^{ij}` over `i<j<k`.
pub fn jacobi_residual(j: &OperatorField, x: &[f64]) -> f64 {
    let n = j.dim();
    let jx = j.eval(x);
    let d = all_derivs(j, x);
    let mut worst = 0.0_f64;
    for a in 0..n {
        for b in (a + 1)..n {
            for c in (b + 1)..n {
                let mut s = 0.0;
                for (m, dm) in d.iter().enumerate() {
                    s += jx.get(a, m) * dm.get(b, c)
                        + jx.get(b, m) * dm.get(c, a)
                        + jx.get(c, m) * dm.get(a, b);
                }
                worst = worst.max(s.abs());
            }
        }
    }
    worst
}

/// `c_j = ∂_i(g J^{ij})`; all zero exactly when `g dx` is an invariant measure for every `H`.
pub fn cocurrent_residual(j: &OperatorField, g: &VolumeWeight, x: &[f64]) -> PointBuf {
    let n = j.dim();
    let jx = j.eval(x);
    let gx = g.eval(x);
    let mut dg: PointBuf = smallvec![0.0; n];
    g.grad_into(x, &mut dg);
    let mut c: PointBuf = smallvec![0.0; n];
    for i in 0..n {
        let di = j.deriv(x, i);
        for (col, cj) in c.iter_mut().enumerate() {
            *cj += dg[i] * jx.get(i, col) + gx * di.get(i, col);
        }
    }
    c
}

/// `b^i = g J^{ij} ∂_l(g J^{lj})`.
pub fn field_force_nd(j: &OperatorField, g: &VolumeWeight, x: &[f64]) -> PointBuf {
    let c = cocurrent_residual(j, g, x);
    let gx = g.eval(x);
    let mut b = j.eval(x).apply(&c);
    for v in b.iter_mut() {
        *v *= gx;
    }
    b
}

/// `𝔅 = 4 ∂_i (g J^{ij} ∂_l(g J^{lj}))`.
pub fn field_charge_nd(j: &OperatorField, g: &VolumeWeight, x: &[f64]) -> f64 {
    let h = charge_step(j.has_analytic_deriv() && g.has_analytic_grad(), j.fd_step());
    let mut xp: PointBuf = SmallVec::from_slice(x);
    let mut div = 0.0;
    for i in 0..j.dim() {
        let x0 = xp[i];
        xp[i] = x0 + h;
        let bp = field_force_nd(j, g, &xp)[i];
        xp[i] = x0 - h;
        let bm = field_force_nd(j, g, &xp)[i];
        xp[i] = x0;
        div += (bp - bm) / (2.0 * h);
    }
    4.0 * div
}

/// Exactness test for `𝔄 = ω^{km} ∂_l J^{lm} dx^k`, `ω = J⁻¹`: returns the largest
/// component of `d𝔄`. Zero on a star-shaped domain means some density `g` makes
/// `J` measure preserving.
pub fn closure_test(j: &OperatorField, x: &[f64]) -> Result<f64> {
    let n = j.dim();
    if !n.is_multiple_of(2) {
        return Err(HelidiffError::NotApplicable(format!(
            "closure test needs an even dimension, '{}' has {n}",
            j.name()
        )));
    }
    let jm = DMatrix::from_row_slice(n, n, &j.eval(x).to_dense());
    let det = jm.determinant();
    if det.abs() < MIN_DET {
        return Err(HelidiffError::NotApplicable(format!(
            "operator '{}' is singular at {x:?} (|det| = {:e})",
            j.name(),
            det.abs()
        )));
    }
    let omega = jm
        .try_inverse()
        .ok_or_else(|| HelidiffError::NotApplicable("matrix inversion failed".into()))?;
    let d = j.divergence(x);
    // ∂_p ω = −ω (∂_p J) ω
    let domega: Vec<DMatrix<f64>> = (0..n)
        .map(|p| {
            let dj = DMatrix::from_row_slice(n, n, &j.deriv(x, p).to_dense());
            -(&omega * dj * &omega)
        })
        .collect();
    // ∂_p d^m = Σ_l ∂_p ∂_l J^{lm}
    let mut dd = vec![vec![0.0; n]; n];
    for (p, row) in dd.iter_mut().enumerate() {
        for l in 0..n {
            let s = j.second_deriv(x, p, l);
            for (m, v) in row.iter_mut().enumerate() {
                *v += s.get(l, m);
            }
        }
    }
    let mut worst = 0.0_f64;
    for k in 0..n {
        for q in (k + 1)..n {
            let mut e = 0.0;
            for m in 0..n {
                e += (domega[q][(k, m)] - domega[k][(q, m)]) * d[m];
                e += omega[(k, m)] * dd[q][m] - omega[(q, m)] * dd[k][m];
            }
            worst = worst.max(e.abs());
        }
    }
    Ok(worst)
}

/// Adds a coordinate `x^{n+1}` and the column `x^{n+1} ∂_i J^{ij} ∂_j ∧ ∂_{n+1}`.
/// The result has vanishing flat-measure cocurrent.
pub fn extend_to_measure_preserving(j: &OperatorField) -> OperatorField {
    let n = j.dim();
    let inner = j.clone();
    let eval = move |x: &[f64]| {
        let base = inner.eval(&x[..n]);
        let d = inner.divergence(&x[..n]);
        let mut out = Bivector::zeros(n + 1);
        for a in 0..n {
            for b in (a + 1)..n {
                out.set(a, b, base.get(a, b));
            }
            out.set(a, n, x[n] * d[a]);
        }
        out
    };
    let inner = j.clone();
    let deriv = move |x: &[f64], m: usize| {
        let mut out = Bivector::zeros(n + 1);
        let xs = &x[..n];
        if m < n {
            let dj = inner.deriv(xs, m);
            for a in 0..n {
                for b in (a + 1)..n {
                    out.set(a, b, dj.get(a, b));
                }
            }
            // ∂_m d^a = Σ_i ∂_m ∂_i J^{ia}
            let mut ddm: PointBuf = smallvec![0.0; n];
            for i in 0..n {
                let s = inner.second_deriv(xs, m, i);
                for (a, v) in ddm.iter_mut().enumerate() {
                    *v += s.get(i, a);
                }
            }
            for (a, v) in ddm.iter().enumerate() {
                out.set(a, n, x[n] * v);
            }
        } else {
            let d = inner.divergence(xs);
            for (a, v) in d.iter().enumerate() {
                out.set(a, n, *v);
            }
        }
        out
    };
    OperatorField::new(format!("extended({})", j.name()), n + 1, eval)
        .with_deriv(deriv)
        .with_fd_step(j.fd_step())
}

/// Summary of `|value|` over the samples.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub max_abs: f64,
    pub mean_abs: f64,
    pub rms: f64,
}

impl Stats {
    pub fn from_values(values: &[f64]) -> Self {
        if values.is_empty() {
            return Stats {
                max_abs: 0.0,
                mean_abs: 0.0,
                rms: 0.0,
            };
        }
        let abs: Vec<f64> = values.iter().map(|v| v.abs()).collect();
        let sq: Vec<f64> = values.iter().map(|v| v * v).collect();
        let n = values.len() as f64;
        Stats {
            max_abs: abs.iter().cloned().fold(0.0, f64::max),
            mean_abs: pairwise_sum(&abs) / n,
            rms: (pairwise_sum(&sq) / n).sqrt(),
        }
    }
}

/// Classes ordered from most to least specific.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorClass {
    Symplectic,
    Poisson,
    MeasurePreserving,
    StrongBeltrami,
    Beltrami,
    GeneralAntisymmetric,
}

impl fmt::Display for OperatorClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            OperatorClass::Symplectic => "symplectic",
            OperatorClass::Poisson => "poisson",
            OperatorClass::MeasurePreserving => "measure_preserving",
            OperatorClass::StrongBeltrami => "strong_beltrami",
            OperatorClass::Beltrami => "beltrami",
            OperatorClass::GeneralAntisymmetric => "general_antisymmetric",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportStats {
    /// Present for three-dimensional operators only.
    pub helicity: Option<Stats>,
    pub field_force_norm: Stats,
    pub field_charge: Stats,
    pub jacobi_residual: Stats,
    pub cocurrent_residual: Stats,
    /// Smallest `|det J|` over the samples (zero in odd dimension).
    pub min_abs_det: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub operator: String,
    pub g: String,
    pub label: OperatorClass,
    pub tolerance: f64,
    pub n_samples: usize,
    /// `analytic` or `finite_difference`.
    pub derivatives: String,
    pub stats: ReportStats,
    pub samples: Vec<Vec<f64>>,
}

struct PointDiag {
    helicity: f64,
    b_norm: f64,
    charge: f64,
    jacobi: f64,
    cocurrent: f64,
    abs_det: f64,
}

/// Samples every diagnostic and assigns the most specific class whose test passes.
pub fn classify(
    j: &OperatorField,
    g: &VolumeWeight,
    sample: &SampleSpec,
) -> Result<ClassificationReport> {
    if sample.n_samples < 100 {
        return Err(HelidiffError::Contract(format!(
            "classification needs at least 100 samples, got {}",
            sample.n_samples
        )));
    }
    if sample.dim() != j.dim() {
        return Err(HelidiffError::Contract(format!(
            "sample dimension {} does not match operator dimension {}",
            sample.dim(),
            j.dim()
        )));
    }
    let points = sample.points(|p| j.in_domain(p));
    if points.len() < sample.n_samples {
        return Err(HelidiffError::Config(format!(
            "only {} of {} sample points fall inside the domain of '{}'",
            points.len(),
            sample.n_samples,
            j.name()
        )));
    }
    let analytic = j.has_analytic_deriv() && g.has_analytic_grad();
    let tolerance = if analytic {
        ANALYTIC_TOLERANCE
    } else {
        FD_TOLERANCE
    };
    let n = j.dim();
    let field3 = if n == 3 {
        Some(VectorField3::from_operator(j)?)
    } else {
        None
    };

    let diags: Vec<PointDiag> = points
        .par_iter()
        .map(|p| {
            let helicity = match &field3 {
                Some(w) => helicity_density(w, &[p[0], p[1], p[2]]),
                None => 0.0,
            };
            let b = field_force_nd(j, g, p);
            let c = cocurrent_residual(j, g, p);
            let abs_det = if n.is_multiple_of(2) {
                DMatrix::from_row_slice(n, n, &j.eval(p).to_dense())
                    .determinant()
                    .abs()
            } else {
                0.0
            };
            PointDiag {
                helicity,
                b_norm: crate::operator::norm(&b),
                charge: field_charge_nd(j, g, p),
                jacobi: jacobi_residual(j, p),
                cocurrent: c.iter().fold(0.0_f64, |a, v| a.max(v.abs())),
                abs_det,
            }
        })
        .collect();

    let col = |f: fn(&PointDiag) -> f64| Stats::from_values(&diags.iter().map(f).collect::<Vec<_>>());
    let stats = ReportStats {
        helicity: field3.as_ref().map(|_| col(|d| d.helicity)),
        field_force_norm: col(|d| d.b_norm),
        field_charge: col(|d| d.charge),
        jacobi_residual: col(|d| d.jacobi),
        cocurrent_residual: col(|d| d.cocurrent),
        min_abs_det: diags.iter().map(|d| d.abs_det).fold(f64::INFINITY, f64::min),
    };

    let label = if stats.jacobi_residual.max_abs <= tolerance {
        if n.is_multiple_of(2) && stats.min_abs_det >= MIN_DET {
            OperatorClass::Symplectic
        } else {
            OperatorClass::Poisson
        }
    } else if stats.cocurrent_residual.max_abs <= tolerance {
        OperatorClass::MeasurePreserving
    } else if stats.field_force_norm.max_abs <= tolerance {
        OperatorClass::StrongBeltrami
    } else if stats.field_charge.max_abs <= tolerance {
        OperatorClass::Beltrami
    } else {
        OperatorClass::GeneralAntisymmetric
    };

    Ok(ClassificationReport {
        operator: j.name().to_string(),
        g: g.name().to_string(),
        label,
        tolerance,
        n_samples: points.len(),
        derivatives: if analytic { "analytic" } else { "finite_difference" }.into(),
        stats,
        samples: points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{self, Params};
    use std::f64::consts::FRAC_PI_2;

    fn field(name: &str) -> VectorField3 {
        catalog::catalog_operator(name, &Params::new())
            .unwrap()
            .field3()
            .cloned()
            .unwrap()
    }

    #[test]
    fn helicity_point_values() {
        assert_eq!(helicity_density(&field("uniform_z"), &[0.3, 0.1, -2.0]), 0.0);
        for x in [[0.0, 0.0, 0.0], [1.0, -2.0, 0.7]] {
            assert!((helicity_density(&field("beltrami"), &x) - 2.0).abs() < 1e-12);
        }
        let h = helicity_density(&field("antisym"), &[FRAC_PI_2, 0.0, 0.4]);
        assert!((h - 2.0).abs() < 1e-12);
        assert!((helicity_density(&field("spiral"), &[0.0, 0.0, 0.0]) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn field_force_point_values() {
        assert_eq!(field_force(&field("beltrami"), &[0.2, 0.3, 0.9]), [0.0, 0.0, 0.0]);
        let b = field_force(&field("grad_casimir"), &[0.2, 0.3, 0.9]);
        assert!(b.iter().all(|v| v.abs() < 1e-15));
        let w = field("antisym");
        let b = field_force(&w, &[0.0, 0.0, 0.0]);
        assert_eq!(b, [1.0, -1.0, 0.0]);
        // FD curl cross-check
        let fd = w.fd_jacobian(&[0.0, 0.0, 0.0], 1e-5);
        let bf = cross3(&w.eval(&[0.0, 0.0, 0.0]), &curl_from_jacobian(&fd));
        for i in 0..3 {
            assert!((bf[i] - b[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn normalized_force_rejects_zero_field() {
        let z = VectorField3::new("zero", |_x: &Vec3| [0.0; 3]);
        assert!(normalized_field_force(&z, &[0.0; 3]).is_err());
    }

    #[test]
    fn field_charge_antisym_closed_form() {
        let w = field("antisym");
        let q = field_charge_3d(&w, &[FRAC_PI_2, 0.0, 0.0]);
        assert!((q + 4.0).abs() < 1e-6, "{q}");
        assert!(field_charge_3d(&field("beltrami"), &[0.4, 0.1, 1.3]).abs() < 1e-9);
    }

    #[test]
    fn curl_decomposition_vanishes() {
        assert_eq!(
            curl_decomposition_residual(&field("uniform_z"), &[0.1, 0.2, 0.3]).unwrap(),
            0.0
        );
        let r = curl_decomposition_residual(&field("spiral"), &[0.7, -1.3, 2.1]).unwrap();
        assert!(r < 1e-12);
    }

    #[test]
    fn jacobi_residual_equals_abs_helicity_in_3d() {
        for name in ["beltrami", "antisym", "unit_norm", "spiral"] {
            let w = field(name);
            let op = w.to_operator();
            for x in [[0.3, -0.2, 1.1], [2.0, 1.0, -0.5]] {
                let h = helicity_density(&w, &x);
                assert!((jacobi_residual(&op, &x) - h.abs()).abs() < 1e-12, "{name}");
            }
        }
        let sym = catalog::symplectic(2);
        assert_eq!(jacobi_residual(&sym, &[0.1, 0.2, 0.3, 0.4]), 0.0);
    }

    #[test]
    fn cocurrent_of_lambda_operator_depends_on_weight() {
        let op = field("lambda_grad_casimir").to_operator();
        let x = [0.8, -0.4, 0.3];
        let c_inv = cocurrent_residual(&op, &VolumeWeight::inverse_lambda(), &x);
        assert!(c_inv.iter().all(|v| v.abs() < 1e-12));
        let c_flat = cocurrent_residual(&op, &VolumeWeight::unit(), &x);
        assert!(c_flat.iter().any(|v| v.abs() > 1e-2));
    }

    #[test]
    fn closure_test_cases() {
        assert_eq!(closure_test(&catalog::symplectic(2), &[0.1, 0.2, 0.3, 0.4]).unwrap(), 0.0);
        let lin = OperatorField::new("lin", 2, |x: &[f64]| Bivector::from_upper(2, &[1.0 + x[0]]))
            .with_deriv(|_x: &[f64], m: usize| {
                Bivector::from_upper(2, &[if m == 0 { 1.0 } else { 0.0 }])
            });
        assert!(closure_test(&lin, &[0.3, -0.2]).unwrap() < 1e-6);
        let odd = field("antisym").to_operator();
        assert!(matches!(
            closure_test(&odd, &[0.0; 3]),
            Err(HelidiffError::NotApplicable(_))
        ));
    }

    #[test]
    fn extension_of_divergence_free_operator_adds_zero_column() {
        let ext = extend_to_measure_preserving(&field("grad_casimir").to_operator());
        let j = ext.eval(&[0.3, 0.9, -0.2, 1.7]);
        for a in 0..3 {
            assert!(j.get(a, 3).abs() < 1e-15);
        }
    }

    #[test]
    fn classify_requires_enough_samples() {
        let op = field("beltrami").to_operator();
        let spec = SampleSpec::cube(3, 6.0, 50);
        assert!(classify(&op, &VolumeWeight::unit(), &spec).is_err());
    }
}
