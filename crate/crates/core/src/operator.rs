//! Antisymmetric operator fields and the objects they act on.
//!
//! An [`OperatorField`] maps a point `x ∈ ℝⁿ` to an antisymmetric matrix `J(x)`.
//! Only the strict upper triangle is stored (see [`Bivector`]), so `J^{ij} = -J^{ji}`
//! holds bitwise by construction. In three dimensions an operator is more
//! conveniently described by a vector field `w` with `J(θ) = w × θ`; the
//! component assignment is `J^{zy} = w_x`, `J^{xz} = w_y`, `J^{yx} = w_z`.
//!
//! Every field carries an optional analytic derivative. When it is absent,
//! central finite differences with step `fd_step` are used instead.

use std::fmt;
use std::sync::Arc;

use smallvec::{smallvec, SmallVec};

use crate::error::{HelidiffError, Result};

pub type Vec3 = [f64; 3];
/// `m[i][j] = ∂w_i/∂x_j`.
pub type Mat3 = [[f64; 3]; 3];

/// Small inline vector used for points, covectors and velocities.
pub type PointBuf = SmallVec<[f64; 8]>;
/// Small dense row-major matrix.
pub type MatBuf = SmallVec<[f64; 16]>;

/// Default central-difference step for first derivatives.
pub const DEFAULT_FD_STEP: f64 = 1e-4;
/// Step used when a second derivative has to be built from two nested finite differences.
pub const NESTED_FD_STEP: f64 = 1e-3;

/// Antisymmetric `n × n` matrix stored by its strict upper triangle, row by row.
#[derive(Clone, Debug, PartialEq)]
pub struct Bivector {
    dim: usize,
    upper: SmallVec<[f64; 10]>,
}

impl Bivector {
    pub fn zeros(dim: usize) -> Self {
        Bivector {
            dim,
            upper: smallvec![0.0; dim * dim.saturating_sub(1) / 2],
        }
    }

    /// Builds from the upper-triangle entries `(0,1), (0,2), …, (1,2), …`.
    pub fn from_upper(dim: usize, upper: &[f64]) -> Self {
        assert_eq!(upper.len(), dim * dim.saturating_sub(1) / 2);
        Bivector {
            dim,
            upper: SmallVec::from_slice(upper),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < j && j < self.dim);
        i * (2 * self.dim - i - 1) / 2 + (j - i - 1)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        use std::cmp::Ordering;
        match i.cmp(&j) {
            Ordering::Less => self.upper[self.slot(i, j)],
            Ordering::Greater => -self.upper[self.slot(j, i)],
            Ordering::Equal => 0.0,
        }
    }

    /// Sets `J^{ij} = v` (and therefore `J^{ji} = -v`). Diagonal writes are rejected.
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        assert!(i != j, "diagonal of an antisymmetric matrix is fixed at zero");
        if i < j {
            let s = self.slot(i, j);
            self.upper[s] = v;
        } else {
            let s = self.slot(j, i);
            self.upper[s] = -v;
        }
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn upper_mut(&mut self) -> &mut [f64] {
        &mut self.upper
    }

    /// `out^i = J^{ij} θ_j`.
    #[inline]
    pub fn apply_into(&self, theta: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate().take(self.dim) {
            let mut s = 0.0;
            for (j, t) in theta.iter().enumerate().take(self.dim) {
                s += self.get(i, j) * t;
            }
            *o = s;
        }
    }

    pub fn apply(&self, theta: &[f64]) -> PointBuf {
        let mut out: PointBuf = smallvec![0.0; self.dim];
        self.apply_into(theta, &mut out);
        out
    }

    /// Dense row-major copy.
    pub fn to_dense(&self) -> Vec<f64> {
        let n = self.dim;
        let mut m = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                m[i * n + j] = self.get(i, j);
            }
        }
        m
    }

    pub fn frobenius_norm(&self) -> f64 {
        (2.0 * self.upper.iter().map(|v| v * v).sum::<f64>()).sqrt()
    }

    pub fn scale(&mut self, s: f64) {
        for v in self.upper.iter_mut() {
            *v *= s;
        }
    }

    /// `self += s * other`.
    pub fn axpy(&mut self, s: f64, other: &Bivector) {
        debug_assert_eq!(self.dim, other.dim);
        for (a, b) in self.upper.iter_mut().zip(other.upper.iter()) {
            *a += s * b;
        }
    }
}

type OpEvalFn = dyn Fn(&[f64]) -> Bivector + Send + Sync;
type OpDerivFn = dyn Fn(&[f64], usize) -> Bivector + Send + Sync;

/// Antisymmetric tensor field `J^{ij}(x)` on `ℝⁿ`.
#[derive(Clone)]
pub struct OperatorField {
    name: String,
    dim: usize,
    eval: Arc<OpEvalFn>,
    deriv: Option<Arc<OpDerivFn>>,
    fd_step: f64,
    excluded_radius: f64,
}

impl fmt::Debug for OperatorField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OperatorField")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("analytic_deriv", &self.deriv.is_some())
            .field("fd_step", &self.fd_step)
            .field("excluded_radius", &self.excluded_radius)
            .finish()
    }
}

impl OperatorField {
    pub fn new<F>(name: impl Into<String>, dim: usize, eval: F) -> Self
    where
        F: Fn(&[f64]) -> Bivector + Send + Sync + 'static,
    {
        assert!(dim >= 2, "operator dimension must be at least 2");
        OperatorField {
            name: name.into(),
            dim,
            eval: Arc::new(eval),
            deriv: None,
            fd_step: DEFAULT_FD_STEP,
            excluded_radius: 0.0,
        }
    }

    /// Attaches `∂J/∂x^m`.
    pub fn with_deriv<F>(mut self, deriv: F) -> Self
    where
        F: Fn(&[f64], usize) -> Bivector + Send + Sync + 'static,
    {
        self.deriv = Some(Arc::new(deriv));
        self
    }

    pub fn with_fd_step(mut self, h: f64) -> Self {
        assert!(h > 0.0);
        self.fd_step = h;
        self
    }

    /// Removes the ball `|x| < r` from the domain.
    pub fn with_excluded_radius(mut self, r: f64) -> Self {
        self.excluded_radius = r;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn fd_step(&self) -> f64 {
        self.fd_step
    }

    pub fn excluded_radius(&self) -> f64 {
        self.excluded_radius
    }

    pub fn has_analytic_deriv(&self) -> bool {
        self.deriv.is_some()
    }

    pub fn in_domain(&self, x: &[f64]) -> bool {
        self.excluded_radius <= 0.0 || norm(x) >= self.excluded_radius
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> Bivector {
        debug_assert_eq!(x.len(), self.dim);
        (self.eval)(x)
    }

    /// `∂J/∂x^m`, analytic when available.
    pub fn deriv(&self, x: &[f64], m: usize) -> Bivector {
        match &self.deriv {
            Some(d) => d(x, m),
            None => self.fd_deriv(x, m, self.fd_step),
        }
    }

    /// Central finite difference of `eval` along axis `m`, ignoring any analytic derivative.
    pub fn fd_deriv(&self, x: &[f64], m: usize, h: f64) -> Bivector {
        let mut xp: PointBuf = SmallVec::from_slice(x);
        let mut xm: PointBuf = SmallVec::from_slice(x);
        xp[m] += h;
        xm[m] -= h;
        let mut d = self.eval(&xp);
        d.axpy(-1.0, &self.eval(&xm));
        d.scale(0.5 / h);
        d
    }

    /// `∂²J/∂x^l∂x^m`. One finite-difference level over the analytic derivative when it
    /// exists, otherwise two nested levels with [`NESTED_FD_STEP`].
    pub fn second_deriv(&self, x: &[f64], l: usize, m: usize) -> Bivector {
        let h = if self.deriv.is_some() {
            self.fd_step
        } else {
            NESTED_FD_STEP
        };
        let mut xp: PointBuf = SmallVec::from_slice(x);
        let mut xm: PointBuf = SmallVec::from_slice(x);
        xp[l] += h;
        xm[l] -= h;
        let (mut d, dm) = match &self.deriv {
            Some(der) => (der(&xp, m), der(&xm, m)),
            None => (self.fd_deriv(&xp, m, h), self.fd_deriv(&xm, m, h)),
        };
        d.axpy(-1.0, &dm);
        d.scale(0.5 / h);
        d
    }

    /// `v^i = J^{ij}(x) θ_j`.
    pub fn apply(&self, x: &[f64], theta: &[f64]) -> Result<PointBuf> {
        if x.len() != self.dim || theta.len() != self.dim {
            return Err(HelidiffError::Contract(format!(
                "operator '{}' has dimension {}, got point of length {} and covector of length {}",
                self.name,
                self.dim,
                x.len(),
                theta.len()
            )));
        }
        Ok(self.eval(x).apply(theta))
    }

    /// `d^j = ∂_i J^{ij}`, the flat-measure divergence of the operator.
    pub fn divergence(&self, x: &[f64]) -> PointBuf {
        let n = self.dim;
        let mut d: PointBuf = smallvec![0.0; n];
        for i in 0..n {
            let di = self.deriv(x, i);
            for (j, dj) in d.iter_mut().enumerate() {
                *dj += di.get(i, j);
            }
        }
        d
    }
}

type VfEvalFn = dyn Fn(&Vec3) -> Vec3 + Send + Sync;
type VfJacFn = dyn Fn(&Vec3) -> Mat3 + Send + Sync;

/// Three-dimensional operator written as a vector field `w`, acting as `θ ↦ w × θ`.
#[derive(Clone)]
pub struct VectorField3 {
    name: String,
    eval: Arc<VfEvalFn>,
    jacobian: Option<Arc<VfJacFn>>,
    fd_step: f64,
    excluded_radius: f64,
}

impl fmt::Debug for VectorField3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VectorField3")
            .field("name", &self.name)
            .field("analytic_jacobian", &self.jacobian.is_some())
            .field("fd_step", &self.fd_step)
            .finish()
    }
}

impl VectorField3 {
    pub fn new<F>(name: impl Into<String>, eval: F) -> Self
    where
        F: Fn(&Vec3) -> Vec3 + Send + Sync + 'static,
    {
        VectorField3 {
            name: name.into(),
            eval: Arc::new(eval),
            jacobian: None,
            fd_step: DEFAULT_FD_STEP,
            excluded_radius: 0.0,
        }
    }

    pub fn with_jacobian<F>(mut self, jac: F) -> Self
    where
        F: Fn(&Vec3) -> Mat3 + Send + Sync + 'static,
    {
        self.jacobian = Some(Arc::new(jac));
        self
    }

    pub fn with_fd_step(mut self, h: f64) -> Self {
        assert!(h > 0.0);
        self.fd_step = h;
        self
    }

    pub fn with_excluded_radius(mut self, r: f64) -> Self {
        self.excluded_radius = r;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn fd_step(&self) -> f64 {
        self.fd_step
    }

    pub fn excluded_radius(&self) -> f64 {
        self.excluded_radius
    }

    pub fn has_analytic_jacobian(&self) -> bool {
        self.jacobian.is_some()
    }

    pub fn in_domain(&self, x: &Vec3) -> bool {
        self.excluded_radius <= 0.0 || norm(x) >= self.excluded_radius
    }

    #[inline]
    pub fn eval(&self, x: &Vec3) -> Vec3 {
        (self.eval)(x)
    }

    /// `m[i][j] = ∂w_i/∂x_j`.
    pub fn jacobian(&self, x: &Vec3) -> Mat3 {
        match &self.jacobian {
            Some(j) => j(x),
            None => self.fd_jacobian(x, self.fd_step),
        }
    }

    pub fn fd_jacobian(&self, x: &Vec3, h: f64) -> Mat3 {
        let mut m = [[0.0; 3]; 3];
        for j in 0..3 {
            let mut xp = *x;
            let mut xm = *x;
            xp[j] += h;
            xm[j] -= h;
            let wp = self.eval(&xp);
            let wm = self.eval(&xm);
            for i in 0..3 {
                m[i][j] = (wp[i] - wm[i]) / (2.0 * h);
            }
        }
        m
    }

    pub fn curl(&self, x: &Vec3) -> Vec3 {
        curl_from_jacobian(&self.jacobian(x))
    }

    /// Antisymmetric-matrix form of the field.
    pub fn to_operator(&self) -> OperatorField {
        let w = self.clone();
        let mut op = OperatorField::new(self.name.clone(), 3, move |x: &[f64]| {
            let v = w.eval(&[x[0], x[1], x[2]]);
            bivector_from_w(&v)
        })
        .with_fd_step(self.fd_step)
        .with_excluded_radius(self.excluded_radius);
        if self.jacobian.is_some() {
            let w = self.clone();
            op = op.with_deriv(move |x: &[f64], m: usize| {
                let jac = w.jacobian(&[x[0], x[1], x[2]]);
                Bivector::from_upper(3, &[-jac[2][m], jac[1][m], -jac[0][m]])
            });
        }
        op
    }

    /// Recovers `w` from a three-dimensional operator.
    pub fn from_operator(op: &OperatorField) -> Result<Self> {
        if op.dim() != 3 {
            return Err(HelidiffError::Contract(format!(
                "vector-field form needs a 3D operator, '{}' has dimension {}",
                op.name(),
                op.dim()
            )));
        }
        let o = op.clone();
        let mut vf = VectorField3::new(op.name().to_string(), move |x: &Vec3| {
            w_from_bivector(&o.eval(x))
        })
        .with_fd_step(op.fd_step())
        .with_excluded_radius(op.excluded_radius());
        if op.has_analytic_deriv() {
            let o = op.clone();
            vf = vf.with_jacobian(move |x: &Vec3| {
                let mut m = [[0.0; 3]; 3];
                for (j, _) in x.iter().enumerate() {
                    let d = w_from_bivector(&o.deriv(x, j));
                    for i in 0..3 {
                        m[i][j] = d[i];
                    }
                }
                m
            });
        }
        Ok(vf)
    }
}

/// `J^{12} = -w_z`, `J^{13} = w_y`, `J^{23} = -w_x`.
#[inline]
pub fn bivector_from_w(w: &Vec3) -> Bivector {
    Bivector::from_upper(3, &[-w[2], w[1], -w[0]])
}

#[inline]
pub fn w_from_bivector(b: &Bivector) -> Vec3 {
    let u = b.upper();
    [-u[2], u[1], -u[0]]
}

pub fn curl_from_jacobian(m: &Mat3) -> Vec3 {
    [m[2][1] - m[1][2], m[0][2] - m[2][0], m[1][0] - m[0][1]]
}

type ScalarFn = dyn Fn(&[f64]) -> f64 + Send + Sync;
type GradFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;

/// Energy function `H₀(x)` with optional analytic gradient.
#[derive(Clone)]
pub struct Hamiltonian {
    name: String,
    eval: Arc<ScalarFn>,
    grad: Option<Arc<GradFn>>,
    fd_step: f64,
}

impl fmt::Debug for Hamiltonian {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Hamiltonian")
            .field("name", &self.name)
            .field("analytic_grad", &self.grad.is_some())
            .finish()
    }
}

impl Hamiltonian {
    pub fn new<F>(name: impl Into<String>, eval: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        Hamiltonian {
            name: name.into(),
            eval: Arc::new(eval),
            grad: None,
            fd_step: DEFAULT_FD_STEP,
        }
    }

    pub fn with_grad<F>(mut self, grad: F) -> Self
    where
        F: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        self.grad = Some(Arc::new(grad));
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn has_analytic_grad(&self) -> bool {
        self.grad.is_some()
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.eval)(x)
    }

    #[inline]
    pub fn grad_into(&self, x: &[f64], out: &mut [f64]) {
        match &self.grad {
            Some(g) => g(x, out),
            None => self.fd_grad_into(x, out, self.fd_step),
        }
    }

    pub fn grad(&self, x: &[f64]) -> PointBuf {
        let mut g: PointBuf = smallvec![0.0; x.len()];
        self.grad_into(x, &mut g);
        g
    }

    pub fn fd_grad_into(&self, x: &[f64], out: &mut [f64], h: f64) {
        let mut xp: PointBuf = SmallVec::from_slice(x);
        for (m, o) in out.iter_mut().enumerate().take(x.len()) {
            let x0 = xp[m];
            xp[m] = x0 + h;
            let fp = self.eval(&xp);
            xp[m] = x0 - h;
            let fm = self.eval(&xp);
            xp[m] = x0;
            *o = (fp - fm) / (2.0 * h);
        }
    }
}

type MatFn = dyn Fn(&[f64]) -> Vec<f64> + Send + Sync;

/// Jacobian `R^k_r = ∂y^k/∂x^r` of the map into the coordinates where the noise is white.
#[derive(Clone)]
pub struct CoordinateMap {
    name: String,
    dim: usize,
    jacobian: Option<Arc<MatFn>>,
}

impl fmt::Debug for CoordinateMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoordinateMap")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("identity", &self.is_identity())
            .finish()
    }
}

impl CoordinateMap {
    pub fn identity(dim: usize) -> Self {
        CoordinateMap {
            name: "identity".into(),
            dim,
            jacobian: None,
        }
    }

    /// `R` returned row-major, `r[k * n + r] = ∂y^k/∂x^r`.
    pub fn new<F>(name: impl Into<String>, dim: usize, jacobian: F) -> Self
    where
        F: Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        CoordinateMap {
            name: name.into(),
            dim,
            jacobian: Some(Arc::new(jacobian)),
        }
    }

    /// Constant diagonal stretch `y^k = s_k x^k`.
    pub fn diag_stretch(factors: &[f64]) -> Self {
        let n = factors.len();
        let f = factors.to_vec();
        CoordinateMap::new(format!("diag_stretch{:?}", factors), n, move |_x| {
            let mut r = vec![0.0; n * n];
            for k in 0..n {
                r[k * n + k] = f[k];
            }
            r
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_identity(&self) -> bool {
        self.jacobian.is_none()
    }

    pub fn jacobian(&self, x: &[f64]) -> Vec<f64> {
        match &self.jacobian {
            Some(j) => j(x),
            None => {
                let n = self.dim;
                let mut r = vec![0.0; n * n];
                for k in 0..n {
                    r[k * n + k] = 1.0;
                }
                r
            }
        }
    }

    /// `|det R(x)|`.
    pub fn abs_det(&self, x: &[f64]) -> f64 {
        if self.is_identity() {
            return 1.0;
        }
        let n = self.dim;
        nalgebra::DMatrix::from_row_slice(n, n, &self.jacobian(x))
            .determinant()
            .abs()
    }
}

/// Noise matrix `M^{ik} = J^{ir} R^k_r`, row-major. With the identity map this is `J` itself.
pub fn noise_matrix(j: &Bivector, map: &CoordinateMap, x: &[f64]) -> MatBuf {
    let n = j.dim();
    let mut dense: MatBuf = smallvec![0.0; n * n];
    for i in 0..n {
        for q in 0..n {
            dense[i * n + q] = j.get(i, q);
        }
    }
    if map.is_identity() {
        return dense;
    }
    let r = map.jacobian(x);
    let mut m: MatBuf = smallvec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            let mut s = 0.0;
            for q in 0..n {
                s += dense[i * n + q] * r[k * n + q];
            }
            m[i * n + k] = s;
        }
    }
    m
}

#[inline]
pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[inline]
pub fn dot3(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross3(a: &Vec3, b: &Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_field() -> VectorField3 {
        VectorField3::new("test", |x: &Vec3| {
            [x[1].sin() + 2.0, x[2] * x[0], (x[0] + x[1]).cos()]
        })
    }

    #[test]
    fn bivector_antisymmetry_and_slots() {
        let mut b = Bivector::zeros(4);
        b.set(0, 3, 2.5);
        b.set(2, 1, -1.0);
        assert_eq!(b.get(0, 3), 2.5);
        assert_eq!(b.get(3, 0), -2.5);
        assert_eq!(b.get(1, 2), 1.0);
        assert_eq!(b.get(2, 2), 0.0);
        let d = b.to_dense();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(d[i * 4 + j], -d[j * 4 + i]);
            }
        }
    }

    #[test]
    fn three_dim_apply_is_cross_product() {
        let w = [0.3, -1.2, 2.0];
        let theta = [1.0, 0.5, -0.25];
        let v = bivector_from_w(&w).apply(&theta);
        let c = cross3(&w, &theta);
        for i in 0..3 {
            assert!((v[i] - c[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn round_trip_is_bitwise() {
        let vf = sample_field();
        let back = VectorField3::from_operator(&vf.to_operator()).unwrap();
        for x in [[0.1, 0.2, 0.3], [-1.0, 4.0, 2.5]] {
            let a = vf.eval(&x);
            let b = back.eval(&x);
            for i in 0..3 {
                assert_eq!(a[i].to_bits(), b[i].to_bits());
            }
        }
    }

    #[test]
    fn apply_rejects_dimension_mismatch() {
        let op = sample_field().to_operator();
        assert!(matches!(
            op.apply(&[0.0, 0.0, 0.0], &[1.0, 0.0]),
            Err(HelidiffError::Contract(_))
        ));
    }

    #[test]
    fn fd_second_derivative_of_quadratic_entry() {
        let op = OperatorField::new("quad", 2, |x: &[f64]| {
            Bivector::from_upper(2, &[x[0] * x[1] + x[0] * x[0]])
        });
        let d = op.second_deriv(&[0.4, -0.7], 0, 1);
        assert!((d.get(0, 1) - 1.0).abs() < 1e-8);
        let d = op.second_deriv(&[0.4, -0.7], 0, 0);
        assert!((d.get(0, 1) - 2.0).abs() < 1e-8);
    }

    #[test]
    fn stretch_map_determinant() {
        let r = CoordinateMap::diag_stretch(&[2.0, 1.0, 3.0]);
        assert!((r.abs_det(&[0.0, 0.0, 0.0]) - 6.0).abs() < 1e-12);
        assert!(CoordinateMap::identity(3).is_identity());
    }
}
