//! Named operators, Hamiltonians, Casimir witnesses and volume weights used by the
//! built-in scenarios. Every operator ships an analytic first derivative.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::{HelidiffError, Result};
use crate::operator::{Bivector, Hamiltonian, Mat3, OperatorField, Vec3, VectorField3};

/// Parameter map attached to a catalog name.
pub type Params = BTreeMap<String, f64>;

pub const OPERATOR_NAMES: &[&str] = &[
    "uniform_z",
    "grad_casimir",
    "lambda_grad_casimir",
    "beltrami",
    "spiral",
    "antisym",
    "unit_norm",
    "landau_lifshitz",
    "euler_rigid_body",
    "symplectic",
];

pub const HAMILTONIAN_NAMES: &[&str] = &["none", "rigid_body", "half_square", "cosine"];

/// Radius of the ball around the origin removed from the Landau-Lifshitz domain.
pub const LANDAU_LIFSHITZ_EXCLUDED_RADIUS: f64 = 1e-3;

/// A catalog entry is either a 3D vector-field operator or a general `n`-dimensional one.
#[derive(Clone, Debug)]
pub enum CatalogOperator {
    Field3(VectorField3),
    General(OperatorField),
}

impl CatalogOperator {
    pub fn operator(&self) -> OperatorField {
        match self {
            CatalogOperator::Field3(w) => w.to_operator(),
            CatalogOperator::General(op) => op.clone(),
        }
    }

    pub fn field3(&self) -> Option<&VectorField3> {
        match self {
            CatalogOperator::Field3(w) => Some(w),
            CatalogOperator::General(_) => None,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            CatalogOperator::Field3(_) => 3,
            CatalogOperator::General(op) => op.dim(),
        }
    }
}

fn param(params: &Params, key: &str, default: f64) -> f64 {
    params.get(key).copied().unwrap_or(default)
}

fn check_keys(name: &str, params: &Params, allowed: &[&str]) -> Result<()> {
    for k in params.keys() {
        if !allowed.contains(&k.as_str()) {
            return Err(HelidiffError::Config(format!(
                "operator '{name}' has no parameter '{k}' (accepted: {allowed:?})"
            )));
        }
    }
    Ok(())
}

/// Looks up a catalog operator by name.
pub fn catalog_operator(name: &str, params: &Params) -> Result<CatalogOperator> {
    let op = match name {
        "uniform_z" => {
            check_keys(name, params, &[])?;
            CatalogOperator::Field3(uniform_z())
        }
        "grad_casimir" => {
            check_keys(name, params, &[])?;
            CatalogOperator::Field3(grad_casimir())
        }
        "lambda_grad_casimir" => {
            check_keys(name, params, &[])?;
            CatalogOperator::Field3(lambda_grad_casimir())
        }
        "beltrami" => {
            check_keys(name, params, &[])?;
            CatalogOperator::Field3(beltrami())
        }
        "spiral" => {
            check_keys(name, params, &[])?;
            CatalogOperator::Field3(spiral())
        }
        "antisym" => {
            check_keys(name, params, &[])?;
            CatalogOperator::Field3(antisym())
        }
        "unit_norm" => {
            check_keys(name, params, &[])?;
            CatalogOperator::Field3(unit_norm())
        }
        "landau_lifshitz" => {
            check_keys(name, params, &["gamma", "sigma", "c"])?;
            CatalogOperator::Field3(landau_lifshitz(
                param(params, "gamma", 1.0),
                param(params, "sigma", 0.5),
                param(params, "c", 0.5),
            ))
        }
        "euler_rigid_body" => {
            check_keys(name, params, &[])?;
            CatalogOperator::Field3(euler_rigid_body())
        }
        "symplectic" => {
            check_keys(name, params, &["m"])?;
            let m = param(params, "m", 1.0);
            if m < 1.0 || m.fract() != 0.0 {
                return Err(HelidiffError::Config(format!(
                    "symplectic needs a positive integer m, got {m}"
                )));
            }
            CatalogOperator::General(symplectic(m as usize))
        }
        other => {
            return Err(HelidiffError::Config(format!(
                "unknown operator '{other}'; valid names: {}",
                OPERATOR_NAMES.join(", ")
            )))
        }
    };
    Ok(op)
}

/// `w = ∂_z`.
pub fn uniform_z() -> VectorField3 {
    VectorField3::new("uniform_z", |_x: &Vec3| [0.0, 0.0, 1.0])
        .with_jacobian(|_x: &Vec3| [[0.0; 3]; 3])
}

/// `w = ∇C` with `C = z − cos x − cos y`.
pub fn grad_casimir() -> VectorField3 {
    VectorField3::new("grad_casimir", |x: &Vec3| [x[0].sin(), x[1].sin(), 1.0]).with_jacobian(
        |x: &Vec3| {
            [
                [x[0].cos(), 0.0, 0.0],
                [0.0, x[1].cos(), 0.0],
                [0.0, 0.0, 0.0],
            ]
        },
    )
}

/// `λ = √(1 + cos²x)`.
pub fn lambda_profile(x: &[f64]) -> f64 {
    (1.0 + x[0].cos().powi(2)).sqrt()
}

/// `w = λ∇C`, `λ = √(1 + cos²x)`, `C = z − cos x − cos y`.
pub fn lambda_grad_casimir() -> VectorField3 {
    VectorField3::new("lambda_grad_casimir", |x: &Vec3| {
        let l = lambda_profile(x);
        [l * x[0].sin(), l * x[1].sin(), l]
    })
    .with_jacobian(|x: &Vec3| {
        let (s, c) = x[0].sin_cos();
        let l = (1.0 + c * c).sqrt();
        let dl = -c * s / l;
        [
            [dl * s + l * c, 0.0, 0.0],
            [dl * x[1].sin(), l * x[1].cos(), 0.0],
            [dl, 0.0, 0.0],
        ]
    })
}

/// `w = (cos z + sin z) ∂_x + (cos z − sin z) ∂_y`; curl w = w.
pub fn beltrami() -> VectorField3 {
    VectorField3::new("beltrami", |x: &Vec3| {
        let (s, c) = x[2].sin_cos();
        [c + s, c - s, 0.0]
    })
    .with_jacobian(|x: &Vec3| {
        let (s, c) = x[2].sin_cos();
        [[0.0, 0.0, c - s], [0.0, 0.0, -s - c], [0.0, 0.0, 0.0]]
    })
}

/// `w = (cos z − sin y, −sin z, cos y)`; curl w = w.
pub fn spiral() -> VectorField3 {
    VectorField3::new("spiral", |x: &Vec3| {
        [x[2].cos() - x[1].sin(), -x[2].sin(), x[1].cos()]
    })
    .with_jacobian(|x: &Vec3| {
        [
            [0.0, -x[1].cos(), -x[2].sin()],
            [0.0, 0.0, -x[2].cos()],
            [0.0, -x[1].sin(), 0.0],
        ]
    })
}

/// `w = ∂_x + (sin x + cos y) ∂_y + cos x ∂_z`.
pub fn antisym() -> VectorField3 {
    VectorField3::new("antisym", |x: &Vec3| {
        [1.0, x[0].sin() + x[1].cos(), x[0].cos()]
    })
    .with_jacobian(|x: &Vec3| {
        [
            [0.0, 0.0, 0.0],
            [x[0].cos(), -x[1].sin(), 0.0],
            [-x[0].sin(), 0.0, 0.0],
        ]
    })
}

/// `ŵ = (cos y, cos x, sin y) / √(1 + cos²x)`, a unit-norm field.
pub fn unit_norm() -> VectorField3 {
    VectorField3::new("unit_norm", |x: &Vec3| {
        let u = 1.0 / (1.0 + x[0].cos().powi(2)).sqrt();
        [u * x[1].cos(), u * x[0].cos(), u * x[1].sin()]
    })
    .with_jacobian(|x: &Vec3| {
        let (sx, cx) = x[0].sin_cos();
        let (sy, cy) = x[1].sin_cos();
        let u = 1.0 / (1.0 + cx * cx).sqrt();
        let du = cx * sx * u * u * u;
        [
            [du * cy, -u * sy, 0.0],
            [du * cx - u * sx, 0.0, 0.0],
            [du * sy, u * cy, 0.0],
        ]
    })
}

/// Landau-Lifshitz operator `w = γ𝓗 − (σ/|x|²) 𝓗 × x` with effective field `𝓗 = (c, 0, z)`.
pub fn landau_lifshitz(gamma: f64, sigma: f64, c: f64) -> VectorField3 {
    VectorField3::new("landau_lifshitz", move |x: &Vec3| {
        let q = 1.0 / (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]);
        [
            gamma * c + sigma * x[2] * x[1] * q,
            sigma * x[2] * (c - x[0]) * q,
            gamma * x[2] - sigma * c * x[1] * q,
        ]
    })
    .with_jacobian(move |x: &Vec3| landau_lifshitz_jacobian(gamma, sigma, c, x))
    .with_excluded_radius(LANDAU_LIFSHITZ_EXCLUDED_RADIUS)
}

fn landau_lifshitz_jacobian(gamma: f64, sigma: f64, c: f64, x: &Vec3) -> Mat3 {
    let (px, py, pz) = (x[0], x[1], x[2]);
    let q = 1.0 / (px * px + py * py + pz * pz);
    let q2 = q * q;
    // ∂_j (1/|x|²) = -2 x_j / |x|⁴
    let dq = [-2.0 * px * q2, -2.0 * py * q2, -2.0 * pz * q2];
    let a = sigma * pz * py;
    let b = sigma * pz * (c - px);
    let e = -sigma * c * py;
    [
        [a * dq[0], sigma * pz * q + a * dq[1], sigma * py * q + a * dq[2]],
        [
            -sigma * pz * q + b * dq[0],
            b * dq[1],
            sigma * (c - px) * q + b * dq[2],
        ],
        [e * dq[0], -sigma * c * q + e * dq[1], gamma + e * dq[2]],
    ]
}

/// Rigid-body operator `w = x` (angular momentum).
pub fn euler_rigid_body() -> VectorField3 {
    VectorField3::new("euler_rigid_body", |x: &Vec3| *x).with_jacobian(|_x: &Vec3| {
        [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
    })
}

/// Canonical symplectic operator `Σ_{i=1}^{m} ∂_{m+i} ∧ ∂_i` on `ℝ^{2m}`.
pub fn symplectic(m: usize) -> OperatorField {
    let n = 2 * m;
    let mut b = Bivector::zeros(n);
    for i in 0..m {
        b.set(m + i, i, 1.0);
    }
    let zero = Bivector::zeros(n);
    OperatorField::new(format!("symplectic({m})"), n, move |_x: &[f64]| b.clone())
        .with_deriv(move |_x: &[f64], _m: usize| zero.clone())
}

type ScalarFn = dyn Fn(&[f64]) -> f64 + Send + Sync;
type GradFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;

/// Integrating factor and Casimir for a 3D Poisson operator, `w = λ∇C`.
#[derive(Clone)]
pub struct CasimirWitness {
    pub lambda: Arc<ScalarFn>,
    pub casimir: Arc<ScalarFn>,
    pub casimir_grad: Arc<GradFn>,
}

impl std::fmt::Debug for CasimirWitness {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("CasimirWitness")
    }
}

fn trig_casimir() -> (Arc<ScalarFn>, Arc<GradFn>) {
    (
        Arc::new(|x: &[f64]| x[2] - x[0].cos() - x[1].cos()),
        Arc::new(|x: &[f64], g: &mut [f64]| {
            g[0] = x[0].sin();
            g[1] = x[1].sin();
            g[2] = 1.0;
        }),
    )
}

/// Registered `(λ, C)` pairs for the Poisson operators of the catalog.
pub fn casimir_witness(name: &str) -> Option<CasimirWitness> {
    match name {
        "uniform_z" => Some(CasimirWitness {
            lambda: Arc::new(|_x: &[f64]| 1.0),
            casimir: Arc::new(|x: &[f64]| x[2]),
            casimir_grad: Arc::new(|_x: &[f64], g: &mut [f64]| {
                g[0] = 0.0;
                g[1] = 0.0;
                g[2] = 1.0;
            }),
        }),
        "grad_casimir" => {
            let (c, dc) = trig_casimir();
            Some(CasimirWitness {
                lambda: Arc::new(|_x: &[f64]| 1.0),
                casimir: c,
                casimir_grad: dc,
            })
        }
        "lambda_grad_casimir" => {
            let (c, dc) = trig_casimir();
            Some(CasimirWitness {
                lambda: Arc::new(lambda_profile),
                casimir: c,
                casimir_grad: dc,
            })
        }
        "euler_rigid_body" => Some(CasimirWitness {
            lambda: Arc::new(|_x: &[f64]| 1.0),
            casimir: Arc::new(|x: &[f64]| 0.5 * (x[0] * x[0] + x[1] * x[1] + x[2] * x[2])),
            casimir_grad: Arc::new(|x: &[f64], g: &mut [f64]| g[..3].copy_from_slice(&x[..3])),
        }),
        _ => None,
    }
}

/// Looks up a named Hamiltonian. `none` yields `Ok(None)`.
pub fn catalog_hamiltonian(name: &str, params: &Params) -> Result<Option<Hamiltonian>> {
    match name {
        "none" => {
            check_keys(name, params, &[])?;
            Ok(None)
        }
        "rigid_body" => {
            check_keys(name, params, &["ix", "iy", "iz"])?;
            let inertia = [
                param(params, "ix", 1.0),
                param(params, "iy", 2.0),
                param(params, "iz", 3.0),
            ];
            if inertia.iter().any(|v| *v <= 0.0) {
                return Err(HelidiffError::Config(
                    "rigid_body moments of inertia must be positive".into(),
                ));
            }
            Ok(Some(rigid_body_energy(inertia)))
        }
        "half_square" => {
            check_keys(name, params, &[])?;
            Ok(Some(half_square()))
        }
        "cosine" => {
            check_keys(name, params, &["ax", "ay", "az"])?;
            Ok(Some(cosine_energy([
                param(params, "ax", 1.0),
                param(params, "ay", 1.0),
                param(params, "az", 1.0),
            ])))
        }
        other => Err(HelidiffError::Config(format!(
            "unknown hamiltonian '{other}'; valid names: {}",
            HAMILTONIAN_NAMES.join(", ")
        ))),
    }
}

/// `H₀ = (x²/I_x + y²/I_y + z²/I_z) / 2`.
pub fn rigid_body_energy(inertia: [f64; 3]) -> Hamiltonian {
    let inv = [1.0 / inertia[0], 1.0 / inertia[1], 1.0 / inertia[2]];
    Hamiltonian::new("rigid_body", move |x: &[f64]| {
        0.5 * (x[0] * x[0] * inv[0] + x[1] * x[1] * inv[1] + x[2] * x[2] * inv[2])
    })
    .with_grad(move |x: &[f64], g: &mut [f64]| {
        g[0] = x[0] * inv[0];
        g[1] = x[1] * inv[1];
        g[2] = x[2] * inv[2];
    })
}

/// `H₀ = |x|²/2` in any dimension.
pub fn half_square() -> Hamiltonian {
    Hamiltonian::new("half_square", |x: &[f64]| {
        0.5 * x.iter().map(|v| v * v).sum::<f64>()
    })
    .with_grad(|x: &[f64], g: &mut [f64]| g.copy_from_slice(x))
}

/// `H₀ = a_x cos x + a_y cos y + a_z cos z`, periodic on a `2π` box.
pub fn cosine_energy(a: [f64; 3]) -> Hamiltonian {
    Hamiltonian::new("cosine", move |x: &[f64]| {
        a[0] * x[0].cos() + a[1] * x[1].cos() + a[2] * x[2].cos()
    })
    .with_grad(move |x: &[f64], g: &mut [f64]| {
        g[0] = -a[0] * x[0].sin();
        g[1] = -a[1] * x[1].sin();
        g[2] = -a[2] * x[2].sin();
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field(name: &str) -> VectorField3 {
        catalog_operator(name, &Params::new())
            .unwrap()
            .field3()
            .cloned()
            .unwrap()
    }

    #[test]
    fn point_values() {
        assert_eq!(field("uniform_z").eval(&[1.0, -2.0, 3.0]), [0.0, 0.0, 1.0]);
        assert_eq!(field("beltrami").eval(&[0.0, 0.0, 0.0]), [1.0, 1.0, 0.0]);
        assert_eq!(field("grad_casimir").eval(&[0.0, 0.0, 0.0]), [0.0, 0.0, 1.0]);
    }

    #[test]
    fn symplectic_one_is_canonical_pair() {
        let op = symplectic(1);
        let j = op.eval(&[0.3, 0.4]);
        assert_eq!(j.get(0, 1), -1.0);
        assert_eq!(j.get(1, 0), 1.0);
    }

    #[test]
    fn euler_apply_matches_cross_product() {
        let op = field("euler_rigid_body").to_operator();
        let v = op.apply(&[1.0, 2.0, 3.0], &[1.0, 1.0, 1.0]).unwrap();
        // independent route: explicit antisymmetric matrix [x]_× times θ
        let x = [1.0, 2.0, 3.0];
        let m = [[0.0, -x[2], x[1]], [x[2], 0.0, -x[0]], [-x[1], x[0], 0.0]];
        for i in 0..3 {
            let expect: f64 = (0..3).map(|j| m[i][j]).sum();
            assert!((v[i] - expect).abs() < 1e-15);
        }
        assert_eq!(v.as_slice(), &[-1.0, 2.0, -1.0]);
    }

    #[test]
    fn unknown_name_lists_valid_names() {
        let err = catalog_operator("nope", &Params::new()).unwrap_err();
        let msg = err.to_string();
        for name in OPERATOR_NAMES {
            assert!(msg.contains(name), "{msg}");
        }
    }

    #[test]
    fn unknown_parameter_rejected() {
        let mut p = Params::new();
        p.insert("zeta".into(), 1.0);
        assert!(catalog_operator("landau_lifshitz", &p).is_err());
        assert!(catalog_operator("beltrami", &p).is_err());
    }

    #[test]
    fn landau_lifshitz_matches_cross_product_form() {
        let (g, s, c) = (0.7, 0.4, 1.3);
        let w = landau_lifshitz(g, s, c);
        let x = [0.3, -0.8, 1.1];
        let h = [c, 0.0, x[2]];
        let r2 = x[0] * x[0] + x[1] * x[1] + x[2] * x[2];
        let hx = crate::operator::cross3(&h, &x);
        let expect = [
            g * h[0] - s / r2 * hx[0],
            g * h[1] - s / r2 * hx[1],
            g * h[2] - s / r2 * hx[2],
        ];
        let got = w.eval(&x);
        for i in 0..3 {
            assert!((got[i] - expect[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn witnesses_reproduce_operators() {
        for name in ["uniform_z", "grad_casimir", "lambda_grad_casimir", "euler_rigid_body"] {
            let w = field(name);
            let wit = casimir_witness(name).unwrap();
            for x in [[0.3, -1.1, 0.7], [2.0, 0.5, -2.5]] {
                let mut g = [0.0; 3];
                (wit.casimir_grad)(&x, &mut g);
                let l = (wit.lambda)(&x);
                let v = w.eval(&x);
                for i in 0..3 {
                    assert!((v[i] - l * g[i]).abs() < 1e-12);
                }
            }
        }
    }
}
