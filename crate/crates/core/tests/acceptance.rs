//! End-to-end acceptance checks. Each test prints one `PASS`/`FAIL` line.
//!
//! Run with `cargo test --release -p helidiff-core --test acceptance -- --nocapture`.

use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

use helidiff_core::catalog;
use helidiff_core::classify::{
    cocurrent_residual, extend_to_measure_preserving, field_charge_3d, helicity_density,
    OperatorClass, VolumeWeight,
};
use helidiff_core::config::{ScenarioConfig, SolverConfig};
use helidiff_core::diagnostics::{entropy, EntropyAux, EntropyKind};
use helidiff_core::fokker_planck::{
    compute_beta, make_equilibrium, EquilibriumSpec, FokkerPlanck3, FpFriction, FpModel,
};
use helidiff_core::grid::{DensityGrid, GridGeometry};
use helidiff_core::operator::{Hamiltonian, VectorField3};
use helidiff_core::pipeline::{cmd_classify, cmd_run, RunSummary};
use helidiff_core::sampling::SampleSpec;
use helidiff_core::scenarios::builtin;
use helidiff_core::sde::{
    step_stratonovich, DomainSpec, Ensemble, FrictionSpec, InitSpec, NoiseSpec, SdeSystem,
    StratonovichScheme,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TWO_PI: f64 = 2.0 * PI;

fn report(n: u32, what: &str, pass: bool, detail: String) {
    println!(
        "criterion {n:>2} [{}] {what}: {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {n} failed: {what}: {detail}");
}

fn run_builtin(name: &str) -> RunSummary {
    let dir = tempfile::tempdir().unwrap();
    cmd_run(&builtin(name).unwrap(), dir.path()).unwrap().summary
}

/// The fig7 run is shared by the Beltrami and cross-validation checks.
fn fig7() -> &'static RunSummary {
    static CELL: OnceLock<RunSummary> = OnceLock::new();
    CELL.get_or_init(|| run_builtin("fig7"))
}

fn l1(s: &RunSummary, key: &str) -> f64 {
    s.comparisons[key].l1_distance
}

#[test]
fn criterion_01_classification_table() {
    let expected = [
        ("uniform_z", OperatorClass::Poisson),
        ("grad_casimir", OperatorClass::Poisson),
        ("lambda_grad_casimir", OperatorClass::Poisson),
        ("euler_rigid_body", OperatorClass::Poisson),
        ("beltrami", OperatorClass::StrongBeltrami),
        ("spiral", OperatorClass::StrongBeltrami),
        ("antisym", OperatorClass::GeneralAntisymmetric),
        ("unit_norm", OperatorClass::GeneralAntisymmetric),
        ("landau_lifshitz", OperatorClass::GeneralAntisymmetric),
    ];
    let mut wrong = Vec::new();
    for (name, want) in expected {
        let report = cmd_classify(&ScenarioConfig::minimal("c1", name), 1000).unwrap();
        if report.label != want {
            wrong.push(format!("{name}: {} (want {want})", report.label));
        }
    }

    // Closed forms: h = 2 for the Beltrami field, 𝔅 = −4 sin x cos y for antisym.
    let pts = SampleSpec::cube(3, TWO_PI, 1000).points(|_| true);
    let beltrami = catalog::beltrami();
    let antisym = catalog::antisym();
    let antisym_fd = VectorField3::new("antisym_fd", |x: &[f64; 3]| {
        [1.0, x[0].sin() + x[1].cos(), x[0].cos()]
    });
    let beltrami_fd = VectorField3::new("beltrami_fd", |x: &[f64; 3]| {
        let (s, c) = x[2].sin_cos();
        [c + s, c - s, 0.0]
    });
    let (mut h_an, mut h_fd, mut q_an, mut q_fd) = (0.0_f64, 0.0_f64, 0.0_f64, 0.0_f64);
    for p in &pts {
        let x = [p[0], p[1], p[2]];
        let charge = -4.0 * x[0].sin() * x[1].cos();
        h_an = h_an.max((helicity_density(&beltrami, &x) - 2.0).abs());
        h_fd = h_fd.max((helicity_density(&beltrami_fd, &x) - 2.0).abs());
        q_an = q_an.max((field_charge_3d(&antisym, &x) - charge).abs());
        q_fd = q_fd.max((field_charge_3d(&antisym_fd, &x) - charge).abs());
    }
    let pass = wrong.is_empty() && h_an <= 1e-6 && q_an <= 1e-6 && h_fd <= 1e-3 && q_fd <= 1e-3;
    report(
        1,
        "classification labels and closed-form h, charge",
        pass,
        format!(
            "mislabelled {wrong:?}; max|h−2| analytic {h_an:.1e} fd {h_fd:.1e}; \
             max|𝔅+4 sin x cos y| analytic {q_an:.1e} fd {q_fd:.1e}"
        ),
    );
}

/// Smooth positive density built from a few random Fourier modes.
fn random_positive(geom: &GridGeometry, seed: u64) -> DensityGrid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let modes: Vec<([f64; 3], f64, f64)> = (0..6)
        .map(|_| {
            let mut k = [0.0; 3];
            while k == [0.0; 3] {
                k = [0, 1, 2].map(|_| rng.random_range(-2..=2) as f64);
            }
            (k, rng.random_range(-1.0..1.0), rng.random_range(0.0..TWO_PI))
        })
        .collect();
    let scale = 0.8 / modes.iter().map(|m| m.1.abs()).sum::<f64>();
    DensityGrid::from_fn(geom.clone(), |x| {
        1.0 + scale
            * modes
                .iter()
                .map(|(k, a, ph)| a * (k[0] * x[0] + k[1] * x[1] + k[2] * x[2] + ph).cos())
                .sum::<f64>()
    })
    .normalized()
    .unwrap()
}

/// Beltrami grid run from a random positive density to `t = 50`; returns the final
/// deviation and the worst per-step entropy change.
fn beltrami_grid_run() -> (f64, f64, f64) {
    let geom = GridGeometry::cube(32, TWO_PI);
    let model = FpModel::diffusion(catalog::beltrami().to_operator()).unwrap();
    let mut solver = FokkerPlanck3::new(&model, geom.clone()).unwrap();
    let mut f = random_positive(&geom, 7);
    let t_end = 50.0;
    let steps = (t_end / solver.stable_dt(0.0)).ceil() as usize;
    let dt = t_end / steps as f64;
    let mut s_prev = entropy(&f, EntropyKind::S, &EntropyAux::None).unwrap().value;
    let mut worst = 0.0_f64;
    for _ in 0..steps {
        solver.step(&mut f, dt).unwrap();
        let s = entropy(&f, EntropyKind::S, &EntropyAux::None).unwrap().value;
        worst = worst.min(s - s_prev);
        s_prev = s;
    }
    (f.max_rel_deviation_from_mean(), worst, (f.mass() - 1.0).abs())
}

fn beltrami_grid() -> &'static (f64, f64, f64) {
    static CELL: OnceLock<(f64, f64, f64)> = OnceLock::new();
    CELL.get_or_init(beltrami_grid_run)
}

#[test]
fn criterion_02_beltrami_flatness() {
    let particles = l1(fig7(), "particles_vs_equilibrium");
    let (dev, _, _) = *beltrami_grid();
    report(
        2,
        "Beltrami equilibrium is flat",
        particles <= 0.05 && dev <= 1e-3,
        format!("fig7 histogram L1 vs flat {particles:.4} (≤ 0.05); grid max|f−f̄|/f̄ at t=50 {dev:.2e} (≤ 1e-3)"),
    );
}

#[test]
fn criterion_03_poisson_equilibria() {
    let f4 = run_builtin("fig4");
    let f5 = run_builtin("fig5");
    let f6 = run_builtin("fig6");
    let (l4, l5) = (l1(&f4, "particles_vs_equilibrium"), l1(&f5, "particles_vs_equilibrium"));
    let c6 = &f6.comparisons["particles_vs_equilibrium"];
    report(
        3,
        "Poisson equilibria (flat, flat, inverse-lambda)",
        l4 <= 0.05 && l5 <= 0.05 && c6.l1_distance <= 0.05 && c6.pearson_correlation >= 0.9,
        format!(
            "fig4 L1 {l4:.4}; fig5 L1 {l5:.4}; fig6 L1 {:.4} pearson {:.4}",
            c6.l1_distance, c6.pearson_correlation
        ),
    );
}

fn euler_system(scheme: StratonovichScheme) -> SdeSystem {
    SdeSystem::new(
        catalog::euler_rigid_body().to_operator(),
        Some(catalog::rigid_body_energy([1.0, 2.0, 3.0])),
        NoiseSpec::isotropic(1.0, 3).unwrap(),
        FrictionSpec::Off,
        DomainSpec::Unbounded,
    )
    .unwrap()
    .with_scheme(scheme)
}

#[test]
fn criterion_04_casimir_conservation() {
    let f2b = run_builtin("fig2b");
    let drift = f2b.particles.as_ref().unwrap().tracker_max_rel_change["casimir"];

    // Mean one-step |ΔC| for three step sizes.
    let sys = euler_system(StratonovichScheme::Heun);
    let casimir = |x: &[f64]| 0.5 * (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]);
    let init = InitSpec::Gaussian {
        center: vec![1.0, 0.5, 0.3],
        sigma: 0.3,
    };
    let dts = [1e-2, 1e-3, 1e-4];
    let mut means = Vec::new();
    for dt in dts {
        let mut ens = Ensemble::sample(&init, &sys.domain, &sys.operator, 4000, 11).unwrap();
        let before: Vec<f64> = ens.positions().chunks(3).map(casimir).collect();
        step_stratonovich(&mut ens, &sys, 0.0, dt).unwrap();
        let after: Vec<f64> = ens.positions().chunks(3).map(casimir).collect();
        let m = before.iter().zip(&after).map(|(a, b)| (a - b).abs()).sum::<f64>()
            / before.len() as f64;
        means.push(m);
    }
    let slope = (means[0] / means[2]).log10() / (dts[0] / dts[2]).log10();
    let means: Vec<String> = means.iter().map(|m| format!("{m:.2e}")).collect();
    report(
        4,
        "Casimir conserved under noise",
        drift <= 1e-2 && slope >= 1.0,
        format!(
            "fig2b max relative drift of C over 2e5 steps {drift:.2e} (≤ 1e-2); \
             one-step |ΔC| [{}] at dt {dts:?}, slope {slope:.2} (≥ 1)",
            means.join(", ")
        ),
    );
}

#[test]
fn criterion_05_charge_obstruction() {
    let geom = GridGeometry::cube(64, TWO_PI);
    let model = FpModel::diffusion(catalog::antisym().to_operator()).unwrap();
    let solver = FokkerPlanck3::new(&model, geom.clone()).unwrap();
    let flat = DensityGrid::uniform(geom.clone());
    let residual = solver.stationary_residual(&flat, 0.0);
    // ‖f₀𝔅/8‖₁ by fine midpoint quadrature of |sin x cos y| / (2V).
    let n = 400;
    let h = TWO_PI / n as f64;
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            let x = -PI + (i as f64 + 0.5) * h;
            let y = -PI + (j as f64 + 0.5) * h;
            s += (x.sin() * y.cos()).abs();
        }
    }
    let volume = TWO_PI.powi(3);
    let target = 0.5 * s * h * h * TWO_PI / volume;
    let rel = (residual - target).abs() / target;
    report(
        5,
        "flat density is not stationary when the charge is non-zero",
        rel <= 0.05,
        format!("residual {residual:.5} vs ‖f₀𝔅/8‖₁ {target:.5}, relative error {rel:.2e} (≤ 5%)"),
    );
}

#[test]
fn criterion_06_discrete_h_theorems() {
    // (a) Beltrami: S non-decreasing.
    let (_, worst_a, _) = *beltrami_grid();

    // (b) Σ_λ non-decreasing on the fig6 grid problem.
    let geom = GridGeometry::cube(32, TWO_PI);
    let model = FpModel::diffusion(catalog::lambda_grad_casimir().to_operator()).unwrap();
    let mut solver = FokkerPlanck3::new(&model, geom.clone()).unwrap();
    let mut f = random_positive(&geom, 3);
    let lam = |x: &[f64]| catalog::lambda_profile(x);
    let sigma = |f: &DensityGrid| {
        entropy(f, EntropyKind::SigmaLambda, &EntropyAux::Lambda(&lam)).unwrap().value
    };
    let dt = solver.stable_dt(0.0);
    let mut prev = sigma(&f);
    let mut worst_b = 0.0_f64;
    for _ in 0..(5.0 / dt) as usize {
        solver.step(&mut f, dt).unwrap();
        let v = sigma(&f);
        worst_b = worst_b.min(v - prev);
        prev = v;
    }

    // (c) measure-preserving operator, friction with energy-consistent β.
    let h = catalog::cosine_energy([1.0, 1.0, 1.0]);
    let model = FpModel::new(
        catalog::grad_casimir().to_operator(),
        Some(h.clone()),
        NoiseSpec::isotropic(1.0, 3).unwrap(),
        FpFriction::EnergyConsistent,
    )
    .unwrap();
    let mut solver = FokkerPlanck3::new(&model, geom.clone()).unwrap();
    let mut f = DensityGrid::from_fn(geom.clone(), |x| {
        (-(x[0] - 1.0).powi(2) - x[1].powi(2) - (x[2] + 0.5).powi(2)).exp() + 0.05
    })
    .normalized()
    .unwrap();
    let beta0 = solver.energy_consistent_beta(&f.values).unwrap();
    let dt = solver.stable_dt(beta0.abs());
    let mut s_prev = entropy(&f, EntropyKind::S, &EntropyAux::None).unwrap().value;
    let mut e_prev = solver.energy(&f).unwrap();
    let (mut worst_c, mut worst_de) = (0.0_f64, 0.0_f64);
    for _ in 0..(5.0 / dt) as usize {
        solver.step(&mut f, dt).unwrap();
        let s = entropy(&f, EntropyKind::S, &EntropyAux::None).unwrap().value;
        let e = solver.energy(&f).unwrap();
        worst_c = worst_c.min(s - s_prev);
        worst_de = worst_de.max(((e - e_prev) / dt).abs());
        s_prev = s;
        e_prev = e;
    }

    // (d) Boltzmann profiles: residual falls about fourfold per grid doubling.
    let mut ratios = Vec::new();
    let casimir: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync> =
        Arc::new(|x: &[f64]| 0.5 * (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]));
    let rigid = catalog::rigid_body_energy([1.0, 2.0, 3.0]);
    let cases: [(&str, VectorField3, Hamiltonian, f64, EquilibriumSpec); 2] = [
        (
            "boltzmann",
            catalog::grad_casimir(),
            h.clone(),
            TWO_PI,
            EquilibriumSpec::Boltzmann {
                hamiltonian: h.clone(),
                beta: 1.0,
            },
        ),
        (
            "casimir_boltzmann",
            catalog::euler_rigid_body(),
            rigid.clone(),
            12.0,
            EquilibriumSpec::CasimirBoltzmann {
                hamiltonian: rigid.clone(),
                beta: 1.0,
                casimirs: vec![(casimir, 0.5)],
            },
        ),
    ];
    for (name, w, ham, side, spec) in cases {
        let model = FpModel::new(
            w.to_operator(),
            Some(ham),
            NoiseSpec::isotropic(1.0, 3).unwrap(),
            FpFriction::Fixed(1.0),
        )
        .unwrap();
        let res: Vec<f64> = [16, 32, 64]
            .iter()
            .map(|n| {
                let g = GridGeometry::cube(*n, side);
                let solver = FokkerPlanck3::new(&model, g.clone()).unwrap();
                solver.stationary_residual(&make_equilibrium(&spec, &g).unwrap(), 1.0)
            })
            .collect();
        ratios.push((name, res[0] / res[1], res[1] / res[2]));
    }
    let ratios_ok = ratios.iter().all(|r| r.1 >= 3.5 && r.2 >= 3.5);
    report(
        6,
        "discrete H-theorems and equilibrium convergence",
        worst_a >= -1e-9 && worst_b >= -1e-9 && worst_c >= -1e-9 && worst_de <= 1e-4 && ratios_ok,
        format!(
            "(a) worst ΔS {worst_a:.1e}; (b) worst ΔΣ_λ {worst_b:.1e}; (c) worst ΔS {worst_c:.1e}, \
             max|dE/dt| {worst_de:.1e}; (d) residual ratios per doubling {ratios:.2?} (≥ 3.5)"
        ),
    );
}

#[test]
fn criterion_07_extension_method() {
    let mut worst_cocurrent = 0.0_f64;
    let mut identical = true;
    for w in [catalog::antisym(), catalog::beltrami()] {
        let op = w.to_operator();
        let ext = extend_to_measure_preserving(&op);
        let unit = VolumeWeight::unit();
        for p in SampleSpec::cube(4, TWO_PI, 1000).points(|_| true) {
            let c = cocurrent_residual(&ext, &unit, &p);
            worst_cocurrent = c.iter().fold(worst_cocurrent, |m, v| m.max(v.abs()));
        }

        let h3 = catalog::cosine_energy([1.0, 0.5, 0.25]);
        let h3c = h3.clone();
        let h4 = Hamiltonian::new("cosine_ext", move |x: &[f64]| h3c.eval(&x[..3]))
            .with_grad(move |x: &[f64], g: &mut [f64]| {
                h3.grad_into(&x[..3], &mut g[..3]);
                g[3] = 0.0;
            });
        let h3 = catalog::cosine_energy([1.0, 0.5, 0.25]);
        let sys3 = SdeSystem::new(
            op.clone(),
            Some(h3),
            NoiseSpec::isotropic(1.0, 3).unwrap(),
            FrictionSpec::Off,
            DomainSpec::cube(3, TWO_PI),
        )
        .unwrap();
        let sys4 = SdeSystem::new(
            ext,
            Some(h4),
            NoiseSpec::new(
                vec![1.0, 1.0, 1.0, 0.0],
                helidiff_core::operator::CoordinateMap::identity(4),
            )
            .unwrap(),
            FrictionSpec::Off,
            DomainSpec::cube(4, TWO_PI),
        )
        .unwrap();
        let mut e3 =
            Ensemble::sample(&InitSpec::Flat, &sys3.domain, &sys3.operator, 500, 21).unwrap();
        let pos4: Vec<f64> = e3
            .positions()
            .chunks(3)
            .enumerate()
            .flat_map(|(i, x)| [x[0], x[1], x[2], 0.1 * (i % 7) as f64 - 0.3])
            .collect();
        let mut e4 = Ensemble::new(4, pos4, 21).unwrap();
        for _ in 0..200 {
            step_stratonovich(&mut e3, &sys3, 0.0, 1e-2).unwrap();
            step_stratonovich(&mut e4, &sys4, 0.0, 1e-2).unwrap();
        }
        let same = e3
            .positions()
            .chunks(3)
            .zip(e4.positions().chunks(4))
            .all(|(a, b)| a == &b[..3]);
        identical &= same;
    }
    report(
        7,
        "extension to a measure-preserving operator",
        worst_cocurrent <= 1e-6 && identical,
        format!(
            "max |cocurrent| {worst_cocurrent:.1e} (≤ 1e-6) over 1000 points; \
             first three coordinates bitwise equal after 200 steps: {identical}"
        ),
    );
}

#[test]
fn criterion_08_beta_identity() {
    let geom = GridGeometry::cube(64, 24.0);
    let h = catalog::rigid_body_energy([1.0, 2.0, 3.0]);
    let model = FpModel::new(
        catalog::euler_rigid_body().to_operator(),
        Some(h.clone()),
        NoiseSpec::isotropic(1.0, 3).unwrap(),
        FpFriction::Off,
    )
    .unwrap();
    let mut found = Vec::new();
    for beta in [0.5, 1.0, 2.0] {
        let f = make_equilibrium(
            &EquilibriumSpec::Boltzmann {
                hamiltonian: h.clone(),
                beta,
            },
            &geom,
        )
        .unwrap();
        found.push((beta, compute_beta(&f, &model).unwrap()));
    }
    let pass = found.iter().all(|(b, r)| (b - r).abs() <= 1e-2);
    report(8, "friction constant recovered from a Boltzmann density", pass, format!("(β₀, β) {found:.6?}"));
}

#[test]
fn criterion_09_particle_grid_cross_validation() {
    let f8 = run_builtin("fig8");
    let (a, b) = (l1(fig7(), "particles_vs_grid"), l1(&f8, "particles_vs_grid"));
    report(
        9,
        "particle histogram matches the grid solution",
        a <= 0.08 && b <= 0.08,
        format!("fig7 L1 {a:.4}; fig8 L1 {b:.4} (≤ 0.08)"),
    );
}

#[test]
fn criterion_10_landau_lifshitz_anisotropy() {
    let mut cfg = builtin("fig10").unwrap();
    cfg.set_particles(50_000);
    cfg.outputs = vec!["moments".into()];
    let dir = tempfile::tempdir().unwrap();
    let s = cmd_run(&cfg, dir.path()).unwrap().summary;
    let m = &s.particles.unwrap().moments.second;
    report(
        10,
        "Landau-Lifshitz ensemble aligns with z",
        m[2] > m[0].max(m[1]),
        format!("⟨x²⟩ {:.3}, ⟨y²⟩ {:.3}, ⟨z²⟩ {:.3}", m[0], m[1], m[2]),
    );
}

#[test]
fn criterion_11_thread_count_determinism() {
    let mut cfg = builtin("fig7").unwrap();
    cfg.solver = SolverConfig::Both {
        n: 20_000,
        shape: [32, 32, 32],
    };
    cfg.integrator.steps = 200;
    let mut manifests = Vec::new();
    for threads in [1, 2, 8] {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let m = pool.install(|| cmd_run(&cfg, dir.path()).unwrap().manifest);
        manifests.push(m);
    }
    let same = manifests.windows(2).all(|w| w[0] == w[1]);
    report(
        11,
        "identical manifests for 1, 2 and 8 threads",
        same,
        format!(
            "{} outputs hashed; manifests equal: {same}",
            manifests[0].outputs.len()
        ),
    );
}
