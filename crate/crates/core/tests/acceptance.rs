//! End-to-end acceptance suite. Every test prints one PASS/FAIL line and then
//! asserts, so `cargo test --test acceptance -- --nocapture` gives a summary.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use swarmsim_core::config::{reference_config, AgeProfile, RunConfig, SpaceProfile};
use swarmsim_core::diagnostics::{TestFunction, WeakResidualObserver};
use swarmsim_core::harness::{cmd_run, simulate, sweep};
use swarmsim_core::model_spec::{AgeFamily, DifferentiationFamily, DiffusivityFamily, DriftFamily, GrowthFamily};
use swarmsim_core::reduced::{cross_validate_level, CrossValTolerances};
use swarmsim_core::solver::{run, Observer, Problem, RunParams, SimState, StepResult};
use swarmsim_core::spatial_grid::SpatialGrid;
use swarmsim_core::Result;

fn verdict(name: &str, passed: bool, detail: String) {
    println!("acceptance {name}: {} ({detail})", if passed { "PASS" } else { "FAIL" });
    assert!(passed, "{name}: {detail}");
}

/// Least-squares slope of log(err) against log(h).
fn fitted_order(h: &[f64], err: &[f64]) -> f64 {
    let x: Vec<f64> = h.iter().map(|v| v.ln()).collect();
    let y: Vec<f64> = err.iter().map(|v| v.ln()).collect();
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let num: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let den: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    num / den
}

fn random_config(rng: &mut ChaCha8Rng) -> RunConfig {
    let mut c = reference_config();
    let tau = rng.gen_range(1.0..3.0);
    c.model.age = AgeFamily::Exponential { m0: rng.gen_range(0.5..2.0), tau, m2: rng.gen_range(0.0..0.5) };
    c.model.diffusivity = DiffusivityFamily::Power { d0: rng.gen_range(0.1..1.0), theta: rng.gen_range(1.0..3.0) };
    c.model.drift = match rng.gen_range(0..3) {
        0 => DriftFamily::DiffusivityDerivative,
        1 => DriftFamily::Constant { e0: rng.gen_range(0.0..1.0) },
        _ => DriftFamily::Zero,
    };
    c.model.growth = GrowthFamily::Constant { g0: rng.gen_range(-0.5..1.0) };
    c.model.differentiation = DifferentiationFamily::Bump { amplitude: rng.gen_range(0.0..1.0), s1: 0.05, s2: 1.0 };
    c.alpha = [0.25, 0.125, 1.0 / 6.0][rng.gen_range(0..3)];
    c.a_max = None;
    let length = rng.gen_range(4.0..8.0);
    c.grid.extents = vec![length];
    c.grid.cells = vec![[32, 64][rng.gen_range(0..2)]];
    c.t_end = 1.0;
    c.initial.u.amplitude = rng.gen_range(0.0..2.0);
    c.initial.u.age = AgeProfile::Gaussian { width: rng.gen_range(0.2..1.0) };
    c.initial.u.space = SpaceProfile::Gaussian {
        center: vec![rng.gen_range(0.0..length)],
        width: rng.gen_range(0.3..2.0),
        background: rng.gen_range(0.0..0.5),
    };
    c.initial.v.amplitude = rng.gen_range(0.0..1.0);
    c.initial.v.space = SpaceProfile::Cosine { mode: rng.gen_range(0..4), background: rng.gen_range(1.0..2.0) };
    c.diagnostics.tail_ages = vec![];
    c
}

#[derive(Default)]
struct Bounds {
    min_any: f64,
    worst_k_margin: f64,
}

impl Observer for Bounds {
    fn on_sample(&mut self, s: &SimState, p: &Problem) -> Result<()> {
        let alpha = p.grid.alpha;
        let k = 1.0 / (alpha * alpha) + p.reg.xi_bound * s.t / alpha;
        self.worst_k_margin = self.worst_k_margin.min(k - s.max_u());
        Ok(())
    }

    fn on_step(&mut self, _prev: &SimState, next: &SimState, res: &StepResult, _p: &Problem) -> Result<()> {
        let fields = next.u.iter().flatten().chain(&next.v).chain(&next.lambda_rec);
        let m = fields.copied().fold(res.min_before_clip, f64::min);
        self.min_any = self.min_any.min(m);
        Ok(())
    }
}

#[test]
fn nonnegativity_and_comparison_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut min_any = 0.0f64;
    let mut worst = f64::INFINITY;
    let mut count = 0;
    while count < 20 {
        let c = random_config(&mut rng);
        if c.validate().is_err() {
            continue;
        }
        let p = c.problem().unwrap();
        let s0 = c.initial_state(&p).unwrap();
        let mut b = Bounds { worst_k_margin: f64::INFINITY, ..Default::default() };
        run(s0, &c.run_params(), &p, &mut b).unwrap();
        min_any = min_any.min(b.min_any);
        worst = worst.min(b.worst_k_margin);
        count += 1;
    }
    verdict(
        "nonnegativity_and_comparison_bound",
        min_any >= -1e-12 && worst >= -1e-10,
        format!("{count} configs, min value {min_any:e}, min k(t) - max u {worst:.4e}"),
    );
}

#[test]
fn identity_residual_refines() {
    let residual = |n: usize, dt: f64| {
        let mut c = reference_config();
        c.t_end = 1.0;
        c.grid.cells = vec![n];
        c.max_dt = Some(dt);
        let p = c.problem().unwrap();
        let s0 = c.initial_state(&p).unwrap();
        run(s0, &c.run_params(), &p, &mut ()).unwrap().identity_residual()
    };
    // halving dt and Δx² together: N·√2 cells
    let coarse = residual(128, 0.004);
    let fine = residual(181, 0.002);
    let ratio = coarse / fine;
    verdict(
        "identity_residual_refines",
        ratio >= 1.8 && ratio.log2() >= 0.85,
        format!("residual {coarse:.3e} -> {fine:.3e}, ratio {ratio:.3}, order {:.3}", ratio.log2()),
    );
}

#[test]
fn estimate_envelopes_hold() {
    let a = simulate(&reference_config(), None).unwrap();
    let failed: Vec<String> = a.margins.iter().filter(|m| !m.passed).map(|m| m.estimate.clone()).collect();
    let finite = a.margins.iter().all(|m| m.samples.iter().all(|s| s.bound.is_finite() && s.observed.is_finite()));
    let worst = a
        .margins
        .iter()
        .map(|m| format!("{}={:.2e}", m.estimate, m.min_margin))
        .collect::<Vec<_>>()
        .join(", ");
    verdict(
        "estimate_envelopes_hold",
        failed.is_empty() && finite && a.margins.len() >= 10,
        format!("failed {failed:?}; min margins {worst}"),
    );
}

#[test]
fn cutoff_never_activates() {
    let c = reference_config();
    let a = simulate(&c, None).unwrap();
    let k = &a.manifest.constants;
    let limit = k.ell / (4.0 * k.c3_observed);
    verdict(
        "cutoff_never_activates",
        c.alpha <= limit && !a.manifest.tstar_crossed && a.manifest.theta_activations == 0 && c.t_end == 2.0,
        format!(
            "alpha {} <= l/(4 c3) = {limit:.4}, tstar_crossed {}, activations {}",
            c.alpha, a.manifest.tstar_crossed, a.manifest.theta_activations
        ),
    );
}

#[test]
fn reduced_system_oracle() {
    let alphas = [0.125, 0.0625, 0.03125];
    let levels: Vec<_> = std::thread::scope(|s| {
        let hs: Vec<_> = alphas
            .iter()
            .map(|&a| {
                s.spawn(move || {
                    let mut c = reference_config();
                    c.alpha = a;
                    c.grid.cells = vec![128];
                    cross_validate_level(&c).unwrap()
                })
            })
            .collect();
        hs.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let tol = CrossValTolerances::default();
    let mid = &levels[1];
    let errs: Vec<f64> = levels.iter().map(|l| l.lambda_l2).collect();
    let monotone = errs.windows(2).all(|w| w[1] < w[0]) && levels.windows(2).all(|w| w[1].v_l2 < w[0].v_l2);
    let order = fitted_order(&alphas, &errs);
    verdict(
        "reduced_system_oracle",
        mid.lambda_l2 <= tol.lambda_l2 && mid.v_l2 <= tol.v_l2 && monotone && order >= 0.8,
        format!(
            "alpha 1/16: lambda {:.3e}, v {:.3e}; lambda errors {errs:.3?}; order {order:.3}",
            mid.lambda_l2, mid.v_l2
        ),
    );
}

/// The spatially constant reduction integrated with classical RK4.
fn homogeneous_oracle(p: &Problem, u0: &[f64], v0: f64, t: f64, n: usize) -> (Vec<f64>, f64) {
    let g = &p.grid;
    let rhs = |u: &[f64], v: f64| -> (Vec<f64>, f64) {
        let inflow = p.reg.xi_alpha(v) * v;
        let du: Vec<f64> = (0..u.len())
            .map(|i| {
                let prev = if i == 0 { inflow } else { u[i - 1] };
                -(u[i] - prev) / g.alpha - g.mu[i] * u[i]
            })
            .collect();
        let src: f64 = (0..u.len()).map(|i| g.b[i] * g.mu[i] * u[i]).sum();
        let dv = ((p.spec.growth)(v) - p.reg.xi_alpha(v)) * v + g.alpha * src;
        (du, dv)
    };
    let h = t / n as f64;
    let (mut u, mut v) = (u0.to_vec(), v0);
    let axpy = |u: &[f64], k: &[f64], s: f64| -> Vec<f64> { u.iter().zip(k).map(|(a, b)| a + s * b).collect() };
    for _ in 0..n {
        let (k1, l1) = rhs(&u, v);
        let (k2, l2) = rhs(&axpy(&u, &k1, 0.5 * h), v + 0.5 * h * l1);
        let (k3, l3) = rhs(&axpy(&u, &k2, 0.5 * h), v + 0.5 * h * l2);
        let (k4, l4) = rhs(&axpy(&u, &k3, h), v + h * l3);
        for i in 0..u.len() {
            u[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        v += h / 6.0 * (l1 + 2.0 * l2 + 2.0 * l3 + l4);
    }
    (u, v)
}

#[test]
fn homogeneous_runs_match_ode() {
    let mut c = reference_config();
    c.grid = swarmsim_core::spatial_grid::GridSpec { extents: vec![8.0], cells: vec![8] };
    c.initial.u.space = SpaceProfile::Uniform;
    c.initial.v.space = SpaceProfile::Uniform;
    c.t_end = 1.0;
    c.sample_every = 1.0;
    let p = c.problem().unwrap();
    let s0 = c.initial_state(&p).unwrap();
    let at = |dt: f64| {
        let params = RunParams { max_dt: Some(dt), ..RunParams::new(1.0, 1.0) };
        let end = run(s0.clone(), &params, &p, &mut ()).unwrap();
        assert_eq!(end.step_count, (1.0 / dt).round() as u64, "dt must not be limited by stability");
        for f in end.u.iter().chain(std::iter::once(&end.v)) {
            assert!(f.iter().all(|&x| (x - f[0]).abs() <= 1e-12 * (1.0 + f[0].abs())), "state lost spatial homogeneity");
        }
        let mut x: Vec<f64> = end.u.iter().map(|f| f[0]).collect();
        x.push(end.v[0]);
        x
    };
    let u0: Vec<f64> = s0.u.iter().map(|f| f[0]).collect();
    let (u, v) = homogeneous_oracle(&p, &u0, s0.v[0], 1.0, 20_000);
    let mut oracle = u;
    oracle.push(v);
    let scale = oracle.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let rel = |x: &[f64]| x.iter().zip(&oracle).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / scale;
    let coarse = rel(&at(2f64.powi(-14)));
    let fine = rel(&at(2f64.powi(-15)));
    let order = (coarse / fine).log2();
    verdict(
        "homogeneous_runs_match_ode",
        fine <= 1e-4 && order >= 0.9,
        format!("relative error {fine:.3e} at dt = 2^-15 ({coarse:.3e} at 2^-14, order {order:.3})"),
    );
}

#[test]
fn weak_residual_converges() {
    let alphas = [0.125, 0.0625, 0.03125];
    let results: Vec<Vec<f64>> = std::thread::scope(|s| {
        let hs: Vec<_> = alphas
            .iter()
            .map(|&a| {
                s.spawn(move || {
                    let mut c = reference_config().at_alpha(a);
                    c.grid.cells = vec![(16.0 / a) as usize];
                    // off-centre data so that odd modes do not vanish by symmetry
                    c.initial.u.space = SpaceProfile::Gaussian { center: vec![3.0], width: 1.5, background: 0.0 };
                    c.initial.v.space = SpaceProfile::Gaussian { center: vec![3.5], width: 2.25, background: 0.0 };
                    let p = c.problem().unwrap();
                    let s0 = c.initial_state(&p).unwrap();
                    let cat = TestFunction::catalogue(c.t_end, p.grid.age_horizon(), &c.test_functions.modes, 1);
                    let mut obs = WeakResidualObserver::new(&cat, &p, c.t_end).unwrap();
                    run(s0, &c.run_params(), &p, &mut obs).unwrap();
                    obs.residuals().iter().map(|r| r.value).collect()
                })
            })
            .collect();
        hs.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let orders: Vec<f64> = (0..results[0].len())
        .map(|k| fitted_order(&alphas, &results.iter().map(|r| r[k]).collect::<Vec<_>>()))
        .collect();
    let decreasing = (0..results[0].len()).all(|k| results[1][k] < results[0][k] && results[2][k] < results[1][k]);

    // exact zeros: φ ≡ 0 and the zero trajectory
    let c = reference_config();
    let p = c.problem().unwrap();
    let phi = TestFunction::mode(c.t_end, p.grid.age_horizon(), 2, 0);
    let zero_phi = phi.combine(0.0, &phi, 0.0).unwrap();
    let s0 = c.initial_state(&p).unwrap();
    let mut later = s0.clone();
    later.t = 1.0;
    let z_phi = swarmsim_core::diagnostics::weak_residual(&[s0, later], &zero_phi, &p, c.t_end).unwrap().value;
    let z = SimState::zeros(&p);
    let mut z1 = z.clone();
    z1.t = 1.0;
    let z_traj = swarmsim_core::diagnostics::weak_residual(&[z, z1], &phi, &p, c.t_end).unwrap().value;

    let min_order = orders.iter().copied().fold(f64::INFINITY, f64::min);
    verdict(
        "weak_residual_converges",
        decreasing && min_order >= 0.8 && z_phi == 0.0 && z_traj == 0.0,
        format!("orders per test function {orders:.3?}; zero function {z_phi}, zero trajectory {z_traj}"),
    );
}

/// L² error of div_flux against an analytic divergence, on [0, 1].
fn mms_error(n: usize, drift: bool) -> f64 {
    let mut c = reference_config();
    c.grid = swarmsim_core::spatial_grid::GridSpec { extents: vec![1.0], cells: vec![n] };
    if !drift {
        c.model.drift = DriftFamily::Zero;
    }
    let p = c.problem().unwrap();
    let pi = std::f64::consts::PI;
    let lam = |x: f64| 0.5 + 0.25 * (pi * x).cos();
    let u = |x: f64| 1.0 + 0.5 * (2.0 * pi * x).cos();
    let flux = |x: f64| {
        let h = 1e-6;
        let du = (u(x + h) - u(x - h)) / (2.0 * h);
        let dl = (lam(x + h) - lam(x - h)) / (2.0 * h);
        let l = lam(x);
        p.reg.d_alpha(l) * du + p.reg.transported(u(x)) * p.reg.e_alpha(l, 0.3) * dl
    };
    let exact = |x: f64| {
        let h = 1e-4;
        (flux(x + h) - flux(x - h)) / (2.0 * h)
    };
    let sg = SpatialGrid::new_1d(1.0, n);
    let uf = sg.sample(|x| u(x[0]));
    let lf = sg.sample(|x| lam(x[0]));
    let vf = vec![0.3; n];
    let out = sg.div_flux(&uf, &lf, &vf, &p.reg).unwrap();
    let err: Vec<f64> = (0..n).map(|k| out[k] - exact(sg.cell_center(k)[0])).collect();
    sg.norm_l2(&err)
}

fn conservation_defect(rng: &mut ChaCha8Rng, sg: &SpatialGrid, p: &Problem) -> f64 {
    let n = sg.n_cells();
    let u: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..2.0)).collect();
    let l: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.5)).collect();
    let v: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
    let out = sg.div_flux(&u, &l, &v, &p.reg).unwrap();
    let total: f64 = out.iter().sum::<f64>() * sg.cell_volume();
    let size: f64 = out.iter().map(|x| x.abs()).sum::<f64>() * sg.cell_volume();
    if size == 0.0 {
        0.0
    } else {
        total.abs() / size
    }
}

#[test]
fn spatial_operator_verification() {
    let ns = [32usize, 64, 128, 256];
    let h: Vec<f64> = ns.iter().map(|&n| 1.0 / n as f64).collect();
    let diff: Vec<f64> = ns.iter().map(|&n| mms_error(n, false)).collect();
    let drift: Vec<f64> = ns.iter().map(|&n| mms_error(n, true)).collect();
    let pair = |e: &[f64]| (e[2] / e[3]).log2();
    let (od, oe) = (pair(&diff), pair(&drift));

    let p = reference_config().problem().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let grids = [SpatialGrid::new_1d(3.0, 50), SpatialGrid::new_2d(2.0, 1.0, 16, 12)];
    let defect = grids
        .iter()
        .flat_map(|g| (0..100).map(|_| conservation_defect(&mut rng, g, &p)).collect::<Vec<_>>())
        .fold(0.0, f64::max);
    verdict(
        "spatial_operator_verification",
        od >= 1.9 && oe >= 0.9 && defect <= 1e-12,
        format!(
            "diffusion order {od:.3} (fit {:.3}), with drift {oe:.3} (fit {:.3}), worst conservation defect {defect:.1e}",
            fitted_order(&h, &diff),
            fitted_order(&h, &drift)
        ),
    );
}

#[test]
fn alpha_sweep_is_cauchy() {
    let mut c = reference_config();
    c.grid.cells = vec![64];
    let r = sweep(&c, Some(3), None).unwrap();
    let ok = r.ratios_lambda.iter().chain(&r.ratios_v).all(|&x| x <= 0.7) && r.ratios_lambda.len() == 1;
    verdict(
        "alpha_sweep_is_cauchy",
        ok,
        format!("ratios lambda {:.3?}, v {:.3?}; orders {:.3?}", r.ratios_lambda, r.ratios_v, r.orders_lambda),
    );
}

fn collect(dir: &Path, base: &Path, into: &mut BTreeMap<String, Vec<u8>>) {
    for e in fs::read_dir(dir).unwrap() {
        let path = e.unwrap().path();
        if path.is_dir() {
            collect(&path, base, into);
        } else {
            let key = path.strip_prefix(base).unwrap().display().to_string();
            let mut bytes = fs::read(&path).unwrap();
            if key == "manifest.json" {
                let mut v: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
                v.as_object_mut().unwrap().remove("wall_time");
                bytes = serde_json::to_vec(&v).unwrap();
            }
            into.insert(key, bytes);
        }
    }
}

#[test]
fn repeated_runs_are_identical() {
    let mut c = reference_config();
    c.t_end = 1.0;
    let outputs: Vec<BTreeMap<String, Vec<u8>>> = (0..2)
        .map(|_| {
            let dir = tempfile::tempdir().unwrap();
            cmd_run(&c, dir.path()).unwrap();
            let mut files = BTreeMap::new();
            collect(dir.path(), dir.path(), &mut files);
            files
        })
        .collect();
    let differing: Vec<&String> = outputs[0].iter().filter(|(k, v)| outputs[1].get(*k) != Some(v)).map(|(k, _)| k).collect();
    verdict(
        "repeated_runs_are_identical",
        outputs[0].len() == outputs[1].len() && differing.is_empty() && outputs[0].len() > 20,
        format!("{} files compared (wall time excluded), differing {differing:?}", outputs[0].len()),
    );
}
