//! Runtime instrumentation of the a-priori estimates.

pub mod envelopes;
pub mod weak;

use std::io::Write;

use serde::Serialize;

use crate::age_discretization::{entropy_density, AgeGrid};
use crate::error::{Result, SimError};
use crate::model_spec::{estimate_kappas, ramp};
use crate::solver::{boundary_inflow, Observer, Problem, SimState, StepResult};
use crate::spatial_grid::SpatialGrid;

pub use envelopes::{envelope_check, all_margins, EstimateId, MarginReport};
pub use weak::{weak_residual, TestFunction, WeakResidual, WeakResidualObserver};

/// ∫(αΣb_i u_i + v).
pub fn mass_b(state: &SimState, grid: &AgeGrid, sgrid: &SpatialGrid) -> f64 {
    let swarmers: f64 = state
        .u
        .iter()
        .enumerate()
        .map(|(i, ui)| grid.alpha * grid.b[i] * sgrid.integrate(ui))
        .sum();
    swarmers + sgrid.integrate(&state.v)
}

fn check_nonnegative(state: &SimState) -> Result<()> {
    for ui in &state.u {
        if let Some((cell, &value)) = ui.iter().enumerate().find(|(_, &x)| x < 0.0) {
            return Err(SimError::NegativeField { cell, value });
        }
    }
    Ok(())
}

/// Σαλ_i∫φ(u_i).
pub fn entropy(state: &SimState, grid: &AgeGrid, sgrid: &SpatialGrid) -> Result<f64> {
    check_nonnegative(state)?;
    Ok(state
        .u
        .iter()
        .enumerate()
        .map(|(i, ui)| {
            grid.alpha * grid.lambda[i] * ui.iter().map(|&x| entropy_density(x)).sum::<f64>() * sgrid.cell_volume()
        })
        .sum())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Dissipation {
    /// ∫Σαλ_i D_α(Λ)|∇√u_i|²
    pub d_u: f64,
    /// ∫E_α(Λ, v)|∇Λ|²
    pub d_e: f64,
    /// ∫|∇ζ₁(Λ)|²
    pub gz1: f64,
    /// ∫|∇ζ₂(Λ)|²
    pub gz2: f64,
}

/// Face-based dissipation and ζ-gradient integrands, with ζ applied to cell
/// values before differencing.
pub fn dissipation(state: &SimState, p: &Problem) -> Result<Dissipation> {
    check_nonnegative(state)?;
    let sg = &p.sgrid;
    let g = &p.grid;
    let lam = &state.lambda_rec;
    let coeffs = sg.face_coefficients(lam, &state.v, &p.reg);
    let mut weighted = vec![0.0; sg.faces.len()];
    for (i, ui) in state.u.iter().enumerate() {
        let w = g.alpha * g.lambda[i];
        let roots: Vec<f64> = ui.iter().map(|x| x.sqrt()).collect();
        for (k, f) in sg.faces.iter().enumerate() {
            let d = (roots[f.right] - roots[f.left]) / sg.h[f.axis];
            weighted[k] += w * d * d;
        }
    }
    let vol = sg.cell_volume();
    let d_u = coeffs.diffusivity.iter().zip(&weighted).map(|(d, w)| d * w).sum::<f64>() * vol;
    let e_cells: Vec<f64> = lam.iter().zip(&state.v).map(|(&l, &s)| p.reg.e_alpha(l, s)).collect();
    let e_faces: Vec<f64> = sg.faces.iter().map(|f| 0.5 * (e_cells[f.left] + e_cells[f.right])).collect();
    let d_e = sg.face_energy(lam, &e_faces);
    let ones = vec![1.0; sg.faces.len()];
    let z1: Vec<f64> = lam.iter().map(|&l| p.spec.zeta1_value(l)).collect();
    let z2: Vec<f64> = lam.iter().map(|&l| (p.spec.zeta2)(l.max(0.0))).collect();
    Ok(Dissipation { d_u, d_e, gz1: sg.face_energy(&z1, &ones), gz2: sg.face_energy(&z2, &ones) })
}

/// Tail weights η_i = η(iα/A), η rising smoothly from 0 at ½ to 1 at 1.
pub fn tail_weights(a: f64, grid: &AgeGrid) -> Vec<f64> {
    (1..=grid.n_bins + 1)
        .map(|i| ramp(i as f64 * grid.alpha / a))
        .collect()
}

/// Σ_{iα > A} αb_i∫u_i.
pub fn tail_mass(state: &SimState, a: f64, grid: &AgeGrid, sgrid: &SpatialGrid) -> f64 {
    state
        .u
        .iter()
        .enumerate()
        .filter(|(i, _)| (*i + 1) as f64 * grid.alpha > a)
        .map(|(i, ui)| grid.alpha * grid.b[i] * sgrid.integrate(ui))
        .sum()
}

/// ∫αΣη_i b_i u_i.
pub fn tail_weighted(state: &SimState, eta: &[f64], grid: &AgeGrid, sgrid: &SpatialGrid) -> f64 {
    state
        .u
        .iter()
        .enumerate()
        .map(|(i, ui)| grid.alpha * eta[i] * grid.b[i] * sgrid.integrate(ui))
        .sum()
}

fn sup(f: &[f64]) -> f64 {
    f.iter().copied().fold(0.0, f64::max)
}

/// Constants entering the envelopes, measured on the discrete problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeasuredConstants {
    pub ell: f64,
    pub big_b: f64,
    pub big_l: f64,
    pub big_m: f64,
    pub beta: f64,
    pub xi: f64,
    /// sup |g| and sup |g − ξ_α| over the sampled and reached swimmer range.
    pub g_sup: f64,
    pub k0: f64,
    pub b1: f64,
    pub lambda1: f64,
    /// κ₂ at the observed sup of Λ and v, if positive.
    pub kappa2: Option<f64>,
    /// Observed sup over the run of ‖Λ‖_∞ + ‖v‖_∞.
    pub c3_observed: f64,
}

/// Values of every instrumented quantity at a sample time. The `acc_*`
/// fields are time integrals from 0 (trapezoid over every step).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticSample {
    pub t: f64,
    pub mass_b: f64,
    pub entropy: f64,
    pub dissipation_u: f64,
    pub dissipation_e: f64,
    pub grad_zeta1_sq: f64,
    pub grad_zeta2_sq: f64,
    pub acc_dissipation_u: f64,
    pub acc_dissipation_e: f64,
    pub acc_grad_zeta1_sq: f64,
    pub acc_grad_zeta2_sq: f64,
    pub acc_entropy: f64,
    pub acc_inflow_entropy: f64,
    pub acc_lambda_integral: f64,
    pub linf_lambda: f64,
    pub linf_v: f64,
    pub max_u: f64,
    pub k_bound: f64,
    pub k_bound_margin: f64,
    pub tails: Vec<f64>,
    pub tails_weighted: Vec<f64>,
    /// α²∫‖Δ_h v‖₂²
    pub delta_v_accum: f64,
    pub acc_v_l2_sq: f64,
    pub acc_v_lambda_l2: f64,
    pub acc_lambda_l2_sq: f64,
    pub identity_residual: f64,
    pub min_value: f64,
    pub theta_activations: u64,
    pub tstar_crossed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticsRecord {
    pub alpha: f64,
    pub tail_ages: Vec<f64>,
    /// |η*|_∞ per tail age.
    pub tail_eta_star: Vec<f64>,
    /// ‖∇_h v⁰‖₂²
    pub grad_v0_sq: f64,
    pub constants: MeasuredConstants,
    pub samples: Vec<DiagnosticSample>,
}

#[derive(Debug, Clone, Copy, Default)]
struct Integrands {
    entropy: f64,
    inflow_entropy: f64,
    lambda_integral: f64,
    diss: Dissipation,
    lap_v: f64,
    v_l2: f64,
    lambda_l2: f64,
}

#[derive(Debug, Clone, Copy, Default)]
struct Accumulated {
    entropy: f64,
    inflow_entropy: f64,
    lambda_integral: f64,
    d_u: f64,
    d_e: f64,
    gz1: f64,
    gz2: f64,
    lap_v: f64,
    v_sq: f64,
    v_lambda: f64,
    lambda_sq: f64,
}

/// Observer that fills a [`DiagnosticsRecord`] during a run.
pub struct DiagnosticsObserver {
    tail_ages: Vec<f64>,
    etas: Vec<Vec<f64>>,
    last: Option<(f64, Integrands)>,
    acc: Accumulated,
    samples: Vec<DiagnosticSample>,
    min_value: f64,
    g_sup: f64,
    c3: f64,
    sup_lambda: f64,
    sup_v: f64,
    k0: f64,
    grad_v0_sq: f64,
}

fn integrands(state: &SimState, p: &Problem) -> Result<Integrands> {
    let sg = &p.sgrid;
    let inflow = boundary_inflow(&state.v, &p.reg);
    let phi_inflow: Vec<f64> = inflow.iter().map(|&x| entropy_density(x)).collect();
    let lap = sg.laplacian(&state.v)?;
    Ok(Integrands {
        entropy: entropy(state, &p.grid, sg)?,
        inflow_entropy: sg.integrate(&phi_inflow),
        lambda_integral: sg.integrate(&state.lambda_rec),
        diss: dissipation(state, p)?,
        lap_v: p.grid.alpha * p.grid.alpha * sg.norm_l2(&lap).powi(2),
        v_l2: sg.norm_l2(&state.v),
        lambda_l2: sg.norm_l2(&state.lambda_rec),
    })
}

impl DiagnosticsObserver {
    pub fn new(initial: &SimState, tail_ages: &[f64], p: &Problem) -> Self {
        let etas = tail_ages.iter().map(|&a| tail_weights(a, &p.grid)).collect();
        let ones = vec![1.0; p.sgrid.faces.len()];
        let grad_v0_sq = p.sgrid.face_energy(&initial.v, &ones);
        let top = 1.0 / p.grid.alpha;
        let g_sup = (0..=512)
            .map(|k| top * k as f64 / 512.0)
            .map(|s| (p.spec.growth)(s).abs().max(((p.spec.growth)(s) - p.reg.xi_alpha(s)).abs()))
            .fold(0.0, f64::max);
        Self {
            tail_ages: tail_ages.to_vec(),
            etas,
            last: None,
            acc: Accumulated::default(),
            samples: Vec::new(),
            min_value: 0.0,
            g_sup,
            c3: 0.0,
            sup_lambda: 0.0,
            sup_v: 0.0,
            k0: crate::age_discretization::compute_k0(&initial.u, &initial.v, &p.grid, &p.sgrid),
            grad_v0_sq,
        }
    }

    fn observe_extrema(&mut self, state: &SimState, p: &Problem) {
        let (l, v) = (sup(&state.lambda_rec), sup(&state.v));
        self.sup_lambda = self.sup_lambda.max(l);
        self.sup_v = self.sup_v.max(v);
        self.c3 = self.c3.max(l + v);
        for &s in &state.v {
            let g = (p.spec.growth)(s);
            self.g_sup = self.g_sup.max(g.abs()).max((g - p.reg.xi_alpha(s)).abs());
        }
    }

    fn sample(&self, state: &SimState, now: &Integrands, p: &Problem) -> DiagnosticSample {
        let g = &p.grid;
        let alpha = g.alpha;
        let k = 1.0 / (alpha * alpha) + p.reg.xi_bound * state.t / alpha;
        let max_u = state.max_u();
        DiagnosticSample {
            t: state.t,
            mass_b: mass_b(state, g, &p.sgrid),
            entropy: now.entropy,
            dissipation_u: now.diss.d_u,
            dissipation_e: now.diss.d_e,
            grad_zeta1_sq: now.diss.gz1,
            grad_zeta2_sq: now.diss.gz2,
            acc_dissipation_u: self.acc.d_u,
            acc_dissipation_e: self.acc.d_e,
            acc_grad_zeta1_sq: self.acc.gz1,
            acc_grad_zeta2_sq: self.acc.gz2,
            acc_entropy: self.acc.entropy,
            acc_inflow_entropy: self.acc.inflow_entropy,
            acc_lambda_integral: self.acc.lambda_integral,
            linf_lambda: sup(&state.lambda_rec),
            linf_v: sup(&state.v),
            max_u,
            k_bound: k,
            k_bound_margin: k - max_u,
            tails: self.tail_ages.iter().map(|&a| tail_mass(state, a, g, &p.sgrid)).collect(),
            tails_weighted: self.etas.iter().map(|eta| tail_weighted(state, eta, g, &p.sgrid)).collect(),
            delta_v_accum: self.acc.lap_v,
            acc_v_l2_sq: self.acc.v_sq,
            acc_v_lambda_l2: self.acc.v_lambda,
            acc_lambda_l2_sq: self.acc.lambda_sq,
            identity_residual: state.identity_residual(),
            min_value: self.min_value,
            theta_activations: state.theta_activations,
            tstar_crossed: state.tstar_crossed,
        }
    }

    pub fn finish(self, p: &Problem) -> Result<DiagnosticsRecord> {
        let g = &p.grid;
        let c = g.constants;
        let r = self.sup_lambda.max(self.sup_v).max(1e-6);
        let kappa2 = estimate_kappas(&p.spec, r, 256)?.kappa2.filter(|&k| k > 0.0);
        let tail_eta_star = self
            .etas
            .iter()
            .map(|eta| eta.windows(2).map(|w| ((w[1] - w[0]) / g.alpha).abs()).fold(0.0, f64::max))
            .collect();
        Ok(DiagnosticsRecord {
            alpha: g.alpha,
            tail_ages: self.tail_ages,
            tail_eta_star,
            grad_v0_sq: self.grad_v0_sq,
            constants: MeasuredConstants {
                ell: c.ell,
                big_b: c.big_b,
                big_l: c.big_l,
                big_m: c.big_m,
                beta: c.beta,
                xi: p.reg.xi_bound,
                g_sup: self.g_sup,
                k0: self.k0,
                b1: g.b[0],
                lambda1: g.lambda[0],
                kappa2,
                c3_observed: self.c3,
            },
            samples: self.samples,
        })
    }
}

impl Observer for DiagnosticsObserver {
    fn on_sample(&mut self, state: &SimState, p: &Problem) -> Result<()> {
        if self.last.is_none() {
            let now = integrands(state, p)?;
            self.observe_extrema(state, p);
            self.last = Some((state.t, now));
        }
        let now = self.last.expect("set above").1;
        let s = self.sample(state, &now, p);
        self.samples.push(s);
        Ok(())
    }

    fn on_step(&mut self, _prev: &SimState, next: &SimState, res: &StepResult, p: &Problem) -> Result<()> {
        let now = integrands(next, p)?;
        let (t0, before) = self.last.expect("initial sample precedes steps");
        let h = 0.5 * (next.t - t0);
        let a = &mut self.acc;
        a.entropy += h * (before.entropy + now.entropy);
        a.inflow_entropy += h * (before.inflow_entropy + now.inflow_entropy);
        a.lambda_integral += h * (before.lambda_integral + now.lambda_integral);
        a.d_u += h * (before.diss.d_u + now.diss.d_u);
        a.d_e += h * (before.diss.d_e + now.diss.d_e);
        a.gz1 += h * (before.diss.gz1 + now.diss.gz1);
        a.gz2 += h * (before.diss.gz2 + now.diss.gz2);
        a.lap_v += h * (before.lap_v + now.lap_v);
        a.v_sq += h * (before.v_l2 * before.v_l2 + now.v_l2 * now.v_l2);
        a.v_lambda += h * (before.v_l2 * before.lambda_l2 + now.v_l2 * now.lambda_l2);
        a.lambda_sq += h * (before.lambda_l2 * before.lambda_l2 + now.lambda_l2 * now.lambda_l2);
        self.min_value = self.min_value.min(res.min_before_clip);
        self.observe_extrema(next, p);
        self.last = Some((next.t, now));
        Ok(())
    }
}

impl DiagnosticsRecord {
    /// One row per sample, one column per quantity.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header: Vec<String> = [
            "t",
            "mass_b",
            "entropy",
            "dissipation_u",
            "dissipation_e",
            "grad_zeta1_sq",
            "grad_zeta2_sq",
            "acc_dissipation_u",
            "acc_dissipation_e",
            "acc_grad_zeta1_sq",
            "acc_grad_zeta2_sq",
            "linf_lambda",
            "linf_v",
            "max_u",
            "k_bound_margin",
            "delta_v_accum",
            "identity_residual",
            "min_value",
            "theta_activations",
            "tstar_crossed",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        header.extend(self.tail_ages.iter().map(|a| format!("tail_{a}")));
        wr.write_record(&header)?;
        for s in &self.samples {
            let mut row: Vec<String> = [
                s.t,
                s.mass_b,
                s.entropy,
                s.dissipation_u,
                s.dissipation_e,
                s.grad_zeta1_sq,
                s.grad_zeta2_sq,
                s.acc_dissipation_u,
                s.acc_dissipation_e,
                s.acc_grad_zeta1_sq,
                s.acc_grad_zeta2_sq,
                s.linf_lambda,
                s.linf_v,
                s.max_u,
                s.k_bound_margin,
                s.delta_v_accum,
                s.identity_residual,
                s.min_value,
            ]
            .iter()
            .map(|x| x.to_string())
            .collect();
            row.push(s.theta_activations.to_string());
            row.push(s.tstar_crossed.to_string());
            row.extend(s.tails.iter().map(|x| x.to_string()));
            wr.write_record(&row)?;
        }
        wr.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::reference_config;

    fn reference_problem() -> (Problem, SimState) {
        let cfg = reference_config();
        let p = cfg.problem().unwrap();
        let s = cfg.initial_state(&p).unwrap();
        (p, s)
    }

    #[test]
    fn zero_state_values() {
        let (p, _) = reference_problem();
        let z = SimState::zeros(&p);
        assert_eq!(mass_b(&z, &p.grid, &p.sgrid), 0.0);
        let expect: f64 = p.grid.lambda[..p.grid.n_bins].iter().map(|l| p.grid.alpha * l).sum::<f64>()
            * p.sgrid.domain_volume();
        assert!((entropy(&z, &p.grid, &p.sgrid).unwrap() - expect).abs() < 1e-12);
        assert_eq!(dissipation(&z, &p).unwrap(), Dissipation::default());
    }

    #[test]
    fn unit_state_values() {
        let (p, mut s) = reference_problem();
        for ui in &mut s.u {
            ui.iter_mut().for_each(|x| *x = 1.0);
        }
        s.v.iter_mut().for_each(|x| *x = 0.0);
        s.lambda_rec = crate::age_discretization::reconstruct_lambda(&s.u, &p.grid);
        let expect: f64 = p.grid.b[..p.grid.n_bins].iter().map(|b| p.grid.alpha * b).sum::<f64>()
            * p.sgrid.domain_volume();
        assert!((mass_b(&s, &p.grid, &p.sgrid) - expect).abs() < 1e-12);
        assert_eq!(entropy(&s, &p.grid, &p.sgrid).unwrap(), 0.0);
        let d = dissipation(&s, &p).unwrap();
        assert_eq!((d.d_u, d.d_e, d.gz1, d.gz2), (0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn tails() {
        let (p, s) = reference_problem();
        // initial ages are concentrated near zero
        assert!(tail_mass(&s, 3.5, &p.grid, &p.sgrid) < 1e-12 * mass_b(&s, &p.grid, &p.sgrid));
        assert_eq!(tail_mass(&s, p.grid.age_horizon(), &p.grid, &p.sgrid), 0.0);
        let eta = tail_weights(1.0, &p.grid);
        assert_eq!(eta[0], 0.0);
        assert!(eta.windows(2).all(|w| w[0] <= w[1]));
        assert!(tail_weighted(&s, &eta, &p.grid, &p.sgrid) >= tail_mass(&s, 1.0, &p.grid, &p.sgrid));
    }

    #[test]
    fn negative_field_is_rejected() {
        let (p, mut s) = reference_problem();
        s.u[2][5] = -1.0;
        assert!(matches!(entropy(&s, &p.grid, &p.sgrid), Err(SimError::NegativeField { cell: 5, .. })));
        assert!(matches!(dissipation(&s, &p), Err(SimError::NegativeField { .. })));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]

            #[test]
            fn nonnegative_and_additive(seed in prop::collection::vec(0.0f64..2.0, 16), split in 1usize..15) {
                let mut cfg = reference_config();
                cfg.grid.cells = vec![16];
                let p = cfg.problem().unwrap();
                let u: Vec<Vec<f64>> = (0..p.grid.n_bins)
                    .map(|i| seed.iter().map(|x| x / (1.0 + i as f64)).collect())
                    .collect();
                let s = SimState::new(u.clone(), seed.clone(), &p).unwrap();
                let e = entropy(&s, &p.grid, &p.sgrid).unwrap();
                let d = dissipation(&s, &p).unwrap();
                prop_assert!(e >= 0.0);
                prop_assert!(d.d_u >= 0.0 && d.d_e >= 0.0 && d.gz1 >= 0.0 && d.gz2 >= 0.0);

                // masking cells partitions the domain; cell sums are additive
                let mask = |keep: bool| {
                    let uu: Vec<Vec<f64>> = u.iter().map(|ui| ui.iter().enumerate()
                        .map(|(c, &x)| if (c < split) == keep { x } else { 0.0 }).collect()).collect();
                    let vv: Vec<f64> = seed.iter().enumerate()
                        .map(|(c, &x)| if (c < split) == keep { x } else { 0.0 }).collect();
                    SimState::new(uu, vv, &p).unwrap()
                };
                let (a, b) = (mask(true), mask(false));
                let m = |s: &SimState| mass_b(s, &p.grid, &p.sgrid);
                prop_assert!((m(&a) + m(&b) - m(&s)).abs() <= 1e-12 * (1.0 + m(&s)));
                let t = |s: &SimState| tail_mass(s, 1.0, &p.grid, &p.sgrid);
                prop_assert!((t(&a) + t(&b) - t(&s)).abs() <= 1e-12 * (1.0 + t(&s)));
                // entropy of a zero cell is φ(0) per bin, so subtract one copy of it
                let zero_cells = SimState::zeros(&p);
                let ez = entropy(&zero_cells, &p.grid, &p.sgrid).unwrap();
                let en = |s: &SimState| entropy(s, &p.grid, &p.sgrid).unwrap();
                prop_assert!((en(&a) + en(&b) - ez - e).abs() <= 1e-10 * (1.0 + e));
            }
        }
    }
}
