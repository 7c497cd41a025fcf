//! Residual of the weak formulation evaluated on a discrete trajectory.
//!
//! Test functions are linear combinations of ψ(t)χ(a)ω_k(x) with shared
//! time and age cut-offs and cosine modes ω_k, which satisfy the no-flux
//! condition on the box.

use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{Result, SimError};
use crate::quadrature::{gauss_legendre8, smoothstep, smoothstep_derivative};
use crate::solver::{Observer, Problem, SimState, StepResult};

pub const MAX_MODE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ModeTerm {
    pub weight: f64,
    pub modes: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestFunction {
    /// ψ vanishes for t ≥ t_support.
    pub t_support: f64,
    /// χ vanishes for a ≥ a_support.
    pub a_support: f64,
    pub terms: Vec<ModeTerm>,
}

impl TestFunction {
    /// Single mode with the default cut-offs 0.9T and 0.8·(Iα).
    pub fn mode(t_end: f64, age_horizon: f64, kx: usize, ky: usize) -> Self {
        Self {
            t_support: 0.9 * t_end,
            a_support: 0.8 * age_horizon,
            terms: vec![ModeTerm { weight: 1.0, modes: [kx, ky] }],
        }
    }

    /// Every mode in `modes` (tensor products in two dimensions).
    pub fn catalogue(t_end: f64, age_horizon: f64, modes: &[usize], dim: usize) -> Vec<Self> {
        let mut out = Vec::new();
        for &kx in modes {
            if dim == 1 {
                out.push(Self::mode(t_end, age_horizon, kx, 0));
            } else {
                for &ky in modes {
                    out.push(Self::mode(t_end, age_horizon, kx, ky));
                }
            }
        }
        out
    }

    /// aφ + bψ for functions with matching cut-offs.
    pub fn combine(&self, a: f64, other: &Self, b: f64) -> Result<Self> {
        if self.t_support != other.t_support || self.a_support != other.a_support {
            return Err(SimError::InadmissibleTestFunction("combined functions need equal cut-offs".into()));
        }
        let mut terms: Vec<ModeTerm> = self.terms.iter().map(|m| ModeTerm { weight: a * m.weight, ..*m }).collect();
        terms.extend(other.terms.iter().map(|m| ModeTerm { weight: b * m.weight, ..*m }));
        Ok(Self { terms, ..self.clone() })
    }

    pub fn check(&self, p: &Problem, t_end: f64) -> Result<()> {
        let bad = |s: String| Err(SimError::InadmissibleTestFunction(s));
        if !(self.t_support > 0.0 && self.t_support < t_end) {
            return bad(format!("time support {} must lie in (0, {t_end})", self.t_support));
        }
        let horizon = p.grid.age_horizon();
        if !(self.a_support > 0.0 && self.a_support <= horizon) {
            return bad(format!("age support {} must lie in (0, {horizon}]", self.a_support));
        }
        for m in &self.terms {
            if m.modes.iter().any(|&k| k > MAX_MODE) {
                return bad(format!("mode {:?} above {MAX_MODE}", m.modes));
            }
            if p.sgrid.dim == 1 && m.modes[1] != 0 {
                return bad(format!("mode {:?} has a y component on a 1-D grid", m.modes));
            }
            if !m.weight.is_finite() {
                return bad("non-finite weight".into());
            }
        }
        Ok(())
    }

    pub fn psi(&self, t: f64) -> f64 {
        smoothstep(1.0 - t / self.t_support)
    }

    pub fn psi_dt(&self, t: f64) -> f64 {
        -smoothstep_derivative(1.0 - t / self.t_support) / self.t_support
    }

    pub fn chi(&self, a: f64) -> f64 {
        smoothstep(1.0 - a / self.a_support)
    }

    fn wave(&self, m: &ModeTerm, lengths: [f64; 2]) -> [f64; 2] {
        [m.modes[0] as f64 * PI / lengths[0], m.modes[1] as f64 * PI / lengths[1]]
    }

    /// ω(x), ∇ω(x) and Δω(x).
    pub fn omega(&self, x: [f64; 2], lengths: [f64; 2]) -> (f64, [f64; 2], f64) {
        let mut w = 0.0;
        let mut g = [0.0; 2];
        let mut lap = 0.0;
        for m in &self.terms {
            let k = self.wave(m, lengths);
            let (cx, cy) = ((k[0] * x[0]).cos(), (k[1] * x[1]).cos());
            let (sx, sy) = ((k[0] * x[0]).sin(), (k[1] * x[1]).sin());
            w += m.weight * cx * cy;
            g[0] -= m.weight * k[0] * sx * cy;
            g[1] -= m.weight * k[1] * cx * sy;
            lap -= m.weight * (k[0] * k[0] + k[1] * k[1]) * cx * cy;
        }
        (w, g, lap)
    }
}

/// Residual magnitude, its signed value and the five contributions: transport
/// and reaction, boundary inflow, initial data, diffusion, and the split flux.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WeakResidual {
    pub value: f64,
    pub signed: f64,
    pub terms: [f64; 5],
}

/// Tabulated pieces of one test function on one problem.
struct Prepared {
    phi: TestFunction,
    /// ∫_bin χ
    x: Vec<f64>,
    /// ∫_bin μχ
    mu_x: Vec<f64>,
    /// χ(iα) − χ((i−1)α)
    jump: Vec<f64>,
    chi0: f64,
    omega: Vec<f64>,
    lap: Vec<f64>,
    /// Normal derivative of ω at each face.
    grad_face: Vec<f64>,
}

impl Prepared {
    fn new(phi: &TestFunction, p: &Problem) -> Self {
        let g = &p.grid;
        let sg = &p.sgrid;
        let mut x = Vec::with_capacity(g.n_bins);
        let mut mu_x = Vec::with_capacity(g.n_bins);
        let mut jump = Vec::with_capacity(g.n_bins);
        for i in 1..=g.n_bins {
            let (a0, a1) = g.bin_edges(i);
            x.push(gauss_legendre8(a0, a1, |a| phi.chi(a)));
            mu_x.push(gauss_legendre8(a0, a1, |a| (p.spec.mu)(a) * phi.chi(a)));
            jump.push(phi.chi(a1) - phi.chi(a0));
        }
        let mut omega = Vec::with_capacity(sg.n_cells());
        let mut lap = Vec::with_capacity(sg.n_cells());
        for c in 0..sg.n_cells() {
            let (w, _, l) = phi.omega(sg.cell_center(c), sg.lengths);
            omega.push(w);
            lap.push(l);
        }
        let grad_face = sg.faces.iter().map(|f| phi.omega(sg.face_center(f), sg.lengths).1[f.axis]).collect();
        Self { phi: phi.clone(), x, mu_x, jump, chi0: phi.chi(0.0), omega, lap, grad_face }
    }

    /// Space integrals of the time-dependent contributions at one state.
    fn integrand(&self, s: &SimState, p: &Problem) -> [f64; 4] {
        let sg = &p.sgrid;
        let spec = &p.spec;
        let (psi, dpsi) = (self.phi.psi(s.t), self.phi.psi_dt(s.t));
        let n = sg.n_cells();
        let mut weighted = vec![0.0; n];
        let mut transport = 0.0;
        for (i, ui) in s.u.iter().enumerate() {
            let k = dpsi * self.x[i] + psi * (self.jump[i] - self.mu_x[i]);
            for c in 0..n {
                weighted[c] += ui[c] * self.x[i];
                transport += k * ui[c] * self.omega[c];
            }
        }
        let lam = &s.lambda_rec;
        let mut inflow = 0.0;
        let mut diffusion = 0.0;
        for c in 0..n {
            let v = s.v[c];
            inflow += self.omega[c] * (spec.xi)(v) * v;
            diffusion += self.lap[c] * (spec.diffusivity)(lam[c].max(0.0)) * weighted[c];
        }
        let z1: Vec<f64> = lam.iter().map(|&r| spec.zeta1_value(r)).collect();
        let z2: Vec<f64> = lam.iter().map(|&r| (spec.zeta2)(r.max(0.0))).collect();
        let mut flux = 0.0;
        for (k, f) in sg.faces.iter().enumerate() {
            let h = sg.h[f.axis];
            let (l, r) = (f.left, f.right);
            let lf = 0.5 * (lam[l] + lam[r]);
            let vf = 0.5 * (s.v[l] + s.v[r]);
            let split = spec.drift_ratio(lf, vf) * (z2[r] - z2[l]) / h - spec.diffusivity_ratio(lf) * (z1[r] - z1[l]) / h;
            flux -= split * 0.5 * (weighted[l] + weighted[r]) * self.grad_face[k];
        }
        let vol = sg.cell_volume();
        [transport * vol, psi * self.chi0 * inflow * vol, psi * diffusion * vol, psi * flux * vol]
    }

    fn initial(&self, s: &SimState, p: &Problem) -> f64 {
        let psi0 = self.phi.psi(0.0);
        let mut acc = 0.0;
        for (i, ui) in s.u.iter().enumerate() {
            acc += self.x[i] * ui.iter().zip(&self.omega).map(|(u, w)| u * w).sum::<f64>();
        }
        psi0 * acc * p.sgrid.cell_volume()
    }
}

fn finish(acc: [f64; 4], initial: f64) -> WeakResidual {
    let terms = [acc[0], acc[1], initial, acc[2], acc[3]];
    let signed: f64 = terms.iter().sum();
    WeakResidual { value: signed.abs(), signed, terms }
}

/// Observer accumulating the residual of several test functions with the
/// trapezoid rule over every step.
pub struct WeakResidualObserver {
    prepared: Vec<Prepared>,
    acc: Vec<[f64; 4]>,
    initial: Vec<f64>,
    last: Option<(f64, Vec<[f64; 4]>)>,
}

impl WeakResidualObserver {
    pub fn new(functions: &[TestFunction], p: &Problem, t_end: f64) -> Result<Self> {
        for f in functions {
            f.check(p, t_end)?;
        }
        Ok(Self {
            prepared: functions.iter().map(|f| Prepared::new(f, p)).collect(),
            acc: vec![[0.0; 4]; functions.len()],
            initial: vec![0.0; functions.len()],
            last: None,
        })
    }

    fn advance(&mut self, s: &SimState, p: &Problem) {
        let now: Vec<[f64; 4]> = self.prepared.iter().map(|f| f.integrand(s, p)).collect();
        if let Some((t0, before)) = &self.last {
            let h = 0.5 * (s.t - t0);
            for ((acc, b), n) in self.acc.iter_mut().zip(before).zip(&now) {
                for j in 0..4 {
                    acc[j] += h * (b[j] + n[j]);
                }
            }
        }
        self.last = Some((s.t, now));
    }

    pub fn residuals(&self) -> Vec<WeakResidual> {
        self.acc.iter().zip(&self.initial).map(|(a, &i)| finish(*a, i)).collect()
    }
}

impl Observer for WeakResidualObserver {
    fn on_sample(&mut self, state: &SimState, p: &Problem) -> Result<()> {
        if self.last.is_none() {
            self.initial = self.prepared.iter().map(|f| f.initial(state, p)).collect();
            self.advance(state, p);
        }
        Ok(())
    }

    fn on_step(&mut self, _prev: &SimState, next: &SimState, _res: &StepResult, p: &Problem) -> Result<()> {
        // every integrand vanishes once ψ does
        if self.last.as_ref().is_some_and(|(t, _)| self.prepared.iter().all(|f| *t >= f.phi.t_support)) {
            return Ok(());
        }
        self.advance(next, p);
        Ok(())
    }
}

/// Residual over a stored trajectory starting at t = 0; the time integral
/// uses the trapezoid rule on the stored states.
pub fn weak_residual(trajectory: &[SimState], phi: &TestFunction, p: &Problem, t_end: f64) -> Result<WeakResidual> {
    let mut obs = WeakResidualObserver::new(std::slice::from_ref(phi), p, t_end)?;
    let Some(first) = trajectory.first() else {
        return Ok(finish([0.0; 4], 0.0));
    };
    if first.t != 0.0 {
        return Err(SimError::InadmissibleTestFunction(format!("trajectory starts at t = {}", first.t)));
    }
    obs.on_sample(first, p)?;
    for s in &trajectory[1..] {
        obs.advance(s, p);
    }
    Ok(obs.residuals()[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::reference_config;

    fn setup() -> (Problem, SimState, f64) {
        let mut cfg = reference_config();
        cfg.grid.cells = vec![32];
        let p = cfg.problem().unwrap();
        let s = cfg.initial_state(&p).unwrap();
        (p, s, cfg.t_end)
    }

    #[test]
    fn zero_trajectory_has_zero_residual() {
        let (p, _, t_end) = setup();
        let z = SimState::zeros(&p);
        let mut later = z.clone();
        later.t = 0.5;
        let phi = TestFunction::mode(t_end, p.grid.age_horizon(), 2, 0);
        let r = weak_residual(&[z, later], &phi, &p, t_end).unwrap();
        assert_eq!(r.value, 0.0);
    }

    #[test]
    fn zero_function_has_zero_residual() {
        let (p, s, t_end) = setup();
        let phi = TestFunction::mode(t_end, p.grid.age_horizon(), 1, 0);
        let zero = phi.combine(0.0, &phi, 0.0).unwrap();
        let r = weak_residual(&[s], &zero, &p, t_end).unwrap();
        assert_eq!(r.value, 0.0);
    }

    #[test]
    fn inadmissible_functions_are_rejected() {
        let (p, s, t_end) = setup();
        let h = p.grid.age_horizon();
        let mut long = TestFunction::mode(t_end, h, 1, 0);
        long.t_support = t_end;
        let old = TestFunction::mode(t_end, h, 1, 0);
        let old = TestFunction { a_support: 2.0 * h, ..old };
        let high = TestFunction::mode(t_end, h, MAX_MODE + 1, 0);
        let tilted = TestFunction::mode(t_end, h, 1, 1);
        for phi in [long, old, high, tilted] {
            let e = weak_residual(std::slice::from_ref(&s), &phi, &p, t_end);
            assert!(matches!(e, Err(SimError::InadmissibleTestFunction(_))), "{phi:?}");
        }
    }

    #[test]
    fn cosine_modes_satisfy_no_flux() {
        let phi = TestFunction::mode(1.0, 1.0, 3, 2);
        let l = [2.0, 3.0];
        for y in [0.0, 0.7, 3.0] {
            assert!(phi.omega([0.0, y], l).1[0].abs() < 1e-12);
            assert!(phi.omega([2.0, y], l).1[0].abs() < 1e-12);
        }
    }

    mod props {
        use super::*;
        use crate::solver::{run, RunParams, SnapshotCollector};
        use proptest::prelude::*;
        use std::sync::OnceLock;

        fn trajectory() -> &'static (Problem, Vec<SimState>, f64) {
            static T: OnceLock<(Problem, Vec<SimState>, f64)> = OnceLock::new();
            T.get_or_init(|| {
                let (p, s, _) = setup();
                let t_end = 0.5;
                let mut obs = SnapshotCollector::default();
                run(s, &RunParams::new(t_end, 0.05), &p, &mut obs).unwrap();
                (p, obs.snapshots, t_end)
            })
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(16))]

            #[test]
            fn linear_in_the_test_function(a in -3.0f64..3.0, b in -3.0f64..3.0, k1 in 0usize..5, k2 in 0usize..5) {
                let (p, traj, t_end) = trajectory();
                let h = p.grid.age_horizon();
                let f = TestFunction::mode(*t_end, h, k1, 0);
                let g = TestFunction::mode(*t_end, h, k2, 0);
                let rf = weak_residual(traj, &f, p, *t_end).unwrap();
                let rg = weak_residual(traj, &g, p, *t_end).unwrap();
                let rc = weak_residual(traj, &f.combine(a, &g, b).unwrap(), p, *t_end).unwrap();
                let scale = rf.terms.iter().chain(&rg.terms).map(|x| x.abs()).sum::<f64>() * (a.abs() + b.abs()) + 1e-2 * (a.abs() + b.abs() + 1.0);
                prop_assert!((rc.signed - (a * rf.signed + b * rg.signed)).abs() <= 1e-11 * scale);
                for j in 0..5 {
                    prop_assert!((rc.terms[j] - (a * rf.terms[j] + b * rg.terms[j])).abs() <= 1e-11 * scale);
                }
            }
        }
    }
}
