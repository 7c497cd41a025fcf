//! The closed (Λ, v) system that the exponential age family reduces to, and
//! its use as an oracle for the full solver.

use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{Result, SimError};
use crate::model_spec::{fn2, AgeFamily, Fn1, Fn2, ModelSpec};
use crate::solver::{self, Problem, RunParams};
use crate::spatial_grid::{Field, SpatialGrid};

#[derive(Clone)]
pub struct ReducedSpec {
    pub m0: f64,
    pub m1: f64,
    pub m2: f64,
    pub tau: f64,
    pub diffusivity: Fn1,
    pub drift: Fn2,
    /// When set, replaces D(Λ) + ΛE(Λ, v) and is discretized centrally;
    /// otherwise the drift part is upwinded as in the full solver.
    pub effective: Option<Fn2>,
    pub growth: Fn1,
    pub xi: Fn1,
}

impl std::fmt::Debug for ReducedSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ReducedSpec")
            .field("m0", &self.m0)
            .field("m1", &self.m1)
            .field("m2", &self.m2)
            .field("tau", &self.tau)
            .finish_non_exhaustive()
    }
}

impl ReducedSpec {
    pub fn from_model(spec: &ModelSpec, m0: f64, tau: f64, m2: f64) -> Self {
        Self {
            m0,
            m1: 1.0,
            m2,
            tau,
            diffusivity: spec.diffusivity.clone(),
            drift: spec.drift.clone(),
            effective: None,
            growth: spec.growth.clone(),
            xi: spec.xi.clone(),
        }
    }

    /// 𝒟(Λ, v) = D₀Λ/(Λ + kv), continued by D₀ where Λ + kv = 0 and Λ > 0.
    pub fn with_saturating_diffusivity(mut self, d0: f64, k: f64) -> Self {
        self.effective = Some(fn2(move |l: f64, v: f64| {
            let l = l.max(0.0);
            let den = l + k * v.max(0.0);
            if den > 0.0 {
                d0 * l / den
            } else {
                0.0
            }
        }));
        self
    }

    /// 𝒟(Λ, v) = D(Λ) + ΛE(Λ, v) unless overridden.
    pub fn effective_diffusivity(&self, l: f64, v: f64) -> f64 {
        match &self.effective {
            Some(e) => e(l, v),
            None => (self.diffusivity)(l) + l * (self.drift)(l, v),
        }
    }

    pub fn growth_rate(&self) -> f64 {
        1.0 / self.tau - self.m2
    }

    fn inflow(&self, v: f64) -> f64 {
        if v > 0.0 {
            (self.xi)(v) * v
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReducedState {
    pub lambda: Field,
    pub v: Field,
    pub t: f64,
    pub step_count: u64,
}

fn face_terms(spec: &ReducedSpec, sg: &SpatialGrid, lambda: &[f64], v: &[f64]) -> Field {
    let mut out = vec![0.0; sg.n_cells()];
    match &spec.effective {
        Some(eff) => {
            let dc: Vec<f64> = lambda.iter().zip(v).map(|(&l, &s)| eff(l, s)).collect();
            for f in &sg.faces {
                let inv_h = 1.0 / sg.h[f.axis];
                let flux = 0.5 * (dc[f.left] + dc[f.right]) * (lambda[f.right] - lambda[f.left]) * inv_h;
                out[f.left] += flux * inv_h;
                out[f.right] -= flux * inv_h;
            }
        }
        None => {
            let coeffs = sg.face_coefficients_with(lambda, v, |l| (spec.diffusivity)(l), |l, s| (spec.drift)(l, s));
            sg.accumulate_div_flux(&coeffs, lambda, |x| x, &mut out);
        }
    }
    out
}

/// Largest stable explicit step: diffusive bound with the effective
/// diffusivity, drift CFL and the reaction rates.
pub fn reduced_stable_dt(spec: &ReducedSpec, sg: &SpatialGrid, st: &ReducedState) -> f64 {
    let lw = sg.laplacian_weight();
    let mut d_max = 0.0f64;
    let mut w_max = 0.0f64;
    for f in &sg.faces {
        let (ll, lr) = (st.lambda[f.left], st.lambda[f.right]);
        let (vl, vr) = (st.v[f.left], st.v[f.right]);
        d_max = d_max
            .max(spec.effective_diffusivity(ll, vl))
            .max(spec.effective_diffusivity(lr, vr));
        if spec.effective.is_none() {
            let e = 0.5 * ((spec.drift)(ll, vl) + (spec.drift)(lr, vr));
            w_max = w_max.max(e * (lr - ll).abs() / sg.h[f.axis]);
        }
    }
    let mut bound = f64::INFINITY;
    if d_max > 0.0 {
        bound = bound.min(1.0 / (lw * d_max));
    }
    if w_max > 0.0 {
        bound = bound.min(sg.h_min() / w_max);
    }
    let sink = (spec.m2 - 1.0 / spec.tau).max(0.0);
    let v_sink = st
        .v
        .iter()
        .map(|&s| ((spec.xi)(s) - (spec.growth)(s)).max(0.0))
        .fold(0.0, f64::max);
    for r in [sink, v_sink] {
        if r > 0.0 {
            bound = bound.min(1.0 / r);
        }
    }
    if !bound.is_finite() {
        bound = 0.1;
    }
    0.9 * bound
}

pub fn reduced_step(spec: &ReducedSpec, sg: &SpatialGrid, st: &ReducedState, dt: f64) -> Result<ReducedState> {
    let div = face_terms(spec, sg, &st.lambda, &st.v);
    let gamma = spec.growth_rate();
    let coupling = spec.m1 * spec.m2 / spec.m0;
    let n = sg.n_cells();
    let mut lambda = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    for c in 0..n {
        let (l, s) = (st.lambda[c], st.v[c]);
        lambda.push(l + dt * (div[c] + gamma * l + spec.m0 * spec.inflow(s)));
        v.push(s + dt * (((spec.growth)(s) - (spec.xi)(s)) * s + coupling * l));
    }
    for (what, f) in [("Lambda", &mut lambda), ("v", &mut v)] {
        for (c, x) in f.iter_mut().enumerate() {
            if !x.is_finite() || *x < -1e-12 {
                return Err(SimError::UnstableStep { t: st.t, reason: format!("reduced {what} = {x} in cell {c}") });
            }
            *x = x.max(0.0);
        }
    }
    Ok(ReducedState { lambda, v, t: st.t + dt, step_count: st.step_count + 1 })
}

/// Integrates the reduced system, returning the states at every sample time.
pub fn run_reduced(
    spec: &ReducedSpec,
    sg: &SpatialGrid,
    lambda0: Field,
    v0: Field,
    params: &RunParams,
) -> Result<Vec<ReducedState>> {
    sg.check(&lambda0)?;
    sg.check(&v0)?;
    if lambda0.iter().chain(&v0).any(|&x| x < 0.0) {
        let (cell, &value) = lambda0.iter().chain(&v0).enumerate().find(|(_, &x)| x < 0.0).unwrap();
        return Err(SimError::NegativeField { cell: cell % sg.n_cells(), value });
    }
    let mut st = ReducedState { lambda: lambda0, v: v0, t: 0.0, step_count: 0 };
    let mut out = vec![st.clone()];
    for k in 1..=params.n_samples() {
        let target = params.sample_time(k);
        while st.t < target {
            let mut dt = reduced_stable_dt(spec, sg, &st);
            if let Some(m) = params.max_dt {
                dt = dt.min(m);
            }
            let landing = target - st.t <= dt * (1.0 + 1e-9);
            if landing {
                dt = target - st.t;
            }
            st = reduced_step(spec, sg, &st, dt)?;
            if landing {
                st.t = target;
            }
        }
        out.push(st.clone());
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CrossValTolerances {
    pub lambda_l2: f64,
    pub v_l2: f64,
}

impl Default for CrossValTolerances {
    fn default() -> Self {
        Self { lambda_l2: 5e-2, v_l2: 5e-2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CrossValErrors {
    pub alpha: f64,
    /// Relative L²(Ω) errors at the final time.
    pub lambda_l2: f64,
    pub v_l2: f64,
    /// Relative L∞(0, T; L¹(Ω)) errors.
    pub lambda_linf_l1: f64,
    pub v_linf_l1: f64,
    pub initial_tail_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrossValReport {
    pub levels: Vec<CrossValErrors>,
    /// log₂ of the Λ error ratio between α and α/2.
    pub order: Option<f64>,
    pub passed: bool,
    pub tolerances: CrossValTolerances,
}

pub fn exponential_parameters(cfg: &RunConfig) -> Result<(f64, f64, f64)> {
    match cfg.model.age {
        AgeFamily::Exponential { m0, tau, m2 } => Ok((m0, tau, m2)),
        _ => Err(SimError::ConfigMismatch(
            "the reduced system needs lambda = m0 e^(a/tau), b = e^(a/tau) and constant mu".into(),
        )),
    }
}

pub fn reduced_spec_for(cfg: &RunConfig) -> Result<ReducedSpec> {
    let (m0, tau, m2) = exponential_parameters(cfg)?;
    let spec = cfg.model.build()?;
    Ok(ReducedSpec::from_model(&spec, m0, tau, m2))
}

fn rel(num: f64, den: f64) -> f64 {
    if num == 0.0 {
        0.0
    } else if den == 0.0 {
        f64::INFINITY
    } else {
        num / den
    }
}

struct Lockstep {
    times: Vec<f64>,
    full: Vec<(Field, Field)>,
    reduced: Vec<(Field, Field)>,
    tail_fraction: f64,
}

fn lockstep(cfg: &RunConfig) -> Result<Lockstep> {
    let p: Problem = cfg.problem()?;
    let rspec = reduced_spec_for(cfg)?;
    let mut full = cfg.initial_state(&p)?;
    let sg = &p.sgrid;

    let g = &p.grid;
    let horizon = 0.8 * g.age_horizon();
    let total: f64 = full.u.iter().enumerate().map(|(i, ui)| g.alpha * g.b[i] * sg.integrate(ui)).sum();
    let tail: f64 = full
        .u
        .iter()
        .enumerate()
        .filter(|(i, _)| (*i + 1) as f64 * g.alpha > horizon)
        .map(|(i, ui)| g.alpha * g.b[i] * sg.integrate(ui))
        .sum();
    let tail_fraction = rel(tail, total);
    if tail_fraction > 1e-8 {
        return Err(SimError::ConfigMismatch(format!(
            "initial tail mass beyond 0.8 I alpha is {tail_fraction:e} of the total; ages must be truncated"
        )));
    }

    let mut red = ReducedState { lambda: full.lambda_rec.clone(), v: full.v.clone(), t: 0.0, step_count: 0 };
    let params = cfg.run_params();
    let mut out = Lockstep {
        times: vec![0.0],
        full: vec![(full.lambda_rec.clone(), full.v.clone())],
        reduced: vec![(red.lambda.clone(), red.v.clone())],
        tail_fraction,
    };
    for k in 1..=params.n_samples() {
        let target = params.sample_time(k);
        while full.t < target {
            let mut dt = solver::stable_dt(&full, &p).min(reduced_stable_dt(&rspec, sg, &red));
            if let Some(m) = params.max_dt {
                dt = dt.min(m);
            }
            let landing = target - full.t <= dt * (1.0 + 1e-9);
            if landing {
                dt = target - full.t;
            }
            let (mut next, _) = solver::step(&full, dt, &p)?;
            red = reduced_step(&rspec, sg, &red, dt)?;
            if landing {
                next.t = target;
                red.t = target;
            }
            full = next;
        }
        out.times.push(target);
        out.full.push((full.lambda_rec.clone(), full.v.clone()));
        out.reduced.push((red.lambda.clone(), red.v.clone()));
    }
    Ok(out)
}

fn diff(a: &[f64], b: &[f64]) -> Field {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn l1(sg: &SpatialGrid, f: &[f64]) -> f64 {
    f.iter().map(|x| x.abs()).sum::<f64>() * sg.cell_volume()
}

/// Full-versus-reduced errors at a single α.
pub fn cross_validate_level(cfg: &RunConfig) -> Result<CrossValErrors> {
    let sg = SpatialGrid::from_spec(&cfg.grid)?;
    let ls = lockstep(cfg)?;
    let last = ls.times.len() - 1;
    let (fl, fv) = &ls.full[last];
    let (rl, rv) = &ls.reduced[last];
    let mut linf = [0.0f64; 2];
    let mut scale = [0.0f64; 2];
    for ((fl, fv), (rl, rv)) in ls.full.iter().zip(&ls.reduced) {
        linf[0] = linf[0].max(l1(&sg, &diff(fl, rl)));
        linf[1] = linf[1].max(l1(&sg, &diff(fv, rv)));
        scale[0] = scale[0].max(l1(&sg, rl));
        scale[1] = scale[1].max(l1(&sg, rv));
    }
    Ok(CrossValErrors {
        alpha: cfg.alpha,
        lambda_l2: rel(sg.norm_l2(&diff(fl, rl)), sg.norm_l2(rl)),
        v_l2: rel(sg.norm_l2(&diff(fv, rv)), sg.norm_l2(rv)),
        lambda_linf_l1: rel(linf[0], scale[0]),
        v_linf_l1: rel(linf[1], scale[1]),
        initial_tail_fraction: ls.tail_fraction,
    })
}

/// Runs the comparison at α and α/2 on the same spatial grid.
pub fn cross_validate(cfg: &RunConfig, tol: CrossValTolerances) -> Result<CrossValReport> {
    exponential_parameters(cfg)?;
    let coarse_cfg = cfg.clone();
    let mut fine_cfg = cfg.clone();
    fine_cfg.alpha = cfg.alpha / 2.0;
    let (coarse, fine) = std::thread::scope(|s| {
        let a = s.spawn(|| cross_validate_level(&coarse_cfg));
        let b = s.spawn(|| cross_validate_level(&fine_cfg));
        (a.join().expect("cross-validation thread"), b.join().expect("cross-validation thread"))
    });
    let (coarse, fine) = (coarse?, fine?);
    let order = (coarse.lambda_l2 > 0.0 && fine.lambda_l2 > 0.0).then(|| (coarse.lambda_l2 / fine.lambda_l2).log2());
    let passed = coarse.lambda_l2 <= tol.lambda_l2 && coarse.v_l2 <= tol.v_l2;
    Ok(CrossValReport { levels: vec![coarse, fine], order, passed, tolerances: tol })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_spec::fn1;

    fn homogeneous_spec(tau: f64, m2: f64) -> ReducedSpec {
        let spec = ModelSpec::exponential_reference(1.0, tau, m2, 1.0, 2.0);
        let mut r = ReducedSpec::from_model(&spec, 1.0, tau, m2);
        r.growth = fn1(|_| 0.0);
        r.xi = fn1(|_| 0.0);
        r
    }

    #[test]
    fn homogeneous_lambda_is_exponential() {
        let (tau, m2) = (2.0, 0.2);
        let r = homogeneous_spec(tau, m2);
        let sg = SpatialGrid::new_1d(1.0, 8);
        let t = 1.0;
        let params = RunParams { max_dt: Some(t / 1000.0), ..RunParams::new(t, t) };
        let traj = run_reduced(&r, &sg, vec![0.7; 8], vec![0.1; 8], &params).unwrap();
        let end = traj.last().unwrap();
        let gamma = 1.0 / tau - m2;
        let exact = 0.7 * (gamma * t).exp();
        assert!(((end.lambda[0] - exact) / exact).abs() < 1e-3);
        assert!(end.lambda.iter().all(|&x| x == end.lambda[0]));
        let v_exact = 0.1 + m2 / 1.0 * 0.7 * ((gamma * t).exp() - 1.0) / gamma;
        assert!(((end.v[0] - v_exact) / v_exact).abs() < 1e-3);
    }

    #[test]
    fn saturating_diffusivity_at_zero_swimmers() {
        let r = homogeneous_spec(1.0, 0.1).with_saturating_diffusivity(0.8, 2.0);
        for l in [1e-6, 0.3, 5.0] {
            assert_eq!(r.effective_diffusivity(l, 0.0), 0.8);
        }
        assert!(r.effective_diffusivity(1.0, 1.0) < 0.8);
    }

    #[test]
    fn zero_data_cross_validates_exactly() {
        let mut cfg = crate::config::reference_config();
        cfg.initial.u.amplitude = 0.0;
        cfg.initial.v.amplitude = 0.0;
        cfg.t_end = 0.3;
        let e = cross_validate_level(&cfg).unwrap();
        assert_eq!((e.lambda_l2, e.v_l2, e.lambda_linf_l1, e.v_linf_l1), (0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn non_exponential_family_is_a_mismatch() {
        let mut cfg = crate::config::reference_config();
        cfg.model.age = AgeFamily::Table {
            lambda: "l.csv".into(),
            b: "b.csv".into(),
            mu: "m.csv".into(),
            tau: 1.0,
        };
        assert!(matches!(cross_validate(&cfg, CrossValTolerances::default()), Err(SimError::ConfigMismatch(_))));
    }
}
