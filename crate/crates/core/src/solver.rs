//! Explicit time integration of the age-binned system.

use serde::Serialize;

use crate::age_discretization::{reconstruct_lambda, AgeGrid, RegularizedModel};
use crate::error::{Result, SimError};
use crate::model_spec::ModelSpec;
use crate::spatial_grid::{FaceCoefficients, Field, SpatialGrid};

/// Everything that stays fixed over a run.
#[derive(Debug, Clone)]
pub struct Problem {
    pub spec: ModelSpec,
    pub grid: AgeGrid,
    pub reg: RegularizedModel,
    pub sgrid: SpatialGrid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub u: Vec<Field>,
    pub lambda_rec: Field,
    pub lambda_evolved: Field,
    pub v: Field,
    pub t: f64,
    pub step_count: u64,
    pub tstar_crossed: bool,
    pub theta_activations: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepResult {
    pub dt: f64,
    /// dt times the largest total outflow rate of any cell; ≤ 1 keeps the
    /// update a convex combination.
    pub courant: f64,
    pub min_before_clip: f64,
    pub identity_residual: f64,
    pub theta_active: u64,
}

/// Negative values above this are rounding noise and are clipped to zero.
const CLIP_FLOOR: f64 = -1e-12;
const DT_SAFETY: f64 = 0.9;

impl SimState {
    pub fn new(u: Vec<Field>, v: Field, problem: &Problem) -> Result<Self> {
        if u.len() != problem.grid.n_bins {
            return Err(SimError::GridMismatch { expected: problem.grid.n_bins, got: u.len() });
        }
        for ui in &u {
            problem.sgrid.check(ui)?;
        }
        problem.sgrid.check(&v)?;
        let lambda_rec = reconstruct_lambda(&u, &problem.grid);
        let mut s = Self {
            u,
            lambda_evolved: lambda_rec.clone(),
            lambda_rec,
            v,
            t: 0.0,
            step_count: 0,
            tstar_crossed: false,
            theta_activations: 0,
        };
        monitor_tstar(&mut s, problem.grid.alpha);
        Ok(s)
    }

    pub fn zeros(problem: &Problem) -> Self {
        let n = problem.sgrid.n_cells();
        Self::new(vec![vec![0.0; n]; problem.grid.n_bins], vec![0.0; n], problem).expect("shapes match")
    }

    pub fn max_u(&self) -> f64 {
        self.u.iter().flatten().copied().fold(0.0, f64::max)
    }

    pub fn identity_residual(&self) -> f64 {
        self.lambda_rec
            .iter()
            .zip(&self.lambda_evolved)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// u₀ = ξ_α(v)v.
pub fn boundary_inflow(v: &[f64], reg: &RegularizedModel) -> Field {
    v.iter().map(|&s| if s > 0.0 { reg.xi_alpha(s) * s } else { 0.0 }).collect()
}

/// Sets the crossing flag once max_i ‖u_i‖_∞ exceeds 1/(2α²).
pub fn monitor_tstar(state: &mut SimState, alpha: f64) -> bool {
    if !state.tstar_crossed && state.max_u() > 0.5 / (alpha * alpha) {
        state.tstar_crossed = true;
        log::warn!("t*_alpha crossed at t = {}: max u = {}", state.t, state.max_u());
    }
    state.tstar_crossed
}

struct Rates {
    /// Largest per-cell outflow rate of any swarmer bin.
    u_rate: f64,
    v_rate: f64,
    max_diffusion: f64,
    max_velocity: f64,
}

fn rates(state: &SimState, coeffs: &FaceCoefficients, p: &Problem) -> Rates {
    let sg = &p.sgrid;
    let n = sg.n_cells();
    let mut out = vec![0.0; n];
    let mut max_diffusion = 0.0f64;
    let mut max_velocity = 0.0f64;
    for (k, f) in sg.faces.iter().enumerate() {
        let h = sg.h[f.axis];
        let d = coeffs.diffusivity[k];
        let w = coeffs.velocity[k];
        let e = 0.5
            * (p.reg.e_alpha(state.lambda_rec[f.left], state.v[f.left])
                + p.reg.e_alpha(state.lambda_rec[f.right], state.v[f.right]));
        // effective diffusivity of the shadow Λ equation
        let ld = d + e * state.lambda_rec[f.left].max(state.lambda_rec[f.right]);
        max_diffusion = max_diffusion.max(ld);
        max_velocity = max_velocity.max(w.abs());
        out[f.left] += d / (h * h);
        out[f.right] += d / (h * h);
        if w > 0.0 {
            out[f.right] += w / h;
        } else {
            out[f.left] += -w / h;
        }
    }
    let m = p.grid.constants.big_m;
    let u_rate = out.iter().copied().fold(0.0, f64::max) + 1.0 / p.grid.alpha + m;
    let v_rate = p.grid.alpha * sg.laplacian_weight()
        + state
            .v
            .iter()
            .map(|&s| (p.reg.xi_alpha(s) - (p.spec.growth)(s)).max(0.0))
            .fold(0.0, f64::max);
    Rates { u_rate, v_rate, max_diffusion, max_velocity }
}

/// Largest step keeping the explicit update stable and nonnegative.
pub fn stable_dt(state: &SimState, p: &Problem) -> f64 {
    let coeffs = p.sgrid.face_coefficients(&state.lambda_rec, &state.v, &p.reg);
    stable_dt_with(state, &coeffs, p)
}

fn stable_dt_with(state: &SimState, coeffs: &FaceCoefficients, p: &Problem) -> f64 {
    let r = rates(state, coeffs, p);
    let lw = p.sgrid.laplacian_weight();
    let alpha = p.grid.alpha;
    let mut bound = (alpha / 2.0).min(1.0 / (lw * alpha));
    if r.max_diffusion > 0.0 {
        bound = bound.min(1.0 / (lw * r.max_diffusion));
    }
    if r.max_velocity > 0.0 {
        bound = bound.min(p.sgrid.h_min() / r.max_velocity);
    }
    let dt = DT_SAFETY * bound;
    dt.min(1.0 / r.u_rate).min(1.0 / r.v_rate.max(f64::MIN_POSITIVE))
}

/// Right-hand side of the shadow Λ equation.
fn shadow_rhs(lambda: &[f64], u: &[Field], v: &[f64], inflow: &[f64], p: &Problem) -> Field {
    let sg = &p.sgrid;
    let g = &p.grid;
    let n = sg.n_cells();
    let coeffs = sg.face_coefficients(lambda, v, &p.reg);
    let mut carried = vec![0.0; n];
    let mut out = vec![0.0; n];
    for (i, ui) in u.iter().enumerate() {
        let wl = g.alpha * g.lambda[i];
        let ws = g.alpha * (g.lambda_star[i] - g.mu[i] * g.lambda[i]);
        for c in 0..n {
            carried[c] += wl * p.reg.transported(ui[c]);
            out[c] += ws * ui[c];
        }
    }
    let last = g.n_bins - 1;
    for c in 0..n {
        out[c] += g.lambda[0] * inflow[c] - g.lambda[g.n_bins] * u[last][c];
    }
    for (k, f) in sg.faces.iter().enumerate() {
        let inv_h = 1.0 / sg.h[f.axis];
        let w = coeffs.velocity[k];
        let s = if w > 0.0 { carried[f.right] } else { carried[f.left] };
        let flux = coeffs.diffusivity[k] * (lambda[f.right] - lambda[f.left]) * inv_h + w * s;
        out[f.left] += flux * inv_h;
        out[f.right] -= flux * inv_h;
    }
    out
}

fn clip(field: &mut [f64], t: f64, what: &str, min_seen: &mut f64) -> Result<()> {
    for (c, x) in field.iter_mut().enumerate() {
        if !x.is_finite() {
            return Err(SimError::UnstableStep { t, reason: format!("non-finite {what} in cell {c}") });
        }
        if *x < 0.0 {
            *min_seen = min_seen.min(*x);
            if *x < CLIP_FLOOR {
                return Err(SimError::UnstableStep { t, reason: format!("{what} = {x} in cell {c}") });
            }
            *x = 0.0;
        }
    }
    Ok(())
}

/// One explicit Euler step. `dt` must not exceed [`stable_dt`].
pub fn step(state: &SimState, dt: f64, p: &Problem) -> Result<(SimState, StepResult)> {
    let sg = &p.sgrid;
    let g = &p.grid;
    let alpha = g.alpha;
    let n = sg.n_cells();
    let coeffs = sg.face_coefficients(&state.lambda_rec, &state.v, &p.reg);
    let courant = dt * rates(state, &coeffs, p).u_rate;
    let inflow = boundary_inflow(&state.v, &p.reg);
    let mut min_seen = 0.0f64;
    let mut theta_active = 0u64;
    let threshold = 0.5 / (alpha * alpha);

    let mut u_next = Vec::with_capacity(g.n_bins);
    for i in 0..g.n_bins {
        let ui = &state.u[i];
        let prev = if i == 0 { &inflow } else { &state.u[i - 1] };
        let mut rhs = vec![0.0; n];
        sg.accumulate_div_flux(&coeffs, ui, |x| p.reg.transported(x), &mut rhs);
        let mut next = Vec::with_capacity(n);
        for c in 0..n {
            if ui[c] > threshold {
                theta_active += 1;
            }
            let r = rhs[c] - (ui[c] - prev[c]) / alpha - g.mu[i] * ui[c];
            next.push(ui[c] + dt * r);
        }
        clip(&mut next, state.t, "u", &mut min_seen)?;
        u_next.push(next);
    }

    let mut v_rhs = vec![0.0; n];
    sg.accumulate_laplacian(&state.v, alpha, &mut v_rhs);
    let mut v_next = Vec::with_capacity(n);
    for c in 0..n {
        let s = state.v[c];
        let mut src = 0.0;
        for i in 0..g.n_bins {
            src += g.b[i] * g.mu[i] * state.u[i][c];
        }
        let r = v_rhs[c] + ((p.spec.growth)(s) - p.reg.xi_alpha(s)) * s + alpha * src;
        v_next.push(s + dt * r);
    }
    clip(&mut v_next, state.t, "v", &mut min_seen)?;

    // shadow Λ by Heun's method
    let k1 = shadow_rhs(&state.lambda_evolved, &state.u, &state.v, &inflow, p);
    let predictor: Field = state.lambda_evolved.iter().zip(&k1).map(|(l, k)| l + dt * k).collect();
    let inflow_next = boundary_inflow(&v_next, &p.reg);
    let k2 = shadow_rhs(&predictor, &u_next, &v_next, &inflow_next, p);
    let lambda_evolved: Field = state
        .lambda_evolved
        .iter()
        .zip(k1.iter().zip(&k2))
        .map(|(l, (a, b))| l + 0.5 * dt * (a + b))
        .collect();

    let lambda_rec = reconstruct_lambda(&u_next, g);
    let mut next = SimState {
        u: u_next,
        lambda_rec,
        lambda_evolved,
        v: v_next,
        t: state.t + dt,
        step_count: state.step_count + 1,
        tstar_crossed: state.tstar_crossed,
        theta_activations: state.theta_activations + theta_active,
    };
    monitor_tstar(&mut next, alpha);
    let result = StepResult {
        dt,
        courant,
        min_before_clip: min_seen,
        identity_residual: next.identity_residual(),
        theta_active,
    };
    Ok((next, result))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RunParams {
    pub t_end: f64,
    /// Spacing of sample times; the integration lands on every multiple.
    pub sample_every: f64,
    /// Upper bound on dt; the stability bound applies regardless.
    pub max_dt: Option<f64>,
    pub max_steps: u64,
}

impl RunParams {
    pub fn new(t_end: f64, sample_every: f64) -> Self {
        Self { t_end, sample_every, max_dt: None, max_steps: 50_000_000 }
    }

    pub fn n_samples(&self) -> usize {
        (self.t_end / self.sample_every - 1e-9).ceil() as usize
    }

    pub fn sample_time(&self, k: usize) -> f64 {
        (k as f64 * self.sample_every).min(self.t_end)
    }
}

/// Hooks invoked by [`run`]. `on_sample` fires at t = 0 and at each sample
/// time; `on_step` after every step.
pub trait Observer {
    fn on_sample(&mut self, _state: &SimState, _p: &Problem) -> Result<()> {
        Ok(())
    }
    fn on_step(&mut self, _prev: &SimState, _next: &SimState, _res: &StepResult, _p: &Problem) -> Result<()> {
        Ok(())
    }
}

impl Observer for () {}

impl<A: Observer, B: Observer> Observer for (A, B) {
    fn on_sample(&mut self, state: &SimState, p: &Problem) -> Result<()> {
        self.0.on_sample(state, p)?;
        self.1.on_sample(state, p)
    }
    fn on_step(&mut self, prev: &SimState, next: &SimState, res: &StepResult, p: &Problem) -> Result<()> {
        self.0.on_step(prev, next, res, p)?;
        self.1.on_step(prev, next, res, p)
    }
}

/// Keeps a copy of the state at every sample time.
#[derive(Debug, Default)]
pub struct SnapshotCollector {
    pub snapshots: Vec<SimState>,
    pub min_value: f64,
    pub max_courant: f64,
}

impl Observer for SnapshotCollector {
    fn on_sample(&mut self, state: &SimState, _p: &Problem) -> Result<()> {
        self.snapshots.push(state.clone());
        Ok(())
    }

    fn on_step(&mut self, _prev: &SimState, _next: &SimState, res: &StepResult, _p: &Problem) -> Result<()> {
        self.min_value = self.min_value.min(res.min_before_clip);
        self.max_courant = self.max_courant.max(res.courant);
        Ok(())
    }
}

/// Integrates from `state` to `params.t_end`, landing exactly on each
/// sample time.
pub fn run(mut state: SimState, params: &RunParams, p: &Problem, obs: &mut dyn Observer) -> Result<SimState> {
    obs.on_sample(&state, p)?;
    let n_samples = params.n_samples();
    for k in 1..=n_samples {
        let target = params.sample_time(k);
        while state.t < target {
            if state.step_count >= params.max_steps {
                return Err(SimError::UnstableStep { t: state.t, reason: "step budget exhausted".into() });
            }
            let mut dt = stable_dt(&state, p);
            if let Some(m) = params.max_dt {
                dt = dt.min(m);
            }
            let remaining = target - state.t;
            let landing = remaining <= dt * (1.0 + 1e-9);
            if landing {
                dt = remaining;
            }
            let (mut next, res) = step(&state, dt, p)?;
            if landing {
                next.t = target;
            }
            obs.on_step(&state, &next, &res, p)?;
            state = next;
        }
        obs.on_sample(&state, p)?;
    }
    Ok(state)
}
