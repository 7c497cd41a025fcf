//! Age bins of width α, their cell-averaged coefficients, and the regularized
//! model functions used by the binned system.

use serde::Serialize;

use crate::error::{Result, SimError};
use crate::model_spec::{HypothesisReport, ModelSpec};
use crate::quadrature::{cell_average, smoothstep, smoothstep_derivative};
use crate::spatial_grid::{Field, SpatialGrid};

#[derive(Debug, Clone, Serialize)]
pub struct AgeGrid {
    pub alpha: f64,
    pub n_bins: usize,
    /// Cell averages over bins 1..=I+1, stored zero-based.
    pub lambda: Vec<f64>,
    pub b: Vec<f64>,
    pub mu: Vec<f64>,
    /// (x_{i+1} − x_i)/α for i = 1..=I.
    pub lambda_star: Vec<f64>,
    pub b_star: Vec<f64>,
    pub constants: DiscreteConstants,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DiscreteConstants {
    pub ell: f64,
    pub big_b: f64,
    pub big_l: f64,
    pub big_m: f64,
    pub beta: f64,
}

/// I(α) = min(⌊1/α²⌋, ⌈a_max/α⌉).
pub fn bin_count(alpha: f64, a_max: f64) -> usize {
    let full = (1.0 / (alpha * alpha) + 1e-9).floor() as usize;
    let capped = (a_max / alpha - 1e-9).ceil() as usize;
    full.min(capped).max(1)
}

impl AgeGrid {
    /// Left and right age of bin `i` (1-based).
    pub fn bin_edges(&self, i: usize) -> (f64, f64) {
        ((i - 1) as f64 * self.alpha, i as f64 * self.alpha)
    }

    pub fn age_horizon(&self) -> f64 {
        self.n_bins as f64 * self.alpha
    }

    fn measure(lambda: &[f64], b: &[f64], mu: &[f64], ls: &[f64], bs: &[f64]) -> DiscreteConstants {
        let n = ls.len();
        let ell = lambda.iter().copied().fold(f64::INFINITY, f64::min);
        let big_b = (0..n).map(|i| bs[i] / b[i]).fold(0.0, f64::max);
        let big_l = (0..n).map(|i| ls[i] / lambda[i]).fold(0.0, f64::max);
        let big_m = mu[..n].iter().copied().fold(0.0, f64::max);
        let beta = (0..n)
            .map(|i| (mu[i] * b[i] / lambda[i]).max(lambda[i] / b[i]))
            .fold(0.0, f64::max);
        DiscreteConstants { ell, big_b, big_l, big_m, beta }
    }
}

pub fn build_age_grid(spec: &ModelSpec, alpha: f64, a_max: f64) -> Result<AgeGrid> {
    assert!(alpha > 0.0 && alpha < 1.0, "alpha must lie in (0, 1)");
    assert!(a_max >= alpha, "a_max must be at least alpha");
    let n = bin_count(alpha, a_max);
    let avg = |f: &dyn Fn(f64) -> f64| -> Vec<f64> {
        (1..=n + 1)
            .map(|i| cell_average((i - 1) as f64 * alpha, i as f64 * alpha, f))
            .collect()
    };
    let lambda = avg(&*spec.lambda);
    let b = avg(&*spec.b);
    let mu = avg(&*spec.mu);
    let quot = |x: &[f64]| -> Vec<f64> { (0..n).map(|i| (x[i + 1] - x[i]) / alpha).collect() };
    let lambda_star = quot(&lambda);
    let b_star = quot(&b);
    let constants = AgeGrid::measure(&lambda, &b, &mu, &lambda_star, &b_star);
    let grid = AgeGrid { alpha, n_bins: n, lambda, b, mu, lambda_star, b_star, constants };
    let report = check_discrete_hypotheses(&grid, None);
    if let Some(c) = report.checks.iter().find(|c| !c.passed) {
        return Err(SimError::HypothesisViolation(format!("{} (at bin {})", c.name, c.first_failure.unwrap_or(0))));
    }
    Ok(grid)
}

#[derive(Debug, Clone, Serialize)]
pub struct DiscreteCheck {
    pub name: &'static str,
    pub passed: bool,
    /// 1-based bin of the first violation.
    pub first_failure: Option<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DiscreteReport {
    pub constants: DiscreteConstants,
    pub checks: Vec<DiscreteCheck>,
    /// B ≤ B₀, L ≤ L₀ and β ≤ β₀(1 + B₀) against a continuum report.
    pub within_continuum_bounds: Option<bool>,
}

impl DiscreteReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

pub fn check_discrete_hypotheses(grid: &AgeGrid, continuum: Option<&HypothesisReport>) -> DiscreteReport {
    let c = grid.constants;
    let n = grid.n_bins;
    let tol = 1e-12;
    let check = |name: &'static str, ok: &dyn Fn(usize) -> bool| {
        let first = (0..n).find(|&i| !ok(i)).map(|i| i + 1);
        DiscreteCheck { name, passed: first.is_none(), first_failure: first }
    };
    let (l, b, mu, ls, bs) = (&grid.lambda, &grid.b, &grid.mu, &grid.lambda_star, &grid.b_star);
    let checks = vec![
        check("b_i >= 1", &|i| b[i] >= 1.0 - tol),
        check("lambda_i >= ell > 0", &|i| l[i] > 0.0 && l[i] >= c.ell),
        check("0 <= b*_i <= B b_i", &|i| bs[i] >= -tol && bs[i] <= c.big_b * b[i] * (1.0 + tol) + tol),
        check("lambda*_i <= L lambda_i", &|i| ls[i] <= c.big_l * l[i] * (1.0 + tol) + tol),
        check("mu_i <= M", &|i| mu[i] >= 0.0 && mu[i] <= c.big_m),
        check("mu_i b_i <= beta lambda_i <= beta^2 b_i", &|i| {
            mu[i] * b[i] <= c.beta * l[i] * (1.0 + tol) && c.beta * l[i] <= c.beta * c.beta * b[i] * (1.0 + tol)
        }),
    ];
    let within = continuum.map(|h| {
        let slack = 1.0 + 1e-9;
        c.big_b <= h.b0 * slack + 1e-12
            && c.big_l <= h.l0 * slack + 1e-12
            && c.beta <= h.beta0 * (1.0 + h.b0) * slack
            && c.ell >= h.ell0 * (1.0 - 1e-12)
    });
    DiscreteReport { constants: c, checks, within_continuum_bounds: within }
}

/// Θ: 1 on (−∞, ½], 0 on [1, ∞), quintic in between.
pub fn theta(r: f64) -> f64 {
    1.0 - smoothstep(2.0 * r - 1.0)
}

pub fn theta_prime(r: f64) -> f64 {
    -2.0 * smoothstep_derivative(2.0 * r - 1.0)
}

/// D_α = D + α, argument-clamped E_α and ξ_α, and the cutoff Θ.
#[derive(Debug, Clone)]
pub struct RegularizedModel {
    pub spec: ModelSpec,
    pub alpha: f64,
    /// Upper bound of (1 + s)ξ_α(s) + E_α(r, s) over the clamped box.
    pub xi_bound: f64,
}

pub fn regularize(spec: &ModelSpec, alpha: f64) -> RegularizedModel {
    assert!(alpha > 0.0 && alpha < 1.0, "alpha must lie in (0, 1)");
    let top = 1.0 / alpha;
    let n = 512;
    let pts: Vec<f64> = (0..=n).map(|k| top * k as f64 / n as f64).collect();
    let xi_part = pts.iter().map(|&s| (1.0 + s) * (spec.xi)(s)).fold(0.0, f64::max);
    let mut e_part = 0.0f64;
    for &r in pts.iter().step_by(4) {
        for &s in pts.iter().step_by(16) {
            e_part = e_part.max((spec.drift)(r, s));
        }
    }
    RegularizedModel { spec: spec.clone(), alpha, xi_bound: xi_part + e_part }
}

impl RegularizedModel {
    pub fn clamp(&self, r: f64) -> f64 {
        r.clamp(0.0, 1.0 / self.alpha)
    }

    pub fn d_alpha(&self, r: f64) -> f64 {
        (self.spec.diffusivity)(r) + self.alpha
    }

    pub fn e_alpha(&self, r: f64, s: f64) -> f64 {
        (self.spec.drift)(self.clamp(r), self.clamp(s))
    }

    pub fn xi_alpha(&self, s: f64) -> f64 {
        (self.spec.xi)(self.clamp(s))
    }

    /// uΘ(α²u), the quantity the drift transports.
    pub fn transported(&self, u: f64) -> f64 {
        u * theta(self.alpha * self.alpha * u)
    }

    pub fn theta(&self, r: f64) -> f64 {
        theta(r)
    }
}

/// Bin averages of u⁰(a, x) at each cell centre, clamped to 1/(4α²).
pub fn age_average_initial(
    u0: &dyn Fn(f64, [f64; 2]) -> f64,
    grid: &AgeGrid,
    sgrid: &SpatialGrid,
) -> Result<Vec<Field>> {
    let cap = 0.25 / (grid.alpha * grid.alpha);
    let mut clamped = 0usize;
    let mut bins = Vec::with_capacity(grid.n_bins);
    for i in 1..=grid.n_bins {
        let (a0, a1) = grid.bin_edges(i);
        let mut field = Vec::with_capacity(sgrid.n_cells());
        for c in 0..sgrid.n_cells() {
            let x = sgrid.cell_center(c);
            let value = cell_average(a0, a1, |a| u0(a, x));
            if !value.is_finite() || value < 0.0 {
                return Err(SimError::NegativeInitialData { bin: i, cell: c, value });
            }
            if value > cap {
                clamped += 1;
                field.push(cap);
            } else {
                field.push(value);
            }
        }
        bins.push(field);
    }
    if clamped > 0 {
        log::warn!("initial swarmer data clamped to 1/(4 alpha^2) = {cap} in {clamped} (bin, cell) entries");
    }
    Ok(bins)
}

/// φ(r) = r(ln r − 1) + 1 with φ(0) = 1.
pub fn entropy_density(r: f64) -> f64 {
    if r <= 0.0 {
        1.0
    } else {
        r * (r.ln() - 1.0) + 1.0
    }
}

/// Λ = αΣλ_i u_i.
pub fn reconstruct_lambda(u: &[Field], grid: &AgeGrid) -> Field {
    let n = u.first().map_or(0, |f| f.len());
    let mut out = vec![0.0; n];
    for (i, ui) in u.iter().enumerate() {
        let w = grid.alpha * grid.lambda[i];
        for (o, x) in out.iter_mut().zip(ui) {
            *o += w * x;
        }
    }
    out
}

/// ∫(αΣb_i u_i⁰ + v⁰ + αΣλ_iφ(u_i⁰)) + b₁ + λ₁ + ‖Λ⁰‖_∞ + ‖v⁰‖_∞.
pub fn compute_k0(u0: &[Field], v0: &[f64], grid: &AgeGrid, sgrid: &SpatialGrid) -> f64 {
    let a = grid.alpha;
    let mut density = vec![0.0; sgrid.n_cells()];
    for (i, ui) in u0.iter().enumerate() {
        for (d, &x) in density.iter_mut().zip(ui) {
            *d += a * grid.b[i] * x + a * grid.lambda[i] * entropy_density(x);
        }
    }
    for (d, &x) in density.iter_mut().zip(v0) {
        *d += x;
    }
    let lam = reconstruct_lambda(u0, grid);
    let sup = |f: &[f64]| f.iter().copied().fold(0.0, f64::max);
    sgrid.integrate(&density) + grid.b[0] + grid.lambda[0] + sup(&lam) + sup(v0)
}
