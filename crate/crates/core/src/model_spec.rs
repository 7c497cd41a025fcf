//! Continuous model functions, the built-in parameter families, and sampled
//! verification of the structural hypotheses the existence theory relies on.

use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::quadrature::{adaptive_simpson, smoothstep};
use crate::table::TableFunction;

pub type Fn1 = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type Fn2 = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// The continuous model: age weights, transport coefficients and the
/// swimmer kinetics. Immutable after construction.
#[derive(Clone)]
pub struct ModelSpec {
    /// Mass weight λ(a).
    pub lambda: Fn1,
    /// Dedifferentiation weight b(a).
    pub b: Fn1,
    /// Dedifferentiation modulus μ(a).
    pub mu: Fn1,
    /// Diffusivity D(Λ).
    pub diffusivity: Fn1,
    /// Drift coefficient E(Λ, v).
    pub drift: Fn2,
    /// Swimmer growth rate g(v).
    pub growth: Fn1,
    /// Differentiation rate ξ(v).
    pub xi: Fn1,
    pub zeta2: Fn1,
    pub zeta2_prime: Fn1,
    /// Closed-form ζ₁ when the family provides one; quadrature otherwise.
    pub zeta1_closed: Option<Fn1>,
    /// Closed-form D′ when the family provides one; finite differences otherwise.
    pub diffusivity_prime_closed: Option<Fn1>,
    pub tau: f64,
    pub a_max_hint: f64,
}

impl std::fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelSpec")
            .field("tau", &self.tau)
            .field("a_max_hint", &self.a_max_hint)
            .finish_non_exhaustive()
    }
}

pub fn fn1(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Fn1 {
    Arc::new(f)
}

pub fn fn2(f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Fn2 {
    Arc::new(f)
}

/// Derivative by second-order differences; one-sided near the origin so that
/// functions only meaningful on [0, ∞) are never evaluated at negative points.
pub fn finite_difference(f: &dyn Fn(f64) -> f64, r: f64, h: f64) -> f64 {
    if r >= h {
        (f(r + h) - f(r - h)) / (2.0 * h)
    } else {
        (-3.0 * f(r) + 4.0 * f(r + h) - f(r + 2.0 * h)) / (2.0 * h)
    }
}

impl ModelSpec {
    /// The reference family: λ = m₀e^{a/τ}, b = e^{a/τ}, μ ≡ m₂,
    /// D = D₀rᶿ, E = D′, constant growth and a bump-shaped differentiation rate.
    pub fn exponential_reference(m0: f64, tau: f64, m2: f64, d0: f64, theta: f64) -> Self {
        ModelFamilies {
            age: AgeFamily::Exponential { m0, tau, m2 },
            diffusivity: DiffusivityFamily::Power { d0, theta },
            drift: DriftFamily::DiffusivityDerivative,
            growth: GrowthFamily::Constant { g0: 1.0 / tau },
            differentiation: DifferentiationFamily::Bump {
                amplitude: 0.5 / tau,
                s1: 0.05,
                s2: 1.0,
            },
        }
        .build()
        .expect("built-in families never fail to build")
    }

    pub fn zeta1_value(&self, r: f64) -> f64 {
        match &self.zeta1_closed {
            Some(z) => z(r.max(0.0)),
            None => zeta1(self, r.max(0.0)).unwrap_or(f64::NAN),
        }
    }

    pub fn zeta1_prime(&self, r: f64) -> f64 {
        if r <= 0.0 {
            return 0.0;
        }
        ((self.diffusivity)(r) / r).sqrt()
    }

    pub fn diffusivity_prime(&self, r: f64) -> f64 {
        match &self.diffusivity_prime_closed {
            Some(d) => d(r),
            None => {
                let h = 1e-6 * r.abs().max(1e-2);
                finite_difference(&*self.diffusivity, r, h)
            }
        }
    }

    /// D′/ζ₁′, continued by its value at a tiny positive argument at r ≤ 0.
    pub fn diffusivity_ratio(&self, r: f64) -> f64 {
        let r = r.max(1e-12);
        let z = self.zeta1_prime(r);
        if z == 0.0 {
            0.0
        } else {
            self.diffusivity_prime(r) / z
        }
    }

    /// E/ζ₂′, continued the same way as [`Self::diffusivity_ratio`].
    pub fn drift_ratio(&self, r: f64, s: f64) -> f64 {
        let r = r.max(1e-12);
        let z = (self.zeta2_prime)(r);
        let e = (self.drift)(r, s);
        if e == 0.0 {
            0.0
        } else {
            e / z
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum AgeFamily {
    /// λ(a) = m₀e^{a/τ}, b(a) = e^{a/τ}, μ ≡ m₂.
    Exponential { m0: f64, tau: f64, m2: f64 },
    Table {
        lambda: PathBuf,
        b: PathBuf,
        mu: PathBuf,
        tau: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum DiffusivityFamily {
    /// D(r) = D₀ rᶿ with θ ≥ 1 or θ = 0.
    Power { d0: f64, theta: f64 },
    /// Rejected at validation: drift-only swarming is outside the supported regime.
    Zero,
    Table { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum DriftFamily {
    /// E(r, s) = D′(r).
    DiffusivityDerivative,
    Constant { e0: f64 },
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum GrowthFamily {
    Constant { g0: f64 },
    Table { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum DifferentiationFamily {
    /// ξ(s) = amplitude·(4t(1−t))², t = (s − s₁)/(s₂ − s₁), zero off [s₁, s₂].
    Bump { amplitude: f64, s1: f64, s2: f64 },
    /// ξ(s) = ξ₀ for s > 0.
    Constant { xi0: f64 },
    Zero,
    Table { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFamilies {
    pub age: AgeFamily,
    pub diffusivity: DiffusivityFamily,
    pub drift: DriftFamily,
    pub growth: GrowthFamily,
    pub differentiation: DifferentiationFamily,
}

fn table(path: &PathBuf) -> Result<Fn1> {
    let t = TableFunction::from_csv(path)?;
    Ok(fn1(move |x| t.eval(x)))
}

impl ModelFamilies {
    /// Field-level parameter checks; every violation is reported.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        match &self.age {
            AgeFamily::Exponential { m0, tau, m2 } => {
                if !(*m0 > 0.0 && m0.is_finite()) {
                    out.push("model.age.m0: must be > 0".into());
                }
                if !(*tau > 0.0 && tau.is_finite()) {
                    out.push("model.age.tau: must be > 0".into());
                }
                if !(*m2 >= 0.0 && m2.is_finite()) {
                    out.push("model.age.m2: must be >= 0".into());
                }
            }
            AgeFamily::Table { tau, .. } => {
                if !(*tau > 0.0) {
                    out.push("model.age.tau: must be > 0".into());
                }
            }
        }
        match &self.diffusivity {
            DiffusivityFamily::Power { d0, theta } => {
                if !(*d0 > 0.0 && d0.is_finite()) {
                    out.push("model.diffusivity.d0: must be > 0".into());
                }
                if !(*theta == 0.0 || (*theta >= 1.0 && theta.is_finite())) {
                    out.push("model.diffusivity.theta: must satisfy theta >= 1 or theta = 0".into());
                }
            }
            DiffusivityFamily::Zero => out.push(
                "model.diffusivity: D = 0 (drift-only swarming) cannot be handled; a diffusivity positive on (0, inf) is required"
                    .into(),
            ),
            DiffusivityFamily::Table { .. } => {}
        }
        if let DriftFamily::Constant { e0 } = &self.drift {
            if !(*e0 >= 0.0 && e0.is_finite()) {
                out.push("model.drift.e0: must be >= 0".into());
            }
        }
        if let GrowthFamily::Constant { g0 } = &self.growth {
            if !g0.is_finite() {
                out.push("model.growth.g0: must be finite".into());
            }
        }
        match &self.differentiation {
            DifferentiationFamily::Bump { amplitude, s1, s2 } => {
                if !(*amplitude >= 0.0 && amplitude.is_finite()) {
                    out.push("model.differentiation.amplitude: must be >= 0".into());
                }
                if !(*s1 >= 0.0 && s2 > s1 && s2.is_finite()) {
                    out.push("model.differentiation: need 0 <= s1 < s2".into());
                }
            }
            DifferentiationFamily::Constant { xi0 } => {
                if !(*xi0 >= 0.0 && xi0.is_finite()) {
                    out.push("model.differentiation.xi0: must be >= 0".into());
                }
            }
            _ => {}
        }
        out
    }

    pub fn build(&self) -> Result<ModelSpec> {
        let v = self.violations();
        if !v.is_empty() {
            return Err(SimError::ConfigInvalid(v));
        }
        let (lambda, b, mu, tau) = match &self.age {
            AgeFamily::Exponential { m0, tau, m2 } => {
                let (m0, tau, m2) = (*m0, *tau, *m2);
                (
                    fn1(move |a| m0 * (a / tau).exp()),
                    fn1(move |a| (a / tau).exp()),
                    fn1(move |_| m2),
                    tau,
                )
            }
            AgeFamily::Table { lambda, b, mu, tau } => (table(lambda)?, table(b)?, table(mu)?, *tau),
        };

        let mut zeta1_closed = None;
        let mut d_prime_closed = None;
        let diffusivity = match &self.diffusivity {
            DiffusivityFamily::Power { d0, theta } => {
                let (d0, theta) = (*d0, *theta);
                if theta == 0.0 {
                    zeta1_closed = Some(fn1(move |r: f64| 2.0 * (d0 * r.max(0.0)).sqrt()));
                    d_prime_closed = Some(fn1(|_| 0.0));
                    fn1(move |_| d0)
                } else {
                    zeta1_closed = Some(fn1(move |r: f64| {
                        2.0 * d0.sqrt() * r.max(0.0).powf(0.5 * (theta + 1.0)) / (theta + 1.0)
                    }));
                    d_prime_closed =
                        Some(fn1(move |r: f64| theta * d0 * r.max(0.0).powf(theta - 1.0)));
                    fn1(move |r: f64| d0 * r.max(0.0).powf(theta))
                }
            }
            DiffusivityFamily::Zero => unreachable!("rejected by violations()"),
            DiffusivityFamily::Table { path } => table(path)?,
        };

        let (drift, zeta2, zeta2_prime): (Fn2, Fn1, Fn1) = match (&self.drift, &self.diffusivity) {
            (DriftFamily::Zero, _) | (DriftFamily::DiffusivityDerivative, DiffusivityFamily::Power { theta: 0.0, .. }) => {
                (fn2(|_, _| 0.0), fn1(|r| r), fn1(|_| 1.0))
            }
            (DriftFamily::Constant { e0 }, _) => {
                let e0 = *e0;
                (fn2(move |_, _| e0), fn1(|r| r), fn1(|_| 1.0))
            }
            (DriftFamily::DiffusivityDerivative, DiffusivityFamily::Power { d0, theta }) => {
                let (d0, theta) = (*d0, *theta);
                (
                    fn2(move |r: f64, _| theta * d0 * r.max(0.0).powf(theta - 1.0)),
                    fn1(move |r: f64| 2.0 * r.max(0.0).powf(0.5 * (theta + 1.0)) / (theta + 1.0)),
                    fn1(move |r: f64| r.max(0.0).powf(0.5 * (theta - 1.0))),
                )
            }
            (DriftFamily::DiffusivityDerivative, _) => {
                // E = D′ with ζ₂′ = √D′, which gives κ₂ = 1.
                let d = diffusivity.clone();
                let dp: Fn1 = fn1(move |r: f64| {
                    finite_difference(&*d, r.max(0.0), 1e-6 * r.abs().max(1e-2)).max(0.0)
                });
                let dp2 = dp.clone();
                let dp3 = dp.clone();
                (
                    fn2(move |r, _| dp(r)),
                    fn1(move |r: f64| {
                        if r <= 0.0 {
                            0.0
                        } else {
                            adaptive_simpson(0.0, r, 1e-10, &|s| dp2(s).sqrt()).unwrap_or(f64::NAN)
                        }
                    }),
                    fn1(move |r| dp3(r).sqrt()),
                )
            }
        };

        let growth = match &self.growth {
            GrowthFamily::Constant { g0 } => {
                let g0 = *g0;
                fn1(move |_| g0)
            }
            GrowthFamily::Table { path } => table(path)?,
        };
        let xi = match &self.differentiation {
            DifferentiationFamily::Bump { amplitude, s1, s2 } => {
                let (amp, s1, s2) = (*amplitude, *s1, *s2);
                fn1(move |s: f64| {
                    if s <= s1 || s >= s2 {
                        0.0
                    } else {
                        let t = (s - s1) / (s2 - s1);
                        let q = 4.0 * t * (1.0 - t);
                        amp * q * q
                    }
                })
            }
            DifferentiationFamily::Constant { xi0 } => {
                let xi0 = *xi0;
                fn1(move |s| if s > 0.0 { xi0 } else { 0.0 })
            }
            DifferentiationFamily::Zero => fn1(|_| 0.0),
            DifferentiationFamily::Table { path } => {
                let t = table(path)?;
                fn1(move |s| if s > 0.0 { t(s) } else { 0.0 })
            }
        };

        Ok(ModelSpec {
            lambda,
            b,
            mu,
            diffusivity,
            drift,
            growth,
            xi,
            zeta2,
            zeta2_prime,
            zeta1_closed,
            diffusivity_prime_closed: d_prime_closed,
            tau,
            a_max_hint: 4.0 * tau,
        })
    }
}

/// Outcome of one hypothesis check; failing checks carry a witness point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HypothesisCheck {
    pub passed: bool,
    pub witness: Option<Witness>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Witness {
    pub point: Vec<f64>,
    pub detail: String,
}

impl HypothesisCheck {
    fn pass() -> Self {
        Self { passed: true, witness: None }
    }

    fn fail(point: Vec<f64>, detail: impl Into<String>) -> Self {
        Self {
            passed: false,
            witness: Some(Witness { point, detail: detail.into() }),
        }
    }

    fn and(self, other: impl FnOnce() -> HypothesisCheck) -> Self {
        if self.passed {
            other()
        } else {
            self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Kappas {
    pub r: f64,
    /// `None` marks a ratio that blew up on the sample set.
    pub kappa1: Option<f64>,
    pub kappa2: Option<f64>,
    pub kappa3: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HypothesisReport {
    pub ell0: f64,
    pub b0: f64,
    pub l0: f64,
    pub beta0: f64,
    /// κ₁, κ₂, κ₃ at R_max/8, R_max/4, R_max/2 and R_max.
    pub kappas: Vec<Kappas>,
    pub h1: HypothesisCheck,
    pub h2: HypothesisCheck,
    pub h3: HypothesisCheck,
    pub h4: HypothesisCheck,
    pub h5: HypothesisCheck,
    pub h6: HypothesisCheck,
    pub r_max: f64,
    pub a_max: f64,
    pub n_samples: usize,
}

impl HypothesisReport {
    pub fn all_passed(&self) -> bool {
        [&self.h1, &self.h2, &self.h3, &self.h4, &self.h5, &self.h6]
            .iter()
            .all(|c| c.passed)
    }

    pub fn kappa_at_rmax(&self) -> Kappas {
        *self.kappas.last().expect("at least one radius")
    }
}

/// Sample radii in (0, R]: a fixed geometric cluster near zero plus a uniform
/// grid. Doubling `n` yields a superset.
pub fn radius_samples(r_max: f64, n: usize) -> Vec<f64> {
    let mut out: Vec<f64> = (0..=16).map(|k| r_max * 10f64.powf(-8.0 + 6.0 * k as f64 / 16.0)).collect();
    out.extend((1..=n).map(|i| r_max * i as f64 / n as f64));
    out.sort_by(f64::total_cmp);
    out.dedup();
    out
}

fn finite(function: &'static str, at: f64, value: f64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(SimError::NonFiniteEvaluation { function, at })
    }
}

/// Sup over sampled a ∈ [0, A] and α ∈ (0, 1) of (f(a + α)/f(a) − 1)/α, and
/// the same for a shift to the left when `backward` is set.
fn growth_constant(f: &dyn Fn(f64) -> f64, a_samples: &[f64], alphas: &[f64], backward: bool) -> (f64, Vec<f64>) {
    let mut best = f64::NEG_INFINITY;
    let mut at = vec![0.0, 0.0];
    for &a in a_samples.iter().filter(|&&a| a > 0.0) {
        let fa = f(a);
        for &al in alphas {
            let fwd = (f(a + al) / fa - 1.0) / al;
            if fwd > best || fwd.is_nan() {
                best = fwd;
                at = vec![a, al];
            }
            if backward && a > al {
                let bwd = (f(a - al) / fa - 1.0) / al;
                if bwd > best || bwd.is_nan() {
                    best = bwd;
                    at = vec![a, -al];
                }
            }
        }
    }
    (best, at)
}

/// Sampled verification of (h1)–(h6).
pub fn validate_hypotheses(spec: &ModelSpec, r_max: f64, a_max: f64, n_samples: usize) -> Result<HypothesisReport> {
    assert!(n_samples >= 64, "validate_hypotheses needs at least 64 samples");
    assert!(r_max > 0.0 && a_max > 0.0);
    let n = n_samples;
    let a_samples: Vec<f64> = (0..=n).map(|i| a_max * i as f64 / n as f64).collect();
    let alphas: Vec<f64> = (1..n).map(|j| j as f64 / n as f64).collect();
    let radii = radius_samples(r_max, n);

    for &a in &a_samples {
        finite("lambda", a, (spec.lambda)(a))?;
        finite("b", a, (spec.b)(a))?;
        finite("mu", a, (spec.mu)(a))?;
    }
    for &r in &radii {
        finite("D", r, (spec.diffusivity)(r))?;
        finite("g", r, (spec.growth)(r))?;
        finite("xi", r, (spec.xi)(r))?;
        finite("xi", -r, (spec.xi)(-r))?;
        finite("zeta2_prime", r, (spec.zeta2_prime)(r))?;
        if (spec.diffusivity)(r) <= 0.0 {
            return Err(SimError::DegenerateDiffusion { r });
        }
    }

    // (h1)
    let mut h1 = HypothesisCheck::pass();
    for &r in &radii {
        if (spec.xi)(-r) != 0.0 {
            h1 = HypothesisCheck::fail(vec![-r], "xi(s) != 0 for s <= 0");
            break;
        }
    }
    if h1.passed {
        for &s in std::iter::once(&0.0).chain(radii.iter()) {
            let (x, g) = ((spec.xi)(s), (spec.growth)(s));
            if x < 0.0 || x > g {
                h1 = HypothesisCheck::fail(vec![s], format!("0 <= xi(s) <= g(s) violated: xi = {x}, g = {g}"));
                break;
            }
        }
    }

    // (h2)
    let (b0, b_at) = growth_constant(&*spec.b, &a_samples, &alphas, false);
    let b_at0 = (spec.b)(0.0);
    let mut h2 = if (b_at0 - 1.0).abs() > 1e-12 {
        HypothesisCheck::fail(vec![0.0], format!("b(0) = {b_at0} != 1"))
    } else {
        HypothesisCheck::pass()
    };
    h2 = h2.and(|| {
        for w in a_samples.windows(2) {
            if (spec.b)(w[1]) < (spec.b)(w[0]) {
                return HypothesisCheck::fail(vec![w[1]], "b is decreasing");
            }
        }
        HypothesisCheck::pass()
    });
    h2 = h2.and(|| {
        let (half, end) = ((spec.b)(0.5 * a_max), (spec.b)(a_max));
        if !(end > half && half > b_at0) {
            HypothesisCheck::fail(vec![a_max], "b(a) -> infinity violated: b is bounded on the sampled range")
        } else {
            HypothesisCheck::pass()
        }
    });
    h2 = h2.and(|| {
        if !b0.is_finite() {
            HypothesisCheck::fail(b_at.clone(), "growth ratio of b is unbounded")
        } else {
            HypothesisCheck::pass()
        }
    });

    // (h3)
    let ell0 = a_samples.iter().map(|&a| (spec.lambda)(a)).fold(f64::INFINITY, f64::min);
    let (l0_raw, l_at) = growth_constant(&*spec.lambda, &a_samples, &alphas, true);
    let mut h3 = if ell0 <= 0.0 {
        let at = a_samples
            .iter()
            .copied()
            .find(|&a| (spec.lambda)(a) <= 0.0)
            .unwrap_or(0.0);
        HypothesisCheck::fail(vec![at], "inf lambda > 0 violated")
    } else {
        HypothesisCheck::pass()
    };
    h3 = h3.and(|| {
        if l0_raw.is_finite() {
            HypothesisCheck::pass()
        } else {
            HypothesisCheck::fail(l_at.clone(), "growth ratio of lambda is unbounded")
        }
    });
    let l0 = if l0_raw.is_finite() { l0_raw.max(0.0) } else { f64::INFINITY };

    // (h4)
    let mut beta0: f64 = 1.0;
    let mut h4 = HypothesisCheck::pass();
    for &a in &a_samples {
        let (m, bb, l) = ((spec.mu)(a), (spec.b)(a), (spec.lambda)(a));
        if m < 0.0 {
            h4 = HypothesisCheck::fail(vec![a], "mu < 0");
            break;
        }
        if l <= 0.0 || bb <= 0.0 {
            if m * bb > 0.0 || l > 0.0 {
                h4 = HypothesisCheck::fail(vec![a], "mu b <= beta0 lambda <= beta0^2 b cannot hold");
                break;
            }
            continue;
        }
        beta0 = beta0.max(m * bb / l).max(l / bb);
    }
    if h4.passed {
        // β₀λ ≤ β₀²b is equivalent to λ ≤ β₀b, already folded into beta0.
        for &a in &a_samples {
            let (m, bb, l) = ((spec.mu)(a), (spec.b)(a), (spec.lambda)(a));
            if m * bb > beta0 * l * (1.0 + 1e-12) || beta0 * l > beta0 * beta0 * bb * (1.0 + 1e-12) {
                h4 = HypothesisCheck::fail(vec![a], "mu b <= beta0 lambda <= beta0^2 b violated");
                break;
            }
        }
    }

    // (h5)
    let mut h5 = HypothesisCheck::pass();
    let mut prev = ((spec.diffusivity)(0.0), 0.0);
    for &r in &radii {
        let d = (spec.diffusivity)(r);
        if d < prev.0 {
            h5 = HypothesisCheck::fail(vec![prev.1, r], "D is decreasing");
            break;
        }
        prev = (d, r);
    }

    let kappas: Vec<Kappas> = [0.125, 0.25, 0.5, 1.0]
        .iter()
        .map(|f| estimate_kappas(spec, f * r_max, n))
        .collect::<Result<_>>()?;
    let top = *kappas.last().unwrap();
    h5 = h5.and(|| {
        if top.kappa1.is_some() {
            HypothesisCheck::pass()
        } else {
            HypothesisCheck::fail(vec![r_max], "D'/zeta1' unbounded")
        }
    });

    // (h6)
    let mut h6 = HypothesisCheck::pass();
    if (spec.zeta2)(0.0).abs() > 1e-12 {
        h6 = HypothesisCheck::fail(vec![0.0], "zeta2(0) != 0");
    }
    h6 = h6.and(|| {
        for &r in &radii {
            if (spec.zeta2_prime)(r) <= 0.0 {
                return HypothesisCheck::fail(vec![r], "zeta2'(r) > 0 violated");
            }
            for s in box_samples(r_max) {
                if (spec.drift)(r, s) < 0.0 {
                    return HypothesisCheck::fail(vec![r, s], "E < 0");
                }
            }
        }
        HypothesisCheck::pass()
    });
    h6 = h6.and(|| {
        let e_zero = radii.iter().all(|&r| box_samples(r_max).all(|s| (spec.drift)(r, s) == 0.0));
        match (top.kappa2, top.kappa3) {
            (Some(k2), Some(_)) if k2 > 0.0 || e_zero => HypothesisCheck::pass(),
            (Some(_), Some(_)) => HypothesisCheck::fail(vec![r_max], "kappa2(R) > 0 violated"),
            _ => HypothesisCheck::fail(vec![r_max], "E/zeta2' or E/zeta2'^2 unbounded"),
        }
    });

    Ok(HypothesisReport {
        ell0,
        b0: b0.max(0.0),
        l0,
        beta0,
        kappas,
        h1,
        h2,
        h3,
        h4,
        h5,
        h6,
        r_max,
        a_max,
        n_samples,
    })
}

fn box_samples(r: f64) -> impl Iterator<Item = f64> {
    (0..=32).map(move |j| r * j as f64 / 32.0)
}

/// ζ₁(r) = ∫₀ʳ (D(s)/s)^{1/2} ds. The substitution s = r w² removes the
/// inverse square-root singularity: ζ₁(r) = 2√r ∫₀¹ √D(r w²) dw.
pub fn zeta1(spec: &ModelSpec, r: f64) -> Result<f64> {
    assert!(r >= 0.0, "zeta1 requires r >= 0");
    if r == 0.0 {
        return Ok(0.0);
    }
    let scale = 2.0 * r.sqrt();
    let integrand = |w: f64| (spec.diffusivity)(r * w * w).max(0.0).sqrt();
    // absolute 1e-10, tightened to relative accuracy for small integrals
    let rough = scale * crate::quadrature::gauss_legendre8(0.0, 1.0, integrand);
    let tol = 1e-10 * rough.abs().clamp(1e-6, 1.0) / scale;
    adaptive_simpson(0.0, 1.0, tol, &integrand)
        .map(|v| v * scale)
        .filter(|v| v.is_finite())
        .ok_or(SimError::QuadratureDivergence { r })
}

/// Sampled κ₁(R) = sup D′/ζ₁′, κ₂(R) = inf E/ζ₂′², κ₃(R) = sup E/ζ₂′.
pub fn estimate_kappas(spec: &ModelSpec, r: f64, n_samples: usize) -> Result<Kappas> {
    assert!(r > 0.0);
    let h = r * 1e-6;
    let radii = radius_samples(r, n_samples);
    let mut k1 = 0.0f64;
    let mut k2 = f64::INFINITY;
    let mut k3 = 0.0f64;
    for &x in &radii {
        let dp = finite_difference(&*spec.diffusivity, x, h);
        let z1 = spec.zeta1_prime(x);
        let ratio = if z1 > 0.0 { dp / z1 } else { f64::INFINITY };
        k1 = k1.max(ratio);
        let z2 = (spec.zeta2_prime)(x);
        for s in box_samples(r) {
            let e = (spec.drift)(x, s);
            if z2 == 0.0 {
                if e != 0.0 {
                    return Err(SimError::RatioUndefined { r: x, e });
                }
                continue;
            }
            k2 = k2.min(e / (z2 * z2));
            k3 = k3.max(e / z2);
        }
    }
    let tame = |v: f64| v.is_finite().then_some(v);
    Ok(Kappas {
        r,
        kappa1: tame(k1),
        kappa2: tame(k2),
        kappa3: tame(k3),
    })
}

/// Canonical smooth step used by built-in test functions and tail weights:
/// 0 on (−∞, ½], 1 on [1, ∞), non-decreasing.
pub fn ramp(r: f64) -> f64 {
    smoothstep(2.0 * r - 1.0)
}
