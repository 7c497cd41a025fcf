//! Bounds evaluated from measured constants and the recorded trajectory.

use serde::Serialize;

use super::{DiagnosticSample, DiagnosticsRecord, MeasuredConstants};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateId {
    Mass,
    /// ‖v‖_∞ against the first component of the comparison system.
    SupSwimmer,
    /// ‖Λ‖_∞ against the second component.
    SupLambda,
    Entropy,
    Dissipation,
    GradientZeta1,
    GradientZeta2,
    /// Index into the record's tail ages.
    Tail(usize),
    KBound,
    Laplacian,
    /// α ≤ ℓ/(4c₃) with c₃ the observed sup of ‖Λ‖_∞ + ‖v‖_∞.
    SmallAlpha,
}

impl EstimateId {
    pub fn name(&self) -> String {
        match self {
            Self::Mass => "mass".into(),
            Self::SupSwimmer => "sup_v".into(),
            Self::SupLambda => "sup_lambda".into(),
            Self::Entropy => "entropy".into(),
            Self::Dissipation => "dissipation".into(),
            Self::GradientZeta1 => "grad_zeta1".into(),
            Self::GradientZeta2 => "grad_zeta2".into(),
            Self::Tail(k) => format!("tail_{k}"),
            Self::KBound => "k_bound".into(),
            Self::Laplacian => "laplacian".into(),
            Self::SmallAlpha => "small_alpha".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MarginSample {
    pub t: f64,
    pub bound: f64,
    pub observed: f64,
    /// bound − observed
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarginReport {
    pub estimate: String,
    pub samples: Vec<MarginSample>,
    pub min_margin: f64,
    pub passed: bool,
    /// Set when a precondition of the bound does not hold; the check is then
    /// vacuous and counts as passed.
    pub skipped: Option<String>,
}

/// Rounding allowance relative to the size of the bound.
const ROUNDING: f64 = 1e-10;

impl MarginReport {
    fn from_samples(estimate: String, samples: Vec<MarginSample>) -> Self {
        let min_margin = samples.iter().map(|s| s.margin).fold(f64::INFINITY, f64::min);
        let passed = samples.iter().all(|s| s.margin >= -ROUNDING * (1.0 + s.bound.abs()));
        Self { estimate, samples, min_margin, passed, skipped: None }
    }

    fn skipped(estimate: String, why: String) -> Self {
        Self { estimate, samples: Vec::new(), min_margin: f64::INFINITY, passed: true, skipped: Some(why) }
    }
}

fn mass_rate(c: &MeasuredConstants) -> f64 {
    c.b1 * c.g_sup + c.big_b
}

/// e^{(b₁G + B)t}·M(0).
pub fn mass_envelope(c: &MeasuredConstants, m0: f64, t: f64) -> f64 {
    (mass_rate(c) * t).exp() * m0
}

/// Solution at t of x′ = [[a, b], [c, d]]x, x(0) = x0, for bc ≥ 0.
fn exp2(m: [[f64; 2]; 2], x0: [f64; 2], t: f64) -> [f64; 2] {
    let s = 0.5 * (m[0][0] + m[1][1]);
    let half = 0.5 * (m[0][0] - m[1][1]);
    let q = (half * half + m[0][1] * m[1][0]).max(0.0).sqrt();
    let (ch, sh) = if q * t < 1e-8 {
        (1.0, t)
    } else {
        ((q * t).cosh(), (q * t).sinh() / q)
    };
    let e = (s * t).exp();
    let a = [[m[0][0] - s, m[0][1]], [m[1][0], m[1][1] - s]];
    [
        e * (ch * x0[0] + sh * (a[0][0] * x0[0] + a[0][1] * x0[1])),
        e * (ch * x0[1] + sh * (a[1][0] * x0[0] + a[1][1] * x0[1])),
    ]
}

/// Comparison system v̄′ = Gv̄ + βΛ̄, Λ̄′ = λ₁Gv̄ + LΛ̄ from the initial sups;
/// returns (v̄(t), Λ̄(t)).
pub fn sup_envelope(c: &MeasuredConstants, v0: f64, lambda0: f64, t: f64) -> [f64; 2] {
    let m = [[c.g_sup, c.beta], [c.lambda1 * c.g_sup, c.big_l]];
    exp2(m, [v0, lambda0], t)
}

fn entropy_rate(c: &MeasuredConstants) -> f64 {
    c.big_l + c.big_m
}

fn entropy_forcing(c: &MeasuredConstants, s: &DiagnosticSample) -> f64 {
    c.lambda1 * s.acc_inflow_entropy + c.big_m * s.acc_lambda_integral
}

fn margins(
    record: &DiagnosticsRecord,
    mut f: impl FnMut(&DiagnosticSample, &DiagnosticSample) -> (f64, f64),
) -> Vec<MarginSample> {
    let first = &record.samples[0];
    record
        .samples
        .iter()
        .map(|s| {
            let (bound, observed) = f(first, s);
            MarginSample { t: s.t, bound, observed, margin: bound - observed }
        })
        .collect()
}

pub fn envelope_check(record: &DiagnosticsRecord, id: EstimateId) -> MarginReport {
    let name = id.name();
    if record.samples.is_empty() {
        return MarginReport::skipped(name, "no samples recorded".into());
    }
    let c = &record.constants;
    let alpha = record.alpha;
    let samples = match id {
        EstimateId::Mass => margins(record, |s0, s| (mass_envelope(c, s0.mass_b, s.t), s.mass_b)),
        EstimateId::SupSwimmer => margins(record, |s0, s| {
            (sup_envelope(c, s0.linf_v, s0.linf_lambda, s.t)[0], s.linf_v)
        }),
        EstimateId::SupLambda => margins(record, |s0, s| {
            (sup_envelope(c, s0.linf_v, s0.linf_lambda, s.t)[1], s.linf_lambda)
        }),
        EstimateId::Entropy => {
            let k = entropy_rate(c);
            margins(record, |s0, s| ((k * s.t).exp() * (s0.entropy + entropy_forcing(c, s)), s.entropy))
        }
        EstimateId::Dissipation => {
            let k = entropy_rate(c);
            margins(record, |s0, s| {
                (
                    s0.entropy - s.entropy + entropy_forcing(c, s) + k * s.acc_entropy,
                    s.acc_dissipation_u + s.acc_dissipation_e,
                )
            })
        }
        EstimateId::GradientZeta1 => margins(record, |_, s| (8.0 * s.acc_dissipation_u, s.acc_grad_zeta1_sq)),
        EstimateId::GradientZeta2 => match c.kappa2 {
            Some(k2) => margins(record, |_, s| (2.0 * s.acc_dissipation_e / k2, s.acc_grad_zeta2_sq)),
            None => return MarginReport::skipped(name, "drift vanishes on the observed range".into()),
        },
        EstimateId::Tail(k) => {
            let Some(&a) = record.tail_ages.get(k) else {
                return MarginReport::skipped(name, format!("no tail age with index {k}"));
            };
            if a < 4.0 * alpha {
                return MarginReport::skipped(name, format!("tail age {a} is below 4 alpha"));
            }
            let b = c.big_b;
            let eta_star = record.tail_eta_star[k];
            margins(record, |s0, s| {
                let growth = if b > 0.0 { ((b * s.t).exp() - 1.0) / b } else { s.t };
                let bound = (b * s.t).exp() * s0.tails_weighted[k]
                    + (1.0 + alpha * b) * eta_star * mass_envelope(c, s0.mass_b, s.t) * growth;
                (bound, s.tails[k])
            })
        }
        EstimateId::KBound => margins(record, |_, s| (1.0 / (alpha * alpha) + c.xi * s.t / alpha, s.max_u)),
        EstimateId::Laplacian => {
            let (g, beta) = (c.g_sup, c.beta);
            margins(record, |_, s| {
                let bound = alpha * record.grad_v0_sq
                    + g * g * s.acc_v_l2_sq
                    + 2.0 * g * beta * s.acc_v_lambda_l2
                    + beta * beta * s.acc_lambda_l2_sq;
                (bound, s.delta_v_accum)
            })
        }
        EstimateId::SmallAlpha => {
            let last = record.samples.last().expect("non-empty");
            let bound = if c.c3_observed > 0.0 { c.ell / (4.0 * c.c3_observed) } else { f64::INFINITY };
            vec![MarginSample { t: last.t, bound, observed: alpha, margin: bound - alpha }]
        }
    };
    MarginReport::from_samples(name, samples)
}

pub fn all_estimates(record: &DiagnosticsRecord) -> Vec<EstimateId> {
    let mut ids = vec![
        EstimateId::Mass,
        EstimateId::SupSwimmer,
        EstimateId::SupLambda,
        EstimateId::Entropy,
        EstimateId::Dissipation,
        EstimateId::GradientZeta1,
        EstimateId::GradientZeta2,
    ];
    ids.extend((0..record.tail_ages.len()).map(EstimateId::Tail));
    ids.extend([EstimateId::KBound, EstimateId::Laplacian, EstimateId::SmallAlpha]);
    ids
}

pub fn all_margins(record: &DiagnosticsRecord) -> Vec<MarginReport> {
    all_estimates(record).into_iter().map(|id| envelope_check(record, id)).collect()
}
