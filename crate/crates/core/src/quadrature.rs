//! Fixed-order Gauss–Legendre rules and adaptive Simpson integration.

const GL8_NODES: [f64; 4] = [
    0.183_434_642_495_649_8,
    0.525_532_409_916_329_0,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_3,
];
const GL8_WEIGHTS: [f64; 4] = [
    0.362_683_783_378_362_0,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_5,
    0.101_228_536_290_376_3,
];

/// Eight-point Gauss–Legendre approximation of `∫_a^b f`.
pub fn gauss_legendre8(a: f64, b: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut acc = 0.0;
    for (x, w) in GL8_NODES.iter().zip(GL8_WEIGHTS.iter()) {
        acc += w * (f(mid - half * x) + f(mid + half * x));
    }
    acc * half
}

/// Cell average `(1/(b-a)) ∫_a^b f` with the eight-point rule.
pub fn cell_average(a: f64, b: f64, f: impl FnMut(f64) -> f64) -> f64 {
    gauss_legendre8(a, b, f) / (b - a)
}

/// Adaptive Simpson quadrature. Returns `None` when an evaluation is
/// non-finite; at the recursion floor the local estimate is accepted.
pub fn adaptive_simpson(a: f64, b: f64, tol: f64, f: &impl Fn(f64) -> f64) -> Option<f64> {
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(f, a, b, fa, fm, fb, whole, tol, 48)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> Option<f64> {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if !delta.is_finite() {
        return None;
    }
    if delta.abs() <= 15.0 * tol {
        return Some(left + right + delta / 15.0);
    }
    if depth == 0 {
        return Some(left + right + delta / 15.0);
    }
    let l = simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)?;
    let r = simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)?;
    Some(l + r)
}

/// Quintic smoothstep `6z⁵ − 15z⁴ + 10z³` clamped to [0, 1].
pub fn smoothstep(z: f64) -> f64 {
    let z = z.clamp(0.0, 1.0);
    z * z * z * (z * (6.0 * z - 15.0) + 10.0)
}

pub fn smoothstep_derivative(z: f64) -> f64 {
    if !(0.0..=1.0).contains(&z) {
        return 0.0;
    }
    30.0 * z * z * (1.0 - z) * (1.0 - z)
}

pub fn smoothstep_second_derivative(z: f64) -> f64 {
    if !(0.0..=1.0).contains(&z) {
        return 0.0;
    }
    60.0 * z * (1.0 - z) * (1.0 - 2.0 * z)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_is_exact_for_degree_15() {
        let exact = 1.0 / 16.0;
        let approx = gauss_legendre8(0.0, 1.0, |x| x.powi(15));
        assert!((approx - exact).abs() < 1e-15);
    }

    #[test]
    fn gauss_legendre_exponential() {
        let v = gauss_legendre8(0.0, 0.5, f64::exp);
        assert!((v - (0.5f64.exp() - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn adaptive_simpson_handles_sqrt_cusp() {
        let v = adaptive_simpson(0.0, 1.0, 1e-12, &|x: f64| x.sqrt()).unwrap();
        assert!((v - 2.0 / 3.0).abs() < 1e-10);
    }

    #[test]
    fn adaptive_simpson_reports_divergence() {
        assert!(adaptive_simpson(0.0, 1.0, 1e-12, &|x: f64| 1.0 / x).is_none());
    }

    #[test]
    fn smoothstep_endpoints() {
        assert_eq!(smoothstep(0.0), 0.0);
        assert_eq!(smoothstep(1.0), 1.0);
        assert_eq!(smoothstep(-3.0), 0.0);
        assert_eq!(smoothstep(3.0), 1.0);
        assert!((smoothstep(0.5) - 0.5).abs() < 1e-15);
    }
}
