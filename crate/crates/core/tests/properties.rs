use std::sync::OnceLock;

use proptest::prelude::*;

use swarmsim_core::config::{reference_config, RunConfig};
use swarmsim_core::diagnostics::{envelope_check, DiagnosticsObserver, DiagnosticsRecord, EstimateId};
use swarmsim_core::solver::{run, Problem};
use swarmsim_core::spatial_grid::SpatialGrid;

fn problem() -> &'static Problem {
    static P: OnceLock<Problem> = OnceLock::new();
    P.get_or_init(|| reference_config().problem().unwrap())
}

fn record() -> &'static DiagnosticsRecord {
    static R: OnceLock<DiagnosticsRecord> = OnceLock::new();
    R.get_or_init(|| {
        let mut c = reference_config();
        c.t_end = 0.5;
        c.grid.cells = vec![32];
        let p = c.problem().unwrap();
        let s0 = c.initial_state(&p).unwrap();
        let mut obs = DiagnosticsObserver::new(&s0, &c.diagnostics.tail_ages, &p);
        run(s0, &c.run_params(), &p, &mut obs).unwrap();
        obs.finish(&p).unwrap()
    })
}

fn fields(n: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>)> {
    (
        prop::collection::vec(0.0f64..3.0, n),
        prop::collection::vec(0.0f64..2.0, n),
        prop::collection::vec(0.0f64..1.0, n),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn flux_divergence_conserves_in_1d((u, l, v) in fields(24)) {
        let g = SpatialGrid::new_1d(2.0, 24);
        let out = g.div_flux(&u, &l, &v, &problem().reg).unwrap();
        let size: f64 = out.iter().map(|x| x.abs()).sum::<f64>() + 1e-300;
        prop_assert!(out.iter().sum::<f64>().abs() <= 1e-12 * size);
    }

    #[test]
    fn flux_divergence_conserves_in_2d((u, l, v) in fields(80)) {
        let g = SpatialGrid::new_2d(2.0, 1.0, 10, 8);
        let out = g.div_flux(&u, &l, &v, &problem().reg).unwrap();
        let size: f64 = out.iter().map(|x| x.abs()).sum::<f64>() + 1e-300;
        prop_assert!(out.iter().sum::<f64>().abs() <= 1e-12 * size);
    }

    #[test]
    fn constants_are_in_the_kernel(c in 0.0f64..5.0, (_, l, v) in fields(16)) {
        let g = SpatialGrid::new_1d(1.0, 16);
        let u = vec![c; 16];
        let flat = vec![0.7; 16];
        // no flux when both the density and the potential are flat
        let out = g.div_flux(&u, &flat, &v, &problem().reg).unwrap();
        prop_assert!(out.iter().all(|x| x.abs() < 1e-12));
        let lap = g.laplacian(&l.iter().map(|_| c).collect::<Vec<_>>()).unwrap();
        prop_assert!(lap.iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn prolongation_preserves_integrals(f in prop::collection::vec(-2.0f64..2.0, 12)) {
        let coarse = SpatialGrid::new_2d(3.0, 2.0, 4, 3);
        let fine = SpatialGrid::new_2d(3.0, 2.0, 8, 9);
        let p = fine.prolong_from(&coarse, &f).unwrap();
        prop_assert!((fine.integrate(&p) - coarse.integrate(&f)).abs() < 1e-12);
    }

    #[test]
    fn config_round_trips(alpha in 0.05f64..0.25, t_end in 0.1f64..5.0, n in 8usize..300, seed: u64) {
        let mut c = reference_config();
        c.alpha = alpha;
        c.t_end = t_end;
        c.grid.cells = vec![n];
        c.seed = seed;
        let back = RunConfig::from_json(&c.to_json()).unwrap();
        prop_assert_eq!(back.hash(), c.hash());
        prop_assert_eq!(back, c);
    }

    #[test]
    fn k_envelope_is_non_decreasing_in_xi(extra in 0.0f64..50.0) {
        let r = record();
        let base = envelope_check(r, EstimateId::KBound);
        let mut bigger = r.clone();
        bigger.constants.xi += extra;
        let more = envelope_check(&bigger, EstimateId::KBound);
        for (a, b) in base.samples.iter().zip(&more.samples) {
            prop_assert!(b.bound >= a.bound);
        }
        prop_assert!(more.min_margin >= base.min_margin);
    }

    #[test]
    fn envelopes_grow_with_rates(db in 0.0f64..2.0, dg in 0.0f64..2.0) {
        let r = record();
        let mut bigger = r.clone();
        bigger.constants.big_b += db;
        bigger.constants.g_sup += dg;
        for id in [EstimateId::Mass, EstimateId::SupSwimmer, EstimateId::SupLambda, EstimateId::Laplacian, EstimateId::Tail(0)] {
            let a = envelope_check(r, id);
            let b = envelope_check(&bigger, id);
            for (x, y) in a.samples.iter().zip(&b.samples) {
                prop_assert!(y.bound >= x.bound * (1.0 - 1e-14), "{:?}", id);
            }
        }
    }
}

#[test]
fn all_margins_hold_on_short_reference_run() {
    let r = record();
    for id in swarmsim_core::diagnostics::envelopes::all_estimates(r) {
        let m = envelope_check(r, id);
        assert!(m.passed, "{} min margin {}", m.estimate, m.min_margin);
    }
}
