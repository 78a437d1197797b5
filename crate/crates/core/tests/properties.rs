//! Structural invariants as properties over random inputs.

use nnlab::acs::invert_map;
use nnlab::dbar::{dbar_apply, dbar_function, SpectralHomotopy};
use nnlab::domain::DomainChart;
use nnlab::harness::report::Ledger;
use nnlab::kam::{feasible_region, p_of_d};
use nnlab::lp::dyadic_convolve;
use nnlab::smooth::{SmoothingLevel, SmoothingOperator};
use nnlab::znorm::{zygmund_norm_besov, zygmund_norm_diff, ZygmundIndex};
use nnlab::{GridField, GridSpec, LpFamily, C64};
use proptest::prelude::*;
use std::f64::consts::PI;

/// Real trigonometric polynomial on a 1-D periodic grid of length 2π.
fn trig(grid: &GridSpec, coeffs: &[(f64, f64)]) -> GridField {
    GridField::from_real_fn(grid, |x| coeffs.iter().enumerate().map(|(k, (a, b))| a * (k as f64 * x[0]).cos() + b * (k as f64 * x[0]).sin()).sum())
        .unwrap()
}

fn coeffs(max_k: usize) -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), 1..=max_k)
}

fn line() -> GridSpec {
    GridSpec::cube(1, 256, 2.0 * PI).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn dyadic_pieces_are_linear(u in coeffs(60), v in coeffs(60), a in -3.0..3.0f64, b in -3.0..3.0f64, j in 0usize..5) {
        let g = line();
        let fam = LpFamily::standard(&g);
        let (u, v) = (trig(&g, &u), trig(&g, &v));
        let lhs = dyadic_convolve(&fam, j, &u.scale_re(a).add(&v.scale_re(b)).unwrap()).unwrap();
        let rhs = dyadic_convolve(&fam, j, &u).unwrap().scale_re(a).add(&dyadic_convolve(&fam, j, &v).unwrap().scale_re(b)).unwrap();
        let size = u.sup_norm() * a.abs() + v.sup_norm() * b.abs() + 1.0;
        prop_assert!(lhs.sub(&rhs).unwrap().sup_norm() <= 1e-12 * size);
    }

    #[test]
    fn separated_pieces_are_orthogonal(u in coeffs(120), j in 1usize..4, gap in 2usize..4) {
        let g = line();
        let fam = LpFamily::standard(&g);
        let k = j + gap;
        prop_assume!(k <= g.max_level());
        let u = trig(&g, &u);
        let both = dyadic_convolve(&fam, j, &dyadic_convolve(&fam, k, &u).unwrap()).unwrap();
        prop_assert!(both.sup_norm() <= 1e-13 * (1.0 + u.sup_norm()));
    }

    #[test]
    fn norms_scale_with_the_field(u in coeffs(40), c in -5.0..5.0f64, s in prop::sample::select(vec![0.3, 0.7, 1.0, 1.6])) {
        prop_assume!(c != 0.0);
        let g = line();
        let fam = LpFamily::standard(&g);
        let u = trig(&g, &u);
        let idx = ZygmundIndex::new(s).unwrap();
        let cu = u.scale_re(c);
        let d = (zygmund_norm_diff(&u, idx, None).unwrap().value, zygmund_norm_diff(&cu, idx, None).unwrap().value);
        let b = (zygmund_norm_besov(&u, idx, &fam, None).unwrap().value, zygmund_norm_besov(&cu, idx, &fam, None).unwrap().value);
        prop_assert!((d.1 - c.abs() * d.0).abs() <= 1e-12 * d.1.max(1e-300));
        prop_assert!((b.1 - c.abs() * b.0).abs() <= 1e-12 * b.1.max(1e-300));
    }

    #[test]
    fn smaller_masks_give_smaller_norms(u in coeffs(40), lo in 10usize..100, len in 20usize..120, s in 0.2..0.9f64) {
        let g = line();
        let u = trig(&g, &u);
        let idx = ZygmundIndex::new(s).unwrap();
        let big: Vec<bool> = (0..256).map(|i| i >= lo && i < lo + len + 20).collect();
        let small: Vec<bool> = (0..256).map(|i| i >= lo + 5 && i < lo + len).collect();
        let nb = zygmund_norm_diff(&u, idx, Some(&big)).unwrap().value;
        let ns = zygmund_norm_diff(&u, idx, Some(&small)).unwrap().value;
        prop_assert!(ns <= nb + 1e-12);
    }

    #[test]
    fn smoothing_plus_remainder_is_identity(u in coeffs(120), n in 0usize..5) {
        let g = line();
        let op = SmoothingOperator::multiplier(LpFamily::standard(&g));
        let u = trig(&g, &u);
        let lvl = SmoothingLevel::new(n);
        let sum = op.apply(lvl, &u).unwrap().add(&op.remainder(lvl, &u).unwrap()).unwrap();
        prop_assert!(sum.sub(&u).unwrap().sup_norm() <= 1e-13 * (1.0 + u.sup_norm()));
    }

    #[test]
    fn nested_smoothing_keeps_the_coarser(u in coeffs(120), n in 0usize..4) {
        let g = line();
        let op = SmoothingOperator::multiplier(LpFamily::standard(&g));
        let u = trig(&g, &u);
        let coarse = op.apply(SmoothingLevel::new(n), &u).unwrap();
        let twice = op.apply(SmoothingLevel::new(n + 1), &coarse).unwrap();
        prop_assert!(twice.sub(&coarse).unwrap().sup_norm() <= 1e-13 * (1.0 + u.sup_norm()));
    }

    #[test]
    fn multiplier_smoothing_commutes_with_derivatives(u in coeffs(120), n in 0usize..6) {
        let g = line();
        let op = SmoothingOperator::multiplier(LpFamily::standard(&g));
        let c = op.commutator(SmoothingLevel::new(n), &trig(&g, &u), 0).unwrap();
        prop_assert!(c.sup_norm() <= 1e-10);
    }

    #[test]
    fn feasibility_follows_the_threshold(gap in 0.05..3.0f64, d in 1.01..1.99f64, s in 1.0..3.0f64) {
        let reg = feasible_region(s + gap, s, d, 0.0, 0.0).unwrap();
        let closed = gap > d / (2.0 * (2.0 - d));
        // the boundary itself is measure zero; skip a thin band around it
        prop_assume!((gap - d / (2.0 * (2.0 - d))).abs() > 1e-9);
        prop_assert_eq!(reg.nonempty, closed);
        if let Some((a, b)) = reg.center() {
            prop_assert!(reg.contains(a, b));
        }
    }

    #[test]
    fn threshold_grows_with_the_schedule(d1 in 1.0..1.98f64, step in 0.001..0.01f64) {
        prop_assert!(p_of_d(d1 + step) > p_of_d(d1));
    }

    #[test]
    fn small_circle_maps_invert(c in coeffs(6), amp in 0.01..0.45f64) {
        // fine enough that the inverse's harmonics fall below the tolerance
        let g = GridSpec::cube(1, 512, 2.0 * PI).unwrap();
        let raw = trig(&g, &c[1..].iter().copied().chain([(0.0, 0.0)]).collect::<Vec<_>>());
        let slope = raw.derivative(0).sup_norm();
        prop_assume!(slope > 1e-6);
        let f = raw.scale_re(amp / slope);
        let d = invert_map(&[f], 1e-13).unwrap();
        prop_assert!(d.theta < 0.5);
        prop_assert!(d.inverse_error <= 1e-8, "inverse error {}", d.inverse_error);
        prop_assert!(d.derivative_bound_holds());
    }

    #[test]
    fn ledger_exit_code_tracks_failures(marks in prop::collection::vec(prop::option::of(any::<bool>()), 10)) {
        let mut l = Ledger::default();
        for (i, m) in marks.iter().enumerate() {
            if let Some(p) = m {
                l.record(i as u8 + 1, *p, "");
            }
        }
        prop_assert_eq!(l.iter().count(), 10);
        prop_assert_eq!(l.all_pass(), !marks.contains(&Some(false)));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn dbar_of_a_function_is_closed(seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let g = GridSpec::cube(4, 8, 2.0 * PI).unwrap();
        let k: Vec<[f64; 4]> = (0..3).map(|_| std::array::from_fn(|_| rng.random_range(-2..=2) as f64)).collect();
        let c: Vec<C64> = (0..3).map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
        let u = GridField::from_fn(&g, |x| k.iter().zip(&c).map(|(k, c)| c * C64::from_polar(1.0, k.iter().zip(x).map(|(a, b)| a * b).sum())).sum()).unwrap();
        let a = dbar_function(&[u]).unwrap();
        prop_assert!(dbar_apply(&a).sup_norm() <= 1e-10);
        let (_, rep) = SpectralHomotopy::new(&g).unwrap().solve(&a).unwrap();
        prop_assert!(rep.residual <= 1e-8);
    }

    #[test]
    fn graph_domain_partition_is_exact(lo in 10.0..20.0f64, hi in 40.0..55.0f64) {
        let g = GridSpec::cube(1, 1 << 12, 64.0).unwrap();
        let chart = DomainChart::graph_domain(&g, |_| lo, |_| hi, 2.0).unwrap();
        prop_assert!(chart.partition_defect() < 1e-10);
    }
}
