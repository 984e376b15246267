//! Property tests for invariants that hold for every input, not just the fixtures.

use proptest::prelude::*;

use she_renorm::experiment::{derive_seed, fmt_f};
use she_renorm::noise::{replay_increments, BrownianIncrements, RngStream};
use she_renorm::sewing::{sew, AdditiveGerm};
use she_renorm::solver::{solve_path, InitialSpec, Nonlinearity, SimConfig};
use she_renorm::spectral::{
    analyze, apply_heat, basis_product, basis_triple, default_grid_size, synthesize_grid,
    SpectralField,
};
use she_renorm::stats::{ks_two_sample, MCStats};

fn field(max_m: usize) -> impl Strategy<Value = SpectralField> {
    (1..=max_m).prop_flat_map(|m| {
        prop::collection::vec(-1.0..1.0f64, m).prop_map(|c| SpectralField::from_coeffs(c).unwrap())
    })
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn grid_round_trip_recovers_coefficients(f in field(40)) {
        let m = f.mode_cutoff();
        let g = synthesize_grid(&f, default_grid_size(m)).unwrap();
        let back = analyze(&g, m).unwrap();
        prop_assert!(back.max_abs_diff(&f) < 1e-12);
    }

    #[test]
    fn heat_flow_is_a_semigroup(f in field(30), s in 0.0..0.05f64, t in 0.0..0.05f64) {
        let two = apply_heat(&apply_heat(&f, s).unwrap(), t).unwrap();
        let one = apply_heat(&f, s + t).unwrap();
        prop_assert!(two.max_abs_diff(&one) < 1e-14);
        prop_assert!(one.norm_l2() <= f.norm_l2() + 1e-15);
    }

    #[test]
    fn basis_triple_is_symmetric_and_matches_projection(
        n in 1usize..12,
        a in prop::collection::vec(-1.0..1.0f64, 16),
        b in prop::collection::vec(-1.0..1.0f64, 16),
    ) {
        let ab = basis_triple(n, &a, &b);
        prop_assert!(close(ab, basis_triple(n, &b, &a), 1e-13));
        let fa = SpectralField::from_coeffs(a).unwrap();
        let fb = SpectralField::from_coeffs(b).unwrap();
        prop_assert!(close(ab, basis_product(n, &fa, 16).dot(&fb), 1e-13));
    }

    #[test]
    fn mcstats_merge_is_order_free(xs in prop::collection::vec(-5.0..5.0f64, 3..200), cut in 0.0..1.0f64, cut2 in 0.0..1.0f64) {
        let i = ((xs.len() as f64 * cut) as usize).min(xs.len());
        let j = i + ((xs.len() - i) as f64 * cut2) as usize;
        let part = |lo: usize, hi: usize| {
            let mut s = MCStats::default();
            for (k, x) in xs[lo..hi].iter().enumerate() {
                s.push((lo + k) as u64, *x);
            }
            s
        };
        let (a, b, c) = (part(0, i), part(i, j), part(j, xs.len()));
        let mut left = a.clone();
        left.merge(&b);
        left.merge(&c);
        let mut bc = b.clone();
        bc.merge(&c);
        let mut right = a;
        right.merge(&bc);
        let whole = MCStats::from_samples(&xs);
        prop_assert_eq!(left.count(), whole.count());
        for k in 1..=4 {
            prop_assert!(close(left.raw_moment(k), whole.raw_moment(k), 1e-12));
            prop_assert!(close(right.raw_moment(k), whole.raw_moment(k), 1e-12));
        }
        prop_assert!(close(left.mean_ci(), whole.mean_ci(), 1e-9));
    }

    #[test]
    fn ks_statistic_ignores_monotone_maps(
        a in prop::collection::vec(-3.0..3.0f64, 5..80),
        b in prop::collection::vec(-3.0..3.0f64, 5..80),
    ) {
        let r = ks_two_sample(&a, &b).unwrap();
        let map = |v: &[f64]| v.iter().map(|x| (0.5 * x).exp() * 3.0 + 1.0).collect::<Vec<_>>();
        let s = ks_two_sample(&map(&a), &map(&b)).unwrap();
        prop_assert!((r.statistic - s.statistic).abs() < 1e-15);
        prop_assert!((0.0..=1.0).contains(&r.statistic));
        prop_assert!((0.0..=1.0).contains(&r.p_value));
    }

    #[test]
    fn additive_germ_is_a_fixed_point_of_sewing(c1 in -2.0..2.0f64, c2 in -2.0..2.0f64, level in 1u32..10) {
        let h = move |t: f64| c1 * t + c2 * (3.0 * t).sin();
        let sewn = sew(&AdditiveGerm { h }, level).unwrap();
        let n = 1usize << level;
        for i in 0..=n {
            let t = i as f64 / n as f64;
            prop_assert!((sewn.at(i) - (h(t) - h(0.0))).abs() < 1e-12);
        }
    }

    #[test]
    fn increments_replay_identically(seed in any::<u64>(), path in 0u64..1000, step in 0u64..10_000) {
        let stream = RngStream::new(seed, path);
        let a = replay_increments(&stream, step, 12, 1e-3).unwrap();
        let mut b = BrownianIncrements::zeros(12, 1e-3).unwrap();
        b.fill_from(&stream, step);
        prop_assert_eq!(a.dw(), b.dw());
        let other = replay_increments(&RngStream::new(seed, path + 1), step, 12, 1e-3).unwrap();
        prop_assert_ne!(a.dw(), other.dw());
    }

    #[test]
    fn csv_floats_round_trip(x in any::<f64>().prop_filter("finite", |x| x.is_finite())) {
        prop_assert_eq!(fmt_f(x).parse::<f64>().unwrap(), x);
    }

    #[test]
    fn seeds_depend_on_master_and_tag(master in any::<u64>(), tag in "[a-z/]{1,12}") {
        prop_assert_eq!(derive_seed(master, &tag), derive_seed(master, &tag));
        prop_assert_ne!(derive_seed(master, &tag), derive_seed(master, &format!("{tag}x")));
        prop_assert_ne!(derive_seed(master, &tag), derive_seed(master.wrapping_add(1), &tag));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn zero_nonlinearity_gives_heat_flow(a in -2.0..2.0f64, k in 1usize..4, seed in any::<u64>()) {
        let cfg = SimConfig {
            nonlinearity: Nonlinearity::Zero,
            initial: InitialSpec::SmoothSine { a, k },
            dt: 0.002,
            t_end: 0.1,
            save_times: vec![0.05, 0.1],
            ..SimConfig::mollified(0.2)
        };
        let tr = solve_path(&cfg, RngStream::new(seed, 0)).unwrap();
        let u0 = cfg.initial.coefficients(cfg.mode_cutoff);
        for (u, t) in tr.u.iter().zip(&cfg.save_times) {
            prop_assert!(u.max_abs_diff(&apply_heat(&u0, *t).unwrap()) < 1e-12);
        }
    }
}
