//! Property tests over randomly drawn models, orders and times.

use std::collections::BTreeSet;

use gfbp::combinat::{
    binomial, enumerate_omega, enumerate_theta, epoch_set, theta_count, JumpPattern,
};
use gfbp::oracle::{solve_fractional_system, solve_simultaneous, Scheme, SolverConfig};
use gfbp::pmf::{pmf, pmf_states, PmfConfig};
use gfbp::rates::{
    explosion_check, ExplosionConfig, ExtensionPolicy, ModelDocument, RateSource, Sequence,
};
use gfbp::simulate::{simulate_gbp, RngSpec};
use gfbp::special::{
    inv_lt_distinct, inv_lt_general, min_relative_gap, mittag_leffler, partial_fraction_unity,
};
use gfbp::table::TableSource;
use gfbp::{JumpBound, OrderSpec, PmfTable, RateModel};
use proptest::prelude::*;

fn alpha() -> impl Strategy<Value = f64> {
    (0.3..=1.0f64).prop_map(|a| (a * 100.0).round() / 100.0)
}

/// Small generalized models: `n0 ≤ 3`, `k ≤ 3`, rates in `[0.2, 3]`.
fn small_model() -> impl Strategy<Value = RateModel> {
    (0u64..=3, 1usize..=3, prop::collection::vec(0.2..3.0f64, 12)).prop_map(|(n0, k, r)| {
        RateModel::from_fn(n0, JumpBound::Finite(k), move |n, i| {
            r[((n - n0) as usize * 3 + i - 1) % r.len()]
        })
        .unwrap()
    })
}

fn theta_dp(n: usize, k: usize) -> u128 {
    let mut t = vec![0u128; n + 1];
    t[0] = 1;
    for m in 1..=n {
        t[m] = (1..=k.min(m)).map(|i| t[m - i]).sum();
    }
    t[n]
}

#[test]
fn theta_cardinality_matches_recurrence() {
    for n in 1..=15 {
        for k in 1..=5 {
            let set = enumerate_theta(n, k).unwrap();
            assert_eq!(set.len() as u128, theta_dp(n, k), "n={n} k={k}");
            assert_eq!(theta_count(n, k), theta_dp(n, k));
        }
    }
}

#[test]
fn omega_cardinality_is_binomial() {
    for n in 1..=8usize {
        for i in 0..=20usize {
            let want = if n == 1 {
                1.0
            } else {
                binomial(i as u64, n as u64 - 1)
            };
            assert_eq!(
                enumerate_omega(n, i).unwrap().len() as f64,
                want,
                "n={n} i={i}"
            );
        }
    }
}

#[test]
fn extreme_epoch_sets() {
    for n in 1..=10usize {
        let ones = JumpPattern::new(vec![1; n]).unwrap();
        assert_eq!(
            epoch_set(&ones).epochs(),
            (0..=n).collect::<Vec<_>>().as_slice()
        );
        let mut single = vec![0; n];
        single[0] = n as u32;
        let single = JumpPattern::new(single).unwrap();
        assert_eq!(epoch_set(&single).epochs(), &[0, n]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn patterns_decode_and_reencode(n in 1usize..=12, k in 1usize..=4) {
        for p in enumerate_theta(n, k).unwrap().iter() {
            let jumps = p.jumps();
            prop_assert_eq!(jumps.iter().sum::<usize>(), n);
            prop_assert!(jumps.iter().all(|&j| (1..=k).contains(&j)));
            prop_assert_eq!(&JumpPattern::from_jumps(&jumps).unwrap(), p);
            let epochs = epoch_set(p);
            prop_assert_eq!(epochs.epochs()[0], 0);
            prop_assert_eq!(*epochs.epochs().last().unwrap(), n);
        }
    }

    #[test]
    fn large_jump_bound_collapses(n in 1usize..=10, extra in 0usize..=4) {
        let full: BTreeSet<_> = enumerate_theta(n, n).unwrap().iter().cloned().collect();
        let wide: BTreeSet<_> = enumerate_theta(n, n + extra).unwrap().iter().cloned().collect();
        prop_assert_eq!(full, wide);
    }

    #[test]
    fn preset_totals_are_positive(lambda in 0.1..5.0f64, beta in 0.1..=1.0f64, n in 0u64..50) {
        let models = [
            RateModel::tfpp(lambda).unwrap(),
            RateModel::gfcp(&[lambda, 1.0, 0.5]).unwrap(),
            RateModel::fpbp(Sequence::Formula("n + 1".into())).unwrap(),
            RateModel::cfpp(Sequence::Formula("2^(-i)".into())).unwrap(),
            RateModel::stfpp(lambda, beta).unwrap(),
        ];
        for m in &models {
            let n = n.max(m.n0());
            let total = m.total_rate(n).unwrap().value;
            prop_assert!(total > 0.0 && total.is_finite());
        }
        let cfpp = &models[3];
        for i in 1..40 {
            prop_assert!(cfpp.rate(n, i).unwrap() > 0.0);
        }
    }

    #[test]
    fn explosion_trace_is_monotone(model in small_model(), terms in 1usize..200) {
        let report = explosion_check(&model, terms, &ExplosionConfig::default()).unwrap();
        prop_assert_eq!(report.partial_sums.len(), terms + 1);
        prop_assert!(report.partial_sums.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn pure_birth_explosion_series(rates in prop::collection::vec(0.1..10.0f64, 30)) {
        let r = rates.clone();
        let model = RateModel::from_fn(0, JumpBound::Finite(1), move |n, _| r[n as usize % r.len()]).unwrap();
        let report = explosion_check(&model, 29, &ExplosionConfig::default()).unwrap();
        let mut s = 0.0;
        for (m, &l) in rates.iter().enumerate() {
            s += 1.0 / l;
            prop_assert!((report.partial_sums[m] - s).abs() <= 1e-12 * s);
        }
    }

    #[test]
    fn ml_integer_order_is_exp(z in -20.0..20.0f64) {
        let v = mittag_leffler(1.0, z).unwrap().value;
        prop_assert!((v - z.exp()).abs() <= 1e-12 * z.exp().max(1.0));
    }

    #[test]
    fn ml_negative_axis_is_a_decreasing_fraction(a in alpha(), x in 0.0..40.0f64, dx in 0.0..5.0f64) {
        let e0 = mittag_leffler(a, -x).unwrap().value;
        let e1 = mittag_leffler(a, -(x + dx)).unwrap().value;
        prop_assert!(e0 > 0.0 && e0 <= 1.0);
        prop_assert!(e1 <= e0 + 1e-14);
    }

    #[test]
    fn distinct_and_general_kernels_agree(
        a in alpha(),
        mu in prop::collection::vec(0.1..4.0f64, 2..=4),
        t in 0.05..2.0f64,
    ) {
        prop_assume!(min_relative_gap(&mu) > 0.05);
        let d = inv_lt_distinct(a, &mu, t).unwrap();
        let g = inv_lt_general(a, &mu, t, 1e-14).unwrap();
        prop_assume!(d.error_bound < 1e-9 && g.error_bound < 1e-9);
        prop_assert!((d.value - g.value).abs() < 1e-8, "{} vs {}", d.value, g.value);
    }

    #[test]
    fn unity_identity(x in -20.0..20.0f64, lambdas in prop::collection::vec(0.0..20.0f64, 2..=6)) {
        let mut sorted = lambdas.clone();
        sorted.sort_by(f64::total_cmp);
        prop_assume!(sorted.windows(2).all(|w| w[1] - w[0] >= 0.1));
        let v = partial_fraction_unity(x, &lambdas).unwrap();
        prop_assert!((v - 1.0).abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn pmf_initial_conditions_and_bounds(model in small_model(), a in alpha()) {
        let n0 = model.n0();
        prop_assert_eq!(pmf(&model, a, n0, 0.0).unwrap().value, 1.0);
        for n in n0 + 1..=n0 + 4 {
            prop_assert_eq!(pmf(&model, a, n, 0.0).unwrap().value, 0.0);
        }
        let times = [0.1, 0.4, 0.8, 1.2, 1.6, 2.0];
        let order = OrderSpec::Constant(a);
        let table = pmf_states(&model, &order, 6, &times, &PmfConfig::default()).unwrap();
        for row in &table.values {
            prop_assert!(row.iter().all(|&p| (-1e-9..=1.0 + 1e-9).contains(&p)));
        }
        prop_assert!(table.values[0].windows(2).all(|w| w[1] <= w[0] + 1e-12));
        prop_assert!(table.deficit().iter().all(|&d| d >= -1e-9));
    }

    #[test]
    fn oracle_stays_a_sub_probability(model in small_model(), a in alpha()) {
        let cfg = SolverConfig { step: 1e-3, n_max: 5, ..SolverConfig::default() };
        let table = solve_fractional_system(&model, &OrderSpec::Constant(a), 1.0, &cfg).unwrap();
        for ti in 0..table.times.len() {
            let col = table.column(ti);
            prop_assert!(col.iter().all(|&p| p >= -1e-6));
            prop_assert!(col.iter().sum::<f64>() <= 1.0 + 1e-6);
        }
    }

    #[test]
    fn sequential_solve_matches_simultaneous(model in small_model()) {
        let cfg = SolverConfig { step: 1e-2, n_max: 5, scheme: Scheme::Rk4, ..SolverConfig::default() };
        let seq = solve_fractional_system(&model, &OrderSpec::Constant(1.0), 1.0, &cfg).unwrap();
        let sim = solve_simultaneous(&model, 1.0, 1e-2, 5).unwrap();
        for (a, b) in seq.values.iter().zip(&sim.values) {
            for (x, y) in a.iter().zip(b) {
                prop_assert!((x - y).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn sample_paths_are_valid_and_reproducible(model in small_model(), seed in any::<u64>(), stream in 0u64..8) {
        let k = match model.k() { JumpBound::Finite(k) => k as u64, JumpBound::Unbounded => unreachable!() };
        let rng = RngSpec::new(seed, stream);
        let path = simulate_gbp(&model, 3.0, rng).unwrap();
        prop_assert_eq!(path.state_at(0.0), model.n0());
        let mut prev = (0.0, model.n0());
        for e in &path.events {
            prop_assert!(e.t > prev.0 && e.t <= 3.0);
            prop_assert!(e.n > prev.1 && e.n - prev.1 <= k);
            prev = (e.t, e.n);
        }
        prop_assert_eq!(simulate_gbp(&model, 3.0, rng).unwrap(), path);
    }

    #[test]
    fn table_model_json_is_a_fixed_point(k in 1usize..=3, flat in prop::collection::vec(0.01..100.0f64, 12), rows in 1usize..=4, n0 in 0u64..5) {
        let rows: Vec<Vec<f64>> = flat.chunks(3).take(rows).map(|r| r[..k].to_vec()).collect();
        let doc = ModelDocument {
            n0: Some(n0),
            k: Some(JumpBound::Finite(k)),
            tail_tolerance: None,
            source: RateSource::Table { rates: rows, extension: ExtensionPolicy::RepeatLastRow },
        };
        let model = RateModel::from_document(&doc).unwrap();
        let text = model.to_json().unwrap();
        let again = RateModel::from_json(&text).unwrap().to_json().unwrap();
        prop_assert_eq!(text, again);
    }

    #[test]
    fn table_text_round_trips(values in prop::collection::vec(prop::collection::vec(-1e3..1e3f64, 3), 1..=4)) {
        let bounds = values.iter().map(|r| r.iter().map(|v| v.abs() * 1e-17).collect()).collect();
        let table = PmfTable::new(2, vec![0.0, 1.0 / 3.0, 2.5e-7], values, bounds, TableSource::Analytic).unwrap();
        let back = PmfTable::from_json(&table.to_json().unwrap()).unwrap();
        prop_assert_eq!(back, table);
    }
}
