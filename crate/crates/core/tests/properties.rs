//! Invariants checked over generated inputs.

use std::collections::HashSet;

use proptest::prelude::*;

use expomf::checkpoint::{from_bytes, to_bytes};
use expomf::data::{init_model, CovariateMatrix, Hyperparameters, InteractionMatrix, PriorInit};
use expomf::em::{e_step_score, em_step, ExpectedExposure};
use expomf::eval::{evaluate_against, EvalConfig};
use expomf::exposure::{CovariateSettings, PerItemPrior, MU_EPS};
use expomf::ingest::{filter_and_binarize, split, RawInteractions, SplitProportions};

fn pairs(max_users: usize, max_items: usize) -> impl Strategy<Value = (usize, usize, Vec<(usize, usize)>)> {
    (1..max_users, 1..max_items).prop_flat_map(|(u, i)| {
        let cells = proptest::collection::vec((0..u, 0..i), 1..(u * i).min(60) + 1);
        (Just(u), Just(i), cells)
    })
}

fn matrix((u, i, cells): (usize, usize, Vec<(usize, usize)>)) -> InteractionMatrix {
    let set: HashSet<_> = cells.into_iter().collect();
    let mut v: Vec<_> = set.into_iter().collect();
    v.sort();
    InteractionMatrix::from_pairs(u, i, &v).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn split_parts_partition_the_input(m in pairs(12, 12).prop_map(matrix), seed in any::<u64>()) {
        let data = split(&m, SplitProportions::default(), seed).unwrap();
        let mut seen = HashSet::new();
        for part in [&data.train, &data.validation, &data.test] {
            for (u, i, _) in part.iter() {
                prop_assert!(seen.insert((u, i)), "({u}, {i}) appears twice");
            }
        }
        let all: HashSet<_> = m.iter().map(|(u, i, _)| (u, i)).collect();
        prop_assert_eq!(seen, all);
        prop_assert_eq!(split(&m, SplitProportions::default(), seed).unwrap(), data);
    }

    #[test]
    fn filtering_reaches_a_fixed_point(
        triples in proptest::collection::vec((0..10u8, 0..10u8, 0..3u8), 1..80),
        min_u in 1..4usize,
        min_i in 1..4usize,
    ) {
        let raw = RawInteractions {
            triples: triples.iter().map(|&(u, i, c)| (format!("u{u}"), format!("i{i}"), c as f64)).collect(),
        };
        let Ok(m) = filter_and_binarize(&raw, min_u, min_i) else { return Ok(()) };
        prop_assert!(m.is_binary());
        for u in 0..m.n_users() {
            prop_assert!(m.user_items(u).len() >= min_u);
        }
        for i in 0..m.n_items() {
            prop_assert!(m.item_users(i).len() >= min_i);
        }
        let again = RawInteractions {
            triples: m.iter().map(|(u, i, v)| {
                (m.user_ids().id(u).unwrap().to_owned(), m.item_ids().id(i).unwrap().to_owned(), v)
            }).collect(),
        };
        let ids = |x: &InteractionMatrix| -> HashSet<(String, String)> {
            x.iter().map(|(u, i, _)| {
                (x.user_ids().id(u).unwrap().to_owned(), x.item_ids().id(i).unwrap().to_owned())
            }).collect()
        };
        prop_assert_eq!(ids(&filter_and_binarize(&again, min_u, min_i).unwrap()), ids(&m));
    }

    #[test]
    fn covariate_rows_are_distributions(rows in proptest::collection::vec(
        proptest::collection::vec(0.0..5.0f64, 4), 1..10)
    ) {
        let rows: Vec<Vec<f64>> = rows.into_iter().map(|mut r| { r[0] += 1e-3; r }).collect();
        let x = CovariateMatrix::new(rows.len(), 4, rows.concat()).unwrap();
        for i in 0..x.n_items() {
            let s: f64 = x.row(i).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
            prop_assert!(x.row(i).iter().all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn posterior_exposure_is_a_probability(s in -1e3..1e3f64, mu in 0.0..1.0f64, ly in 1e-3..1e3f64) {
        let p = e_step_score(s, mu, ly);
        prop_assert!((0.0..=1.0).contains(&p));
        prop_assert_eq!(p, e_step_score(-s, mu, ly));
        prop_assert!(p <= mu.max(e_step_score(0.0, mu, ly)) + 1e-15);
    }

    #[test]
    fn per_item_mode_stays_inside_the_unit_interval(
        a1 in 0.1..10.0f64,
        a2 in 0.1..10.0f64,
        n in 1..1000usize,
        frac in 0.0..=1.0f64,
    ) {
        let mut prior = PerItemPrior { mu: vec![0.5], alpha1: a1, alpha2: a2 };
        prior.update(&[frac * n as f64], n).unwrap();
        prop_assert!(prior.mu[0] >= MU_EPS && prior.mu[0] <= 1.0 - MU_EPS);
    }

    #[test]
    fn checkpoints_round_trip(
        m in pairs(8, 8).prop_map(matrix),
        variant in 0..4usize,
        seed in any::<u64>(),
        steps in 0..3usize,
    ) {
        let (u, i) = (m.n_users(), m.n_items());
        let prior = match variant {
            0 => PriorInit::fixed(),
            1 => PriorInit::per_item(),
            2 => PriorInit::Covariate {
                covariates: CovariateMatrix::new(i, 2, (0..2 * i).map(|j| (j % 3 + 1) as f64).collect()).unwrap(),
                settings: CovariateSettings::default(),
                initial_mu: 0.05,
            },
            _ => PriorInit::Confidence { c0: 0.01, c1: 1.0 },
        };
        let hyper = Hyperparameters { k: 3, seed, ..Hyperparameters::default() };
        let mut state = init_model(u, i, &hyper, prior).unwrap();
        for _ in 0..steps {
            em_step(&mut state, &m).unwrap();
        }
        prop_assert_eq!(from_bytes(&to_bytes(&state).unwrap()).unwrap(), state);
    }

    #[test]
    fn observed_entries_are_certainly_exposed(m in pairs(8, 8).prop_map(matrix), seed in any::<u64>()) {
        let hyper = Hyperparameters { k: 2, seed, ..Hyperparameters::default() };
        let state = init_model(m.n_users(), m.n_items(), &hyper, PriorInit::per_item()).unwrap();
        let view = ExpectedExposure::new(&state, &m);
        for u in 0..m.n_users() {
            for i in 0..m.n_items() {
                let p = view.p(u, i);
                if m.contains(u, i) {
                    prop_assert_eq!(p, 1.0);
                } else {
                    prop_assert!((0.0..=1.0).contains(&p));
                }
            }
        }
    }

    #[test]
    fn metrics_are_bounded(m in pairs(10, 30).prop_map(matrix), seed in any::<u64>()) {
        let data = split(&m, SplitProportions::default(), seed).unwrap();
        let hyper = Hyperparameters { k: 2, init_scale: 1.0, seed, ..Hyperparameters::default() };
        let state = init_model(m.n_users(), m.n_items(), &hyper, PriorInit::fixed()).unwrap();
        let cfg = EvalConfig { recall_ks: vec![1, 5], ndcg_k: 5, map_k: 5, rule: None };
        let Ok(r) = evaluate_against(&state, &[&data.train, &data.validation], &data.test, &cfg) else {
            return Ok(());
        };
        for v in r.recall.iter().chain([&r.ndcg, &r.map_standard]) {
            prop_assert!((0.0..=1.0 + 1e-12).contains(v), "{v}");
        }
        prop_assert!(r.map_literal >= 0.0);
        prop_assert!((0.0..=100.0).contains(&r.mpr));
    }
}
