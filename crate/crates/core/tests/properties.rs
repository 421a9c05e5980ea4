use nalgebra::DVector;
use proptest::prelude::*;

use multichain_pma::chain::{classify, ChainAnalysis};
use multichain_pma::fixtures;
use multichain_pma::io;
use multichain_pma::oracle;
use multichain_pma::pma::{policy_mirror_step, random_floored_policy};
use multichain_pma::projection::{
    divergence, euclid_project_floor, kl_project_floor, mirror_step, DivergenceKind, FlooredSimplexPoint,
};
use multichain_pma::values::{evaluate, performance_difference};

fn point_and_alpha() -> impl Strategy<Value = (Vec<f64>, f64)> {
    (1usize..=8).prop_flat_map(|d| {
        (prop::collection::vec(-3.0f64..3.0, d), 0.0f64..=1.0).prop_map(move |(q, u)| (q, u / d as f64))
    })
}

fn weights_and_alpha() -> impl Strategy<Value = (Vec<f64>, f64)> {
    (1usize..=8).prop_flat_map(|d| {
        (prop::collection::vec(1e-4f64..1.0, d), 0.0f64..=1.0).prop_map(move |(w, u)| (w, u / d as f64))
    })
}

fn feasible(p: &[f64], alpha: f64) -> bool {
    (p.iter().sum::<f64>() - 1.0).abs() <= 1e-12 && p.iter().all(|&x| x >= alpha - 1e-12)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn euclid_projection_is_feasible_and_optimal((q, alpha) in point_and_alpha()) {
        let p = euclid_project_floor(&q, alpha).unwrap().p;
        prop_assert!(feasible(&p, alpha));
        let o = oracle::euclid_projection(&q, alpha);
        for (a, b) in p.iter().zip(&o) {
            prop_assert!((a - b).abs() <= 1e-8);
        }
    }

    #[test]
    fn kl_projection_is_feasible_and_optimal((w, alpha) in weights_and_alpha()) {
        let p = kl_project_floor(&w, alpha).unwrap().p;
        prop_assert!(feasible(&p, alpha));
        let o = oracle::kl_projection(&w, alpha);
        for (a, b) in p.iter().zip(&o) {
            prop_assert!((a - b).abs() <= 1e-8);
        }
    }

    #[test]
    fn projection_is_idempotent((q, alpha) in point_and_alpha()) {
        let p = euclid_project_floor(&q, alpha).unwrap().p;
        let again = euclid_project_floor(&p, alpha).unwrap().p;
        for (a, b) in p.iter().zip(&again) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn mirror_step_never_lowers_the_linear_objective(
        (w, alpha) in weights_and_alpha(),
        g_seed in any::<u64>(),
        eta in 1e-3f64..1e6,
        kl in any::<bool>(),
    ) {
        let d = w.len();
        prop_assume!(alpha * (d as f64) < 1.0 - 1e-9);
        let row = kl_project_floor(&w, alpha).unwrap();
        let row = FlooredSimplexPoint::new(row.p, alpha).unwrap();
        let g: Vec<f64> = (0..d).map(|i| ((g_seed >> (i * 7)) % 97) as f64 / 9.7 - 5.0).collect();
        let kind = if kl { DivergenceKind::Kl } else { DivergenceKind::Euclidean };
        let next = mirror_step(&row, &g, eta, kind).unwrap().p;
        prop_assert!(feasible(&next, alpha));
        let gain: f64 = g.iter().zip(next.iter().zip(&row.p)).map(|(gi, (n, o))| gi * (n - o)).sum();
        prop_assert!(gain >= -1e-10 * (1.0 + g.iter().map(|x| x.abs()).sum::<f64>()));
    }

    #[test]
    fn divergences_are_nonnegative(
        (w, w2) in (1usize..=8).prop_flat_map(|d| (prop::collection::vec(1e-4f64..1.0, d), prop::collection::vec(1e-4f64..1.0, d)))
    ) {
        let z1: f64 = w.iter().sum();
        let z2: f64 = w2.iter().sum();
        let p: Vec<f64> = w.iter().map(|x| x / z1).collect();
        let q: Vec<f64> = w2.iter().map(|x| x / z2).collect();
        for kind in [DivergenceKind::Euclidean, DivergenceKind::Kl] {
            prop_assert!(divergence(kind, &p, &q).unwrap() >= -1e-15);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn fixtures_survive_json(seed in any::<u64>()) {
        let m = fixtures::random_desk_fixture(seed);
        prop_assert_eq!(io::mdp_from_json(&io::mdp_to_json(&m).unwrap()).unwrap(), m);
    }

    #[test]
    fn cesaro_limit_is_a_stochastic_projection(seed in any::<u64>()) {
        let m = fixtures::random_desk_fixture(seed);
        let p = fixtures::random_interior_policy(m.n_states, m.n_actions, 0.0, seed ^ 1);
        let an = ChainAnalysis::interior(&m, &p, &classify(&m)).unwrap();
        let ps = &an.p_star;
        prop_assert!(ps.iter().all(|&x| x >= -1e-12));
        for row in ps.row_iter() {
            prop_assert!((row.sum() - 1.0).abs() <= 1e-10);
        }
        prop_assert!((ps * ps - ps).amax() <= 1e-10);
        for &t in &an.classification.transient {
            prop_assert!(ps.column(t).amax() <= 1e-12);
        }
    }

    #[test]
    fn performance_difference_holds(seed in any::<u64>()) {
        let m = fixtures::random_desk_fixture(seed);
        let c = classify(&m);
        let p = fixtures::random_interior_policy(m.n_states, m.n_actions, 0.0, seed ^ 2);
        let p2 = fixtures::random_interior_policy(m.n_states, m.n_actions, 0.0, seed ^ 3);
        let mu = fixtures::random_distribution(m.n_states, seed ^ 4);
        let pd = performance_difference(&m, &p, &p2, &mu, &c).unwrap();
        prop_assert!((pd.lhs - pd.rhs).abs() <= 1e-8);
    }

    #[test]
    fn exact_mirror_step_is_monotone(seed in any::<u64>(), eta in 0.01f64..100.0, kl in any::<bool>()) {
        let m = fixtures::random_desk_fixture(seed);
        let c = classify(&m);
        let mu = DVector::from_element(m.n_states, 1.0 / m.n_states as f64);
        let alpha = 0.03;
        let p = random_floored_policy(m.n_states, m.n_actions, alpha, seed ^ 5);
        let vb = evaluate(&m, &p, &c).unwrap();
        let kind = if kl { DivergenceKind::Kl } else { DivergenceKind::Euclidean };
        let next = policy_mirror_step(&p, &vb.g, eta, kind, alpha).unwrap();
        prop_assert!(next.in_floor_set(alpha));
        let j_next = evaluate(&m, &next, &c).unwrap().gain_mu(&mu);
        prop_assert!(j_next >= vb.gain_mu(&mu) - 1e-10);
    }
}
