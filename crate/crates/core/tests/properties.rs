use std::sync::Arc;

use majority_tree::analytics::{
    agreement_clusters, agreement_clusters_by_value, center_trace, energy_audit, threshold_pair,
};
use majority_tree::domain::Domain;
use majority_tree::engine::{
    check_attractiveness, check_commutation, discrete_update, median_update, run, BoundaryCondition, Landscape, Mode,
    Spin,
};
use majority_tree::estimators::{RootSample, SamplerPolicy, ThetaCurve};
use majority_tree::exactness::{backward_state, bracketing_violations, chronological_bound};
use majority_tree::randomness::{initial_uniform, SeedManifest};
use majority_tree::{Ball, VertexId};
use proptest::prelude::*;

fn address() -> impl Strategy<Value = VertexId> {
    (0u8..3, proptest::collection::vec(0u8..2, 0..12)).prop_map(|(first, rest)| {
        let mut s = String::new();
        if !rest.is_empty() || first > 0 {
            s.push(char::from(b'0' + first));
            s.extend(rest.iter().map(|&b| char::from(b'0' + b)));
        }
        s.parse().unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn median_returns_a_neighbor(a in 0.0f64..1.0, b in 0.0f64..1.0, c in 0.0f64..1.0, cur in 0.0f64..1.0) {
        let s = |x: f64, o: &str| Spin::new(x, o.parse().unwrap());
        let (n1, n2, n3) = (s(a, "0"), s(b, "1"), s(c, "2"));
        let m = median_update(s(cur, ""), n1, n2, n3);
        prop_assert!(m == n1 || m == n2 || m == n3);
        let below = [n1, n2, n3].iter().filter(|&&x| x < m).count();
        prop_assert_eq!(below, 1);
    }

    #[test]
    fn projection_of_median_is_majority(a in 0.0f64..1.0, b in 0.0f64..1.0, c in 0.0f64..1.0, cur in 0.0f64..1.0, p in 0.0f64..1.0) {
        let s = |x: f64, o: &str| Spin::new(x, o.parse().unwrap());
        let (n1, n2, n3, me) = (s(a, "0"), s(b, "1"), s(c, "2"), s(cur, ""));
        let m = median_update(me, n1, n2, n3);
        let majority = discrete_update(me.project(p), n1.project(p), n2.project(p), n3.project(p));
        prop_assert_eq!(m.project(p), majority);
    }

    #[test]
    fn distance_is_a_metric(u in address(), v in address(), w in address()) {
        prop_assert_eq!(u.distance(&v), v.distance(&u));
        prop_assert_eq!(u.distance(&u), 0);
        prop_assert!(u.distance(&w) <= u.distance(&v) + v.distance(&w));
        prop_assert_eq!(u.path_to(&v).len(), u.distance(&v) + 1);
    }

    #[test]
    fn uniforms_are_pure_functions(seed in any::<u64>(), v in address()) {
        let m = SeedManifest::new(seed);
        let a: f64 = initial_uniform(&m, &v);
        let b: f64 = initial_uniform(&SeedManifest::new(seed), &v);
        prop_assert_eq!(a.to_bits(), b.to_bits());
        prop_assert!(a > 0.0 && a < 1.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn coupling_commutes(seed in any::<u64>(), p in 0.0f64..1.0, t in 0.0f64..4.0) {
        let r = check_commutation::<f64>(&SeedManifest::new(seed), &Ball::around_root(5), p, t).unwrap();
        prop_assert!(r.holds, "{:?}", r.discrepancy);
    }

    #[test]
    fn attractiveness_holds(seed in any::<u64>(), p in 0.0f64..1.0, lift in 0.0f64..0.5) {
        let m = SeedManifest::new(seed);
        let ball = Ball::around_root(5);
        let d = Arc::new(Domain::from_ball(&ball));
        let land: Landscape<f64> = Landscape::new(&m, d.clone());
        let lower: Vec<i8> = (0..d.total_len() as u32).map(|h| land.project(h, p)).collect();
        let upper: Vec<i8> = (0..d.total_len() as u32).map(|h| land.project(h, (p + lift).min(1.0))).collect();
        prop_assert!(check_attractiveness(&m, &ball, BoundaryCondition::FrozenInitial, &lower, &upper, 6.0).unwrap());
    }

    #[test]
    fn sentinel_runs_bracket_the_window_run(seed in any::<u64>()) {
        prop_assert_eq!(bracketing_violations::<f64>(&SeedManifest::new(seed), &Ball::around_root(6), 8.0).unwrap(), 0);
    }

    #[test]
    fn energy_never_increases(seed in any::<u64>()) {
        let t = run::<f64>(&SeedManifest::new(seed), &Ball::around_root(6), BoundaryCondition::FrozenInitial, Mode::Median, 8.0).unwrap();
        prop_assert_eq!(energy_audit(&t.flips).violations, 0);
    }

    #[test]
    fn clusters_by_origin_equal_clusters_by_value(seed in any::<u64>(), t in 0.0f64..8.0) {
        let tr = run::<f64>(&SeedManifest::new(seed), &Ball::around_root(6), BoundaryCondition::FrozenInitial, Mode::Median, t).unwrap();
        let a = agreement_clusters(tr.domain(), &tr.final_state, None);
        let b = agreement_clusters_by_value(&tr.land, &tr.final_state, None);
        prop_assert_eq!(a.clusters, b.clusters);
    }

    #[test]
    fn trace_is_threshold_difference(seed in any::<u64>(), t in 0.0f64..6.0) {
        let m = SeedManifest::new(seed);
        let ball = Ball::around_root(6);
        let tr = center_trace::<f64>(&m, &ball, t).unwrap();
        let pair = threshold_pair::<f64>(&m, &ball, t).unwrap();
        prop_assert!(tr.members.contains(&VertexId::root()));
        prop_assert_eq!(tr.members, pair.difference);
    }

    #[test]
    fn backward_matches_a_large_window(seed in any::<u64>(), t in 0.0f64..1.0) {
        let m = SeedManifest::new(seed);
        let exact = backward_state::<f64>(&m, &VertexId::root(), t, 1_000_000).unwrap();
        let fwd = run::<f64>(&m, &Ball::around_root(10), BoundaryCondition::FrozenInitial, Mode::Median, t).unwrap();
        prop_assert_eq!(fwd.spin(fwd.final_state[0]), exact);
    }

    #[test]
    fn curve_is_a_distribution(vals in proptest::collection::vec((0.0f64..1.0, 0.0f64..0.2), 1..200)) {
        let samples: Vec<RootSample> = vals
            .iter()
            .map(|&(u, w)| RootSample { low: u, high: (u + w).min(1.0), radius: 0, settled: w == 0.0 })
            .collect();
        let c = ThetaCurve::from_samples(1.0, SamplerPolicy::Window { radius: 0 }, &samples);
        prop_assert_eq!(c.counts(0.0), (0, 0));
        prop_assert_eq!(c.counts(1.0), (samples.len(), samples.len()));
        let mut prev = (0, 0);
        for k in 0..=100 {
            let now = c.counts(k as f64 / 100.0);
            prop_assert!(now.0 >= prev.0 && now.1 >= prev.1 && now.0 <= now.1);
            prev = now;
        }
    }
}

#[test]
fn chronological_bound_values() {
    assert!((chronological_bound(1.0, 20) - 0.786842).abs() < 1e-6);
    assert!((chronological_bound(0.5, 15) - 0.324974).abs() < 1e-6);
    assert!(chronological_bound(1.0, 5) >= 1.0);
}
