use std::path::Path;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use riskpomdp::evaluation::{policy_report, spearman, value_at_risk, Candidate};
use riskpomdp::fixture::build_frg_fixture;
use riskpomdp::frg::{action_labels, NUM_ACTIONS, NUM_STATES};
use riskpomdp::io::{
    format_values, parse_batch, parse_model, parse_policy, parse_values, serialize_batch, serialize_model,
    serialize_policy,
};
use riskpomdp::model::Belief;
use riskpomdp::pipeline::{gen_batch, GenConfig};
use riskpomdp::solver::{solve_pomdp, AlphaVector, AlphaVectorPolicy, PerseusConfig};

fn sample() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-50.0..50.0f64, 1..200)
}

fn belief() -> impl Strategy<Value = Belief> {
    prop::collection::vec(0.0..1.0f64, NUM_STATES)
        .prop_filter("some mass", |w| w.iter().sum::<f64>() > 1e-3)
        .prop_map(|w| Belief::from_weights(w).unwrap())
}

fn vectors() -> impl Strategy<Value = Vec<AlphaVector>> {
    prop::collection::vec(
        (prop::collection::vec(-5.0..5.0f64, NUM_STATES), 0..NUM_ACTIONS)
            .prop_map(|(values, action)| AlphaVector { values, action }),
        1..12,
    )
}

proptest! {
    #[test]
    fn var_is_monotone_in_q(s in sample(), a in 0.0..1.0f64, b in 0.0..1.0f64) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(value_at_risk(&s, lo).unwrap() <= value_at_risk(&s, hi).unwrap());
    }

    #[test]
    fn var_is_a_sample_point(s in sample(), q in 0.0..1.0f64) {
        let v = value_at_risk(&s, q).unwrap();
        prop_assert!(s.contains(&v));
    }

    #[test]
    fn median_report_uses_var(s in sample()) {
        let r = policy_report(&Candidate::random(), &s, 0.5).unwrap();
        prop_assert_eq!(r.var, r.median);
        prop_assert!(r.min <= r.q25 && r.q25 <= r.median && r.median <= r.q75 && r.q75 <= r.max);
    }

    #[test]
    fn report_scales_with_returns(s in sample(), c in 0.1..10.0f64) {
        let scaled: Vec<f64> = s.iter().map(|x| c * x).collect();
        let a = policy_report(&Candidate::random(), &s, 0.3).unwrap();
        let b = policy_report(&Candidate::random(), &scaled, 0.3).unwrap();
        for (x, y) in [(a.mean, b.mean), (a.std, b.std), (a.var, b.var), (a.max, b.max)] {
            prop_assert!((c * x - y).abs() <= 1e-9 * (1.0 + y.abs()));
        }
    }

    #[test]
    fn spearman_ignores_monotone_maps(x in prop::collection::vec(-5.0..5.0f64, 3..50), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y: Vec<f64> = x.iter().map(|v| v + rand::Rng::random_range(&mut rng, -1.0..1.0)).collect();
        let stretched: Vec<f64> = y.iter().map(|v| v.exp()).collect();
        if let (Ok(a), Ok(b)) = (spearman(&x, &y), spearman(&x, &stretched)) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn belief_update_stays_a_distribution(b in belief(), action in 0..NUM_ACTIONS, obs in 0..NUM_STATES) {
        let (model, _) = build_frg_fixture(0.98, 60);
        match model.belief_update(&b, action, obs) {
            Ok(next) => {
                prop_assert!(next.validate().is_ok());
                prop_assert!((next.mass().iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
            // Only impossible observations are rejected.
            Err(_) => {
                let predicted = model.predict(&b, action);
                let likelihood: f64 = (0..NUM_STATES).map(|s| predicted[s] * model.o(s, obs)).sum();
                prop_assert!(likelihood <= 0.0);
            }
        }
    }

    #[test]
    fn pruning_keeps_the_value_function(v in vectors(), beliefs in prop::collection::vec(belief(), 1..20)) {
        let policy = AlphaVectorPolicy::new(v, 0.9).unwrap();
        let mut pruned = policy.clone();
        pruned.prune_dominated();
        prop_assert!(pruned.vectors.len() <= policy.vectors.len());
        for b in &beliefs {
            prop_assert_eq!(policy.value(b), pruned.value(b));
        }
    }

    #[test]
    fn values_round_trip(values in prop::collection::vec(prop::num::f64::NORMAL, 0..50)) {
        let text = format_values(&values, None);
        prop_assert_eq!(parse_values(&text, Path::new("v")).unwrap(), values);
    }

    #[test]
    fn policy_round_trip(v in vectors(), discount in 0.5..0.999f64) {
        let policy = AlphaVectorPolicy::new(v, discount).unwrap();
        let text = serialize_policy(&policy, &action_labels(), None);
        let back = parse_policy(&text, &action_labels(), Path::new("p")).unwrap();
        prop_assert_eq!(back.vectors, policy.vectors);
        prop_assert_eq!(back.discount, policy.discount);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn model_round_trip(seed in any::<u64>()) {
        let (trivial, posterior) = build_frg_fixture(0.97, 40);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model = trivial.clone();
        model.observation = posterior.sample_observation_function(&mut rng);
        let back = parse_model(&serialize_model(&model, None), Path::new("m")).unwrap();
        prop_assert_eq!(back, model);
    }

    #[test]
    fn batch_round_trip(seed in any::<u64>()) {
        let (model, _) = build_frg_fixture(0.98, 60);
        let batch = gen_batch(&model, &GenConfig { missions: 12, participants: 4, seed, ..GenConfig::default() }).unwrap();
        let text = serialize_batch(&batch, &action_labels(), None);
        prop_assert_eq!(parse_batch(&text, &action_labels(), Path::new("b")).unwrap(), batch);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(4))]

    /// Scaling rewards by c scales every alpha vector by c and keeps actions.
    #[test]
    fn solver_scales_with_rewards(c in 0.2..5.0f64, seed in 0..1000u64) {
        let (model, _) = build_frg_fixture(0.9, 60);
        let base = PerseusConfig { belief_count: 60, max_iter: 40, epsilon: 1e-4, seed };
        let a = solve_pomdp(&model, 0.9, &base).unwrap();
        let b = solve_pomdp(&model.scale_rewards(c), 0.9, &PerseusConfig { epsilon: 1e-4 * c, ..base }).unwrap();
        prop_assert_eq!(a.vectors.len(), b.vectors.len());
        for (x, y) in a.vectors.iter().zip(&b.vectors) {
            prop_assert_eq!(x.action, y.action);
            for (p, q) in x.values.iter().zip(&y.values) {
                prop_assert!((c * p - q).abs() <= 1e-9 * (1.0 + q.abs()));
            }
        }
    }
}
