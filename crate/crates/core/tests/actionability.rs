//! Penalty and projection contracts, and cost-model properties.

mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{fd_grad, mixed_origin, mixed_relaxed, mixed_schema, rel_error};
use tap_core::actionability::{
    cond, penalty_actionable, penalty_coherence, CostModel, CostSpec, FixedTerm, PenaltyConfig, TransitionTerm,
    WeightedTerm,
};

fn cost_spec() -> CostSpec {
    CostSpec {
        quadratic: vec![WeightedTerm {
            feature: "hours".into(),
            weight: 0.1,
        }],
        linear: vec![
            WeightedTerm {
                feature: "years".into(),
                weight: 2.0,
            },
            WeightedTerm {
                feature: "debt".into(),
                weight: -0.001,
            },
        ],
        transition: vec![TransitionTerm {
            group: "edu".into(),
            categories: Some(vec!["c".into(), "b".into(), "a".into()]),
            matrix: vec![vec![0.0, 1.0, 2.0], vec![5.0, 0.0, 1.0], vec![9.0, 4.0, 0.0]],
            units: None,
        }],
        fixed: vec![FixedTerm {
            feature: "phone".into(),
            cost: 50.0,
        }],
    }
}

proptest! {
    #[test]
    fn cond_contracts(seed in any::<u64>()) {
        let schema = mixed_schema();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = mixed_origin(&mut rng);
        let bx = schema.actionable_box(&x).unwrap();
        let pc = PenaltyConfig::default();
        let relaxed = mixed_relaxed(&mut rng, &x);
        let c = cond(&relaxed, &schema, &bx);
        prop_assert_eq!(&cond(&c, &schema, &bx), &c);
        prop_assert_eq!(penalty_actionable(&c, &bx, &pc).0, 0.0);
        prop_assert_eq!(penalty_coherence(&c, &schema, &pc).0, 0.0);
        prop_assert!(schema.is_coherent(&c));
        prop_assert!(bx.contains(&c));
        prop_assert_eq!(c[1], x[1]);
        prop_assert!(c[2] >= x[2]);
        prop_assert!(c[9] <= x[9]);
    }

    #[test]
    fn origin_is_feasible_and_free(seed in any::<u64>()) {
        let schema = mixed_schema();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = mixed_origin(&mut rng);
        let bx = schema.actionable_box(&x).unwrap();
        prop_assert!(bx.contains(&x));
        prop_assert_eq!(cond(&x, &schema, &bx), x.clone());
        let cost = CostModel::new(&cost_spec(), &schema).unwrap();
        prop_assert_eq!(cost.cost(&x, &x).unwrap(), 0.0);
    }

    #[test]
    fn penalties_match_finite_differences_off_the_kinks(seed in any::<u64>()) {
        let schema = mixed_schema();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = mixed_origin(&mut rng);
        let bx = schema.actionable_box(&x).unwrap();
        let pc = PenaltyConfig { g: 3.0, p: 7.0 };
        let z = mixed_relaxed(&mut rng, &x);
        let near_kink = z.iter().zip(bx.lower.iter().zip(&bx.upper)).any(|(v, (l, u))| (v - l).abs() < 1e-4 || (v - u).abs() < 1e-4);
        prop_assume!(!near_kink);
        let (_, g) = penalty_coherence(&z, &schema, &pc);
        let fd = fd_grad(|v| penalty_coherence(v, &schema, &pc).0, &z, 1e-6);
        prop_assert!(rel_error(&g, &fd, 1.0) <= 1e-6);
        let (_, g) = penalty_actionable(&z, &bx, &pc);
        let fd = fd_grad(|v| penalty_actionable(v, &bx, &pc).0, &z, 1e-6);
        prop_assert!(rel_error(&g, &fd, 1.0) <= 1e-6);
    }

    #[test]
    fn cost_gradient_matches_finite_differences(seed in any::<u64>()) {
        let schema = mixed_schema();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = mixed_origin(&mut rng);
        let mut z = mixed_relaxed(&mut rng, &x);
        // Stay off the kink of the fixed cost.
        z[3] = x[3] + if z[3] > x[3] { 0.5 } else { -0.5 };
        let cost = CostModel::new(&cost_spec(), &schema).unwrap();
        let g = cost.cost_grad(&x, &z).unwrap();
        let fd = fd_grad(|v| cost.cost(&x, v).unwrap(), &z, 1e-5);
        prop_assert!(rel_error(&g, &fd, 1.0) <= 1e-6);
    }
}

#[test]
fn transition_costs_follow_the_named_category_order() {
    let schema = mixed_schema();
    let cost = CostModel::new(&cost_spec(), &schema).unwrap();
    // edu columns are (a, b, c); the matrix order is (c, b, a).
    let x = [40.0, 30.0, 5.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 100.0];
    let mut to_a = x;
    to_a[6] = 0.0;
    to_a[4] = 1.0;
    assert_eq!(cost.cost(&x, &to_a).unwrap(), 2.0);
    let mut back = to_a;
    back[4] = 0.0;
    back[6] = 1.0;
    assert_eq!(cost.cost(&to_a, &back).unwrap(), 9.0);
}

#[test]
fn fixed_cost_is_paid_only_when_switching_on() {
    let schema = mixed_schema();
    let cost = CostModel::new(&cost_spec(), &schema).unwrap();
    let off = [40.0, 30.0, 5.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 100.0];
    let mut on = off;
    on[3] = 1.0;
    assert_eq!(cost.cost(&off, &on).unwrap(), 50.0);
    assert_eq!(cost.cost(&on, &off).unwrap(), 0.0);
}

#[test]
fn negative_linear_weight_rewards_reduction() {
    let schema = mixed_schema();
    let cost = CostModel::new(&cost_spec(), &schema).unwrap();
    let x = [40.0, 30.0, 5.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1000.0];
    let mut paid = x;
    paid[9] = 0.0;
    assert!((cost.cost(&x, &paid).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn bad_cost_specs_are_rejected() {
    let schema = mixed_schema();
    let mut spec = cost_spec();
    spec.fixed[0].feature = "hours".into();
    assert!(CostModel::new(&spec, &schema).is_err());
    let mut spec = cost_spec();
    spec.transition[0].matrix[1][1] = 1.0;
    assert!(CostModel::new(&spec, &schema).is_err());
    let mut spec = cost_spec();
    spec.transition[0].categories = Some(vec!["c".into(), "b".into(), "z".into()]);
    assert!(CostModel::new(&spec, &schema).is_err());
    let mut spec = cost_spec();
    spec.quadratic[0].feature = "nope".into();
    assert!(CostModel::new(&spec, &schema).is_err());
}
