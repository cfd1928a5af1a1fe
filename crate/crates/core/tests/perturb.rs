//! Perturbation search on a small trained model.

mod common;

use tap_core::actionability::{CostModel, Direction, Feature, FeatureSchema, PenaltyConfig};
use tap_core::bench::select_individuals;
use tap_core::perturb::{
    default_lambda_grid, frontier_sweep, generate_candidate, log_grid, meet_budget, repair_on_rejection, Budget,
    OptConfig, PerturbContext, RepairConfig, VerifyContext,
};
use tap_core::probspace::{Divergence, TargetSet};

struct Fixture {
    schema: FeatureSchema,
    cost: CostModel,
    target: TargetSet,
}

fn fixture(schema: FeatureSchema) -> Fixture {
    let (cfg, _) = common::small_trained();
    let cost = CostModel::new(&cfg.spec.squared_cost(), &schema).unwrap();
    Fixture {
        schema,
        cost,
        target: TargetSet::at_least(2, 1, 0.8).unwrap(),
    }
}

fn plain() -> Fixture {
    let (cfg, _) = common::small_trained();
    fixture(cfg.spec.schema(10.0).unwrap())
}

fn ctx<'a>(f: &'a Fixture) -> PerturbContext<'a> {
    let (_, trained) = common::small_trained();
    PerturbContext {
        model: &trained.model,
        target: f.target.clone(),
        divergence: Divergence::kl(),
        cost: &f.cost,
        schema: &f.schema,
        penalty: PenaltyConfig::default(),
    }
}

fn individuals(n: usize) -> Vec<Vec<f64>> {
    let (_, trained) = common::small_trained();
    let target = TargetSet::at_least(2, 1, 0.8).unwrap();
    select_individuals(&trained.model, &trained.split.test, &target, n)
        .unwrap()
        .into_iter()
        .map(|i| trained.split.test.row_vec(i))
        .collect()
}

#[test]
fn huge_lambda_leaves_the_input_unchanged() {
    let f = plain();
    let c = ctx(&f);
    for x in individuals(4) {
        let origin = c.origin(&x).unwrap();
        let cand = generate_candidate(&c, &x, &OptConfig::default().with_lambda(1e6)).unwrap();
        // With a squared cost the exact minimizer sits O(1/λ) away from x.
        for (a, b) in cand.x_perturbed.iter().zip(&x) {
            assert!((a - b).abs() <= 1e-5, "{a} vs {b}");
        }
        assert!(cand.epsilon <= 1e-9);
        assert!((cand.delta - origin.delta).abs() <= 1e-5);
    }
}

#[test]
fn small_lambda_reaches_the_target() {
    let f = plain();
    let c = ctx(&f);
    let mut reached = 0;
    let xs = individuals(6);
    for x in &xs {
        let origin = c.origin(x).unwrap();
        let cand = generate_candidate(&c, x, &OptConfig::default().with_lambda(1e-3)).unwrap();
        assert!(cand.delta <= origin.delta);
        reached += usize::from(cand.delta < 1e-3);
    }
    assert!(reached * 2 >= xs.len(), "only {reached} of {} reached the target", xs.len());
}

#[test]
fn candidates_respect_immutable_and_directional_features() {
    let features = vec![
        Feature::numeric("x0", -10.0, 10.0).immutable(),
        Feature::numeric("x1", -10.0, 10.0).with_direction(Direction::Increase),
        Feature::numeric("x2", -10.0, 10.0).with_direction(Direction::Decrease),
        Feature::numeric("x3", -1.0, 1.0),
    ];
    let schema = FeatureSchema::new(features, "label".into(), vec!["class0".into(), "class1".into()]).unwrap();
    let f = fixture(schema);
    let c = ctx(&f);
    for x in individuals(5) {
        for lambda in [1e-3, 1e-1, 10.0] {
            let cand = generate_candidate(&c, &x, &OptConfig::default().with_lambda(lambda)).unwrap();
            let xt = &cand.x_perturbed;
            assert_eq!(xt[0], x[0]);
            assert!(xt[1] >= x[1]);
            assert!(xt[2] <= x[2]);
            let bx = f.schema.actionable_box(&x).unwrap();
            assert!(bx.contains(xt));
        }
    }
}

#[test]
fn frontier_epsilon_mostly_falls_as_lambda_grows() {
    let f = plain();
    let c = ctx(&f);
    let (mut falls, mut pairs) = (0, 0);
    for x in individuals(3) {
        let fr = frontier_sweep(&c, &x, &OptConfig::default(), &default_lambda_grid()).unwrap();
        assert!(fr.failures.is_empty());
        let mut cands = fr.candidates.clone();
        cands.sort_by(|a, b| a.lambda_used.total_cmp(&b.lambda_used));
        for w in cands.windows(2) {
            pairs += 1;
            falls += usize::from(w[1].epsilon <= w[0].epsilon + 1e-9);
        }
    }
    assert!(falls as f64 >= 0.9 * pairs as f64, "{falls} of {pairs}");
}

#[test]
fn budgets_are_met_or_reported() {
    let f = plain();
    let c = ctx(&f);
    for x in individuals(3) {
        let out = meet_budget(&c, &x, &OptConfig::default(), Budget::EpsilonMax(1.0)).unwrap();
        assert!(out.met);
        assert!(out.candidate.epsilon <= 1.0);
        let out = meet_budget(&c, &x, &OptConfig::default(), Budget::DeltaMax(0.05)).unwrap();
        if out.met {
            assert!(out.candidate.delta <= 0.05);
        }
        // Reaching the target at zero cost is impossible from outside it.
        let out = meet_budget(&c, &x, &OptConfig::default(), Budget::EpsilonMax(0.0)).unwrap();
        assert!(out.met && out.candidate.is_origin());
    }
}

#[test]
fn repair_returns_a_verified_candidate_or_the_least_suspicious() {
    let (_, trained) = common::small_trained();
    let f = plain();
    let c = ctx(&f);
    let vctx = VerifyContext {
        verifier: &trained.verifier,
        calibration: &trained.calibration,
    };
    for x in individuals(4) {
        for lambda in log_grid(1e-3, 1.0, 3) {
            let mut cand = generate_candidate(&c, &x, &OptConfig::default().with_lambda(lambda)).unwrap();
            cand.verify_with(&trained.model, &trained.verifier, &trained.calibration).unwrap();
            let out = repair_on_rejection(&c, &vctx, &cand, &OptConfig::default(), &RepairConfig::default()).unwrap();
            if cand.verified == Some(true) {
                assert!(out.repaired && out.attempts.is_empty());
                continue;
            }
            assert!(out.attempts.len() <= 6);
            assert!(out.attempts.iter().all(|a| a.candidate.verified.is_some()));
            if out.repaired {
                assert_eq!(out.candidate.verified, Some(true));
            } else {
                let least = out
                    .attempts
                    .iter()
                    .map(|a| a.candidate.discrepancy.unwrap())
                    .fold(cand.discrepancy.unwrap(), f64::min);
                assert_eq!(out.candidate.discrepancy.unwrap(), least);
            }
        }
    }
}

#[test]
fn search_is_deterministic() {
    let f = plain();
    let c = ctx(&f);
    let x = &individuals(1)[0];
    let oc = OptConfig {
        seed: 42,
        ..OptConfig::default()
    };
    let a = frontier_sweep(&c, x, &oc, &log_grid(1e-2, 1e2, 5)).unwrap();
    let b = frontier_sweep(&c, x, &oc, &log_grid(1e-2, 1e2, 5)).unwrap();
    assert_eq!(a.candidates, b.candidates);
}

#[test]
fn mismatched_inputs_are_rejected() {
    let f = plain();
    let c = ctx(&f);
    assert!(generate_candidate(&c, &[0.0, 1.0], &OptConfig::default()).is_err());
    let bad = OptConfig {
        learning_rate: 0.0,
        ..OptConfig::default()
    };
    assert!(generate_candidate(&c, &[0.0; 4], &bad).is_err());
}
