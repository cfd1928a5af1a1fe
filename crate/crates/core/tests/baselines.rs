//! Counterfactual and attack baselines on a small trained model.

mod common;

use tap_core::actionability::{CostModel, PenaltyConfig};
use tap_core::baselines::{cw_l2, mad_weights, wachter_counterfactual, CwConfig, InputBox, Method, WachterConfig};
use tap_core::bench::select_individuals;
use tap_core::dataset::Dataset;
use tap_core::perturb::PerturbContext;
use tap_core::probspace::{Divergence, TargetSet};

#[test]
fn mad_of_small_columns() {
    let rows = vec![vec![1.0, 5.0], vec![2.0, 5.0], vec![3.0, 5.0], vec![4.0, 5.0], vec![100.0, 5.0]];
    let data = Dataset::from_rows(&rows, vec![0, 1, 0, 1, 0], 2).unwrap();
    let mad = mad_weights(&data);
    // Median 3, absolute deviations {2, 1, 0, 1, 97}, median 1.
    assert_eq!(mad[0], 1.0);
    assert_eq!(mad[1], 1.0);
}

#[test]
fn input_box_widens_and_clips() {
    let rows = vec![vec![0.0, 0.0], vec![10.0, 1.0]];
    let data = Dataset::from_rows(&rows, vec![0, 1], 2).unwrap();
    let bx = InputBox::from_data(&data, None, 0.1);
    assert_eq!(bx.lower, vec![-1.0, -0.1]);
    assert_eq!(bx.upper, vec![11.0, 1.1]);
}

#[test]
fn baselines_flip_the_prediction() {
    let (cfg, trained) = common::small_trained();
    let schema = cfg.spec.schema(10.0).unwrap();
    let cost = CostModel::new(&cfg.spec.squared_cost(), &schema).unwrap();
    let target = TargetSet::at_least(2, 1, 0.8).unwrap();
    let ctx = PerturbContext {
        model: &trained.model,
        target: target.clone(),
        divergence: Divergence::kl(),
        cost: &cost,
        schema: &schema,
        penalty: PenaltyConfig::default(),
    };
    let ids = select_individuals(&trained.model, &trained.split.test, &target, 6).unwrap();
    let mad = mad_weights(&trained.split.train);
    let bx = InputBox::from_data(&trained.split.train, Some(&schema), 0.1);
    let (mut w_ok, mut cw_ok) = (0, 0);
    for &i in &ids {
        let x = trained.split.test.row_vec(i);
        let w = wachter_counterfactual(&ctx, &x, 1, &mad, &WachterConfig::default()).unwrap();
        assert_eq!(w.method, Method::Wachter);
        if w.success {
            w_ok += 1;
            assert_eq!(trained.model.predict_class(&w.x_perturbed).unwrap(), 1);
            assert!(schema.actionable_box(&x).unwrap().contains(&w.x_perturbed));
        }
        if trained.model.predict_class(&x).unwrap() == 1 {
            assert!(cw_l2(&ctx, &x, 1, &bx, &CwConfig::default()).is_err());
            continue;
        }
        let a = cw_l2(&ctx, &x, 1, &bx, &CwConfig::default()).unwrap();
        assert_eq!(a.method, Method::Cw);
        if a.success {
            cw_ok += 1;
            assert_eq!(trained.model.predict_class(&a.x_perturbed).unwrap(), 1);
            assert!(a.x_perturbed.iter().zip(bx.lower.iter().zip(&bx.upper)).all(|(v, (l, u))| v >= l && v <= u));
            assert!((a.epsilon - cost.cost(&x, &a.x_perturbed).unwrap()).abs() < 1e-12);
        }
    }
    assert!(w_ok * 2 >= ids.len());
    assert!(cw_ok >= 1);
}
