use proptest::prelude::*;
use voxhive::distill::{dpo_grad, dpo_loss, DistillConfig, PreferencePair};
use voxhive::policy::{feature_names, FeatureVector, PolicyParams, NUM_ACTIONS};
use voxhive::tasks::corridor::{distill_student, train_reference, CorridorConfig};

fn params(weights: Vec<f64>) -> PolicyParams {
    let mut p = PolicyParams::zeros(NUM_ACTIONS, feature_names().len());
    p.weights = weights;
    p
}

fn weights() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0..2.0f64, NUM_ACTIONS * feature_names().len())
}

fn pair_parts() -> impl Strategy<Value = (Vec<usize>, usize, usize)> {
    let dim = feature_names().len();
    (prop::collection::vec(0..dim, 1..6), 0..NUM_ACTIONS, 1..NUM_ACTIONS)
        .prop_map(|(active, a, off)| (active, a, (a + off) % NUM_ACTIONS))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn gradient_matches_central_differences(
        theta in weights(), reference in weights(), (active, a, b) in pair_parts(), beta in 0.05..3.0f64,
    ) {
        let (theta, reference) = (params(theta), params(reference));
        let phi = FeatureVector::new(feature_names().len(), active);
        let pair = PreferencePair::new(phi.clone(), a, b, &reference).unwrap();
        let g = dpo_grad(&theta, &reference, &pair, beta).unwrap();
        let h = 1e-5;
        // only rows of active features can move the loss
        for &j in &phi.active {
            for r in 0..NUM_ACTIONS {
                let k = r * theta.dim + j;
                let (mut p, mut m) = (theta.clone(), theta.clone());
                p.weights[k] += h;
                m.weights[k] -= h;
                let fd = (dpo_loss(&p, &reference, &pair, beta).unwrap() - dpo_loss(&m, &reference, &pair, beta).unwrap()) / (2.0 * h);
                prop_assert!((fd - g[k]).abs() <= 1e-6 * (1.0 + g[k].abs()), "coord {}: {} vs {}", k, g[k], fd);
            }
        }
        let inactive: f64 = g.iter().enumerate().filter(|(k, _)| !phi.active.contains(&(k % theta.dim))).map(|(_, v)| v.abs()).sum();
        prop_assert_eq!(inactive, 0.0);
    }

    #[test]
    fn loss_is_positive_and_anchored(theta in weights(), (active, a, b) in pair_parts(), beta in 0.05..3.0f64) {
        let theta = params(theta);
        let pair = PreferencePair::new(FeatureVector::new(feature_names().len(), active), a, b, &theta).unwrap();
        let at_ref = dpo_loss(&theta, &theta, &pair, beta).unwrap();
        prop_assert!((at_ref - std::f64::consts::LN_2).abs() <= 1e-12);
        let moved = params(theta.weights.iter().map(|w| w * 0.5).collect());
        prop_assert!(dpo_loss(&moved, &theta, &pair, beta).unwrap() > 0.0);
    }
}

#[test]
fn equal_actions_are_not_a_pair() {
    let p = params(vec![0.0; NUM_ACTIONS * feature_names().len()]);
    let err = PreferencePair::new(FeatureVector::new(p.dim, vec![0]), 3, 3, &p).unwrap_err();
    assert_eq!(err.kind(), "InvalidPair");
}

#[test]
fn corridor_pipeline_properties() {
    let cc = CorridorConfig { demo_episodes: 10, eval_episodes: 5, ..CorridorConfig::default() };
    let dc = DistillConfig { dagger_rounds: 3, rollouts_per_round: 6, ..DistillConfig::default() };
    let fit = train_reference(&cc, &dc).unwrap();
    assert!(fit.curve.windows(2).all(|w| w[1] <= w[0]));
    assert!(fit.curve.last() <= fit.curve.first());

    let a = distill_student(&cc, &fit.params, &dc, 5).unwrap();
    let b = distill_student(&cc, &fit.params, &dc, 5).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.dataset.to_text(), b.dataset.to_text());
    assert_eq!(a.rounds.len(), 3);
    assert!(a.rounds.windows(2).all(|w| w[1].dataset_size >= w[0].dataset_size));
    assert_eq!(a.rounds.last().unwrap().dataset_size, a.dataset.len());

    let none = distill_student(&cc, &fit.params, &DistillConfig { dagger_rounds: 0, ..dc }, 5).unwrap();
    assert_eq!(none.params, fit.params);
    assert!(none.dataset.is_empty());
}

#[test]
fn no_demonstrations_is_an_empty_dataset() {
    let cc = CorridorConfig { demo_episodes: 0, ..CorridorConfig::default() };
    assert_eq!(train_reference(&cc, &DistillConfig::default()).unwrap_err().kind(), "EmptyDataset");
}
