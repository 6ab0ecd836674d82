mod common;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::oracles::{index_map, metric_instance};
use muffin::metrics::{self, full_report, Predictions};
use muffin::Error;

#[test]
fn thousand_random_instances_match_recount() {
    for seed in 0..1000 {
        if let Err(e) = metric_instance(seed) {
            panic!("seed {seed}: {e}");
        }
    }
}

#[test]
fn hand_example_two_groups() {
    // group a: 9/10 right, group b: 5/10 right
    let labels = vec![0; 20];
    let groups: Vec<Vec<usize>> = (0..20).map(|i| vec![(i >= 10) as usize]).collect();
    let ds = common::dataset(&[2], 2, &labels, &groups);
    let mut preds = vec![0; 20];
    preds[9] = 1;
    preds[15..].iter_mut().for_each(|p| *p = 1);
    let split = ds.all_indices();
    let r = full_report(&Predictions(preds), &ds, &split, 1e-3).unwrap();
    assert!((r.overall_accuracy - 0.7).abs() < 1e-12);
    assert!((r.multi_unfairness - 0.4).abs() < 1e-12);
    assert!((r.reward - 0.7 / 0.4).abs() < 1e-12);
}

#[test]
fn empty_groups_are_skipped() {
    let labels = vec![0, 1, 0, 1];
    let groups: Vec<Vec<usize>> = vec![vec![0], vec![0], vec![1], vec![1]];
    let ds = common::dataset(&[3], 2, &labels, &groups);
    let p = Predictions(vec![0, 1, 1, 1]);
    let u = metrics::unfairness(&p, &ds, &ds.all_indices(), "a0").unwrap();
    // groups: 1.0 and 0.5, overall 0.75; third group empty
    assert!((u - 0.5).abs() < 1e-12);
}

#[test]
fn reward_clamps_small_unfairness() {
    let u = index_map(&[("x", 0.0), ("y", 0.5)]);
    let r = metrics::reward(0.9, &u, 1e-3).unwrap();
    assert!((r - (0.9 / 1e-3 + 0.9 / 0.5)).abs() < 1e-9);
    assert!((metrics::multi_unfairness(&u) - 0.5).abs() < 1e-15);
}

#[test]
fn empty_subset_is_an_error() {
    assert!(matches!(metrics::accuracy(&[0], &[0], Some(&[])), Err(Error::EmptyGroup)));
}

proptest! {
    #[test]
    fn metrics_invariant_under_permutation(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ds = common::random_dataset(&mut rng, 120, 4, 5);
        let preds = common::noisy_predictions(&mut rng, &ds, 0.6);
        let split = ds.all_indices();
        let a = full_report(&Predictions(preds.clone()), &ds, &split, 1e-3).unwrap();

        let mut order = split.clone();
        order.shuffle(&mut rng);
        let permuted: Vec<usize> = order.iter().map(|&i| preds[i]).collect();
        let b = full_report(&Predictions(permuted), &ds, &order, 1e-3).unwrap();
        prop_assert!((a.overall_accuracy - b.overall_accuracy).abs() < 1e-12);
        prop_assert!((a.multi_unfairness - b.multi_unfairness).abs() < 1e-12);
        prop_assert!((a.reward - b.reward).abs() <= 1e-12 * a.reward.max(1.0));
    }

    #[test]
    fn breakdown_closes(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ds = common::random_dataset(&mut rng, 120, 4, 3);
        let a = common::noisy_predictions(&mut rng, &ds, 0.5);
        let b = common::noisy_predictions(&mut rng, &ds, 0.5);
        let bd = metrics::disagreement_breakdown(&a, &b, &ds.labels(), &ds.all_indices()).unwrap();
        let sum = bd.both_wrong + bd.only_a + bd.only_b + bd.both_right;
        prop_assert!((sum - 1.0).abs() < 1e-12);
        for f in [bd.both_wrong, bd.only_a, bd.only_b, bd.both_right] {
            prop_assert!((0.0..=1.0).contains(&f));
        }
    }

    #[test]
    fn reward_monotone(acc in 0.01f64..1.0, u0 in 0.0f64..2.0, u1 in 0.0f64..2.0, du in 0.001f64..1.0) {
        let base = metrics::reward(acc, &index_map(&[("a", u0), ("b", u1)]), 1e-3).unwrap();
        let worse = metrics::reward(acc, &index_map(&[("a", u0 + du), ("b", u1)]), 1e-3).unwrap();
        let better_acc = metrics::reward((acc + 0.01).min(1.0), &index_map(&[("a", u0), ("b", u1)]), 1e-3).unwrap();
        prop_assert!(worse <= base);
        prop_assert!(better_acc >= base);
    }
}
