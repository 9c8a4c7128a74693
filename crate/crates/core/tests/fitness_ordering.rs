use std::cmp::Ordering;

use lossforge_core::fitness::{compare, try_compare, vs_baseline, FitnessValue};
use proptest::prelude::*;

fn vs(wins: usize, pct: f64) -> FitnessValue {
    FitnessValue::VsBaseline { wins, mean_improvement_pct: pct }
}

/// Independent ranking key: larger is better.
fn key(v: &FitnessValue) -> (usize, f64) {
    match *v {
        FitnessValue::VsBaseline { wins: 0, mean_improvement_pct } => (0, -mean_improvement_pct),
        FitnessValue::VsBaseline { wins, mean_improvement_pct } => (wins, mean_improvement_pct),
        FitnessValue::Scalar(e) => (0, -e),
    }
}

fn brute(a: &FitnessValue, b: &FitnessValue) -> Ordering {
    let (ka, kb) = (key(a), key(b));
    kb.0.cmp(&ka.0).then(kb.1.partial_cmp(&ka.1).unwrap())
}

#[test]
fn exhaustive_small_grid_agrees() {
    let values: Vec<FitnessValue> = (0..=3)
        .flat_map(|w| (0..=40).map(move |k| vs(w, k as f64 * 0.5)))
        .collect();
    let mut disagreements = 0;
    for a in &values {
        for b in &values {
            if compare(a, b) != brute(a, b) {
                disagreements += 1;
            }
        }
    }
    assert_eq!(disagreements, 0);
}

#[test]
fn mixed_shapes_are_rejected() {
    assert!(try_compare(&FitnessValue::Scalar(0.1), &vs(1, 1.0)).is_err());
}

#[test]
fn ties_are_not_wins() {
    match vs_baseline(&[0.3, 0.2], &[0.3, 0.25]) {
        FitnessValue::VsBaseline { wins, mean_improvement_pct } => {
            assert_eq!(wins, 1);
            assert!((mean_improvement_pct - 20.0).abs() < 1e-9);
        }
        other => panic!("{other:?}"),
    }
}

fn fitness() -> impl Strategy<Value = FitnessValue> {
    (0usize..4, 0u32..=40).prop_map(|(w, k)| vs(w, f64::from(k) * 0.5))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn transitive(a in fitness(), b in fitness(), c in fitness()) {
        if compare(&a, &b) != Ordering::Greater && compare(&b, &c) != Ordering::Greater {
            prop_assert_ne!(compare(&a, &c), Ordering::Greater);
        }
        prop_assert_eq!(compare(&a, &a), Ordering::Equal);
        prop_assert_eq!(compare(&a, &b), compare(&b, &a).reverse());
    }

    #[test]
    fn scalar_is_numeric(x in 0.0f64..=1.0, y in 0.0f64..=1.0) {
        let o = compare(&FitnessValue::Scalar(x), &FitnessValue::Scalar(y));
        prop_assert_eq!(o, x.partial_cmp(&y).unwrap());
    }
}
