use std::collections::BTreeSet;

use lossforge_core::data::{split, synth_blobs};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn splits_partition_and_stratify(
        classes in 2usize..6,
        per_class in 7usize..80,
        seed in any::<u64>(),
        val in 0.1f64..0.3,
        test in 0.1f64..0.3,
    ) {
        let d = synth_blobs(classes, per_class, 3, 2.0, seed).unwrap();
        let fractions = (1.0 - val - test, val, test);
        let s = split(&d, fractions, seed).unwrap();
        let mut seen = BTreeSet::new();
        for part in [&s.train, &s.val, &s.test] {
            prop_assert!(!part.is_empty());
            for &i in part.iter() {
                prop_assert!(seen.insert(i), "index {} twice", i);
            }
        }
        prop_assert_eq!(seen.len(), d.len());
        for (part, f) in [(&s.train, fractions.0), (&s.val, fractions.1), (&s.test, fractions.2)] {
            let mut counts = vec![0usize; classes];
            for &i in part.iter() {
                counts[d.labels()[i]] += 1;
            }
            for &c in &counts {
                prop_assert!((c as f64 - per_class as f64 * f).abs() <= 1.0 + 1e-9);
            }
        }
        prop_assert_eq!(s.clone(), split(&d, fractions, seed).unwrap());
    }

    #[test]
    fn blobs_are_finite_and_labelled(classes in 2usize..8, dims in 1usize..6, seed in any::<u64>()) {
        let d = synth_blobs(classes, 10, dims, 3.0, seed).unwrap();
        prop_assert!(d.features().iter().all(|v| v.is_finite()));
        prop_assert_eq!(d.class_counts(), vec![10; classes]);
    }
}
