use std::cmp::Ordering;

use lossforge_core::fitness::{compare, range_check, LandscapeTargetOracle};
use lossforge_core::gp::{initialize, run, step, GpConfig};
use lossforge_core::losses::builtin;

fn surrogate() -> LandscapeTargetOracle {
    LandscapeTargetOracle::new(builtin("ngl").unwrap(), 21).unwrap()
}

#[test]
fn invariants_hold_every_generation() {
    let oracle = surrogate();
    for seed in 0..5 {
        let config = GpConfig { population_size: 12, generations: 15, seed, ..Default::default() };
        let mut search = initialize(&config, &oracle).unwrap();
        let mut best = search.best().fitness;
        for _ in 0..config.generations {
            step(&mut search, &config, &oracle).unwrap();
            assert_eq!(search.population.len(), config.population_size);
            assert!(search.archive.len() <= config.archive_capacity());
            let now = search.best().fitness;
            assert_ne!(compare(&now, &best), Ordering::Greater, "seed {seed}");
            best = now;
            for ind in &search.population {
                assert!(ind.expr.validate(&config.constraints).is_valid(), "{}", ind.expr);
                assert!(range_check(&ind.expr, oracle.range_spec()).passed(), "{}", ind.expr);
            }
        }
        let records = &search.history.records;
        for w in records.windows(2) {
            assert_ne!(compare(&w[1].best_fitness, &w[0].best_fitness), Ordering::Greater);
        }
    }
}

#[test]
fn identical_seeds_replay() {
    let oracle = surrogate();
    let config = GpConfig { population_size: 8, generations: 6, seed: 77, ..Default::default() };
    let (a, ha) = run(&config, &oracle).unwrap();
    let (b, hb) = run(&config, &oracle).unwrap();
    assert_eq!(ha.to_jsonl(), hb.to_jsonl());
    assert_eq!(a.expr, b.expr);
    let gen0 = |s: &lossforge_core::gp::Search| -> Vec<String> {
        s.population.iter().map(|i| i.expr.to_string()).collect()
    };
    assert_eq!(gen0(&initialize(&config, &oracle).unwrap()), gen0(&initialize(&config, &oracle).unwrap()));
}

#[test]
fn twenty_steps_give_twenty_one_records() {
    let oracle = surrogate();
    let config = GpConfig { population_size: 6, generations: 20, seed: 5, ..Default::default() };
    let (_, history) = run(&config, &oracle).unwrap();
    assert_eq!(history.len(), 21);
    assert_eq!(history.to_jsonl().lines().count(), 21);
}

#[test]
fn initial_population_is_scored() {
    let oracle = surrogate();
    let config = GpConfig { seed: 1, ..Default::default() };
    let search = initialize(&config, &oracle).unwrap();
    assert_eq!(search.population.len(), 16);
    assert!(search.population.iter().all(|i| matches!(
        i.fitness,
        lossforge_core::FitnessValue::Scalar(v) if v.is_finite()
    )));
}
