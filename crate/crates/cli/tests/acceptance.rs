//! End-to-end acceptance criteria, run sequentially in a plain `main` so
//! timings are not distorted by other tests. Prints one PASS/FAIL line per
//! criterion and exits non-zero if any fails.

use std::cmp::Ordering;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use lossforge_core::analysis::{analyze, sample_landscape, Shape, DEFAULT_GRID_STEP};
use lossforge_core::data::{split, synth_blobs, DEFAULT_FRACTIONS};
use lossforge_core::expr::gradcheck::{check_point, PointCheck, FD_STEP};
use lossforge_core::expr::{random_tree, EvalPoint, LossExpr, TreeConstraints};
use lossforge_core::fitness::{compare, range_check, FitnessValue, LandscapeTargetOracle, RangeCheckSpec, Violation};
use lossforge_core::gp::{initialize, step, GpConfig};
use lossforge_core::losses::{builtin, f1_tree, f2_tree, f3_tree, f4_tree, ngl_tree, LossFn};
use lossforge_core::nn::{train_with, ClassifierModel, TrainConfig, DEFAULT_HIDDEN};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const BIN: &str = env!("CARGO_BIN_EXE_lossforge");

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit_secs: f64) -> Result<(), String> {
    ensure(elapsed.as_secs_f64() < limit_secs, || {
        format!("took {:.2}s, limit {limit_secs}s", elapsed.as_secs_f64())
    })
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn landscape_minima() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut notes = vec![];
    for (name, target) in [("ngl", 0.57), ("f4", 0.61)] {
        let start = Instant::now();
        let status = Command::new(BIN)
            .args(["landscape", name, "--y-real", "1", "--out"])
            .arg(dir.path())
            .output()
            .unwrap();
        let elapsed = start.elapsed();
        ensure(status.status.success(), || format!("{name}: exit {:?}", status.status))?;
        let argmin = json(&dir.path().join(format!("{name}_y1.json")))["argmin"].as_f64().unwrap();
        ensure((argmin - target).abs() <= 0.02, || format!("{name} argmin {argmin}, expected {target} ± 0.02"))?;
        within(elapsed, 1.0)?;
        notes.push(format!("{name} argmin {argmin:.4}"));
    }
    Ok(notes.join(", "))
}

fn monotonicity_classes() -> Outcome {
    let start = Instant::now();
    let report = |name: &str| {
        let curve = sample_landscape(builtin(name).unwrap(), 1, DEFAULT_GRID_STEP).unwrap();
        analyze(&curve).unwrap()
    };
    for name in ["ce", "f3"] {
        let r = report(name);
        ensure(r.shape == Shape::MonotoneDecreasing, || format!("{name}: {:?}", r.shape))?;
    }
    for name in ["ngl", "f1", "f4"] {
        let r = report(name);
        ensure(r.shape == Shape::InteriorMinimum && r.increase_near_1, || format!("{name}: {r:?}"))?;
    }
    let f2 = report("f2");
    ensure(f2.shape == Shape::Other, || format!("f2: {:?}", f2.shape))?;
    within(start.elapsed(), 5.0)?;
    Ok("ce, f3 decreasing; ngl, f1, f4 interior minimum; f2 other".into())
}

fn random_point(rng: &mut ChaCha8Rng) -> EvalPoint {
    let n = rng.random_range(2..=10);
    let w: Vec<f64> = (0..n).map(|_| -rng.random::<f64>().max(1e-300).ln()).collect();
    let total: f64 = w.iter().sum();
    let class = rng.random_range(0..n);
    EvalPoint::with_class(w.iter().map(|v| v / total).collect(), class).unwrap()
}

fn dual_implementation() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut worst: f64 = 0.0;
    for name in ["f1", "f2", "f3", "f4", "f5"] {
        let native = builtin(name).unwrap();
        let tree = LossFn::from_expr(name, native.tree().unwrap().clone());
        for _ in 0..10_000 {
            let p = random_point(&mut rng);
            let diff = (native.value(&p).unwrap() - tree.value(&p).unwrap()).abs();
            worst = worst.max(diff);
            ensure(diff <= 1e-9, || format!("{name} at {p:?}: difference {diff:e}"))?;
        }
    }
    within(start.elapsed(), 5.0)?;
    Ok(format!("max abs difference {worst:.1e}"))
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn gradients() -> Outcome {
    const TOLERANCE: f64 = 1e-5;
    let start = Instant::now();
    let (mut agreed, mut skipped) = (0usize, 0usize);
    let mut check = |label: &str, e: &LossExpr, d: &LossExpr, p: f64, r: f64| -> Result<(), String> {
        match check_point(e, d, p, r, FD_STEP, TOLERANCE) {
            PointCheck::Agrees { .. } => agreed += 1,
            PointCheck::Skipped(_) => skipped += 1,
            bad => return Err(format!("{label} at p {p}, r {r}: {bad:?}")),
        }
        Ok(())
    };
    for (name, tree) in [("ngl", ngl_tree()), ("f1", f1_tree()), ("f2", f2_tree()), ("f3", f3_tree()), ("f4", f4_tree())] {
        let d = tree.differentiate();
        for k in 1..1000 {
            for r in [0.0, 1.0] {
                check(name, &tree, &d, k as f64 / 1000.0, r)?;
            }
        }
    }
    let constraints = TreeConstraints::default();
    for seed in 0..1000 {
        let e = random_tree(&constraints, seed).unwrap();
        let d = e.differentiate();
        for k in 0..20 {
            for r in [0.0, 1.0] {
                check(&e.to_string(), &e, &d, (k as f64 + 0.5) / 20.0, r)?;
            }
        }
    }
    ensure(agreed >= 9 * (agreed + skipped) / 10, || format!("only {agreed} of {} points checkable", agreed + skipped))?;

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for name in ["ce", "ngl", "focal", "f4", "dice"] {
        let loss = builtin(name).unwrap();
        for trial in 0..10 {
            let mut model = ClassifierModel::new(3, &[], 2, trial);
            ensure(model.param_count() == 8, || format!("{} parameters", model.param_count()))?;
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut y = vec![0.0; 2];
            y[rng.random_range(0..2)] = 1.0;
            let analytic = model.loss_and_gradient(&x, &y, loss).unwrap().1.flatten();
            let params = model.params();
            let h = 1e-6;
            let numeric: Vec<f64> = (0..params.len())
                .map(|k| {
                    let mut at = |delta: f64| {
                        let mut shifted = params.clone();
                        shifted[k] += delta;
                        model.set_params(&shifted);
                        model.loss_and_gradient(&x, &y, loss).unwrap().0
                    };
                    (at(h) - at(-h)) / (2.0 * h)
                })
                .collect();
            let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, b)| a - b).collect();
            let rel = norm(&diff) / norm(&analytic).max(norm(&numeric)).max(1e-12);
            worst = worst.max(rel);
            ensure(rel <= 1e-4, || format!("micro-model {name} trial {trial}: relative error {rel:e}"))?;
        }
    }
    within(start.elapsed(), 30.0)?;
    Ok(format!("{agreed} points agree, {skipped} skipped at kinks or ill-conditioned points; micro-model worst {worst:.1e}"))
}

fn gp_invariants() -> Outcome {
    let start = Instant::now();
    let oracle = LandscapeTargetOracle::new(builtin("ngl").unwrap(), 21).unwrap();
    let mut checked = 0usize;
    for seed in 0..50 {
        let config = GpConfig { population_size: 16, generations: 10, seed, ..Default::default() };
        let mut search = initialize(&config, &oracle).map_err(|e| format!("seed {seed}: {e}"))?;
        let mut best = search.best().fitness;
        for _ in 0..config.generations {
            step(&mut search, &config, &oracle).map_err(|e| format!("seed {seed}: {e}"))?;
            ensure(search.population.len() == config.population_size, || format!("seed {seed}: population size"))?;
            ensure(search.archive.len() <= config.archive_capacity(), || format!("seed {seed}: archive overflow"))?;
            let now = search.best().fitness;
            ensure(compare(&now, &best) != Ordering::Greater, || format!("seed {seed}: best worsened"))?;
            best = now;
            for ind in &search.population {
                ensure(ind.expr.validate(&config.constraints).is_valid(), || format!("seed {seed}: invalid {}", ind.expr))?;
                ensure(range_check(&ind.expr, oracle.range_spec()).passed(), || {
                    format!("seed {seed}: out of range {}", ind.expr)
                })?;
                checked += 1;
            }
        }
    }
    within(start.elapsed(), 120.0)?;
    Ok(format!("50 runs, {checked} members checked"))
}

fn brute_key(v: &FitnessValue) -> (usize, f64) {
    match *v {
        FitnessValue::VsBaseline { wins: 0, mean_improvement_pct } => (0, -mean_improvement_pct),
        FitnessValue::VsBaseline { wins, mean_improvement_pct } => (wins, mean_improvement_pct),
        FitnessValue::Scalar(e) => (0, -e),
    }
}

fn fitness_ordering() -> Outcome {
    let start = Instant::now();
    let values: Vec<FitnessValue> = (0..=3)
        .flat_map(|wins| (0..=40).map(move |k| FitnessValue::VsBaseline { wins, mean_improvement_pct: k as f64 * 0.5 }))
        .collect();
    let mut disagreements = 0;
    for a in &values {
        for b in &values {
            let (ka, kb) = (brute_key(a), brute_key(b));
            let expected = kb.0.cmp(&ka.0).then(kb.1.partial_cmp(&ka.1).unwrap());
            if compare(a, b) != expected {
                disagreements += 1;
            }
        }
    }
    ensure(disagreements == 0, || format!("{disagreements} disagreements"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut draw = || FitnessValue::VsBaseline {
        wins: rng.random_range(0..4),
        mean_improvement_pct: f64::from(rng.random_range(0..=40u32)) * 0.5,
    };
    for _ in 0..10_000 {
        let (a, b, c) = (draw(), draw(), draw());
        if compare(&a, &b) != Ordering::Greater && compare(&b, &c) != Ordering::Greater {
            ensure(compare(&a, &c) != Ordering::Greater, || format!("intransitive {a:?} {b:?} {c:?}"))?;
        }
    }
    within(start.elapsed(), 10.0)?;
    Ok(format!("{} pairs agree, 10000 triples transitive", values.len() * values.len()))
}

fn range_fidelity() -> Outcome {
    let start = Instant::now();
    let spec = RangeCheckSpec::default();
    for (name, tree) in [("ngl", ngl_tree()), ("f1", f1_tree()), ("f2", f2_tree()), ("f3", f3_tree()), ("f4", f4_tree())] {
        let r = range_check(&tree, &spec);
        ensure(r.passed(), || format!("{name} rejected: {:?}", r.first_violation))?;
    }
    let tiny = LossExpr::parse("(add (mul (mul 0 y_pred) y_real) (mul 0.000001 (add 1 (mul 0 y_real))))").unwrap();
    let r = range_check(&tiny, &spec);
    let v = r.first_violation.ok_or("constant 1e-6 accepted")?;
    ensure(v.violation == Violation::BelowLower, || format!("constant 1e-6: {v}"))?;
    let boom = LossExpr::parse("(exp (exp (exp (mul 10 (add y_pred y_real)))))").unwrap();
    let v = range_check(&boom, &spec).first_violation.ok_or("nested exp accepted")?;
    ensure(v.violation == Violation::NonFiniteValue, || format!("nested exp: {v}"))?;
    within(start.elapsed(), 1.0)?;
    Ok("catalog passes; 1e-6 below range; nested exp overflows".into())
}

const SEARCH_CONFIG: &str = r#"
seed = 2024
[gp]
population_size = 16
generations = 20
[trainer]
epochs = 20
[[datasets]]
kind = "blobs"
classes = 3
per_class = 200
dims = 2
spread = 3.0
seed = 42
"#;

fn desk_search() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("search.toml");
    std::fs::write(&config, SEARCH_CONFIG).unwrap();
    let start = Instant::now();
    let mut outputs = vec![];
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let status = Command::new(BIN)
            .args(["search", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(&out)
            .output()
            .unwrap();
        ensure(status.status.success(), || {
            format!("exit {:?}: {}", status.status, String::from_utf8_lossy(&status.stderr))
        })?;
        outputs.push(out);
    }
    let elapsed = start.elapsed();
    for file in ["history.jsonl", "best.loss", "report.json", "config.toml"] {
        let a = std::fs::read(outputs[0].join(file)).unwrap();
        let b = std::fs::read(outputs[1].join(file)).unwrap();
        ensure(a == b, || format!("{file} differs between identical runs"))?;
    }
    let lines = std::fs::read_to_string(outputs[0].join("history.jsonl")).unwrap().lines().count();
    ensure(lines == 21, || format!("{lines} history records"))?;
    let report = json(&outputs[0].join("report.json"));
    let ce = report["ce_baseline_val_error"].as_f64().unwrap();
    let best = report["best_val_error"].as_f64().unwrap();
    ensure(best <= ce + 0.02, || format!("best val error {best} > CE {ce} + 0.02"))?;
    within(elapsed / 2, 1800.0)?;
    Ok(format!(
        "best {} val error {best:.4} vs CE {ce:.4}; byte-identical replay; {:.1}s per run",
        report["best"]["formula"].as_str().unwrap(),
        elapsed.as_secs_f64() / 2.0
    ))
}

fn ngl_trainability() -> Outcome {
    let data = synth_blobs(2, 300, 2, 3.0, 5).map_err(|e| e.to_string())?;
    let parts = split(&data, DEFAULT_FRACTIONS, 5).map_err(|e| e.to_string())?;
    let config = TrainConfig { epochs: 200, seed: 5, ..Default::default() };
    let trajectory = || {
        let mut model = ClassifierModel::new(2, &DEFAULT_HIDDEN, 2, 5);
        let mut snapshots = vec![];
        let report = train_with(&mut model, &data, &parts, builtin("ngl").unwrap(), &config, |_, m| {
            snapshots.push(m.params())
        })
        .unwrap();
        (report, snapshots)
    };
    let (ra, ta) = trajectory();
    let (rb, tb) = trajectory();
    let accuracy = 1.0 - ra.test_error;
    ensure(!ra.diverged && accuracy >= 0.95, || format!("test accuracy {accuracy}"))?;
    ensure(ta == tb && ra.val_error == rb.val_error, || "weight trajectories differ".into())?;
    Ok(format!("test accuracy {accuracy:.4}, {} identical epoch snapshots", ta.len()))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("1 landscape minima", landscape_minima),
        ("2 monotonicity classes", monotonicity_classes),
        ("3 dual-implementation equivalence", dual_implementation),
        ("4 gradient correctness", gradients),
        ("5 search invariants", gp_invariants),
        ("6 fitness ordering", fitness_ordering),
        ("7 range-check fidelity", range_fidelity),
        ("8 desk-scale search", desk_search),
        ("9 NGL trainability", ngl_trainability),
    ];
    let mut failed = vec![];
    for (name, criterion) in criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(criterion))
            .unwrap_or_else(|e| Err(e.downcast_ref::<String>().cloned().unwrap_or_else(|| "panicked".into())));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS criterion {name} ({secs:.2}s): {detail}"),
            Err(why) => {
                println!("FAIL criterion {name} ({secs:.2}s): {why}");
                failed.push(name);
            }
        }
    }
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", criteria.len());
    } else {
        println!("acceptance: failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
