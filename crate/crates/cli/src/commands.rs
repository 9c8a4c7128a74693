//! Subcommand implementations.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::Context;
use lossforge_core::analysis::{analyze, sample_landscape};
use lossforge_core::fitness::{improvement_pct, ClassifierOracle, ClassifierTrainer, FitnessValue};
use lossforge_core::gp::{run_with, GenerationRecord};
use lossforge_core::losses::{builtin, BUILTIN_NAMES};
use lossforge_core::{LossExpr, LossFn};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{LoadedConfig, Overrides};
use crate::{CliError, EvalArgs, LandscapeArgs, RunArgs, SearchArgs};

fn runtime(e: impl Into<anyhow::Error>) -> CliError {
    CliError::Runtime(e.into())
}

fn load(run: &RunArgs) -> Result<LoadedConfig, CliError> {
    LoadedConfig::load(&run.config, &Overrides { seed: run.seed, take: run.take })
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display())).map_err(runtime)
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display())).map_err(runtime)
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("plain data serializes") + "\n"
}

/// Resolve a catalog name, a formula file, or an inline formula.
pub fn resolve_loss(spec: &str) -> Result<LossFn, CliError> {
    if BUILTIN_NAMES.contains(&spec) {
        return Ok(builtin(spec).map_err(runtime)?.clone());
    }
    let path = Path::new(spec);
    if path.is_file() {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read loss file {spec}: {e}")))?;
        let formula: String = text
            .lines()
            .filter(|l| !l.trim_start().starts_with('#'))
            .collect::<Vec<_>>()
            .join(" ");
        let expr = LossExpr::parse(&formula)
            .map_err(|e| CliError::Usage(format!("loss file {spec}: {e}")))?;
        let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("formula");
        return Ok(LossFn::from_expr(name, expr));
    }
    if spec.trim_start().starts_with('(') {
        let expr = LossExpr::parse(spec).map_err(|e| CliError::Usage(format!("formula {spec:?}: {e}")))?;
        return Ok(LossFn::from_expr("formula", expr));
    }
    Err(CliError::Usage(format!(
        "unknown loss {spec:?}: expected one of {} or a formula file",
        BUILTIN_NAMES.join("|")
    )))
}

#[derive(Clone, Debug, Serialize)]
pub struct ErrorStats {
    pub val_error_mean: f64,
    pub val_error_std: f64,
    pub test_error_mean: f64,
    pub test_error_std: f64,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var.sqrt())
}

/// Train `runs` models on one dataset and summarize their errors.
fn stats(trainer: &ClassifierTrainer, loss: &LossFn, dataset: usize, runs: usize) -> Result<ErrorStats, CliError> {
    let results: Vec<(f64, f64)> = (0..runs)
        .into_par_iter()
        .map(|r| trainer.run(loss, dataset, r))
        .collect::<Result<_, _>>()
        .map_err(runtime)?;
    let (val, test): (Vec<f64>, Vec<f64>) = results.into_iter().unzip();
    let (val_error_mean, val_error_std) = mean_std(&val);
    let (test_error_mean, test_error_std) = mean_std(&test);
    Ok(ErrorStats { val_error_mean, val_error_std, test_error_mean, test_error_std })
}

#[derive(Debug, Serialize)]
struct SearchDatasetReport {
    name: String,
    ce: ErrorStats,
    best: ErrorStats,
}

#[derive(Debug, Serialize)]
struct BestReport {
    id: u64,
    formula: String,
    size: usize,
    fitness: FitnessValue,
}

#[derive(Debug, Serialize)]
struct SearchReport {
    seed: u64,
    population_size: usize,
    generations: usize,
    best: BestReport,
    /// Mean over datasets of the CE baseline validation error.
    ce_baseline_val_error: f64,
    /// Mean over datasets of the best loss's validation error.
    best_val_error: f64,
    datasets: Vec<SearchDatasetReport>,
}

pub fn search(args: &SearchArgs) -> Result<(), CliError> {
    let loaded = load(&args.run)?;
    let config = &loaded.config;
    let out = loaded.output_dir(args.run.out.as_deref());
    create_dir(&out)?;
    write_file(&out.join("config.toml"), &loaded.text)?;
    let datasets = loaded.load_datasets()?;
    let names: Vec<String> = datasets.iter().map(|d| d.name.clone()).collect();
    let spec = config.experiment_spec();
    let runs = spec.runs_per_dataset;
    let oracle = ClassifierOracle::new(datasets, spec).map_err(runtime)?;

    eprintln!("computing CE baseline on {} dataset(s)", names.len());
    let baseline = oracle.baseline_errors().map_err(runtime)?.to_vec();

    let history_path = out.join("history.jsonl");
    let file = File::create(&history_path)
        .with_context(|| format!("creating {}", history_path.display()))
        .map_err(runtime)?;
    let mut history = BufWriter::new(file);
    let mut write_error = None;
    let on_generation = |record: &GenerationRecord| {
        eprintln!(
            "generation {:>4}: best {} | {} | rejected {}",
            record.generation, record.best_fitness, record.best_formula, record.rejections
        );
        if write_error.is_none() {
            let line = serde_json::to_string(record).expect("records serialize");
            if let Err(e) = writeln!(history, "{line}").and_then(|_| history.flush()) {
                write_error = Some(e);
            }
        }
    };
    let (best, _) = run_with(&config.gp, &oracle, on_generation).map_err(runtime)?;
    if let Some(e) = write_error {
        return Err(runtime(anyhow::Error::new(e).context(format!("writing {}", history_path.display()))));
    }
    write_file(&out.join("best.loss"), &format!("{}\n", best.expr))?;

    let best_loss = LossFn::from_expr("best", best.expr.clone());
    let ce = builtin("ce").map_err(runtime)?;
    let trainer = oracle.trainer();
    let reports = (0..names.len())
        .map(|d| {
            Ok(SearchDatasetReport {
                name: names[d].clone(),
                ce: stats(trainer, ce, d, runs)?,
                best: stats(trainer, &best_loss, d, runs)?,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let mean = |f: &dyn Fn(&SearchDatasetReport) -> f64| reports.iter().map(f).sum::<f64>() / reports.len() as f64;
    let report = SearchReport {
        seed: config.seed,
        population_size: config.gp.population_size,
        generations: config.gp.generations,
        best: BestReport {
            id: best.id,
            formula: best.expr.to_string(),
            size: best.expr.size(),
            fitness: best.fitness,
        },
        ce_baseline_val_error: baseline.iter().sum::<f64>() / baseline.len() as f64,
        best_val_error: mean(&|r| r.best.val_error_mean),
        datasets: reports,
    };
    write_file(&out.join("report.json"), &to_json(&report))?;
    eprintln!(
        "best {} (val error {:.4}, CE {:.4}) written to {}",
        report.best.formula,
        report.best_val_error,
        report.ce_baseline_val_error,
        out.display()
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct EvalRow {
    dataset: String,
    runs: usize,
    #[serde(flatten)]
    errors: ErrorStats,
    ce_test_error_mean: f64,
    /// Positive when the loss beats CE on mean test error.
    delta_vs_ce_pct: f64,
}

#[derive(Debug, Serialize)]
struct EvalReport {
    loss: String,
    formula: Option<String>,
    seed: u64,
    rows: Vec<EvalRow>,
}

pub fn eval(args: &EvalArgs) -> Result<(), CliError> {
    let loss = resolve_loss(&args.loss)?;
    let loaded = load(&args.run)?;
    let out = loaded.output_dir(args.run.out.as_deref());
    let datasets = loaded.load_datasets()?;
    let spec = loaded.config.experiment_spec();
    let runs = spec.runs_per_dataset;
    let trainer = ClassifierTrainer::new(datasets, spec).map_err(runtime)?;
    let ce = builtin("ce").map_err(runtime)?;

    let mut rows = Vec::new();
    for (d, data) in trainer.datasets().iter().enumerate() {
        eprintln!("training {} and ce on {} ({runs} run(s))", loss.name(), data.name);
        let (errors, base) = rayon::join(|| stats(&trainer, &loss, d, runs), || stats(&trainer, ce, d, runs));
        let (errors, base) = (errors?, base?);
        rows.push(EvalRow {
            dataset: data.name.clone(),
            runs,
            delta_vs_ce_pct: improvement_pct(base.test_error_mean, errors.test_error_mean),
            ce_test_error_mean: base.test_error_mean,
            errors,
        });
    }
    let report = EvalReport {
        loss: loss.name().to_string(),
        formula: loss.tree().map(|t| t.to_string()),
        seed: loaded.config.seed,
        rows,
    };
    let table = eval_table(&report);
    create_dir(&out)?;
    let stem = format!("eval-{}", report.loss);
    write_file(&out.join(format!("{stem}.json")), &to_json(&report))?;
    write_file(&out.join(format!("{stem}.txt")), &table)?;
    write_file(&out.join(format!("{stem}.config.toml")), &loaded.text)?;
    print!("{table}");
    Ok(())
}

fn eval_table(report: &EvalReport) -> String {
    let header = ["dataset", "loss", "runs", "test err", "std", "val err", "ce test err", "delta vs ce %"];
    let rows: Vec<[String; 8]> = report
        .rows
        .iter()
        .map(|r| {
            [
                r.dataset.clone(),
                report.loss.clone(),
                r.runs.to_string(),
                format!("{:.4}", r.errors.test_error_mean),
                format!("{:.4}", r.errors.test_error_std),
                format!("{:.4}", r.errors.val_error_mean),
                format!("{:.4}", r.ce_test_error_mean),
                format!("{:+.2}", r.delta_vs_ce_pct),
            ]
        })
        .collect();
    let widths: Vec<usize> = (0..header.len())
        .map(|c| rows.iter().map(|r| r[c].len()).chain([header[c].len()]).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    let mut line = |cells: Vec<&str>| {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, &w))| if i < 2 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(header.to_vec());
    line(widths.iter().map(|&w| &"--------------------------------"[..w.min(32)]).collect());
    for r in &rows {
        line(r.iter().map(String::as_str).collect());
    }
    out
}

#[derive(Debug, Serialize)]
struct LandscapeOutput {
    loss: String,
    formula: Option<String>,
    grid_step: f64,
    #[serde(flatten)]
    report: lossforge_core::LandscapeReport,
}

pub fn landscape(args: &LandscapeArgs) -> Result<(), CliError> {
    let loss = resolve_loss(&args.loss)?;
    let curve = sample_landscape(&loss, args.y_real, args.step).map_err(|e| CliError::Usage(e.to_string()))?;
    let report = analyze(&curve).map_err(runtime)?;
    create_dir(&args.out)?;
    let stem = format!("{}_y{}", loss.name(), args.y_real);
    write_file(&args.out.join(format!("{stem}.csv")), &curve.to_csv())?;
    let output = LandscapeOutput {
        loss: loss.name().to_string(),
        formula: loss.tree().map(|t| t.to_string()),
        grid_step: args.step,
        report,
    };
    write_file(&args.out.join(format!("{stem}.json")), &to_json(&output))?;
    let r = &output.report;
    println!(
        "{} y_real={}: argmin {:.4}, min {:.6}, shape {}, increase near 1: {}",
        output.loss,
        args.y_real,
        r.argmin,
        r.min_value,
        serde_json::to_value(r.shape).expect("shape serializes").as_str().unwrap_or("?"),
        r.increase_near_1
    );
    Ok(())
}
