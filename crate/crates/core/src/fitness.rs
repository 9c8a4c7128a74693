//! Candidate scoring: range check, CE-relative fitness and its ordering.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::binary_reduce;
use crate::data::{split, Dataset, DEFAULT_FRACTIONS};
use crate::expr::LossExpr;
use crate::losses::{builtin, LossFn};
use crate::nn::{train, ClassifierModel, NnError, TrainConfig};
use crate::rng::derive_seed;

#[derive(Debug, Error)]
pub enum FitnessError {
    #[error("cannot compare {0} with {1}")]
    MixedShapes(&'static str, &'static str),
    #[error("invalid experiment: {0}")]
    InvalidSpec(String),
    #[error("training failed on dataset {dataset}, run {run}: {source}")]
    Trainer {
        dataset: usize,
        run: usize,
        #[source]
        source: NnError,
    },
    #[error("dataset {dataset}: {source}")]
    Data {
        dataset: usize,
        #[source]
        source: crate::data::DataError,
    },
    #[error("{0}")]
    Other(String),
}

/// Lower error, or wins and mean percentage against the CE baseline.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitnessValue {
    Scalar(f64),
    /// With zero wins the second field is the mean degradation.
    VsBaseline { wins: usize, mean_improvement_pct: f64 },
}

impl FitnessValue {
    fn shape(&self) -> &'static str {
        match self {
            FitnessValue::Scalar(_) => "scalar",
            FitnessValue::VsBaseline { .. } => "vs-baseline",
        }
    }
}

impl fmt::Display for FitnessValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FitnessValue::Scalar(e) => write!(f, "{e:.6}"),
            FitnessValue::VsBaseline { wins, mean_improvement_pct:
                pct } if *wins > 0 => write!(f, "{wins} wins, +{pct:.3}%"),
            FitnessValue::VsBaseline { mean_improvement_pct: pct, .. } => {
                write!(f, "0 wins, -{pct:.3}%")
            }
        }
    }
}

/// `Less` means `a` is the better value.
pub fn try_compare(a: &FitnessValue, b: &FitnessValue) -> Result<Ordering, FitnessError> {
    use FitnessValue::*;
    match (a, b) {
        (Scalar(x), Scalar(y)) => Ok(x.total_cmp(y)),
        (
            VsBaseline { wins: wa, mean_improvement_pct: pa },
            VsBaseline { wins: wb, mean_improvement_pct: pb },
        ) => Ok(match (wa, wb) {
            (0, 0) => pa.total_cmp(pb),
            _ if wa != wb => wb.cmp(wa),
            _ => pb.total_cmp(pa),
        }),
        _ => Err(FitnessError::MixedShapes(a.shape(), b.shape())),
    }
}

/// [`try_compare`] for values known to share a shape.
///
/// # Panics
/// On mixed shapes.
pub fn compare(a: &FitnessValue, b: &FitnessValue) -> Ordering {
    try_compare(a, b).unwrap_or_else(|e| panic!("{e}"))
}

/// Relative change `(ce − cand) / ce · 100`; absolute points when `ce = 0`.
pub fn improvement_pct(ce: f64, candidate: f64) -> f64 {
    if ce > 0.0 {
        (ce - candidate) / ce * 100.0
    } else {
        (ce - candidate) * 100.0
    }
}

/// Strict wins over the baseline and the mean improvement over winning
/// datasets, or the mean degradation over all datasets without a win.
pub fn vs_baseline(candidate: &[f64], baseline: &[f64]) -> FitnessValue {
    let pcts: Vec<(bool, f64)> = candidate
        .iter()
        .zip(baseline)
        .map(|(&c, &b)| (c < b, improvement_pct(b, c)))
        .collect();
    let wins = pcts.iter().filter(|(w, _)| *w).count();
    let mean = |v: Vec<f64>| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
    let mean_improvement_pct = if wins > 0 {
        mean(pcts.iter().filter(|(w, _)| *w).map(|(_, p)| *p).collect())
    } else {
        mean(pcts.iter().map(|(_, p)| -p).collect())
    };
    FitnessValue::VsBaseline { wins, mean_improvement_pct }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RangeCheckSpec {
    pub lower: f64,
    pub upper: f64,
    pub edge_points: usize,
    pub class_counts: Vec<usize>,
    /// Probes are pulled toward the uniform distribution by this weight.
    pub shrink: f64,
}

impl Default for RangeCheckSpec {
    fn default() -> Self {
        Self { lower: 1e-5, upper: 1e5, edge_points: 21, class_counts: vec![2, 3, 10], shrink: 1e-3 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Violation {
    NonFiniteValue,
    BelowLower,
    AboveUpper,
    NonFiniteGradient,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Violation::NonFiniteValue => "non-finite value (overflow)",
            Violation::BelowLower => "value below range",
            Violation::AboveUpper => "value above range",
            Violation::NonFiniteGradient => "non-finite gradient",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub y_pred: Vec<f64>,
    pub label: usize,
    pub value: f64,
    pub violation: Violation,
}

impl fmt::Display for Probe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} ({}) at N={}, label {}, y_pred {:?}",
            self.violation,
            self.value,
            self.y_pred.len(),
            self.label,
            self.y_pred
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RangeReport {
    pub probes: usize,
    pub first_violation: Option<Probe>,
}

impl RangeReport {
    pub fn passed(&self) -> bool {
        self.first_violation.is_none()
    }
}

/// Probe distributions for `n` classes: vertices, points along every edge
/// and interior points, each shrunk toward uniform.
pub fn probe_grid(n: usize, spec: &RangeCheckSpec) -> Vec<Vec<f64>> {
    let vertex = |k: usize| {
        let mut v = vec![0.0; n];
        v[k] = 1.0;
        v
    };
    let mut raw: Vec<Vec<f64>> = (0..n).map(vertex).collect();
    let steps = spec.edge_points.max(2) - 1;
    for i in 0..n {
        for j in i + 1..n {
            for s in 1..steps {
                let t = s as f64 / steps as f64;
                let mut v = vec![0.0; n];
                v[i] = 1.0 - t;
                v[j] = t;
                raw.push(v);
            }
        }
    }
    let centroid = vec![1.0 / n as f64; n];
    for k in 0..n {
        raw.push(centroid.iter().zip(vertex(k)).map(|(c, e)| 0.5 * (c + e)).collect());
    }
    raw.push(centroid);
    let k = spec.shrink;
    raw.into_iter()
        .map(|q| q.into_iter().map(|x| (1.0 - k) * x + k / n as f64).collect())
        .collect()
}

/// Per-class value and slope at `(p, 0)` and `(p, 1)`.
#[derive(Clone, Copy)]
struct Terms {
    a: f64,
    b: f64,
    gradients_finite: bool,
}

/// Every probe value must be finite with magnitude in `[lower, upper]` and
/// the symbolic gradient must be finite, for every one-hot label.
pub fn range_check(expr: &LossExpr, spec: &RangeCheckSpec) -> RangeReport {
    let derivative = expr.differentiate();
    let mut probes = 0;
    for &n in &spec.class_counts {
        let mut memo: HashMap<u64, Terms> = HashMap::new();
        for q in probe_grid(n, spec) {
            let terms: Vec<Terms> = q
                .iter()
                .map(|&p| {
                    *memo.entry(p.to_bits()).or_insert_with(|| Terms {
                        a: expr.eval_scalar(p, 0.0),
                        b: expr.eval_scalar(p, 1.0),
                        gradients_finite: derivative.eval_scalar(p, 0.0).is_finite()
                            && derivative.eval_scalar(p, 1.0).is_finite(),
                    })
                })
                .collect();
            let sum_a: f64 = terms.iter().map(|t| t.a).sum();
            let grads_ok = terms.iter().all(|t| t.gradients_finite);
            for label in 0..n {
                probes += 1;
                let value = if sum_a.is_finite() {
                    (sum_a - terms[label].a + terms[label].b) / n as f64
                } else {
                    let total: f64 = terms
                        .iter()
                        .enumerate()
                        .map(|(i, t)| if i == label { t.b } else { t.a })
                        .sum();
                    total / n as f64
                };
                let violation = if !value.is_finite() {
                    Some(Violation::NonFiniteValue)
                } else if value.abs() < spec.lower {
                    Some(Violation::BelowLower)
                } else if value.abs() > spec.upper {
                    Some(Violation::AboveUpper)
                } else if !grads_ok {
                    Some(Violation::NonFiniteGradient)
                } else {
                    None
                };
                if let Some(violation) = violation {
                    return RangeReport {
                        probes,
                        first_violation: Some(Probe { y_pred: q, label, value, violation }),
                    };
                }
            }
        }
    }
    RangeReport { probes, first_violation: None }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentMode {
    SingleDatasetSingleRun,
    SingleDatasetMultiRun,
    MultiDatasetVsBaseline,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub mode: ExperimentMode,
    #[serde(default = "one")]
    pub runs_per_dataset: usize,
    #[serde(default)]
    pub trainer: TrainConfig,
    /// Precomputed CE errors per dataset; computed on demand when absent.
    #[serde(default)]
    pub baseline_errors: Option<Vec<f64>>,
    #[serde(default = "default_fractions")]
    pub fractions: (f64, f64, f64),
    #[serde(default)]
    pub seed: u64,
}

fn one() -> usize {
    1
}

fn default_fractions() -> (f64, f64, f64) {
    DEFAULT_FRACTIONS
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            mode: ExperimentMode::SingleDatasetSingleRun,
            runs_per_dataset: 1,
            trainer: TrainConfig::default(),
            baseline_errors: None,
            fractions: DEFAULT_FRACTIONS,
            seed: 0,
        }
    }
}

impl ExperimentSpec {
    pub fn check(&self, datasets: usize) -> Result<(), FitnessError> {
        let bad = |m: String| Err(FitnessError::InvalidSpec(m));
        if self.runs_per_dataset == 0 {
            return bad("runs_per_dataset must be >= 1".into());
        }
        if datasets == 0 {
            return bad("at least one dataset is required".into());
        }
        match self.mode {
            ExperimentMode::SingleDatasetSingleRun if self.runs_per_dataset != 1 => {
                return bad("single-dataset-single-run needs runs_per_dataset = 1".into())
            }
            ExperimentMode::SingleDatasetSingleRun | ExperimentMode::SingleDatasetMultiRun
                if datasets != 1 =>
            {
                return bad(format!("{:?} needs exactly one dataset, got {datasets}", self.mode))
            }
            _ => {}
        }
        if let Some(b) = &self.baseline_errors {
            if b.len() != datasets {
                return bad(format!("{} baseline errors for {datasets} datasets", b.len()));
            }
        }
        self.trainer.check().map_err(|e| FitnessError::InvalidSpec(e.to_string()))
    }
}

/// Produces the held-out error of one training run.
pub trait Trainer: Sync {
    fn dataset_count(&self) -> usize;
    fn error(&self, loss: &LossFn, dataset: usize, run: usize) -> Result<f64, FitnessError>;
}

/// Run-averaged error per dataset.
pub fn dataset_errors(
    loss: &LossFn,
    spec: &ExperimentSpec,
    trainer: &dyn Trainer,
) -> Result<Vec<f64>, FitnessError> {
    (0..trainer.dataset_count())
        .map(|d| {
            let total = (0..spec.runs_per_dataset)
                .map(|run| trainer.error(loss, d, run))
                .sum::<Result<f64, _>>()?;
            Ok(total / spec.runs_per_dataset as f64)
        })
        .collect()
}

/// Score `loss` under `spec`. `baseline` is the CE error per dataset and is
/// only consulted in vs-baseline mode.
pub fn evaluate_fitness(
    loss: &LossFn,
    spec: &ExperimentSpec,
    trainer: &dyn Trainer,
    baseline: Option<&[f64]>,
) -> Result<FitnessValue, FitnessError> {
    spec.check(trainer.dataset_count())?;
    let errors = dataset_errors(loss, spec, trainer)?;
    match spec.mode {
        ExperimentMode::SingleDatasetSingleRun | ExperimentMode::SingleDatasetMultiRun => {
            Ok(FitnessValue::Scalar(errors[0]))
        }
        ExperimentMode::MultiDatasetVsBaseline => {
            let baseline = baseline.ok_or_else(|| {
                FitnessError::InvalidSpec("vs-baseline mode needs baseline errors".into())
            })?;
            Ok(vs_baseline(&errors, baseline))
        }
    }
}

/// Trains the default classifier; splits and seeds depend only on
/// `(spec.seed, dataset, run)`, so every loss sees identical data.
pub struct ClassifierTrainer {
    datasets: Vec<Dataset>,
    spec: ExperimentSpec,
}

impl ClassifierTrainer {
    pub fn new(datasets: Vec<Dataset>, spec: ExperimentSpec) -> Result<Self, FitnessError> {
        spec.check(datasets.len())?;
        Ok(Self { datasets, spec })
    }

    pub fn datasets(&self) -> &[Dataset] {
        &self.datasets
    }

    /// Validation and test error of one run.
    pub fn run(&self, loss: &LossFn, dataset: usize, run: usize) -> Result<(f64, f64), FitnessError> {
        let data = &self.datasets[dataset];
        let base = [dataset as u64, run as u64];
        let split_seed = derive_seed(self.spec.seed, &[base[0], base[1], 0]);
        let parts = split(data, self.spec.fractions, split_seed)
            .map_err(|source| FitnessError::Data { dataset, source })?;
        let trainer = &self.spec.trainer;
        let mut model = ClassifierModel::new(
            data.dims(),
            &trainer.hidden,
            data.class_count(),
            derive_seed(self.spec.seed, &[base[0], base[1], 1]),
        );
        let config = TrainConfig {
            seed: derive_seed(self.spec.seed ^ trainer.seed, &[base[0], base[1], 2]),
            ..trainer.clone()
        };
        let report = train(&mut model, data, &parts, loss, &config)
            .map_err(|source| FitnessError::Trainer { dataset, run, source })?;
        Ok((report.final_val_error, report.test_error))
    }
}

impl Trainer for ClassifierTrainer {
    fn dataset_count(&self) -> usize {
        self.datasets.len()
    }

    fn error(&self, loss: &LossFn, dataset: usize, run: usize) -> Result<f64, FitnessError> {
        Ok(self.run(loss, dataset, run)?.0)
    }
}

/// Outcome of scoring one candidate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Assessment {
    Accepted(FitnessValue),
    Rejected(String),
}

/// Anything the search loop can score candidates with.
pub trait FitnessOracle: Sync {
    fn assess(&self, expr: &LossExpr) -> Result<Assessment, FitnessError>;
}

impl<F> FitnessOracle for F
where
    F: Fn(&LossExpr) -> Result<Assessment, FitnessError> + Sync,
{
    fn assess(&self, expr: &LossExpr) -> Result<Assessment, FitnessError> {
        self(expr)
    }
}

/// Range check, then train and score against the cached CE baseline.
pub struct ClassifierOracle {
    trainer: ClassifierTrainer,
    spec: ExperimentSpec,
    range: RangeCheckSpec,
    baseline: OnceLock<Vec<f64>>,
}

impl ClassifierOracle {
    pub fn new(datasets: Vec<Dataset>, spec: ExperimentSpec) -> Result<Self, FitnessError> {
        let trainer = ClassifierTrainer::new(datasets, spec.clone())?;
        let baseline = OnceLock::new();
        if let Some(b) = &spec.baseline_errors {
            let _ = baseline.set(b.clone());
        }
        Ok(Self { trainer, spec, range: RangeCheckSpec::default(), baseline })
    }

    pub fn with_range(mut self, range: RangeCheckSpec) -> Self {
        self.range = range;
        self
    }

    pub fn trainer(&self) -> &ClassifierTrainer {
        &self.trainer
    }

    pub fn spec(&self) -> &ExperimentSpec {
        &self.spec
    }

    /// Run-averaged CE error per dataset under the candidates' seeds.
    pub fn baseline_errors(&self) -> Result<&[f64], FitnessError> {
        if let Some(b) = self.baseline.get() {
            return Ok(b);
        }
        let ce = builtin("ce").map_err(|e| FitnessError::Other(e.to_string()))?;
        let errors = dataset_errors(ce, &self.spec, &self.trainer)?;
        Ok(self.baseline.get_or_init(|| errors))
    }

    pub fn fitness_of(&self, loss: &LossFn) -> Result<FitnessValue, FitnessError> {
        let baseline = match self.spec.mode {
            ExperimentMode::MultiDatasetVsBaseline => Some(self.baseline_errors()?),
            _ => None,
        };
        evaluate_fitness(loss, &self.spec, &self.trainer, baseline)
    }
}

impl FitnessOracle for ClassifierOracle {
    fn assess(&self, expr: &LossExpr) -> Result<Assessment, FitnessError> {
        let report = range_check(expr, &self.range);
        if let Some(probe) = report.first_violation {
            return Ok(Assessment::Rejected(probe.to_string()));
        }
        let loss = LossFn::from_expr("candidate", expr.clone());
        self.fitness_of(&loss).map(Assessment::Accepted)
    }
}

/// Cheap surrogate: distance between a candidate's two-class landscape at
/// `y_real = 1` and a fixed target curve, mapped into `[0, 1)`.
pub struct LandscapeTargetOracle {
    grid: Vec<f64>,
    target: Vec<f64>,
    range: RangeCheckSpec,
}

impl LandscapeTargetOracle {
    pub fn new(target: &LossFn, points: usize) -> Result<Self, FitnessError> {
        let points = points.max(2);
        let grid: Vec<f64> = (0..points).map(|i| i as f64 / (points - 1) as f64).collect();
        let reduced = binary_reduce(target);
        let target = grid
            .iter()
            .map(|&p| reduced.value(p, 1))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| FitnessError::Other(e.to_string()))?;
        Ok(Self { grid, target, range: RangeCheckSpec::default() })
    }

    pub fn range_spec(&self) -> &RangeCheckSpec {
        &self.range
    }

    pub fn distance(&self, expr: &LossExpr) -> f64 {
        let loss = LossFn::from_expr("candidate", expr.clone());
        let reduced = binary_reduce(&loss);
        let sq: f64 = self
            .grid
            .iter()
            .zip(&self.target)
            .map(|(&p, &t)| match reduced.value(p, 1) {
                Ok(v) => (v - t) * (v - t),
                Err(_) => f64::INFINITY,
            })
            .sum();
        (sq / self.grid.len() as f64).sqrt()
    }
}

impl FitnessOracle for LandscapeTargetOracle {
    fn assess(&self, expr: &LossExpr) -> Result<Assessment, FitnessError> {
        let report = range_check(expr, &self.range);
        if let Some(probe) = report.first_violation {
            return Ok(Assessment::Rejected(probe.to_string()));
        }
        let d = self.distance(expr);
        if !d.is_finite() {
            return Ok(Assessment::Rejected(format!("non-finite landscape distance {d}")));
        }
        Ok(Assessment::Accepted(FitnessValue::Scalar(d / (1.0 + d))))
    }
}
