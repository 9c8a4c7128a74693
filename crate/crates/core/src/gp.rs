//! Generational search with archive-assisted crossover and elitist selection.

use std::cmp::Ordering;
use std::collections::HashMap;

use rand::seq::IndexedRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{
    random_subtree, random_terminal, random_tree_with, BinaryOp, ExprError, LossExpr, Node,
    TreeConstraints, UnaryOp,
};
use crate::fitness::{compare, Assessment, FitnessError, FitnessOracle, FitnessValue};
use crate::rng::stream;

/// Height limit of subtrees grown by subtree mutation.
pub const MUTATION_SUBTREE_HEIGHT: usize = 3;

#[derive(Debug, Error)]
pub enum GpError {
    #[error("invalid search configuration: {field}: {message}")]
    InvalidConfig { field: &'static str, message: String },
    #[error(transparent)]
    Constraints(#[from] ExprError),
    #[error("initialization of slot {slot} rejected {attempts} candidates in a row")]
    InitLivelock { slot: usize, attempts: usize },
    #[error(transparent)]
    Fitness(#[from] FitnessError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GpConfig {
    pub population_size: usize,
    pub generations: usize,
    pub subtree_mutation_rate: f64,
    pub point_mutation_rate: f64,
    pub crossover_rate: f64,
    pub archive_save_prob: f64,
    pub archive_use_prob: f64,
    /// Defaults to the population size.
    pub archive_capacity: Option<usize>,
    pub constraints: TreeConstraints,
    pub seed: u64,
}

impl Default for GpConfig {
    fn default() -> Self {
        Self {
            population_size: 16,
            generations: 100,
            subtree_mutation_rate: 0.3,
            point_mutation_rate: 0.1,
            crossover_rate: 0.7,
            archive_save_prob: 0.5,
            archive_use_prob: 0.5,
            archive_capacity: None,
            constraints: TreeConstraints::default(),
            seed: 0,
        }
    }
}

impl GpConfig {
    pub fn archive_capacity(&self) -> usize {
        self.archive_capacity.unwrap_or(self.population_size)
    }

    pub fn check(&self) -> Result<(), GpError> {
        for (field, rate) in [
            ("subtree_mutation_rate", self.subtree_mutation_rate),
            ("point_mutation_rate", self.point_mutation_rate),
            ("crossover_rate", self.crossover_rate),
            ("archive_save_prob", self.archive_save_prob),
            ("archive_use_prob", self.archive_use_prob),
        ] {
            if !(0.0..=1.0).contains(&rate) {
                return Err(GpError::InvalidConfig { field, message: format!("{rate} outside [0, 1]") });
            }
        }
        if self.population_size < 2 {
            return Err(GpError::InvalidConfig {
                field: "population_size",
                message: format!("{} < 2", self.population_size),
            });
        }
        self.constraints.check_feasible()?;
        Ok(())
    }

    fn retry_budget(&self) -> usize {
        self.constraints.max_retries.max(1) * self.population_size
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Individual {
    pub id: u64,
    pub expr: LossExpr,
    pub fitness: FitnessValue,
    pub parent_ids: (Option<u64>, Option<u64>),
}

/// Bounded pool of individuals that lost selection.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Archive {
    pub capacity: usize,
    pub members: Vec<Individual>,
}

impl Archive {
    pub fn new(capacity: usize) -> Self {
        Self { capacity, members: Vec::new() }
    }

    /// Append, evicting a uniformly random member when full.
    pub fn insert<R: Rng + ?Sized>(&mut self, ind: Individual, rng: &mut R) {
        if self.capacity == 0 {
            return;
        }
        if self.members.len() < self.capacity {
            self.members.push(ind);
        } else {
            let k = rng.random_range(0..self.members.len());
            self.members[k] = ind;
        }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub generation: usize,
    pub best_id: u64,
    pub best_fitness: FitnessValue,
    /// Mean error, or mean signed improvement percentage against CE.
    pub mean_fitness: f64,
    pub best_formula: String,
    pub rejections: usize,
    pub archive_size: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchHistory {
    pub records: Vec<GenerationRecord>,
}

impl SearchHistory {
    pub fn to_jsonl(&self) -> String {
        self.records
            .iter()
            .map(|r| serde_json::to_string(r).expect("records serialize") + "\n")
            .collect()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

fn scalar_summary(f: &FitnessValue) -> f64 {
    match *f {
        FitnessValue::Scalar(e) => e,
        FitnessValue::VsBaseline { wins: 0, mean_improvement_pct } => -mean_improvement_pct,
        FitnessValue::VsBaseline { mean_improvement_pct, .. } => mean_improvement_pct,
    }
}

/// Fitness first, then smaller tree, then lower id.
pub fn rank(a: &Individual, b: &Individual) -> Ordering {
    compare(&a.fitness, &b.fitness)
        .then_with(|| a.expr.size().cmp(&b.expr.size()))
        .then_with(|| a.id.cmp(&b.id))
}

fn record(generation: usize, population: &[Individual], rejections: usize, archive: &Archive) -> GenerationRecord {
    let best = population.iter().min_by(|a, b| rank(a, b)).expect("non-empty population");
    let mean_fitness =
        population.iter().map(|i| scalar_summary(&i.fitness)).sum::<f64>() / population.len() as f64;
    GenerationRecord {
        generation,
        best_id: best.id,
        best_fitness: best.fitness,
        mean_fitness,
        best_formula: best.expr.to_string(),
        rejections,
        archive_size: archive.len(),
    }
}

/// Live search state.
#[derive(Clone, Debug)]
pub struct Search {
    pub population: Vec<Individual>,
    pub archive: Archive,
    pub history: SearchHistory,
    pub generation: usize,
    cache: HashMap<String, FitnessValue>,
}

impl Search {
    pub fn best(&self) -> &Individual {
        self.population.iter().min_by(|a, b| rank(a, b)).expect("non-empty population")
    }
}

/// `n` random, accepted individuals and the generation-0 record.
pub fn initialize(config: &GpConfig, oracle: &dyn FitnessOracle) -> Result<Search, GpError> {
    config.check()?;
    let budget = config.retry_budget();
    let slots: Vec<(Individual, usize)> = (0..config.population_size)
        .into_par_iter()
        .map(|slot| {
            let mut rng = stream(config.seed, &[0, slot as u64]);
            let mut rejected = 0;
            while rejected < budget {
                let expr = random_tree_with(&config.constraints, &mut rng)?;
                match oracle.assess(&expr)? {
                    Assessment::Accepted(fitness) => {
                        let ind = Individual { id: slot as u64, expr, fitness, parent_ids: (None, None) };
                        return Ok((ind, rejected));
                    }
                    Assessment::Rejected(_) => rejected += 1,
                }
            }
            Err(GpError::InitLivelock { slot, attempts: rejected })
        })
        .collect::<Result<_, GpError>>()?;
    let rejections = slots.iter().map(|(_, r)| r).sum();
    let population: Vec<Individual> = slots.into_iter().map(|(i, _)| i).collect();
    let archive = Archive::new(config.archive_capacity());
    let cache = population.iter().map(|i| (i.expr.to_string(), i.fitness)).collect();
    let history = SearchHistory { records: vec![record(0, &population, rejections, &archive)] };
    Ok(Search { population, archive, history, generation: 0, cache })
}

/// Copy of `a` with node `ia` (preorder) replaced by `b`'s node `ib`.
pub fn swap_subtree(a: &LossExpr, ia: usize, b: &LossExpr, ib: usize) -> Option<LossExpr> {
    let donor = b.subtree(ib)?.clone();
    (ia < a.size()).then(|| a.with_subtree(ia, donor))
}

fn acceptable(expr: &LossExpr, constraints: &TreeConstraints) -> bool {
    expr.validate(constraints).is_valid()
}

/// Crossover child of `population[slot]`; a copy of the parent with
/// probability `1 − Cr` or when no valid exchange is found.
pub fn crossover<R: Rng + ?Sized>(
    slot: usize,
    population: &[Individual],
    archive: &Archive,
    config: &GpConfig,
    rng: &mut R,
) -> (LossExpr, Option<u64>) {
    let parent = &population[slot];
    if !rng.random_bool(config.crossover_rate) {
        return (parent.expr.clone(), None);
    }
    let use_archive = !archive.is_empty() && rng.random_bool(config.archive_use_prob);
    let mate = if use_archive {
        archive.members.choose(rng).expect("non-empty archive")
    } else if population.len() > 1 {
        let k = rng.random_range(0..population.len() - 1);
        &population[if k >= slot { k + 1 } else { k }]
    } else {
        parent
    };
    for _ in 0..config.constraints.max_retries.max(1) {
        let ia = rng.random_range(0..parent.expr.size());
        let ib = rng.random_range(0..mate.expr.size());
        if let Some(child) = swap_subtree(&parent.expr, ia, &mate.expr, ib) {
            if acceptable(&child, &config.constraints) {
                return (child, Some(mate.id));
            }
        }
    }
    (parent.expr.clone(), None)
}

/// Replace a uniformly chosen subtree with a fresh random one.
pub fn mutate_subtree<R: Rng + ?Sized>(expr: &LossExpr, config: &GpConfig, rng: &mut R) -> LossExpr {
    for _ in 0..config.constraints.max_retries.max(1) {
        let idx = rng.random_range(0..expr.size());
        let fresh = random_subtree(rng, MUTATION_SUBTREE_HEIGHT, config.constraints.constant_range);
        let child = expr.with_subtree(idx, fresh);
        if acceptable(&child, &config.constraints) {
            return child;
        }
    }
    expr.clone()
}

fn other<T: Copy + PartialEq, R: Rng + ?Sized>(options: &[T], current: T, rng: &mut R) -> T {
    let rest: Vec<T> = options.iter().copied().filter(|o| *o != current).collect();
    *rest.choose(rng).unwrap_or(&current)
}

/// A different node of the same arity, keeping any children.
pub fn point_replacement<R: Rng + ?Sized>(node: &Node, constant_range: (f64, f64), rng: &mut R) -> Node {
    match node {
        Node::Unary(op, x) => Node::Unary(other(&UnaryOp::EVOLVABLE, *op, rng), x.clone()),
        Node::Binary(op, a, b) => Node::Binary(other(&BinaryOp::ALL, *op, rng), a.clone(), b.clone()),
        leaf => loop {
            let t = random_terminal(rng, constant_range);
            if t != *leaf {
                break t;
            }
        },
    }
}

/// Replace one node with a different node of the same arity.
pub fn mutate_point<R: Rng + ?Sized>(expr: &LossExpr, config: &GpConfig, rng: &mut R) -> LossExpr {
    for _ in 0..config.constraints.max_retries.max(1) {
        let idx = rng.random_range(0..expr.size());
        let node = expr.subtree(idx).expect("index in range");
        let replacement = point_replacement(node, config.constraints.constant_range, rng);
        let child = expr.with_subtree(idx, replacement);
        if acceptable(&child, &config.constraints) {
            return child;
        }
    }
    expr.clone()
}

struct Child {
    ind: Individual,
    rejections: usize,
    evaluated: bool,
}

fn make_child(
    search: &Search,
    config: &GpConfig,
    oracle: &dyn FitnessOracle,
    slot: usize,
    generation: usize,
) -> Result<Child, GpError> {
    let mut rng = stream(config.seed, &[generation as u64, slot as u64]);
    let parent = &search.population[slot];
    let id = (generation * config.population_size + slot) as u64;
    let mut rejections = 0;
    while rejections < config.retry_budget() {
        let (mut expr, mate) = crossover(slot, &search.population, &search.archive, config, &mut rng);
        if rng.random_bool(config.subtree_mutation_rate) {
            expr = mutate_subtree(&expr, config, &mut rng);
        }
        if rng.random_bool(config.point_mutation_rate) {
            expr = mutate_point(&expr, config, &mut rng);
        }
        let parent_ids = (Some(parent.id), mate);
        let known = if expr == parent.expr {
            Some(parent.fitness)
        } else {
            search.cache.get(&expr.to_string()).copied()
        };
        if let Some(fitness) = known {
            return Ok(Child { ind: Individual { id, expr, fitness, parent_ids }, rejections, evaluated: false });
        }
        match oracle.assess(&expr)? {
            Assessment::Accepted(fitness) => {
                return Ok(Child { ind: Individual { id, expr, fitness, parent_ids }, rejections, evaluated: true })
            }
            Assessment::Rejected(_) => rejections += 1,
        }
    }
    let ind = Individual { id, parent_ids: (Some(parent.id), None), ..parent.clone() };
    Ok(Child { ind, rejections, evaluated: false })
}

/// One generation. On an oracle error the state is left untouched.
pub fn step(search: &mut Search, config: &GpConfig, oracle: &dyn FitnessOracle) -> Result<(), GpError> {
    let generation = search.generation + 1;
    let children: Vec<Child> = (0..config.population_size)
        .into_par_iter()
        .map(|slot| make_child(search, config, oracle, slot, generation))
        .collect::<Result<_, _>>()?;

    let rejections = children.iter().map(|c| c.rejections).sum();
    for c in children.iter().filter(|c| c.evaluated) {
        search.cache.insert(c.ind.expr.to_string(), c.ind.fitness);
    }
    let mut combined: Vec<Individual> = search.population.drain(..).collect();
    combined.extend(children.into_iter().map(|c| c.ind));
    combined.sort_by(rank);
    let losers = combined.split_off(config.population_size);
    search.population = combined;

    let mut rng = stream(config.seed, &[generation as u64, u64::MAX]);
    for ind in losers {
        if rng.random_bool(config.archive_save_prob) {
            search.archive.insert(ind, &mut rng);
        }
    }
    search.generation = generation;
    search
        .history
        .records
        .push(record(generation, &search.population, rejections, &search.archive));
    Ok(())
}

/// Initialize and run `config.generations` steps.
pub fn run(config: &GpConfig, oracle: &dyn FitnessOracle) -> Result<(Individual, SearchHistory), GpError> {
    run_with(config, oracle, |_| {})
}

/// [`run`] reporting each generation record as soon as it exists.
pub fn run_with(
    config: &GpConfig,
    oracle: &dyn FitnessOracle,
    mut on_generation: impl FnMut(&GenerationRecord),
) -> Result<(Individual, SearchHistory), GpError> {
    let mut search = initialize(config, oracle)?;
    on_generation(search.history.records.last().expect("generation 0"));
    for _ in 0..config.generations {
        step(&mut search, config, oracle)?;
        on_generation(search.history.records.last().expect("just pushed"));
    }
    Ok((search.best().clone(), search.history))
}
