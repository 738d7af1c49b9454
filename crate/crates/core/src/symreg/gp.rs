use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{complexity, BinaryOp, ComplexityTable, Expr, UnaryOp};
use crate::error::{Error, Result};
use crate::label::{accuracy, Label};
use crate::seed::rng_for;

const INIT_TAG: u64 = 0x7372_696e;
const GEN_TAG: u64 = 0x7372_6765;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossMode {
    /// `max(0, 1 - y'y)` against ±1 labels.
    Hinge,
    /// `(y' - y)^2` against teacher scores.
    Mse,
}

impl LossMode {
    pub fn loss(self, pred: f64, target: f64) -> f64 {
        match self {
            LossMode::Hinge => (1.0 - pred * target).max(0.0),
            LossMode::Mse => (pred - target).powi(2),
        }
    }
}

/// Regression rows and their targets.
#[derive(Clone, Debug, PartialEq)]
pub struct SymData {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
}

impl SymData {
    pub fn new(x: Vec<Vec<f64>>, y: Vec<f64>) -> Result<Self> {
        let d = Self { x, y };
        d.check()?;
        Ok(d)
    }

    /// Hinge targets from labels.
    pub fn labeled(x: Vec<Vec<f64>>, labels: &[Label]) -> Result<Self> {
        Self::new(x, labels.iter().map(|l| l.sign()).collect())
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.first().map_or(0, Vec::len)
    }

    fn check(&self) -> Result<()> {
        if self.x.len() != self.y.len() {
            return Err(Error::invalid(format!(
                "{} rows but {} targets",
                self.x.len(),
                self.y.len()
            )));
        }
        let d = self.dim();
        if self.x.iter().any(|r| r.len() != d) {
            return Err(Error::invalid("rows of unequal length"));
        }
        if self
            .x
            .iter()
            .flatten()
            .chain(&self.y)
            .any(|v| !v.is_finite())
        {
            return Err(Error::NonFinite("symbolic regression data".into()));
        }
        Ok(())
    }

    /// Mean loss of `e`, or infinity if any prediction is non-finite.
    pub fn mean_loss(&self, e: &Expr, mode: LossMode) -> f64 {
        let mut acc = 0.0;
        for (x, &y) in self.x.iter().zip(&self.y) {
            let p = e.eval(x.as_slice());
            if !p.is_finite() {
                return f64::INFINITY;
            }
            acc += mode.loss(p, y);
        }
        let m = acc / self.len() as f64;
        if m.is_finite() {
            m
        } else {
            f64::INFINITY
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SymRegConfig {
    pub population: usize,
    pub tournament_size: usize,
    pub generations: usize,
    /// Best individuals copied unchanged into the next generation.
    pub elites: usize,
    /// Depth limit of initial trees.
    pub init_depth: usize,
    /// Depth limit of subtrees inserted by mutation.
    pub subtree_depth: usize,
    /// Relative scale of Gaussian constant perturbations.
    pub const_sigma: f64,
    /// Subtree exchange between two tournament winners.
    pub crossover: bool,
    pub crossover_rate: f64,
    pub complexity: ComplexityTable,
}

impl Default for SymRegConfig {
    fn default() -> Self {
        Self {
            population: 256,
            tournament_size: 8,
            generations: 50,
            elites: 1,
            init_depth: 3,
            subtree_depth: 3,
            const_sigma: 0.3,
            crossover: false,
            crossover_rate: 0.1,
            complexity: ComplexityTable::default(),
        }
    }
}

impl SymRegConfig {
    pub fn validate(&self) -> Result<()> {
        self.complexity.validate()?;
        if self.population == 0 || self.tournament_size == 0 {
            return Err(Error::Config(
                "population and tournament size must be positive".into(),
            ));
        }
        if self.init_depth == 0 || self.subtree_depth == 0 {
            return Err(Error::Config("tree depth limits must be positive".into()));
        }
        if !(self.const_sigma > 0.0 && self.const_sigma.is_finite()) {
            return Err(Error::Config(format!(
                "const_sigma {} must be positive",
                self.const_sigma
            )));
        }
        if !(0.0..=1.0).contains(&self.crossover_rate) {
            return Err(Error::Config(format!(
                "crossover_rate {} outside [0, 1]",
                self.crossover_rate
            )));
        }
        Ok(())
    }
}

/// Population member with its scored loss.
#[derive(Clone, Debug, PartialEq)]
pub struct Individual {
    pub expr: Expr,
    pub complexity: u32,
    pub loss: f64,
    /// `loss + parsimony * complexity`; infinite for non-finite loss.
    pub fitness: f64,
}

impl Individual {
    pub fn new(expr: Expr, loss: f64, table: &ComplexityTable) -> Self {
        let c = complexity(&expr, table);
        let fitness = if loss.is_finite() {
            loss + table.parsimony * f64::from(c)
        } else {
            f64::INFINITY
        };
        Self {
            expr,
            complexity: c,
            loss: if loss.is_finite() {
                loss
            } else {
                f64::INFINITY
            },
            fitness,
        }
    }
}

/// Best tree found at each complexity level.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct HallOfFame {
    by_complexity: BTreeMap<u32, Individual>,
}

impl HallOfFame {
    pub fn update(&mut self, pop: &[Individual]) {
        for ind in pop.iter().filter(|i| i.loss.is_finite()) {
            let better = self
                .by_complexity
                .get(&ind.complexity)
                .is_none_or(|cur| ind.loss < cur.loss);
            if better {
                self.by_complexity.insert(ind.complexity, ind.clone());
            }
        }
    }

    /// Pareto front over (complexity, loss), by increasing complexity.
    pub fn front(&self) -> Vec<&Individual> {
        let mut out: Vec<&Individual> = Vec::new();
        for ind in self.by_complexity.values() {
            if out.last().is_none_or(|p| ind.loss < p.loss) {
                out.push(ind);
            }
        }
        out
    }

    pub fn best_fitness(&self) -> f64 {
        self.by_complexity
            .values()
            .map(|i| i.fitness)
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HofEntry {
    pub expr: Expr,
    pub complexity: u32,
    pub expression_size: usize,
    pub loss: f64,
    pub fitness: f64,
    pub test_accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    /// Pareto front by increasing complexity.
    pub front: Vec<HofEntry>,
    /// Best hall-of-fame fitness after initialization and each generation.
    pub history: Vec<f64>,
}

impl FitResult {
    /// Front member with the lowest fitness; ties go to the simpler tree.
    pub fn best(&self) -> Option<&HofEntry> {
        self.front
            .iter()
            .reduce(|a, b| if b.fitness < a.fitness { b } else { a })
    }
}

fn random_leaf(n_vars: usize, rng: &mut impl Rng) -> Expr {
    if n_vars > 0 && rng.random_bool(0.7) {
        Expr::Var(rng.random_range(0..n_vars))
    } else {
        Expr::Const(rng.random_range(-3.0..3.0))
    }
}

/// Grows a random tree of depth at most `max_depth`.
pub fn random_tree(n_vars: usize, max_depth: usize, rng: &mut impl Rng) -> Expr {
    if max_depth <= 1 {
        return random_leaf(n_vars, rng);
    }
    let r: f64 = rng.random();
    if r < 0.3 {
        random_leaf(n_vars, rng)
    } else if r < 0.5 {
        let op = UnaryOp::ALL[rng.random_range(0..UnaryOp::ALL.len())];
        Expr::unary(op, random_tree(n_vars, max_depth - 1, rng))
    } else {
        let op = BinaryOp::ALL[rng.random_range(0..BinaryOp::ALL.len())];
        let a = random_tree(n_vars, max_depth - 1, rng);
        let b = random_tree(n_vars, max_depth - 1, rng);
        Expr::binary(op, a, b)
    }
}

fn other<T: Copy + PartialEq>(all: &[T], cur: T, rng: &mut impl Rng) -> T {
    let rest: Vec<T> = all.iter().copied().filter(|&o| o != cur).collect();
    rest[rng.random_range(0..rest.len())]
}

fn positions(e: &Expr, pred: impl Fn(&Expr) -> bool) -> Vec<usize> {
    (0..e.size())
        .filter(|&i| e.node(i).is_some_and(&pred))
        .collect()
}

/// One random mutation: operator replacement, constant perturbation,
/// subtree replacement, or insertion/deletion of a unary node. Kinds that do
/// not apply to `e` fall back to subtree replacement.
pub fn mutate(e: &Expr, n_vars: usize, cfg: &SymRegConfig, rng: &mut impl Rng) -> Expr {
    let mut out = e.clone();
    let kind = rng.random_range(0..5);
    match kind {
        0 => {
            let i = rng.random_range(0..out.size());
            let node = out.node_mut(i).expect("index in range");
            match node {
                Expr::Binary(op, ..) => *op = other(&BinaryOp::ALL, *op, rng),
                Expr::Unary(op, _) => *op = other(&UnaryOp::ALL, *op, rng),
                Expr::Var(v) if n_vars > 1 => {
                    let all: Vec<usize> = (0..n_vars).collect();
                    *v = other(&all, *v, rng);
                }
                leaf => *leaf = random_leaf(n_vars, rng),
            }
            return out;
        }
        1 => {
            let consts = positions(&out, |n| matches!(n, Expr::Const(_)));
            if !consts.is_empty() {
                let i = consts[rng.random_range(0..consts.len())];
                if let Some(Expr::Const(c)) = out.node_mut(i) {
                    let z: f64 = StandardNormal.sample(rng);
                    *c += z * cfg.const_sigma * (1.0 + c.abs());
                }
                return out;
            }
        }
        3 => {
            let i = rng.random_range(0..out.size());
            let op = UnaryOp::ALL[rng.random_range(0..UnaryOp::ALL.len())];
            let node = out.node_mut(i).expect("index in range");
            let inner = std::mem::replace(node, Expr::Const(0.0));
            *node = Expr::unary(op, inner);
            return out;
        }
        4 => {
            let unary = positions(&out, |n| matches!(n, Expr::Unary(..)));
            if !unary.is_empty() {
                let i = unary[rng.random_range(0..unary.len())];
                let node = out.node_mut(i).expect("index in range");
                if let Expr::Unary(_, a) = std::mem::replace(node, Expr::Const(0.0)) {
                    *node = *a;
                }
                return out;
            }
        }
        _ => {}
    }
    let i = rng.random_range(0..out.size());
    *out.node_mut(i).expect("index in range") = random_tree(n_vars, cfg.subtree_depth, rng);
    out
}

/// Replaces a random subtree of `a` with a random subtree of `b`.
pub fn crossover(a: &Expr, b: &Expr, rng: &mut impl Rng) -> Expr {
    let mut out = a.clone();
    let donor = b
        .node(rng.random_range(0..b.size()))
        .expect("index in range")
        .clone();
    let i = rng.random_range(0..out.size());
    *out.node_mut(i).expect("index in range") = donor;
    out
}

/// Index of the fittest of `q` uniform draws; ties go to the lower index.
pub fn tournament_select(pop: &[Individual], q: usize, rng: &mut impl Rng) -> usize {
    let mut best = rng.random_range(0..pop.len());
    for _ in 1..q {
        let c = rng.random_range(0..pop.len());
        let ord = pop[c].fitness.total_cmp(&pop[best].fitness);
        if ord.is_lt() || (ord.is_eq() && c < best) {
            best = c;
        }
    }
    best
}

fn ranked(pop: &[Individual]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..pop.len()).collect();
    idx.sort_by(|&a, &b| pop[a].fitness.total_cmp(&pop[b].fitness).then(a.cmp(&b)));
    idx
}

/// One generation: elites survive unchanged, every other slot holds the
/// mutated winner of a tournament. Offspring above the complexity cap are
/// discarded and the parent is kept. Each slot draws from its own stream
/// keyed by `(seed, generation, slot)`.
pub fn tournament_round<F>(
    pop: &[Individual],
    n_vars: usize,
    cfg: &SymRegConfig,
    seed: u64,
    generation: u64,
    loss: &F,
) -> Vec<Individual>
where
    F: Fn(&Expr) -> f64 + Sync,
{
    if pop.is_empty() {
        return Vec::new();
    }
    let order = ranked(pop);
    let elites = cfg.elites.min(pop.len());
    (0..pop.len())
        .into_par_iter()
        .map(|slot| {
            if slot < elites {
                return pop[order[slot]].clone();
            }
            let mut rng = rng_for(seed, &[GEN_TAG, generation, slot as u64]);
            let parent = &pop[tournament_select(pop, cfg.tournament_size, &mut rng)];
            let child = if cfg.crossover && rng.random_bool(cfg.crossover_rate) {
                let donor = &pop[tournament_select(pop, cfg.tournament_size, &mut rng)];
                crossover(&parent.expr, &donor.expr, &mut rng)
            } else {
                mutate(&parent.expr, n_vars, cfg, &mut rng)
            };
            if complexity(&child, &cfg.complexity) > cfg.complexity.max_complexity {
                return parent.clone();
            }
            let l = loss(&child);
            Individual::new(child, l, &cfg.complexity)
        })
        .collect()
}

fn initial_population<F>(n_vars: usize, cfg: &SymRegConfig, seed: u64, loss: &F) -> Vec<Individual>
where
    F: Fn(&Expr) -> f64 + Sync,
{
    (0..cfg.population)
        .into_par_iter()
        .map(|slot| {
            let mut rng = rng_for(seed, &[INIT_TAG, slot as u64]);
            let mut e = random_tree(n_vars, cfg.init_depth, &mut rng);
            let mut tries = 0;
            while complexity(&e, &cfg.complexity) > cfg.complexity.max_complexity {
                tries += 1;
                e = if tries < 16 {
                    random_tree(n_vars, cfg.init_depth, &mut rng)
                } else {
                    random_leaf(n_vars, &mut rng)
                };
            }
            let l = loss(&e);
            Individual::new(e, l, &cfg.complexity)
        })
        .collect()
}

/// Evolves expressions for `train` and returns the Pareto hall of fame.
/// `observe` sees the population and hall of fame after initialization
/// (generation 0) and after every generation.
pub fn fit_observed(
    train: &SymData,
    test: Option<(&[Vec<f64>], &[Label])>,
    mode: LossMode,
    cfg: &SymRegConfig,
    seed: u64,
    mut observe: impl FnMut(usize, &[Individual], &HallOfFame),
) -> Result<FitResult> {
    cfg.validate()?;
    train.check()?;
    if train.is_empty() {
        return Err(Error::invalid(
            "symbolic regression needs at least one training row",
        ));
    }
    if mode == LossMode::Hinge && train.y.iter().any(|&y| y != 1.0 && y != -1.0) {
        return Err(Error::invalid("hinge targets must be +1 or -1"));
    }
    if let Some((x, labels)) = test {
        if x.len() != labels.len() {
            return Err(Error::invalid("test rows and labels differ in length"));
        }
        if x.iter().any(|r| r.len() != train.dim()) {
            return Err(Error::invalid(
                "test rows differ in width from the training rows",
            ));
        }
    }
    let n_vars = train.dim();
    let loss = |e: &Expr| train.mean_loss(e, mode);
    let mut pop = initial_population(n_vars, cfg, seed, &loss);
    let mut hof = HallOfFame::default();
    hof.update(&pop);
    observe(0, &pop, &hof);
    let mut history = vec![hof.best_fitness()];
    for generation in 1..=cfg.generations {
        pop = tournament_round(&pop, n_vars, cfg, seed, generation as u64, &loss);
        hof.update(&pop);
        observe(generation, &pop, &hof);
        history.push(hof.best_fitness());
    }
    let front = hof
        .front()
        .into_iter()
        .map(|ind| HofEntry {
            expr: ind.expr.clone(),
            complexity: ind.complexity,
            expression_size: ind.expr.size(),
            loss: ind.loss,
            fitness: ind.fitness,
            test_accuracy: test.map(|(x, labels)| accuracy(&ind.expr.eval_rows(x), labels)),
        })
        .collect();
    Ok(FitResult { front, history })
}

pub fn fit(
    train: &SymData,
    test: Option<(&[Vec<f64>], &[Label])>,
    mode: LossMode,
    cfg: &SymRegConfig,
    seed: u64,
) -> Result<FitResult> {
    fit_observed(train, test, mode, cfg, seed, |_, _, _| {})
}
