//! Heuristic candidates, greedy survival selection and rank-based parent
//! selection.
//!
//! Objectives are minimized throughout: tour length, excess-bin ratio and
//! makespan all go down as heuristics improve. A maximized fitness
//! `g(h) = E[-f]` maps onto this as the mean of `f`.

use std::fmt;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::insights::InsightId;
use crate::prompt::Strategy;

/// Two objectives closer than this are the same objective.
pub const OBJECTIVE_TOLERANCE: f64 = 1e-12;

/// Guard for the coefficient of variation when the mean is near zero.
pub const DIVERSITY_EPSILON: f64 = 1e-9;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PopulationError {
    #[error("no parents available")]
    NoParents,
    #[error("population is empty")]
    Empty,
    #[error("heuristic {0} has no objective")]
    Unevaluated(u64),
}

/// Which operator produced a heuristic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Origin {
    I1,
    E1,
    E2,
    M1,
    M2,
    M3,
    #[serde(rename = "seed")]
    Seed,
}

impl From<Strategy> for Origin {
    fn from(s: Strategy) -> Self {
        match s {
            Strategy::I1 => Origin::I1,
            Strategy::E1 => Origin::E1,
            Strategy::E2 => Origin::E2,
            Strategy::M1 => Origin::M1,
            Strategy::M2 => Origin::M2,
            Strategy::M3 => Origin::M3,
        }
    }
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Origin::I1 => "I1",
            Origin::E1 => "E1",
            Origin::E2 => "E2",
            Origin::M1 => "M1",
            Origin::M2 => "M2",
            Origin::M3 => "M3",
            Origin::Seed => "seed",
        };
        f.write_str(s)
    }
}

/// A candidate heuristic: a one-sentence thought plus the program text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heuristic {
    pub id: u64,
    pub thought: String,
    pub code: String,
    /// Mean objective over the evaluation instances; `None` until evaluated
    /// or when evaluation failed.
    pub objective: Option<f64>,
    pub origin: Origin,
    pub generation: u32,
    #[serde(default)]
    pub contributing_insights: Vec<InsightId>,
}

impl Heuristic {
    pub fn new(id: u64, thought: impl Into<String>, code: impl Into<String>, origin: Origin, generation: u32) -> Self {
        Heuristic {
            id,
            thought: thought.into(),
            code: code.into(),
            objective: None,
            origin,
            generation,
            contributing_insights: Vec::new(),
        }
    }

    pub fn with_objective(mut self, objective: f64) -> Self {
        self.objective = Some(objective);
        self
    }

    /// Valid means evaluated with a finite objective.
    pub fn is_valid(&self) -> bool {
        self.objective.is_some_and(f64::is_finite)
    }
}

/// Code text with all whitespace runs collapsed, used for identity checks.
pub fn normalize_code(code: &str) -> String {
    code.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn same_objective(a: f64, b: f64) -> bool {
    (a - b).abs() <= OBJECTIVE_TOLERANCE
}

/// A candidate duplicates an existing member when the objectives agree within
/// tolerance or the code is identical up to whitespace.
pub fn is_duplicate<'a>(candidate: &Heuristic, existing: impl IntoIterator<Item = &'a Heuristic>) -> bool {
    let code = normalize_code(&candidate.code);
    existing.into_iter().any(|h| {
        let objective_match = match (candidate.objective, h.objective) {
            (Some(a), Some(b)) => same_objective(a, b),
            _ => false,
        };
        objective_match || normalize_code(&h.code) == code
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Population {
    pub members: Vec<Heuristic>,
    pub capacity: usize,
}

impl Population {
    pub fn new(capacity: usize) -> Self {
        Population { members: Vec::new(), capacity }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn best(&self) -> Option<&Heuristic> {
        self.members.first()
    }

    pub fn objectives(&self) -> Vec<f64> {
        self.members.iter().filter_map(|h| h.objective).collect()
    }
}

/// Greedy elitist survival: drop unevaluated members, drop objective
/// duplicates (first occurrence wins), sort ascending and truncate.
///
/// An empty result is allowed and means every member failed evaluation.
pub fn survival_select(pool: Vec<Heuristic>, n_target: usize) -> Population {
    assert!(n_target >= 1, "survival target must be at least 1");
    let mut unique: Vec<Heuristic> = Vec::with_capacity(pool.len());
    for h in pool.into_iter().filter(Heuristic::is_valid) {
        let obj = h.objective.expect("filtered");
        if unique.iter().any(|u| same_objective(u.objective.expect("filtered"), obj)) {
            continue;
        }
        unique.push(h);
    }
    // stable: earlier members win ties
    unique.sort_by(|a, b| a.objective.partial_cmp(&b.objective).expect("finite objectives"));
    unique.truncate(n_target);
    Population { members: unique, capacity: n_target }
}

/// Normalized rank weights `w_k ∝ 1 / (k + 1 + n)` for a population of `n`.
pub fn rank_weights(n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|k| 1.0 / (k + 1 + n) as f64).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// Draws `m` parents with replacement from a best-first population.
pub fn rank_select_parents<'a, R: Rng + ?Sized>(
    pop: &'a Population,
    m: usize,
    rng: &mut R,
) -> Result<Vec<&'a Heuristic>, PopulationError> {
    if pop.is_empty() {
        return Err(PopulationError::NoParents);
    }
    let dist = WeightedIndex::new(rank_weights(pop.len())).map_err(|_| PopulationError::NoParents)?;
    Ok((0..m).map(|_| &pop.members[dist.sample(rng)]).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PopulationStats {
    pub best: f64,
    pub avg: f64,
    pub worst: f64,
    pub std: f64,
    /// Coefficient of variation `std / max(|avg|, 1e-9)`.
    pub diversity: f64,
}

pub fn stats(pop: &Population) -> Result<PopulationStats, PopulationError> {
    stats_of(pop.members.iter())
}

pub fn stats_of<'a>(members: impl IntoIterator<Item = &'a Heuristic>) -> Result<PopulationStats, PopulationError> {
    let mut values = Vec::new();
    for h in members {
        values.push(h.objective.ok_or(PopulationError::Unevaluated(h.id))?);
    }
    objective_stats(&values)
}

pub fn objective_stats(values: &[f64]) -> Result<PopulationStats, PopulationError> {
    if values.is_empty() {
        return Err(PopulationError::Empty);
    }
    let best = values.iter().copied().fold(f64::INFINITY, f64::min);
    let worst = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let n = values.len() as f64;
    // rounding can push the mean of equal values just outside [best, worst]
    let avg = (values.iter().sum::<f64>() / n).clamp(best, worst);
    let var = values.iter().map(|v| (v - avg).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    Ok(PopulationStats {
        best,
        avg,
        worst,
        std,
        diversity: std / avg.abs().max(DIVERSITY_EPSILON),
    })
}
