//! Online bin packing with integer item sizes. Items arrive in order; a
//! scoring heuristic rates every open bin the item fits into and the item
//! goes to the highest score (lowest index on ties). A new bin is opened only
//! when no open bin fits.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Weibull};
use serde_json::{json, Value};

use super::ProblemError;
use crate::executor::{value_f64s, ExecError, Session, Shape};

pub const WEIBULL_SCALE: f64 = 45.0;
pub const WEIBULL_SHAPE: f64 = 3.0;

#[derive(Debug, Clone, PartialEq)]
pub struct BppInstance {
    pub name: String,
    pub capacity: u32,
    pub items: Vec<u32>,
}

impl BppInstance {
    pub fn new(name: impl Into<String>, capacity: u32, items: Vec<u32>) -> Result<Self, ProblemError> {
        if capacity == 0 {
            return Err(ProblemError::Invalid("bin capacity must be positive".into()));
        }
        if items.is_empty() {
            return Err(ProblemError::Invalid("no items".into()));
        }
        if let Some(bad) = items.iter().find(|&&s| s == 0 || s > capacity) {
            return Err(ProblemError::Invalid(format!("item size {bad} outside (0, {capacity}]")));
        }
        Ok(BppInstance { name: name.into(), capacity, items })
    }

    /// `ceil(sum / capacity)`.
    pub fn lower_bound(&self) -> u64 {
        let total: u64 = self.items.iter().map(|&s| s as u64).sum();
        total.div_ceil(self.capacity as u64)
    }

    pub fn excess(&self, bins_used: usize) -> f64 {
        let lb = self.lower_bound() as f64;
        (bins_used as f64 - lb) / lb
    }
}

/// Sizes drawn from Weibull(scale 45, shape 3), rounded up and clipped to
/// `[1, capacity]`.
pub fn gen_bpp_weibull(count: usize, capacity: u32, seed: u64) -> Result<BppInstance, ProblemError> {
    if count == 0 {
        return Err(ProblemError::Invalid("item count must be >= 1".into()));
    }
    let dist = Weibull::new(WEIBULL_SCALE, WEIBULL_SHAPE).expect("valid Weibull parameters");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let items = (0..count).map(|_| (dist.sample(&mut rng).ceil() as u32).clamp(1, capacity)).collect();
    BppInstance::new(format!("weibull{count}-c{capacity}-{seed}"), capacity, items)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Packing {
    /// Residual capacity per bin, in opening order.
    pub residuals: Vec<u32>,
    pub assignment: Vec<usize>,
}

impl Packing {
    pub fn bins(&self) -> usize {
        self.residuals.len()
    }
}

/// Generic online packer: `choose(item, residuals, candidates)` returns the
/// index into `candidates` to use.
fn pack_with<E>(inst: &BppInstance, mut choose: impl FnMut(u32, &[u32], &[usize]) -> Result<usize, E>) -> Result<Packing, E> {
    let mut residuals: Vec<u32> = Vec::new();
    let mut assignment = Vec::with_capacity(inst.items.len());
    let mut candidates = Vec::new();
    for &item in &inst.items {
        candidates.clear();
        candidates.extend((0..residuals.len()).filter(|&j| residuals[j] >= item));
        let bin = if candidates.is_empty() {
            residuals.push(inst.capacity);
            residuals.len() - 1
        } else {
            candidates[choose(item, &residuals, &candidates)?]
        };
        residuals[bin] -= item;
        assignment.push(bin);
    }
    Ok(Packing { residuals, assignment })
}

/// Index of the maximal score; the first one wins ties.
pub fn argmax_first(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s > scores[best] {
            best = i;
        }
    }
    best
}

pub fn first_fit(inst: &BppInstance) -> Packing {
    pack_with::<()>(inst, |_, _, _| Ok(0)).expect("infallible")
}

pub fn best_fit(inst: &BppInstance) -> Packing {
    pack_with::<()>(inst, |_, res, cand| {
        let mut best = 0;
        for (k, &j) in cand.iter().enumerate() {
            if res[j] < res[cand[best]] {
                best = k;
            }
        }
        Ok(best)
    })
    .expect("infallible")
}

/// Packs with the heuristic's scores. It receives the item size and the
/// residual capacities of the bins the item fits into, and returns one score
/// per bin.
pub fn eval_bpp_online<S: Session + ?Sized>(session: &mut S, inst: &BppInstance) -> Result<(Packing, f64), ExecError> {
    let packing = pack_with(inst, |item, res, cand| {
        let bins: Vec<u32> = cand.iter().map(|&j| res[j]).collect();
        let v = session.invoke(vec![json!(item), json!(bins)], &Shape::Vector(cand.len())).outcome?;
        Ok(argmax_first(&value_f64s(&v)))
    })?;
    let excess = inst.excess(packing.bins());
    Ok((packing, excess))
}

pub const SCORE_FUNCTION: &str = "score";

pub const BEST_FIT_CODE: &str = "import numpy as np

def score(item, bins):
    return -bins
";

/// Native `score = -residual`.
pub fn best_fit_rule(args: &[Value]) -> Result<Value, String> {
    let bins = args[1].as_array().ok_or("bins must be a list")?;
    Ok(Value::from(bins.iter().map(|b| -b.as_f64().unwrap_or(f64::NAN)).collect::<Vec<_>>()))
}
