//! Permutation flow shop: makespan recursion, Taillard-format parsing,
//! guided local search driven by a `guide` heuristic, and a brute-force
//! oracle. Jobs are 0-based throughout.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::ProblemError;
use crate::executor::{value_i64, value_matrix, ErrorKind, ExecError, Session, Shape};

#[derive(Debug, Clone, PartialEq)]
pub struct FsspInstance {
    pub name: String,
    pub n: usize,
    pub m: usize,
    /// `times[job][machine]`.
    pub times: Vec<Vec<f64>>,
}

impl FsspInstance {
    pub fn new(name: impl Into<String>, times: Vec<Vec<f64>>) -> Result<Self, ProblemError> {
        let n = times.len();
        let m = times.first().map_or(0, Vec::len);
        if n == 0 || m == 0 {
            return Err(ProblemError::Invalid("empty processing time matrix".into()));
        }
        if times.iter().any(|r| r.len() != m) {
            return Err(ProblemError::Invalid("processing time matrix is not rectangular".into()));
        }
        if times.iter().flatten().any(|&t| !(t > 0.0 && t.is_finite())) {
            return Err(ProblemError::Invalid("processing times must be positive".into()));
        }
        Ok(FsspInstance { name: name.into(), n, m, times })
    }

    pub fn makespan(&self, perm: &[usize]) -> Result<f64, ProblemError> {
        makespan(&self.times, perm)
    }
}

/// Integer times uniform in 1..=99.
pub fn gen_fssp(n: usize, m: usize, seed: u64) -> Result<FsspInstance, ProblemError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let times = (0..n).map(|_| (0..m).map(|_| rng.random_range(1..=99) as f64).collect()).collect();
    FsspInstance::new(format!("fssp{n}x{m}-{seed}"), times)
}

pub fn is_permutation(perm: &[usize], n: usize) -> bool {
    if perm.len() != n {
        return false;
    }
    let mut seen = vec![false; n];
    perm.iter().all(|&j| j < n && !std::mem::replace(&mut seen[j], true))
}

/// Completion time of the last job on the last machine. Single row DP:
/// `c[j] = max(c[j], c[j-1]) + T[job][j]`.
pub fn makespan_unchecked(times: &[Vec<f64>], perm: &[usize]) -> f64 {
    let m = times.first().map_or(0, Vec::len);
    let mut c = vec![0.0f64; m];
    for &job in perm {
        let row = &times[job];
        let mut prev = 0.0f64;
        for j in 0..m {
            let v = c[j].max(prev) + row[j];
            c[j] = v;
            prev = v;
        }
    }
    c.last().copied().unwrap_or(0.0)
}

pub fn makespan(times: &[Vec<f64>], perm: &[usize]) -> Result<f64, ProblemError> {
    if !is_permutation(perm, times.len()) {
        return Err(ProblemError::Invalid(format!("{perm:?} is not a permutation of 0..{}", times.len())));
    }
    Ok(makespan_unchecked(times, perm))
}

/// Jobs by ascending total processing time, index order on ties.
pub fn initial_order(inst: &FsspInstance) -> Vec<usize> {
    let totals: Vec<f64> = inst.times.iter().map(|r| r.iter().sum()).collect();
    let mut order: Vec<usize> = (0..inst.n).collect();
    order.sort_by(|&a, &b| totals[a].total_cmp(&totals[b]).then(a.cmp(&b)));
    order
}

const IMPROVEMENT_EPS: f64 = 1e-9;

/// First-improvement insertion and adjacent-swap moves under `times`,
/// touching only jobs flagged in `movable` (all jobs when `None`).
pub fn local_search(perm: &mut Vec<usize>, times: &[Vec<f64>], movable: Option<&[bool]>) {
    let n = perm.len();
    if n < 2 {
        return;
    }
    let can_move = |job: usize| movable.is_none_or(|m| m[job]);
    let mut current = makespan_unchecked(times, perm);
    let mut trial = perm.clone();
    'restart: loop {
        for i in 0..n {
            if !can_move(perm[i]) {
                continue;
            }
            for k in 0..n {
                if k == i {
                    continue;
                }
                trial.clone_from(perm);
                let job = trial.remove(i);
                trial.insert(k, job);
                let v = makespan_unchecked(times, &trial);
                if v < current - IMPROVEMENT_EPS {
                    perm.clone_from(&trial);
                    current = v;
                    continue 'restart;
                }
            }
        }
        for i in 0..n - 1 {
            if !can_move(perm[i]) && !can_move(perm[i + 1]) {
                continue;
            }
            trial.clone_from(perm);
            trial.swap(i, i + 1);
            let v = makespan_unchecked(times, &trial);
            if v < current - IMPROVEMENT_EPS {
                perm.clone_from(&trial);
                current = v;
                continue 'restart;
            }
        }
        break;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FsspConfig {
    /// Outer iterations, one guide call each.
    pub budget: usize,
}

impl Default for FsspConfig {
    fn default() -> Self {
        FsspConfig { budget: 20 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FsspOutcome {
    pub best_perm: Vec<usize>,
    pub best_makespan: f64,
    pub history: Vec<f64>,
}

fn contract(detail: String) -> ExecError {
    ExecError::new(ErrorKind::BadShape, detail)
}

/// Guided local search. Each round descends to a local optimum under the
/// current guidance matrix, scores it under the true times, then asks
/// `guide(pi, T, n, m)` for a new matrix and the set of jobs allowed to move.
pub fn eval_fssp<S: Session + ?Sized>(session: &mut S, inst: &FsspInstance, cfg: &FsspConfig) -> Result<FsspOutcome, ExecError> {
    let (n, m) = (inst.n, inst.m);
    let t_value = json!(inst.times);
    let mut perm = initial_order(inst);
    let mut guidance = inst.times.clone();
    let mut movable: Option<Vec<bool>> = None;
    let mut best_perm = perm.clone();
    let mut best = makespan_unchecked(&inst.times, &perm);
    let mut history = Vec::with_capacity(cfg.budget);
    let shape = Shape::Tuple(vec![Shape::Matrix(n, m), Shape::IntList]);
    for _ in 0..cfg.budget {
        local_search(&mut perm, &guidance, movable.as_deref());
        let v = makespan_unchecked(&inst.times, &perm);
        if v < best {
            best = v;
            best_perm = perm.clone();
        }
        history.push(best);
        let out = session.invoke(vec![json!(perm), t_value.clone(), json!(n), json!(m)], &shape).outcome?;
        let matrix = value_matrix(&out[0]);
        if matrix.iter().flatten().any(|&x| !(x > 0.0)) {
            return Err(contract("guidance matrix entries must be positive".into()));
        }
        let jobs = out[1].as_array().expect("shape checked");
        if jobs.is_empty() {
            return Err(contract("perturbation job list is empty".into()));
        }
        let mut flags = vec![false; n];
        for j in jobs {
            let j = value_i64(j).filter(|&j| j >= 0 && (j as usize) < n).ok_or_else(|| contract(format!("job id {j} out of range")))?;
            flags[j as usize] = true;
        }
        guidance = matrix;
        movable = Some(flags);
    }
    Ok(FsspOutcome { best_perm, best_makespan: best, history })
}

pub const GUIDE_FUNCTION: &str = "guide";

/// Leaves the matrix unchanged and lets every job move.
pub const PLAIN_GUIDE_CODE: &str = "import numpy as np

def guide(current_sequence, time_matrix, n, m):
    return time_matrix, np.arange(n)
";

pub const BRUTE_FORCE_FSSP_MAX: usize = 6;

pub fn brute_force_fssp(inst: &FsspInstance) -> Result<f64, ProblemError> {
    if inst.n > BRUTE_FORCE_FSSP_MAX {
        return Err(ProblemError::TooLarge { limit: BRUTE_FORCE_FSSP_MAX, got: inst.n });
    }
    let mut perm: Vec<usize> = (0..inst.n).collect();
    let mut best = f64::INFINITY;
    super::tsp::permute(&mut perm, 0, &mut |p| best = best.min(makespan_unchecked(&inst.times, p)));
    Ok(best)
}

fn numbers(line: &str) -> Option<Vec<f64>> {
    let v: Result<Vec<f64>, _> = line.split_whitespace().map(str::parse::<f64>).collect();
    v.ok().filter(|v| !v.is_empty())
}

/// Parses flow-shop instances. Accepted layouts:
/// - Taillard benchmark files (header values line, then "processing times :"
///   followed by `m` rows of `n` times); several instances per file.
/// - `n m` followed by `n` rows of `m` times.
/// - `n m` followed by `n` rows of `m` (machine, time) pairs.
pub fn parse_taillard(text: &str) -> Result<Vec<FsspInstance>, ProblemError> {
    let lines: Vec<&str> = text.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    if lines.iter().any(|l| l.to_ascii_lowercase().starts_with("processing times")) {
        let mut out = Vec::new();
        for (idx, line) in lines.iter().enumerate() {
            if !line.to_ascii_lowercase().starts_with("processing times") {
                continue;
            }
            let header = lines[..idx]
                .iter()
                .rev()
                .find_map(|l| numbers(l))
                .ok_or_else(|| ProblemError::Parse("missing size header".into()))?;
            if header.len() < 2 {
                return Err(ProblemError::Parse("size header needs n and m".into()));
            }
            let (n, m) = (header[0] as usize, header[1] as usize);
            let mut flat = Vec::with_capacity(n * m);
            for l in &lines[idx + 1..] {
                if flat.len() >= n * m {
                    break;
                }
                match numbers(l) {
                    Some(v) => flat.extend(v),
                    None => break,
                }
            }
            if flat.len() != n * m {
                return Err(ProblemError::Parse(format!("expected {} processing times, read {}", n * m, flat.len())));
            }
            // machine-major rows
            let times = (0..n).map(|j| (0..m).map(|k| flat[k * n + j]).collect()).collect();
            out.push(FsspInstance::new(format!("taillard-{}", out.len() + 1), times)?);
        }
        return Ok(out);
    }
    let flat: Vec<f64> = lines.iter().filter_map(|l| numbers(l)).flatten().collect();
    if flat.len() < 2 {
        return Err(ProblemError::Parse("missing size header".into()));
    }
    let (n, m) = (flat[0] as usize, flat[1] as usize);
    let body = &flat[2..];
    let times: Vec<Vec<f64>> = if body.len() == n * m {
        body.chunks(m).map(<[f64]>::to_vec).collect()
    } else if body.len() == 2 * n * m {
        body.chunks(2 * m)
            .map(|row| {
                let mut r = vec![0.0; m];
                for pair in row.chunks(2) {
                    let k = pair[0] as usize;
                    if k < m {
                        r[k] = pair[1];
                    }
                }
                r
            })
            .collect()
    } else {
        return Err(ProblemError::Parse(format!("{n}x{m} instance needs {} or {} values, found {}", n * m, 2 * n * m, body.len())));
    };
    Ok(vec![FsspInstance::new("fssp", times)?])
}
