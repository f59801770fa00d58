//! Guided local search for the TSP. Local search runs on the penalized
//! matrix `D + lambda * P`; at each local optimum the heuristic proposes a new
//! integer penalty matrix. The best tour is tracked under the true `D`.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::tsp::{nearest_neighbor, tour_length, TspInstance};
use crate::executor::{matrix_value, value_matrix, ErrorKind, ExecError, Session, Shape};

const IMPROVEMENT_EPS: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GlsConfig {
    /// lambda = lambda_scale * mean nonzero distance.
    pub lambda_scale: f64,
    /// Outer iterations, one heuristic call each.
    pub budget: usize,
}

impl Default for GlsConfig {
    fn default() -> Self {
        GlsConfig { lambda_scale: 0.1, budget: 50 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlsOutcome {
    pub best_tour: Vec<usize>,
    pub best_length: f64,
    pub initial_length: f64,
    /// Best true length after each outer iteration.
    pub history: Vec<f64>,
}

pub fn mean_nonzero(d: &[Vec<f64>]) -> f64 {
    let (sum, count) = d.iter().flatten().filter(|x| **x != 0.0).fold((0.0, 0usize), |(s, c), x| (s + x, c + 1));
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// `D' = D + lambda * P`.
pub fn penalized_matrix(d: &[Vec<f64>], p: &[Vec<f64>], lambda: f64) -> Vec<Vec<f64>> {
    d.iter().zip(p).map(|(dr, pr)| dr.iter().zip(pr).map(|(a, b)| a + lambda * b).collect()).collect()
}

fn two_opt_pass(tour: &mut [usize], d: &[Vec<f64>]) -> bool {
    let n = tour.len();
    for i in 0..n - 1 {
        for j in i + 2..n {
            if i == 0 && j == n - 1 {
                continue;
            }
            let (a, b, c, e) = (tour[i], tour[i + 1], tour[j], tour[(j + 1) % n]);
            let delta = d[a][c] + d[b][e] - d[a][b] - d[c][e];
            if delta < -IMPROVEMENT_EPS {
                tour[i + 1..=j].reverse();
                return true;
            }
        }
    }
    false
}

fn relocate_pass(tour: &mut Vec<usize>, d: &[Vec<f64>]) -> bool {
    let n = tour.len();
    if n < 4 {
        return false;
    }
    for i in 0..n {
        let x = tour[i];
        let p = tour[(i + n - 1) % n];
        let q = tour[(i + 1) % n];
        let removal = d[p][x] + d[x][q] - d[p][q];
        for j in 0..n {
            // edge (tour[j], tour[j+1]) must not touch x
            let u = tour[j];
            let v = tour[(j + 1) % n];
            if u == x || v == x {
                continue;
            }
            let delta = d[u][x] + d[x][v] - d[u][v] - removal;
            if delta < -IMPROVEMENT_EPS {
                tour.remove(i);
                let pos = tour.iter().position(|&t| t == u).expect("u stays in tour");
                tour.insert(pos + 1, x);
                return true;
            }
        }
    }
    false
}

/// First-improvement 2-opt and relocate until neither finds a gain.
pub fn local_search(tour: &mut Vec<usize>, d: &[Vec<f64>]) {
    if tour.len() < 4 {
        return;
    }
    while two_opt_pass(tour, d) || relocate_pass(tour, d) {}
}

fn edge_counts_add(counts: &mut [Vec<f64>], tour: &[usize]) {
    let n = tour.len();
    for k in 0..n {
        let (a, b) = (tour[k], tour[(k + 1) % n]);
        counts[a][b] += 1.0;
        counts[b][a] += 1.0;
    }
}

/// Checks a proposed penalty matrix and returns its symmetric, zero-diagonal
/// form.
pub fn sanitize_penalty(v: &Value, n: usize) -> Result<Vec<Vec<f64>>, ExecError> {
    let mut p = value_matrix(v);
    for row in &p {
        for &x in row {
            if x < 0.0 || x.fract() != 0.0 {
                return Err(ExecError::new(ErrorKind::BadShape, format!("penalty entries must be non-negative integers, got {x}")));
            }
        }
    }
    for i in 0..n {
        p[i][i] = 0.0;
        for j in i + 1..n {
            let m = p[i][j].max(p[j][i]);
            p[i][j] = m;
            p[j][i] = m;
        }
    }
    Ok(p)
}

pub fn eval_tsp_gls<S: Session + ?Sized>(session: &mut S, inst: &TspInstance, cfg: &GlsConfig) -> Result<GlsOutcome, ExecError> {
    let n = inst.n();
    let d = &inst.dist;
    let lambda = cfg.lambda_scale * mean_nonzero(d);
    let d_value = matrix_value(d);
    let mut tour = nearest_neighbor(inst);
    let initial_length = tour_length(d, &tour);
    let mut best_tour = tour.clone();
    let mut best_length = initial_length;
    let mut p = vec![vec![0.0; n]; n];
    let mut counts = vec![vec![0.0; n]; n];
    let mut history = Vec::with_capacity(cfg.budget);
    for _ in 0..cfg.budget {
        let guided = penalized_matrix(d, &p, lambda);
        local_search(&mut tour, &guided);
        let len = tour_length(d, &tour);
        if len < best_length {
            best_length = len;
            best_tour = tour.clone();
        }
        history.push(best_length);
        edge_counts_add(&mut counts, &tour);
        let args = vec![matrix_value(&p), json!(tour), d_value.clone(), matrix_value(&counts)];
        let v = session.invoke(args, &Shape::Matrix(n, n)).outcome?;
        p = sanitize_penalty(&v, n)?;
    }
    Ok(GlsOutcome { best_tour, best_length, initial_length, history })
}

pub const UPDATE_FUNCTION: &str = "update_penalty";

/// Classic rule: penalize the tour edges of maximal utility `d / (1 + p)`.
pub const CLASSIC_UPDATE_CODE: &str = "import numpy as np

def update_penalty(penalty_matrix, tour, distance_matrix, edge_counts):
    n = len(tour)
    a = tour
    b = np.roll(tour, -1)
    util = distance_matrix[a, b] / (1.0 + penalty_matrix[a, b])
    best = util.max()
    new = penalty_matrix.copy()
    for i in range(n):
        if util[i] >= best - 1e-12:
            new[a[i], b[i]] += 1
            new[b[i], a[i]] += 1
    return new
";

pub fn classic_update_rule(args: &[Value]) -> Result<Value, String> {
    let mut p = value_matrix(&args[0]);
    let tour: Vec<usize> = args[1].as_array().ok_or("tour")?.iter().filter_map(Value::as_u64).map(|x| x as usize).collect();
    let d = value_matrix(&args[2]);
    let n = tour.len();
    let util: Vec<f64> = (0..n).map(|k| {
        let (a, b) = (tour[k], tour[(k + 1) % n]);
        d[a][b] / (1.0 + p[a][b])
    }).collect();
    let best = util.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    for k in 0..n {
        if util[k] >= best - 1e-12 {
            let (a, b) = (tour[k], tour[(k + 1) % n]);
            p[a][b] += 1.0;
            p[b][a] += 1.0;
        }
    }
    Ok(matrix_value(&p))
}
