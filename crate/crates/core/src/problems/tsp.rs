//! Euclidean TSP: instances, TSPLIB I/O, step-by-step construction
//! evaluation, nearest-neighbour baseline and a brute-force oracle.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use super::ProblemError;
use crate::executor::{matrix_value, value_i64, ErrorKind, ExecError, Session, Shape};

#[derive(Debug, Clone, PartialEq)]
pub struct TspInstance {
    pub name: String,
    pub coords: Vec<[f64; 2]>,
    pub dist: Vec<Vec<f64>>,
}

impl TspInstance {
    pub fn from_coords(name: impl Into<String>, coords: Vec<[f64; 2]>) -> Self {
        let dist = coords
            .iter()
            .map(|a| coords.iter().map(|b| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()).collect())
            .collect();
        TspInstance { name: name.into(), coords, dist }
    }

    /// TSPLIB EUC_2D convention: Euclidean distance rounded to the nearest
    /// integer.
    pub fn from_coords_rounded(name: impl Into<String>, coords: Vec<[f64; 2]>) -> Self {
        let mut inst = Self::from_coords(name, coords);
        for row in &mut inst.dist {
            for d in row.iter_mut() {
                *d = (*d + 0.5).floor();
            }
        }
        inst
    }

    pub fn n(&self) -> usize {
        self.coords.len()
    }

    pub fn tour_length(&self, tour: &[usize]) -> f64 {
        tour_length(&self.dist, tour)
    }
}

/// Closed tour length under `dist`.
pub fn tour_length(dist: &[Vec<f64>], tour: &[usize]) -> f64 {
    if tour.len() < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    for w in tour.windows(2) {
        total += dist[w[0]][w[1]];
    }
    total + dist[tour[tour.len() - 1]][tour[0]]
}

/// `n` uniform points in the unit square.
pub fn gen_tsp(n: usize, seed: u64) -> Result<TspInstance, ProblemError> {
    if n < 3 {
        return Err(ProblemError::Invalid(format!("TSP needs at least 3 nodes, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coords = (0..n).map(|_| [rng.random::<f64>(), rng.random::<f64>()]).collect();
    Ok(TspInstance::from_coords(format!("rand{n}-{seed}"), coords))
}

pub fn parse_tsplib(text: &str) -> Result<TspInstance, ProblemError> {
    let mut name = String::from("tsplib");
    let mut dimension: Option<usize> = None;
    let mut weight_type: Option<String> = None;
    let mut coords = Vec::new();
    let mut in_coords = false;
    for raw in text.lines() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if in_coords {
            if line == "EOF" || line.chars().next().is_some_and(|c| c.is_ascii_alphabetic()) {
                in_coords = false;
                if line == "EOF" {
                    break;
                }
            } else {
                let parts: Vec<&str> = line.split_whitespace().collect();
                if parts.len() < 3 {
                    return Err(ProblemError::Parse(format!("bad coordinate line '{line}'")));
                }
                let x = parts[1].parse::<f64>().map_err(|e| ProblemError::Parse(format!("'{line}': {e}")))?;
                let y = parts[2].parse::<f64>().map_err(|e| ProblemError::Parse(format!("'{line}': {e}")))?;
                coords.push([x, y]);
                continue;
            }
        }
        if line.starts_with("NODE_COORD_SECTION") {
            in_coords = true;
            continue;
        }
        if let Some((key, value)) = line.split_once(':') {
            let value = value.trim();
            match key.trim() {
                "NAME" => name = value.to_string(),
                "DIMENSION" => {
                    dimension = Some(value.parse().map_err(|e| ProblemError::Parse(format!("DIMENSION '{value}': {e}")))?)
                }
                "EDGE_WEIGHT_TYPE" => weight_type = Some(value.to_string()),
                _ => {}
            }
        }
    }
    match weight_type.as_deref() {
        Some("EUC_2D") => {}
        Some(other) => return Err(ProblemError::Unsupported(format!("edge weight type {other}"))),
        None => return Err(ProblemError::Parse("missing EDGE_WEIGHT_TYPE".into())),
    }
    let dim = dimension.ok_or_else(|| ProblemError::Parse("missing DIMENSION".into()))?;
    if coords.len() != dim {
        return Err(ProblemError::Parse(format!("DIMENSION is {dim} but {} coordinates were read", coords.len())));
    }
    if dim < 3 {
        return Err(ProblemError::Invalid(format!("TSP needs at least 3 nodes, got {dim}")));
    }
    Ok(TspInstance::from_coords_rounded(name, coords))
}

pub fn load_tsplib(path: &Path) -> Result<TspInstance, ProblemError> {
    let text = std::fs::read_to_string(path).map_err(|e| ProblemError::Io(format!("{}: {e}", path.display())))?;
    parse_tsplib(&text)
}

pub fn write_tsplib(inst: &TspInstance) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "NAME : {}", inst.name);
    let _ = writeln!(s, "TYPE : TSP");
    let _ = writeln!(s, "DIMENSION : {}", inst.n());
    let _ = writeln!(s, "EDGE_WEIGHT_TYPE : EUC_2D");
    let _ = writeln!(s, "NODE_COORD_SECTION");
    for (i, c) in inst.coords.iter().enumerate() {
        // `{:?}` prints the shortest string that parses back to the same f64
        let _ = writeln!(s, "{} {:?} {:?}", i + 1, c[0], c[1]);
    }
    s.push_str("EOF\n");
    s
}

/// Greedy nearest neighbour from node 0; ties go to the lower index.
pub fn nearest_neighbor(inst: &TspInstance) -> Vec<usize> {
    let n = inst.n();
    let mut visited = vec![false; n];
    let mut tour = Vec::with_capacity(n);
    let mut cur = 0;
    visited[0] = true;
    tour.push(0);
    for _ in 1..n {
        let next = (0..n)
            .filter(|&j| !visited[j])
            .min_by(|&a, &b| inst.dist[cur][a].total_cmp(&inst.dist[cur][b]).then(a.cmp(&b)))
            .expect("unvisited node remains");
        visited[next] = true;
        tour.push(next);
        cur = next;
    }
    tour
}

pub const BRUTE_FORCE_TSP_MAX: usize = 9;

/// Optimal tour length by enumerating permutations with node 0 fixed.
pub fn brute_force_tsp(inst: &TspInstance) -> Result<f64, ProblemError> {
    let n = inst.n();
    if n > BRUTE_FORCE_TSP_MAX {
        return Err(ProblemError::TooLarge { limit: BRUTE_FORCE_TSP_MAX, got: n });
    }
    let mut rest: Vec<usize> = (1..n).collect();
    let mut best = f64::INFINITY;
    let mut tour = vec![0; n];
    permute(&mut rest, 0, &mut |perm| {
        tour[1..].copy_from_slice(perm);
        best = best.min(inst.tour_length(&tour));
    });
    Ok(best)
}

/// Visits every ordering of `items[k..]` in place.
pub(crate) fn permute(items: &mut [usize], k: usize, visit: &mut dyn FnMut(&[usize])) {
    if k == items.len() {
        visit(items);
        return;
    }
    for i in k..items.len() {
        items.swap(k, i);
        permute(items, k + 1, visit);
        items.swap(k, i);
    }
}

fn contract(detail: String) -> ExecError {
    ExecError::new(ErrorKind::BadShape, detail)
}

/// Builds a tour by repeatedly asking the heuristic for the next node.
/// Returns the closed tour and its length.
pub fn eval_tsp_construct<S: Session + ?Sized>(session: &mut S, inst: &TspInstance) -> Result<(Vec<usize>, f64), ExecError> {
    let n = inst.n();
    let d = matrix_value(&inst.dist);
    let origin = 0usize;
    let mut unvisited: Vec<usize> = (1..n).collect();
    let mut tour = vec![origin];
    let mut cur = origin;
    while !unvisited.is_empty() {
        let args = vec![json!(cur), json!(origin), json!(unvisited), d.clone()];
        let v = session.invoke(args, &Shape::Integer).outcome?;
        let next = value_i64(&v).ok_or_else(|| contract(format!("node id {v} is not an integer")))?;
        let pos = unvisited
            .iter()
            .position(|&u| u as i64 == next)
            .ok_or_else(|| contract(format!("node {next} is not an unvisited node")))?;
        unvisited.remove(pos);
        tour.push(next as usize);
        cur = next as usize;
    }
    let len = inst.tour_length(&tour);
    Ok((tour, len))
}

pub const CONSTRUCT_FUNCTION: &str = "select_next_node";

pub const NEAREST_NEIGHBOR_CODE: &str = "import numpy as np

def select_next_node(current_node, destination_node, unvisited_nodes, distance_matrix):
    distances = distance_matrix[current_node][unvisited_nodes]
    return int(unvisited_nodes[int(np.argmin(distances))])
";

/// Native nearest-neighbour rule with the construction signature.
pub fn nearest_neighbor_rule(args: &[Value]) -> Result<Value, String> {
    let cur = args[0].as_u64().ok_or("current node")? as usize;
    let unvisited = args[2].as_array().ok_or("unvisited")?;
    let row = args[3].as_array().and_then(|m| m.get(cur)).and_then(Value::as_array).ok_or("distance row")?;
    let mut best: Option<(f64, u64)> = None;
    for u in unvisited {
        let u = u.as_u64().ok_or("node id")?;
        let d = row[u as usize].as_f64().ok_or("distance")?;
        if best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, u));
        }
    }
    Ok(json!(best.ok_or("no unvisited nodes")?.1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::executor::{NativeSession, PythonSession, SandboxPolicy};

    fn approx(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-9
    }

    #[test]
    fn generation_is_deterministic_and_metric() {
        let a = gen_tsp(10, 7).unwrap();
        let b = gen_tsp(10, 7).unwrap();
        assert_eq!(a.coords, b.coords);
        let c = gen_tsp(20, 3).unwrap();
        for i in 0..20 {
            assert_eq!(c.dist[i][i], 0.0);
            for j in 0..20 {
                assert_eq!(c.dist[i][j], c.dist[j][i]);
                let [x1, y1] = c.coords[i];
                let [x2, y2] = c.coords[j];
                assert!((c.dist[i][j] - ((x1 - x2).hypot(y1 - y2))).abs() < 1e-9);
                for k in 0..20 {
                    assert!(c.dist[i][k] <= c.dist[i][j] + c.dist[j][k] + 1e-12);
                }
            }
        }
        assert!(gen_tsp(2, 0).is_err());
    }

    #[test]
    fn nn_hand_example() {
        let inst = TspInstance::from_coords("t", vec![[0.0, 0.0], [0.0, 1.0], [5.0, 0.0]]);
        let mut s = NativeSession::new(nearest_neighbor_rule);
        let (tour, len) = eval_tsp_construct(&mut s, &inst).unwrap();
        assert_eq!(tour, vec![0, 1, 2]);
        assert!(approx(len, 1.0 + 26f64.sqrt() + 5.0));
        assert!(approx(len, 11.0990195135927845));
    }

    #[test]
    fn python_nn_matches_native() {
        let inst = gen_tsp(12, 5).unwrap();
        let mut py = PythonSession::load(NEAREST_NEIGHBOR_CODE, CONSTRUCT_FUNCTION, 4, &SandboxPolicy::default()).unwrap();
        let (tour, _) = eval_tsp_construct(&mut py, &inst).unwrap();
        assert_eq!(tour, nearest_neighbor(&inst));
    }

    #[test]
    fn invalid_choices_are_rejected() {
        let inst = gen_tsp(5, 1).unwrap();
        let mut s = NativeSession::new(|_| Ok(json!(0)));
        assert_eq!(eval_tsp_construct(&mut s, &inst).unwrap_err().kind, ErrorKind::BadShape);
        let mut s = NativeSession::new(|_| Ok(json!(99)));
        assert!(eval_tsp_construct(&mut s, &inst).is_err());
    }

    #[test]
    fn brute_force_unit_square() {
        let inst = TspInstance::from_coords("sq", vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]);
        assert!(approx(brute_force_tsp(&inst).unwrap(), 4.0));
        assert!(approx(inst.tour_length(&nearest_neighbor(&inst)), 4.0));
        assert!(brute_force_tsp(&gen_tsp(10, 0).unwrap()).is_err());
    }

    #[test]
    fn triangle_tours_are_all_equal() {
        let inst = gen_tsp(3, 11).unwrap();
        assert!(approx(inst.tour_length(&[0, 1, 2]), inst.tour_length(&[0, 2, 1])));
    }

    #[test]
    fn tsplib_round_trip_and_errors() {
        let inst = gen_tsp(52, 9).unwrap();
        let text = write_tsplib(&inst);
        let back = parse_tsplib(&text).unwrap();
        assert_eq!(back.n(), 52);
        assert_eq!(back.coords, inst.coords);
        let explicit = "NAME : x\nTYPE : TSP\nDIMENSION : 3\nEDGE_WEIGHT_TYPE : EXPLICIT\nEOF\n";
        match parse_tsplib(explicit) {
            Err(ProblemError::Unsupported(m)) => assert!(m.contains("EXPLICIT")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn tsplib_rounds_distances() {
        let text = "NAME: t\nDIMENSION: 3\nEDGE_WEIGHT_TYPE: EUC_2D\nNODE_COORD_SECTION\n1 0 0\n2 3 4\n3 0 1.4\nEOF\n";
        let inst = parse_tsplib(text).unwrap();
        assert_eq!(inst.dist[0][1], 5.0);
        assert_eq!(inst.dist[0][2], 1.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(40))]
            #[test]
            fn nn_never_beats_optimum(n in 3usize..=8, seed in 0u64..1000) {
                let inst = gen_tsp(n, seed).unwrap();
                let nn = inst.tour_length(&nearest_neighbor(&inst));
                prop_assert!(nn >= brute_force_tsp(&inst).unwrap() - 1e-9);
            }
        }
    }
}
