//! Benchmark tasks, instance sets and fitness evaluation.
//!
//! Every task is minimized: closed tour length for the TSP tasks, excess bin
//! ratio over the lower bound for online bin packing and makespan for the
//! flow shop. A candidate's fitness is the mean objective over the instance
//! set; one failed instance invalidates the candidate.

pub mod bpp;
pub mod fssp;
pub mod gls;
pub mod tsp;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::executor::{ExecError, NativeSession, PythonSession, SandboxPolicy, Session};
use crate::prompt::TaskSpec;

pub use bpp::BppInstance;
pub use fssp::{FsspConfig, FsspInstance};
pub use gls::GlsConfig;
pub use tsp::TspInstance;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProblemError {
    #[error("invalid instance: {0}")]
    Invalid(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("unsupported {0}")]
    Unsupported(String),
    #[error("oracle limited to n <= {limit}, got {got}")]
    TooLarge { limit: usize, got: usize },
    #[error("{0}")]
    Io(String),
    #[error("unknown task '{0}'")]
    UnknownTask(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    TspConstruct,
    TspGls,
    BppOnline,
    FsspGls,
}

impl TaskKind {
    pub const ALL: [TaskKind; 4] = [TaskKind::TspConstruct, TaskKind::TspGls, TaskKind::BppOnline, TaskKind::FsspGls];

    pub fn id(self) -> &'static str {
        match self {
            TaskKind::TspConstruct => "tsp_construct",
            TaskKind::TspGls => "tsp_gls",
            TaskKind::BppOnline => "bpp_online",
            TaskKind::FsspGls => "fssp_gls",
        }
    }

    pub fn function_name(self) -> &'static str {
        match self {
            TaskKind::TspConstruct => tsp::CONSTRUCT_FUNCTION,
            TaskKind::TspGls => gls::UPDATE_FUNCTION,
            TaskKind::BppOnline => bpp::SCORE_FUNCTION,
            TaskKind::FsspGls => fssp::GUIDE_FUNCTION,
        }
    }

    pub fn arity(self) -> usize {
        match self {
            TaskKind::BppOnline => 2,
            _ => 4,
        }
    }

    /// Reference heuristic in the generated-code dialect.
    pub fn baseline_code(self) -> &'static str {
        match self {
            TaskKind::TspConstruct => tsp::NEAREST_NEIGHBOR_CODE,
            TaskKind::TspGls => gls::CLASSIC_UPDATE_CODE,
            TaskKind::BppOnline => bpp::BEST_FIT_CODE,
            TaskKind::FsspGls => fssp::PLAIN_GUIDE_CODE,
        }
    }

    /// Same rule as [`TaskKind::baseline_code`], in process.
    pub fn baseline_session(self) -> NativeSession {
        match self {
            TaskKind::TspConstruct => NativeSession::new(tsp::nearest_neighbor_rule),
            TaskKind::TspGls => NativeSession::new(gls::classic_update_rule),
            TaskKind::BppOnline => NativeSession::new(bpp::best_fit_rule),
            TaskKind::FsspGls => NativeSession::new(|args| {
                let n = args[2].as_u64().ok_or("n")?;
                Ok(serde_json::json!([args[1].clone(), (0..n).collect::<Vec<_>>()]))
            }),
        }
    }

    pub fn task_spec(self) -> TaskSpec {
        let (description, inputs, outputs, extra): (&str, &[&str], &[&str], &str) = match self {
            TaskKind::TspConstruct => (
                "Given a set of nodes with their coordinates, you need to find the shortest route that visits each node exactly once and returns to the starting node. The route is built one step at a time: starting from the current node, choose which unvisited node to visit next.",
                &["current_node", "destination_node", "unvisited_nodes", "distance_matrix"],
                &["next_node"],
                "'current_node' and 'destination_node' are node ids, 'unvisited_nodes' is a numpy array of node ids and 'distance_matrix' is a numpy array of pairwise distances. 'next_node' must be one of 'unvisited_nodes'.",
            ),
            TaskKind::TspGls => (
                "Given a set of nodes with their coordinates, you need to find the shortest route that visits each node exactly once and returns to the starting node. A guided local search runs 2-opt and relocate moves on the distance matrix plus a scaled penalty matrix; whenever it reaches a local optimum, a penalty update decides which edges to penalize so the search can escape.",
                &["penalty_matrix", "tour", "distance_matrix", "edge_counts"],
                &["new_penalty_matrix"],
                "All matrices are numpy arrays of shape (n, n); 'tour' is a numpy array of node ids for the current local optimum; 'edge_counts' counts how often each edge appeared in past local optima. 'new_penalty_matrix' must be an n-by-n matrix of non-negative integers.",
            ),
            TaskKind::BppOnline => (
                "Given a sequence of items and a set of identical bins with a fixed capacity, you need to assign each item to a bin to minimize the total number of bins used. The task can be solved step-by-step by taking the next item and deciding which bin to place it in based on a score.",
                &["item", "bins"],
                &["scores"],
                "The score function is designed to evaluate the placement options for a given item. It takes the item to be placed and the current list of bins as input. It returns a list of numerical scores, with each score corresponding to a bin in the input list. This list of scores guides the heuristic in selecting the most suitable bin for the item according to the generated logic.\n'item' is an integer size and 'bins' is a numpy array of the remaining capacities of the bins that can hold the item; the item goes to the bin with the highest score.",
            ),
            TaskKind::FsspGls => (
                "Given jobs that each visit every machine in the same order, with a processing time per job and machine, you need to find the job order that minimizes the makespan. A local search with insertion and swap moves improves the order; at each local optimum a guide function may reshape the processing time matrix the search sees and pick which jobs may move next.",
                &["current_sequence", "time_matrix", "n", "m"],
                &["new_matrix", "perturb_jobs"],
                "'current_sequence' is a numpy array of 0-based job ids, 'time_matrix' is an n-by-m numpy array of processing times, n is the number of jobs and m the number of machines. Return a positive n-by-m matrix and a non-empty list of 0-based job ids.",
            ),
        };
        TaskSpec {
            task_id: self.id().to_string(),
            description: description.to_string(),
            function_name: self.function_name().to_string(),
            input_names: inputs.iter().map(|s| s.to_string()).collect(),
            output_names: outputs.iter().map(|s| s.to_string()).collect(),
            extra_constraints: format!(
                "{extra}\nOnly use Python standard math modules and numpy; do not read or write files, use the network, or inspect the environment."
            ),
        }
    }

    pub fn default_manifest(self) -> Vec<InstanceSpec> {
        let spec = |size: usize, count: usize| InstanceSpec {
            task: self.id().to_string(),
            size,
            count,
            seed: 2024,
            capacity: None,
            machines: None,
            path: None,
        };
        match self {
            TaskKind::TspConstruct => vec![spec(50, 8)],
            TaskKind::TspGls => vec![spec(20, 4)],
            TaskKind::BppOnline => vec![InstanceSpec { capacity: Some(100), ..spec(1000, 4) }],
            TaskKind::FsspGls => vec![InstanceSpec { machines: Some(5), ..spec(20, 4) }],
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for TaskKind {
    type Err = ProblemError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "tsp" | "tsp_construct" => Ok(TaskKind::TspConstruct),
            "tsp_gls" | "gls" => Ok(TaskKind::TspGls),
            "bpp" | "bpp_online" | "obp" => Ok(TaskKind::BppOnline),
            "fssp" | "fssp_gls" | "pfsp" => Ok(TaskKind::FsspGls),
            _ => Err(ProblemError::UnknownTask(s.to_string())),
        }
    }
}

/// Task plus its evaluator settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub kind: TaskKind,
    #[serde(default)]
    pub gls: GlsConfig,
    #[serde(default)]
    pub fssp: FsspConfig,
}

impl Task {
    pub fn new(kind: TaskKind) -> Self {
        Task { kind, gls: GlsConfig::default(), fssp: FsspConfig::default() }
    }

    /// Objective of one instance under the session's heuristic.
    pub fn evaluate_instance<S: Session + ?Sized>(&self, session: &mut S, instance: &Instance) -> Result<f64, ExecError> {
        match (self.kind, instance) {
            (TaskKind::TspConstruct, Instance::Tsp(i)) => tsp::eval_tsp_construct(session, i).map(|(_, l)| l),
            (TaskKind::TspGls, Instance::Tsp(i)) => gls::eval_tsp_gls(session, i, &self.gls).map(|o| o.best_length),
            (TaskKind::BppOnline, Instance::Bpp(i)) => bpp::eval_bpp_online(session, i).map(|(_, e)| e),
            (TaskKind::FsspGls, Instance::Fssp(i)) => fssp::eval_fssp(session, i, &self.fssp).map(|o| o.best_makespan),
            (kind, inst) => Err(ExecError::new(
                crate::executor::ErrorKind::Protocol,
                format!("instance {} does not belong to task {kind}", inst.name()),
            )),
        }
    }

    /// Reference objective: nearest neighbour for the TSP tasks, best fit for
    /// bin packing and the ascending-total-time order for the flow shop.
    pub fn baseline(&self, instance: &Instance) -> f64 {
        match instance {
            Instance::Tsp(i) => i.tour_length(&tsp::nearest_neighbor(i)),
            Instance::Bpp(i) => i.excess(bpp::best_fit(i).bins()),
            Instance::Fssp(i) => fssp::makespan_unchecked(&i.times, &fssp::initial_order(i)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Instance {
    Tsp(TspInstance),
    Bpp(BppInstance),
    Fssp(FsspInstance),
}

impl Instance {
    pub fn name(&self) -> &str {
        match self {
            Instance::Tsp(i) => &i.name,
            Instance::Bpp(i) => &i.name,
            Instance::Fssp(i) => &i.name,
        }
    }

    pub fn size(&self) -> usize {
        match self {
            Instance::Tsp(i) => i.n(),
            Instance::Bpp(i) => i.items.len(),
            Instance::Fssp(i) => i.n,
        }
    }
}

/// One manifest entry: `count` generated instances of one size, or the
/// instances in `path`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceSpec {
    pub task: String,
    #[serde(default)]
    pub size: usize,
    #[serde(default = "one")]
    pub count: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capacity: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub machines: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(default)]
    pub instances: Vec<InstanceSpec>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self, ProblemError> {
        let text = std::fs::read_to_string(path).map_err(|e| ProblemError::Io(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| ProblemError::Parse(format!("{}: {e}", path.display())))
    }
}

/// Generates or loads the instances of one entry. Instance `i` of a
/// generated entry uses seed `seed + i`. Relative paths resolve against
/// `base`.
pub fn load_instances(spec: &InstanceSpec, base: Option<&Path>) -> Result<Vec<Instance>, ProblemError> {
    let kind: TaskKind = spec.task.parse()?;
    if let Some(p) = &spec.path {
        let path = match base {
            Some(b) if p.is_relative() => b.join(p),
            _ => p.clone(),
        };
        return match kind {
            TaskKind::TspConstruct | TaskKind::TspGls => Ok(vec![Instance::Tsp(tsp::load_tsplib(&path)?)]),
            TaskKind::FsspGls => {
                let text = std::fs::read_to_string(&path).map_err(|e| ProblemError::Io(format!("{}: {e}", path.display())))?;
                Ok(fssp::parse_taillard(&text)?.into_iter().map(Instance::Fssp).collect())
            }
            TaskKind::BppOnline => {
                let text = std::fs::read_to_string(&path).map_err(|e| ProblemError::Io(format!("{}: {e}", path.display())))?;
                let items: Result<Vec<u32>, _> = text.split_whitespace().map(str::parse).collect();
                let items = items.map_err(|e| ProblemError::Parse(format!("{}: {e}", path.display())))?;
                let cap = spec.capacity.ok_or_else(|| ProblemError::Invalid("bin packing file needs a capacity".into()))?;
                Ok(vec![Instance::Bpp(BppInstance::new(path.display().to_string(), cap, items)?)])
            }
        };
    }
    (0..spec.count)
        .map(|i| {
            let seed = spec.seed.wrapping_add(i as u64);
            Ok(match kind {
                TaskKind::TspConstruct | TaskKind::TspGls => Instance::Tsp(tsp::gen_tsp(spec.size, seed)?),
                TaskKind::BppOnline => Instance::Bpp(bpp::gen_bpp_weibull(spec.size, spec.capacity.unwrap_or(100), seed)?),
                TaskKind::FsspGls => Instance::Fssp(fssp::gen_fssp(spec.size, spec.machines.unwrap_or(5), seed)?),
            })
        })
        .collect()
}

pub fn load_manifest_instances(specs: &[InstanceSpec], base: Option<&Path>) -> Result<Vec<Instance>, ProblemError> {
    let mut out = Vec::new();
    for s in specs {
        out.extend(load_instances(s, base)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Error)]
#[error("instance {instance}: {error}")]
pub struct EvalError {
    pub instance: usize,
    pub error: ExecError,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub objective: f64,
    pub per_instance: Vec<f64>,
    pub wall_time: Duration,
}

/// Mean objective over `instances`; the first failing instance aborts.
pub fn fitness<S: Session + ?Sized>(session: &mut S, task: &Task, instances: &[Instance]) -> Result<Evaluation, EvalError> {
    assert!(!instances.is_empty(), "fitness needs at least one instance");
    let start = Instant::now();
    let mut per_instance = Vec::with_capacity(instances.len());
    for (i, inst) in instances.iter().enumerate() {
        let v = task.evaluate_instance(session, inst).map_err(|error| EvalError { instance: i, error })?;
        per_instance.push(v);
    }
    let objective = per_instance.iter().sum::<f64>() / per_instance.len() as f64;
    Ok(Evaluation { objective, per_instance, wall_time: start.elapsed() })
}

/// Loads `code` into a fresh sandbox session and evaluates it.
pub fn evaluate_code(code: &str, task: &Task, instances: &[Instance], policy: &SandboxPolicy) -> Result<Evaluation, EvalError> {
    let mut session = PythonSession::load(code, task.kind.function_name(), task.kind.arity(), policy)
        .map_err(|error| EvalError { instance: 0, error })?;
    fitness(&mut session, task, instances)
}
