//! Evolutionary search over heuristic programs with a language-model
//! generator, a self-maintained pool of design principles and a rule-based
//! regime controller.

pub mod executor;
pub mod generator;
pub mod insights;
pub mod navigator;
pub mod orchestrator;
pub mod population;
pub mod problems;
pub mod prompt;

pub use executor::{ErrorKind, ExecError, ExecResult, NativeSession, PythonSession, SandboxPolicy, Session, Shape};
pub use generator::{Backend, GenerationRecord, Generator, GeneratorConfig, GeneratorError, LiveGenerator, MockGenerator, Script, ScriptEntry};
pub use insights::{credit_signal, jaccard_similarity, normalized_score, Insight, InsightId, InsightPool, PoolConfig};
pub use navigator::{Navigator, NavigatorConfig, Regime};
pub use orchestrator::{
    parse_event_log, replay_effectiveness, run, summarize, EventKind, Evaluator, FnEvaluator, LogError, LogSummary,
    OperatorWeights, Orchestrator, PythonEvaluator, RunConfig, RunError, RunEvent, RunOutput, RunReport,
};
pub use population::{rank_select_parents, rank_weights, survival_select, Heuristic, Origin, Population, PopulationStats};
pub use problems::{Evaluation, EvalError, Instance, InstanceSpec, Manifest, ProblemError, Task, TaskKind};
pub use prompt::{Strategy, TaskSpec, TemplateSet};
