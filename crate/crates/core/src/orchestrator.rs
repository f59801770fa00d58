//! The evolutionary loop: initialization, per-generation operator firing,
//! evaluation, insight credit and extraction, regime navigation, survival,
//! and persistence of the run as an ordered event log.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::executor::SandboxPolicy;
use crate::generator::{self, GenerationRecord, Generator, GeneratorConfig, GeneratorError};
use crate::insights::{
    credit_signal, Admission, CreditUpdate, Eviction, Insight, InsightId, InsightPool, PoolConfig, EFFECTIVENESS_MAX,
    EFFECTIVENESS_MIN, INITIAL_EFFECTIVENESS,
};
use crate::navigator::{Navigator, NavigatorConfig, NavigatorSnapshot, Regime};
use crate::population::{
    is_duplicate, rank_select_parents, stats, survival_select, Heuristic, Origin, Population, PopulationStats,
};
use crate::problems::{
    evaluate_code, load_manifest_instances, EvalError, Evaluation, FsspConfig, GlsConfig, Instance, InstanceSpec,
    ProblemError, Task, TaskKind,
};
use crate::prompt::{
    compose, compose_insight_extraction, elite_count, extract_code, parse_heuristic_response, parse_insight_list,
    ParseError, PromptError, Strategy, TaskSpec, TemplateSet, EXTRACT_TAG,
};

pub const EVENTS_FILE: &str = "events.jsonl";
pub const REPORT_FILE: &str = "report.json";
pub const BEST_FILE: &str = "best_heuristic.py";
pub const CONFIG_ECHO_FILE: &str = "config.toml";

/// Firing probability per evolution operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OperatorWeights {
    #[serde(rename = "E1")]
    pub e1: f64,
    #[serde(rename = "E2")]
    pub e2: f64,
    #[serde(rename = "M1")]
    pub m1: f64,
    #[serde(rename = "M2")]
    pub m2: f64,
    #[serde(rename = "M3")]
    pub m3: f64,
}

impl Default for OperatorWeights {
    fn default() -> Self {
        OperatorWeights { e1: 1.0, e2: 1.0, m1: 1.0, m2: 1.0, m3: 1.0 }
    }
}

impl OperatorWeights {
    pub fn get(&self, s: Strategy) -> f64 {
        match s {
            Strategy::E1 => self.e1,
            Strategy::E2 => self.e2,
            Strategy::M1 => self.m1,
            Strategy::M2 => self.m2,
            Strategy::M3 => self.m3,
            Strategy::I1 => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub task: String,
    pub pop_size: usize,
    pub generations: u32,
    pub weights: OperatorWeights,
    /// Parents handed to E1 and E2.
    pub recombination_arity: usize,
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    /// Python files adopted as the initial population instead of I1 calls.
    pub seed_heuristics: Vec<PathBuf>,
    /// I1 attempts allowed per population slot.
    pub init_budget_factor: usize,
    /// Extra generator calls per operator slot after an unparseable reply.
    pub parse_retries: usize,
    pub extraction: bool,
    pub template_dir: Option<PathBuf>,
    /// Empty means the task's default instance set.
    pub manifest: Vec<InstanceSpec>,
    pub pool: PoolConfig,
    pub navigator: NavigatorConfig,
    pub generator: GeneratorConfig,
    pub sandbox: SandboxPolicy,
    pub gls: GlsConfig,
    pub fssp: FsspConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            task: TaskKind::BppOnline.id().to_string(),
            pop_size: 4,
            generations: 8,
            weights: OperatorWeights::default(),
            recombination_arity: 2,
            seed: 0,
            out_dir: None,
            seed_heuristics: Vec::new(),
            init_budget_factor: 3,
            parse_retries: 2,
            extraction: true,
            template_dir: None,
            manifest: Vec::new(),
            pool: PoolConfig::default(),
            navigator: NavigatorConfig::default(),
            generator: GeneratorConfig::default(),
            sandbox: SandboxPolicy::default(),
            gls: GlsConfig::default(),
            fssp: FsspConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, RunError> {
        let text = std::fs::read_to_string(path).map_err(|e| RunError::Config(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| RunError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn task_kind(&self) -> Result<TaskKind, RunError> {
        self.task.parse().map_err(RunError::Problem)
    }

    pub fn validate(&self) -> Result<(), RunError> {
        self.task_kind()?;
        if self.pop_size < 1 || self.generations < 1 {
            return Err(RunError::Config("pop_size and generations must be >= 1".into()));
        }
        if self.recombination_arity < 1 || self.init_budget_factor < 1 {
            return Err(RunError::Config("recombination_arity and init_budget_factor must be >= 1".into()));
        }
        for s in Strategy::EVOLUTION {
            let w = self.weights.get(s);
            if !(0.0..=1.0).contains(&w) {
                return Err(RunError::Config(format!("weight of {s} must be in [0, 1], got {w}")));
            }
        }
        self.pool.validate().map_err(|e| RunError::Config(e.to_string()))?;
        self.sandbox.validate().map_err(RunError::Config)?;
        Ok(())
    }

    pub fn instance_specs(&self) -> Result<Vec<InstanceSpec>, RunError> {
        Ok(if self.manifest.is_empty() { self.task_kind()?.default_manifest() } else { self.manifest.clone() })
    }

    fn task(&self) -> Result<Task, RunError> {
        Ok(Task { kind: self.task_kind()?, gls: self.gls.clone(), fssp: self.fssp.clone() })
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Generator(#[from] GeneratorError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("initialization produced {valid} of {needed} members in {attempts} attempts")]
    Init { attempts: usize, valid: usize, needed: usize },
    #[error("io: {0}")]
    Io(String),
}

/// Scores one program. Implementations must be deterministic for replay
/// equality to hold.
pub trait Evaluator {
    fn evaluate(&self, code: &str) -> Result<Evaluation, EvalError>;

    /// Mean objective of the task's reference heuristic, when known.
    fn baseline(&self) -> Option<f64> {
        None
    }
}

/// Sandboxed evaluation over a fixed instance set.
#[derive(Debug, Clone)]
pub struct PythonEvaluator {
    pub task: Task,
    pub instances: Vec<Instance>,
    pub policy: SandboxPolicy,
}

impl Evaluator for PythonEvaluator {
    fn evaluate(&self, code: &str) -> Result<Evaluation, EvalError> {
        evaluate_code(code, &self.task, &self.instances, &self.policy)
    }

    fn baseline(&self) -> Option<f64> {
        if self.instances.is_empty() {
            return None;
        }
        Some(self.instances.iter().map(|i| self.task.baseline(i)).sum::<f64>() / self.instances.len() as f64)
    }
}

/// Closure-backed evaluator, mostly for tests.
pub struct FnEvaluator<F>(pub F);

impl<F: Fn(&str) -> Result<Evaluation, EvalError>> Evaluator for FnEvaluator<F> {
    fn evaluate(&self, code: &str) -> Result<Evaluation, EvalError> {
        (self.0)(code)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Init,
    Prompt,
    GenerationResult,
    Evaluation,
    Credit,
    Admission,
    Eviction,
    Regime,
    Survival,
    Extraction,
    Error,
}

/// One log record. `seq` is a logical clock so logs compare byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEvent {
    pub seq: u64,
    pub kind: EventKind,
    pub generation: u32,
    pub payload: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedInsight {
    pub id: InsightId,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "phase", rename_all = "snake_case")]
pub enum InitPayload {
    Config {
        task: String,
        pop_size: usize,
        generations: u32,
        seed: u64,
        ema_rate: f64,
        seed_insights: Vec<SeedInsight>,
    },
    Population {
        source: String,
        attempts: usize,
        members: Vec<Heuristic>,
        stats: PopulationStats,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptPayload {
    pub strategy: String,
    pub attempt: u32,
    pub prompt: String,
    pub response: Option<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResultPayload {
    pub strategy: String,
    pub heuristic: u64,
    pub parents: Vec<u64>,
    pub insights: Vec<InsightId>,
    pub directive: String,
    pub thought: String,
    pub code: String,
    /// Set when the thought was taken from the parent.
    pub thought_inherited: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationPayload {
    pub heuristic: u64,
    pub objective: Option<f64>,
    pub per_instance: Vec<f64>,
    pub error: Option<EvalError>,
    pub duplicate: bool,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreditPayload {
    pub heuristic: u64,
    pub objective: f64,
    pub reference: PopulationStats,
    pub g_eff: f64,
    pub updates: Vec<CreditUpdate>,
    pub skipped: Vec<InsightId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmissionPayload {
    pub text: String,
    pub admission: Admission,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimePayload {
    pub regime: Regime,
    pub directive: String,
    pub navigator: NavigatorSnapshot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalPayload {
    pub candidates: usize,
    pub members: Vec<Heuristic>,
    pub dropped: Vec<u64>,
    pub stats: PopulationStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionPayload {
    pub elites: Vec<u64>,
    pub candidates: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorPayload {
    pub stage: String,
    pub strategy: Option<String>,
    pub kind: String,
    pub detail: String,
}

struct EventLog {
    events: Vec<RunEvent>,
    sink: Option<BufWriter<File>>,
    io_error: Option<String>,
}

impl EventLog {
    fn emit(&mut self, kind: EventKind, generation: u32, payload: impl Serialize) {
        let event = RunEvent {
            seq: self.events.len() as u64,
            kind,
            generation,
            payload: serde_json::to_value(payload).expect("payload serializes"),
        };
        if let Some(w) = self.sink.as_mut() {
            let line = serde_json::to_string(&event).expect("event serializes");
            if let Err(e) = writeln!(w, "{line}") {
                self.io_error.get_or_insert(e.to_string());
            }
        }
        self.events.push(event);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub generation: u32,
    pub best: f64,
    pub avg: f64,
    pub worst: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeRow {
    pub generation: u32,
    pub regime: Regime,
    pub directive: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub task: String,
    pub best: Heuristic,
    pub best_objective: f64,
    pub baseline_objective: Option<f64>,
    /// `(best - baseline) / |baseline|`.
    pub gap: Option<f64>,
    pub curve: Vec<CurveRow>,
    pub requests: u64,
    pub prompt_events: u64,
    pub regimes: Vec<RegimeRow>,
    pub pool: Vec<Insight>,
    pub offspring_accepted: usize,
    pub offspring_rejected: usize,
    pub wall_time_secs: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: RunReport,
    pub events: Vec<RunEvent>,
}

pub fn relative_gap(best: f64, baseline: f64) -> Option<f64> {
    (baseline != 0.0 && baseline.is_finite()).then(|| (best - baseline) / baseline.abs())
}

pub struct Orchestrator {
    config: RunConfig,
    task_spec: TaskSpec,
    templates: TemplateSet,
    generator: Box<dyn Generator>,
    evaluator: Box<dyn Evaluator>,
    pool: InsightPool,
    navigator: Navigator,
    population: Population,
    rng: ChaCha8Rng,
    log: EventLog,
    records_logged: usize,
    next_id: u64,
    curve: Vec<CurveRow>,
    regimes: Vec<RegimeRow>,
    accepted: usize,
    rejected: usize,
    seeds: Vec<(String, String)>,
}

impl Orchestrator {
    pub fn new(config: RunConfig, generator: Box<dyn Generator>, evaluator: Box<dyn Evaluator>) -> Result<Self, RunError> {
        config.validate()?;
        let kind = config.task_kind()?;
        let mut templates = TemplateSet::builtin();
        if let Some(dir) = &config.template_dir {
            templates.load_overrides(dir)?;
        }
        let mut seeds = Vec::new();
        for path in &config.seed_heuristics {
            let code = std::fs::read_to_string(path).map_err(|e| RunError::Config(format!("{}: {e}", path.display())))?;
            let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            seeds.push((format!("Seed heuristic {name}."), code));
        }
        let sink = match &config.out_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir).map_err(|e| RunError::Io(format!("{}: {e}", dir.display())))?;
                let path = dir.join(EVENTS_FILE);
                let f = File::create(&path).map_err(|e| RunError::Io(format!("{}: {e}", path.display())))?;
                Some(BufWriter::new(f))
            }
            None => None,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let navigator = Navigator::new(config.navigator.clone(), rng.random());
        Ok(Orchestrator {
            task_spec: kind.task_spec(),
            templates,
            generator,
            evaluator,
            pool: InsightPool::new(config.pool.clone()),
            navigator,
            population: Population::new(config.pop_size),
            rng,
            log: EventLog { events: Vec::new(), sink, io_error: None },
            records_logged: 0,
            next_id: 1,
            curve: Vec::new(),
            regimes: Vec::new(),
            accepted: 0,
            rejected: 0,
            seeds,
            config,
        })
    }

    pub fn population(&self) -> &Population {
        &self.population
    }

    pub fn pool(&self) -> &InsightPool {
        &self.pool
    }

    pub fn events(&self) -> &[RunEvent] {
        &self.log.events
    }

    fn fresh_id(&mut self) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        id
    }

    fn error(&mut self, t: u32, stage: &str, strategy: Option<&str>, kind: &str, detail: impl Into<String>) {
        let detail = detail.into();
        log::warn!("generation {t} {stage}: {kind}: {detail}");
        self.log.emit(
            EventKind::Error,
            t,
            ErrorPayload { stage: stage.into(), strategy: strategy.map(str::to_string), kind: kind.into(), detail },
        );
    }

    /// One generator call; every attempt it made becomes a prompt event.
    fn call_generator(&mut self, t: u32, tag: &str, prompt: &str) -> Result<String, GeneratorError> {
        let result = self.generator.generate(prompt);
        let records: Vec<GenerationRecord> = self.generator.records();
        for r in &records[self.records_logged.min(records.len())..] {
            self.log.emit(
                EventKind::Prompt,
                t,
                PromptPayload {
                    strategy: tag.to_string(),
                    attempt: r.attempt,
                    prompt: r.prompt.clone(),
                    response: r.response.clone(),
                    error: r.error.clone(),
                },
            );
        }
        self.records_logged = records.len();
        result
    }

    /// Evaluates and logs a candidate. Returns it with its objective set when
    /// it is valid and new relative to `existing`.
    fn evaluate_candidate(&mut self, t: u32, mut h: Heuristic, existing: &[&Heuristic]) -> Option<Heuristic> {
        let (per_instance, error) = match self.evaluator.evaluate(&h.code) {
            Ok(e) if e.objective.is_finite() => {
                h.objective = Some(e.objective);
                (e.per_instance, None)
            }
            Ok(e) => {
                let err = EvalError {
                    instance: 0,
                    error: crate::executor::ExecError::new(crate::executor::ErrorKind::BadShape, format!("objective {}", e.objective)),
                };
                (e.per_instance, Some(err))
            }
            Err(e) => (Vec::new(), Some(e)),
        };
        let duplicate = h.is_valid() && is_duplicate(&h, existing.iter().copied());
        let accepted = h.is_valid() && !duplicate;
        self.log.emit(
            EventKind::Evaluation,
            t,
            EvaluationPayload { heuristic: h.id, objective: h.objective, per_instance, error, duplicate, accepted },
        );
        if accepted {
            self.accepted += 1;
            Some(h)
        } else {
            self.rejected += 1;
            None
        }
    }

    fn emit_config(&mut self, seed_insights: Vec<SeedInsight>) {
        let payload = InitPayload::Config {
            task: self.config.task.clone(),
            pop_size: self.config.pop_size,
            generations: self.config.generations,
            seed: self.config.seed,
            ema_rate: self.config.pool.ema_rate,
            seed_insights,
        };
        self.log.emit(EventKind::Init, 0, payload);
    }

    /// Seeds the insight pool and builds the first population, from seed
    /// programs when configured and from I1 calls otherwise.
    pub fn initialize(&mut self) -> Result<(), RunError> {
        let ids = self.pool.seed().map_err(|e| RunError::Config(e.to_string()))?;
        let seed_insights =
            ids.iter().map(|id| SeedInsight { id: *id, text: self.pool.get(*id).expect("seeded").text.clone() }).collect();
        self.emit_config(seed_insights);

        let needed = self.config.pop_size;
        let mut members: Vec<Heuristic> = Vec::new();
        let mut attempts = 0;
        let source;
        if !self.seeds.is_empty() {
            source = "seeds";
            for (thought, code) in std::mem::take(&mut self.seeds) {
                attempts += 1;
                let id = self.fresh_id();
                let h = Heuristic::new(id, thought, code, Origin::Seed, 0);
                let existing = members.clone();
                let refs: Vec<&Heuristic> = existing.iter().collect();
                if let Some(h) = self.evaluate_candidate(0, h, &refs) {
                    members.push(h);
                }
            }
            if members.is_empty() {
                return Err(RunError::Init { attempts, valid: 0, needed });
            }
        } else {
            source = "generator";
            let budget = self.config.init_budget_factor * needed;
            while members.len() < needed && attempts < budget {
                attempts += 1;
                let insights = self.pool.retrieve(0);
                let directive = self.navigator.sample_directive(Regime::Balance);
                let prompt =
                    compose(&self.templates, Strategy::I1, self.config.recombination_arity, &self.task_spec, &[], &insights, directive, Regime::Balance)?;
                let raw = match self.call_generator(0, Strategy::I1.tag(), &prompt.body) {
                    Ok(r) => r,
                    Err(e) => {
                        self.error(0, "init", Some("I1"), e.kind(), e.to_string());
                        if e == GeneratorError::ScriptExhausted {
                            break;
                        }
                        continue;
                    }
                };
                let (thought, code) = match parse_heuristic_response(&raw, &self.task_spec.function_name) {
                    Ok(p) => p,
                    Err(e) => {
                        self.error(0, "init", Some("I1"), "parse", e.to_string());
                        continue;
                    }
                };
                let id = self.fresh_id();
                let mut h = Heuristic::new(id, thought, code, Origin::I1, 0);
                h.contributing_insights = prompt.insight_ids.clone();
                self.log.emit(
                    EventKind::GenerationResult,
                    0,
                    GenerationResultPayload {
                        strategy: "I1".into(),
                        heuristic: id,
                        parents: Vec::new(),
                        insights: prompt.insight_ids.clone(),
                        directive: prompt.directive.clone(),
                        thought: h.thought.clone(),
                        code: h.code.clone(),
                        thought_inherited: false,
                    },
                );
                let existing = members.clone();
                let refs: Vec<&Heuristic> = existing.iter().collect();
                if let Some(h) = self.evaluate_candidate(0, h, &refs) {
                    members.push(h);
                }
            }
            if members.len() < needed {
                return Err(RunError::Init { attempts, valid: members.len(), needed });
            }
        }
        self.population = survival_select(members, needed);
        let st = stats(&self.population).expect("population is evaluated and non-empty");
        self.curve.push(CurveRow { generation: 0, best: st.best, avg: st.avg, worst: st.worst });
        self.log.emit(
            EventKind::Init,
            0,
            InitPayload::Population { source: source.into(), attempts, members: self.population.members.clone(), stats: st },
        );
        Ok(())
    }

    fn extract(&mut self, t: u32) {
        let k = elite_count(self.population.len()).min(self.population.len());
        let elites: Vec<&Heuristic> = self.population.members[..k].iter().collect();
        let elite_ids = elites.iter().map(|h| h.id).collect();
        let prompt = match compose_insight_extraction(&self.templates, &self.config.task, &elites) {
            Ok(p) => p,
            Err(e) => {
                self.error(t, "extraction", None, "prompt", e.to_string());
                return;
            }
        };
        let raw = match self.call_generator(t, EXTRACT_TAG, &prompt) {
            Ok(r) => r,
            Err(e) => {
                self.error(t, "extraction", None, e.kind(), e.to_string());
                return;
            }
        };
        let candidates = parse_insight_list(&raw);
        self.log.emit(EventKind::Extraction, t, ExtractionPayload { elites: elite_ids, candidates: candidates.clone() });
        for text in candidates {
            let admission = self.pool.admit(&text, t);
            self.log.emit(EventKind::Admission, t, AdmissionPayload { text, admission });
        }
        for ev in self.pool.prune(t) {
            self.log.emit(EventKind::Eviction, t, ev);
        }
    }

    /// Generates and parses one offspring, reissuing the prompt after an
    /// unparseable or empty reply.
    fn generate_offspring(&mut self, t: u32, strategy: Strategy, prompt: &str, parents: &[Heuristic]) -> Option<(String, String, bool)> {
        let tag = strategy.tag();
        for _ in 0..=self.config.parse_retries {
            let raw = match self.call_generator(t, tag, prompt) {
                Ok(r) => r,
                Err(GeneratorError::Empty) => {
                    self.error(t, "generate", Some(tag), "empty", "empty completion");
                    continue;
                }
                Err(e) => {
                    self.error(t, "generate", Some(tag), e.kind(), e.to_string());
                    return None;
                }
            };
            match parse_heuristic_response(&raw, &self.task_spec.function_name) {
                Ok((thought, code)) => return Some((thought, code, false)),
                // a parameter tweak may come back as bare code
                Err(ParseError::NoThought) if strategy == Strategy::M3 => {
                    if let Some(code) = extract_code(&raw, &self.task_spec.function_name) {
                        return Some((parents[0].thought.clone(), code, true));
                    }
                    self.error(t, "parse", Some(tag), "parse", ParseError::NoCode.to_string());
                }
                Err(e) => self.error(t, "parse", Some(tag), "parse", e.to_string()),
            }
        }
        None
    }

    fn run_slot(&mut self, t: u32, strategy: Strategy, directive: &'static str, regime: Regime, reference: &PopulationStats, offspring: &mut Vec<Heuristic>) {
        let insights = self.pool.retrieve(t);
        let arity = strategy.parent_arity(self.config.recombination_arity);
        let parents: Vec<Heuristic> = match rank_select_parents(&self.population, arity, &mut self.rng) {
            Ok(p) => p.into_iter().cloned().collect(),
            Err(e) => {
                self.error(t, "select", Some(strategy.tag()), "selection", e.to_string());
                return;
            }
        };
        let parent_refs: Vec<&Heuristic> = parents.iter().collect();
        let prompt = match compose(&self.templates, strategy, self.config.recombination_arity, &self.task_spec, &parent_refs, &insights, directive, regime) {
            Ok(p) => p,
            Err(e) => {
                self.error(t, "compose", Some(strategy.tag()), "prompt", e.to_string());
                return;
            }
        };
        let Some((thought, code, inherited)) = self.generate_offspring(t, strategy, &prompt.body, &parents) else {
            return;
        };
        let id = self.fresh_id();
        let mut h = Heuristic::new(id, thought, code, strategy.into(), t);
        h.contributing_insights = prompt.insight_ids.clone();
        self.log.emit(
            EventKind::GenerationResult,
            t,
            GenerationResultPayload {
                strategy: strategy.tag().into(),
                heuristic: id,
                parents: parents.iter().map(|p| p.id).collect(),
                insights: prompt.insight_ids.clone(),
                directive: directive.to_string(),
                thought: h.thought.clone(),
                code: h.code.clone(),
                thought_inherited: inherited,
            },
        );
        let existing: Vec<Heuristic> = self.population.members.iter().chain(offspring.iter()).cloned().collect();
        let refs: Vec<&Heuristic> = existing.iter().collect();
        let Some(h) = self.evaluate_candidate(t, h, &refs) else {
            return;
        };
        let objective = h.objective.expect("accepted offspring are evaluated");
        let g_eff = credit_signal(objective, reference.best, reference.avg, reference.worst);
        let (updates, skipped) = self.pool.apply_credit(&h.contributing_insights, g_eff, t);
        self.log.emit(
            EventKind::Credit,
            t,
            CreditPayload { heuristic: h.id, objective, reference: *reference, g_eff, updates, skipped },
        );
        offspring.push(h);
    }

    pub fn run_generation(&mut self, t: u32) {
        let reference = stats(&self.population).expect("population is evaluated and non-empty");
        self.navigator.observe(&reference, t);
        let regime = self.navigator.decide_regime();
        let directive = self.navigator.sample_directive(regime);
        self.log.emit(
            EventKind::Regime,
            t,
            RegimePayload { regime, directive: directive.to_string(), navigator: self.navigator.snapshot() },
        );
        self.regimes.push(RegimeRow { generation: t, regime, directive: directive.to_string() });

        if self.config.extraction {
            self.extract(t);
        }

        let mut offspring = Vec::new();
        for strategy in Strategy::EVOLUTION {
            let w = self.config.weights.get(strategy);
            if self.rng.random::<f64>() >= w {
                continue;
            }
            self.run_slot(t, strategy, directive, regime, &reference, &mut offspring);
        }

        let candidates: Vec<Heuristic> = self.population.members.iter().cloned().chain(offspring).collect();
        let count = candidates.len();
        let all_ids: Vec<u64> = candidates.iter().map(|h| h.id).collect();
        let next = survival_select(candidates, self.config.pop_size);
        let dropped = all_ids.into_iter().filter(|id| !next.members.iter().any(|m| m.id == *id)).collect();
        self.population = next;
        let st = stats(&self.population).expect("survivors include the previous population");
        self.curve.push(CurveRow { generation: t, best: st.best, avg: st.avg, worst: st.worst });
        self.log.emit(
            EventKind::Survival,
            t,
            SurvivalPayload { candidates: count, members: self.population.members.clone(), dropped, stats: st },
        );
    }

    /// Full run; artifacts go to the output directory when one is set.
    pub fn execute(mut self) -> Result<RunOutput, RunError> {
        let start = Instant::now();
        let init = self.initialize();
        if let Err(e) = init {
            self.error(0, "init", None, "fatal", e.to_string());
            self.flush()?;
            return Err(e);
        }
        for t in 1..=self.config.generations {
            self.run_generation(t);
        }
        self.flush()?;
        let best = self.population.best().expect("population is non-empty").clone();
        let best_objective = best.objective.expect("evaluated");
        let baseline_objective = self.evaluator.baseline();
        let prompt_events = self.log.events.iter().filter(|e| e.kind == EventKind::Prompt).count() as u64;
        let report = RunReport {
            task: self.config.task.clone(),
            gap: baseline_objective.and_then(|b| relative_gap(best_objective, b)),
            best,
            best_objective,
            baseline_objective,
            curve: self.curve,
            requests: self.generator.request_count(),
            prompt_events,
            regimes: self.regimes,
            pool: self.pool.insights().to_vec(),
            offspring_accepted: self.accepted,
            offspring_rejected: self.rejected,
            wall_time_secs: start.elapsed().as_secs_f64(),
        };
        if let Some(dir) = &self.config.out_dir {
            write_artifacts(dir, &self.config, &report)?;
        }
        Ok(RunOutput { report, events: self.log.events })
    }

    fn flush(&mut self) -> Result<(), RunError> {
        if let Some(w) = self.log.sink.as_mut() {
            if let Err(e) = w.flush() {
                self.log.io_error.get_or_insert(e.to_string());
            }
        }
        match self.log.io_error.take() {
            Some(e) => Err(RunError::Io(format!("event log: {e}"))),
            None => Ok(()),
        }
    }
}

fn write_artifacts(dir: &Path, config: &RunConfig, report: &RunReport) -> Result<(), RunError> {
    let io = |p: &Path, e: std::io::Error| RunError::Io(format!("{}: {e}", p.display()));
    let path = dir.join(REPORT_FILE);
    let json = serde_json::to_string_pretty(report).expect("report serializes");
    std::fs::write(&path, json + "\n").map_err(|e| io(&path, e))?;
    let path = dir.join(BEST_FILE);
    let mut src = String::new();
    for line in report.best.thought.lines() {
        src.push_str(&format!("# {line}\n"));
    }
    src.push_str(&format!("# objective: {}\n\n", report.best_objective));
    src.push_str(report.best.code.trim_end());
    src.push('\n');
    std::fs::write(&path, src).map_err(|e| io(&path, e))?;
    let path = dir.join(CONFIG_ECHO_FILE);
    std::fs::write(&path, config.to_toml()).map_err(|e| io(&path, e))?;
    Ok(())
}

/// Builds the configured generator and sandboxed evaluator, then runs.
pub fn run(config: &RunConfig) -> Result<RunOutput, RunError> {
    config.validate()?;
    let generator = generator::build(&config.generator)?;
    let instances = load_manifest_instances(&config.instance_specs()?, None)?;
    if instances.is_empty() {
        return Err(RunError::Config("no evaluation instances".into()));
    }
    let evaluator = PythonEvaluator { task: config.task()?, instances, policy: config.sandbox.clone() };
    Orchestrator::new(config.clone(), generator, Box::new(evaluator))?.execute()
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("record {line}: {detail}")]
pub struct LogError {
    /// 1-based line number.
    pub line: usize,
    pub detail: String,
}

/// Parses an event log, checking that sequence numbers count up from zero.
pub fn parse_event_log(text: &str) -> Result<Vec<RunEvent>, LogError> {
    let mut events = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let event: RunEvent =
            serde_json::from_str(line).map_err(|e| LogError { line: i + 1, detail: e.to_string() })?;
        if event.seq != events.len() as u64 {
            return Err(LogError { line: i + 1, detail: format!("expected seq {}, found {}", events.len(), event.seq) });
        }
        events.push(event);
    }
    Ok(events)
}

fn payload<T: for<'de> Deserialize<'de>>(e: &RunEvent) -> Result<T, LogError> {
    serde_json::from_value(e.payload.clone())
        .map_err(|err| LogError { line: e.seq as usize + 1, detail: format!("{:?} payload: {err}", e.kind) })
}

/// Recomputes every live insight's effectiveness from admissions, credit
/// and evictions in the log.
pub fn replay_effectiveness(events: &[RunEvent]) -> Result<BTreeMap<InsightId, f64>, LogError> {
    let mut alpha = None;
    let mut values = BTreeMap::new();
    for e in events {
        match e.kind {
            EventKind::Init => {
                if let InitPayload::Config { ema_rate, seed_insights, .. } = payload(e)? {
                    alpha = Some(ema_rate);
                    for s in seed_insights {
                        values.insert(s.id, INITIAL_EFFECTIVENESS);
                    }
                }
            }
            EventKind::Admission => {
                let p: AdmissionPayload = payload(e)?;
                if let Admission::Admitted { id } = p.admission {
                    values.insert(id, INITIAL_EFFECTIVENESS);
                }
            }
            EventKind::Eviction => {
                let p: Eviction = payload(e)?;
                values.remove(&p.insight.id);
            }
            EventKind::Credit => {
                let p: CreditPayload = payload(e)?;
                let a = alpha.ok_or_else(|| LogError { line: e.seq as usize + 1, detail: "credit before config".into() })?;
                for u in p.updates {
                    let v = values
                        .get_mut(&u.id)
                        .ok_or_else(|| LogError { line: e.seq as usize + 1, detail: format!("credit for unknown insight {}", u.id) })?;
                    *v = ((1.0 - a) * *v + a * p.g_eff).clamp(EFFECTIVENESS_MIN, EFFECTIVENESS_MAX);
                }
            }
            _ => {}
        }
    }
    Ok(values)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolRow {
    pub id: InsightId,
    pub text: String,
    pub effectiveness: f64,
}

/// What the report command prints, derived from the event log alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogSummary {
    pub task: String,
    pub curve: Vec<CurveRow>,
    pub requests: u64,
    pub regimes: Vec<RegimeRow>,
    pub pool: Vec<PoolRow>,
    pub errors: usize,
}

pub fn summarize(events: &[RunEvent]) -> Result<LogSummary, LogError> {
    let mut task = String::new();
    let mut curve = Vec::new();
    let mut regimes = Vec::new();
    let mut texts: BTreeMap<InsightId, String> = BTreeMap::new();
    let mut requests = 0;
    let mut errors = 0;
    for e in events {
        match e.kind {
            EventKind::Init => match payload(e)? {
                InitPayload::Config { task: t, seed_insights, .. } => {
                    task = t;
                    texts.extend(seed_insights.into_iter().map(|s| (s.id, s.text)));
                }
                InitPayload::Population { stats: s, .. } => {
                    curve.push(CurveRow { generation: e.generation, best: s.best, avg: s.avg, worst: s.worst })
                }
            },
            EventKind::Survival => {
                let p: SurvivalPayload = payload(e)?;
                curve.push(CurveRow { generation: e.generation, best: p.stats.best, avg: p.stats.avg, worst: p.stats.worst });
            }
            EventKind::Regime => {
                let p: RegimePayload = payload(e)?;
                regimes.push(RegimeRow { generation: e.generation, regime: p.regime, directive: p.directive });
            }
            EventKind::Admission => {
                let p: AdmissionPayload = payload(e)?;
                if let Admission::Admitted { id } = p.admission {
                    texts.insert(id, p.text);
                }
            }
            EventKind::Prompt => requests += 1,
            EventKind::Error => errors += 1,
            _ => {}
        }
    }
    let pool = replay_effectiveness(events)?
        .into_iter()
        .map(|(id, effectiveness)| PoolRow { id, text: texts.remove(&id).unwrap_or_default(), effectiveness })
        .collect();
    Ok(LogSummary { task, curve, requests, regimes, pool, errors })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::MockGenerator;
    use std::time::Duration;

    /// Objective is the number embedded in the code as `return <x>`.
    fn constant_evaluator() -> Box<dyn Evaluator> {
        Box::new(FnEvaluator(|code: &str| {
            let x: f64 = code
                .split("return ")
                .nth(1)
                .and_then(|s| s.split_whitespace().next())
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| EvalError {
                    instance: 0,
                    error: crate::executor::ExecError::new(crate::executor::ErrorKind::Runtime, "no constant"),
                })?;
            Ok(Evaluation { objective: x, per_instance: vec![x], wall_time: Duration::ZERO })
        }))
    }

    fn reply(thought: &str, x: f64) -> String {
        format!("{{{thought}}}\n```python\ndef score(item, bins):\n    return {x}\n```")
    }

    fn config(pop: usize, gens: u32) -> RunConfig {
        RunConfig { pop_size: pop, generations: gens, ..RunConfig::default() }
    }

    #[test]
    fn init_takes_four_valid_replies() {
        let gen = MockGenerator::from_responses((1..=4).map(|i| reply("t", i as f64)));
        let mut o = Orchestrator::new(config(4, 1), Box::new(gen), constant_evaluator()).unwrap();
        o.initialize().unwrap();
        assert_eq!(o.population().len(), 4);
        assert_eq!(o.generator.request_count(), 4);
        assert_eq!(o.population().best().unwrap().objective, Some(1.0));
    }

    #[test]
    fn init_skips_an_invalid_reply() {
        let mut replies = vec!["no braces, no code".to_string()];
        replies.extend((1..=4).map(|i| reply("t", i as f64)));
        let gen = MockGenerator::from_responses(replies);
        let mut o = Orchestrator::new(config(4, 1), Box::new(gen), constant_evaluator()).unwrap();
        o.initialize().unwrap();
        assert_eq!(o.population().len(), 4);
        assert_eq!(o.generator.request_count(), 5);
    }

    #[test]
    fn init_budget_exhaustion_is_fatal() {
        let gen = MockGenerator::from_responses(vec![reply("t", 1.0); 12]);
        let err = Orchestrator::new(config(4, 1), Box::new(gen), constant_evaluator()).unwrap().execute().unwrap_err();
        assert!(matches!(err, RunError::Init { attempts: 12, valid: 1, needed: 4 }), "{err}");
    }

    #[test]
    fn seed_programs_skip_generation() {
        let dir = tempfile::tempdir().unwrap();
        let paths: Vec<PathBuf> = (0..2)
            .map(|i| {
                let p = dir.path().join(format!("s{i}.py"));
                std::fs::write(&p, format!("def score(item, bins):\n    return {}\n", i + 5)).unwrap();
                p
            })
            .collect();
        let cfg = RunConfig { seed_heuristics: paths, ..config(2, 1) };
        let gen = MockGenerator::from_responses(Vec::<String>::new());
        let mut o = Orchestrator::new(cfg, Box::new(gen), constant_evaluator()).unwrap();
        o.initialize().unwrap();
        assert_eq!(o.generator.request_count(), 0);
        assert_eq!(o.population().objectives(), vec![5.0, 6.0]);
    }

    #[test]
    fn full_generation_reduces_nine_to_four() {
        let mut replies: Vec<String> = (1..=4).map(|i| reply("init", 10.0 + i as f64)).collect();
        replies.push("- Prefer tight bins whenever the residual capacity allows it.".into());
        replies.extend((1..=5).map(|i| reply("child", i as f64)));
        let gen = MockGenerator::from_responses(replies);
        let mut o = Orchestrator::new(config(4, 1), Box::new(gen), constant_evaluator()).unwrap();
        o.initialize().unwrap();
        o.run_generation(1);
        let surv: SurvivalPayload = payload(o.events().iter().rev().find(|e| e.kind == EventKind::Survival).unwrap()).unwrap();
        assert_eq!(surv.candidates, 9);
        assert_eq!(o.population().objectives(), vec![1.0, 2.0, 3.0, 4.0]);
        // first child beats the whole pre-generation population
        let credit: CreditPayload = payload(o.events().iter().find(|e| e.kind == EventKind::Credit).unwrap()).unwrap();
        assert!(credit.g_eff >= 0.8);
        assert_eq!(credit.reference.best, 11.0);
    }

    #[test]
    fn zero_offspring_keeps_population() {
        let mut replies: Vec<String> = (1..=4).map(|i| reply("init", i as f64)).collect();
        replies.extend(vec!["garbage".to_string(); 40]);
        let gen = MockGenerator::from_responses(replies);
        let mut o = Orchestrator::new(config(4, 1), Box::new(gen), constant_evaluator()).unwrap();
        o.initialize().unwrap();
        let before = o.population().clone();
        o.run_generation(1);
        assert_eq!(o.population().members, before.members);
    }

    #[test]
    fn parse_retries_reissue_the_prompt() {
        let mut replies: Vec<String> = (1..=4).map(|i| reply("init", i as f64)).collect();
        // E1: empty, bad, bad uses up its three calls; E2 succeeds at once;
        // M1..M3 get three bad replies each
        replies.extend([String::new(), "bad".to_string(), "bad".to_string(), reply("ok", 0.5)]);
        replies.extend(vec!["bad".to_string(); 12]);
        let gen = MockGenerator::from_responses(replies);
        let cfg = RunConfig { extraction: false, ..config(4, 1) };
        let mut o = Orchestrator::new(cfg, Box::new(gen), constant_evaluator()).unwrap();
        o.initialize().unwrap();
        o.run_generation(1);
        assert_eq!(o.generator.request_count(), 4 + 3 + 1 + 9);
        let prompts = o.events().iter().filter(|e| e.kind == EventKind::Prompt).count() as u64;
        assert_eq!(prompts, o.generator.request_count());
        assert_eq!(o.population().best().unwrap().objective, Some(0.5));
    }

    #[test]
    fn m3_reply_without_thought_inherits_parent_thought() {
        let mut replies: Vec<String> = (1..=2).map(|i| reply("parent idea", i as f64)).collect();
        replies.push("```python\ndef score(item, bins):\n    return 0.25\n```".into());
        let gen = MockGenerator::new(crate::generator::Script {
            responses: replies
                .into_iter()
                .enumerate()
                .map(|(i, r)| crate::generator::ScriptEntry {
                    strategy: Some(if i < 2 { "I1" } else { "M3" }.into()),
                    pattern: None,
                    response: r,
                })
                .collect(),
        });
        let cfg = RunConfig { extraction: false, ..config(2, 1) };
        let mut o = Orchestrator::new(cfg, Box::new(gen), constant_evaluator()).unwrap();
        o.initialize().unwrap();
        o.run_generation(1);
        let best = o.population().best().unwrap();
        assert_eq!(best.objective, Some(0.25));
        assert_eq!(best.thought, "parent idea");
    }

    #[test]
    fn duplicates_are_not_admitted() {
        let mut replies: Vec<String> = (1..=4).map(|i| reply("init", i as f64)).collect();
        replies.extend(vec![reply("same as best", 1.0); 5]);
        let gen = MockGenerator::from_responses(replies);
        let cfg = RunConfig { extraction: false, ..config(4, 1) };
        let mut o = Orchestrator::new(cfg, Box::new(gen), constant_evaluator()).unwrap();
        o.initialize().unwrap();
        o.run_generation(1);
        assert_eq!(o.accepted, 4);
        assert_eq!(o.rejected, 5);
        assert!(!o.events().iter().any(|e| e.kind == EventKind::Credit));
    }

    #[test]
    fn zero_weights_fire_nothing() {
        let replies: Vec<String> = (1..=4).map(|i| reply("init", i as f64)).collect();
        let gen = MockGenerator::from_responses(replies);
        let cfg = RunConfig {
            extraction: false,
            weights: OperatorWeights { e1: 0.0, e2: 0.0, m1: 0.0, m2: 0.0, m3: 0.0 },
            ..config(4, 3)
        };
        let out = Orchestrator::new(cfg, Box::new(gen), constant_evaluator()).unwrap().execute().unwrap();
        assert_eq!(out.report.requests, 4);
        assert_eq!(out.report.curve.len(), 4);
    }

    #[test]
    fn log_roundtrip_and_summary() {
        let mut replies: Vec<String> = (1..=4).map(|i| reply("init", 10.0 + i as f64)).collect();
        for g in 0..2 {
            replies.push(format!("- Principle number {g} about packing items tightly."));
            replies.extend((1..=5).map(|i| reply("child", 10.0 - (g * 5 + i) as f64)));
        }
        let gen = MockGenerator::from_responses(replies);
        let out = Orchestrator::new(config(4, 2), Box::new(gen), constant_evaluator()).unwrap().execute().unwrap();
        let text: String = out.events.iter().map(|e| serde_json::to_string(e).unwrap() + "\n").collect();
        let parsed = parse_event_log(&text).unwrap();
        assert_eq!(parsed, out.events);
        let summary = summarize(&parsed).unwrap();
        assert_eq!(summary.curve.len(), 3);
        assert_eq!(summary.requests, out.report.requests);
        assert_eq!(summary.pool.len(), out.report.pool.len());
        for (row, k) in summary.pool.iter().zip(&out.report.pool) {
            assert_eq!(row.id, k.id);
            assert_eq!(row.effectiveness, k.effectiveness);
            assert_eq!(row.text, k.text);
        }
    }

    #[test]
    fn corrupt_log_names_first_bad_record() {
        let good = RunEvent { seq: 0, kind: EventKind::Error, generation: 0, payload: Value::Null };
        let text = format!("{}\nnot json\n{{}}\n", serde_json::to_string(&good).unwrap());
        assert_eq!(parse_event_log(&text).unwrap_err().line, 2);
        let skipped = format!("{}\n", serde_json::to_string(&RunEvent { seq: 3, ..good }).unwrap());
        assert_eq!(parse_event_log(&skipped).unwrap_err().line, 1);
    }

    #[test]
    fn config_roundtrips_through_toml() {
        let cfg = RunConfig { task: "tsp_gls".into(), pop_size: 6, seed: 9, ..RunConfig::default() };
        let back: RunConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        let partial: RunConfig = toml::from_str("task = \"fssp\"\n[weights]\nM3 = 0.5\n").unwrap();
        assert_eq!(partial.weights.m3, 0.5);
        assert_eq!(partial.weights.e1, 1.0);
        assert_eq!(partial.pop_size, 4);
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(config(0, 1).validate().is_err());
        assert!(config(1, 0).validate().is_err());
        assert!(RunConfig { task: "knapsack".into(), ..config(1, 1) }.validate().is_err());
        let w = OperatorWeights { e1: 1.5, ..OperatorWeights::default() };
        assert!(RunConfig { weights: w, ..config(1, 1) }.validate().is_err());
    }

    #[test]
    fn gap_is_relative() {
        assert_eq!(relative_gap(110.0, 100.0), Some(0.1));
        assert_eq!(relative_gap(1.0, 0.0), None);
    }
}
