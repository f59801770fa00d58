use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use evoheur::orchestrator::{self, EVENTS_FILE};
use evoheur::problems::{bpp, fssp, load_manifest_instances, tsp, Instance, Manifest};
use evoheur::{Backend, GeneratorError, RunConfig, RunError, TaskKind};

#[derive(Parser, Debug)]
#[command(name = "evoheur", version, about = "Evolve heuristic programs with a language model in the loop")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run an evolutionary search
    Run(RunArgs),
    /// Print reference heuristic objectives per instance
    Baseline(InstanceArgs),
    /// Score one program on the task's instances
    Evaluate {
        #[command(flatten)]
        instances: InstanceArgs,
        /// Python source defining the task's function
        #[arg(long)]
        code: PathBuf,
    },
    /// Print curve, request count, regimes and final pool from a run directory
    Report {
        run_dir: PathBuf,
    },
}

#[derive(Args, Debug)]
struct RunArgs {
    /// TOML run configuration
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    backend: Option<Backend>,
    /// Mock response script (TOML)
    #[arg(long)]
    script: Option<PathBuf>,
    #[arg(long)]
    pop: Option<usize>,
    #[arg(long)]
    gens: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to runs/<task>-<seed>
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct InstanceArgs {
    #[arg(long)]
    task: String,
    /// TOML manifest with [[instances]] entries; defaults to the task's set
    #[arg(long)]
    manifest: Option<PathBuf>,
}

/// Errors mapped to exit codes: usage 2, corrupt log 3, anything else 1.
enum Failure {
    Usage(String),
    CorruptLog(String),
    Other(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Other(e)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Baseline(args) => cmd_baseline(&args),
        Command::Evaluate { instances, code } => cmd_evaluate(&instances, &code),
        Command::Report { run_dir } => cmd_report(&run_dir),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::CorruptLog(msg)) => {
            eprintln!("error: corrupt event log: {msg}");
            ExitCode::from(3)
        }
        Err(Failure::Other(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

/// Config file, then flags on top. Relative paths inside the file resolve
/// against the file's directory.
fn effective_config(args: RunArgs) -> Result<RunConfig, Failure> {
    let mut cfg = match &args.config {
        Some(path) => {
            let mut cfg = RunConfig::load(path).map_err(|e| Failure::Usage(e.to_string()))?;
            let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
            if let Some(p) = cfg.generator.script.as_mut() {
                resolve(&base, p);
            }
            if let Some(p) = cfg.template_dir.as_mut() {
                resolve(&base, p);
            }
            if let Some(p) = cfg.out_dir.as_mut() {
                resolve(&base, p);
            }
            for p in &mut cfg.seed_heuristics {
                resolve(&base, p);
            }
            for spec in &mut cfg.manifest {
                if let Some(p) = spec.path.as_mut() {
                    resolve(&base, p);
                }
            }
            cfg
        }
        None => RunConfig::default(),
    };
    if let Some(t) = args.task {
        let kind: TaskKind = t.parse().map_err(|e: evoheur::ProblemError| Failure::Usage(e.to_string()))?;
        if kind.id() != cfg.task {
            // the instance set belongs to the previous task
            cfg.manifest.clear();
        }
        cfg.task = kind.id().to_string();
    }
    if let Some(b) = args.backend {
        cfg.generator.backend = b;
    }
    if let Some(s) = args.script {
        cfg.generator.script = Some(s);
    }
    if let Some(n) = args.pop {
        cfg.pop_size = n;
    }
    if let Some(g) = args.gens {
        cfg.generations = g;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(o) = args.out {
        cfg.out_dir = Some(o);
    }
    if cfg.out_dir.is_none() {
        cfg.out_dir = Some(PathBuf::from("runs").join(format!("{}-{}", cfg.task, cfg.seed)));
    }
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(cfg)
}

fn cmd_run(args: RunArgs) -> Result<(), Failure> {
    let cfg = effective_config(args)?;
    let out = orchestrator::run(&cfg).map_err(|e| match e {
        RunError::Config(_) | RunError::Problem(_) | RunError::Prompt(_) | RunError::Generator(GeneratorError::Config(_)) => {
            Failure::Usage(e.to_string())
        }
        other => Failure::Other(other.into()),
    })?;
    let r = &out.report;
    println!("task\t{}", r.task);
    println!("best_objective\t{}", r.best_objective);
    match (r.baseline_objective, r.gap) {
        (Some(b), Some(g)) => {
            println!("baseline_objective\t{b}");
            println!("gap\t{:.4}%", g * 100.0);
        }
        (Some(b), None) => println!("baseline_objective\t{b}"),
        _ => {}
    }
    println!("requests\t{}", r.requests);
    println!("wall_time_secs\t{:.2}", r.wall_time_secs);
    println!("out_dir\t{}", cfg.out_dir.as_deref().unwrap_or(Path::new(".")).display());
    Ok(())
}

fn load_task_instances(args: &InstanceArgs) -> Result<(TaskKind, Vec<Instance>), Failure> {
    let kind: TaskKind = args.task.parse().map_err(|e: evoheur::ProblemError| Failure::Usage(e.to_string()))?;
    let (specs, base) = match &args.manifest {
        Some(p) => {
            let m = Manifest::load(p).map_err(|e| Failure::Usage(e.to_string()))?;
            (m.instances, p.parent().map(Path::to_path_buf))
        }
        None => (kind.default_manifest(), None),
    };
    let instances = load_manifest_instances(&specs, base.as_deref()).map_err(|e| Failure::Usage(e.to_string()))?;
    if instances.is_empty() {
        return Err(Failure::Usage("manifest has no instances".into()));
    }
    Ok((kind, instances))
}

fn baseline_rows(inst: &Instance) -> Vec<(&'static str, f64)> {
    match inst {
        Instance::Tsp(i) => vec![("nearest_neighbor", i.tour_length(&tsp::nearest_neighbor(i)))],
        Instance::Bpp(i) => vec![
            ("first_fit", i.excess(bpp::first_fit(i).bins())),
            ("best_fit", i.excess(bpp::best_fit(i).bins())),
        ],
        Instance::Fssp(i) => vec![("ascending_total_time", fssp::makespan_unchecked(&i.times, &fssp::initial_order(i)))],
    }
}

fn cmd_baseline(args: &InstanceArgs) -> Result<(), Failure> {
    let (kind, instances) = load_task_instances(args)?;
    println!("task\tinstance\tsize\theuristic\tobjective");
    // per (size, heuristic) sums for the mean rows
    let mut sums: Vec<(usize, &'static str, f64, usize)> = Vec::new();
    for inst in &instances {
        for (name, v) in baseline_rows(inst) {
            println!("{}\t{}\t{}\t{name}\t{v}", kind.id(), inst.name(), inst.size());
            match sums.iter_mut().find(|s| s.0 == inst.size() && s.1 == name) {
                Some(s) => {
                    s.2 += v;
                    s.3 += 1;
                }
                None => sums.push((inst.size(), name, v, 1)),
            }
        }
    }
    for (size, name, total, count) in sums {
        println!("{}\tmean\t{size}\t{name}\t{}", kind.id(), total / count as f64);
    }
    Ok(())
}

fn cmd_evaluate(args: &InstanceArgs, code: &Path) -> Result<(), Failure> {
    let (kind, instances) = load_task_instances(args)?;
    let src = std::fs::read_to_string(code).map_err(|e| Failure::Usage(format!("{}: {e}", code.display())))?;
    let task = evoheur::Task::new(kind);
    let eval = evoheur::problems::evaluate_code(&src, &task, &instances, &evoheur::SandboxPolicy::default())
        .with_context(|| format!("evaluating {}", code.display()))?;
    println!("instance\tobjective");
    for (inst, v) in instances.iter().zip(&eval.per_instance) {
        println!("{}\t{v}", inst.name());
    }
    println!("mean\t{}", eval.objective);
    Ok(())
}

fn cmd_report(run_dir: &Path) -> Result<(), Failure> {
    let path = run_dir.join(EVENTS_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    let events = orchestrator::parse_event_log(&text).map_err(|e| Failure::CorruptLog(e.to_string()))?;
    let summary = orchestrator::summarize(&events).map_err(|e| Failure::CorruptLog(e.to_string()))?;
    println!("# curve");
    println!("generation\tbest\tavg\tworst");
    for row in &summary.curve {
        println!("{}\t{}\t{}\t{}", row.generation, row.best, row.avg, row.worst);
    }
    println!("# requests");
    println!("requests\t{}", summary.requests);
    println!("errors\t{}", summary.errors);
    println!("# regimes");
    println!("generation\tregime\tdirective");
    for row in &summary.regimes {
        println!("{}\t{}\t{}", row.generation, row.regime, row.directive);
    }
    println!("# pool");
    println!("id\teffectiveness\ttext");
    for row in &summary.pool {
        println!("{}\t{}\t{}", row.id, row.effectiveness, row.text.replace(['\t', '\n'], " "));
    }
    Ok(())
}
