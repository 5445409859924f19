//! Command-line interface.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 no viable
//! candidate for some task, 3 infrastructure failure (runner, network, I/O).

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use ensvote_core::{Candidate, EnsembleConfig, Task};
use serde_json::json;

use crate::acquire::{self, fetch_candidates, load_candidate_dir, save_candidates, task_dir_name, HttpClient};
use crate::config::{load_config, merge_engine, FileConfig};
use crate::diff::RunnerBackend;
use crate::harness::{emit_report, evaluate_task};
use crate::pipeline::{select_for_task, PipelineError};
use crate::runner::RunnerCommand;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_NO_VIABLE: i32 = 2;
pub const EXIT_INFRA: i32 = 3;

const HTTP_TIMEOUT: Duration = Duration::from_secs(120);

#[derive(Debug, Parser)]
#[command(name = "ensvote", version, about = "Pick one program from a pool of generated candidates by similarity voting")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Query every configured provider and store one candidate per provider and task.
    Generate(CommonArgs),
    /// Select one candidate per task and print the choice as JSON lines.
    Select(CommonArgs),
    /// Evaluate sources and the ensemble against reference tests and write a report.
    Bench(CommonArgs),
    /// Print every pairwise similarity with its components as JSON lines.
    Explain(CommonArgs),
}

#[derive(Debug, Args, Default)]
pub struct CommonArgs {
    /// TOML configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// JSON-lines task file.
    #[arg(long, conflicts_with = "task")]
    pub tasks: Option<PathBuf>,
    /// Single task as one JSON object.
    #[arg(long)]
    pub task: Option<PathBuf>,
    /// Directory of candidates laid out as `<task_id>/<source_id>.py`.
    #[arg(long)]
    pub candidates: Option<PathBuf>,
    /// Output directory (generate, bench) or file (select, explain).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Counterexample cap per pair.
    #[arg(long)]
    pub n_cap: Option<u32>,
    /// CodeBLEU weights `ngram,weighted_ngram,syntax,dataflow`.
    #[arg(long)]
    pub weights: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Per-call execution timeout in milliseconds.
    #[arg(long)]
    pub timeout_ms: Option<u64>,
    /// Generated inputs per pair.
    #[arg(long)]
    pub diff_budget: Option<u32>,
    /// Worker threads for pairwise comparisons.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Never contact providers; candidates must come from `--candidates`.
    #[arg(long)]
    pub offline: bool,
    /// Runner command line, e.g. `python3 runner.py`.
    #[arg(long)]
    pub runner: Option<String>,
}

/// Failure classified by exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    NoViable(String),
    Infrastructure(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::NoViable(_) => EXIT_NO_VIABLE,
            CliError::Infrastructure(_) => EXIT_INFRA,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::NoViable(m) | CliError::Infrastructure(m) => m,
        }
    }
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

fn infra(e: impl std::fmt::Display) -> CliError {
    CliError::Infrastructure(e.to_string())
}

fn acquire_error(e: acquire::AcquireError) -> CliError {
    match e {
        acquire::AcquireError::Malformed { .. } | acquire::AcquireError::DuplicateTask { .. } => usage(e),
        _ => infra(e),
    }
}

/// Everything a subcommand needs after layering file and flags.
struct Context {
    config: EnsembleConfig,
    file: FileConfig,
    runner: Option<RunnerCommand>,
    args: CommonArgs,
}

impl Context {
    fn new(args: CommonArgs) -> Result<Self, CliError> {
        let file = match &args.config {
            Some(path) => load_config(path).map_err(usage)?,
            None => FileConfig::default(),
        };
        let mut overrides = BTreeMap::new();
        if let Some(v) = args.lambda {
            overrides.insert("lambda".to_string(), v.to_string());
        }
        if let Some(v) = args.n_cap {
            overrides.insert("n_cap".to_string(), v.to_string());
        }
        if let Some(v) = &args.weights {
            overrides.insert("weights".to_string(), v.clone());
        }
        if let Some(v) = args.seed {
            overrides.insert("seed".to_string(), v.to_string());
        }
        if let Some(v) = args.timeout_ms {
            overrides.insert("exec_timeout_ms".to_string(), v.to_string());
        }
        if let Some(v) = args.diff_budget {
            overrides.insert("diff_budget".to_string(), v.to_string());
        }
        let config = merge_engine(&file.engine, &overrides).map_err(usage)?;
        let runner = match &args.runner {
            Some(line) => Some(RunnerCommand::parse(line).ok_or_else(|| usage("empty --runner"))?),
            None => file.runner.clone().or_else(RunnerCommand::from_env),
        };
        Ok(Context { config, file, runner, args })
    }

    fn tasks(&self) -> Result<Vec<Task>, CliError> {
        match (&self.args.tasks, &self.args.task) {
            (Some(path), _) => acquire::load_tasks(path).map_err(usage),
            (None, Some(path)) => Ok(vec![acquire::load_task(path).map_err(usage)?]),
            (None, None) => Err(usage("one of --tasks or --task is required")),
        }
    }

    fn runner(&self) -> Result<&RunnerCommand, CliError> {
        self.runner.as_ref().ok_or_else(|| {
            infra(format!("no runner configured (use --runner, `runner` in the config file, or {})", crate::runner::RUNNER_ENV))
        })
    }

    /// Candidates from disk, or from the providers when online.
    fn candidates(&self, task: &Task) -> Result<Vec<Candidate>, CliError> {
        if let Some(root) = &self.args.candidates {
            let nested = root.join(task_dir_name(&task.id));
            let dir = if nested.is_dir() || self.args.tasks.is_some() { nested } else { root.clone() };
            return load_candidate_dir(&dir, &task.id).map_err(acquire_error);
        }
        if self.args.offline {
            return Err(usage("--offline requires --candidates"));
        }
        if self.file.providers.is_empty() {
            return Err(usage("no --candidates given and no providers configured"));
        }
        let client = HttpClient::new(HTTP_TIMEOUT).map_err(infra)?;
        let outcome = fetch_candidates(task, &self.file.providers, &client).map_err(infra)?;
        Ok(outcome.candidates)
    }

    fn jobs(&self) -> Option<usize> {
        self.args.jobs.or(self.file.jobs)
    }
}

fn in_pool<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = jobs {
        builder = builder.num_threads(n);
    }
    Ok(builder.build().map_err(infra)?.install(f))
}

fn write_output(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(path) => fs::write(path, text).map_err(|e| infra(format!("{}: {e}", path.display()))),
        None => std::io::stdout().write_all(text.as_bytes()).map_err(infra),
    }
}

fn generate(ctx: &Context) -> Result<(), CliError> {
    if ctx.args.offline {
        return Err(usage("generate needs network access; drop --offline"));
    }
    let out = ctx.args.out.as_ref().ok_or_else(|| usage("generate requires --out"))?;
    if ctx.file.providers.is_empty() {
        return Err(usage("no providers configured"));
    }
    let client = HttpClient::new(HTTP_TIMEOUT).map_err(infra)?;
    for task in ctx.tasks()? {
        let outcome = fetch_candidates(&task, &ctx.file.providers, &client).map_err(infra)?;
        save_candidates(out, &outcome.candidates).map_err(infra)?;
        log::info!("{}: {} candidates, {} provider failures", task.id, outcome.candidates.len(), outcome.failures.len());
    }
    Ok(())
}

fn pipeline_error(e: PipelineError) -> CliError {
    match e {
        PipelineError::NoViableCandidates { .. } => CliError::NoViable(e.to_string()),
        PipelineError::Diff { .. } => infra(e),
    }
}

fn select_cmd(ctx: &Context, explain: bool) -> Result<(), CliError> {
    let tasks = ctx.tasks()?;
    let backend = RunnerBackend::new(ctx.runner()?.clone());
    let mut lines = String::new();
    let mut no_viable = None;
    for task in tasks {
        let candidates = ctx.candidates(&task)?;
        let selection = match in_pool(ctx.jobs(), || select_for_task(&task, candidates, &ctx.config, &backend))? {
            Ok(s) => s,
            Err(e @ PipelineError::NoViableCandidates { .. }) => {
                log::error!("{e}");
                no_viable.get_or_insert(e);
                continue;
            }
            Err(e) => return Err(pipeline_error(e)),
        };
        if explain {
            for pair in &selection.pairs {
                lines.push_str(&serde_json::to_string(pair).expect("pair serializes"));
                lines.push('\n');
            }
        }
        let winner = selection.winner();
        let record = json!({
            "task_id": task.id,
            "winner": winner.id,
            "source_id": winner.source_id,
            "tie_break_reason": selection.result.tie_break_reason,
            "tie_set": selection.result.tie_set,
            "aggregated": selection.result.aggregated,
            "rejected": selection.rejected,
            "program": if explain { serde_json::Value::Null } else { json!(winner.text) },
        });
        lines.push_str(&record.to_string());
        lines.push('\n');
    }
    write_output(ctx.args.out.as_deref(), &lines)?;
    match no_viable {
        Some(e) => Err(pipeline_error(e)),
        None => Ok(()),
    }
}

fn bench(ctx: &Context) -> Result<(), CliError> {
    let out = ctx.args.out.as_ref().ok_or_else(|| usage("bench requires --out"))?;
    let tasks = ctx.tasks()?;
    if tasks.is_empty() {
        return Err(usage("no tasks to benchmark"));
    }
    let runner = ctx.runner()?.clone();
    let backend = RunnerBackend::new(runner.clone());
    let mut reports = Vec::new();
    for task in &tasks {
        let candidates = ctx.candidates(task)?;
        let evaluation = in_pool(ctx.jobs(), || evaluate_task(task, candidates, &ctx.config, &backend, &runner))?
            .map_err(infra)?;
        reports.push(evaluation.report);
    }
    let report = emit_report(&ctx.config, reports, out).map_err(infra)?;
    print!("{}", report.table());
    Ok(())
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    }
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate(args) => generate(&Context::new(args)?),
        Command::Select(args) => select_cmd(&Context::new(args)?, false),
        Command::Explain(args) => select_cmd(&Context::new(args)?, true),
        Command::Bench(args) => bench(&Context::new(args)?),
    }
}
