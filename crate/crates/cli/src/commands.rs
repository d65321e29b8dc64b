use std::fs::File;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use trajcurate::assemble::{self, ByteQuarterCounter, CostKind, CurveRecord};
use trajcurate::filter::{self, FilterConfig};
use trajcurate::ingest::{parse_records, to_line};
use trajcurate::model::{self, Violation};
use trajcurate::redact::{redact_pii, PiiRules, RedactionReport};
use trajcurate::sanitize::{self, RefGraph, SanitizationPlan};
use trajcurate::tts::{self, ScoreRecord, SubsetMode};
use trajcurate::{IngestError, Mode, TaskInstance, Trajectory, WhitelistPolicy};

use crate::config::{resolve_config, PipelineConfig};
use crate::{CliError, EXIT_FAILED, EXIT_OK};

#[derive(Debug, Parser)]
#[command(name = "trajcurate", version = build_id(), about = "Curate and evaluate agent trajectories")]
#[command(arg_required_else_help = true)]
pub struct Cli {
    /// TOML config; defaults to the file named by TRAJCURATE_CONFIG.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

fn build_id() -> &'static str {
    concat!(env!("CARGO_PKG_VERSION"), " (", env!("CARGO_PKG_NAME"), ")")
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Decode and validate a trajectory file.
    Ingest(IngestArgs),
    /// Judge a shell command against the whitelist.
    Guard(GuardArgs),
    /// Run the two-stage trajectory filter.
    Filter(FilterArgs),
    /// Plan removal of history newer than a base commit.
    SanitizePlan(SanitizePlanArgs),
    /// Apply a sanitization plan to a ref graph.
    SanitizeApply(SanitizeApplyArgs),
    /// Keep the shortest rollouts of each task.
    Assemble(AssembleArgs),
    /// Per-mode turn and token statistics.
    Stats(StatsArgs),
    /// Cumulative resolve rate against cost.
    Curves(CurvesArgs),
    /// Write loss-masked SFT records.
    ExportSft(ExportSftArgs),
    /// Best@K selection with verifier scores.
    Select(SelectArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long = "in", value_name = "FILE")]
    pub input: PathBuf,
    /// Valid trajectories, re-serialized.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// One line per undecodable or invalid record.
    #[arg(long, value_name = "FILE")]
    pub errors: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GuardArgs {
    #[arg(long)]
    pub command: String,
    #[arg(long, value_name = "FILE")]
    pub policy: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    #[arg(long)]
    pub mode: Option<Mode>,
    #[arg(long, value_name = "FILE")]
    pub tasks: Option<PathBuf>,
    #[arg(long = "in", value_name = "FILE")]
    pub input: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub rejects: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub report: PathBuf,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub editor_error_cap: Option<usize>,
    #[arg(long, value_name = "FILE")]
    pub policy: Option<PathBuf>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Scrub emails, tokens and secrets from accepted trajectories.
    #[arg(long)]
    pub redact: bool,
}

#[derive(Debug, Args)]
pub struct SanitizePlanArgs {
    #[arg(long, value_name = "FILE")]
    pub graph: PathBuf,
    #[arg(long)]
    pub base: String,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SanitizeApplyArgs {
    #[arg(long, value_name = "FILE")]
    pub graph: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub plan: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AssembleArgs {
    #[arg(long = "in", value_name = "FILE")]
    pub input: PathBuf,
    #[arg(long)]
    pub quota: Option<usize>,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long = "in", value_name = "FILE")]
    pub input: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub report: PathBuf,
}

#[derive(Debug, Args)]
pub struct CurvesArgs {
    #[arg(long, value_name = "FILE")]
    pub labels: PathBuf,
    #[arg(long)]
    pub order_by: CostKind,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExportSftArgs {
    #[arg(long = "in", value_name = "FILE")]
    pub input: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[arg(long, value_name = "FILE")]
    pub scores: PathBuf,
    #[arg(long, required_unless_present = "sweep")]
    pub k: Option<usize>,
    /// Report every K in 1, 2, 4, 8, 16, 32 that all pools can supply.
    #[arg(long)]
    pub sweep: bool,
    /// Draw K candidates at random instead of the K lowest rollout ids.
    #[arg(long, value_name = "SEED")]
    pub random_seed: Option<u64>,
    #[arg(long, value_name = "FILE")]
    pub report: PathBuf,
}

pub fn dispatch(cli: Cli) -> Result<i32, CliError> {
    let cfg = resolve_config(cli.config.as_deref())?;
    match cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Guard(a) => guard(a, &cfg),
        Command::Filter(a) => run_filter(a, &cfg),
        Command::SanitizePlan(a) => sanitize_plan(a),
        Command::SanitizeApply(a) => sanitize_apply(a),
        Command::Assemble(a) => run_assemble(a, &cfg),
        Command::Stats(a) => stats(a),
        Command::Curves(a) => curves(a),
        Command::ExportSft(a) => export_sft(a, &cfg),
        Command::Select(a) => select(a),
    }
}

fn open(path: &Path) -> Result<Box<dyn BufRead>, CliError> {
    if path == Path::new("-") {
        return Ok(Box::new(BufReader::new(io::stdin())));
    }
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    Ok(Box::new(BufReader::new(file)))
}

/// Writes `bytes` to `path`, or to standard output for `-`.
fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if path == Path::new("-") {
        let mut out = io::stdout().lock();
        return out
            .write_all(bytes)
            .and_then(|_| out.flush())
            .map_err(|e| CliError::io(path, e));
    }
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

/// One JSON line per record.
pub fn jsonl<'a, T: Serialize + 'a>(records: impl IntoIterator<Item = &'a T>) -> Vec<u8> {
    let mut out = Vec::new();
    for r in records {
        out.extend_from_slice(to_line(r).as_bytes());
        out.push(b'\n');
    }
    out
}

fn write_records<'a, T: Serialize + 'a>(
    path: &Path,
    records: impl IntoIterator<Item = &'a T>,
) -> Result<(), CliError> {
    write_bytes(path, &jsonl(records))
}

fn write_record<T: Serialize>(path: &Path, record: &T) -> Result<(), CliError> {
    write_records(path, [record])
}

fn read_lines<T: DeserializeOwned>(path: &Path) -> Result<(Vec<T>, Vec<IngestError>), CliError> {
    parse_records(open(path)?).map_err(|e| CliError::io(path, e))
}

/// Side inputs must decode completely.
fn read_strict<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, CliError> {
    let (records, errors) = read_lines(path)?;
    match errors.first() {
        None => Ok(records),
        Some(e) => Err(CliError::Data(format!(
            "{}: {} undecodable line(s), first at {e}",
            path.display(),
            errors.len()
        ))),
    }
}

/// Corpus files are decoded leniently; skipped lines are reported.
fn read_corpus(path: &Path) -> Result<Vec<Trajectory>, CliError> {
    let (corpus, errors) = read_lines(path)?;
    for e in &errors {
        eprintln!("warning: {}: skipped {e}", path.display());
    }
    Ok(corpus)
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let mut text = String::new();
    open(path)?
        .read_to_string(&mut text)
        .map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn load_policy(flag: Option<&Path>, cfg: &PipelineConfig) -> Result<WhitelistPolicy, CliError> {
    match flag.or(cfg.policy.as_deref()) {
        Some(path) => WhitelistPolicy::from_reader(open(path)?).map_err(|e| CliError::io(path, e)),
        None => Ok(WhitelistPolicy::default()),
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum IngestIssue {
    Undecodable(IngestError),
    Invalid {
        task_id: String,
        rollout_id: u64,
        violations: Vec<Violation>,
    },
    Corpus(Violation),
}

#[derive(Debug, Serialize, Deserialize)]
pub struct IngestSummary {
    pub records: usize,
    pub valid: usize,
    pub undecodable: usize,
    pub invalid: usize,
}

fn ingest(a: IngestArgs) -> Result<i32, CliError> {
    let (corpus, errors) = read_lines::<Trajectory>(&a.input)?;
    let mut issues: Vec<IngestIssue> = errors.into_iter().map(IngestIssue::Undecodable).collect();
    let undecodable = issues.len();
    let mut valid = Vec::new();
    for t in &corpus {
        let report = model::validate_trajectory(t);
        if report.is_empty() {
            valid.push(t);
        } else {
            issues.push(IngestIssue::Invalid {
                task_id: t.task_id.clone(),
                rollout_id: t.rollout_id,
                violations: report.violations,
            });
        }
    }
    for v in model::validate_corpus(&corpus).violations {
        issues.push(IngestIssue::Corpus(v));
    }
    if let Some(out) = &a.out {
        write_records(out, valid.iter().copied())?;
    }
    if let Some(path) = &a.errors {
        write_records(path, &issues)?;
    }
    let summary = IngestSummary {
        records: corpus.len() + undecodable,
        valid: valid.len(),
        undecodable,
        invalid: issues.len() - undecodable,
    };
    println!("{}", to_line(&summary));
    Ok(if issues.is_empty() {
        EXIT_OK
    } else {
        EXIT_FAILED
    })
}

fn guard(a: GuardArgs, cfg: &PipelineConfig) -> Result<i32, CliError> {
    let policy = load_policy(a.policy.as_deref(), cfg)?;
    let report = trajcurate::is_prohibited(&a.command, &policy);
    println!("{}", to_line(&report));
    Ok(if report.is_permitted() {
        EXIT_OK
    } else {
        EXIT_FAILED
    })
}

/// Filter settings after applying flags over the config file.
pub fn filter_config(
    a: &FilterArgs,
    cfg: &PipelineConfig,
) -> Result<(Mode, FilterConfig), CliError> {
    let mode = a
        .mode
        .or(cfg.mode)
        .ok_or_else(|| CliError::Usage("--mode is required (zero or hero)".into()))?;
    let mut fc = FilterConfig::for_mode(mode);
    fc.max_steps = a.max_steps.unwrap_or(cfg.max_steps);
    fc.editor_error_cap = a.editor_error_cap.unwrap_or(cfg.editor_error_cap);
    fc.policy = load_policy(a.policy.as_deref(), cfg)?;
    Ok((mode, fc))
}

fn run_filter(a: FilterArgs, cfg: &PipelineConfig) -> Result<i32, CliError> {
    let tasks_path = a
        .tasks
        .clone()
        .or_else(|| cfg.tasks.clone())
        .ok_or_else(|| CliError::Usage("--tasks is required".into()))?;
    let (mode, fc) = filter_config(&a, cfg)?;
    let tasks = filter::task_map(read_strict::<TaskInstance>(&tasks_path)?);
    let corpus = read_corpus(&a.input)?;
    if let Some(t) = corpus.iter().find(|t| t.mode != mode) {
        return Err(CliError::Invalid(format!(
            "trajectory ({}, {}) is {} but --mode is {mode}",
            t.task_id, t.rollout_id, t.mode
        )));
    }
    let workers = a.workers.unwrap_or(cfg.workers);
    let mut outcome = filter::run_pipeline(&corpus, &tasks, &fc, workers);
    if a.redact {
        let rules = PiiRules::default();
        let mut total = RedactionReport::default();
        for t in &mut outcome.accepted {
            let (clean, report) = redact_pii(t, &rules);
            *t = clean;
            total.merge(&report);
        }
        eprintln!("redacted {} span(s)", total.total());
    }
    write_records(&a.out, &outcome.accepted)?;
    write_records(&a.rejects, &outcome.rejected)?;
    write_record(&a.report, &outcome.report)?;
    eprintln!(
        "filter: {} trajectories, {} accepted, {} rejected",
        outcome.report.total,
        outcome.report.accepted,
        outcome.report.rejected()
    );
    Ok(EXIT_OK)
}

fn sanitize_err(e: sanitize::SanitizeError) -> CliError {
    CliError::Invalid(e.to_string())
}

fn sanitize_plan(a: SanitizePlanArgs) -> Result<i32, CliError> {
    let graph: RefGraph = read_json(&a.graph)?;
    graph.check().map_err(sanitize_err)?;
    let plan = sanitize::plan_sanitization(&graph, &a.base).map_err(sanitize_err)?;
    write_record(&a.out, &plan)?;
    eprintln!(
        "plan: remove {} commit(s), {} branch(es), {} tag(s)",
        plan.remove_commits.len(),
        plan.remove_branches.len(),
        plan.remove_tags.len()
    );
    Ok(EXIT_OK)
}

fn sanitize_apply(a: SanitizeApplyArgs) -> Result<i32, CliError> {
    let graph: RefGraph = read_json(&a.graph)?;
    let plan: SanitizationPlan = read_json(&a.plan)?;
    let out = sanitize::apply_plan(&graph, &plan).map_err(sanitize_err)?;
    write_record(&a.out, &out)?;
    if sanitize::verify_sanitized(&out, &plan.retarget_head).map_err(sanitize_err)? {
        Ok(EXIT_OK)
    } else {
        eprintln!("result still holds history beyond {}", plan.retarget_head);
        Ok(EXIT_FAILED)
    }
}

fn run_assemble(a: AssembleArgs, cfg: &PipelineConfig) -> Result<i32, CliError> {
    let corpus = read_corpus(&a.input)?;
    let quota = a.quota.unwrap_or(cfg.quota);
    let selected = assemble::assemble(corpus, quota, &ByteQuarterCounter)
        .map_err(|e| CliError::Invalid(e.to_string()))?;
    write_records(&a.out, &selected)?;
    Ok(EXIT_OK)
}

fn stats(a: StatsArgs) -> Result<i32, CliError> {
    let corpus = read_corpus(&a.input)?;
    let stats = assemble::corpus_stats(&corpus, &ByteQuarterCounter);
    write_record(&a.report, &stats)?;
    Ok(EXIT_OK)
}

fn curves(a: CurvesArgs) -> Result<i32, CliError> {
    let labels: Vec<CurveRecord> = read_strict(&a.labels)?;
    let points = assemble::efficiency_curves::<f64>(&labels, a.order_by);
    write_records(&a.out, &points)?;
    Ok(EXIT_OK)
}

fn export_sft(a: ExportSftArgs, cfg: &PipelineConfig) -> Result<i32, CliError> {
    let corpus = read_corpus(&a.input)?;
    let records = assemble::export_sft(&corpus, a.workers.unwrap_or(cfg.workers));
    write_records(&a.out, &records)?;
    Ok(EXIT_OK)
}

fn select(a: SelectArgs) -> Result<i32, CliError> {
    let scores: Vec<ScoreRecord> = read_strict(&a.scores)?;
    let pools = tts::build_pools::<f64>(&scores).map_err(|e| CliError::Invalid(e.to_string()))?;
    let mode = match a.random_seed {
        Some(seed) => SubsetMode::Random { seed },
        None => SubsetMode::Prefix,
    };
    let metrics = if a.sweep {
        tts::sweep(&pools, mode)
    } else {
        let k = a.k.expect("clap requires --k without --sweep");
        tts::compute_metrics(&pools, k, mode).map(|m| vec![m])
    }
    .map_err(|e| CliError::Invalid(e.to_string()))?;
    write_records(&a.report, &metrics)?;
    Ok(EXIT_OK)
}
