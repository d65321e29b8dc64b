//! Two-stage trajectory filtering.
//!
//! Stage 1 rejects execution-free rollouts that tried to run prohibited
//! commands. Stage 2 checks quality: step budget, empty patches, edits to
//! files the held-out test patch touches, tool-call arity per turn, and
//! repeated editor errors. Execution-backed (hero) rollouts skip stage 1.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::diff::touched_paths;
use crate::guard::{is_prohibited, WhitelistPolicy};
use crate::model::{Mode, Role, TaskInstance, ToolName, Trajectory, TrajectoryKey};
use crate::parallel::map_ordered;

pub const DEFAULT_MAX_STEPS: usize = 100;
pub const DEFAULT_EDITOR_ERROR_CAP: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ReasonCode {
    ProhibitedExecution,
    StepLimitExceeded,
    NullPatch,
    TestFileModified,
    MultiToolTurn,
    ZeroToolTurn,
    EditorErrorCap,
    UnknownTask,
}

impl ReasonCode {
    pub const ALL: [ReasonCode; 8] = [
        ReasonCode::ProhibitedExecution,
        ReasonCode::StepLimitExceeded,
        ReasonCode::NullPatch,
        ReasonCode::TestFileModified,
        ReasonCode::MultiToolTurn,
        ReasonCode::ZeroToolTurn,
        ReasonCode::EditorErrorCap,
        ReasonCode::UnknownTask,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ReasonCode::ProhibitedExecution => "PROHIBITED_EXECUTION",
            ReasonCode::StepLimitExceeded => "STEP_LIMIT_EXCEEDED",
            ReasonCode::NullPatch => "NULL_PATCH",
            ReasonCode::TestFileModified => "TEST_FILE_MODIFIED",
            ReasonCode::MultiToolTurn => "MULTI_TOOL_TURN",
            ReasonCode::ZeroToolTurn => "ZERO_TOOL_TURN",
            ReasonCode::EditorErrorCap => "EDITOR_ERROR_CAP",
            ReasonCode::UnknownTask => "UNKNOWN_TASK",
        }
    }
}

impl fmt::Display for ReasonCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FilterConfig {
    /// Maximum number of assistant turns.
    pub max_steps: usize,
    /// Editor errors at or above this count reject the trajectory.
    pub editor_error_cap: usize,
    pub policy: WhitelistPolicy,
    pub apply_stage1: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self::for_mode(Mode::Zero)
    }
}

impl FilterConfig {
    pub fn for_mode(mode: Mode) -> Self {
        FilterConfig {
            max_steps: DEFAULT_MAX_STEPS,
            editor_error_cap: DEFAULT_EDITOR_ERROR_CAP,
            policy: WhitelistPolicy::default(),
            apply_stage1: mode == Mode::Zero,
        }
    }
}

/// Accepted iff `reasons` is empty. Reasons are unique and in check order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterVerdict {
    pub reasons: Vec<ReasonCode>,
}

impl FilterVerdict {
    pub fn accepted(&self) -> bool {
        self.reasons.is_empty()
    }

    fn add(&mut self, reason: ReasonCode) {
        if !self.reasons.contains(&reason) {
            self.reasons.push(reason);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FilterError {
    #[error("trajectory is for task `{trajectory}` but task `{task}` was supplied")]
    TaskMismatch { trajectory: String, task: String },
}

pub fn stage1_execution_free(t: &Trajectory, policy: &WhitelistPolicy) -> FilterVerdict {
    let mut verdict = FilterVerdict::default();
    let prohibited = t
        .tool_calls()
        .filter_map(|c| c.bash_command())
        .any(|cmd| !is_prohibited(cmd, policy).is_permitted());
    if prohibited {
        verdict.add(ReasonCode::ProhibitedExecution);
    }
    verdict
}

/// Number of failed `str_replace_editor` invocations.
pub fn editor_errors(t: &Trajectory) -> usize {
    t.messages
        .iter()
        .enumerate()
        .filter(|(_, m)| m.role == Role::Tool && m.is_error)
        .filter(|(i, m)| {
            m.tool_call_id
                .as_deref()
                .and_then(|id| t.resolve_call(id, *i))
                .is_some_and(|call| call.name == ToolName::StrReplaceEditor)
        })
        .count()
}

/// Runs every quality check and records each one that fails.
pub fn stage2_quality(
    t: &Trajectory,
    task: &TaskInstance,
    cfg: &FilterConfig,
) -> Result<FilterVerdict, FilterError> {
    if t.task_id != task.task_id {
        return Err(FilterError::TaskMismatch {
            trajectory: t.task_id.clone(),
            task: task.task_id.clone(),
        });
    }
    let mut verdict = FilterVerdict::default();
    if t.turns() > cfg.max_steps {
        verdict.add(ReasonCode::StepLimitExceeded);
    }
    let null_patch = t.final_patch.trim().is_empty();
    if null_patch {
        verdict.add(ReasonCode::NullPatch);
    } else {
        let edited = touched_paths(&t.final_patch);
        let tested = touched_paths(&task.test_patch);
        if !edited.is_disjoint(&tested) {
            verdict.add(ReasonCode::TestFileModified);
        }
    }
    for m in t.messages.iter().filter(|m| m.role == Role::Assistant) {
        match m.tool_calls.len() {
            0 => verdict.add(ReasonCode::ZeroToolTurn),
            1 => {}
            _ => verdict.add(ReasonCode::MultiToolTurn),
        }
    }
    if editor_errors(t) >= cfg.editor_error_cap {
        verdict.add(ReasonCode::EditorErrorCap);
    }
    Ok(verdict)
}

/// Judges one trajectory the way [`run_pipeline`] does.
pub fn judge(
    t: &Trajectory,
    tasks: &HashMap<String, TaskInstance>,
    cfg: &FilterConfig,
) -> Judgement {
    if cfg.apply_stage1 {
        let verdict = stage1_execution_free(t, &cfg.policy);
        if !verdict.accepted() {
            return Judgement {
                verdict,
                stage1_rejected: true,
            };
        }
    }
    let verdict = match tasks.get(&t.task_id) {
        Some(task) => stage2_quality(t, task, cfg).expect("task looked up by the trajectory's id"),
        None => FilterVerdict {
            reasons: vec![ReasonCode::UnknownTask],
        },
    };
    Judgement {
        verdict,
        stage1_rejected: false,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Judgement {
    pub verdict: FilterVerdict,
    pub stage1_rejected: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterReport {
    pub total: usize,
    pub accepted: usize,
    pub rejected_by_reason: BTreeMap<ReasonCode, usize>,
    pub stage1_rejected: usize,
}

impl Default for FilterReport {
    fn default() -> Self {
        FilterReport {
            total: 0,
            accepted: 0,
            rejected_by_reason: ReasonCode::ALL.iter().map(|&r| (r, 0)).collect(),
            stage1_rejected: 0,
        }
    }
}

impl FilterReport {
    pub fn record(&mut self, judgement: &Judgement) {
        self.total += 1;
        if judgement.verdict.accepted() {
            self.accepted += 1;
        }
        if judgement.stage1_rejected {
            self.stage1_rejected += 1;
        }
        for &reason in &judgement.verdict.reasons {
            *self.rejected_by_reason.entry(reason).or_default() += 1;
        }
    }

    pub fn merge(&mut self, other: &FilterReport) {
        self.total += other.total;
        self.accepted += other.accepted;
        self.stage1_rejected += other.stage1_rejected;
        for (&reason, &n) in &other.rejected_by_reason {
            *self.rejected_by_reason.entry(reason).or_default() += n;
        }
    }

    pub fn rejected(&self) -> usize {
        self.total - self.accepted
    }

    pub fn count(&self, reason: ReasonCode) -> usize {
        self.rejected_by_reason.get(&reason).copied().unwrap_or(0)
    }
}

/// One line of the rejects file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    #[serde(flatten)]
    pub key: TrajectoryKey,
    pub reasons: Vec<ReasonCode>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutcome {
    pub accepted: Vec<Trajectory>,
    pub rejected: Vec<Rejection>,
    pub report: FilterReport,
}

/// Filters a corpus. Verdicts are computed on up to `workers` threads; the
/// accepted and rejected lists keep input order.
pub fn run_pipeline(
    corpus: &[Trajectory],
    tasks: &HashMap<String, TaskInstance>,
    cfg: &FilterConfig,
    workers: usize,
) -> PipelineOutcome {
    let judgements = map_ordered(corpus, workers, |t| judge(t, tasks, cfg));
    let mut report = FilterReport::default();
    let mut accepted = Vec::new();
    let mut rejected = Vec::new();
    for (t, j) in corpus.iter().zip(judgements) {
        report.record(&j);
        if j.verdict.accepted() {
            accepted.push(t.clone());
        } else {
            rejected.push(Rejection {
                key: t.key(),
                reasons: j.verdict.reasons,
            });
        }
    }
    PipelineOutcome {
        accepted,
        rejected,
        report,
    }
}

pub fn task_map(tasks: impl IntoIterator<Item = TaskInstance>) -> HashMap<String, TaskInstance> {
    tasks.into_iter().map(|t| (t.task_id.clone(), t)).collect()
}
