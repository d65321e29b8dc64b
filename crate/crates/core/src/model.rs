//! Task instances, trajectories and their invariants.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::diff;

/// A repository issue bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub task_id: String,
    pub repo: String,
    pub base_commit: String,
    #[serde(default)]
    pub problem_statement: String,
    #[serde(default)]
    pub golden_patch: String,
    #[serde(default)]
    pub test_patch: String,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Zero,
    Hero,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Zero => "zero",
            Mode::Hero => "hero",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "zero" => Ok(Mode::Zero),
            "hero" => Ok(Mode::Hero),
            other => Err(format!("unknown mode `{other}` (expected zero or hero)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
    Tool,
}

/// The four tools of the agent scaffold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolName {
    StrReplaceEditor,
    ExecuteBash,
    Think,
    Finish,
}

/// Workflow phase annotations. Execution-free rollouts use the first five.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseLabel {
    Reading,
    Exploration,
    FixAnalysis,
    Implementation,
    FinalReview,
    Running,
    TestCreation,
    Verification,
}

impl PhaseLabel {
    pub fn allowed_in(self, mode: Mode) -> bool {
        match mode {
            Mode::Hero => true,
            Mode::Zero => !matches!(
                self,
                PhaseLabel::Running | PhaseLabel::TestCreation | PhaseLabel::Verification
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub id: String,
    pub name: ToolName,
    #[serde(default)]
    pub arguments: BTreeMap<String, Value>,
}

impl ToolCall {
    /// The shell text of an `execute_bash` call, if this is one.
    pub fn bash_command(&self) -> Option<&str> {
        if self.name != ToolName::ExecuteBash {
            return None;
        }
        self.arguments.get("command").and_then(Value::as_str)
    }
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    #[serde(default)]
    pub content: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tool_calls: Vec<ToolCall>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_call_id: Option<String>,
    #[serde(default, skip_serializing_if = "is_false")]
    pub is_error: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase: Option<PhaseLabel>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl Message {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        Message {
            role,
            content: content.into(),
            tool_calls: Vec::new(),
            tool_call_id: None,
            is_error: false,
            phase: None,
            extra: Map::new(),
        }
    }

    pub fn assistant(content: impl Into<String>, tool_calls: Vec<ToolCall>) -> Self {
        Message {
            tool_calls,
            ..Message::new(Role::Assistant, content)
        }
    }

    pub fn tool(call_id: impl Into<String>, content: impl Into<String>, is_error: bool) -> Self {
        Message {
            tool_call_id: Some(call_id.into()),
            is_error,
            ..Message::new(Role::Tool, content)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub task_id: String,
    pub rollout_id: u64,
    pub mode: Mode,
    pub messages: Vec<Message>,
    #[serde(default)]
    pub final_patch: String,
    #[serde(default)]
    pub resolved: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_count: Option<u64>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

/// Corpus-unique identity of a trajectory.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TrajectoryKey {
    pub task_id: String,
    pub rollout_id: u64,
    pub mode: Mode,
}

impl Trajectory {
    pub fn key(&self) -> TrajectoryKey {
        TrajectoryKey {
            task_id: self.task_id.clone(),
            rollout_id: self.rollout_id,
            mode: self.mode,
        }
    }

    /// Number of agent turns (assistant messages).
    pub fn turns(&self) -> usize {
        self.messages
            .iter()
            .filter(|m| m.role == Role::Assistant)
            .count()
    }

    pub fn tool_calls(&self) -> impl Iterator<Item = &ToolCall> {
        self.messages.iter().flat_map(|m| m.tool_calls.iter())
    }

    /// Finds the tool call a tool message answers, searching only messages
    /// before `before`.
    pub fn resolve_call(&self, call_id: &str, before: usize) -> Option<&ToolCall> {
        self.messages[..before.min(self.messages.len())]
            .iter()
            .filter(|m| m.role == Role::Assistant)
            .flat_map(|m| m.tool_calls.iter())
            .find(|c| c.id == call_id)
    }
}

/// Stable codes for invariant violations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ViolationCode {
    EmptyTaskId,
    NoMessages,
    FirstNotSystem,
    ToolCallsOnNonAssistant,
    MissingToolCallId,
    UnexpectedToolCallId,
    ErrorFlagOnNonTool,
    DanglingToolId,
    DuplicateToolCallId,
    EmptyBashCommand,
    PhaseNotAllowed,
    DuplicateKey,
    BadBaseCommit,
    MalformedTestPatch,
}

impl ViolationCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ViolationCode::EmptyTaskId => "EMPTY_TASK_ID",
            ViolationCode::NoMessages => "NO_MESSAGES",
            ViolationCode::FirstNotSystem => "FIRST_NOT_SYSTEM",
            ViolationCode::ToolCallsOnNonAssistant => "TOOL_CALLS_ON_NON_ASSISTANT",
            ViolationCode::MissingToolCallId => "MISSING_TOOL_CALL_ID",
            ViolationCode::UnexpectedToolCallId => "UNEXPECTED_TOOL_CALL_ID",
            ViolationCode::ErrorFlagOnNonTool => "ERROR_FLAG_ON_NON_TOOL",
            ViolationCode::DanglingToolId => "DANGLING_TOOL_ID",
            ViolationCode::DuplicateToolCallId => "DUPLICATE_TOOL_CALL_ID",
            ViolationCode::EmptyBashCommand => "EMPTY_BASH_COMMAND",
            ViolationCode::PhaseNotAllowed => "PHASE_NOT_ALLOWED",
            ViolationCode::DuplicateKey => "DUPLICATE_KEY",
            ViolationCode::BadBaseCommit => "BAD_BASE_COMMIT",
            ViolationCode::MalformedTestPatch => "MALFORMED_TEST_PATCH",
        }
    }
}

impl fmt::Display for ViolationCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub code: ViolationCode,
    /// Index of the offending message, when the violation is message-local.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<usize>,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn codes(&self) -> Vec<ViolationCode> {
        self.violations.iter().map(|v| v.code).collect()
    }

    pub fn contains(&self, code: ViolationCode) -> bool {
        self.violations.iter().any(|v| v.code == code)
    }

    fn push(&mut self, code: ViolationCode, message: Option<usize>, detail: impl Into<String>) {
        self.violations.push(Violation {
            code,
            message,
            detail: detail.into(),
        });
    }
}

/// Checks every trajectory and message invariant. Each violated invariant
/// yields one entry; an empty report means the trajectory is well-formed.
pub fn validate_trajectory(t: &Trajectory) -> ValidationReport {
    let mut report = ValidationReport::default();
    if t.task_id.is_empty() {
        report.push(ViolationCode::EmptyTaskId, None, "task_id is empty");
    }
    match t.messages.first() {
        None => report.push(
            ViolationCode::NoMessages,
            None,
            "trajectory has no messages",
        ),
        Some(m) if m.role != Role::System => report.push(
            ViolationCode::FirstNotSystem,
            Some(0),
            format!("first message has role {:?}", m.role),
        ),
        Some(_) => {}
    }

    let mut seen_calls: HashSet<&str> = HashSet::new();
    for (i, m) in t.messages.iter().enumerate() {
        if !m.tool_calls.is_empty() && m.role != Role::Assistant {
            report.push(
                ViolationCode::ToolCallsOnNonAssistant,
                Some(i),
                format!(
                    "{:?} message carries {} tool call(s)",
                    m.role,
                    m.tool_calls.len()
                ),
            );
        }
        match (m.role, &m.tool_call_id) {
            (Role::Tool, None) => report.push(
                ViolationCode::MissingToolCallId,
                Some(i),
                "tool message without tool_call_id",
            ),
            (Role::Tool, Some(id)) => {
                if !seen_calls.contains(id.as_str()) {
                    report.push(
                        ViolationCode::DanglingToolId,
                        Some(i),
                        format!("tool_call_id `{id}` matches no preceding tool call"),
                    );
                }
            }
            (_, Some(id)) => report.push(
                ViolationCode::UnexpectedToolCallId,
                Some(i),
                format!("{:?} message carries tool_call_id `{id}`", m.role),
            ),
            (_, None) => {}
        }
        if m.is_error && m.role != Role::Tool {
            report.push(
                ViolationCode::ErrorFlagOnNonTool,
                Some(i),
                format!("{:?} message has is_error set", m.role),
            );
        }
        if let Some(phase) = m.phase {
            if !phase.allowed_in(t.mode) {
                report.push(
                    ViolationCode::PhaseNotAllowed,
                    Some(i),
                    format!("phase {phase:?} is not used in {} mode", t.mode),
                );
            }
        }
        for call in &m.tool_calls {
            if m.role == Role::Assistant && !seen_calls.insert(call.id.as_str()) {
                report.push(
                    ViolationCode::DuplicateToolCallId,
                    Some(i),
                    format!("tool call id `{}` reused", call.id),
                );
            }
            if call.name == ToolName::ExecuteBash
                && call.bash_command().is_none_or(|c| c.is_empty())
            {
                report.push(
                    ViolationCode::EmptyBashCommand,
                    Some(i),
                    "execute_bash call without a non-empty `command` argument",
                );
            }
        }
    }
    report
}

/// Reports (task_id, rollout_id, mode) keys that occur more than once.
pub fn validate_corpus(corpus: &[Trajectory]) -> ValidationReport {
    let mut report = ValidationReport::default();
    let mut seen = HashSet::new();
    for t in corpus {
        let key = t.key();
        if !seen.insert(key) {
            report.push(
                ViolationCode::DuplicateKey,
                None,
                format!(
                    "duplicate trajectory ({}, {}, {})",
                    t.task_id, t.rollout_id, t.mode
                ),
            );
        }
    }
    report
}

fn is_commit_id(s: &str) -> bool {
    s.len() == 40 && s.bytes().all(|b| b.is_ascii_hexdigit())
}

pub fn validate_task(task: &TaskInstance) -> ValidationReport {
    let mut report = ValidationReport::default();
    if task.task_id.is_empty() {
        report.push(ViolationCode::EmptyTaskId, None, "task_id is empty");
    }
    if !is_commit_id(&task.base_commit) {
        report.push(
            ViolationCode::BadBaseCommit,
            None,
            format!(
                "base_commit `{}` is not a 40-hex commit id",
                task.base_commit
            ),
        );
    }
    if let Err(e) = diff::patch_paths(&task.test_patch) {
        report.push(ViolationCode::MalformedTestPatch, None, e.to_string());
    }
    report
}
