//! Curation and evaluation toolkit for software-engineering agent trajectories.
//!
//! The pipeline runs in this order:
//!
//! 1. [`ingest`] decodes line-delimited trajectory and task records;
//!    [`model`] validates them.
//! 2. [`guard`] judges `execute_bash` calls against a command whitelist.
//! 3. [`filter`] applies the execution-free stage and the quality stage;
//!    [`redact`] scrubs personal data.
//! 4. [`assemble`] selects rollouts per task, computes corpus statistics and
//!    efficiency curves, and exports loss-masked SFT records.
//! 5. [`tts`] scores verifier outputs and computes Pass@1, Pass@K and Best@K.
//!
//! [`sanitize`] plans removal of repository refs that postdate a task's base
//! commit.
//!
//! Numeric code in [`tts`] and the curve computation in [`assemble`] is
//! generic over [`num_traits::Float`]; the aliases below fix it to `f64`.

pub mod assemble;
pub mod diff;
pub mod filter;
pub mod guard;
pub mod ingest;
pub mod model;
pub mod parallel;
pub mod redact;
pub mod sanitize;
pub mod tts;

pub use diff::{patch_paths, DiffError};
pub use guard::{is_prohibited, CommandReport, Verdict, WhitelistPolicy};
pub use ingest::{parse_corpus, IngestError};
pub use model::{Message, Mode, Role, TaskInstance, ToolCall, ToolName, Trajectory};

pub type ScoredRollout = tts::ScoredRollout<f64>;
pub type TtsMetrics = tts::TtsMetrics<f64>;
pub type CurvePoint = assemble::CurvePoint<f64>;

pub type ScoredRolloutF32 = tts::ScoredRollout<f32>;
pub type TtsMetricsF32 = tts::TtsMetrics<f32>;
pub type CurvePointF32 = assemble::CurvePoint<f32>;
