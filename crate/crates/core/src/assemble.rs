//! Corpus assembly: per-task selection, statistics, efficiency curves and
//! loss-masked SFT export.

use std::collections::BTreeMap;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::model::{Message, Mode, Role, ToolCall, Trajectory};
use crate::parallel::map_ordered;

pub const DEFAULT_QUOTA: usize = 2;
pub const HISTOGRAM_BUCKET: usize = 5;

/// Maps text to a token count.
pub trait TokenCounter: Sync {
    fn count(&self, text: &str) -> u64;
}

/// Tokenizer-free proxy: one token per four bytes, rounded up.
#[derive(Debug, Clone, Copy, Default)]
pub struct ByteQuarterCounter;

impl TokenCounter for ByteQuarterCounter {
    fn count(&self, text: &str) -> u64 {
        (text.len() as u64).div_ceil(4)
    }
}

impl<F: Fn(&str) -> u64 + Sync> TokenCounter for F {
    fn count(&self, text: &str) -> u64 {
        self(text)
    }
}

/// The recorded `token_count`, or the counter applied to each message body
/// and each tool call's JSON arguments.
pub fn trajectory_tokens(t: &Trajectory, counter: &dyn TokenCounter) -> u64 {
    if let Some(n) = t.token_count {
        return n;
    }
    t.messages
        .iter()
        .map(|m| {
            counter.count(&m.content)
                + m.tool_calls
                    .iter()
                    .map(|c| {
                        let args = serde_json::to_string(&c.arguments).unwrap_or_default();
                        counter.count(&args)
                    })
                    .sum::<u64>()
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AssembleError {
    #[error("task `{0}` has rollouts from both modes")]
    MixedModes(String),
    #[error("task `{task_id}` has rollout {rollout_id} more than once")]
    DuplicateRollout { task_id: String, rollout_id: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutPool {
    pub task_id: String,
    pub mode: Mode,
    pub rollouts: Vec<Trajectory>,
    /// Rollouts present for the task when grouped.
    pub generated_n: usize,
}

/// Partitions a corpus by task. Pools keep corpus order.
pub fn group_by_task(
    corpus: impl IntoIterator<Item = Trajectory>,
) -> Result<BTreeMap<String, RolloutPool>, AssembleError> {
    let mut pools: BTreeMap<String, RolloutPool> = BTreeMap::new();
    for t in corpus {
        let pool = pools
            .entry(t.task_id.clone())
            .or_insert_with(|| RolloutPool {
                task_id: t.task_id.clone(),
                mode: t.mode,
                rollouts: Vec::new(),
                generated_n: 0,
            });
        if pool.mode != t.mode {
            return Err(AssembleError::MixedModes(t.task_id));
        }
        if pool.rollouts.iter().any(|r| r.rollout_id == t.rollout_id) {
            return Err(AssembleError::DuplicateRollout {
                task_id: t.task_id,
                rollout_id: t.rollout_id,
            });
        }
        pool.rollouts.push(t);
        pool.generated_n += 1;
    }
    Ok(pools)
}

/// Picks up to `quota` rollouts, shortest first, ties broken by rollout id.
pub fn select_per_task(
    pool: &RolloutPool,
    quota: usize,
    counter: &dyn TokenCounter,
) -> Vec<Trajectory> {
    let mut ranked: Vec<(u64, u64, &Trajectory)> = pool
        .rollouts
        .iter()
        .map(|t| (trajectory_tokens(t, counter), t.rollout_id, t))
        .collect();
    ranked.sort_by_key(|&(tokens, id, _)| (tokens, id));
    ranked
        .into_iter()
        .take(quota)
        .map(|(_, _, t)| t.clone())
        .collect()
}

/// Groups and selects. Output is ordered by task id, then selection rank.
pub fn assemble(
    corpus: impl IntoIterator<Item = Trajectory>,
    quota: usize,
    counter: &dyn TokenCounter,
) -> Result<Vec<Trajectory>, AssembleError> {
    let pools = group_by_task(corpus)?;
    Ok(pools
        .values()
        .flat_map(|pool| select_per_task(pool, quota, counter))
        .collect())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModeStats {
    pub trajectories: usize,
    /// Bucket lower bound (multiple of 5 assistant turns) to count.
    pub turn_histogram: BTreeMap<usize, usize>,
    pub token_total: u64,
    pub token_mean: f64,
    pub turn_total: u64,
    pub turn_mean: f64,
}

impl ModeStats {
    fn add(&mut self, turns: usize, tokens: u64) {
        self.trajectories += 1;
        *self
            .turn_histogram
            .entry(turns / HISTOGRAM_BUCKET * HISTOGRAM_BUCKET)
            .or_default() += 1;
        self.token_total += tokens;
        self.turn_total += turns as u64;
    }

    fn merge(&mut self, other: &ModeStats) {
        self.trajectories += other.trajectories;
        for (&bucket, &n) in &other.turn_histogram {
            *self.turn_histogram.entry(bucket).or_default() += n;
        }
        self.token_total += other.token_total;
        self.turn_total += other.turn_total;
    }

    fn finish(&mut self) {
        let n = self.trajectories.max(1) as f64;
        self.token_mean = self.token_total as f64 / n;
        self.turn_mean = self.turn_total as f64 / n;
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub trajectory_count: usize,
    pub modes: BTreeMap<Mode, ModeStats>,
    /// `1 - mean_tokens(zero) / mean_tokens(hero)`; absent unless both modes
    /// are present.
    pub token_reduction_ratio: Option<f64>,
}

impl CorpusStats {
    fn finish(&mut self) {
        for stats in self.modes.values_mut() {
            stats.finish();
        }
        self.token_reduction_ratio =
            match (self.modes.get(&Mode::Zero), self.modes.get(&Mode::Hero)) {
                (Some(zero), Some(hero)) if hero.token_mean > 0.0 => {
                    Some(1.0 - zero.token_mean / hero.token_mean)
                }
                _ => None,
            };
    }

    /// Combines statistics of two disjoint corpora.
    pub fn merge(&self, other: &CorpusStats) -> CorpusStats {
        let mut out = self.clone();
        out.trajectory_count += other.trajectory_count;
        for (mode, stats) in &other.modes {
            out.modes.entry(*mode).or_default().merge(stats);
        }
        out.finish();
        out
    }
}

pub fn corpus_stats<'a>(
    corpus: impl IntoIterator<Item = &'a Trajectory>,
    counter: &dyn TokenCounter,
) -> CorpusStats {
    let mut stats = CorpusStats::default();
    for t in corpus {
        stats.trajectory_count += 1;
        stats
            .modes
            .entry(t.mode)
            .or_default()
            .add(t.turns(), trajectory_tokens(t, counter));
    }
    stats.finish();
    stats
}

/// One line of a curve labels file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurveRecord {
    pub task_id: String,
    pub resolved: bool,
    pub turns: u64,
    pub tokens: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CostKind {
    Turns,
    Tokens,
}

impl std::str::FromStr for CostKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "turns" => Ok(CostKind::Turns),
            "tokens" => Ok(CostKind::Tokens),
            other => Err(format!("unknown cost `{other}` (expected turns or tokens)")),
        }
    }
}

impl CurveRecord {
    fn cost(&self, kind: CostKind) -> u64 {
        match kind {
            CostKind::Turns => self.turns,
            CostKind::Tokens => self.tokens,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint<F> {
    /// 1-based position after ordering by cost.
    pub rank: usize,
    pub task_id: String,
    pub cumulative_resolve_rate: F,
    pub cumulative_mean_cost: F,
}

/// Orders tasks by ascending cost (ties by task id) and reports, for each
/// prefix, the fraction resolved and the mean cost.
pub fn efficiency_curves<F: Float>(
    records: &[CurveRecord],
    order_by: CostKind,
) -> Vec<CurvePoint<F>> {
    let mut sorted: Vec<&CurveRecord> = records.iter().collect();
    sorted.sort_by(|a, b| {
        a.cost(order_by)
            .cmp(&b.cost(order_by))
            .then_with(|| a.task_id.cmp(&b.task_id))
    });
    let cast = |x: u64| F::from(x).expect("u64 fits a float");
    let mut resolved = 0u64;
    let mut cost = 0u64;
    sorted
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            resolved += u64::from(r.resolved);
            cost += r.cost(order_by);
            let k = cast(i as u64 + 1);
            CurvePoint {
                rank: i + 1,
                task_id: r.task_id.clone(),
                cumulative_resolve_rate: cast(resolved) / k,
                cumulative_mean_cost: cast(cost) / k,
            }
        })
        .collect()
}

/// A message with its loss flag. Only assistant messages carry loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftMessage {
    pub role: Role,
    pub content: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tool_calls: Vec<ToolCall>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_call_id: Option<String>,
    pub loss_mask: u8,
}

impl SftMessage {
    /// Drops the mask, recovering the conversational content.
    pub fn unmask(&self) -> Message {
        Message {
            tool_calls: self.tool_calls.clone(),
            tool_call_id: self.tool_call_id.clone(),
            ..Message::new(self.role, self.content.clone())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftRecord {
    pub task_id: String,
    pub rollout_id: u64,
    pub messages: Vec<SftMessage>,
}

pub fn sft_record(t: &Trajectory) -> SftRecord {
    SftRecord {
        task_id: t.task_id.clone(),
        rollout_id: t.rollout_id,
        messages: t
            .messages
            .iter()
            .map(|m| SftMessage {
                role: m.role,
                content: m.content.clone(),
                tool_calls: m.tool_calls.clone(),
                tool_call_id: m.tool_call_id.clone(),
                loss_mask: u8::from(m.role == Role::Assistant),
            })
            .collect(),
    }
}

pub fn export_sft(corpus: &[Trajectory], workers: usize) -> Vec<SftRecord> {
    map_ordered(corpus, workers, sft_record)
}
