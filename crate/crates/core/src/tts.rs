//! Test-time scaling: verifier scores, Best@K selection and Pass@K metrics.

use std::collections::BTreeMap;

use num_traits::Float;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// K values of the standard sweep.
pub const SWEEP_KS: [usize; 6] = [1, 2, 4, 8, 16, 32];

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TtsError {
    #[error("p_yes + p_no is too small to normalize")]
    DegenerateProbabilities,
    #[error("invalid probabilities: {0}")]
    InvalidProbabilities(String),
    #[error("empty rollout pool")]
    EmptyPool,
    #[error("task `{task_id}` has {available} rollouts, fewer than K = {k}")]
    InsufficientRollouts {
        task_id: String,
        available: usize,
        k: usize,
    },
    #[error("K must be at least 1")]
    ZeroK,
    #[error("pool mixes tasks `{0}` and `{1}`")]
    MixedTasks(String, String),
    #[error("task `{task_id}` has rollout {rollout_id} more than once")]
    DuplicateRollout { task_id: String, rollout_id: u64 },
}

fn constant<F: Float>(x: f64) -> F {
    F::from(x).expect("constant representable")
}

/// `p_yes / (p_yes + p_no)`.
pub fn normalize_score<F: Float>(p_yes: F, p_no: F) -> Result<F, TtsError> {
    if p_yes.is_nan() || p_no.is_nan() || p_yes < F::zero() || p_no < F::zero() {
        return Err(TtsError::InvalidProbabilities(
            "probabilities must be non-negative".into(),
        ));
    }
    let total = p_yes + p_no;
    if total > F::one() + constant(1e-9) {
        return Err(TtsError::InvalidProbabilities(
            "p_yes + p_no exceeds 1".into(),
        ));
    }
    if total < constant(1e-12) {
        return Err(TtsError::DegenerateProbabilities);
    }
    Ok(p_yes / total)
}

/// One line of a score file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub task_id: String,
    pub rollout_id: u64,
    pub p_yes: f64,
    pub p_no: f64,
    pub resolved: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredRollout<F> {
    pub task_id: String,
    pub rollout_id: u64,
    pub p_yes: F,
    pub p_no: F,
    pub score: F,
    pub resolved: bool,
}

impl<F: Float> ScoredRollout<F> {
    pub fn new(
        task_id: impl Into<String>,
        rollout_id: u64,
        p_yes: F,
        p_no: F,
        resolved: bool,
    ) -> Result<Self, TtsError> {
        Ok(ScoredRollout {
            task_id: task_id.into(),
            rollout_id,
            score: normalize_score(p_yes, p_no)?,
            p_yes,
            p_no,
            resolved,
        })
    }

    pub fn from_record(r: &ScoreRecord) -> Result<Self, TtsError> {
        let cast = |x: f64| {
            F::from(x)
                .ok_or_else(|| TtsError::InvalidProbabilities(format!("{x} not representable")))
        };
        Self::new(
            r.task_id.clone(),
            r.rollout_id,
            cast(r.p_yes)?,
            cast(r.p_no)?,
            r.resolved,
        )
    }
}

/// How the K candidates are drawn from a larger pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SubsetMode {
    /// The K lowest rollout ids.
    #[default]
    Prefix,
    /// K rollouts drawn without replacement, seeded per task.
    Random { seed: u64 },
}

fn task_seed(seed: u64, task_id: &str) -> u64 {
    // FNV-1a over the task id, mixed with the caller's seed.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in task_id.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h ^ seed.rotate_left(17)
}

/// The K candidates of a pool, ordered by rollout id.
pub fn candidates<F: Float>(
    rollouts: &[ScoredRollout<F>],
    k: usize,
    mode: SubsetMode,
) -> Result<Vec<&ScoredRollout<F>>, TtsError> {
    let first = rollouts.first().ok_or(TtsError::EmptyPool)?;
    if let Some(other) = rollouts.iter().find(|r| r.task_id != first.task_id) {
        return Err(TtsError::MixedTasks(
            first.task_id.clone(),
            other.task_id.clone(),
        ));
    }
    if k == 0 {
        return Err(TtsError::ZeroK);
    }
    if k > rollouts.len() {
        return Err(TtsError::InsufficientRollouts {
            task_id: first.task_id.clone(),
            available: rollouts.len(),
            k,
        });
    }
    let mut ordered: Vec<&ScoredRollout<F>> = rollouts.iter().collect();
    ordered.sort_by_key(|r| r.rollout_id);
    let mut chosen = match mode {
        SubsetMode::Prefix => {
            ordered.truncate(k);
            ordered
        }
        SubsetMode::Random { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(task_seed(seed, &first.task_id));
            sample(&mut rng, ordered.len(), k)
                .into_iter()
                .map(|i| ordered[i])
                .collect()
        }
    };
    chosen.sort_by_key(|r| r.rollout_id);
    Ok(chosen)
}

/// Highest score among the candidates; ties go to the lowest rollout id.
pub fn best_at_k<F: Float>(
    rollouts: &[ScoredRollout<F>],
    k: usize,
    mode: SubsetMode,
) -> Result<&ScoredRollout<F>, TtsError> {
    let pool = candidates(rollouts, k, mode)?;
    let mut best = pool[0];
    for r in &pool[1..] {
        if r.score > best.score {
            best = r;
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TtsMetrics<F> {
    pub k: usize,
    pub tasks: usize,
    pub subset: SubsetMode,
    /// Mean resolve rate over all K candidates of all tasks.
    pub pass1_avg: F,
    /// Fraction of tasks with at least one resolved candidate.
    pub pass_k: F,
    /// Fraction of tasks whose top-scored candidate is resolved.
    pub best_k: F,
}

pub type Pools<F> = BTreeMap<String, Vec<ScoredRollout<F>>>;

pub fn compute_metrics<F: Float>(
    pools: &Pools<F>,
    k: usize,
    mode: SubsetMode,
) -> Result<TtsMetrics<F>, TtsError> {
    if pools.is_empty() {
        return Err(TtsError::EmptyPool);
    }
    let mut resolved_candidates = 0usize;
    let mut any_resolved = 0usize;
    let mut best_resolved = 0usize;
    for rollouts in pools.values() {
        let pool = candidates(rollouts, k, mode)?;
        let hits = pool.iter().filter(|r| r.resolved).count();
        resolved_candidates += hits;
        any_resolved += usize::from(hits > 0);
        best_resolved += usize::from(best_at_k(rollouts, k, mode)?.resolved);
    }
    let cast = |x: usize| F::from(x).expect("count fits a float");
    let tasks = cast(pools.len());
    Ok(TtsMetrics {
        k,
        tasks: pools.len(),
        subset: mode,
        pass1_avg: cast(resolved_candidates) / (tasks * cast(k)),
        pass_k: cast(any_resolved) / tasks,
        best_k: cast(best_resolved) / tasks,
    })
}

/// Metrics for every K in [`SWEEP_KS`] that all pools can supply.
pub fn sweep<F: Float>(pools: &Pools<F>, mode: SubsetMode) -> Result<Vec<TtsMetrics<F>>, TtsError> {
    let smallest = pools
        .values()
        .map(Vec::len)
        .min()
        .ok_or(TtsError::EmptyPool)?;
    SWEEP_KS
        .iter()
        .filter(|&&k| k <= smallest)
        .map(|&k| compute_metrics(pools, k, mode))
        .collect()
}

/// Scores records and groups them by task.
pub fn build_pools<F: Float>(records: &[ScoreRecord]) -> Result<Pools<F>, TtsError> {
    let mut pools: Pools<F> = BTreeMap::new();
    for r in records {
        let scored = ScoredRollout::from_record(r)?;
        let pool = pools.entry(r.task_id.clone()).or_default();
        if pool.iter().any(|p| p.rollout_id == r.rollout_id) {
            return Err(TtsError::DuplicateRollout {
                task_id: r.task_id.clone(),
                rollout_id: r.rollout_id,
            });
        }
        pool.push(scored);
    }
    Ok(pools)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pool(scores: &[f64], resolved: &[bool]) -> Vec<ScoredRollout<f64>> {
        scores
            .iter()
            .zip(resolved)
            .enumerate()
            .map(|(i, (&s, &r))| ScoredRollout::new("t", i as u64, s, 1.0 - s, r).unwrap())
            .collect()
    }

    #[test]
    fn normalization() {
        assert!((normalize_score(0.8, 0.2).unwrap() - 0.8_f64).abs() < 1e-15);
        assert_eq!(normalize_score(0.3_f32, 0.3).unwrap(), 0.5);
        assert_eq!(
            normalize_score(0.0_f64, 0.0),
            Err(TtsError::DegenerateProbabilities)
        );
        assert!(matches!(
            normalize_score(0.7_f64, 0.4),
            Err(TtsError::InvalidProbabilities(_))
        ));
        assert!(matches!(
            normalize_score(-0.1_f64, 0.4),
            Err(TtsError::InvalidProbabilities(_))
        ));
        // Within tolerance of 1.
        assert!(normalize_score(0.5_f64, 0.5 + 1e-10).is_ok());
    }

    #[test]
    fn best_examples() {
        let p = pool(&[0.2, 0.9, 0.4], &[false; 3]);
        assert_eq!(best_at_k(&p, 3, SubsetMode::Prefix).unwrap().rollout_id, 1);
        assert_eq!(best_at_k(&p, 1, SubsetMode::Prefix).unwrap().rollout_id, 0);
        let tie = pool(&[0.7, 0.7], &[false; 2]);
        assert_eq!(
            best_at_k(&tie, 2, SubsetMode::Prefix).unwrap().rollout_id,
            0
        );
        assert_eq!(
            best_at_k::<f64>(&[], 1, SubsetMode::Prefix),
            Err(TtsError::EmptyPool)
        );
    }

    #[test]
    fn prefix_follows_rollout_id_not_position() {
        let mut p = pool(&[0.2, 0.9, 0.4], &[false; 3]);
        p.reverse();
        assert_eq!(best_at_k(&p, 1, SubsetMode::Prefix).unwrap().rollout_id, 0);
    }

    #[test]
    fn metrics_arithmetic() {
        let pools = Pools::from([(
            "t".to_string(),
            pool(&[0.1, 0.2, 0.3, 0.4], &[true, false, false, true]),
        )]);
        let m = compute_metrics(&pools, 4, SubsetMode::Prefix).unwrap();
        assert_eq!(m.pass1_avg, 0.5);
        assert_eq!(m.pass_k, 1.0);
        assert_eq!(m.best_k, 1.0);
    }

    #[test]
    fn verifier_error_on_one_task() {
        // Tasks a and b: the verifier picks the resolved rollout. Task c: it
        // picks rollout 0, which is unresolved, while rollout 1 is resolved.
        let mut pools = Pools::new();
        for (task, scores, resolved) in [
            ("a", [0.9, 0.1], [true, false]),
            ("b", [0.2, 0.8], [false, true]),
            ("c", [0.7, 0.3], [false, true]),
        ] {
            let p = scores
                .iter()
                .zip(resolved)
                .enumerate()
                .map(|(i, (&s, r))| ScoredRollout::new(task, i as u64, s, 1.0 - s, r).unwrap())
                .collect();
            pools.insert(task.to_string(), p);
        }
        let m = compute_metrics(&pools, 2, SubsetMode::Prefix).unwrap();
        assert_eq!(m.pass_k, 1.0);
        assert!((m.best_k - (m.pass_k - 1.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn insufficient_rollouts() {
        let pools = Pools::from([("t".to_string(), pool(&[0.5], &[true]))]);
        assert!(matches!(
            compute_metrics(&pools, 2, SubsetMode::Prefix),
            Err(TtsError::InsufficientRollouts { .. })
        ));
    }

    #[test]
    fn random_subsets_are_seeded() {
        let p = pool(&[0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8], &[false; 8]);
        let a = candidates(&p, 3, SubsetMode::Random { seed: 7 }).unwrap();
        let b = candidates(&p, 3, SubsetMode::Random { seed: 7 }).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 3);
        assert!(a.windows(2).all(|w| w[0].rollout_id < w[1].rollout_id));
        let full = candidates(&p, 8, SubsetMode::Random { seed: 1 }).unwrap();
        assert_eq!(full.len(), 8);
    }

    #[test]
    fn sweep_stops_at_smallest_pool() {
        let scores: Vec<f64> = (0..5).map(|i| i as f64 / 10.0).collect();
        let pools = Pools::from([(
            "t".to_string(),
            pool(&scores, &[false, true, false, false, true]),
        )]);
        let ks: Vec<usize> = sweep(&pools, SubsetMode::Prefix)
            .unwrap()
            .iter()
            .map(|m| m.k)
            .collect();
        assert_eq!(ks, [1, 2, 4]);
    }

    #[test]
    fn pools_from_records() {
        let recs = vec![
            ScoreRecord {
                task_id: "a".into(),
                rollout_id: 0,
                p_yes: 0.6,
                p_no: 0.2,
                resolved: true,
            },
            ScoreRecord {
                task_id: "a".into(),
                rollout_id: 0,
                p_yes: 0.6,
                p_no: 0.2,
                resolved: true,
            },
        ];
        assert!(matches!(
            build_pools::<f64>(&recs),
            Err(TtsError::DuplicateRollout { .. })
        ));
        let pools = build_pools::<f32>(&recs[..1]).unwrap();
        assert!((pools["a"][0].score - 0.75).abs() < 1e-6);
    }
}
