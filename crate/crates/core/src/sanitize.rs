//! Removal of repository history that postdates a task's base commit.
//!
//! A commit survives iff it is the base commit or one of its ancestors.
//! Branches and tags (remote-tracking refs, stashes and reflog entries are
//! recorded as branches) survive iff their target survives.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

pub type CommitId = String;

/// Snapshot of a repository's commit graph and refs.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefGraph {
    /// Commit id to parent ids.
    pub commits: BTreeMap<CommitId, Vec<CommitId>>,
    #[serde(default)]
    pub branches: BTreeMap<String, CommitId>,
    #[serde(default)]
    pub tags: BTreeMap<String, CommitId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head: Option<CommitId>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SanitizationPlan {
    pub remove_commits: BTreeSet<CommitId>,
    pub remove_branches: BTreeSet<String>,
    pub remove_tags: BTreeSet<String>,
    pub retarget_head: CommitId,
}

impl SanitizationPlan {
    pub fn is_empty(&self) -> bool {
        self.remove_commits.is_empty()
            && self.remove_branches.is_empty()
            && self.remove_tags.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SanitizeError {
    #[error("unknown commit `{0}`")]
    UnknownCommit(CommitId),
    #[error("inconsistent plan: {0}")]
    InconsistentPlan(String),
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
}

impl RefGraph {
    fn refs(&self) -> impl Iterator<Item = (&'static str, &String, &CommitId)> {
        self.branches
            .iter()
            .map(|(n, c)| ("branch", n, c))
            .chain(self.tags.iter().map(|(n, c)| ("tag", n, c)))
    }

    /// Checks that parents and ref targets exist and that history is acyclic.
    pub fn check(&self) -> Result<(), SanitizeError> {
        for (id, parents) in &self.commits {
            if let Some(p) = parents.iter().find(|p| !self.commits.contains_key(*p)) {
                return Err(SanitizeError::InvalidGraph(format!(
                    "commit `{id}` has unknown parent `{p}`"
                )));
            }
        }
        for (kind, name, target) in self.refs() {
            if !self.commits.contains_key(target) {
                return Err(SanitizeError::InvalidGraph(format!(
                    "{kind} `{name}` targets unknown commit `{target}`"
                )));
            }
        }
        if let Some(head) = &self.head {
            if !self.commits.contains_key(head) {
                return Err(SanitizeError::InvalidGraph(format!(
                    "HEAD targets unknown commit `{head}`"
                )));
            }
        }
        // Kahn's algorithm over child -> parent edges.
        let mut pending: HashMap<&str, usize> =
            self.commits.keys().map(|k| (k.as_str(), 0)).collect();
        for parents in self.commits.values() {
            for p in parents {
                *pending.get_mut(p.as_str()).expect("checked above") += 1;
            }
        }
        let mut ready: Vec<&str> = pending
            .iter()
            .filter(|(_, &n)| n == 0)
            .map(|(&k, _)| k)
            .collect();
        let mut visited = 0;
        while let Some(id) = ready.pop() {
            visited += 1;
            for p in &self.commits[id] {
                let n = pending.get_mut(p.as_str()).expect("checked above");
                *n -= 1;
                if *n == 0 {
                    ready.push(p);
                }
            }
        }
        if visited != self.commits.len() {
            return Err(SanitizeError::InvalidGraph(
                "parent relation has a cycle".into(),
            ));
        }
        Ok(())
    }
}

/// `base` together with all of its transitive parents.
pub fn ancestor_closure(g: &RefGraph, base: &str) -> Result<BTreeSet<CommitId>, SanitizeError> {
    if !g.commits.contains_key(base) {
        return Err(SanitizeError::UnknownCommit(base.to_string()));
    }
    let mut seen = BTreeSet::new();
    let mut stack = vec![base];
    while let Some(id) = stack.pop() {
        if !seen.insert(id.to_string()) {
            continue;
        }
        if let Some(parents) = g.commits.get(id) {
            stack.extend(
                parents
                    .iter()
                    .map(String::as_str)
                    .filter(|p| !seen.contains(*p)),
            );
        }
    }
    Ok(seen)
}

pub fn plan_sanitization(g: &RefGraph, base: &str) -> Result<SanitizationPlan, SanitizeError> {
    let keep = ancestor_closure(g, base)?;
    let remove_commits: BTreeSet<CommitId> = g
        .commits
        .keys()
        .filter(|c| !keep.contains(*c))
        .cloned()
        .collect();
    let doomed = |refs: &BTreeMap<String, CommitId>| {
        refs.iter()
            .filter(|(_, target)| !keep.contains(*target))
            .map(|(name, _)| name.clone())
            .collect::<BTreeSet<_>>()
    };
    Ok(SanitizationPlan {
        remove_branches: doomed(&g.branches),
        remove_tags: doomed(&g.tags),
        remove_commits,
        retarget_head: base.to_string(),
    })
}

/// Applies a plan. Entries already absent from `g` are ignored, so applying
/// the same plan twice is a no-op. Fails if the head target is unknown or
/// scheduled for removal, or if the result would leave a parent or ref
/// pointing at a removed commit.
pub fn apply_plan(g: &RefGraph, p: &SanitizationPlan) -> Result<RefGraph, SanitizeError> {
    if !g.commits.contains_key(&p.retarget_head) {
        return Err(SanitizeError::InconsistentPlan(format!(
            "head target `{}` is not in the graph",
            p.retarget_head
        )));
    }
    if p.remove_commits.contains(&p.retarget_head) {
        return Err(SanitizeError::InconsistentPlan(format!(
            "head target `{}` is scheduled for removal",
            p.retarget_head
        )));
    }
    let commits: BTreeMap<CommitId, Vec<CommitId>> = g
        .commits
        .iter()
        .filter(|(id, _)| !p.remove_commits.contains(*id))
        .map(|(id, parents)| (id.clone(), parents.clone()))
        .collect();
    let keep_refs = |refs: &BTreeMap<String, CommitId>, removed: &BTreeSet<String>| {
        refs.iter()
            .filter(|(name, _)| !removed.contains(*name))
            .map(|(n, c)| (n.clone(), c.clone()))
            .collect::<BTreeMap<_, _>>()
    };
    let out = RefGraph {
        commits,
        branches: keep_refs(&g.branches, &p.remove_branches),
        tags: keep_refs(&g.tags, &p.remove_tags),
        head: Some(p.retarget_head.clone()),
    };
    out.check().map_err(|e| match e {
        SanitizeError::InvalidGraph(msg) => SanitizeError::InconsistentPlan(msg),
        other => other,
    })?;
    Ok(out)
}

/// True iff `g` holds exactly the ancestor closure of `base` and every ref
/// targets a member of it.
pub fn verify_sanitized(g: &RefGraph, base: &str) -> Result<bool, SanitizeError> {
    let keep = ancestor_closure(g, base)?;
    if g.commits.len() != keep.len() {
        return Ok(false);
    }
    let refs_ok = g.refs().all(|(_, _, target)| keep.contains(target))
        && g.head.as_ref().is_none_or(|h| keep.contains(h));
    Ok(refs_ok)
}
