//! File-path extraction from unified diffs.

use std::collections::BTreeSet;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DiffError {
    #[error("line {line}: hunk header before any file header")]
    MalformedDiff { line: usize },
}

/// Old/new line counts still expected by the hunk being read.
#[derive(Debug, Clone, Copy)]
struct HunkRemaining {
    old: u64,
    new: u64,
}

impl HunkRemaining {
    fn done(&self) -> bool {
        self.old == 0 && self.new == 0
    }
}

/// Parses `@@ -a[,b] +c[,d] @@`. Counts default to 1 when omitted.
fn parse_hunk_header(line: &str) -> Option<HunkRemaining> {
    let rest = line.strip_prefix("@@ -")?;
    let (old, rest) = rest.split_once(" +")?;
    let (new, _) = rest.split_once(" @@")?;
    let count = |range: &str| -> Option<u64> {
        match range.split_once(',') {
            Some((_, n)) => n.parse().ok(),
            None => range.parse::<u64>().ok().map(|_| 1),
        }
    };
    Some(HunkRemaining {
        old: count(old)?,
        new: count(new)?,
    })
}

fn unquote(path: &str) -> String {
    let Some(inner) = path.strip_prefix('"').and_then(|p| p.strip_suffix('"')) else {
        return path.to_string();
    };
    let mut out = String::with_capacity(inner.len());
    let mut chars = inner.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next() {
                Some('t') => out.push('\t'),
                Some('n') => out.push('\n'),
                Some(other) => out.push(other),
                None => out.push('\\'),
            }
        } else {
            out.push(c);
        }
    }
    out
}

fn strip_side_prefix(path: &str) -> &str {
    path.strip_prefix("a/")
        .or_else(|| path.strip_prefix("b/"))
        .unwrap_or(path)
}

/// Path from a `---`/`+++` header, with any tab-separated timestamp dropped.
fn header_path(rest: &str) -> Option<String> {
    let rest = rest.split('\t').next().unwrap_or(rest).trim_end();
    if rest.is_empty() {
        return None;
    }
    let path = unquote(rest);
    if path == "/dev/null" {
        return None;
    }
    Some(strip_side_prefix(&path).to_string())
}

/// Splits `a/X b/Y` from a `diff --git` header.
fn git_header_paths(rest: &str) -> Vec<String> {
    let rest = rest.trim_end();
    if let Some(tail) = rest.strip_prefix('"') {
        // Quoted form: "a/X" "b/Y" (either side may be unquoted).
        if let Some(end) = tail.find("\" ").map(|i| i + 1) {
            let (old, new) = (&rest[..=end], rest[end + 1..].trim_start());
            return vec![unquote(old), unquote(new)]
                .into_iter()
                .map(|p| strip_side_prefix(&p).to_string())
                .collect();
        }
    }
    if let Some(idx) = rest.find(" b/").or_else(|| rest.find(" \"b/")) {
        let old = unquote(&rest[..idx]);
        let new = unquote(&rest[idx + 1..]);
        return vec![
            strip_side_prefix(&old).to_string(),
            strip_side_prefix(&new).to_string(),
        ];
    }
    Vec::new()
}

/// Returns every file path touched by `diff`: both sides of each `---`/`+++`
/// pair and each `diff --git` header, plus `rename from`/`rename to` lines,
/// with `a/` and `b/` prefixes stripped and `/dev/null` omitted.
pub fn patch_paths(diff: &str) -> Result<BTreeSet<String>, DiffError> {
    scan(diff, true)
}

/// Like [`patch_paths`], but a hunk before any file header is skipped
/// instead of rejected.
pub fn touched_paths(diff: &str) -> BTreeSet<String> {
    scan(diff, false).unwrap_or_default()
}

fn scan(diff: &str, strict: bool) -> Result<BTreeSet<String>, DiffError> {
    let mut paths = BTreeSet::new();
    let mut seen_file_header = false;
    let mut hunk: Option<HunkRemaining> = None;

    for (idx, line) in diff.lines().enumerate() {
        if let Some(h) = hunk.as_mut() {
            if !h.done() {
                match line.as_bytes().first() {
                    Some(b' ') | None => {
                        h.old = h.old.saturating_sub(1);
                        h.new = h.new.saturating_sub(1);
                        continue;
                    }
                    Some(b'-') => {
                        h.old = h.old.saturating_sub(1);
                        continue;
                    }
                    Some(b'+') => {
                        h.new = h.new.saturating_sub(1);
                        continue;
                    }
                    Some(b'\\') => continue,
                    // A short hunk; fall through and treat as a header line.
                    _ => {}
                }
            }
            if line.starts_with("\\ ") {
                continue;
            }
            hunk = None;
        }

        if let Some(rest) = line.strip_prefix("diff --git ") {
            seen_file_header = true;
            paths.extend(git_header_paths(rest));
        } else if let Some(rest) = line.strip_prefix("--- ") {
            seen_file_header = true;
            paths.extend(header_path(rest));
        } else if let Some(rest) = line.strip_prefix("+++ ") {
            seen_file_header = true;
            paths.extend(header_path(rest));
        } else if let Some(rest) = line
            .strip_prefix("rename from ")
            .or_else(|| line.strip_prefix("rename to "))
            .or_else(|| line.strip_prefix("copy from "))
            .or_else(|| line.strip_prefix("copy to "))
        {
            paths.insert(unquote(rest.trim_end()));
        } else if line.starts_with("@@ ") {
            if !seen_file_header && strict {
                return Err(DiffError::MalformedDiff { line: idx + 1 });
            }
            hunk = parse_hunk_header(line);
        }
    }
    Ok(paths)
}
