//! Execution-free command policy.
//!
//! Shell text is parsed into a syntax tree, every invoked command name is
//! collected (including names wrapped by `sudo`, `xargs`, `-exec` and
//! `timeout`), and the script is prohibited if any collected name falls
//! outside the whitelist. Text that fails to parse is prohibited.

pub mod ast;
pub mod parser;

use std::collections::HashSet;
use std::io::{self, BufRead};

use serde::{Deserialize, Serialize};

pub use ast::{Node, Part, Script, Word};
pub use parser::{parse_script, ParseFailure};

/// Command names an execution-free agent may run.
pub const DEFAULT_WHITELIST: [&str; 41] = [
    "cd",
    "grep",
    "head",
    "find",
    "rm",
    "git",
    "ls",
    "tail",
    "echo",
    "cat",
    "xargs",
    "pwd",
    "mkdir",
    "which",
    "timeout",
    "sed",
    "wc",
    "mv",
    "chmod",
    "export",
    "cp",
    "true",
    "sort",
    "awk",
    "od",
    "printf",
    "xxd",
    "touch",
    "diff",
    "curl",
    "hexdump",
    "tr",
    "file",
    "sudo",
    "uniq",
    "basename",
    "cut",
    "sha256sum",
    "man",
    "tar",
    "wget",
];

/// Words whose next word-kind part is also collected as a command name.
const NEXT_WORD_WRAPPERS: [&str; 3] = ["sudo", "xargs", "-exec"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WhitelistPolicy {
    names: Vec<String>,
    lookup: HashSet<String>,
}

impl Default for WhitelistPolicy {
    fn default() -> Self {
        Self::new(DEFAULT_WHITELIST)
    }
}

impl WhitelistPolicy {
    /// Builds a policy from names in order; later duplicates are dropped.
    pub fn new<I, S>(names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut policy = WhitelistPolicy {
            names: Vec::new(),
            lookup: HashSet::new(),
        };
        for name in names {
            let name = name.into();
            if policy.lookup.insert(name.clone()) {
                policy.names.push(name);
            }
        }
        policy
    }

    /// Reads one name per line. Blank lines and `#` comments are ignored.
    pub fn from_reader<R: BufRead>(reader: R) -> io::Result<Self> {
        let mut names = Vec::new();
        for line in reader.lines() {
            let line = line?;
            let entry = line.split('#').next().unwrap_or("").trim();
            if !entry.is_empty() {
                names.push(entry.to_string());
            }
        }
        Ok(Self::new(names))
    }

    pub fn allows(&self, name: &str) -> bool {
        self.lookup.contains(name)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn without(&self, name: &str) -> Self {
        Self::new(self.names.iter().filter(|n| *n != name).cloned())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Permitted,
    Prohibited,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommandReport {
    pub names: Vec<String>,
    pub verdict: Verdict,
    pub parse_failed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parse_error: Option<String>,
}

impl CommandReport {
    pub fn is_permitted(&self) -> bool {
        self.verdict == Verdict::Permitted
    }
}

fn collect_from_command(parts: &[Part], names: &mut Vec<String>) {
    if let Some(first) = parts.iter().find_map(Part::as_word) {
        names.push(first.value.clone());
    }
    for (i, part) in parts.iter().enumerate() {
        let Some(word) = part.as_word() else { continue };
        let offset = if NEXT_WORD_WRAPPERS.contains(&word.value.as_str()) {
            1
        } else if word.value == "timeout" {
            // Fixed offset: skips exactly one argument (the duration).
            2
        } else {
            continue;
        };
        if let Some(target) = parts.get(i + offset).and_then(Part::as_word) {
            names.push(target.value.clone());
        }
    }
}

/// Collects command names from every command node at any depth, in
/// pre-order. Duplicates are kept.
pub fn collect_command_names(script: &Script) -> Vec<String> {
    let mut names = Vec::new();
    script.walk(&mut |node| match node {
        Node::Command(cmd) => collect_from_command(&cmd.parts, &mut names),
        Node::Function { name, .. } => names.push(name.value.clone()),
        _ => {}
    });
    names
}

/// Judges `script` against `policy`. Never fails: unparseable text is
/// reported as prohibited with `parse_failed` set.
pub fn is_prohibited(script: &str, policy: &WhitelistPolicy) -> CommandReport {
    match parse_script(script) {
        Ok(ast) => {
            let names = collect_command_names(&ast);
            let verdict = if names.iter().all(|n| policy.allows(n)) {
                Verdict::Permitted
            } else {
                Verdict::Prohibited
            };
            CommandReport {
                names,
                verdict,
                parse_failed: false,
                parse_error: None,
            }
        }
        Err(e) => CommandReport {
            names: Vec::new(),
            verdict: Verdict::Prohibited,
            parse_failed: true,
            parse_error: Some(e.to_string()),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(s: &str) -> Vec<String> {
        collect_command_names(&parse_script(s).unwrap())
    }

    fn judge(s: &str) -> Verdict {
        is_prohibited(s, &WhitelistPolicy::default()).verdict
    }

    #[test]
    fn whitelist_is_verbatim() {
        let p = WhitelistPolicy::default();
        assert_eq!(p.names().len(), 41);
        assert_eq!(p.names()[0], "cd");
        assert_eq!(p.names()[40], "wget");
        assert!(!p.allows("LS"));
    }

    #[test]
    fn wrapper_rules() {
        assert_eq!(names("ls | xargs cat"), ["ls", "xargs", "cat"]);
        assert_eq!(names("timeout 30 pytest"), ["timeout", "pytest"]);
        assert_eq!(names(r"find . -exec python {} \;"), ["find", "python"]);
        assert_eq!(names("sudo ls"), ["sudo", "ls"]);
        assert_eq!(names("sudo pip install x"), ["sudo", "pip"]);
    }

    #[test]
    fn timeout_offset_is_fixed() {
        assert_eq!(names("timeout --signal=KILL 30 cat f"), ["timeout", "30"]);
        assert_eq!(judge("timeout --signal=KILL 30 cat f"), Verdict::Prohibited);
    }

    #[test]
    fn redirect_parts_shift_wrapper_offsets() {
        // The part after `sudo` is a redirection, not a word.
        assert_eq!(names("sudo >log python x"), ["sudo"]);
        assert_eq!(names("timeout 5 2>/dev/null python"), ["timeout"]);
    }

    #[test]
    fn assignments_are_skipped() {
        assert_eq!(names("FOO=1 BAR=2 ls"), ["ls"]);
        assert!(names("FOO=1").is_empty());
    }

    #[test]
    fn functions_collect_name_and_body() {
        assert_eq!(names("run() { pytest; }"), ["run", "pytest"]);
    }

    #[test]
    fn nested_commands_are_visited() {
        assert_eq!(names("echo $(python -V)"), ["echo", "python"]);
        assert_eq!(names("(cd a && make)"), ["cd", "make"]);
        assert_eq!(names("for f in *.py; do grep -l x $f; done"), ["grep"]);
        assert_eq!(names("cat <<EOF\n`pip list`\nEOF\n"), ["cat", "pip"]);
    }

    #[test]
    fn verdicts() {
        assert_eq!(judge("python -c 'print(1)'"), Verdict::Prohibited);
        assert_eq!(
            judge("grep -rn TODO src/ && wc -l report.txt"),
            Verdict::Permitted
        );
        assert_eq!(judge("$CMD --help"), Verdict::Prohibited);
        assert_eq!(judge("busybox python"), Verdict::Prohibited);
        assert_eq!(judge("\"python\" x"), Verdict::Prohibited);
        let blank = is_prohibited("", &WhitelistPolicy::default());
        assert_eq!(blank.verdict, Verdict::Permitted);
        assert!(blank.names.is_empty());
    }

    #[test]
    fn parse_failure_is_prohibited() {
        let r = is_prohibited("echo \"unterminated", &WhitelistPolicy::default());
        assert!(r.parse_failed);
        assert!(r.names.is_empty());
        assert_eq!(r.verdict, Verdict::Prohibited);
    }

    #[test]
    fn policy_file() {
        let p =
            WhitelistPolicy::from_reader("# tools\nls\n\ncat  # reading\nls\n".as_bytes()).unwrap();
        assert_eq!(p.names(), ["ls", "cat"]);
        assert_eq!(is_prohibited("ls | cat", &p).verdict, Verdict::Permitted);
        assert_eq!(is_prohibited("grep x", &p).verdict, Verdict::Prohibited);
    }
}
