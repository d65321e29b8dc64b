#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use serde_json::{json, Map, Value};
use trajcurate::filter::ReasonCode;
use trajcurate::guard::DEFAULT_WHITELIST;
use trajcurate::sanitize::RefGraph;
use trajcurate::{Message, Mode, Role, TaskInstance, ToolCall, ToolName, Trajectory};

pub const TEST_PATCH: &str = "diff --git a/tests/test_core.py b/tests/test_core.py\n\
--- a/tests/test_core.py\n\
+++ b/tests/test_core.py\n\
@@ -1,2 +1,3 @@\n\
 import core\n\
+assert core.fixed()\n\
 # end\n";

pub const SAFE_COMMANDS: [&str; 10] = [
    "ls -la src",
    "grep -rn 'def fixed' src",
    "cat src/core.py | head -n 40",
    "find . -name '*.py' | xargs grep -l core",
    "cd /repo && git log --oneline -n 5",
    "sed -n '10,30p' src/core.py",
    "wc -l src/*.py",
    "timeout 10 cat setup.cfg",
    "git diff HEAD --stat",
    "awk '{print $1}' README.md | sort | uniq",
];

pub const PROHIBITED_COMMANDS: [&str; 8] = [
    "python -m pytest tests",
    "pytest -x tests/test_core.py",
    "pip install -e .",
    "cd /repo && python setup.py test",
    "mypy src",
    "apt-get install -y gcc",
    "timeout 60 pytest tests",
    "ls | xargs python",
];

pub fn commit_id(n: usize) -> String {
    format!("{:040x}", n as u128 * 0x9e37_79b9_7f4a_7c15 + 1)
}

pub fn task(id: &str, n: usize) -> TaskInstance {
    TaskInstance {
        task_id: id.to_string(),
        repo: format!("org/repo{}", n % 5),
        base_commit: commit_id(n),
        problem_statement: format!("core.fixed() returns the wrong value in case {n}"),
        golden_patch: src_patch(n),
        test_patch: TEST_PATCH.to_string(),
        extra: Map::new(),
    }
}

pub fn src_patch(n: usize) -> String {
    let file = format!("src/module_{}.py", n % 7);
    format!(
        "diff --git a/{file} b/{file}\n--- a/{file}\n+++ b/{file}\n@@ -3,1 +3,1 @@\n-    return {n}\n+    return {}\n",
        n + 1
    )
}

fn word<R: Rng>(rng: &mut R) -> &'static str {
    const WORDS: [&str; 12] = [
        "inspect", "module", "value", "the", "function", "returns", "patch", "fix", "check",
        "caller", "line", "branch",
    ];
    WORDS[rng.gen_range(0..WORDS.len())]
}

pub fn sentence<R: Rng>(rng: &mut R, words: usize) -> String {
    (0..words).map(|_| word(rng)).collect::<Vec<_>>().join(" ")
}

/// Builds a well-formed trajectory turn by turn.
pub struct Builder {
    messages: Vec<Message>,
    next_call: usize,
}

impl Builder {
    pub fn new<R: Rng>(rng: &mut R) -> Self {
        let n = rng.gen_range(3..12);
        Builder {
            messages: vec![
                Message::new(Role::System, "You are a software engineering agent."),
                Message::new(Role::User, sentence(rng, n)),
            ],
            next_call: 0,
        }
    }

    fn call(&mut self, name: ToolName, arguments: Value) -> ToolCall {
        self.next_call += 1;
        let Value::Object(map) = arguments else {
            panic!("arguments must be an object")
        };
        ToolCall {
            id: format!("call_{}", self.next_call),
            name,
            arguments: map.into_iter().collect(),
        }
    }

    /// One assistant message with the given calls, each answered.
    pub fn turn<R: Rng>(&mut self, rng: &mut R, calls: Vec<(ToolName, Value, bool)>) {
        let calls: Vec<(ToolCall, bool)> = calls
            .into_iter()
            .map(|(name, args, err)| (self.call(name, args), err))
            .collect();
        let n = rng.gen_range(2..10);
        self.messages.push(Message::assistant(
            sentence(rng, n),
            calls.iter().map(|(c, _)| c.clone()).collect(),
        ));
        for (c, err) in calls {
            let n = rng.gen_range(1..30);
            self.messages
                .push(Message::tool(c.id, sentence(rng, n), err));
        }
    }

    pub fn bash<R: Rng>(&mut self, rng: &mut R, command: &str) {
        self.turn(
            rng,
            vec![(ToolName::ExecuteBash, json!({ "command": command }), false)],
        );
    }

    pub fn edit<R: Rng>(&mut self, rng: &mut R, failed: bool) {
        let args = json!({
            "command": "str_replace",
            "path": "/repo/src/core.py",
            "old_str": sentence(rng, 3),
            "new_str": sentence(rng, 3),
        });
        self.turn(rng, vec![(ToolName::StrReplaceEditor, args, failed)]);
    }

    pub fn random_turn<R: Rng>(&mut self, rng: &mut R) {
        match rng.gen_range(0..4) {
            0 => {
                let cmd = SAFE_COMMANDS[rng.gen_range(0..SAFE_COMMANDS.len())];
                self.bash(rng, cmd);
            }
            1 => self.edit(rng, false),
            2 => {
                let args = json!({ "command": "view", "path": "/repo/src/core.py" });
                self.turn(rng, vec![(ToolName::StrReplaceEditor, args, false)]);
            }
            _ => {
                let thought = sentence(rng, 8);
                self.turn(
                    rng,
                    vec![(ToolName::Think, json!({ "thought": thought }), false)],
                );
            }
        }
    }

    pub fn finish(&mut self) {
        let call = self.call(ToolName::Finish, json!({}));
        self.messages.push(Message::assistant("Done.", vec![call]));
    }

    pub fn turns(&self) -> usize {
        self.messages
            .iter()
            .filter(|m| m.role == Role::Assistant)
            .count()
    }

    pub fn into_messages(self) -> Vec<Message> {
        self.messages
    }
}

/// Violations planted in one trajectory.
#[derive(Debug, Clone, Default)]
pub struct Plant {
    pub prohibited: bool,
    pub null_patch: bool,
    pub test_file: bool,
    pub editor_errors: bool,
    pub multi_tool: bool,
    pub step_limit: bool,
}

pub fn build_trajectory<R: Rng>(
    rng: &mut R,
    task_n: usize,
    rollout_id: u64,
    mode: Mode,
    plant: &Plant,
) -> Trajectory {
    let mut b = Builder::new(rng);
    // A few clean trajectories sit right at the step limit.
    let base_turns: usize = if rng.gen_bool(0.03) {
        100
    } else {
        rng.gen_range(2..14)
    };
    let target = if plant.step_limit {
        rng.gen_range(101..=110)
    } else {
        base_turns
    };
    // Up to two failed edits never trip the cap.
    let failed_edits = if plant.editor_errors {
        rng.gen_range(3..=5)
    } else {
        rng.gen_range(0..=2)
    };
    let mut specials: Vec<u8> = vec![1; failed_edits];
    if plant.prohibited {
        specials.push(2);
    }
    if plant.multi_tool {
        specials.push(3);
    }
    specials.shuffle(rng);
    let reserved = specials.len() + 1;
    let filler = target.saturating_sub(reserved).max(1);
    let mut slots: Vec<Option<u8>> = vec![None; filler];
    for s in specials {
        let at = rng.gen_range(0..=slots.len());
        slots.insert(at, Some(s));
    }
    for slot in slots {
        match slot {
            None => b.random_turn(rng),
            Some(1) => b.edit(rng, true),
            Some(2) => {
                let cmd = PROHIBITED_COMMANDS[rng.gen_range(0..PROHIBITED_COMMANDS.len())];
                b.bash(rng, cmd);
            }
            Some(_) => {
                let cmd = SAFE_COMMANDS[rng.gen_range(0..SAFE_COMMANDS.len())];
                b.turn(
                    rng,
                    vec![
                        (ToolName::ExecuteBash, json!({ "command": cmd }), false),
                        (ToolName::Think, json!({ "thought": "both at once" }), false),
                    ],
                );
            }
        }
    }
    b.finish();
    let final_patch = if plant.null_patch {
        ["", "\n", "  \n\t\n"][rng.gen_range(0..3)].to_string()
    } else if plant.test_file {
        format!("{}{}", src_patch(task_n), TEST_PATCH)
    } else {
        src_patch(task_n)
    };
    Trajectory {
        task_id: format!("task-{task_n:04}"),
        rollout_id,
        mode,
        messages: b.into_messages(),
        final_patch,
        resolved: Some(rng.gen_bool(0.4)),
        token_count: None,
        extra: Map::new(),
    }
}

pub struct SeededCorpus {
    pub corpus: Vec<Trajectory>,
    pub tasks: Vec<TaskInstance>,
    pub plants: Vec<Plant>,
}

impl SeededCorpus {
    /// Per-reason counts implied by the plants alone.
    pub fn expected(&self, mode: Mode) -> BTreeMap<ReasonCode, usize> {
        let mut counts: BTreeMap<ReasonCode, usize> =
            ReasonCode::ALL.iter().map(|&r| (r, 0)).collect();
        for p in &self.plants {
            for r in expected_reasons(p, mode) {
                *counts.get_mut(&r).unwrap() += 1;
            }
        }
        counts
    }

    pub fn expected_accepted(&self, mode: Mode) -> usize {
        self.plants
            .iter()
            .filter(|p| expected_reasons(p, mode).is_empty())
            .count()
    }
}

pub fn expected_reasons(p: &Plant, mode: Mode) -> Vec<ReasonCode> {
    if mode == Mode::Zero && p.prohibited {
        return vec![ReasonCode::ProhibitedExecution];
    }
    let mut out = Vec::new();
    for (flag, code) in [
        (p.step_limit, ReasonCode::StepLimitExceeded),
        (p.null_patch, ReasonCode::NullPatch),
        (p.test_file, ReasonCode::TestFileModified),
        (p.multi_tool, ReasonCode::MultiToolTurn),
        (p.editor_errors, ReasonCode::EditorErrorCap),
    ] {
        if flag {
            out.push(code);
        }
    }
    out
}

pub const SEEDED_COUNTS: [(ReasonCode, usize); 6] = [
    (ReasonCode::ProhibitedExecution, 120),
    (ReasonCode::NullPatch, 80),
    (ReasonCode::TestFileModified, 50),
    (ReasonCode::EditorErrorCap, 40),
    (ReasonCode::MultiToolTurn, 30),
    (ReasonCode::StepLimitExceeded, 25),
];

fn set_flag(p: &mut Plant, code: ReasonCode) {
    match code {
        ReasonCode::ProhibitedExecution => p.prohibited = true,
        ReasonCode::NullPatch => p.null_patch = true,
        ReasonCode::TestFileModified => p.test_file = true,
        ReasonCode::EditorErrorCap => p.editor_errors = true,
        ReasonCode::MultiToolTurn => p.multi_tool = true,
        ReasonCode::StepLimitExceeded => p.step_limit = true,
        other => panic!("{other} is not planted"),
    }
}

/// `n` trajectories over `n / 4` tasks with exactly `counts` planted
/// violations. With `overlap`, stage-2 violations are drawn independently of
/// each other (a trajectory may carry several); otherwise every planted
/// trajectory carries exactly one.
pub fn seeded_corpus<R: Rng>(
    rng: &mut R,
    n: usize,
    mode: Mode,
    counts: &[(ReasonCode, usize)],
    overlap: bool,
) -> SeededCorpus {
    let mut plants = vec![Plant::default(); n];
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut cursor = 0;
    for &(code, k) in counts {
        if overlap && code != ReasonCode::ProhibitedExecution {
            // Never on a prohibited trajectory; test-file edits need a patch.
            let eligible: Vec<usize> = (0..n)
                .filter(|&i| !plants[i].prohibited)
                .filter(|&i| !(code == ReasonCode::TestFileModified && plants[i].null_patch))
                .filter(|&i| !(code == ReasonCode::NullPatch && plants[i].test_file))
                .collect();
            for &i in eligible.choose_multiple(rng, k) {
                set_flag(&mut plants[i], code);
            }
        } else {
            for &i in &order[cursor..cursor + k] {
                set_flag(&mut plants[i], code);
            }
            cursor += k;
        }
    }
    let tasks = (0..n.div_ceil(4))
        .map(|t| task(&format!("task-{t:04}"), t))
        .collect();
    let corpus = plants
        .iter()
        .enumerate()
        .map(|(i, p)| build_trajectory(rng, i / 4, (i % 4) as u64, mode, p))
        .collect();
    SeededCorpus {
        corpus,
        tasks,
        plants,
    }
}

/// Random DAG over `n` commits; each commit's parents are earlier commits.
pub fn random_dag<R: Rng>(rng: &mut R, n: usize) -> RefGraph {
    let mut g = RefGraph::default();
    for i in 0..n {
        let parents: BTreeSet<usize> = if i == 0 {
            BTreeSet::new()
        } else {
            let k = [0, 1, 1, 1, 1, 2, 2, 3][rng.gen_range(0..8)];
            (0..k).map(|_| rng.gen_range(0..i)).collect()
        };
        g.commits.insert(
            format!("c{i:03}"),
            parents.iter().map(|p| format!("c{p:03}")).collect(),
        );
    }
    for b in 0..rng.gen_range(0..8) {
        g.branches.insert(
            format!("branch-{b}"),
            format!("c{:03}", rng.gen_range(0..n)),
        );
    }
    for t in 0..rng.gen_range(0..6) {
        g.tags
            .insert(format!("v{t}"), format!("c{:03}", rng.gen_range(0..n)));
    }
    if rng.gen_bool(0.5) {
        g.head = Some(format!("c{:03}", rng.gen_range(0..n)));
    }
    g
}

/// Whitelisted names usable in command position without wrapper semantics.
pub fn plain_allowed() -> Vec<&'static str> {
    DEFAULT_WHITELIST
        .iter()
        .copied()
        .filter(|n| !["sudo", "xargs", "timeout"].contains(n))
        .collect()
}

pub const NOT_ALLOWED: [&str; 20] = [
    "python", "python3", "pytest", "pip", "mypy", "apt", "apt-get", "make", "node", "npm", "cargo",
    "bash", "sh", "perl", "ruby", "gcc", "tox", "conda", "docker", "java",
];

/// Arguments never read as command names.
const ARGS: [&str; 14] = [
    "-l",
    "-n",
    "src",
    "README.md",
    "'*.py'",
    "\"hello world\"",
    "-rn",
    "foo",
    "10",
    "a/b.txt",
    "--color=never",
    "python",
    "pytest",
    "$HOME",
];

/// A random script and whether every command it invokes is whitelisted,
/// decided from the generator's own choices.
pub fn random_script<R: Rng>(rng: &mut R, depth: usize) -> (String, bool) {
    if depth == 0 || rng.gen_bool(0.35) {
        return random_atom(rng);
    }
    match rng.gen_range(0..6) {
        0 => {
            let (a, ok) = random_script(rng, depth - 1);
            (format!("( {a} )"), ok)
        }
        1 => {
            let (a, ok) = random_script(rng, depth - 1);
            (format!("{{ {a}; }}"), ok)
        }
        k => {
            let op = [";", "&&", "|", "||"][k - 2];
            let (a, ok_a) = random_script(rng, depth - 1);
            let (b, ok_b) = random_script(rng, depth - 1);
            (format!("{a} {op} {b}"), ok_a && ok_b)
        }
    }
}

fn random_atom<R: Rng>(rng: &mut R) -> (String, bool) {
    let allowed = plain_allowed();
    let (name, ok) = if rng.gen_bool(0.8) {
        (allowed[rng.gen_range(0..allowed.len())], true)
    } else {
        (NOT_ALLOWED[rng.gen_range(0..NOT_ALLOWED.len())], false)
    };
    let mut words = vec![name.to_string()];
    for _ in 0..rng.gen_range(0..4) {
        words.push(ARGS[rng.gen_range(0..ARGS.len())].to_string());
    }
    match rng.gen_range(0..8) {
        0 => words.insert(0, "sudo".into()),
        1 => words.insert(0, "xargs".into()),
        2 => {
            words.insert(0, rng.gen_range(1..100).to_string());
            words.insert(0, "timeout".into());
        }
        3 => words.insert(0, "LC_ALL=C".into()),
        _ => {}
    }
    if rng.gen_bool(0.2) {
        words.push([">", ">>", "2>"][rng.gen_range(0..3)].to_string());
        words.push("/tmp/out.txt".into());
    }
    (words.join(" "), ok)
}
