//! Shell syntax tree.

/// A shell word. `value` has quotes removed and escapes resolved, but
/// parameter expansions and substitutions are kept verbatim (`$CMD` stays
/// `$CMD`). Commands inside `$(...)` or backticks are parsed into `substitutions`.
#[derive(Debug, Clone, PartialEq)]
pub struct Word {
    pub raw: String,
    pub value: String,
    pub substitutions: Vec<Node>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RedirectOp {
    /// `<`
    Input,
    /// `>`
    Output,
    /// `>>`
    Append,
    /// `>|`
    Clobber,
    /// `<>`
    ReadWrite,
    /// `<&`
    DupInput,
    /// `>&`
    DupOutput,
    /// `&>`
    OutputAll,
    /// `&>>`
    AppendAll,
    /// `<<`
    HereDoc,
    /// `<<-`
    HereDocStrip,
    /// `<<<`
    HereString,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Redirect {
    pub fd: Option<u32>,
    pub op: RedirectOp,
    /// Target file, descriptor, here-string or here-document delimiter.
    pub target: Word,
    /// Index into [`Script::heredocs`] for `<<` and `<<-`.
    pub heredoc: Option<usize>,
}

/// One element of a simple command, in source order.
#[derive(Debug, Clone, PartialEq)]
pub enum Part {
    Word(Word),
    Assignment(Word),
    Redirect(Redirect),
}

impl Part {
    pub fn as_word(&self) -> Option<&Word> {
        match self {
            Part::Word(w) => Some(w),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CommandNode {
    pub parts: Vec<Part>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ListOp {
    /// `;` or newline
    Seq,
    /// `&`
    Background,
    And,
    Or,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Compound {
    Subshell(Box<Node>),
    Group(Box<Node>),
    If {
        /// `(condition, body)` for the `if` and each `elif`.
        branches: Vec<(Node, Node)>,
        else_body: Option<Box<Node>>,
    },
    For {
        var: String,
        items: Option<Vec<Word>>,
        body: Box<Node>,
    },
    While {
        until: bool,
        condition: Box<Node>,
        body: Box<Node>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Command(CommandNode),
    Pipeline {
        negated: bool,
        stages: Vec<Node>,
    },
    /// `items[i]` is followed by `ops[i]`; `ops` may carry one trailing operator.
    List {
        items: Vec<Node>,
        ops: Vec<ListOp>,
    },
    Compound {
        body: Compound,
        redirects: Vec<Redirect>,
    },
    Function {
        name: Word,
        body: Box<Node>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct HereDoc {
    pub delimiter: String,
    pub body: String,
    /// Substitutions found in an unquoted-delimiter body.
    pub substitutions: Vec<Node>,
}

/// A parsed script. `body` is `None` for blank input.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Script {
    pub body: Option<Node>,
    pub heredocs: Vec<HereDoc>,
}

impl Word {
    fn walk<'a>(&'a self, f: &mut impl FnMut(&'a Node)) {
        for sub in &self.substitutions {
            sub.walk(f);
        }
    }
}

impl Redirect {
    fn walk<'a>(&'a self, f: &mut impl FnMut(&'a Node)) {
        self.target.walk(f);
    }
}

impl Node {
    /// Pre-order traversal over this node and every nested node, including
    /// commands inside substitutions. Here-document bodies are reached
    /// through [`Script::walk`].
    pub fn walk<'a>(&'a self, f: &mut impl FnMut(&'a Node)) {
        f(self);
        match self {
            Node::Command(cmd) => {
                for part in &cmd.parts {
                    match part {
                        Part::Word(w) | Part::Assignment(w) => w.walk(f),
                        Part::Redirect(r) => r.walk(f),
                    }
                }
            }
            Node::Pipeline { stages, .. } => stages.iter().for_each(|s| s.walk(f)),
            Node::List { items, .. } => items.iter().for_each(|s| s.walk(f)),
            Node::Compound { body, redirects } => {
                match body {
                    Compound::Subshell(inner) | Compound::Group(inner) => inner.walk(f),
                    Compound::If {
                        branches,
                        else_body,
                    } => {
                        for (cond, then) in branches {
                            cond.walk(f);
                            then.walk(f);
                        }
                        if let Some(e) = else_body {
                            e.walk(f);
                        }
                    }
                    Compound::For { items, body, .. } => {
                        for w in items.iter().flatten() {
                            w.walk(f);
                        }
                        body.walk(f);
                    }
                    Compound::While {
                        condition, body, ..
                    } => {
                        condition.walk(f);
                        body.walk(f);
                    }
                }
                for r in redirects {
                    r.walk(f);
                }
            }
            Node::Function { name, body } => {
                name.walk(f);
                body.walk(f);
            }
        }
    }
}

impl Script {
    pub fn walk<'a>(&'a self, f: &mut impl FnMut(&'a Node)) {
        if let Some(body) = &self.body {
            body.walk(f);
        }
        for doc in &self.heredocs {
            for sub in &doc.substitutions {
                sub.walk(f);
            }
        }
    }

    /// Number of simple-command nodes at any depth.
    pub fn command_count(&self) -> usize {
        let mut n = 0;
        self.walk(&mut |node| {
            if matches!(node, Node::Command(_)) {
                n += 1;
            }
        });
        n
    }
}
