//! Recursive-descent parser for the POSIX shell subset agents emit.
//!
//! Covered: simple commands with assignment prefixes, pipelines (`|`, `|&`,
//! `!`), and/or lists, `;`/`&`/newline sequencing, redirections including
//! here-documents and here-strings, subshells, brace groups, `if`, `for`,
//! `while`, `until`, function definitions, `$(...)` and backtick
//! substitution, and all quoting forms. `case`, `select`, arithmetic
//! `$((...))`/`((...))` and process substitution are rejected.

use super::ast::*;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{message}{}", offset.map(|o| format!(" at offset {o}")).unwrap_or_default())]
pub struct ParseFailure {
    pub offset: Option<usize>,
    pub message: String,
}

type PResult<T> = Result<T, ParseFailure>;

const MAX_DEPTH: usize = 64;

const LIST_TERMINATORS: &[&str] = &["then", "elif", "else", "fi", "do", "done", "}", "esac"];

#[derive(Debug, Clone, PartialEq)]
enum Op {
    Semi,
    Amp,
    AndIf,
    OrIf,
    Pipe,
    PipeAmp,
    LParen,
    RParen,
    Redir(RedirectOp),
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Word(Word),
    IoNumber(u32),
    Op(Op),
    Newline,
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Word(w) => format!("`{}`", w.raw),
            Tok::IoNumber(n) => format!("`{n}`"),
            Tok::Op(op) => format!("operator {op:?}"),
            Tok::Newline => "newline".into(),
            Tok::Eof => "end of input".into(),
        }
    }

    fn is_word(&self, text: &str) -> bool {
        matches!(self, Tok::Word(w) if w.raw == text)
    }
}

struct PendingDoc {
    index: usize,
    delimiter: String,
    strip_tabs: bool,
    quoted: bool,
}

struct Parser<'a> {
    src: &'a str,
    bytes: &'a [u8],
    pos: usize,
    /// Offset of `src` within the top-level script, for error reporting.
    base: usize,
    peeked: Option<(Tok, usize)>,
    pending: Vec<PendingDoc>,
    heredocs: Vec<HereDoc>,
    depth: usize,
}

fn is_meta(b: u8) -> bool {
    matches!(
        b,
        b' ' | b'\t' | b'\n' | b';' | b'&' | b'|' | b'(' | b')' | b'<' | b'>'
    )
}

fn is_name_start(b: u8) -> bool {
    b.is_ascii_alphabetic() || b == b'_'
}

fn is_name_char(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_'
}

fn is_identifier(s: &str) -> bool {
    let b = s.as_bytes();
    !b.is_empty() && is_name_start(b[0]) && b.iter().all(|&c| is_name_char(c))
}

/// `NAME=`, `NAME+=` or `NAME[...]=` with an unquoted name.
fn is_assignment(raw: &str) -> bool {
    let b = raw.as_bytes();
    if b.is_empty() || !is_name_start(b[0]) {
        return false;
    }
    let mut i = 1;
    while i < b.len() && is_name_char(b[i]) {
        i += 1;
    }
    if i < b.len() && b[i] == b'[' {
        match raw[i..].find(']') {
            Some(close) => i += close + 1,
            None => return false,
        }
    }
    if i < b.len() && b[i] == b'+' {
        i += 1;
    }
    i < b.len() && b[i] == b'='
}

impl<'a> Parser<'a> {
    fn new(src: &'a str, base: usize, depth: usize) -> Self {
        Parser {
            src,
            bytes: src.as_bytes(),
            pos: 0,
            base,
            peeked: None,
            pending: Vec::new(),
            heredocs: Vec::new(),
            depth,
        }
    }

    fn fail<T>(&self, offset: usize, message: impl Into<String>) -> PResult<T> {
        Err(ParseFailure {
            offset: Some(self.base + offset),
            message: message.into(),
        })
    }

    fn byte(&self, at: usize) -> Option<u8> {
        self.bytes.get(at).copied()
    }

    fn starts_with(&self, s: &str) -> bool {
        self.bytes[self.pos..].starts_with(s.as_bytes())
    }

    fn bump_char(&mut self) -> char {
        let c = self.src[self.pos..].chars().next().expect("bump past end");
        self.pos += c.len_utf8();
        c
    }

    // ---- lexer -------------------------------------------------------------

    fn skip_blanks(&mut self) {
        loop {
            match self.byte(self.pos) {
                Some(b' ' | b'\t' | b'\r') => self.pos += 1,
                Some(b'\\') if self.byte(self.pos + 1) == Some(b'\n') => self.pos += 2,
                Some(b'#') => {
                    while let Some(b) = self.byte(self.pos) {
                        if b == b'\n' {
                            break;
                        }
                        self.pos += 1;
                    }
                }
                _ => break,
            }
        }
    }

    fn lex(&mut self) -> PResult<(Tok, usize)> {
        self.skip_blanks();
        let start = self.pos;
        let Some(b) = self.byte(self.pos) else {
            return Ok((Tok::Eof, start));
        };
        let op = |p: &mut Self, len: usize, op: Op| {
            p.pos += len;
            Ok((Tok::Op(op), start))
        };
        match b {
            b'\n' => {
                self.pos += 1;
                self.read_heredoc_bodies()?;
                Ok((Tok::Newline, start))
            }
            b'&' => {
                if self.starts_with("&&") {
                    op(self, 2, Op::AndIf)
                } else if self.starts_with("&>>") {
                    op(self, 3, Op::Redir(RedirectOp::AppendAll))
                } else if self.starts_with("&>") {
                    op(self, 2, Op::Redir(RedirectOp::OutputAll))
                } else {
                    op(self, 1, Op::Amp)
                }
            }
            b'|' => {
                if self.starts_with("||") {
                    op(self, 2, Op::OrIf)
                } else if self.starts_with("|&") {
                    op(self, 2, Op::PipeAmp)
                } else {
                    op(self, 1, Op::Pipe)
                }
            }
            b';' => {
                if self.starts_with(";;") || self.starts_with(";&") {
                    self.fail(start, "case terminators are not supported")
                } else {
                    op(self, 1, Op::Semi)
                }
            }
            b'(' => op(self, 1, Op::LParen),
            b')' => op(self, 1, Op::RParen),
            b'<' => {
                if self.starts_with("<(") {
                    self.fail(start, "process substitution is not supported")
                } else if self.starts_with("<<<") {
                    op(self, 3, Op::Redir(RedirectOp::HereString))
                } else if self.starts_with("<<-") {
                    op(self, 3, Op::Redir(RedirectOp::HereDocStrip))
                } else if self.starts_with("<<") {
                    op(self, 2, Op::Redir(RedirectOp::HereDoc))
                } else if self.starts_with("<&") {
                    op(self, 2, Op::Redir(RedirectOp::DupInput))
                } else if self.starts_with("<>") {
                    op(self, 2, Op::Redir(RedirectOp::ReadWrite))
                } else {
                    op(self, 1, Op::Redir(RedirectOp::Input))
                }
            }
            b'>' => {
                if self.starts_with(">(") {
                    self.fail(start, "process substitution is not supported")
                } else if self.starts_with(">>") {
                    op(self, 2, Op::Redir(RedirectOp::Append))
                } else if self.starts_with(">&") {
                    op(self, 2, Op::Redir(RedirectOp::DupOutput))
                } else if self.starts_with(">|") {
                    op(self, 2, Op::Redir(RedirectOp::Clobber))
                } else {
                    op(self, 1, Op::Redir(RedirectOp::Output))
                }
            }
            _ => {
                let word = self.lex_word()?;
                if !word.raw.is_empty()
                    && word.raw.bytes().all(|c| c.is_ascii_digit())
                    && matches!(self.byte(self.pos), Some(b'<' | b'>'))
                {
                    if let Ok(n) = word.raw.parse() {
                        return Ok((Tok::IoNumber(n), start));
                    }
                }
                Ok((Tok::Word(word), start))
            }
        }
    }

    fn lex_word(&mut self) -> PResult<Word> {
        let start = self.pos;
        let mut value = String::new();
        let mut subs = Vec::new();
        while let Some(b) = self.byte(self.pos) {
            if is_meta(b) {
                break;
            }
            match b {
                b'\\' => {
                    self.pos += 1;
                    match self.byte(self.pos) {
                        Some(b'\n') => self.pos += 1,
                        Some(_) => value.push(self.bump_char()),
                        None => value.push('\\'),
                    }
                }
                b'\'' => {
                    let open = self.pos;
                    self.pos += 1;
                    match self.src[self.pos..].find('\'') {
                        Some(len) => {
                            value.push_str(&self.src[self.pos..self.pos + len]);
                            self.pos += len + 1;
                        }
                        None => return self.fail(open, "unterminated single quote"),
                    }
                }
                b'"' => {
                    let open = self.pos;
                    self.pos += 1;
                    self.lex_double_quoted(Some(open), &mut value, &mut subs)?;
                }
                b'$' => self.lex_dollar(false, &mut value, &mut subs)?,
                b'`' => self.lex_backtick(&mut value, &mut subs)?,
                _ => value.push(self.bump_char()),
            }
        }
        Ok(Word {
            raw: self.src[start..self.pos].to_string(),
            value,
            substitutions: subs,
        })
    }

    /// Reads double-quoted text up to the closing quote, or to end of input
    /// when `open` is `None` (here-document bodies).
    fn lex_double_quoted(
        &mut self,
        open: Option<usize>,
        value: &mut String,
        subs: &mut Vec<Node>,
    ) -> PResult<()> {
        loop {
            let Some(b) = self.byte(self.pos) else {
                return match open {
                    Some(at) => self.fail(at, "unterminated double quote"),
                    None => Ok(()),
                };
            };
            match b {
                b'"' if open.is_some() => {
                    self.pos += 1;
                    return Ok(());
                }
                b'\\' => {
                    self.pos += 1;
                    match self.byte(self.pos) {
                        Some(b'\n') => self.pos += 1,
                        Some(b'$' | b'`' | b'\\') => value.push(self.bump_char()),
                        Some(b'"') if open.is_some() => value.push(self.bump_char()),
                        _ => value.push('\\'),
                    }
                }
                b'$' => self.lex_dollar(true, value, subs)?,
                b'`' => self.lex_backtick(value, subs)?,
                _ => value.push(self.bump_char()),
            }
        }
    }

    fn lex_dollar(
        &mut self,
        in_dquote: bool,
        value: &mut String,
        subs: &mut Vec<Node>,
    ) -> PResult<()> {
        let start = self.pos;
        self.pos += 1;
        match self.byte(self.pos) {
            Some(b'\'') if !in_dquote => {
                self.pos += 1;
                loop {
                    match self.byte(self.pos) {
                        None => return self.fail(start, "unterminated $'...' string"),
                        Some(b'\'') => {
                            self.pos += 1;
                            break;
                        }
                        Some(b'\\') => {
                            self.pos += 1;
                            match self.byte(self.pos) {
                                None => return self.fail(start, "unterminated $'...' string"),
                                Some(c) => {
                                    self.pos += 1;
                                    match c {
                                        b'n' => value.push('\n'),
                                        b't' => value.push('\t'),
                                        b'r' => value.push('\r'),
                                        b'\\' | b'\'' | b'"' => value.push(c as char),
                                        _ => {
                                            self.pos -= 1;
                                            value.push('\\');
                                            value.push(self.bump_char());
                                        }
                                    }
                                }
                            }
                        }
                        Some(_) => value.push(self.bump_char()),
                    }
                }
            }
            Some(b'"') if !in_dquote => {
                let open = self.pos;
                self.pos += 1;
                self.lex_double_quoted(Some(open), value, subs)?;
            }
            Some(b'(') => {
                if self.byte(self.pos + 1) == Some(b'(') {
                    return self.fail(start, "arithmetic expansion is not supported");
                }
                self.pos += 1;
                if let Some(node) = self.parse_substitution(start)? {
                    subs.push(node);
                }
                value.push_str(&self.src[start..self.pos]);
            }
            Some(b'{') => {
                let mut depth = 0usize;
                loop {
                    match self.byte(self.pos) {
                        None => return self.fail(start, "unterminated parameter expansion"),
                        Some(b'{') => {
                            depth += 1;
                            self.pos += 1;
                        }
                        Some(b'}') => {
                            self.pos += 1;
                            depth -= 1;
                            if depth == 0 {
                                break;
                            }
                        }
                        Some(b'\\') => {
                            self.pos += 1;
                            if self.pos < self.bytes.len() {
                                self.bump_char();
                            }
                        }
                        Some(_) => {
                            self.bump_char();
                        }
                    }
                }
                value.push_str(&self.src[start..self.pos]);
            }
            Some(c) if is_name_start(c) => {
                while self.byte(self.pos).is_some_and(is_name_char) {
                    self.pos += 1;
                }
                value.push_str(&self.src[start..self.pos]);
            }
            Some(c) if c.is_ascii_digit() || b"@*#?$!-".contains(&c) => {
                self.pos += 1;
                value.push_str(&self.src[start..self.pos]);
            }
            _ => value.push('$'),
        }
        Ok(())
    }

    fn lex_backtick(&mut self, value: &mut String, subs: &mut Vec<Node>) -> PResult<()> {
        let start = self.pos;
        self.pos += 1;
        let mut inner = String::new();
        loop {
            match self.byte(self.pos) {
                None => return self.fail(start, "unterminated backtick substitution"),
                Some(b'`') => {
                    self.pos += 1;
                    break;
                }
                Some(b'\\') => {
                    self.pos += 1;
                    match self.byte(self.pos) {
                        Some(b'`' | b'\\' | b'$') => inner.push(self.bump_char()),
                        Some(_) => {
                            inner.push('\\');
                            inner.push(self.bump_char());
                        }
                        None => return self.fail(start, "unterminated backtick substitution"),
                    }
                }
                Some(_) => inner.push(self.bump_char()),
            }
        }
        if self.depth >= MAX_DEPTH {
            return self.fail(start, "substitutions nested too deeply");
        }
        let mut sub = Parser::new(&inner, self.base + start + 1, self.depth + 1);
        let script = sub.parse_script()?;
        let offset = self.heredocs.len();
        if let Some(body) = script.body {
            subs.push(reindex_heredocs(body, offset));
        }
        self.heredocs.extend(script.heredocs);
        value.push_str(&self.src[start..self.pos]);
        Ok(())
    }

    /// Parses the list inside `$( ... )`; the opening `$(` is already consumed.
    fn parse_substitution(&mut self, start: usize) -> PResult<Option<Node>> {
        debug_assert!(self.peeked.is_none());
        if self.depth >= MAX_DEPTH {
            return self.fail(start, "substitutions nested too deeply");
        }
        self.depth += 1;
        let body = self.parse_list()?;
        self.skip_newlines()?;
        let (tok, at) = self.next()?;
        self.depth -= 1;
        match tok {
            Tok::Op(Op::RParen) => Ok(body),
            Tok::Eof => self.fail(start, "unterminated command substitution"),
            other => self.fail(
                at,
                format!("unexpected {} in command substitution", other.describe()),
            ),
        }
    }

    fn read_heredoc_bodies(&mut self) -> PResult<()> {
        let pending = std::mem::take(&mut self.pending);
        for doc in pending {
            let body_start = self.pos;
            let mut body = String::new();
            loop {
                if self.pos >= self.bytes.len() {
                    break;
                }
                let line_end = self.src[self.pos..]
                    .find('\n')
                    .map_or(self.bytes.len(), |i| self.pos + i);
                let line = &self.src[self.pos..line_end];
                let line = line.strip_suffix('\r').unwrap_or(line);
                let stripped = if doc.strip_tabs {
                    line.trim_start_matches('\t')
                } else {
                    line
                };
                self.pos = (line_end + 1).min(self.bytes.len());
                if stripped == doc.delimiter {
                    break;
                }
                body.push_str(stripped);
                body.push('\n');
            }
            let mut substitutions = Vec::new();
            if !doc.quoted {
                let mut sub = Parser::new(&body, self.base + body_start, self.depth + 1);
                let mut scratch = String::new();
                sub.lex_double_quoted(None, &mut scratch, &mut substitutions)?;
                let offset = self.heredocs.len();
                substitutions = substitutions
                    .into_iter()
                    .map(|n| reindex_heredocs(n, offset))
                    .collect();
                self.heredocs.extend(sub.heredocs);
            }
            let slot = &mut self.heredocs[doc.index];
            slot.body = body;
            slot.substitutions = substitutions;
        }
        Ok(())
    }

    // ---- token stream ------------------------------------------------------

    fn peek(&mut self) -> PResult<&Tok> {
        if self.peeked.is_none() {
            let tok = self.lex()?;
            self.peeked = Some(tok);
        }
        Ok(&self.peeked.as_ref().expect("peeked").0)
    }

    fn peek_offset(&mut self) -> PResult<usize> {
        self.peek()?;
        Ok(self.peeked.as_ref().expect("peeked").1)
    }

    fn next(&mut self) -> PResult<(Tok, usize)> {
        match self.peeked.take() {
            Some(t) => Ok(t),
            None => self.lex(),
        }
    }

    fn skip_newlines(&mut self) -> PResult<()> {
        while *self.peek()? == Tok::Newline {
            self.next()?;
        }
        Ok(())
    }

    fn expect_reserved(&mut self, word: &str) -> PResult<()> {
        let (tok, at) = self.next()?;
        if tok.is_word(word) {
            Ok(())
        } else {
            self.fail(at, format!("expected `{word}`, found {}", tok.describe()))
        }
    }

    // ---- grammar -----------------------------------------------------------

    fn parse_script(&mut self) -> PResult<Script> {
        let body = self.parse_list()?;
        let (tok, at) = self.next()?;
        if tok != Tok::Eof {
            return self.fail(at, format!("unexpected {}", tok.describe()));
        }
        // A here-document whose body never started keeps an empty body.
        self.pending.clear();
        Ok(Script {
            body,
            heredocs: std::mem::take(&mut self.heredocs),
        })
    }

    fn at_list_end(&mut self) -> PResult<bool> {
        Ok(match self.peek()? {
            Tok::Eof | Tok::Op(Op::RParen) => true,
            Tok::Word(w) => LIST_TERMINATORS.contains(&w.raw.as_str()),
            _ => false,
        })
    }

    fn parse_list(&mut self) -> PResult<Option<Node>> {
        let mut items = Vec::new();
        let mut ops = Vec::new();
        loop {
            self.skip_newlines()?;
            if self.at_list_end()? {
                break;
            }
            items.push(self.parse_pipeline()?);
            let op = match self.peek()? {
                Tok::Op(Op::Semi) | Tok::Newline => ListOp::Seq,
                Tok::Op(Op::Amp) => ListOp::Background,
                Tok::Op(Op::AndIf) => ListOp::And,
                Tok::Op(Op::OrIf) => ListOp::Or,
                _ => break,
            };
            let (_, at) = self.next()?;
            ops.push(op);
            if matches!(op, ListOp::And | ListOp::Or) {
                self.skip_newlines()?;
                if self.at_list_end()? {
                    return self.fail(at, "expected a command after `&&`/`||`");
                }
            }
        }
        if items.is_empty() {
            return Ok(None);
        }
        if items.len() == 1 && ops.iter().all(|&o| o == ListOp::Seq) {
            return Ok(items.pop());
        }
        Ok(Some(Node::List { items, ops }))
    }

    fn parse_required_list(&mut self, context: &str) -> PResult<Node> {
        let at = self.peek_offset()?;
        match self.parse_list()? {
            Some(node) => Ok(node),
            None => self.fail(at, format!("empty command list in {context}")),
        }
    }

    fn parse_pipeline(&mut self) -> PResult<Node> {
        let negated = if self.peek()?.is_word("!") {
            self.next()?;
            true
        } else {
            false
        };
        let mut stages = vec![self.parse_command()?];
        while matches!(self.peek()?, Tok::Op(Op::Pipe | Op::PipeAmp)) {
            self.next()?;
            self.skip_newlines()?;
            stages.push(self.parse_command()?);
        }
        if stages.len() == 1 && !negated {
            return Ok(stages.pop().expect("one stage"));
        }
        Ok(Node::Pipeline { negated, stages })
    }

    fn parse_command(&mut self) -> PResult<Node> {
        let at = self.peek_offset()?;
        if self.depth >= MAX_DEPTH {
            return self.fail(at, "commands nested too deeply");
        }
        self.depth += 1;
        let node = self.parse_command_inner(at);
        self.depth -= 1;
        node
    }

    fn parse_command_inner(&mut self, at: usize) -> PResult<Node> {
        let head = self.peek()?.clone();
        let body = match &head {
            Tok::Op(Op::LParen) => {
                self.next()?;
                if self.byte(self.pos) == Some(b'(') && self.pos == at + 1 {
                    return self.fail(at, "arithmetic commands are not supported");
                }
                let inner = self.parse_required_list("subshell")?;
                let (tok, close) = self.next()?;
                if tok != Tok::Op(Op::RParen) {
                    return self.fail(close, format!("expected `)`, found {}", tok.describe()));
                }
                Compound::Subshell(Box::new(inner))
            }
            Tok::Word(w) => match w.raw.as_str() {
                "{" => {
                    self.next()?;
                    let inner = self.parse_required_list("group")?;
                    self.expect_reserved("}")?;
                    Compound::Group(Box::new(inner))
                }
                "if" => self.parse_if()?,
                "for" => self.parse_for()?,
                "while" | "until" => {
                    let until = w.raw == "until";
                    self.next()?;
                    let condition = self.parse_required_list("loop condition")?;
                    self.expect_reserved("do")?;
                    let body = self.parse_required_list("loop body")?;
                    self.expect_reserved("done")?;
                    Compound::While {
                        until,
                        condition: Box::new(condition),
                        body: Box::new(body),
                    }
                }
                "function" => return self.parse_function_keyword(),
                "case" | "select" | "((" => {
                    return self.fail(at, format!("`{}` is not supported", w.raw));
                }
                r if LIST_TERMINATORS.contains(&r) => {
                    return self.fail(at, format!("unexpected `{r}`"));
                }
                _ => return self.parse_simple(),
            },
            Tok::IoNumber(_) | Tok::Op(Op::Redir(_)) => return self.parse_simple(),
            other => {
                return self.fail(
                    at,
                    format!("expected a command, found {}", other.describe()),
                )
            }
        };
        let redirects = self.parse_trailing_redirects()?;
        Ok(Node::Compound { body, redirects })
    }

    fn parse_if(&mut self) -> PResult<Compound> {
        self.next()?;
        let mut branches = Vec::new();
        let mut else_body = None;
        loop {
            let cond = self.parse_required_list("if condition")?;
            self.expect_reserved("then")?;
            let body = self.parse_required_list("then branch")?;
            branches.push((cond, body));
            let (tok, at) = self.next()?;
            match &tok {
                t if t.is_word("elif") => continue,
                t if t.is_word("else") => {
                    else_body = Some(Box::new(self.parse_required_list("else branch")?));
                    self.expect_reserved("fi")?;
                    break;
                }
                t if t.is_word("fi") => break,
                other => {
                    return self.fail(at, format!("expected `fi`, found {}", other.describe()));
                }
            }
        }
        Ok(Compound::If {
            branches,
            else_body,
        })
    }

    fn parse_for(&mut self) -> PResult<Compound> {
        self.next()?;
        let (tok, at) = self.next()?;
        let var = match tok {
            Tok::Word(w) if is_identifier(&w.raw) => w.raw,
            Tok::Op(Op::LParen) => return self.fail(at, "arithmetic for loops are not supported"),
            other => {
                return self.fail(
                    at,
                    format!("expected loop variable, found {}", other.describe()),
                )
            }
        };
        self.skip_newlines()?;
        let mut items = None;
        if self.peek()?.is_word("in") {
            self.next()?;
            let mut words = Vec::new();
            loop {
                let (tok, at) = self.next()?;
                match tok {
                    Tok::Word(w) => words.push(w),
                    Tok::Op(Op::Semi) | Tok::Newline => break,
                    other => {
                        return self
                            .fail(at, format!("unexpected {} in for list", other.describe()))
                    }
                }
            }
            items = Some(words);
        } else if *self.peek()? == Tok::Op(Op::Semi) {
            self.next()?;
        }
        self.skip_newlines()?;
        self.expect_reserved("do")?;
        let body = self.parse_required_list("loop body")?;
        self.expect_reserved("done")?;
        Ok(Compound::For {
            var,
            items,
            body: Box::new(body),
        })
    }

    fn parse_function_keyword(&mut self) -> PResult<Node> {
        self.next()?;
        let (tok, at) = self.next()?;
        let Tok::Word(name) = tok else {
            return self.fail(
                at,
                format!("expected function name, found {}", tok.describe()),
            );
        };
        if *self.peek()? == Tok::Op(Op::LParen) {
            self.next()?;
            let (tok, at) = self.next()?;
            if tok != Tok::Op(Op::RParen) {
                return self.fail(at, format!("expected `)`, found {}", tok.describe()));
            }
        }
        self.parse_function_body(name)
    }

    fn parse_function_body(&mut self, name: Word) -> PResult<Node> {
        self.skip_newlines()?;
        let at = self.peek_offset()?;
        let body = self.parse_command()?;
        if !matches!(body, Node::Compound { .. }) {
            return self.fail(at, "function body must be a compound command");
        }
        Ok(Node::Function {
            name,
            body: Box::new(body),
        })
    }

    fn parse_trailing_redirects(&mut self) -> PResult<Vec<Redirect>> {
        let mut redirects = Vec::new();
        loop {
            match self.peek()? {
                Tok::IoNumber(_) | Tok::Op(Op::Redir(_)) => redirects.push(self.parse_redirect()?),
                _ => return Ok(redirects),
            }
        }
    }

    fn parse_redirect(&mut self) -> PResult<Redirect> {
        let (tok, at) = self.next()?;
        let (fd, op) = match tok {
            Tok::IoNumber(n) => match self.next()? {
                (Tok::Op(Op::Redir(op)), _) => (Some(n), op),
                (other, at) => {
                    return self.fail(
                        at,
                        format!("expected redirection, found {}", other.describe()),
                    )
                }
            },
            Tok::Op(Op::Redir(op)) => (None, op),
            other => {
                return self.fail(
                    at,
                    format!("expected redirection, found {}", other.describe()),
                )
            }
        };
        let (tok, at) = self.next()?;
        let Tok::Word(target) = tok else {
            return self.fail(
                at,
                format!("missing redirection target, found {}", tok.describe()),
            );
        };
        let mut heredoc = None;
        if matches!(op, RedirectOp::HereDoc | RedirectOp::HereDocStrip) {
            let index = self.heredocs.len();
            self.heredocs.push(HereDoc {
                delimiter: target.value.clone(),
                body: String::new(),
                substitutions: Vec::new(),
            });
            self.pending.push(PendingDoc {
                index,
                delimiter: target.value.clone(),
                strip_tabs: op == RedirectOp::HereDocStrip,
                quoted: target.raw.contains(['\'', '"', '\\']),
            });
            heredoc = Some(index);
        }
        Ok(Redirect {
            fd,
            op,
            target,
            heredoc,
        })
    }

    fn parse_simple(&mut self) -> PResult<Node> {
        let at = self.peek_offset()?;
        let mut parts = Vec::new();
        let mut seen_command_word = false;
        loop {
            match self.peek()? {
                Tok::IoNumber(_) | Tok::Op(Op::Redir(_)) => {
                    parts.push(Part::Redirect(self.parse_redirect()?));
                }
                Tok::Word(_) => {
                    let Tok::Word(w) = self.next()?.0 else {
                        unreachable!()
                    };
                    if !seen_command_word && is_assignment(&w.raw) {
                        parts.push(Part::Assignment(w));
                    } else {
                        seen_command_word = true;
                        parts.push(Part::Word(w));
                    }
                }
                Tok::Op(Op::LParen) => {
                    let paren = self.peek_offset()?;
                    if let [Part::Word(_)] = parts.as_slice() {
                        self.next()?;
                        let (tok, at) = self.next()?;
                        if tok != Tok::Op(Op::RParen) {
                            return self
                                .fail(at, format!("expected `)`, found {}", tok.describe()));
                        }
                        let Some(Part::Word(name)) = parts.pop() else {
                            unreachable!()
                        };
                        return self.parse_function_body(name);
                    }
                    return self.fail(paren, "unexpected `(`");
                }
                _ => break,
            }
        }
        if parts.is_empty() {
            return self.fail(at, "expected a command");
        }
        Ok(Node::Command(CommandNode { parts }))
    }
}

/// Shifts here-document indices of a node parsed by a nested parser.
fn reindex_heredocs(mut node: Node, offset: usize) -> Node {
    if offset == 0 {
        return node;
    }
    fn fix_redirect(r: &mut Redirect, offset: usize) {
        if let Some(i) = r.heredoc.as_mut() {
            *i += offset;
        }
        fix_word(&mut r.target, offset);
    }
    fn fix_word(w: &mut Word, offset: usize) {
        for s in &mut w.substitutions {
            fix_node(s, offset);
        }
    }
    fn fix_node(n: &mut Node, offset: usize) {
        match n {
            Node::Command(c) => {
                for p in &mut c.parts {
                    match p {
                        Part::Word(w) | Part::Assignment(w) => fix_word(w, offset),
                        Part::Redirect(r) => fix_redirect(r, offset),
                    }
                }
            }
            Node::Pipeline { stages, .. } => stages.iter_mut().for_each(|s| fix_node(s, offset)),
            Node::List { items, .. } => items.iter_mut().for_each(|s| fix_node(s, offset)),
            Node::Compound { body, redirects } => {
                match body {
                    Compound::Subshell(b) | Compound::Group(b) => fix_node(b, offset),
                    Compound::If {
                        branches,
                        else_body,
                    } => {
                        for (c, t) in branches {
                            fix_node(c, offset);
                            fix_node(t, offset);
                        }
                        if let Some(e) = else_body {
                            fix_node(e, offset);
                        }
                    }
                    Compound::For { items, body, .. } => {
                        for w in items.iter_mut().flatten() {
                            fix_word(w, offset);
                        }
                        fix_node(body, offset);
                    }
                    Compound::While {
                        condition, body, ..
                    } => {
                        fix_node(condition, offset);
                        fix_node(body, offset);
                    }
                }
                for r in redirects {
                    fix_redirect(r, offset);
                }
            }
            Node::Function { name, body } => {
                fix_word(name, offset);
                fix_node(body, offset);
            }
        }
    }
    fix_node(&mut node, offset);
    node
}

/// Parses shell text. Blank input yields an empty script.
pub fn parse_script(script: &str) -> Result<Script, ParseFailure> {
    if script.trim().is_empty() {
        return Ok(Script::default());
    }
    Parser::new(script, 0, 0).parse_script()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Script {
        parse_script(s).unwrap_or_else(|e| panic!("{s:?}: {e}"))
    }

    fn words(node: &Node) -> Vec<String> {
        match node {
            Node::Command(c) => c
                .parts
                .iter()
                .filter_map(Part::as_word)
                .map(|w| w.value.clone())
                .collect(),
            other => panic!("not a command: {other:?}"),
        }
    }

    #[test]
    fn blank_input_is_empty() {
        assert_eq!(parse("   \n\t "), Script::default());
    }

    #[test]
    fn single_command() {
        let s = parse("ls -la");
        assert_eq!(words(s.body.as_ref().unwrap()), ["ls", "-la"]);
        assert_eq!(s.command_count(), 1);
    }

    #[test]
    fn pipeline_of_two() {
        let s = parse("grep -r foo | head -5");
        match s.body.unwrap() {
            Node::Pipeline { negated, stages } => {
                assert!(!negated);
                assert_eq!(stages.len(), 2);
                assert_eq!(words(&stages[0]), ["grep", "-r", "foo"]);
                assert_eq!(words(&stages[1]), ["head", "-5"]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unterminated_quotes_fail() {
        let err = parse_script("echo \"unterminated").unwrap_err();
        assert_eq!(err.offset, Some(5));
        assert!(parse_script("echo 'x").is_err());
        assert!(parse_script("echo `ls").is_err());
        assert!(parse_script("echo $(ls").is_err());
    }

    #[test]
    fn quote_removal_keeps_expansions() {
        let s = parse(r#"echo 'a b' "c $HOME" \; ${X:-y} $'t\tx'"#);
        assert_eq!(
            words(s.body.as_ref().unwrap()),
            ["echo", "a b", "c $HOME", ";", "${X:-y}", "t\tx"]
        );
    }

    #[test]
    fn lists_and_separators() {
        let s = parse("a && b || c; d & e\nf");
        match s.body.unwrap() {
            Node::List { items, ops } => {
                assert_eq!(items.len(), 6);
                assert_eq!(
                    ops,
                    [
                        ListOp::And,
                        ListOp::Or,
                        ListOp::Seq,
                        ListOp::Background,
                        ListOp::Seq
                    ]
                );
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn dangling_operators_fail() {
        for bad in [
            "ls &&", "ls |", "| ls", "&& ls", "ls ;; x", "( ls", "ls )", "fi",
        ] {
            assert!(parse_script(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn redirections_are_not_words() {
        let s = parse("cat <in.txt >out.txt 2>&1 &>/dev/null");
        let Node::Command(c) = s.body.unwrap() else {
            panic!()
        };
        let redirs: Vec<_> = c
            .parts
            .iter()
            .filter_map(|p| match p {
                Part::Redirect(r) => Some((r.fd, r.op, r.target.value.clone())),
                _ => None,
            })
            .collect();
        assert_eq!(
            redirs,
            [
                (None, RedirectOp::Input, "in.txt".into()),
                (None, RedirectOp::Output, "out.txt".into()),
                (Some(2), RedirectOp::DupOutput, "1".into()),
                (None, RedirectOp::OutputAll, "/dev/null".into()),
            ]
        );
    }

    #[test]
    fn assignments_only_in_prefix() {
        let s = parse("FOO=1 BAR+=2 env X=3");
        let Node::Command(c) = s.body.unwrap() else {
            panic!()
        };
        assert!(matches!(c.parts[0], Part::Assignment(_)));
        assert!(matches!(c.parts[1], Part::Assignment(_)));
        assert!(matches!(c.parts[2], Part::Word(_)));
        assert!(matches!(c.parts[3], Part::Word(_)));
    }

    #[test]
    fn compounds() {
        let scripts = [
            "if grep -q x f; then echo y; elif true; then ls; else pwd; fi",
            "for f in $(ls); do cat \"$f\"; done",
            "for f\ndo echo $f; done",
            "while read line; do echo $line; done < input.txt",
            "until false; do break; done",
            "{ ls; pwd; } > out",
            "(cd src && ls)",
            "f() { ls; }",
            "function g { echo hi; }",
            "! grep x y",
        ];
        for s in scripts {
            parse(s);
        }
    }

    #[test]
    fn substitutions_are_parsed() {
        let s = parse("echo $(python -c 'x') `pytest -q` \"$(pip list)\"");
        assert_eq!(s.command_count(), 4);
    }

    #[test]
    fn nested_substitution() {
        let s = parse("echo $(echo $(echo `ls`))");
        assert_eq!(s.command_count(), 4);
    }

    #[test]
    fn unsupported_constructs_fail() {
        for bad in [
            "echo $((1+2))",
            "((x++))",
            "diff <(ls a) <(ls b)",
            "case x in a) ls;; esac",
            "for ((i=0;i<3;i++)); do ls; done",
            "a=(1 2)",
        ] {
            assert!(parse_script(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn heredoc_bodies() {
        let s = parse("cat <<EOF > f.py\nimport os\n$(python x)\nEOF\nls");
        assert_eq!(s.heredocs.len(), 1);
        assert_eq!(s.heredocs[0].body, "import os\n$(python x)\n");
        // cat, ls, and the substitution inside the unquoted body
        assert_eq!(s.command_count(), 3);

        let s = parse("cat <<'EOF'\n$(python x)\nEOF\n");
        assert_eq!(s.command_count(), 1);

        let s = parse("cat <<-EOF\n\tindented\n\tEOF\necho done");
        assert_eq!(s.heredocs[0].body, "indented\n");
        assert_eq!(s.command_count(), 2);
    }

    #[test]
    fn heredoc_body_is_not_code() {
        let s = parse("cat > x.py << 'END'\nif True:\n    print(\"(\")\nEND");
        assert_eq!(s.command_count(), 1);
    }

    #[test]
    fn comments_and_continuations() {
        let s = parse("ls \\\n  -la # trailing (comment\n# whole line\npwd");
        assert_eq!(s.command_count(), 2);
    }

    #[test]
    fn function_definition_via_parens() {
        let s = parse("greet () {\n echo hi\n}");
        match s.body.unwrap() {
            Node::Function { name, .. } => assert_eq!(name.value, "greet"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn deep_nesting_is_bounded() {
        let deep = "$(".repeat(400) + &")".repeat(400);
        assert!(parse_script(&format!("echo {deep}")).is_err());
        let deep = "( ".repeat(400) + "ls" + &" )".repeat(400);
        assert!(parse_script(&deep).is_err());
        let ok = "( ".repeat(20) + "ls" + &" )".repeat(20);
        assert!(parse_script(&ok).is_ok());
    }
}
