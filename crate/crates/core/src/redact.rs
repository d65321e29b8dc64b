//! Personal-data redaction for trajectory text.

use std::collections::BTreeMap;
use std::fmt;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::model::Trajectory;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PiiClass {
    Email,
    Token,
    Secret,
}

impl PiiClass {
    pub fn placeholder(self) -> &'static str {
        match self {
            PiiClass::Email => "<REDACTED:EMAIL>",
            PiiClass::Token => "<REDACTED:TOKEN>",
            PiiClass::Secret => "<REDACTED:SECRET>",
        }
    }
}

impl fmt::Display for PiiClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PiiClass::Email => "EMAIL",
            PiiClass::Token => "TOKEN",
            PiiClass::Secret => "SECRET",
        })
    }
}

/// Extra acceptance test on a candidate match.
type Qualifier = fn(&str) -> bool;

#[derive(Debug, Clone)]
pub struct PiiRule {
    pub class: PiiClass,
    pattern: Regex,
    /// Capture group to replace; 0 replaces the whole match.
    group: usize,
    qualifier: Option<Qualifier>,
}

impl PiiRule {
    pub fn new(class: PiiClass, pattern: &str, group: usize) -> Result<Self, regex::Error> {
        Ok(PiiRule {
            class,
            pattern: Regex::new(pattern)?,
            group,
            qualifier: None,
        })
    }

    fn with_qualifier(mut self, q: Qualifier) -> Self {
        self.qualifier = Some(q);
        self
    }

    fn apply(&self, text: &str, count: &mut usize) -> Option<String> {
        let mut out = String::new();
        let mut last = 0;
        let mut replaced = false;
        for caps in self.pattern.captures_iter(text) {
            let Some(m) = caps.get(self.group) else {
                continue;
            };
            if self.qualifier.is_some_and(|q| !q(m.as_str())) {
                continue;
            }
            out.push_str(&text[last..m.start()]);
            out.push_str(self.class.placeholder());
            last = m.end();
            replaced = true;
            *count += 1;
        }
        if !replaced {
            return None;
        }
        out.push_str(&text[last..]);
        Some(out)
    }
}

/// Long opaque values: pure hex, or base64 mixing letters and digits.
fn looks_secret(value: &str) -> bool {
    let body = value.trim_end_matches('=');
    if body.bytes().all(|b| b.is_ascii_hexdigit()) {
        return true;
    }
    body.bytes().any(|b| b.is_ascii_digit()) && body.bytes().any(|b| b.is_ascii_alphabetic())
}

#[derive(Debug, Clone)]
pub struct PiiRules {
    pub rules: Vec<PiiRule>,
}

impl Default for PiiRules {
    /// Emails, access tokens with documented prefixes, bearer credentials,
    /// and 16+ character hex/base64 values next to "token", "key" or "secret".
    fn default() -> Self {
        let rules = vec![
            PiiRule::new(
                PiiClass::Email,
                r"[A-Za-z0-9._%+\-]+@[A-Za-z0-9\-]+(?:\.[A-Za-z0-9\-]+)*\.[A-Za-z]{2,}",
                0,
            ),
            PiiRule::new(
                PiiClass::Token,
                concat!(
                    r"\b(?:gh[pousr]_[A-Za-z0-9]{36,255}",
                    r"|github_pat_[A-Za-z0-9_]{22,255}",
                    r"|glpat-[A-Za-z0-9_\-]{20,}",
                    r"|xox[abprs]-[A-Za-z0-9\-]{10,}",
                    r"|sk-(?:proj-|ant-)?[A-Za-z0-9_\-]{20,}",
                    r"|hf_[A-Za-z0-9]{30,}",
                    r"|(?:AKIA|ASIA)[0-9A-Z]{16})\b",
                ),
                0,
            ),
            PiiRule::new(PiiClass::Token, r"(?i)\bbearer\s+([A-Za-z0-9\-._~+/]{20,}=*)", 1),
            PiiRule::new(
                PiiClass::Secret,
                r#"(?i)(?:token|key|secret)[A-Za-z0-9_]*["']?(?:\s*[:=]\s*|\s+)["']?([A-Za-z0-9+/]{16,}={0,2})"#,
                1,
            )
            .map(|r| r.with_qualifier(looks_secret)),
        ];
        PiiRules {
            rules: rules
                .into_iter()
                .collect::<Result<_, _>>()
                .expect("built-in patterns compile"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RedactionReport {
    pub replacements: BTreeMap<PiiClass, usize>,
}

impl RedactionReport {
    pub fn is_empty(&self) -> bool {
        self.replacements.values().all(|&n| n == 0)
    }

    pub fn total(&self) -> usize {
        self.replacements.values().sum()
    }

    pub fn merge(&mut self, other: &RedactionReport) {
        for (&class, &n) in &other.replacements {
            *self.replacements.entry(class).or_default() += n;
        }
    }
}

impl PiiRules {
    /// Redacts `text` in place; untouched text stays byte-identical.
    pub fn redact_text(&self, text: &mut String, report: &mut RedactionReport) {
        for rule in &self.rules {
            let mut n = 0;
            if let Some(replaced) = rule.apply(text, &mut n) {
                *text = replaced;
            }
            if n > 0 {
                *report.replacements.entry(rule.class).or_default() += n;
            }
        }
    }

    fn redact_value(&self, value: &mut Value, report: &mut RedactionReport) {
        match value {
            Value::String(s) => self.redact_text(s, report),
            Value::Array(items) => items.iter_mut().for_each(|v| self.redact_value(v, report)),
            Value::Object(map) => map.values_mut().for_each(|v| self.redact_value(v, report)),
            _ => {}
        }
    }
}

/// Redacts every message body and every tool-call argument.
pub fn redact_pii(t: &Trajectory, rules: &PiiRules) -> (Trajectory, RedactionReport) {
    let mut out = t.clone();
    let mut report = RedactionReport::default();
    for m in &mut out.messages {
        rules.redact_text(&mut m.content, &mut report);
        for call in &mut m.tool_calls {
            for value in call.arguments.values_mut() {
                rules.redact_value(value, &mut report);
            }
        }
    }
    (out, report)
}
