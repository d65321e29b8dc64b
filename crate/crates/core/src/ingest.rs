//! Line-delimited record ingestion.

use std::io::{self, BufRead, Write};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::model::Trajectory;

/// A record that could not be decoded. `line` is 1-based.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[error("line {line}: {reason}")]
pub struct IngestError {
    pub line: usize,
    pub reason: String,
}

/// Decodes one record per non-blank line. A bad line produces an
/// [`IngestError`] and decoding continues with the next line. Only a failure
/// of the underlying reader aborts.
pub fn parse_records<T, R>(reader: R) -> io::Result<(Vec<T>, Vec<IngestError>)>
where
    T: DeserializeOwned,
    R: BufRead,
{
    let mut records = Vec::new();
    let mut errors = Vec::new();
    for (idx, raw) in reader.split(b'\n').enumerate() {
        let raw = raw?;
        let line = idx + 1;
        let text = match std::str::from_utf8(&raw) {
            Ok(text) => text,
            Err(e) => {
                errors.push(IngestError {
                    line,
                    reason: format!("invalid UTF-8: {e}"),
                });
                continue;
            }
        };
        let text = text.strip_suffix('\r').unwrap_or(text);
        if text.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<T>(text) {
            Ok(record) => records.push(record),
            Err(e) => errors.push(IngestError {
                line,
                reason: e.to_string(),
            }),
        }
    }
    Ok((records, errors))
}

pub fn parse_corpus<R: BufRead>(reader: R) -> io::Result<(Vec<Trajectory>, Vec<IngestError>)> {
    parse_records(reader)
}

/// Parses an in-memory corpus.
pub fn parse_corpus_str(text: &str) -> (Vec<Trajectory>, Vec<IngestError>) {
    parse_records(text.as_bytes()).expect("reading from a byte slice cannot fail")
}

pub fn to_line<T: Serialize>(record: &T) -> String {
    serde_json::to_string(record).expect("record types always serialize")
}

pub fn write_records<'a, T, W, I>(mut out: W, records: I) -> io::Result<()>
where
    T: Serialize + 'a,
    W: Write,
    I: IntoIterator<Item = &'a T>,
{
    for record in records {
        out.write_all(to_line(record).as_bytes())?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
