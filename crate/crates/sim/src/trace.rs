//! Canonical JSON Lines trace. Keys are sorted (serde_json's default map is
//! ordered), so equal traces are byte-identical.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("malformed trace at line {line}: {reason}")]
pub struct MalformedTrace {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceLine {
    pub t: u64,
    pub seq: u64,
    pub kind: String,
    pub payload: Value,
}

impl TraceLine {
    pub fn to_json(&self) -> String {
        let value = serde_json::to_value(self).expect("trace line serializes");
        serde_json::to_string(&value).expect("value serializes")
    }

    pub fn str_field(&self, key: &str) -> Option<&str> {
        self.payload.get(key).and_then(Value::as_str)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    pub lines: Vec<TraceLine>,
}

impl Trace {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for line in &self.lines {
            out.push_str(&line.to_json());
            out.push('\n');
        }
        out
    }

    /// SHA-256 over the JSON Lines byte stream, hex encoded.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for line in &self.lines {
            h.update(line.to_json().as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }

    /// Lines must carry strictly increasing `seq` and non-decreasing `t`.
    pub fn parse(jsonl: &str) -> Result<Trace, MalformedTrace> {
        let mut lines: Vec<TraceLine> = Vec::new();
        for (i, raw) in jsonl.lines().enumerate() {
            if raw.trim().is_empty() {
                continue;
            }
            let line: TraceLine =
                serde_json::from_str(raw).map_err(|e| MalformedTrace { line: i + 1, reason: e.to_string() })?;
            if let Some(prev) = lines.last() {
                if line.seq <= prev.seq {
                    return Err(MalformedTrace { line: i + 1, reason: format!("seq {} after {}", line.seq, prev.seq) });
                }
                if line.t < prev.t {
                    return Err(MalformedTrace { line: i + 1, reason: format!("time {} after {}", line.t, prev.t) });
                }
            }
            lines.push(line);
        }
        Ok(Trace { lines })
    }

    pub fn of_kind<'a>(&'a self, kind: &'a str) -> impl Iterator<Item = &'a TraceLine> + 'a {
        self.lines.iter().filter(move |l| l.kind == kind)
    }

    pub fn since(&self, seq: u64) -> &[TraceLine] {
        let start = self.lines.partition_point(|l| l.seq <= seq);
        &self.lines[start..]
    }
}
