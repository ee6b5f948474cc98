//! Request/response transcripts.
//!
//! [`Recorded`] wraps any provider and appends one JSON line per call to a
//! [`TranscriptLog`]. [`Replay`] serves those lines back without touching the
//! original provider. Responses are keyed by provider, operation and request
//! body; repeated identical requests are answered in recorded order.

use std::collections::{HashMap, VecDeque};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{CotGenerator, Judge, PromptGenerator, ProviderError, TrainingPair, UpdateAck};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub provider: String,
    pub op: String,
    pub request: Value,
    pub response: std::result::Result<Value, ProviderError>,
}

impl TranscriptEntry {
    fn key(&self) -> String {
        key(&self.provider, &self.op, &self.request)
    }
}

fn key(provider: &str, op: &str, request: &Value) -> String {
    format!("{provider}\u{1f}{op}\u{1f}{request}")
}

/// Append-only sink shared by every recorded provider of a run.
#[derive(Debug, Default)]
pub struct TranscriptLog {
    entries: Mutex<Vec<TranscriptEntry>>,
    file: Mutex<Option<(PathBuf, BufWriter<File>)>>,
}

impl TranscriptLog {
    pub fn in_memory() -> Arc<Self> {
        Arc::default()
    }

    /// Appends to `path`, creating it if needed.
    pub fn to_file(path: &Path) -> Result<Arc<Self>> {
        let f = OpenOptions::new().create(true).append(true).open(path).map_err(|e| Error::io(path, e))?;
        Ok(Arc::new(Self { entries: Mutex::default(), file: Mutex::new(Some((path.to_path_buf(), BufWriter::new(f)))) }))
    }

    pub fn record(&self, entry: TranscriptEntry) {
        if let Some((path, w)) = self.file.lock().expect("transcript poisoned").as_mut() {
            let line = serde_json::to_string(&entry).expect("transcript entry serializes");
            if let Err(e) = writeln!(w, "{line}").and_then(|()| w.flush()) {
                tracing::warn!(path = %path.display(), error = %e, "failed to write transcript line");
            }
        }
        self.entries.lock().expect("transcript poisoned").push(entry);
    }

    pub fn entries(&self) -> Vec<TranscriptEntry> {
        self.entries.lock().expect("transcript poisoned").clone()
    }
}

pub fn read_transcript(path: &Path) -> Result<Vec<TranscriptEntry>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::invalid(format!("{}:{}: {e}", path.display(), i + 1)))?,
        );
    }
    Ok(out)
}

/// Wraps a provider and logs each call under `name`.
pub struct Recorded<P> {
    inner: P,
    name: String,
    log: Arc<TranscriptLog>,
}

impl<P> Recorded<P> {
    pub fn new(inner: P, name: impl Into<String>, log: Arc<TranscriptLog>) -> Self {
        Self { inner, name: name.into(), log }
    }

    pub fn into_inner(self) -> P {
        self.inner
    }

    fn log<T: Serialize>(&self, op: &str, request: Value, response: &std::result::Result<T, ProviderError>) {
        let response = match response {
            Ok(v) => Ok(serde_json::to_value(v).expect("response serializes")),
            Err(e) => Err(e.clone()),
        };
        self.log.record(TranscriptEntry { provider: self.name.clone(), op: op.into(), request, response });
    }
}

fn summarize_request(d: &str, q: &str, a: &str) -> Value {
    json!({"description": d, "question": q, "answer": a})
}

impl<P: PromptGenerator> PromptGenerator for Recorded<P> {
    fn summarize(&self, d: &str, q: &str, a: &str) -> std::result::Result<String, ProviderError> {
        let r = self.inner.summarize(d, q, a);
        self.log("summarize", summarize_request(d, q, a), &r);
        r
    }

    fn update(&mut self, pairs: &[TrainingPair]) -> std::result::Result<UpdateAck, ProviderError> {
        let r = self.inner.update(pairs);
        self.log("update", json!({"pairs": pairs}), &r);
        r
    }
}

impl<P: CotGenerator> CotGenerator for Recorded<P> {
    fn generate(&self, prompt: &str) -> std::result::Result<String, ProviderError> {
        let r = self.inner.generate(prompt);
        self.log("generate", json!({"prompt": prompt}), &r);
        r
    }
}

impl<P: Judge> Judge for Recorded<P> {
    fn judge(&self, q: &str, g: &str, o: &str) -> std::result::Result<bool, ProviderError> {
        let r = self.inner.judge(q, g, o);
        self.log("judge", json!({"question": q, "gold_answer": g, "output": o}), &r);
        r
    }
}

/// Serves recorded responses for one provider name.
#[derive(Debug)]
pub struct Replay {
    name: String,
    table: Mutex<HashMap<String, VecDeque<std::result::Result<Value, ProviderError>>>>,
}

impl Replay {
    pub fn new(name: impl Into<String>, entries: impl IntoIterator<Item = TranscriptEntry>) -> Self {
        let name = name.into();
        let mut table: HashMap<_, VecDeque<_>> = HashMap::new();
        for e in entries.into_iter().filter(|e| e.provider == name) {
            table.entry(e.key()).or_default().push_back(e.response);
        }
        Self { name, table: Mutex::new(table) }
    }

    pub fn from_file(name: impl Into<String>, path: &Path) -> Result<Self> {
        Ok(Self::new(name, read_transcript(path)?))
    }

    /// Number of recorded responses not yet served.
    pub fn remaining(&self) -> usize {
        self.table.lock().expect("replay poisoned").values().map(VecDeque::len).sum()
    }

    fn answer<T: serde::de::DeserializeOwned>(
        &self,
        op: &str,
        request: Value,
    ) -> std::result::Result<T, ProviderError> {
        let k = key(&self.name, op, &request);
        let next = self.table.lock().expect("replay poisoned").get_mut(&k).and_then(VecDeque::pop_front);
        match next {
            None => Err(ProviderError::ReplayMiss(format!("{}/{op}", self.name))),
            Some(Err(e)) => Err(e),
            Some(Ok(v)) => serde_json::from_value(v).map_err(|e| ProviderError::BadResponse(e.to_string())),
        }
    }
}

impl PromptGenerator for Replay {
    fn summarize(&self, d: &str, q: &str, a: &str) -> std::result::Result<String, ProviderError> {
        self.answer("summarize", summarize_request(d, q, a))
    }

    fn update(&mut self, pairs: &[TrainingPair]) -> std::result::Result<UpdateAck, ProviderError> {
        self.answer("update", json!({"pairs": pairs}))
    }
}

impl CotGenerator for Replay {
    fn generate(&self, prompt: &str) -> std::result::Result<String, ProviderError> {
        self.answer("generate", json!({"prompt": prompt}))
    }
}

impl Judge for Replay {
    fn judge(&self, q: &str, g: &str, o: &str) -> std::result::Result<bool, ProviderError> {
        self.answer("judge", json!({"question": q, "gold_answer": g, "output": o}))
    }
}
