//! Append-only JSONL event log with per-record checksums.
//!
//! Each line is `{"seq": n, "crc": c, "event": {...}}` where `seq` counts from
//! 1 and `c` is the CRC-32 of the exact `event` bytes on that line. Reading
//! stops at the first record that fails to parse, breaks the sequence, or
//! fails its checksum; everything before it is returned together with a
//! [`CorruptionReport`].

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::marker::PhantomData;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

use crate::error::{Error, Result};

#[derive(Deserialize)]
struct RawRecord<'a> {
    seq: u64,
    crc: u32,
    #[serde(borrow)]
    event: &'a RawValue,
}

#[derive(Serialize)]
struct OutRecord<'a> {
    seq: u64,
    crc: u32,
    event: &'a RawValue,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorruptionReport {
    /// 1-based line number of the first bad record.
    pub line: usize,
    pub reason: String,
    /// Records successfully read before the bad one.
    pub valid_records: u64,
    /// Byte length of the valid prefix.
    pub valid_bytes: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRead<E> {
    pub events: Vec<E>,
    pub corruption: Option<CorruptionReport>,
}

impl<E> Default for LogRead<E> {
    fn default() -> Self {
        Self { events: Vec::new(), corruption: None }
    }
}

/// Encodes one record line, without the trailing newline.
pub fn encode_record<E: Serialize>(seq: u64, event: &E) -> Result<String> {
    let raw = serde_json::value::to_raw_value(event)?;
    let crc = crc32fast::hash(raw.get().as_bytes());
    Ok(serde_json::to_string(&OutRecord { seq, crc, event: &raw })?)
}

/// Parses log text. `first_seq` is the sequence number expected on line 1.
pub fn decode_records<E: DeserializeOwned>(text: &str, first_seq: u64) -> LogRead<E> {
    let mut out = LogRead::default();
    let mut offset = 0u64;
    for (i, chunk) in text.split_inclusive('\n').enumerate() {
        let expected = first_seq + out.events.len() as u64;
        let line = chunk.trim_end_matches(['\n', '\r']);
        let fail = |reason: String| CorruptionReport {
            line: i + 1,
            reason,
            valid_records: expected - first_seq,
            valid_bytes: offset,
        };
        if !chunk.ends_with('\n') {
            out.corruption = Some(fail("unterminated final record".into()));
            break;
        }
        let rec: RawRecord = match serde_json::from_str(line) {
            Ok(r) => r,
            Err(e) => {
                out.corruption = Some(fail(format!("unparsable record: {e}")));
                break;
            }
        };
        if rec.seq != expected {
            out.corruption = Some(fail(format!("sequence {} where {expected} expected", rec.seq)));
            break;
        }
        let crc = crc32fast::hash(rec.event.get().as_bytes());
        if crc != rec.crc {
            out.corruption = Some(fail(format!("checksum mismatch: stored {:08x}, computed {crc:08x}", rec.crc)));
            break;
        }
        match serde_json::from_str(rec.event.get()) {
            Ok(e) => out.events.push(e),
            Err(e) => {
                out.corruption = Some(fail(format!("event does not decode: {e}")));
                break;
            }
        }
        offset += chunk.len() as u64;
    }
    out
}

pub fn read_log<E: DeserializeOwned>(path: &Path) -> Result<LogRead<E>> {
    match fs::read_to_string(path) {
        Ok(text) => Ok(decode_records(&text, 1)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(LogRead::default()),
        Err(e) => Err(Error::io(path, e)),
    }
}

/// Writer half of a log file.
#[derive(Debug)]
pub struct EventLog<E> {
    path: PathBuf,
    file: BufWriter<File>,
    next_seq: u64,
    _event: PhantomData<fn(E)>,
}

impl<E: Serialize + DeserializeOwned> EventLog<E> {
    /// Opens (or creates) the log, returning the valid events already in it.
    /// A corrupted tail is cut off so new records follow the last valid one.
    pub fn open(path: &Path) -> Result<(Self, LogRead<E>)> {
        let read = read_log::<E>(path)?;
        if let Some(c) = &read.corruption {
            tracing::warn!(path = %path.display(), line = c.line, reason = %c.reason, "truncating corrupted event log tail");
            let f = OpenOptions::new().write(true).open(path).map_err(|e| Error::io(path, e))?;
            f.set_len(c.valid_bytes).map_err(|e| Error::io(path, e))?;
        }
        let f = OpenOptions::new().create(true).append(true).open(path).map_err(|e| Error::io(path, e))?;
        let log = Self {
            path: path.to_path_buf(),
            file: BufWriter::new(f),
            next_seq: read.events.len() as u64 + 1,
            _event: PhantomData,
        };
        Ok((log, read))
    }

    /// Appends and flushes one event, returning its sequence number.
    pub fn append(&mut self, event: &E) -> Result<u64> {
        let seq = self.next_seq;
        let line = encode_record(seq, event)?;
        writeln!(self.file, "{line}").and_then(|()| self.file.flush()).map_err(|e| Error::io(&self.path, e))?;
        self.next_seq += 1;
        Ok(seq)
    }

    pub fn len(&self) -> u64 {
        self.next_seq - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}
