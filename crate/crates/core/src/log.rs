//! Append-only event log with a sparse offset index and a control journal.
//!
//! A log directory holds `events.ndjson` (one wire-encoded event per line),
//! `events.idx` (`offset byte-position` every [`INDEX_STRIDE`] events) and
//! `control.jsonl` (deployments and migrations, each stamped with the number
//! of events logged before it).

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::event::{decode_event, encode_event_string, to_csv_line, CaseId, DecodeError, ModelId, RawExecutionEvent};
use crate::runtime::{MigrationPolicy, ModelSpec};

pub const EVENTS_FILE: &str = "events.ndjson";
pub const INDEX_FILE: &str = "events.idx";
pub const CONTROL_FILE: &str = "control.jsonl";
pub const INDEX_STRIDE: u64 = 256;

#[derive(Debug, Error)]
pub enum LogError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} line {line}: {source}")]
    Decode {
        path: String,
        line: usize,
        #[source]
        source: DecodeError,
    },
    #[error("{path} line {line}: {reason}")]
    Control {
        path: String,
        line: usize,
        reason: String,
    },
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> LogError + '_ {
    move |source| LogError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum ControlOp {
    Deploy { spec: ModelSpec },
    Migrate { spec: ModelSpec, policy: MigrationPolicy },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControlRecord {
    /// Events logged before this record.
    pub at: u64,
    #[serde(flatten)]
    pub op: ControlOp,
}

pub struct EventLog {
    dir: PathBuf,
    events: BufWriter<File>,
    index: BufWriter<File>,
    control: BufWriter<File>,
    offset: u64,
    bytes: u64,
}

fn append_file(path: &Path) -> Result<File, LogError> {
    OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(io(path))
}

impl EventLog {
    /// Opens or creates the log in `dir`, continuing after existing events.
    pub fn open(dir: &Path) -> Result<Self, LogError> {
        fs::create_dir_all(dir).map_err(io(dir))?;
        let ev = dir.join(EVENTS_FILE);
        let events = append_file(&ev)?;
        let bytes = events.metadata().map_err(io(&ev))?.len();
        let mut offset = 0;
        if bytes > 0 {
            let mut buf = Vec::new();
            File::open(&ev)
                .and_then(|mut f| f.read_to_end(&mut buf))
                .map_err(io(&ev))?;
            offset = buf.iter().filter(|b| **b == b'\n').count() as u64;
        }
        Ok(EventLog {
            events: BufWriter::new(events),
            index: BufWriter::new(append_file(&dir.join(INDEX_FILE))?),
            control: BufWriter::new(append_file(&dir.join(CONTROL_FILE))?),
            dir: dir.to_path_buf(),
            offset,
            bytes,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Number of events appended so far.
    pub fn len(&self) -> u64 {
        self.offset
    }

    pub fn is_empty(&self) -> bool {
        self.offset == 0
    }

    /// Appends one event and returns its offset.
    pub fn append(&mut self, e: &RawExecutionEvent) -> Result<u64, LogError> {
        let at = self.offset;
        if at % INDEX_STRIDE == 0 {
            writeln!(self.index, "{at} {}", self.bytes).map_err(io(&self.dir))?;
        }
        let line = encode_event_string(e);
        writeln!(self.events, "{line}").map_err(io(&self.dir))?;
        self.bytes += line.len() as u64 + 1;
        self.offset += 1;
        Ok(at)
    }

    pub fn append_control(&mut self, op: ControlOp) -> Result<(), LogError> {
        let rec = ControlRecord {
            at: self.offset,
            op,
        };
        let line = serde_json::to_string(&rec).expect("control records serialize");
        writeln!(self.control, "{line}").map_err(io(&self.dir))?;
        self.flush()
    }

    pub fn flush(&mut self) -> Result<(), LogError> {
        self.events.flush().map_err(io(&self.dir))?;
        self.index.flush().map_err(io(&self.dir))?;
        self.control.flush().map_err(io(&self.dir))
    }
}

impl Drop for EventLog {
    fn drop(&mut self) {
        let _ = self.flush();
    }
}

/// Reads a newline-delimited event file; blank lines are skipped.
pub fn read_events(path: &Path) -> Result<Vec<RawExecutionEvent>, LogError> {
    let f = File::open(path).map_err(io(path))?;
    decode_lines(path, BufReader::new(f), 0)
}

fn decode_lines(path: &Path, r: impl BufRead, first_line: usize) -> Result<Vec<RawExecutionEvent>, LogError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(io(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(decode_event(line.as_bytes()).map_err(|source| LogError::Decode {
            path: path.display().to_string(),
            line: first_line + i + 1,
            source,
        })?);
    }
    Ok(out)
}

/// Events of the log in `dir` from `offset` on, located through the index.
pub fn read_events_from(dir: &Path, offset: u64) -> Result<Vec<RawExecutionEvent>, LogError> {
    let idx = dir.join(INDEX_FILE);
    let mut start = (0u64, 0u64);
    if let Ok(text) = fs::read_to_string(&idx) {
        for line in text.lines() {
            let mut it = line.split_whitespace().filter_map(|x| x.parse::<u64>().ok());
            if let (Some(o), Some(b)) = (it.next(), it.next()) {
                if o <= offset {
                    start = (o, b);
                }
            }
        }
    }
    let ev = dir.join(EVENTS_FILE);
    let mut f = File::open(&ev).map_err(io(&ev))?;
    f.seek(SeekFrom::Start(start.1)).map_err(io(&ev))?;
    let events = decode_lines(&ev, BufReader::new(f), start.0 as usize)?;
    Ok(events.into_iter().skip((offset - start.0) as usize).collect())
}

pub fn read_control(path: &Path) -> Result<Vec<ControlRecord>, LogError> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io(path)(e)),
    };
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| LogError::Control {
                path: path.display().to_string(),
                line: i + 1,
                reason: e.to_string(),
            })
        })
        .collect()
}

pub fn filter_events<'a>(
    events: &'a [RawExecutionEvent],
    model: Option<ModelId>,
    case: Option<CaseId>,
) -> impl Iterator<Item = &'a RawExecutionEvent> {
    events
        .iter()
        .filter(move |e| model.is_none_or(|m| e.model == m) && case.is_none_or(|c| e.case == c))
}

pub fn export_ndjson(events: &[RawExecutionEvent], model: Option<ModelId>, case: Option<CaseId>) -> String {
    filter_events(events, model, case)
        .map(|e| encode_event_string(e) + "\n")
        .collect()
}

pub fn export_csv(events: &[RawExecutionEvent], model: Option<ModelId>, case: Option<CaseId>) -> String {
    filter_events(events, model, case)
        .map(|e| to_csv_line(e) + "\n")
        .collect()
}
