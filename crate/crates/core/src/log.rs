//! Append-only JSONL session log.
//!
//! One [`LogRecord`] per line, written with a single `write` and flushed
//! immediately, so a crash can lose at most the record being written.

use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use crate::fields::Fields;
use crate::protocol::{decode_value, encode_value, Message, Role};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogDirection {
    In,
    Out,
    /// Generated by the server itself, e.g. a biometric rule action.
    Internal,
}

impl LogDirection {
    pub fn as_str(self) -> &'static str {
        match self {
            LogDirection::In => "in",
            LogDirection::Out => "out",
            LogDirection::Internal => "internal",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "in" => Some(LogDirection::In),
            "out" => Some(LogDirection::Out),
            "internal" => Some(LogDirection::Internal),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRecord {
    /// Server clock when the message was received or sent.
    pub t_recv_ms: i64,
    pub direction: LogDirection,
    /// Connection id on the server; `None` for internal records.
    pub peer: Option<u64>,
    /// `None` until the peer has completed its handshake.
    pub peer_role: Option<Role>,
    pub msg: Message,
}

impl LogRecord {
    pub fn to_json_line(&self) -> String {
        json!({
            "t_recv_ms": self.t_recv_ms,
            "direction": self.direction.as_str(),
            "peer": self.peer,
            "peer_role": self.peer_role.map(Role::as_str),
            "msg": encode_value(&self.msg),
        })
        .to_string()
    }

    pub fn from_json_line(line: &str) -> Option<Self> {
        let value: Value = serde_json::from_str(line).ok()?;
        let f = Fields::root(&value).ok()?;
        let direction = LogDirection::parse(f.str("direction").ok()?)?;
        let peer_role = match f.opt_str("peer_role").ok()? {
            Some(r) => Some(Role::parse(r)?),
            None => None,
        };
        let peer = match f.opt("peer") {
            Some(v) => Some(v.as_u64()?),
            None => None,
        };
        Some(Self {
            t_recv_ms: f.i64("t_recv_ms").ok()?,
            direction,
            peer,
            peer_role,
            msg: decode_value(f.req("msg").ok()?).ok()?,
        })
    }
}

/// Destination for session log records.
pub trait LogSink: Send {
    fn record(&mut self, rec: &LogRecord) -> io::Result<()>;
}

impl LogSink for Vec<LogRecord> {
    fn record(&mut self, rec: &LogRecord) -> io::Result<()> {
        self.push(rec.clone());
        Ok(())
    }
}

/// Discards everything.
pub struct NullLog;

impl LogSink for NullLog {
    fn record(&mut self, _: &LogRecord) -> io::Result<()> {
        Ok(())
    }
}

#[derive(Debug)]
pub struct JsonlLog {
    path: PathBuf,
    file: File,
    written: u64,
}

impl JsonlLog {
    /// Opens `path` for appending, creating parent directories.
    pub fn open(path: &Path) -> io::Result<Self> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self { path: path.to_path_buf(), file, written: 0 })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn written(&self) -> u64 {
        self.written
    }
}

impl LogSink for JsonlLog {
    fn record(&mut self, rec: &LogRecord) -> io::Result<()> {
        let mut line = rec.to_json_line();
        line.push('\n');
        self.file.write_all(line.as_bytes())?;
        self.file.flush()?;
        self.written += 1;
        Ok(())
    }
}

/// Parsed log plus the number of lines that could not be read.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LoadedLog {
    pub records: Vec<LogRecord>,
    pub corrupt_lines: usize,
}

/// Reads records from JSONL text, skipping blank lines and counting
/// undecodable ones.
pub fn read_records<R: BufRead>(reader: R) -> io::Result<LoadedLog> {
    let mut out = LoadedLog::default();
    for line in reader.split(b'\n') {
        let line = line?;
        let Ok(text) = std::str::from_utf8(&line) else {
            out.corrupt_lines += 1;
            continue;
        };
        if text.trim().is_empty() {
            continue;
        }
        match LogRecord::from_json_line(text) {
            Some(rec) => out.records.push(rec),
            None => out.corrupt_lines += 1,
        }
    }
    Ok(out)
}

pub fn read_log(path: &Path) -> io::Result<LoadedLog> {
    read_records(BufReader::new(File::open(path)?))
}
