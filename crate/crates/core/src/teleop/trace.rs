//! Trace files: one JSON object per line, each carrying the tick at which the
//! message took effect next to the message's own fields.
//!
//! ```text
//! {"tick":0,"type":"enable"}
//! {"tick":12,"type":"input","v":[1.0,0.0,0.0],"r":[0.0,0.0,0.0],"gamma_up":false,"gamma_down":false,"needle_jog":0}
//! ```
//!
//! Ticks are non-decreasing; lines with the same tick apply in file order.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord<T> {
    pub tick: u64,
    #[serde(flatten)]
    pub message: T,
}

pub fn encode_line<T: Serialize>(record: &TraceRecord<T>) -> String {
    let mut s = serde_json::to_string(record).expect("trace records always serialize");
    s.push('\n');
    s
}

/// Parses trace text; blank lines are skipped. Errors name the 1-based line.
pub fn parse_trace<T: DeserializeOwned>(text: &str) -> Result<Vec<TraceRecord<T>>> {
    let mut out: Vec<TraceRecord<T>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: TraceRecord<T> =
            serde_json::from_str(line).map_err(|e| Error::Protocol(format!("trace line {}: {e}", i + 1)))?;
        if out.last().is_some_and(|prev| prev.tick > rec.tick) {
            return Err(Error::Protocol(format!("trace line {}: tick goes backwards", i + 1)));
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn read_trace<T: DeserializeOwned>(path: &Path) -> Result<Vec<TraceRecord<T>>> {
    let mut text = String::new();
    for line in BufReader::new(fs::File::open(path)?).lines() {
        text.push_str(&line?);
        text.push('\n');
    }
    parse_trace(&text)
}

pub fn write_trace<T: Serialize>(path: &Path, records: &[TraceRecord<T>]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for r in records {
        w.write_all(encode_line(r).as_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Appends records to a file as they happen.
pub struct TraceWriter {
    out: BufWriter<fs::File>,
}

impl TraceWriter {
    pub fn create(path: &Path) -> Result<Self> {
        Ok(Self {
            out: BufWriter::new(fs::File::create(path)?),
        })
    }

    pub fn append<T: Serialize>(&mut self, tick: u64, message: &T) -> Result<()> {
        let line = encode_line(&TraceRecord { tick, message });
        self.out.write_all(line.as_bytes())?;
        self.out.flush()?;
        Ok(())
    }
}
