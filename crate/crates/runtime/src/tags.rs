//! Tag-stream ingestion: replay files and live line sockets, grouped into
//! frames and published on the bus.
//!
//! Replay line: `timestamp \t facility_id \t tag \t value`.
//! Socket line: `{"tag":..,"value":..,"timestamp":..,"facility_id":..}`.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::net::{TcpStream, ToSocketAddrs};
use std::path::Path;
use std::str::FromStr;
use std::time::{Duration, Instant};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::bus::{Bus, Payload, FRAMES};
use crate::RuntimeError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TagValue {
    Number(f64),
    Text(String),
}

impl TagValue {
    pub fn as_number(&self) -> Option<f64> {
        match self {
            TagValue::Number(v) => Some(*v),
            TagValue::Text(_) => None,
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            TagValue::Text(s) => Some(s),
            TagValue::Number(_) => None,
        }
    }

    /// Finite numbers become `Number`, anything else non-empty `Text`.
    fn parse(s: &str) -> Option<Self> {
        if s.is_empty() {
            return None;
        }
        Some(match s.parse::<f64>() {
            Ok(v) if v.is_finite() => TagValue::Number(v),
            _ => TagValue::Text(s.to_string()),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TagUpdate {
    pub tag: String,
    pub value: TagValue,
    pub timestamp: i64,
    pub facility_id: String,
}

impl TagUpdate {
    pub fn to_replay_line(&self) -> String {
        let v = match &self.value {
            TagValue::Number(x) => format!("{x:?}"),
            TagValue::Text(s) => s.clone(),
        };
        format!("{}\t{}\t{}\t{v}", self.timestamp, self.facility_id, self.tag)
    }
}

/// Parses one replay line.
pub fn parse_replay_line(line: &str) -> Result<TagUpdate, String> {
    let cols: Vec<&str> = line.split('\t').collect();
    if cols.len() != 4 {
        return Err(format!("expected 4 tab-separated fields, found {}", cols.len()));
    }
    let timestamp = cols[0].trim().parse::<i64>().map_err(|_| format!("bad timestamp '{}'", cols[0]))?;
    if cols[1].is_empty() || cols[2].is_empty() {
        return Err("empty facility or tag".into());
    }
    let value = TagValue::parse(cols[3].trim_end_matches('\r')).ok_or("empty value")?;
    Ok(TagUpdate {
        tag: cols[2].to_string(),
        value,
        timestamp,
        facility_id: cols[1].to_string(),
    })
}

/// Parses one socket line.
pub fn parse_json_line(line: &str) -> Result<TagUpdate, String> {
    let u: TagUpdate = serde_json::from_str(line).map_err(|e| e.to_string())?;
    if u.tag.is_empty() || u.facility_id.is_empty() {
        return Err("empty facility or tag".into());
    }
    if matches!(u.value, TagValue::Number(v) if !v.is_finite()) {
        return Err("non-finite value".into());
    }
    Ok(u)
}

/// All updates sharing one timestamp.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TagFrame {
    pub timestamp: i64,
    pub facility_id: String,
    pub values: IndexMap<String, TagValue>,
}

/// Groups consecutive updates with equal timestamps into frames and rejects
/// updates that move a tag back in time.
#[derive(Default)]
pub struct FrameAssembler {
    current: Option<TagFrame>,
    last_seen: HashMap<String, i64>,
}

impl FrameAssembler {
    /// Feeds one update; returns the previous frame when this update starts
    /// a new one.
    pub fn push(&mut self, u: TagUpdate) -> Result<Option<TagFrame>, String> {
        if let Some(&prev) = self.last_seen.get(&u.tag) {
            if u.timestamp < prev {
                return Err(format!("tag '{}' went back in time ({} < {prev})", u.tag, u.timestamp));
            }
        }
        self.last_seen.insert(u.tag.clone(), u.timestamp);
        let done = match &self.current {
            Some(f) if f.timestamp != u.timestamp => self.current.take(),
            _ => None,
        };
        let frame = self.current.get_or_insert_with(|| TagFrame {
            timestamp: u.timestamp,
            facility_id: u.facility_id.clone(),
            values: IndexMap::new(),
        });
        frame.values.insert(u.tag, u.value);
        Ok(done)
    }

    pub fn finish(&mut self) -> Option<TagFrame> {
        self.current.take()
    }
}

/// Replay speed as a multiple of real time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Rate {
    Times(f64),
    /// As fast as possible.
    Unlimited,
}

impl FromStr for Rate {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "inf" | "infinity" | "max" | "unlimited" => Ok(Rate::Unlimited),
            t => match t.parse::<f64>() {
                Ok(r) if r.is_infinite() && r > 0.0 => Ok(Rate::Unlimited),
                Ok(r) if r.is_finite() && r > 0.0 => Ok(Rate::Times(r)),
                _ => Err(format!("rate must be a positive number or 'inf', got '{s}'")),
            },
        }
    }
}

impl fmt::Display for Rate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rate::Times(r) => write!(f, "{r}"),
            Rate::Unlimited => f.write_str("inf"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct IngestStats {
    pub updates: usize,
    pub frames: usize,
    pub malformed: usize,
}

pub enum Source<'a> {
    Replay(&'a Path),
    /// Connects to a tag server and reads until it closes the connection.
    Socket(&'a str),
}

struct Pacer {
    rate: Rate,
    start: Instant,
    first_ts: Option<i64>,
}

impl Pacer {
    fn wait(&mut self, ts: i64) {
        let Rate::Times(r) = self.rate else { return };
        let t0 = *self.first_ts.get_or_insert(ts);
        let due = Duration::from_secs_f64(((ts - t0).max(0) as f64 / 1e3) / r);
        let now = self.start.elapsed();
        if due > now {
            std::thread::sleep(due - now);
        }
    }
}

/// Reads `source`, publishes every frame on [`FRAMES`] and closes the
/// topic at the end. Malformed lines are skipped with a warning.
pub fn ingest(source: Source<'_>, rate: Rate, bus: &Bus) -> Result<IngestStats, RuntimeError> {
    let stats = match source {
        Source::Replay(path) => {
            let file = File::open(path).map_err(|e| RuntimeError::Io(format!("{}: {e}", path.display())))?;
            ingest_lines(BufReader::new(file), parse_replay_line, rate, bus)
        }
        Source::Socket(addr) => {
            let addr = addr
                .to_socket_addrs()
                .map_err(|e| RuntimeError::Io(format!("{addr}: {e}")))?
                .next()
                .ok_or_else(|| RuntimeError::Io(format!("{addr}: no address")))?;
            let stream = TcpStream::connect(addr).map_err(|e| RuntimeError::Io(format!("{addr}: {e}")))?;
            ingest_lines(BufReader::new(stream), parse_json_line, Rate::Unlimited, bus)
        }
    };
    bus.close(FRAMES);
    stats
}

/// Core loop of [`ingest`]; leaves the topic open.
pub fn ingest_lines<R: BufRead>(
    reader: R,
    parse: fn(&str) -> Result<TagUpdate, String>,
    rate: Rate,
    bus: &Bus,
) -> Result<IngestStats, RuntimeError> {
    let mut stats = IngestStats::default();
    let mut asm = FrameAssembler::default();
    let mut pacer = Pacer {
        rate,
        start: Instant::now(),
        first_ts: None,
    };
    let mut emit = |frame: TagFrame, stats: &mut IngestStats| {
        pacer.wait(frame.timestamp);
        bus.publish(FRAMES, Payload::Frame(frame));
        stats.frames += 1;
    };
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| RuntimeError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        match parse(&line).and_then(|u| asm.push(u)) {
            Ok(done) => {
                stats.updates += 1;
                if let Some(f) = done {
                    emit(f, &mut stats);
                }
            }
            Err(e) => {
                stats.malformed += 1;
                log::warn!("line {}: skipped: {e}", i + 1);
            }
        }
    }
    if let Some(f) = asm.finish() {
        emit(f, &mut stats);
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn update(ts: i64, tag: &str, v: f64) -> TagUpdate {
        TagUpdate {
            tag: tag.into(),
            value: TagValue::Number(v),
            timestamp: ts,
            facility_id: "f".into(),
        }
    }

    #[test]
    fn replay_line_round_trips() {
        let u = update(5, "x", 0.1);
        assert_eq!(parse_replay_line(&u.to_replay_line()).unwrap(), u);
        let s = parse_replay_line("7\tf\tstate\tS01").unwrap();
        assert_eq!(s.value, TagValue::Text("S01".into()));
    }

    #[test]
    fn malformed_lines_are_rejected() {
        for bad in ["", "1\tf\tx", "a\tf\tx\t1", "1\t\tx\t1", "1\tf\tx\t", "1\tf\tx\t1\textra"] {
            assert!(parse_replay_line(bad).is_err(), "{bad:?}");
        }
        assert!(parse_json_line(r#"{"tag":"x","value":1.5,"timestamp":3,"facility_id":"f"}"#).is_ok());
        assert!(parse_json_line(r#"{"tag":"x","timestamp":3}"#).is_err());
    }

    #[test]
    fn assembler_groups_by_timestamp() {
        let mut a = FrameAssembler::default();
        assert!(a.push(update(1, "x", 1.0)).unwrap().is_none());
        assert!(a.push(update(1, "y", 2.0)).unwrap().is_none());
        let f = a.push(update(2, "x", 3.0)).unwrap().unwrap();
        assert_eq!(f.timestamp, 1);
        assert_eq!(f.values.len(), 2);
        assert!(a.push(update(1, "x", 0.0)).is_err());
        assert_eq!(a.finish().unwrap().values["x"], TagValue::Number(3.0));
    }

    #[test]
    fn rate_parsing() {
        assert_eq!("inf".parse::<Rate>().unwrap(), Rate::Unlimited);
        assert_eq!("2.5".parse::<Rate>().unwrap(), Rate::Times(2.5));
        assert!("0".parse::<Rate>().is_err());
        assert!("-1".parse::<Rate>().is_err());
    }
}
