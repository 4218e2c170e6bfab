//! Newline-delimited JSON frames.
//!
//! Inbound data: `{"stream": s, "time": µs, "spikes": [ids]}`, or `"value": x`
//! instead of `spikes` for encoder streams, with an optional `"label"` that
//! turns the message into a training example. Inbound control:
//! `{"control": "status" | "snapshot" | "restore" | "shutdown", "path": p}`.
//!
//! Outbound: `{"node": n, "time": µs, "result": ...}` per emitted node, an
//! `{"ack": ...}` when a message emitted nothing, and
//! `{"error": code, "detail": text}` on failure.

use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Longest accepted frame in bytes, newline excluded.
pub const MAX_FRAME: usize = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ErrorCode {
    Parse,
    Schema,
    TooLong,
    UnknownStream,
    SpikeRange,
    SpikeDuplicate,
    Empty,
    Label,
    Time,
    Control,
    Snapshot,
    Restore,
    ShuttingDown,
    Internal,
}

impl ErrorCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCode::Parse => "E_PARSE",
            ErrorCode::Schema => "E_SCHEMA",
            ErrorCode::TooLong => "E_TOO_LONG",
            ErrorCode::UnknownStream => "E_UNKNOWN_STREAM",
            ErrorCode::SpikeRange => "E_SPIKE_RANGE",
            ErrorCode::SpikeDuplicate => "E_SPIKE_DUP",
            ErrorCode::Empty => "E_EMPTY",
            ErrorCode::Label => "E_LABEL",
            ErrorCode::Time => "E_TIME",
            ErrorCode::Control => "E_CONTROL",
            ErrorCode::Snapshot => "E_SNAPSHOT",
            ErrorCode::Restore => "E_RESTORE",
            ErrorCode::ShuttingDown => "E_SHUTDOWN",
            ErrorCode::Internal => "E_INTERNAL",
        }
    }
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{code}: {detail}")]
pub struct WireError {
    pub code: ErrorCode,
    pub detail: String,
}

impl WireError {
    pub fn new(code: ErrorCode, detail: impl Into<String>) -> Self {
        Self {
            code,
            detail: detail.into(),
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::json!({"error": self.code.as_str(), "detail": self.detail}).to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataFrame {
    pub stream: String,
    pub time: u64,
    #[serde(default)]
    pub spikes: Option<Vec<u64>>,
    #[serde(default)]
    pub value: Option<f64>,
    #[serde(default)]
    pub label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Control {
    Status,
    Snapshot(PathBuf),
    Restore(PathBuf),
    Shutdown,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Inbound {
    Data(DataFrame),
    Control(Control),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawControl {
    control: String,
    #[serde(default)]
    path: Option<PathBuf>,
}

pub fn parse_frame(line: &str) -> Result<Inbound, WireError> {
    if line.len() > MAX_FRAME {
        return Err(WireError::new(
            ErrorCode::TooLong,
            format!("frame of {} bytes exceeds {MAX_FRAME}", line.len()),
        ));
    }
    let value: Value = serde_json::from_str(line)
        .map_err(|e| WireError::new(ErrorCode::Parse, format!("invalid JSON: {e}")))?;
    let Value::Object(map) = &value else {
        return Err(WireError::new(ErrorCode::Schema, "frame must be a JSON object"));
    };
    if map.contains_key("control") {
        let raw: RawControl = serde_json::from_value(value)
            .map_err(|e| WireError::new(ErrorCode::Schema, e.to_string()))?;
        let need_path = |path: Option<PathBuf>| {
            path.ok_or_else(|| {
                WireError::new(ErrorCode::Control, format!("`{}` needs a `path`", raw.control))
            })
        };
        let no_path = |path: &Option<PathBuf>| match path {
            Some(_) => Err(WireError::new(
                ErrorCode::Control,
                format!("`{}` takes no `path`", raw.control),
            )),
            None => Ok(()),
        };
        let cmd = match raw.control.as_str() {
            "status" => no_path(&raw.path).map(|_| Control::Status)?,
            "shutdown" => no_path(&raw.path).map(|_| Control::Shutdown)?,
            "snapshot" => Control::Snapshot(need_path(raw.path.clone())?),
            "restore" => Control::Restore(need_path(raw.path.clone())?),
            other => {
                return Err(WireError::new(
                    ErrorCode::Control,
                    format!("unknown control command `{other}`"),
                ))
            }
        };
        return Ok(Inbound::Control(cmd));
    }
    let frame: DataFrame = serde_json::from_value(value)
        .map_err(|e| WireError::new(ErrorCode::Schema, e.to_string()))?;
    match (&frame.spikes, &frame.value) {
        (Some(_), Some(_)) => Err(WireError::new(
            ErrorCode::Schema,
            "frame carries both `spikes` and `value`",
        )),
        (None, None) => Err(WireError::new(
            ErrorCode::Schema,
            "frame needs `spikes` or `value`",
        )),
        _ => Ok(Inbound::Data(frame)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelConfidence {
    pub label: String,
    /// Forward electrode voltage (V).
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NodeResult {
    Ranking(Vec<LabelConfidence>),
    Feature(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outbound {
    pub node: String,
    pub time: u64,
    pub result: NodeResult,
}

impl Outbound {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("outbound frames always serialise")
    }
}

pub fn ack_line(stream: &str, time: u64) -> String {
    serde_json::json!({"ack": {"stream": stream, "time": time}}).to_string()
}
