//! Newline-delimited JSON wire protocol.
//!
//! Every frame is one JSON object on one line:
//!
//! ```text
//! {"v":1,"type":"gaze","seq":12,"t_mono_s":3.25,"payload":{...}}
//! ```
//!
//! The same frames travel over the plain TCP telemetry port and, one frame
//! per text message, over the WebSocket port used by browsers. Unknown
//! message kinds decode to [`Decoded::Unknown`] so older hubs keep working
//! with newer clients; a frame from a different protocol version is fatal
//! for the connection.

use std::collections::BTreeMap;
use std::io::{self, BufRead};

use gazeshare_core::attention::Cell;
use gazeshare_core::objects::{HighlightState, OrientedBox};
use gazeshare_core::trails::JointAttention;
use gazeshare_core::{MarkerDetection, ObjectId, ParticipantId, Point};
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;
use thiserror::Error;

pub const PROTOCOL_VERSION: u32 = 1;
pub const TELEMETRY_PORT: u16 = 9470;
pub const RENDERER_PORT: u16 = 9471;
/// Longest accepted frame, newline excluded.
pub const MAX_LINE_BYTES: usize = 1 << 20;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("malformed line: {0}")]
    MalformedLine(String),
    #[error("protocol version {got} unsupported (hub speaks {supported})")]
    VersionUnsupported { got: u32, supported: u32 },
}

impl ProtocolError {
    /// Whether the connection must be closed.
    pub fn is_fatal(&self) -> bool {
        matches!(self, ProtocolError::VersionUnsupported { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    GazeSource,
    Detector,
    Renderer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hello {
    pub role: Role,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub participant_id: Option<ParticipantId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grant {
    pub session_token: String,
    pub tick_hz: u32,
    pub layout_hash: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    VersionUnsupported,
    DuplicateParticipant,
    MissingParticipantId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reject {
    pub reason: RejectReason,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GazeSampleMsg {
    pub participant_id: ParticipantId,
    pub gaze_px: Point,
    pub confidence: f64,
    #[serde(default)]
    pub markers: Vec<MarkerDetection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectDetection {
    pub object_id: ObjectId,
    pub obb: OrientedBox,
    pub confidence: f64,
}

/// All objects found in one detector frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionMsg {
    #[serde(default)]
    pub detections: Vec<ObjectDetection>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Heartbeat {}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Bye {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub participant_id: Option<ParticipantId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Modes {
    pub heatmap: bool,
    pub trails: bool,
    pub objects: bool,
}

impl Default for Modes {
    fn default() -> Self {
        Self { heatmap: true, trails: true, objects: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSnapshot {
    pub rows: usize,
    pub cols: usize,
    pub reveal_threshold_s: f64,
    pub dwell_cap_s: f64,
    /// Row-major, `rows * cols` values in `[0, 1]`.
    pub intensity: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrailSnapshot {
    pub participant_id: ParticipantId,
    pub pos_mm: Point,
    pub heading_rad: f64,
    pub target_cell: Option<Cell>,
    /// Oldest first.
    pub history: Vec<Point>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HintFlag {
    pub object_id: ObjectId,
    pub active: bool,
    pub neighbors: Vec<ObjectId>,
}

/// Everything a renderer needs to draw one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateBroadcast {
    pub tick: u64,
    pub server_t_s: f64,
    pub modes: Modes,
    pub grid: Option<GridSnapshot>,
    pub trails: Vec<TrailSnapshot>,
    pub joint_attention: Vec<JointAttention>,
    pub highlights: Vec<HighlightState>,
    pub hints: Vec<HintFlag>,
    pub participants: Vec<ParticipantId>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Hello(Hello),
    Grant(Grant),
    Reject(Reject),
    Gaze(GazeSampleMsg),
    Detection(DetectionMsg),
    Heartbeat(Heartbeat),
    Bye(Bye),
    State(Box<StateBroadcast>),
}

impl Message {
    pub fn kind(&self) -> &'static str {
        match self {
            Message::Hello(_) => "hello",
            Message::Grant(_) => "grant",
            Message::Reject(_) => "reject",
            Message::Gaze(_) => "gaze",
            Message::Detection(_) => "detection",
            Message::Heartbeat(_) => "heartbeat",
            Message::Bye(_) => "bye",
            Message::State(_) => "state",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub v: u32,
    pub seq: u64,
    pub t_mono_s: f64,
    pub body: Message,
}

impl Envelope {
    pub fn new(seq: u64, t_mono_s: f64, body: Message) -> Self {
        Self { v: PROTOCOL_VERSION, seq, t_mono_s, body }
    }
}

#[derive(Serialize)]
#[serde(untagged)]
enum PayloadRef<'a> {
    Hello(&'a Hello),
    Grant(&'a Grant),
    Reject(&'a Reject),
    Gaze(&'a GazeSampleMsg),
    Detection(&'a DetectionMsg),
    Heartbeat(&'a Heartbeat),
    Bye(&'a Bye),
    State(&'a StateBroadcast),
}

#[derive(Serialize)]
struct WireOut<'a> {
    v: u32,
    #[serde(rename = "type")]
    kind: &'a str,
    seq: u64,
    t_mono_s: f64,
    payload: PayloadRef<'a>,
}

#[derive(Deserialize)]
struct WireIn<'a> {
    v: u32,
    #[serde(rename = "type")]
    kind: String,
    seq: u64,
    t_mono_s: f64,
    #[serde(borrow)]
    payload: &'a RawValue,
}

// Used to read the version before trusting the rest of the frame.
#[derive(Deserialize)]
struct VersionProbe {
    v: u32,
}

/// Encodes one frame, newline included.
pub fn encode(env: &Envelope) -> String {
    let payload = match &env.body {
        Message::Hello(m) => PayloadRef::Hello(m),
        Message::Grant(m) => PayloadRef::Grant(m),
        Message::Reject(m) => PayloadRef::Reject(m),
        Message::Gaze(m) => PayloadRef::Gaze(m),
        Message::Detection(m) => PayloadRef::Detection(m),
        Message::Heartbeat(m) => PayloadRef::Heartbeat(m),
        Message::Bye(m) => PayloadRef::Bye(m),
        Message::State(m) => PayloadRef::State(m),
    };
    let wire = WireOut { v: env.v, kind: env.body.kind(), seq: env.seq, t_mono_s: env.t_mono_s, payload };
    // Only non-finite floats can fail, and they serialize as null rather than erroring.
    let mut line = serde_json::to_string(&wire).expect("protocol types always serialize");
    line.push('\n');
    line
}

#[derive(Debug, Clone, PartialEq)]
pub enum Decoded {
    Message(Envelope),
    /// A well-formed frame of a kind this hub does not know; skip it.
    Unknown { kind: String, seq: u64 },
}

fn malformed(e: impl std::fmt::Display) -> ProtocolError {
    ProtocolError::MalformedLine(e.to_string())
}

fn payload<'a, T: Deserialize<'a>>(raw: &'a RawValue) -> Result<T, ProtocolError> {
    serde_json::from_str(raw.get()).map_err(malformed)
}

/// Decodes one frame. A trailing `\n` or `\r\n` is ignored.
pub fn decode(line: &[u8]) -> Result<Decoded, ProtocolError> {
    let line = line.strip_suffix(b"\n").unwrap_or(line);
    let line = line.strip_suffix(b"\r").unwrap_or(line);
    let text = std::str::from_utf8(line).map_err(malformed)?;
    if let Ok(VersionProbe { v }) = serde_json::from_str::<VersionProbe>(text) {
        if v != PROTOCOL_VERSION {
            return Err(ProtocolError::VersionUnsupported { got: v, supported: PROTOCOL_VERSION });
        }
    }
    let wire: WireIn<'_> = serde_json::from_str(text).map_err(malformed)?;
    let body = match wire.kind.as_str() {
        "hello" => Message::Hello(payload(wire.payload)?),
        "grant" => Message::Grant(payload(wire.payload)?),
        "reject" => Message::Reject(payload(wire.payload)?),
        "gaze" => Message::Gaze(payload(wire.payload)?),
        "detection" => Message::Detection(payload(wire.payload)?),
        "heartbeat" => Message::Heartbeat(payload(wire.payload)?),
        "bye" => Message::Bye(payload(wire.payload)?),
        "state" => Message::State(Box::new(payload(wire.payload)?)),
        _ => return Ok(Decoded::Unknown { kind: wire.kind, seq: wire.seq }),
    };
    Ok(Decoded::Message(Envelope { v: wire.v, seq: wire.seq, t_mono_s: wire.t_mono_s, body }))
}

/// Per-stream decode counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct LineStats {
    pub decoded: u64,
    pub unknown: u64,
    pub malformed: u64,
    pub blank: u64,
}

/// Sequence-number bookkeeping for one sender. Gaps and regressions are
/// counted; messages are never reordered.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SeqTracker {
    last: Option<u64>,
    pub gaps: u64,
    pub missing: u64,
    pub regressions: u64,
}

impl SeqTracker {
    pub fn observe(&mut self, seq: u64) {
        if let Some(last) = self.last {
            if seq > last + 1 {
                self.gaps += 1;
                self.missing += seq - last - 1;
            } else if seq <= last {
                self.regressions += 1;
            }
        }
        self.last = Some(seq);
    }
}

/// Per-sender sequence tracking keyed by an arbitrary sender name.
#[derive(Debug, Clone, Default)]
pub struct SeqBook {
    senders: BTreeMap<String, SeqTracker>,
}

impl SeqBook {
    pub fn observe(&mut self, sender: &str, seq: u64) {
        self.senders.entry(sender.to_owned()).or_default().observe(seq);
    }

    pub fn get(&self, sender: &str) -> Option<&SeqTracker> {
        self.senders.get(sender)
    }

    pub fn total_gaps(&self) -> u64 {
        self.senders.values().map(|s| s.gaps).sum()
    }
}

/// Reads frames from a byte stream, restarting at the next newline after
/// anything undecodable.
pub struct FrameReader<R> {
    inner: R,
    buf: Vec<u8>,
    stats: LineStats,
}

impl<R: BufRead> FrameReader<R> {
    pub fn new(inner: R) -> Self {
        Self { inner, buf: Vec::with_capacity(512), stats: LineStats::default() }
    }

    pub fn stats(&self) -> LineStats {
        self.stats
    }

    /// Next known message. Unknown kinds, blank lines and malformed lines are
    /// counted and skipped; a version mismatch is returned as an error.
    pub fn next_message(&mut self) -> io::Result<Option<Result<Envelope, ProtocolError>>> {
        loop {
            self.buf.clear();
            let n = self.inner.read_until(b'\n', &mut self.buf)?;
            if n == 0 {
                return Ok(None);
            }
            if self.buf.iter().all(|b| b.is_ascii_whitespace()) {
                self.stats.blank += 1;
                continue;
            }
            if self.buf.len() > MAX_LINE_BYTES {
                self.stats.malformed += 1;
                continue;
            }
            match decode(&self.buf) {
                Ok(Decoded::Message(env)) => {
                    self.stats.decoded += 1;
                    return Ok(Some(Ok(env)));
                }
                Ok(Decoded::Unknown { .. }) => self.stats.unknown += 1,
                Err(e @ ProtocolError::VersionUnsupported { .. }) => return Ok(Some(Err(e))),
                Err(ProtocolError::MalformedLine(_)) => self.stats.malformed += 1,
            }
        }
    }
}

impl<R: BufRead> Iterator for FrameReader<R> {
    type Item = Result<Envelope, ProtocolError>;

    /// I/O errors end the iteration.
    fn next(&mut self) -> Option<Self::Item> {
        self.next_message().ok().flatten()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaze_msg(n_markers: u32) -> GazeSampleMsg {
        GazeSampleMsg {
            participant_id: "p1".into(),
            gaze_px: Point::new(512.25, 383.125),
            confidence: 0.97,
            markers: (0..n_markers)
                .map(|id| MarkerDetection {
                    marker_id: id,
                    corners_px: [
                        Point::new(10.0 * f64::from(id), 1.0),
                        Point::new(10.0 * f64::from(id) + 8.5, 1.0),
                        Point::new(10.0 * f64::from(id) + 8.5, 9.5),
                        Point::new(10.0 * f64::from(id), 9.5),
                    ],
                })
                .collect(),
        }
    }

    #[test]
    fn gaze_round_trip_with_six_markers() {
        let env = Envelope::new(7, 1.0 / 3.0, Message::Gaze(gaze_msg(6)));
        let line = encode(&env);
        assert!(line.ends_with('\n'));
        assert_eq!(line.matches('\n').count(), 1);
        assert_eq!(decode(line.as_bytes()).unwrap(), Decoded::Message(env));
    }

    #[test]
    fn byte_exact_heartbeat() {
        let env = Envelope::new(3, 12.5, Message::Heartbeat(Heartbeat {}));
        assert_eq!(encode(&env), "{\"v\":1,\"type\":\"heartbeat\",\"seq\":3,\"t_mono_s\":12.5,\"payload\":{}}\n");
    }

    #[test]
    fn full_precision_numbers() {
        let t = 1234.567_890_123_456_7_f64;
        let env = Envelope::new(1, t, Message::Heartbeat(Heartbeat {}));
        let Decoded::Message(back) = decode(encode(&env).as_bytes()).unwrap() else { panic!() };
        assert_eq!(back.t_mono_s.to_bits(), t.to_bits());
        assert!(encode(&env).contains("1234.5678901234567"));
    }

    #[test]
    fn unknown_kind_is_skipped_and_counted() {
        let input = "{\"v\":1,\"type\":\"xyz\",\"seq\":1,\"t_mono_s\":0.0,\"payload\":{\"a\":1}}\n";
        assert_eq!(decode(input.as_bytes()).unwrap(), Decoded::Unknown { kind: "xyz".into(), seq: 1 });
        let hb = encode(&Envelope::new(2, 0.5, Message::Heartbeat(Heartbeat {})));
        let stream = format!("{input}{hb}");
        let mut r = FrameReader::new(stream.as_bytes());
        assert!(matches!(r.next(), Some(Ok(Envelope { seq: 2, .. }))));
        assert!(r.next().is_none());
        assert_eq!(r.stats().unknown, 1);
        assert_eq!(r.stats().decoded, 1);
    }

    #[test]
    fn truncated_line_is_malformed_and_stream_recovers() {
        let full = encode(&Envelope::new(1, 0.0, Message::Gaze(gaze_msg(3))));
        let truncated = &full[..full.len() / 2];
        assert!(matches!(decode(truncated.as_bytes()), Err(ProtocolError::MalformedLine(_))));
        let next = encode(&Envelope::new(2, 0.1, Message::Heartbeat(Heartbeat {})));
        let stream = format!("{truncated}\n{next}");
        let got: Vec<_> = FrameReader::new(stream.as_bytes()).collect();
        assert_eq!(got.len(), 1);
        assert!(matches!(&got[0], Ok(Envelope { seq: 2, .. })));
    }

    #[test]
    fn other_version_is_fatal() {
        let line = "{\"v\":2,\"type\":\"hello\",\"seq\":0,\"t_mono_s\":0.0,\"payload\":{\"role\":\"renderer\"}}";
        let err = decode(line.as_bytes()).unwrap_err();
        assert_eq!(err, ProtocolError::VersionUnsupported { got: 2, supported: 1 });
        assert!(err.is_fatal());
        assert!(!ProtocolError::MalformedLine(String::new()).is_fatal());
    }

    #[test]
    fn bad_payload_is_malformed() {
        let line = "{\"v\":1,\"type\":\"gaze\",\"seq\":0,\"t_mono_s\":0.0,\"payload\":{\"participant_id\":3}}";
        assert!(matches!(decode(line.as_bytes()), Err(ProtocolError::MalformedLine(_))));
        assert!(matches!(decode(b"\xff\xfe"), Err(ProtocolError::MalformedLine(_))));
        assert!(matches!(decode(b"[1,2]"), Err(ProtocolError::MalformedLine(_))));
    }

    #[test]
    fn crlf_and_blank_lines() {
        let hb = encode(&Envelope::new(1, 0.0, Message::Heartbeat(Heartbeat {})));
        let stream = format!("\n   \n{}\r\n", hb.trim_end());
        let mut r = FrameReader::new(stream.as_bytes());
        assert!(matches!(r.next(), Some(Ok(_))));
        assert_eq!(r.stats().blank, 2);
    }

    #[test]
    fn seq_gaps_are_counted_not_reordered() {
        let mut s = SeqTracker::default();
        for seq in [1, 2, 5, 6, 6, 9] {
            s.observe(seq);
        }
        assert_eq!(s.gaps, 2);
        assert_eq!(s.missing, 4);
        assert_eq!(s.regressions, 1);
    }
}
