//! Session recordings and deterministic replay.
//!
//! A recording is the raw inbound message log with the hub receipt time
//! prepended, one entry per line:
//!
//! ```text
//! 0.016666667\t{"v":1,"type":"gaze",...}
//! 0.033333333\t#tick
//! ```
//!
//! Times are printed with Rust's shortest round-trip float formatting so the
//! log reproduces them bit-exactly. `#tick` lines mark when the live hub
//! ticked; logs without them are replayed on a fixed tick grid.

use std::io::{self, BufRead, Write};
use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use super::session::{Received, Session};
use crate::config::{ConfigError, HubConfig};
use crate::protocol::{decode, encode, Decoded, Envelope, LineStats, Message, ProtocolError, StateBroadcast};

pub const TICK_MARKER: &str = "#tick";

#[derive(Debug, Clone, PartialEq)]
pub enum LogEntry {
    Line { receipt_t: f64, line: String },
    Tick { t: f64 },
}

impl LogEntry {
    pub fn time(&self) -> f64 {
        match self {
            LogEntry::Line { receipt_t, .. } => *receipt_t,
            LogEntry::Tick { t } => *t,
        }
    }

    pub fn message(receipt_t: f64, env: &Envelope) -> Self {
        let mut line = encode(env);
        line.pop();
        LogEntry::Line { receipt_t, line }
    }
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub fn format_entry(entry: &LogEntry) -> String {
    match entry {
        LogEntry::Line { receipt_t, line } => format!("{receipt_t}\t{}\n", line.trim_end_matches(['\r', '\n'])),
        LogEntry::Tick { t } => format!("{t}\t{TICK_MARKER}\n"),
    }
}

pub fn write_log<W: Write>(mut w: W, entries: &[LogEntry]) -> io::Result<()> {
    for e in entries {
        w.write_all(format_entry(e).as_bytes())?;
    }
    w.flush()
}

pub fn parse_entry(text: &str, line_no: usize) -> Result<LogEntry, LogError> {
    let text = text.trim_end_matches(['\r', '\n']);
    let (t, rest) = text
        .split_once('\t')
        .ok_or_else(|| LogError::Parse { line: line_no, reason: "missing tab separator".into() })?;
    let t: f64 = t
        .parse()
        .map_err(|_| LogError::Parse { line: line_no, reason: format!("bad timestamp {t:?}") })?;
    if !t.is_finite() {
        return Err(LogError::Parse { line: line_no, reason: "non-finite timestamp".into() });
    }
    if rest == TICK_MARKER {
        Ok(LogEntry::Tick { t })
    } else {
        Ok(LogEntry::Line { receipt_t: t, line: rest.to_owned() })
    }
}

pub fn read_log<R: BufRead>(r: R) -> Result<Vec<LogEntry>, LogError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_entry(&line, i + 1)?);
    }
    Ok(out)
}

/// Appends entries to a log file as the hub handles them.
pub struct Recorder<W: Write> {
    out: W,
}

impl<W: Write> Recorder<W> {
    pub fn new(out: W) -> Self {
        Self { out }
    }

    pub fn line(&mut self, receipt_t: f64, raw: &str) -> io::Result<()> {
        self.out.write_all(format_entry(&LogEntry::Line { receipt_t, line: raw.to_owned() }).as_bytes())
    }

    pub fn tick(&mut self, t: f64) -> io::Result<()> {
        self.out.write_all(format_entry(&LogEntry::Tick { t }).as_bytes())
    }

    pub fn flush(&mut self) -> io::Result<()> {
        self.out.flush()
    }
}

/// Tick lateness under a single-processor schedule, using measured work.
///
/// Each message is processed at `max(receipt, busy)`; each tick starts at
/// `max(scheduled, busy)`. A tick is late by the time between its scheduled
/// instant and the end of its work.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct TimingReport {
    pub tick_interval_s: f64,
    pub ticks: u64,
    pub messages: u64,
    pub max_lateness_s: f64,
    pub mean_tick_work_s: f64,
    pub max_tick_work_s: f64,
    pub max_message_work_s: f64,
    /// Ticks whose lateness exceeded 10% of the interval.
    pub deadline_misses: u64,
}

impl TimingReport {
    pub fn max_lateness_fraction(&self) -> f64 {
        self.max_lateness_s / self.tick_interval_s
    }

    /// Runs the single-processor schedule over measured work items, in the
    /// order they were processed.
    pub fn from_work(tick_interval_s: f64, items: &[WorkItem]) -> Self {
        let mut r = TimingReport { tick_interval_s, ..TimingReport::default() };
        let mut busy_until = 0.0f64;
        let mut total_tick_work = 0.0;
        for item in items {
            let done = item.t.max(busy_until) + item.work_s;
            busy_until = done;
            if item.tick {
                let lateness = done - item.t;
                r.ticks += 1;
                total_tick_work += item.work_s;
                r.max_lateness_s = r.max_lateness_s.max(lateness);
                r.max_tick_work_s = r.max_tick_work_s.max(item.work_s);
                if lateness > 0.1 * tick_interval_s {
                    r.deadline_misses += 1;
                }
            } else {
                r.messages += 1;
                r.max_message_work_s = r.max_message_work_s.max(item.work_s);
            }
        }
        if r.ticks > 0 {
            r.mean_tick_work_s = total_tick_work / r.ticks as f64;
        }
        r
    }
}

/// One tick (due at `t`) or one message (received at `t`) and the wall time
/// it took.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorkItem {
    pub t: f64,
    pub tick: bool,
    pub work_s: f64,
}

#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct ReplayCounts {
    pub granted: u64,
    pub rejected: u64,
    pub gaze_mapped: u64,
    pub gaze_discarded: u64,
    pub gaze_unknown_participant: u64,
    pub detections: u64,
    pub version_errors: u64,
    pub lines: LineStats,
}

pub struct ReplayOutcome {
    pub session: Session,
    pub counts: ReplayCounts,
    pub timing: TimingReport,
    pub work: Vec<WorkItem>,
}

/// Replays a recording through a fresh session, calling `on_broadcast` with
/// every broadcast and its encoded frame.
pub fn replay<F>(config: HubConfig, entries: &[LogEntry], mut on_broadcast: F) -> Result<ReplayOutcome, ConfigError>
where
    F: FnMut(&StateBroadcast, &str),
{
    let mut session = Session::new(config)?;
    let interval = session.config().tick_interval_s();
    let hz = f64::from(session.config().tick_hz);
    let tick_time = |k: u64| k as f64 / hz;
    let has_ticks = entries.iter().any(|e| matches!(e, LogEntry::Tick { .. }));
    let mut counts = ReplayCounts::default();
    let mut work = Vec::with_capacity(entries.len());
    let mut next_tick_index: u64 = 1;

    let mut do_tick = |session: &mut Session, t: f64, work: &mut Vec<WorkItem>| {
        let start = Instant::now();
        let b = session.tick(t);
        let frame = encode(&Envelope::new(b.tick, t, Message::State(Box::new(b.clone()))));
        on_broadcast(&b, &frame);
        work.push(WorkItem { t, tick: true, work_s: start.elapsed().as_secs_f64() });
    };

    for entry in entries {
        match entry {
            LogEntry::Tick { t } => {
                do_tick(&mut session, *t, &mut work);
            }
            LogEntry::Line { receipt_t, line } => {
                if !has_ticks {
                    while tick_time(next_tick_index) < *receipt_t {
                        let t = tick_time(next_tick_index);
                        do_tick(&mut session, t, &mut work);
                        next_tick_index += 1;
                    }
                }
                let start = Instant::now();
                match decode(line.as_bytes()) {
                    Ok(Decoded::Message(env)) => {
                        counts.lines.decoded += 1;
                        match session.receive(*receipt_t, &env) {
                            Received::Granted(_) => counts.granted += 1,
                            Received::Rejected(_) => counts.rejected += 1,
                            Received::Gaze(super::session::GazeOutcome::Mapped { .. }) => counts.gaze_mapped += 1,
                            Received::Gaze(_) => counts.gaze_discarded += 1,
                            Received::GazeRejected(_) => counts.gaze_unknown_participant += 1,
                            Received::Detections(n) => counts.detections += n as u64,
                            Received::Disconnected(_) | Received::Ignored => {}
                        }
                    }
                    Ok(Decoded::Unknown { .. }) => counts.lines.unknown += 1,
                    Err(ProtocolError::MalformedLine(_)) => counts.lines.malformed += 1,
                    Err(ProtocolError::VersionUnsupported { .. }) => counts.version_errors += 1,
                }
                work.push(WorkItem { t: *receipt_t, tick: false, work_s: start.elapsed().as_secs_f64() });
            }
        }
    }
    if !has_ticks {
        // One closing tick so the last messages are applied.
        if let Some(last) = entries.last() {
            while tick_time(next_tick_index - 1) < last.time() {
                let t = tick_time(next_tick_index);
                do_tick(&mut session, t, &mut work);
                next_tick_index += 1;
            }
        }
    }
    let timing = TimingReport::from_work(interval, &work);
    Ok(ReplayOutcome { session, counts, timing, work })
}
