//! Calibration and accuracy evaluation, plus synthetic load for desk tests.

pub mod calibration;
pub mod simulator;

use std::io;

use gazeshare_core::{ParticipantId, TableLayout};
use thiserror::Error;

pub use calibration::{
    accuracy_report, evaluate_samples, filter_samples, map_retained, AccuracyReport, CalibrationSchedule, FilterCounts,
    FilterResult, MappedSample, PointAccuracy, ReceivedSample, Verdict,
};
pub use simulator::{
    generate_stream, CameraPose, ScanStep, Scanpath, SimulatedDetector, SimulatedObject, SyntheticParticipant, TimedSample,
};

use crate::hub::record::{LogEntry, LogError};
use crate::protocol::{decode, Decoded, Envelope, Hello, Message, Role};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid schedule: {0}")]
    InvalidSchedule(&'static str),
    #[error("invalid simulation setup: {0}")]
    InvalidParticipant(&'static str),
    #[error("scanpath: {0}")]
    Scanpath(String),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Seed for the `index`-th generator derived from one user seed.
pub fn derived_seed(seed: u64, index: u64) -> u64 {
    seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Everything one simulated connection sends: its hello, then timed frames.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceStream {
    pub hello: Envelope,
    pub frames: Vec<(f64, Envelope)>,
}

/// One stream per participant, then one for the detector if given. Each
/// generator gets its own seed derived from `seed`.
pub fn source_streams(
    participants: &[SyntheticParticipant],
    detector: Option<&SimulatedDetector>,
    layout: &TableLayout,
    duration_s: f64,
    seed: u64,
) -> Result<Vec<SourceStream>, EvalError> {
    let mut out = Vec::with_capacity(participants.len() + 1);
    for (i, p) in participants.iter().enumerate() {
        let hello = Hello { role: Role::GazeSource, participant_id: Some(p.id.clone()) };
        let frames = generate_stream(p, layout, 0.0, duration_s, derived_seed(seed, i as u64))?
            .into_iter()
            .enumerate()
            .map(|(k, s)| (s.t, Envelope::new(k as u64 + 1, s.t, Message::Gaze(s.msg))))
            .collect();
        out.push(SourceStream { hello: Envelope::new(0, 0.0, Message::Hello(hello)), frames });
    }
    if let Some(d) = detector {
        let hello = Hello { role: Role::Detector, participant_id: None };
        let frames = d
            .generate(0.0, duration_s, derived_seed(seed, participants.len() as u64))?
            .into_iter()
            .enumerate()
            .map(|(k, (t, msg))| (t, Envelope::new(k as u64 + 1, t, Message::Detection(msg))))
            .collect();
        out.push(SourceStream { hello: Envelope::new(0, 0.0, Message::Hello(hello)), frames });
    }
    Ok(out)
}

/// The recording a hub would make for these streams if every frame arrived
/// exactly on time: all hellos at `t = 0`, then frames in time order, ties
/// in stream order.
pub fn merge_streams(streams: &[SourceStream]) -> Vec<LogEntry> {
    let mut out: Vec<LogEntry> = streams.iter().map(|s| LogEntry::message(0.0, &s.hello)).collect();
    let mut timed: Vec<(f64, usize, &Envelope)> =
        streams.iter().enumerate().flat_map(|(i, s)| s.frames.iter().map(move |(t, e)| (*t, i, e))).collect();
    timed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    out.extend(timed.into_iter().map(|(t, _, e)| LogEntry::message(t, e)));
    out
}

pub fn session_log(
    participants: &[SyntheticParticipant],
    detector: Option<&SimulatedDetector>,
    layout: &TableLayout,
    duration_s: f64,
    seed: u64,
) -> Result<Vec<LogEntry>, EvalError> {
    Ok(merge_streams(&source_streams(participants, detector, layout, duration_s, seed)?))
}

/// Gaze samples of one participant (or the first gaze source seen) in a log.
pub fn samples_from_log(entries: &[LogEntry], participant: Option<&ParticipantId>) -> Vec<ReceivedSample> {
    let mut chosen = participant.cloned();
    let mut out = Vec::new();
    for e in entries {
        let LogEntry::Line { receipt_t, line } = e else { continue };
        let Ok(Decoded::Message(env)) = decode(line.as_bytes()) else { continue };
        if let Message::Gaze(msg) = env.body {
            let id = chosen.get_or_insert_with(|| msg.participant_id.clone());
            if &msg.participant_id == id {
                out.push(ReceivedSample { receipt_t: *receipt_t, msg });
            }
        }
    }
    out
}
