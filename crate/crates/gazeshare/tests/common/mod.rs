#![allow(dead_code)]

use std::collections::BTreeSet;

use gazeshare::protocol::*;
use gazeshare_core::{Cell, HighlightState, JointAttention, MarkerDetection, ObjectId, OrientedBox, ParticipantId, Point};
use gazeshare_core::objects::ViewerArc;
use rand::Rng;

/// Finite floats, biased toward values that are hard to print and re-read.
pub fn float<R: Rng>(rng: &mut R) -> f64 {
    match rng.random_range(0..8) {
        0 => 0.1 + 0.2,
        1 => rng.random::<f64>() * 1e-300,
        2 => f64::from(rng.random_range(-1000i32..1000)),
        3 => rng.random_range(-1.0..1.0) * 1.7e308,
        4 => -0.0,
        5 => 1.0 / 3.0,
        _ => rng.random_range(-5000.0..5000.0),
    }
}

pub fn point<R: Rng>(rng: &mut R) -> Point {
    Point::new(float(rng), float(rng))
}

pub fn text<R: Rng>(rng: &mut R) -> String {
    const ALPHABET: &[&str] = &["a", "b", "7", "_", "-", "ü", "\"", "\\", "\n", "\t", " ", "🦈", "/", "\u{0}"];
    let n = rng.random_range(0..10);
    (0..n).map(|_| ALPHABET[rng.random_range(0..ALPHABET.len())]).collect()
}

fn pid<R: Rng>(rng: &mut R) -> ParticipantId {
    ParticipantId::new(text(rng))
}

fn oid<R: Rng>(rng: &mut R) -> ObjectId {
    ObjectId::new(text(rng))
}

fn list<R: Rng, T>(rng: &mut R, max: usize, mut f: impl FnMut(&mut R) -> T) -> Vec<T> {
    let n = rng.random_range(0..=max);
    (0..n).map(|_| f(rng)).collect()
}

fn obb<R: Rng>(rng: &mut R) -> OrientedBox {
    OrientedBox::new(point(rng), (float(rng), float(rng)), float(rng))
}

fn cell<R: Rng>(rng: &mut R) -> Cell {
    Cell { row: rng.random_range(0..50), col: rng.random_range(0..50) }
}

fn state<R: Rng>(rng: &mut R) -> StateBroadcast {
    StateBroadcast {
        tick: rng.random(),
        server_t_s: float(rng),
        modes: Modes { heatmap: rng.random(), trails: rng.random(), objects: rng.random() },
        grid: rng.random_bool(0.7).then(|| {
            let (rows, cols) = (rng.random_range(0..5), rng.random_range(0..5));
            GridSnapshot {
                rows,
                cols,
                reveal_threshold_s: float(rng),
                dwell_cap_s: float(rng),
                intensity: (0..rows * cols).map(|_| float(rng)).collect(),
            }
        }),
        trails: list(rng, 3, |r| TrailSnapshot {
            participant_id: pid(r),
            pos_mm: point(r),
            heading_rad: float(r),
            target_cell: r.random_bool(0.5).then(|| cell(r)),
            history: list(r, 4, point),
        }),
        joint_attention: list(rng, 2, |r| JointAttention {
            cell: cell(r),
            participants: list(r, 3, pid).into_iter().collect::<BTreeSet<_>>(),
        }),
        highlights: list(rng, 2, |r| HighlightState {
            object_id: oid(r),
            center_mm: point(r),
            radius_mm: float(r),
            arcs: list(r, 3, |r| ViewerArc { participant_id: pid(r), fraction: float(r) }),
        }),
        hints: list(rng, 2, |r| HintFlag { object_id: oid(r), active: r.random(), neighbors: list(r, 3, oid) }),
        participants: list(rng, 4, pid),
    }
}

pub fn message<R: Rng>(rng: &mut R) -> Message {
    match rng.random_range(0..8) {
        0 => Message::Hello(Hello {
            role: [Role::GazeSource, Role::Detector, Role::Renderer][rng.random_range(0..3)],
            participant_id: rng.random_bool(0.5).then(|| pid(rng)),
        }),
        1 => Message::Grant(Grant { session_token: text(rng), tick_hz: rng.random(), layout_hash: text(rng) }),
        2 => Message::Reject(Reject {
            reason: [RejectReason::VersionUnsupported, RejectReason::DuplicateParticipant, RejectReason::MissingParticipantId]
                [rng.random_range(0..3)],
            detail: text(rng),
        }),
        3 => Message::Gaze(GazeSampleMsg {
            participant_id: pid(rng),
            gaze_px: point(rng),
            confidence: float(rng),
            markers: list(rng, 6, |r| MarkerDetection {
                marker_id: r.random(),
                corners_px: [point(r), point(r), point(r), point(r)],
            }),
        }),
        4 => Message::Detection(DetectionMsg {
            detections: list(rng, 3, |r| ObjectDetection { object_id: oid(r), obb: obb(r), confidence: float(r) }),
        }),
        5 => Message::Heartbeat(Heartbeat {}),
        6 => Message::Bye(Bye { participant_id: rng.random_bool(0.5).then(|| pid(rng)) }),
        _ => Message::State(Box::new(state(rng))),
    }
}

pub fn envelope<R: Rng>(rng: &mut R) -> Envelope {
    Envelope::new(rng.random(), float(rng), message(rng))
}

/// Float equality that treats 0.0 and -0.0 as different.
pub fn same_bits(a: &Envelope, b: &Envelope) -> bool {
    a == b && encode(a) == encode(b)
}

/// A damaged copy of `line` (newline excluded) that can never decode.
pub fn corrupt<R: Rng>(rng: &mut R, line: &str) -> Vec<u8> {
    let bytes = line.as_bytes();
    match rng.random_range(0..4) {
        // any strict prefix of an object is unbalanced
        0 => bytes[..rng.random_range(1..bytes.len())].to_vec(),
        1 => {
            let mut v = bytes.to_vec();
            v.insert(rng.random_range(0..=v.len()), 0xFF);
            v
        }
        2 => (0..rng.random_range(1..40)).map(|_| rng.random_range(b'!'..=b'~')).filter(|&b| b != b'{').collect(),
        _ => {
            let mut v = bytes.to_vec();
            v.truncate(v.len() - 1);
            v.extend_from_slice(b",}}");
            v
        }
    }
}
