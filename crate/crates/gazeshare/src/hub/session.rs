//! The hub's world state and its fixed tick order.

use std::collections::BTreeMap;

use gazeshare_core::attention::{AttentionGrid, Cell, MappedGazeEvent};
use gazeshare_core::geometry::{distinct_known_markers, estimate_homography, map_gaze_to_table, MARKER_QUORUM};
use gazeshare_core::objects::{ObjectRegistry, RawDetection};
use gazeshare_core::trails::{joint_attention_cells, TrailEntity};
use gazeshare_core::{Homography, ParticipantId, Point};
use serde::Serialize;
use thiserror::Error;

use crate::config::{layout_hash, ConfigError, HubConfig};
use crate::protocol::{
    Bye, DetectionMsg, Envelope, GazeSampleMsg, Grant, GridSnapshot, Hello, HintFlag, Message, Reject, RejectReason,
    Role, StateBroadcast, TrailSnapshot, PROTOCOL_VERSION,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HubError {
    #[error("participant {0} has not completed a handshake")]
    UnknownParticipant(ParticipantId),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HandshakeError {
    #[error("protocol version {0} unsupported")]
    VersionUnsupported(u32),
    #[error("participant {0} is already connected")]
    DuplicateParticipant(ParticipantId),
    #[error("gaze sources must name a participant id")]
    MissingParticipantId,
}

impl HandshakeError {
    pub fn to_reject(&self) -> Reject {
        let reason = match self {
            HandshakeError::VersionUnsupported(_) => RejectReason::VersionUnsupported,
            HandshakeError::DuplicateParticipant(_) => RejectReason::DuplicateParticipant,
            HandshakeError::MissingParticipantId => RejectReason::MissingParticipantId,
        };
        Reject { reason, detail: self.to_string() }
    }
}

/// Per-participant pipeline counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ParticipantStats {
    pub received: u64,
    pub mapped: u64,
    /// Mapped with a recent homography because the sample missed the quorum.
    pub stale_used: u64,
    /// Dropped: below quorum and no recent homography.
    pub discarded_quorum: u64,
    /// Quorum met but the corners could not be fitted.
    pub degenerate: u64,
    pub out_of_view: u64,
    pub at_infinity: u64,
}

#[derive(Debug, Clone)]
struct Pipeline {
    connected: bool,
    last_fit: Option<(Homography, f64)>,
    last_in_view_t: Option<f64>,
    stats: ParticipantStats,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiscardReason {
    BelowQuorum,
    AtInfinity,
}

/// What happened to one gaze sample.
#[derive(Debug, Clone, PartialEq)]
pub enum GazeOutcome {
    /// Queued for the next tick.
    Mapped { event: MappedGazeEvent, stale: bool },
    OutOfView { p_mm: Point },
    Discarded(DiscardReason),
}

/// How a received frame was handled. Used by replay and the server for bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub enum Received {
    Granted(Grant),
    Rejected(Reject),
    Gaze(GazeOutcome),
    GazeRejected(HubError),
    Detections(usize),
    Disconnected(Option<ParticipantId>),
    Ignored,
}

/// World state: one shared grid, a private grid and trail per participant,
/// and the object registry. Single writer; every method runs on the tick
/// thread.
#[derive(Debug, Clone)]
pub struct Session {
    config: HubConfig,
    layout_hash: String,
    participants: BTreeMap<ParticipantId, Pipeline>,
    shared: AttentionGrid,
    private: BTreeMap<ParticipantId, AttentionGrid>,
    trails: BTreeMap<ParticipantId, TrailEntity>,
    objects: ObjectRegistry,
    pending_gaze: Vec<MappedGazeEvent>,
    pending_detections: Vec<RawDetection>,
    tick: u64,
    last_tick_t: f64,
    grants: u64,
    last_tick_cells: Vec<(ParticipantId, Cell)>,
}

impl Session {
    pub fn new(config: HubConfig) -> Result<Self, ConfigError> {
        config.validate()?;
        let shared = AttentionGrid::new(config.grid_geometry(), config.attention, 0.0)?;
        let mut objects = ObjectRegistry::new(config.objects, 0.0);
        for o in &config.task.objects {
            objects.register(o.id.clone(), o.label.clone(), o.neighbors.clone());
        }
        Ok(Self {
            layout_hash: layout_hash(&config.layout),
            config,
            participants: BTreeMap::new(),
            shared,
            private: BTreeMap::new(),
            trails: BTreeMap::new(),
            objects,
            pending_gaze: Vec::new(),
            pending_detections: Vec::new(),
            tick: 0,
            last_tick_t: 0.0,
            grants: 0,
            last_tick_cells: Vec::new(),
        })
    }

    pub fn config(&self) -> &HubConfig {
        &self.config
    }

    pub fn layout_hash(&self) -> &str {
        &self.layout_hash
    }

    pub fn shared_grid(&self) -> &AttentionGrid {
        &self.shared
    }

    pub fn private_grid(&self, id: &ParticipantId) -> Option<&AttentionGrid> {
        self.private.get(id)
    }

    pub fn trail(&self, id: &ParticipantId) -> Option<&TrailEntity> {
        self.trails.get(id)
    }

    pub fn objects(&self) -> &ObjectRegistry {
        &self.objects
    }

    pub fn stats(&self, id: &ParticipantId) -> Option<ParticipantStats> {
        self.participants.get(id).map(|p| p.stats)
    }

    pub fn is_connected(&self, id: &ParticipantId) -> bool {
        self.participants.get(id).is_some_and(|p| p.connected)
    }

    pub fn active_participants(&self) -> Vec<ParticipantId> {
        self.participants.iter().filter(|(_, p)| p.connected).map(|(id, _)| id.clone()).collect()
    }

    pub fn tick_count(&self) -> u64 {
        self.tick
    }

    /// Cells that received gaze in the most recent tick, in application order.
    pub fn last_tick_cells(&self) -> &[(ParticipantId, Cell)] {
        &self.last_tick_cells
    }

    pub fn handshake(&mut self, version: u32, hello: &Hello) -> Result<Grant, HandshakeError> {
        if version != PROTOCOL_VERSION {
            return Err(HandshakeError::VersionUnsupported(version));
        }
        if hello.role == Role::GazeSource {
            let id = hello.participant_id.clone().ok_or(HandshakeError::MissingParticipantId)?;
            if self.is_connected(&id) {
                return Err(HandshakeError::DuplicateParticipant(id));
            }
            self.register(id);
        }
        self.grants += 1;
        Ok(Grant {
            session_token: format!("{}-{:06}", &self.layout_hash[..8], self.grants),
            tick_hz: self.config.tick_hz,
            layout_hash: self.layout_hash.clone(),
        })
    }

    fn register(&mut self, id: ParticipantId) {
        let pipeline = self.participants.entry(id.clone()).or_insert(Pipeline {
            connected: false,
            last_fit: None,
            last_in_view_t: None,
            stats: ParticipantStats::default(),
        });
        pipeline.connected = true;
        if !self.private.contains_key(&id) {
            let grid = AttentionGrid::new(self.config.grid_geometry(), self.config.attention, self.last_tick_t)
                .expect("validated geometry");
            self.private.insert(id.clone(), grid);
        }
        let center = Point::new(0.5 * self.config.layout.width_mm, 0.5 * self.config.layout.height_mm);
        let trails = self.config.trails;
        self.trails.entry(id.clone()).or_insert_with(|| TrailEntity::new(id, center, trails));
    }

    /// Marks a participant as gone. Its grid and trail are kept (and keep
    /// decaying) so the same id can reconnect.
    pub fn disconnect(&mut self, id: &ParticipantId) {
        if let Some(p) = self.participants.get_mut(id) {
            p.connected = false;
            p.last_fit = None;
            p.last_in_view_t = None;
        }
    }

    /// Maps one gaze sample and queues it for the next tick.
    pub fn handle_gaze(&mut self, receipt_t: f64, msg: &GazeSampleMsg) -> Result<GazeOutcome, HubError> {
        let layout = &self.config.layout;
        let stale_window = self.config.stale_window_s;
        let pipeline = self
            .participants
            .get_mut(&msg.participant_id)
            .filter(|p| p.connected)
            .ok_or_else(|| HubError::UnknownParticipant(msg.participant_id.clone()))?;
        pipeline.stats.received += 1;

        let fresh = if distinct_known_markers(&msg.markers, layout) >= MARKER_QUORUM {
            match estimate_homography(&msg.markers, layout) {
                Ok(fit) => Some(fit.homography),
                Err(_) => {
                    pipeline.stats.degenerate += 1;
                    None
                }
            }
        } else {
            None
        };
        let (h, stale) = match fresh {
            Some(h) => {
                pipeline.last_fit = Some((h, receipt_t));
                (h, false)
            }
            None => match pipeline.last_fit {
                Some((h, at)) if receipt_t - at < stale_window => {
                    pipeline.stats.stale_used += 1;
                    (h, true)
                }
                _ => {
                    pipeline.stats.discarded_quorum += 1;
                    return Ok(GazeOutcome::Discarded(DiscardReason::BelowQuorum));
                }
            },
        };

        let mapped = match map_gaze_to_table(&h, msg.gaze_px, layout) {
            Ok(m) => m,
            Err(_) => {
                pipeline.stats.at_infinity += 1;
                return Ok(GazeOutcome::Discarded(DiscardReason::AtInfinity));
            }
        };
        if mapped.out_of_view {
            pipeline.stats.out_of_view += 1;
            return Ok(GazeOutcome::OutOfView { p_mm: mapped.p_mm });
        }
        let dt_s = pipeline.last_in_view_t.map_or(0.0, |prev| (receipt_t - prev).max(0.0));
        pipeline.last_in_view_t = Some(receipt_t);
        pipeline.stats.mapped += 1;
        let event = MappedGazeEvent { participant_id: msg.participant_id.clone(), t: receipt_t, p_mm: mapped.p_mm, dt_s };
        self.pending_gaze.push(event.clone());
        Ok(GazeOutcome::Mapped { event, stale })
    }

    /// Queues a detector frame; applied at the start of the next tick.
    pub fn queue_detections(&mut self, receipt_t: f64, msg: &DetectionMsg) -> usize {
        for d in &msg.detections {
            self.pending_detections.push(RawDetection {
                object_id: d.object_id.clone(),
                t: receipt_t,
                obb: d.obb,
                confidence: d.confidence,
            });
        }
        msg.detections.len()
    }

    /// Dispatches a frame received at hub time `receipt_t`.
    pub fn receive(&mut self, receipt_t: f64, env: &Envelope) -> Received {
        match &env.body {
            Message::Hello(h) => match self.handshake(env.v, h) {
                Ok(g) => Received::Granted(g),
                Err(e) => Received::Rejected(e.to_reject()),
            },
            Message::Gaze(g) => match self.handle_gaze(receipt_t, g) {
                Ok(o) => Received::Gaze(o),
                Err(e) => Received::GazeRejected(e),
            },
            Message::Detection(d) => Received::Detections(self.queue_detections(receipt_t, d)),
            Message::Bye(Bye { participant_id }) => {
                if let Some(id) = participant_id {
                    self.disconnect(id);
                }
                Received::Disconnected(participant_id.clone())
            }
            _ => Received::Ignored,
        }
    }

    /// Advances the world to `now` and returns the broadcast for this tick.
    ///
    /// Order: queued detections, decay of every grid and object dwell,
    /// queued gaze (oldest first), trail retarget and advance, hints and
    /// highlights, broadcast.
    pub fn tick(&mut self, now: f64) -> StateBroadcast {
        let now = now.max(self.last_tick_t);
        let modes = self.config.modes;

        for d in self.pending_detections.drain(..) {
            self.objects.ingest_detection(d);
        }

        self.shared.decay(now);
        for g in self.private.values_mut() {
            g.decay(now);
        }
        self.objects.decay(now);

        let mut events = std::mem::take(&mut self.pending_gaze);
        events.sort_by(|a, b| a.t.total_cmp(&b.t));
        self.last_tick_cells.clear();
        for e in &events {
            if let Some(cell) = self.shared.ingest(e) {
                self.last_tick_cells.push((e.participant_id.clone(), cell));
            }
            if let Some(g) = self.private.get_mut(&e.participant_id) {
                g.ingest(e);
            }
            if modes.objects {
                self.objects.update_attention(e);
            }
        }
        events.clear();
        self.pending_gaze = events;

        let dt = self.config.tick_interval_s();
        for (id, trail) in self.trails.iter_mut() {
            if !self.participants.get(id).is_some_and(|p| p.connected) {
                continue;
            }
            if let Some(grid) = self.private.get(id) {
                trail.retarget(grid);
            }
            trail.advance(dt);
        }

        self.objects.update_hints();
        self.tick += 1;
        self.last_tick_t = now;
        self.snapshot(now)
    }

    fn snapshot(&self, now: f64) -> StateBroadcast {
        let modes = self.config.modes;
        let grid = modes.heatmap.then(|| {
            let p = self.shared.params();
            GridSnapshot {
                rows: self.shared.geometry().rows,
                cols: self.shared.geometry().cols,
                reveal_threshold_s: p.reveal_threshold_s,
                dwell_cap_s: p.dwell_cap_s,
                intensity: self.shared.colorize(),
            }
        });
        let active: Vec<&TrailEntity> = if modes.trails {
            self.trails.iter().filter(|(id, _)| self.is_connected(id)).map(|(_, t)| t).collect()
        } else {
            Vec::new()
        };
        let keep = self.config.broadcast_history;
        let trails = active
            .iter()
            .map(|t| {
                let skip = t.path_history().len().saturating_sub(keep);
                TrailSnapshot {
                    participant_id: t.participant_id.clone(),
                    pos_mm: t.pos_mm,
                    heading_rad: t.heading_rad,
                    target_cell: t.target_cell,
                    history: t.path_history().skip(skip).collect(),
                }
            })
            .collect();
        let joint_attention = joint_attention_cells(active.iter().copied(), self.shared.geometry());
        let (highlights, hints) = if modes.objects {
            let hints = self
                .objects
                .iter()
                .filter(|o| !o.hint_neighbors.is_empty())
                .map(|o| HintFlag { object_id: o.object_id.clone(), active: o.hint_active, neighbors: o.hint_neighbors.clone() })
                .collect();
            (self.objects.highlight_states(), hints)
        } else {
            (Vec::new(), Vec::new())
        };
        StateBroadcast {
            tick: self.tick,
            server_t_s: now,
            modes,
            grid,
            trails,
            joint_attention,
            highlights,
            hints,
            participants: self.active_participants(),
        }
    }
}
