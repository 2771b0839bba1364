//! Physical objects on the table.
//!
//! An external detector reports oriented boxes with a confidence. Each object
//! keeps its last 20 detections and presents the most confident one as its
//! pose, trading reaction time for stability. Gaze that lands in an object's
//! box accrues per-participant dwell, which feeds the circular highlight with
//! one arc per viewer and the neighbour hint.

use alloc::collections::{BTreeMap, VecDeque};
use alloc::string::String;
use alloc::vec::Vec;

use crate::attention::MappedGazeEvent;
use crate::geometry::Point;
use crate::ids::{ObjectId, ParticipantId};
use crate::math::{half_life_factor, hypot, sin_cos};

/// Detections retained per object for pose smoothing.
pub const SMOOTHING_WINDOW: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OrientedBox {
    pub center_mm: Point,
    pub half_extents_mm: (f64, f64),
    pub rotation_rad: f64,
}

impl OrientedBox {
    pub fn new(center_mm: Point, half_extents_mm: (f64, f64), rotation_rad: f64) -> Self {
        Self { center_mm, half_extents_mm, rotation_rad }
    }

    pub fn is_valid(&self) -> bool {
        let (hx, hy) = self.half_extents_mm;
        hx > 0.0 && hy > 0.0 && hx.is_finite() && hy.is_finite() && self.center_mm.is_finite() && self.rotation_rad.is_finite()
    }

    /// `p` expressed in the box frame (centre at origin, axes along the box).
    pub fn to_local(&self, p: Point) -> Point {
        let d = p - self.center_mm;
        let (s, c) = sin_cos(self.rotation_rad);
        Point::new(c * d.x + s * d.y, -s * d.x + c * d.y)
    }

    /// Closed containment test: the boundary counts as a hit.
    pub fn contains(&self, p: Point) -> bool {
        let l = self.to_local(p);
        l.x.abs() <= self.half_extents_mm.0 && l.y.abs() <= self.half_extents_mm.1
    }

    pub fn circumscribed_radius(&self) -> f64 {
        hypot(self.half_extents_mm.0, self.half_extents_mm.1)
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RawDetection {
    pub object_id: ObjectId,
    pub t: f64,
    pub obb: OrientedBox,
    pub confidence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ObjectParams {
    pub half_life_s: f64,
    /// Viewers whose dwell decays below this are forgotten.
    pub drop_threshold_s: f64,
    /// Minimum dwell for a viewer to get an arc.
    pub attend_threshold_s: f64,
    /// Dwell at which an arc is complete.
    pub dwell_cap_s: f64,
    pub hint_threshold_s: f64,
    pub highlight_margin_mm: f64,
    pub max_gap_s: f64,
}

impl Default for ObjectParams {
    fn default() -> Self {
        Self {
            half_life_s: 10.0,
            drop_threshold_s: 0.05,
            attend_threshold_s: 0.3,
            dwell_cap_s: 3.0,
            hint_threshold_s: 3.0,
            highlight_margin_mm: 8.0,
            max_gap_s: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewerDwell {
    pub dwell_s: f64,
    pub last_gaze_t: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackedObject {
    pub object_id: ObjectId,
    pub label: Option<String>,
    buffer: VecDeque<RawDetection>,
    smoothed_obb: Option<OrientedBox>,
    /// Arrival order of the latest detection; larger is drawn on top.
    z_order: u64,
    pub viewers: BTreeMap<ParticipantId, ViewerDwell>,
    pub hint_neighbors: Vec<ObjectId>,
    pub hint_active: bool,
}

impl TrackedObject {
    pub fn new(object_id: ObjectId) -> Self {
        Self {
            object_id,
            label: None,
            buffer: VecDeque::with_capacity(SMOOTHING_WINDOW),
            smoothed_obb: None,
            z_order: 0,
            viewers: BTreeMap::new(),
            hint_neighbors: Vec::new(),
            hint_active: false,
        }
    }

    pub fn smoothed_obb(&self) -> Option<&OrientedBox> {
        self.smoothed_obb.as_ref()
    }

    pub fn buffered(&self) -> impl ExactSizeIterator<Item = &RawDetection> {
        self.buffer.iter()
    }

    /// Pushes into the 20-detection ring and re-selects the most confident
    /// entry, preferring the most recent among equals.
    pub fn ingest_detection(&mut self, d: RawDetection) {
        if self.buffer.len() == SMOOTHING_WINDOW {
            self.buffer.pop_front();
        }
        self.buffer.push_back(d);
        let mut best: Option<&RawDetection> = None;
        for d in &self.buffer {
            if best.is_none_or(|b| d.confidence >= b.confidence) {
                best = Some(d);
            }
        }
        self.smoothed_obb = best.map(|d| d.obb);
    }

    pub fn max_dwell(&self) -> f64 {
        self.viewers.values().map(|v| v.dwell_s).fold(0.0, f64::max)
    }

    /// Hysteresis: on at `threshold`, off once every viewer is below half of it.
    pub fn hint_trigger(&mut self, threshold_s: f64) {
        let top = self.max_dwell();
        if top >= threshold_s {
            self.hint_active = true;
        } else if top < 0.5 * threshold_s {
            self.hint_active = false;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ViewerArc {
    pub participant_id: ParticipantId,
    /// Share of a full arc, in (0, 1].
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct HighlightState {
    pub object_id: ObjectId,
    pub center_mm: Point,
    pub radius_mm: f64,
    /// Sorted by participant id.
    pub arcs: Vec<ViewerArc>,
}

/// Every object on the table and who is looking at it.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectRegistry {
    objects: BTreeMap<ObjectId, TrackedObject>,
    params: ObjectParams,
    last_update: f64,
    arrivals: u64,
}

impl ObjectRegistry {
    pub fn new(params: ObjectParams, start_t: f64) -> Self {
        Self { objects: BTreeMap::new(), params, last_update: start_t, arrivals: 0 }
    }

    pub fn params(&self) -> &ObjectParams {
        &self.params
    }

    /// Declares an object with its task-defined neighbours ahead of detection.
    pub fn register(&mut self, id: ObjectId, label: Option<String>, neighbors: Vec<ObjectId>) {
        let obj = self.objects.entry(id.clone()).or_insert_with(|| TrackedObject::new(id));
        obj.label = label;
        obj.hint_neighbors = neighbors;
    }

    pub fn get(&self, id: &ObjectId) -> Option<&TrackedObject> {
        self.objects.get(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &TrackedObject> {
        self.objects.values()
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    /// Unknown ids create a new object without neighbours. Invalid boxes are ignored.
    pub fn ingest_detection(&mut self, d: RawDetection) -> bool {
        if !d.obb.is_valid() || !(0.0..=1.0).contains(&d.confidence) {
            return false;
        }
        self.arrivals += 1;
        let obj = self.objects.entry(d.object_id.clone()).or_insert_with(|| TrackedObject::new(d.object_id.clone()));
        obj.z_order = self.arrivals;
        obj.ingest_detection(d);
        true
    }

    /// Fades all viewer dwell to `now` and forgets viewers that have both
    /// faded below the drop threshold and stopped looking.
    pub fn decay(&mut self, now: f64) {
        let elapsed = now - self.last_update;
        if !(elapsed > 0.0) {
            return;
        }
        let f = half_life_factor(elapsed, self.params.half_life_s);
        let p = self.params;
        for obj in self.objects.values_mut() {
            obj.viewers.retain(|_, v| {
                v.dwell_s *= f;
                v.dwell_s >= p.drop_threshold_s || now - v.last_gaze_t <= p.max_gap_s
            });
        }
        self.last_update = now;
    }

    /// Topmost object whose smoothed box contains `p`.
    pub fn hit(&self, p: Point) -> Option<&TrackedObject> {
        self.objects
            .values()
            .filter(|o| o.smoothed_obb.is_some_and(|b| b.contains(p)))
            .max_by_key(|o| o.z_order)
    }

    /// Credits the gaze to the topmost object under it. Returns that object.
    pub fn update_attention(&mut self, e: &MappedGazeEvent) -> Option<ObjectId> {
        let id = self.hit(e.p_mm)?.object_id.clone();
        let inc = if e.dt_s > 0.0 { e.dt_s.min(self.params.max_gap_s) } else { 0.0 };
        let obj = self.objects.get_mut(&id)?;
        let v = obj
            .viewers
            .entry(e.participant_id.clone())
            .or_insert(ViewerDwell { dwell_s: 0.0, last_gaze_t: e.t });
        v.dwell_s += inc;
        v.last_gaze_t = e.t;
        Some(id)
    }

    pub fn update_hints(&mut self) {
        let threshold = self.params.hint_threshold_s;
        for obj in self.objects.values_mut() {
            obj.hint_trigger(threshold);
        }
    }

    pub fn highlight_states(&self) -> Vec<HighlightState> {
        highlight_states(self.objects.values(), &self.params)
    }

    /// Objects with an active hint, each with their neighbour list.
    pub fn active_hints(&self) -> impl Iterator<Item = &TrackedObject> {
        self.objects.values().filter(|o| o.hint_active)
    }
}

/// One state per object with at least one viewer at or above the attend
/// threshold, in object-id order.
pub fn highlight_states<'a, I>(objects: I, params: &ObjectParams) -> Vec<HighlightState>
where
    I: IntoIterator<Item = &'a TrackedObject>,
{
    let mut out = Vec::new();
    for obj in objects {
        let Some(obb) = obj.smoothed_obb else { continue };
        let arcs: Vec<ViewerArc> = obj
            .viewers
            .iter()
            .filter(|(_, v)| v.dwell_s >= params.attend_threshold_s && v.dwell_s > 0.0)
            .map(|(id, v)| ViewerArc { participant_id: id.clone(), fraction: (v.dwell_s / params.dwell_cap_s).min(1.0) })
            .collect();
        if arcs.is_empty() {
            continue;
        }
        out.push(HighlightState {
            object_id: obj.object_id.clone(),
            center_mm: obb.center_mm,
            radius_mm: obb.circumscribed_radius() + params.highlight_margin_mm,
            arcs,
        });
    }
    out
}
