//! Per-participant trail entities that swim toward the participant's most
//! attended cell, and joint attention by co-location.

use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::vec::Vec;

use crate::attention::{AttentionGrid, Cell, GridGeometry};
use crate::geometry::Point;
use crate::ids::ParticipantId;
use crate::math::atan2;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrailParams {
    pub speed_mm_s: f64,
    pub history_len: usize,
}

impl Default for TrailParams {
    fn default() -> Self {
        Self { speed_mm_s: 120.0, history_len: 64 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrailEntity {
    pub participant_id: ParticipantId,
    pub pos_mm: Point,
    pub target_cell: Option<Cell>,
    target_mm: Option<Point>,
    pub speed_mm_s: f64,
    pub heading_rad: f64,
    history: VecDeque<Point>,
    history_len: usize,
}

impl TrailEntity {
    pub fn new(participant_id: ParticipantId, start_mm: Point, params: TrailParams) -> Self {
        Self {
            participant_id,
            pos_mm: start_mm,
            target_cell: None,
            target_mm: None,
            speed_mm_s: params.speed_mm_s,
            heading_rad: 0.0,
            history: VecDeque::with_capacity(params.history_len),
            history_len: params.history_len,
        }
    }

    /// Oldest first.
    pub fn path_history(&self) -> impl DoubleEndedIterator<Item = Point> + ExactSizeIterator + '_ {
        self.history.iter().copied()
    }

    pub fn target_mm(&self) -> Option<Point> {
        self.target_mm
    }

    /// Aims at the hottest cell of `grid`, keeping the current target when it
    /// is still among the tied maxima. No attended cell halts the entity.
    pub fn retarget(&mut self, grid: &AttentionGrid) {
        self.target_cell = grid.argmax_cell(self.target_cell);
        self.target_mm = self.target_cell.map(|c| grid.geometry().cell_center(c));
    }

    /// Aims directly at a cell; mainly for scripted motion.
    pub fn set_target(&mut self, cell: Option<Cell>, geometry: &GridGeometry) {
        self.target_cell = cell;
        self.target_mm = cell.map(|c| geometry.cell_center(c));
    }

    /// Straight-line pursuit of the target center without overshoot.
    pub fn advance(&mut self, dt_s: f64) {
        if let Some(target) = self.target_mm {
            let to = target - self.pos_mm;
            let remaining = to.norm();
            let step = self.speed_mm_s * dt_s.max(0.0);
            if remaining > 0.0 && step > 0.0 {
                self.heading_rad = atan2(to.y, to.x);
                self.pos_mm = if step >= remaining { target } else { self.pos_mm + to * (step / remaining) };
            }
        }
        if self.history_len > 0 {
            if self.history.len() == self.history_len {
                self.history.pop_front();
            }
            self.history.push_back(self.pos_mm);
        }
    }
}

/// A cell occupied by two or more trail entities.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct JointAttention {
    pub cell: Cell,
    pub participants: BTreeSet<ParticipantId>,
}

/// Cells holding at least two entities, ordered by cell.
pub fn joint_attention_cells<'a, I>(trails: I, geometry: &GridGeometry) -> Vec<JointAttention>
where
    I: IntoIterator<Item = &'a TrailEntity>,
{
    let mut occupancy: BTreeMap<Cell, BTreeSet<ParticipantId>> = BTreeMap::new();
    for t in trails {
        if let Some(cell) = geometry.cell_of(t.pos_mm) {
            occupancy.entry(cell).or_default().insert(t.participant_id.clone());
        }
    }
    occupancy
        .into_iter()
        .filter(|(_, who)| who.len() >= 2)
        .map(|(cell, participants)| JointAttention { cell, participants })
        .collect()
}
