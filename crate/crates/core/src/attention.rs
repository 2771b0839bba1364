//! Dwell-time grids.
//!
//! The table is cut into equal cells. Gaze adds the time a participant spent
//! in a cell, each cell saturates at a cap, and all cells fade with a half-life
//! once attention moves elsewhere. One shared grid accumulates every
//! participant and drives the heatmap; private grids drive the trails.

use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::geometry::Point;
use crate::ids::ParticipantId;
use crate::math::{floor, half_life_factor};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AttentionError {
    #[error("grid must have at least one row and one column")]
    EmptyGrid,
    #[error("grid extent must be positive")]
    BadExtent,
    #[error("invalid attention parameter: {0}")]
    BadParam(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Cell {
    pub row: usize,
    pub col: usize,
}

impl Cell {
    pub const fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }
}

/// Cell lattice over the table extent.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GridGeometry {
    pub rows: usize,
    pub cols: usize,
    pub width_mm: f64,
    pub height_mm: f64,
}

impl Default for GridGeometry {
    fn default() -> Self {
        Self { rows: 14, cols: 20, width_mm: 770.0, height_mm: 550.0 }
    }
}

impl GridGeometry {
    pub fn validate(&self) -> Result<(), AttentionError> {
        if self.rows == 0 || self.cols == 0 {
            return Err(AttentionError::EmptyGrid);
        }
        if !(self.width_mm > 0.0 && self.height_mm > 0.0) {
            return Err(AttentionError::BadExtent);
        }
        Ok(())
    }

    pub fn cell_size_mm(&self) -> (f64, f64) {
        (self.width_mm / self.cols as f64, self.height_mm / self.rows as f64)
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Cell containing `p`, or `None` outside the extent.
    ///
    /// A point on an interior boundary belongs to the cell with the larger
    /// index; the far table edges belong to the last row/column.
    pub fn cell_of(&self, p: Point) -> Option<Cell> {
        if !(0.0..=self.width_mm).contains(&p.x) || !(0.0..=self.height_mm).contains(&p.y) {
            return None;
        }
        let (cw, ch) = self.cell_size_mm();
        let col = (floor(p.x / cw) as usize).min(self.cols - 1);
        let row = (floor(p.y / ch) as usize).min(self.rows - 1);
        Some(Cell { row, col })
    }

    pub fn cell_center(&self, cell: Cell) -> Point {
        let (cw, ch) = self.cell_size_mm();
        Point::new((cell.col as f64 + 0.5) * cw, (cell.row as f64 + 0.5) * ch)
    }

    pub fn index(&self, cell: Cell) -> usize {
        cell.row * self.cols + cell.col
    }

    pub fn cell_at(&self, index: usize) -> Cell {
        Cell { row: index / self.cols, col: index % self.cols }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AttentionParams {
    /// Saturation bound per cell.
    pub dwell_cap_s: f64,
    /// Cells stay uncoloured below this dwell.
    pub reveal_threshold_s: f64,
    pub half_life_s: f64,
    /// Largest dwell increment a single sample may contribute.
    pub max_gap_s: f64,
}

impl Default for AttentionParams {
    fn default() -> Self {
        Self { dwell_cap_s: 3.0, reveal_threshold_s: 0.3, half_life_s: 10.0, max_gap_s: 0.2 }
    }
}

impl AttentionParams {
    pub fn validate(&self) -> Result<(), AttentionError> {
        if !(self.dwell_cap_s > 0.0 && self.dwell_cap_s.is_finite()) {
            return Err(AttentionError::BadParam("dwell cap must be positive"));
        }
        if !(self.reveal_threshold_s >= 0.0 && self.reveal_threshold_s < self.dwell_cap_s) {
            return Err(AttentionError::BadParam("reveal threshold must lie in [0, cap)"));
        }
        if !(self.half_life_s > 0.0) {
            return Err(AttentionError::BadParam("half-life must be positive"));
        }
        if !(self.max_gap_s >= 0.0) {
            return Err(AttentionError::BadParam("max gap must be non-negative"));
        }
        Ok(())
    }

    /// Colour-scale position of a dwell value in `[0, 1]`.
    pub fn intensity(&self, dwell_s: f64) -> f64 {
        if dwell_s < self.reveal_threshold_s {
            return 0.0;
        }
        ((dwell_s - self.reveal_threshold_s) / (self.dwell_cap_s - self.reveal_threshold_s)).clamp(0.0, 1.0)
    }

    pub fn clamp_increment(&self, dt_s: f64) -> f64 {
        if dt_s > 0.0 {
            dt_s.min(self.max_gap_s)
        } else {
            0.0
        }
    }
}

/// A gaze sample already mapped into table space.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MappedGazeEvent {
    pub participant_id: ParticipantId,
    pub t: f64,
    pub p_mm: Point,
    /// Time since this participant's previous in-view sample; 0 for the first.
    pub dt_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionGrid {
    geometry: GridGeometry,
    params: AttentionParams,
    cell_dwell_s: Vec<f64>,
    last_update: f64,
}

impl AttentionGrid {
    pub fn new(geometry: GridGeometry, params: AttentionParams, start_t: f64) -> Result<Self, AttentionError> {
        geometry.validate()?;
        params.validate()?;
        Ok(Self { geometry, params, cell_dwell_s: vec![0.0; geometry.len()], last_update: start_t })
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn params(&self) -> &AttentionParams {
        &self.params
    }

    pub fn last_update(&self) -> f64 {
        self.last_update
    }

    /// Row-major dwell seconds.
    pub fn cells(&self) -> &[f64] {
        &self.cell_dwell_s
    }

    pub fn dwell(&self, cell: Cell) -> f64 {
        self.cell_dwell_s[self.geometry.index(cell)]
    }

    /// Adds the event's clamped dwell to the cell under it. Returns that cell,
    /// or `None` (and changes nothing) when the point is off the table.
    pub fn ingest(&mut self, e: &MappedGazeEvent) -> Option<Cell> {
        let cell = self.geometry.cell_of(e.p_mm)?;
        let i = self.geometry.index(cell);
        let v = self.cell_dwell_s[i] + self.params.clamp_increment(e.dt_s);
        self.cell_dwell_s[i] = v.min(self.params.dwell_cap_s);
        Some(cell)
    }

    /// Fades every cell to time `now`. Times before the last update are ignored.
    pub fn decay(&mut self, now: f64) {
        let elapsed = now - self.last_update;
        if !(elapsed > 0.0) {
            return;
        }
        let f = half_life_factor(elapsed, self.params.half_life_s);
        for v in &mut self.cell_dwell_s {
            *v *= f;
        }
        self.last_update = now;
    }

    /// Row-major intensities in `[0, 1]`.
    pub fn colorize(&self) -> Vec<f64> {
        self.cell_dwell_s.iter().map(|d| self.params.intensity(*d)).collect()
    }

    /// Cell with the highest dwell, if it is above the reveal threshold.
    ///
    /// Among tied maxima `previous` wins if present, otherwise the smallest
    /// `(row, col)`.
    pub fn argmax_cell(&self, previous: Option<Cell>) -> Option<Cell> {
        let (mut best, mut best_v) = (0usize, f64::NEG_INFINITY);
        for (i, v) in self.cell_dwell_s.iter().enumerate() {
            if *v > best_v {
                best = i;
                best_v = *v;
            }
        }
        if !(best_v > self.params.reveal_threshold_s) {
            return None;
        }
        if let Some(prev) = previous {
            if prev.row < self.geometry.rows && prev.col < self.geometry.cols && self.dwell(prev) == best_v {
                return Some(prev);
            }
        }
        Some(self.geometry.cell_at(best))
    }

    pub fn clear(&mut self) {
        self.cell_dwell_s.iter_mut().for_each(|v| *v = 0.0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid() -> AttentionGrid {
        AttentionGrid::new(GridGeometry::default(), AttentionParams::default(), 0.0).unwrap()
    }

    fn ev(t: f64, p: Point, dt: f64) -> MappedGazeEvent {
        MappedGazeEvent { participant_id: ParticipantId::from("a"), t, p_mm: p, dt_s: dt }
    }

    fn center(g: &AttentionGrid, row: usize, col: usize) -> Point {
        g.geometry().cell_center(Cell::new(row, col))
    }

    #[test]
    fn default_cells_are_roughly_forty_mm() {
        let (cw, ch) = GridGeometry::default().cell_size_mm();
        assert!((cw - 38.5).abs() < 1e-12);
        assert!((ch - 39.2857).abs() < 1e-3);
    }

    #[test]
    fn three_samples_half_a_second_apart() {
        let mut g = grid();
        let p = center(&g, 2, 3);
        let params = AttentionParams { max_gap_s: 1.0, ..AttentionParams::default() };
        let mut g2 = AttentionGrid::new(*g.geometry(), params, 0.0).unwrap();
        for (t, dt) in [(0.0, 0.0), (0.5, 0.5), (1.0, 0.5)] {
            g2.ingest(&ev(t, p, dt));
            g.ingest(&ev(t, p, dt));
        }
        assert_eq!(g2.dwell(Cell::new(2, 3)), 1.0);
        // With the default 0.2 s gap clamp each step only contributes 0.2 s.
        assert!((g.dwell(Cell::new(2, 3)) - 0.4).abs() < 1e-15);
    }

    #[test]
    fn dwell_clamps_at_cap() {
        let params = AttentionParams { max_gap_s: 1.0, ..AttentionParams::default() };
        let mut g = AttentionGrid::new(GridGeometry::default(), params, 0.0).unwrap();
        let p = center(&g, 0, 0);
        for _ in 0..29 {
            g.ingest(&ev(0.0, p, 0.1));
        }
        assert!((g.dwell(Cell::new(0, 0)) - 2.9).abs() < 1e-12);
        g.ingest(&ev(0.0, p, 0.5));
        assert_eq!(g.dwell(Cell::new(0, 0)), 3.0);
    }

    #[test]
    fn shared_grid_sums_participants() {
        let params = AttentionParams { max_gap_s: 1.0, ..AttentionParams::default() };
        let mut g = AttentionGrid::new(GridGeometry::default(), params, 0.0).unwrap();
        let p = center(&g, 5, 5);
        for who in ["a", "b"] {
            g.ingest(&MappedGazeEvent { participant_id: who.into(), t: 1.0, p_mm: p, dt_s: 1.0 });
        }
        assert_eq!(g.dwell(Cell::new(5, 5)), 2.0);
    }

    #[test]
    fn boundary_goes_to_larger_index_and_edges_stay_inside() {
        let geo = GridGeometry { rows: 2, cols: 2, width_mm: 10.0, height_mm: 10.0 };
        assert_eq!(geo.cell_of(Point::new(5.0, 5.0)), Some(Cell::new(1, 1)));
        assert_eq!(geo.cell_of(Point::new(4.999, 0.0)), Some(Cell::new(0, 0)));
        assert_eq!(geo.cell_of(Point::new(10.0, 10.0)), Some(Cell::new(1, 1)));
        assert_eq!(geo.cell_of(Point::new(10.01, 1.0)), None);
        assert_eq!(geo.cell_of(Point::new(-0.01, 1.0)), None);
    }

    #[test]
    fn off_table_event_changes_nothing() {
        let mut g = grid();
        let before = g.clone();
        assert_eq!(g.ingest(&ev(0.0, Point::new(-5.0, 3.0), 0.1)), None);
        assert_eq!(g, before);
    }

    #[test]
    fn half_life_decay() {
        let params = AttentionParams { half_life_s: 5.0, max_gap_s: 2.0, ..AttentionParams::default() };
        let mut g = AttentionGrid::new(GridGeometry::default(), params, 0.0).unwrap();
        let c = Cell::new(1, 1);
        g.ingest(&ev(0.0, center(&g, 1, 1), 2.0));
        let mut g10 = g.clone();
        g.decay(5.0);
        assert!((g.dwell(c) - 1.0).abs() < 1e-15);
        g10.decay(10.0);
        assert!((g10.dwell(c) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn zero_elapsed_decay_is_bit_identical() {
        let mut g = grid();
        g.ingest(&ev(0.0, center(&g, 3, 3), 0.123));
        let before = g.clone();
        g.decay(0.0);
        assert_eq!(g, before);
    }

    #[test]
    fn colorize_thresholds() {
        let p = AttentionParams::default();
        assert_eq!(p.intensity(0.0), 0.0);
        assert_eq!(p.intensity(0.29), 0.0);
        assert_eq!(p.intensity(3.0), 1.0);
        assert!((p.intensity(1.65) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn argmax_rules() {
        let params = AttentionParams { max_gap_s: 5.0, ..AttentionParams::default() };
        let mut g = AttentionGrid::new(GridGeometry::default(), params, 0.0).unwrap();
        assert_eq!(g.argmax_cell(None), None);
        g.ingest(&ev(0.0, center(&g, 1, 1), 2.0));
        assert_eq!(g.argmax_cell(None), Some(Cell::new(1, 1)));

        let mut g = AttentionGrid::new(GridGeometry::default(), params, 0.0).unwrap();
        g.ingest(&ev(0.0, center(&g, 0, 0), 2.0));
        g.ingest(&ev(0.0, center(&g, 0, 1), 2.0));
        assert_eq!(g.argmax_cell(Some(Cell::new(0, 1))), Some(Cell::new(0, 1)));
        assert_eq!(g.argmax_cell(None), Some(Cell::new(0, 0)));
        assert_eq!(g.argmax_cell(Some(Cell::new(4, 4))), Some(Cell::new(0, 0)));
    }

    #[test]
    fn argmax_ignores_sub_threshold_maximum() {
        let mut g = grid();
        g.ingest(&ev(0.0, center(&g, 2, 2), 0.2));
        assert_eq!(g.argmax_cell(None), None);
    }

    #[test]
    fn saturated_cell_outshines_unvisited() {
        let mut g = grid();
        let p = center(&g, 6, 9);
        for i in 0..100 {
            g.ingest(&ev(i as f64 * 0.05, p, 0.05));
        }
        let img = g.colorize();
        let hot = g.geometry().index(Cell::new(6, 9));
        assert_eq!(img[hot], 1.0);
        assert!(img.iter().enumerate().all(|(i, v)| i == hot || *v == 0.0));
    }

    #[test]
    fn rejects_bad_params() {
        let geo = GridGeometry::default();
        let bad = AttentionParams { reveal_threshold_s: 3.0, ..AttentionParams::default() };
        assert!(AttentionGrid::new(geo, bad, 0.0).is_err());
        let bad = AttentionParams { half_life_s: 0.0, ..AttentionParams::default() };
        assert!(AttentionGrid::new(geo, bad, 0.0).is_err());
        let geo0 = GridGeometry { rows: 0, ..geo };
        assert!(AttentionGrid::new(geo0, AttentionParams::default(), 0.0).is_err());
    }

    proptest! {
        #[test]
        fn colorize_is_monotone(a in 0.0f64..5.0, b in 0.0f64..5.0) {
            let p = AttentionParams::default();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(p.intensity(lo) <= p.intensity(hi));
        }

        #[test]
        fn distinct_cell_ingest_order_is_irrelevant(
            cells in proptest::collection::btree_set((0usize..14, 0usize..20), 1..12),
            dts in proptest::collection::vec(0.0f64..0.3, 12),
        ) {
            let base = grid();
            let events: Vec<_> = cells.iter().zip(&dts)
                .map(|((r, c), dt)| ev(0.0, center(&base, *r, *c), *dt))
                .collect();
            let mut fwd = base.clone();
            let mut rev = base.clone();
            events.iter().for_each(|e| { fwd.ingest(e); });
            events.iter().rev().for_each(|e| { rev.ingest(e); });
            prop_assert_eq!(fwd, rev);
        }

        #[test]
        fn cells_stay_within_cap(
            steps in proptest::collection::vec((0usize..14, 0usize..20, 0.0f64..1.0, 0.0f64..2.0), 1..200),
        ) {
            let mut g = grid();
            let mut t = 0.0;
            for (r, c, dt, gap) in steps {
                t += gap;
                g.decay(t);
                let p = center(&g, r, c);
                g.ingest(&ev(t, p, dt));
                let cap = g.params().dwell_cap_s;
                prop_assert!(g.cells().iter().all(|v| (0.0..=cap).contains(v)));
            }
        }
    }
}
