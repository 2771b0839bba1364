//! Table coordinates, marker layout, and the scene-camera to table mapping.
//!
//! Table space is millimetres with the origin at the top-left corner of the
//! projection view, x to the right and y down. Projection space is projector
//! pixels over the same view. Scene-camera space is whatever pixel grid the
//! glasses report gaze in; the link to table space is a [`Homography`]
//! estimated per sample from the corners of detected fiducial markers.

mod dlt;
pub(crate) mod linalg;

use alloc::vec::Vec;
use core::ops::{Add, Mul, Sub};

use thiserror::Error;

pub use dlt::{distinct_known_markers, estimate_homography, fit_homography, MARKER_QUORUM};
use linalg::{det3, frobenius, inv3, mat3_mul, Mat3};

use crate::math::hypot;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("only {found} distinct markers detected, need at least {required}")]
    QuorumNotMet { found: usize, required: usize },
    #[error("correspondences are collinear or rank deficient")]
    DegenerateConfiguration,
    #[error("point maps to infinity")]
    AtInfinity,
    #[error("homography is singular")]
    Singular,
    #[error("marker {0} has non-finite corner coordinates")]
    InvalidDetection(u32),
    #[error("invalid table layout: {0}")]
    InvalidLayout(&'static str),
}

/// A 2-D point or vector. Units depend on the space it lives in.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn norm(self) -> f64 {
        hypot(self.x, self.y)
    }

    pub fn distance(self, other: Point) -> f64 {
        (self - other).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn midpoint(self, other: Point) -> Point {
        Point::new(0.5 * (self.x + other.x), 0.5 * (self.y + other.y))
    }
}

impl Add for Point {
    type Output = Point;
    fn add(self, rhs: Point) -> Point {
        Point::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Point {
    type Output = Point;
    fn sub(self, rhs: Point) -> Point {
        Point::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Point {
    type Output = Point;
    fn mul(self, rhs: f64) -> Point {
        Point::new(self.x * rhs, self.y * rhs)
    }
}

/// One square fiducial marker fixed to the table.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MarkerSpec {
    pub id: u32,
    pub center_mm: Point,
    pub side_mm: f64,
}

impl MarkerSpec {
    pub const DEFAULT_SIDE_MM: f64 = 85.0;

    pub fn new(id: u32, center_mm: Point, side_mm: f64) -> Self {
        Self { id, center_mm, side_mm }
    }

    /// Corners in table space: top-left, top-right, bottom-right, bottom-left.
    pub fn corners(&self) -> [Point; 4] {
        let h = 0.5 * self.side_mm;
        let c = self.center_mm;
        [
            Point::new(c.x - h, c.y - h),
            Point::new(c.x + h, c.y - h),
            Point::new(c.x + h, c.y + h),
            Point::new(c.x - h, c.y + h),
        ]
    }
}

/// Corners of one marker as seen by a scene camera, in [`MarkerSpec::corners`] order.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MarkerDetection {
    pub marker_id: u32,
    pub corners_px: [Point; 4],
}

impl MarkerDetection {
    pub fn is_finite(&self) -> bool {
        self.corners_px.iter().all(|p| p.is_finite())
    }
}

/// Physical extent of the projection view, projector resolution and marker placement.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TableLayout {
    pub width_mm: f64,
    pub height_mm: f64,
    pub proj_width_px: u32,
    pub proj_height_px: u32,
    pub markers: Vec<MarkerSpec>,
}

impl Default for TableLayout {
    /// 770 x 550 mm view at 1900 x 1080 px, six 85 mm markers: one 60 mm
    /// diagonally outside each view corner and one centred 60 mm beyond the
    /// middle of each long edge.
    fn default() -> Self {
        let (w, h, off) = (770.0, 550.0, 60.0);
        let centers = [
            Point::new(-off, -off),
            Point::new(w + off, -off),
            Point::new(w + off, h + off),
            Point::new(-off, h + off),
            Point::new(0.5 * w, -off),
            Point::new(0.5 * w, h + off),
        ];
        let markers = centers
            .iter()
            .enumerate()
            .map(|(i, c)| MarkerSpec::new(i as u32, *c, MarkerSpec::DEFAULT_SIDE_MM))
            .collect();
        Self { width_mm: w, height_mm: h, proj_width_px: 1900, proj_height_px: 1080, markers }
    }
}

impl TableLayout {
    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.width_mm > 0.0 && self.width_mm.is_finite()) {
            return Err(GeometryError::InvalidLayout("width_mm must be positive"));
        }
        if !(self.height_mm > 0.0 && self.height_mm.is_finite()) {
            return Err(GeometryError::InvalidLayout("height_mm must be positive"));
        }
        if self.proj_width_px == 0 || self.proj_height_px == 0 {
            return Err(GeometryError::InvalidLayout("projector resolution must be positive"));
        }
        if self.markers.len() < MARKER_QUORUM {
            return Err(GeometryError::InvalidLayout("fewer markers than the quorum"));
        }
        for (i, m) in self.markers.iter().enumerate() {
            if !(m.side_mm > 0.0 && m.side_mm.is_finite()) {
                return Err(GeometryError::InvalidLayout("marker side must be positive"));
            }
            if !m.center_mm.is_finite() {
                return Err(GeometryError::InvalidLayout("marker center must be finite"));
            }
            if self.markers[..i].iter().any(|o| o.id == m.id) {
                return Err(GeometryError::InvalidLayout("marker ids must be unique"));
            }
        }
        Ok(())
    }

    pub fn marker(&self, id: u32) -> Option<&MarkerSpec> {
        self.markers.iter().find(|m| m.id == id)
    }

    /// Millimetres per projector pixel along x and y.
    pub fn pixel_pitch_mm(&self) -> (f64, f64) {
        (
            self.width_mm / f64::from(self.proj_width_px),
            self.height_mm / f64::from(self.proj_height_px),
        )
    }

    pub fn contains(&self, p: Point) -> bool {
        (0.0..=self.width_mm).contains(&p.x) && (0.0..=self.height_mm).contains(&p.y)
    }

    /// Continuous (unrounded) projector pixel coordinates of a table point.
    pub fn table_to_projection_px(&self, p_mm: Point) -> Point {
        let (px, py) = self.pixel_pitch_mm();
        Point::new(p_mm.x / px, p_mm.y / py)
    }

    pub fn projection_px_to_table(&self, p_px: Point) -> Point {
        let (px, py) = self.pixel_pitch_mm();
        Point::new(p_px.x * px, p_px.y * py)
    }
}

/// A projective map between two planes, stored with `m[2][2] = 1` whenever
/// that entry is non-zero.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Homography {
    m: Mat3,
}

impl Homography {
    /// Lower bound on `|det|` of the unit-Frobenius-norm matrix.
    pub const DET_EPSILON: f64 = 1e-15;
    /// `|w'|` below this fraction of the row magnitude counts as infinity.
    pub const W_EPSILON: f64 = 1e-12;

    pub const IDENTITY: Homography =
        Homography { m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]] };

    pub fn new(m: [[f64; 3]; 3]) -> Result<Self, GeometryError> {
        if !m.iter().flatten().all(|v| v.is_finite()) {
            return Err(GeometryError::Singular);
        }
        let norm = frobenius(&m);
        if norm == 0.0 || (det3(&m) / (norm * norm * norm)).abs() <= Self::DET_EPSILON {
            return Err(GeometryError::Singular);
        }
        Ok(Self::normalized(m))
    }

    pub fn scale(sx: f64, sy: f64) -> Result<Self, GeometryError> {
        Self::new([[sx, 0.0, 0.0], [0.0, sy, 0.0], [0.0, 0.0, 1.0]])
    }

    pub fn matrix(&self) -> [[f64; 3]; 3] {
        self.m
    }

    pub fn determinant(&self) -> f64 {
        det3(&self.m)
    }

    pub fn inverse(&self) -> Homography {
        // Invertibility was checked on construction.
        Homography::normalized(inv3(&self.m))
    }

    fn normalized(mut m: Mat3) -> Homography {
        let s = m[2][2];
        if s != 0.0 {
            for v in m.iter_mut().flatten() {
                *v /= s;
            }
        }
        Homography { m }
    }

    /// `self` after `first`: maps `p` to `self(first(p))`.
    pub fn compose(&self, first: &Homography) -> Result<Homography, GeometryError> {
        Homography::new(mat3_mul(&self.m, &first.m))
    }

    pub fn apply(&self, p: Point) -> Result<Point, GeometryError> {
        let m = &self.m;
        let x = m[0][0] * p.x + m[0][1] * p.y + m[0][2];
        let y = m[1][0] * p.x + m[1][1] * p.y + m[1][2];
        let w = m[2][0] * p.x + m[2][1] * p.y + m[2][2];
        let w_scale = (m[2][0] * p.x).abs() + (m[2][1] * p.y).abs() + m[2][2].abs();
        if w_scale == 0.0 || w.abs() <= Self::W_EPSILON * w_scale {
            return Err(GeometryError::AtInfinity);
        }
        Ok(Point::new(x / w, y / w))
    }

    /// `self` and `other` rescaled to unit Frobenius norm with a common sign,
    /// then compared entry by entry.
    pub fn max_scaled_difference(&self, other: &Homography) -> f64 {
        let unit = |m: &Mat3| {
            let n = frobenius(m);
            let mut out = *m;
            for v in out.iter_mut().flatten() {
                *v /= n;
            }
            out
        };
        let a = unit(&self.m);
        let mut b = unit(&other.m);
        let dot: f64 = a.iter().flatten().zip(b.iter().flatten()).map(|(x, y)| x * y).sum();
        if dot < 0.0 {
            for v in b.iter_mut().flatten() {
                *v = -*v;
            }
        }
        a.iter().flatten().zip(b.iter().flatten()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }
}

/// A homography together with its fit quality.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HomographyFit {
    pub homography: Homography,
    /// RMS distance between mapped source points and their targets, in target units.
    pub rms_residual: f64,
    /// Distinct markers that contributed corners (0 for raw point fits).
    pub markers_used: usize,
}

/// A gaze point in table space.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TablePoint {
    pub p_mm: Point,
    pub out_of_view: bool,
}

/// Maps a scene-camera gaze point into table millimetres.
///
/// Points outside the view are still returned, flagged `out_of_view`.
pub fn map_gaze_to_table(
    h: &Homography,
    gaze_px: Point,
    layout: &TableLayout,
) -> Result<TablePoint, GeometryError> {
    if !gaze_px.is_finite() {
        return Err(GeometryError::AtInfinity);
    }
    let p_mm = h.apply(gaze_px)?;
    Ok(TablePoint { p_mm, out_of_view: !layout.contains(p_mm) })
}
