//! Allocation-only building blocks for tabletop group gaze sharing.
//!
//! Everything here is pure and deterministic: no clocks, sockets or files.
//! Timestamps are plain monotonic seconds supplied by the caller, which makes
//! every type replayable from a recorded log.
//!
//! * [`geometry`] maps scene-camera gaze into table millimetres through a
//!   homography estimated from fiducial marker corners.
//! * [`attention`] holds the dwell-time grids behind the shared heatmap.
//! * [`trails`] animates one entity per participant toward their hottest cell.
//! * [`objects`] smooths detected objects and tracks who is looking at them.
//!
//! The crate is `no_std` and only needs `alloc`.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod attention;
pub mod geometry;
pub mod ids;
mod math;
pub mod objects;
pub mod trails;

pub use attention::{AttentionGrid, AttentionParams, Cell, GridGeometry, MappedGazeEvent};
pub use geometry::{
    Homography, HomographyFit, MarkerDetection, MarkerSpec, Point, TableLayout, TablePoint,
};
pub use ids::{ObjectId, ParticipantId};
pub use objects::{
    HighlightState, ObjectParams, ObjectRegistry, OrientedBox, RawDetection, TrackedObject,
};
pub use trails::{JointAttention, TrailEntity, TrailParams};
