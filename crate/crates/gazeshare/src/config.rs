//! Configuration files: table layout, task definition and hub settings.
//!
//! All three are TOML. Layout files use flat marker rows so they can be
//! written by hand next to the physical table:
//!
//! ```toml
//! width_mm = 770.0
//! height_mm = 550.0
//! proj_width_px = 1900
//! proj_height_px = 1080
//!
//! [[marker]]
//! id = 0
//! center_x_mm = -60.0
//! center_y_mm = -60.0
//! side_mm = 85.0
//! ```

use std::path::Path;

use gazeshare_core::attention::{AttentionParams, GridGeometry};
use gazeshare_core::geometry::GeometryError;
use gazeshare_core::objects::{ObjectParams, OrientedBox};
use gazeshare_core::trails::TrailParams;
use gazeshare_core::{MarkerSpec, ObjectId, Point, TableLayout};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::protocol::Modes;

/// Slowest tick rate that still counts as real-time feedback.
pub const MIN_TICK_HZ: u32 = 20;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parsing {path}: {source}")]
    Parse { path: String, source: toml::de::Error },
    #[error(transparent)]
    Layout(#[from] GeometryError),
    #[error("invalid attention settings: {0}")]
    Attention(#[from] gazeshare_core::attention::AttentionError),
    #[error("tick rate {0} Hz is below the {MIN_TICK_HZ} Hz floor")]
    TickRate(u32),
    #[error("{0}")]
    Invalid(String),
}

fn read(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.display().to_string(), source })
}

fn parse<T: for<'de> Deserialize<'de>>(path: &Path, text: &str) -> Result<T, ConfigError> {
    toml::from_str(text).map_err(|source| ConfigError::Parse { path: path.display().to_string(), source })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkerRow {
    pub id: u32,
    pub center_x_mm: f64,
    pub center_y_mm: f64,
    #[serde(default = "default_side")]
    pub side_mm: f64,
}

fn default_side() -> f64 {
    MarkerSpec::DEFAULT_SIDE_MM
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutFile {
    pub width_mm: f64,
    pub height_mm: f64,
    pub proj_width_px: u32,
    pub proj_height_px: u32,
    #[serde(rename = "marker", default)]
    pub markers: Vec<MarkerRow>,
}

impl From<&TableLayout> for LayoutFile {
    fn from(l: &TableLayout) -> Self {
        Self {
            width_mm: l.width_mm,
            height_mm: l.height_mm,
            proj_width_px: l.proj_width_px,
            proj_height_px: l.proj_height_px,
            markers: l
                .markers
                .iter()
                .map(|m| MarkerRow { id: m.id, center_x_mm: m.center_mm.x, center_y_mm: m.center_mm.y, side_mm: m.side_mm })
                .collect(),
        }
    }
}

impl LayoutFile {
    pub fn into_layout(self) -> Result<TableLayout, ConfigError> {
        let layout = TableLayout {
            width_mm: self.width_mm,
            height_mm: self.height_mm,
            proj_width_px: self.proj_width_px,
            proj_height_px: self.proj_height_px,
            markers: self
                .markers
                .into_iter()
                .map(|r| MarkerSpec::new(r.id, Point::new(r.center_x_mm, r.center_y_mm), r.side_mm))
                .collect(),
        };
        layout.validate()?;
        Ok(layout)
    }
}

pub fn parse_layout(text: &str) -> Result<TableLayout, ConfigError> {
    parse::<LayoutFile>(Path::new("<layout>"), text)?.into_layout()
}

pub fn load_layout(path: &Path) -> Result<TableLayout, ConfigError> {
    parse::<LayoutFile>(path, &read(path)?)?.into_layout()
}

pub fn layout_to_toml(layout: &TableLayout) -> String {
    toml::to_string(&LayoutFile::from(layout)).expect("layout serializes")
}

/// Short stable fingerprint so clients can tell they share the same table.
pub fn layout_hash(layout: &TableLayout) -> String {
    let canonical = serde_json::to_string(&LayoutFile::from(layout)).expect("layout serializes");
    hex::encode(&Sha256::digest(canonical.as_bytes())[..8])
}

/// Pose a simulated detector reports for an object.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseRow {
    pub x_mm: f64,
    pub y_mm: f64,
    pub half_w_mm: f64,
    pub half_h_mm: f64,
    #[serde(default)]
    pub rotation_rad: f64,
}

impl From<PoseRow> for OrientedBox {
    fn from(p: PoseRow) -> Self {
        OrientedBox::new(Point::new(p.x_mm, p.y_mm), (p.half_w_mm, p.half_h_mm), p.rotation_rad)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskObject {
    pub id: ObjectId,
    #[serde(default)]
    pub label: Option<String>,
    #[serde(default)]
    pub neighbors: Vec<ObjectId>,
    /// Only used by the simulated detector.
    #[serde(default)]
    pub pose: Option<PoseRow>,
}

/// Objects of a task and which ones belong next to each other.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TaskDefinition {
    #[serde(rename = "object", default)]
    pub objects: Vec<TaskObject>,
}

impl TaskDefinition {
    pub fn validate(&self) -> Result<(), ConfigError> {
        for (i, o) in self.objects.iter().enumerate() {
            if self.objects[..i].iter().any(|p| p.id == o.id) {
                return Err(ConfigError::Invalid(format!("duplicate object id {}", o.id)));
            }
        }
        for o in &self.objects {
            for n in &o.neighbors {
                if !self.objects.iter().any(|p| &p.id == n) {
                    return Err(ConfigError::Invalid(format!("object {} lists unknown neighbour {n}", o.id)));
                }
            }
        }
        Ok(())
    }
}

pub fn parse_task(text: &str) -> Result<TaskDefinition, ConfigError> {
    let task: TaskDefinition = parse(Path::new("<task>"), text)?;
    task.validate()?;
    Ok(task)
}

pub fn load_task(path: &Path) -> Result<TaskDefinition, ConfigError> {
    let task: TaskDefinition = parse(path, &read(path)?)?;
    task.validate()?;
    Ok(task)
}

/// Everything the hub session needs.
#[derive(Debug, Clone, PartialEq)]
pub struct HubConfig {
    pub layout: TableLayout,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub attention: AttentionParams,
    pub trails: TrailParams,
    pub objects: ObjectParams,
    pub tick_hz: u32,
    /// How long a homography may be reused when a sample misses the quorum.
    pub stale_window_s: f64,
    /// Trail history points included in each broadcast.
    pub broadcast_history: usize,
    pub modes: Modes,
    pub task: TaskDefinition,
}

impl Default for HubConfig {
    fn default() -> Self {
        Self {
            layout: TableLayout::default(),
            grid_rows: 14,
            grid_cols: 20,
            attention: AttentionParams::default(),
            trails: TrailParams::default(),
            objects: ObjectParams::default(),
            tick_hz: 30,
            stale_window_s: 0.5,
            broadcast_history: 16,
            modes: Modes::default(),
            task: TaskDefinition::default(),
        }
    }
}

impl HubConfig {
    pub fn grid_geometry(&self) -> GridGeometry {
        GridGeometry {
            rows: self.grid_rows,
            cols: self.grid_cols,
            width_mm: self.layout.width_mm,
            height_mm: self.layout.height_mm,
        }
    }

    pub fn tick_interval_s(&self) -> f64 {
        1.0 / f64::from(self.tick_hz)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.layout.validate()?;
        self.grid_geometry().validate()?;
        self.attention.validate()?;
        if self.tick_hz < MIN_TICK_HZ {
            return Err(ConfigError::TickRate(self.tick_hz));
        }
        if !(self.trails.speed_mm_s > 0.0) {
            return Err(ConfigError::Invalid("trail speed must be positive".into()));
        }
        if !(self.objects.half_life_s > 0.0 && self.objects.dwell_cap_s > 0.0) {
            return Err(ConfigError::Invalid("object half-life and dwell cap must be positive".into()));
        }
        if !(self.stale_window_s >= 0.0) {
            return Err(ConfigError::Invalid("stale window must be non-negative".into()));
        }
        self.task.validate()
    }
}

/// Optional hub settings file; every key falls back to the default.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SettingsFile {
    pub layout: Option<String>,
    pub task: Option<String>,
    pub tick_hz: Option<u32>,
    pub grid_rows: Option<usize>,
    pub grid_cols: Option<usize>,
    pub half_life_s: Option<f64>,
    pub dwell_cap_s: Option<f64>,
    pub reveal_threshold_s: Option<f64>,
    pub max_gap_s: Option<f64>,
    pub trail_speed_mm_s: Option<f64>,
    pub hint_threshold_s: Option<f64>,
    pub stale_window_s: Option<f64>,
    pub telemetry_port: Option<u16>,
    pub renderer_port: Option<u16>,
    pub heatmap: Option<bool>,
    pub trails: Option<bool>,
    pub objects: Option<bool>,
}

pub fn load_settings(path: &Path) -> Result<SettingsFile, ConfigError> {
    parse(path, &read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_file_round_trip() {
        let layout = TableLayout::default();
        let text = layout_to_toml(&layout);
        assert_eq!(parse_layout(&text).unwrap(), layout);
        assert!(text.contains("[[marker]]"));
    }

    #[test]
    fn layout_side_defaults_and_validation() {
        let text = "width_mm = 100.0\nheight_mm = 50.0\nproj_width_px = 200\nproj_height_px = 100\n\
                    [[marker]]\nid = 1\ncenter_x_mm = 0.0\ncenter_y_mm = 0.0\n\
                    [[marker]]\nid = 2\ncenter_x_mm = 100.0\ncenter_y_mm = 0.0\n";
        assert!(matches!(parse_layout(text), Err(ConfigError::Layout(_))));
        let text = format!("{text}[[marker]]\nid = 3\ncenter_x_mm = 100.0\ncenter_y_mm = 50.0\n");
        let l = parse_layout(&text).unwrap();
        assert_eq!(l.markers[0].side_mm, 85.0);
        let dup = format!("{text}[[marker]]\nid = 1\ncenter_x_mm = 5.0\ncenter_y_mm = 0.0\n");
        assert!(matches!(parse_layout(&dup), Err(ConfigError::Layout(_))));
    }

    #[test]
    fn hash_changes_with_layout() {
        let a = TableLayout::default();
        let mut b = a.clone();
        b.markers[0].center_mm.x += 1.0;
        assert_eq!(layout_hash(&a), layout_hash(&a.clone()));
        assert_ne!(layout_hash(&a), layout_hash(&b));
        assert_eq!(layout_hash(&a).len(), 16);
    }

    #[test]
    fn task_file_parses_and_checks_neighbours() {
        let text = r#"
            [[object]]
            id = "a"
            label = "corner"
            neighbors = ["b"]
            pose = { x_mm = 100.0, y_mm = 120.0, half_w_mm = 30.0, half_h_mm = 20.0 }

            [[object]]
            id = "b"
        "#;
        let t = parse_task(text).unwrap();
        assert_eq!(t.objects.len(), 2);
        assert_eq!(t.objects[0].neighbors, vec![ObjectId::from("b")]);
        assert!(t.objects[1].pose.is_none());
        let bad = "[[object]]\nid = \"a\"\nneighbors = [\"zz\"]\n";
        assert!(parse_task(bad).is_err());
    }

    #[test]
    fn tick_floor_enforced() {
        let cfg = HubConfig { tick_hz: 19, ..HubConfig::default() };
        assert!(matches!(cfg.validate(), Err(ConfigError::TickRate(19))));
        HubConfig::default().validate().unwrap();
    }

    #[test]
    fn settings_reject_unknown_keys() {
        assert!(toml::from_str::<SettingsFile>("tick_hz = 30\nbogus = 1").is_err());
        let s: SettingsFile = toml::from_str("tick_hz = 40\nheatmap = false").unwrap();
        assert_eq!(s.tick_hz, Some(40));
        assert_eq!(s.heatmap, Some(false));
    }
}
