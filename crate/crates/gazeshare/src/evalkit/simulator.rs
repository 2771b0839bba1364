//! Synthetic participants and a simulated object detector.

use std::path::Path;

use gazeshare_core::geometry::fit_homography;
use gazeshare_core::{Homography, MarkerDetection, ObjectId, OrientedBox, ParticipantId, Point, TableLayout};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::calibration::CalibrationSchedule;
use super::EvalError;
use crate::protocol::{DetectionMsg, GazeSampleMsg, ObjectDetection};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScanStep {
    /// Jump to `target_mm` and hold.
    Fixate { target_mm: Point, duration_s: f64 },
    /// Move at constant velocity from the previous position to `target_mm`.
    Saccade { target_mm: Point, duration_s: f64 },
}

impl ScanStep {
    pub fn duration_s(&self) -> f64 {
        match *self {
            ScanStep::Fixate { duration_s, .. } | ScanStep::Saccade { duration_s, .. } => duration_s,
        }
    }

    pub fn target_mm(&self) -> Point {
        match *self {
            ScanStep::Fixate { target_mm, .. } | ScanStep::Saccade { target_mm, .. } => target_mm,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
enum StepRow {
    Fixate { x_mm: f64, y_mm: f64, duration_s: f64 },
    Saccade { x_mm: f64, y_mm: f64, duration_s: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScanpathFile {
    #[serde(rename = "step", default)]
    steps: Vec<StepRow>,
}

/// A cyclic program of fixations and saccades in table millimetres.
#[derive(Debug, Clone, PartialEq)]
pub struct Scanpath {
    steps: Vec<ScanStep>,
    period_s: f64,
}

impl Scanpath {
    pub fn new(steps: Vec<ScanStep>) -> Result<Self, EvalError> {
        if steps.is_empty() {
            return Err(EvalError::Scanpath("program is empty".into()));
        }
        for (i, s) in steps.iter().enumerate() {
            if !(s.duration_s().is_finite() && s.duration_s() > 0.0) || !s.target_mm().is_finite() {
                return Err(EvalError::Scanpath(format!("step {i}: duration must be positive and target finite")));
            }
        }
        let period_s = steps.iter().map(ScanStep::duration_s).sum();
        Ok(Self { steps, period_s })
    }

    pub fn steps(&self) -> &[ScanStep] {
        &self.steps
    }

    pub fn period_s(&self) -> f64 {
        self.period_s
    }

    pub fn parse(text: &str) -> Result<Self, EvalError> {
        let file: ScanpathFile = toml::from_str(text).map_err(|e| EvalError::Scanpath(e.to_string()))?;
        Self::new(
            file.steps
                .into_iter()
                .map(|r| match r {
                    StepRow::Fixate { x_mm, y_mm, duration_s } => ScanStep::Fixate { target_mm: Point::new(x_mm, y_mm), duration_s },
                    StepRow::Saccade { x_mm, y_mm, duration_s } => ScanStep::Saccade { target_mm: Point::new(x_mm, y_mm), duration_s },
                })
                .collect(),
        )
    }

    pub fn load(path: &Path) -> Result<Self, EvalError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        let steps = self
            .steps
            .iter()
            .map(|s| match *s {
                ScanStep::Fixate { target_mm, duration_s } => StepRow::Fixate { x_mm: target_mm.x, y_mm: target_mm.y, duration_s },
                ScanStep::Saccade { target_mm, duration_s } => StepRow::Saccade { x_mm: target_mm.x, y_mm: target_mm.y, duration_s },
            })
            .collect();
        toml::to_string(&ScanpathFile { steps }).expect("scanpath serializes")
    }

    /// Position `t` seconds into the program, wrapping around.
    pub fn position_at(&self, t: f64) -> Point {
        let mut local = t.rem_euclid(self.period_s);
        let mut from = self.steps[self.steps.len() - 1].target_mm();
        for s in &self.steps {
            let d = s.duration_s();
            if local < d {
                return match *s {
                    ScanStep::Fixate { target_mm, .. } => target_mm,
                    ScanStep::Saccade { target_mm, .. } => from + (target_mm - from) * (local / d),
                };
            }
            local -= d;
            from = s.target_mm();
        }
        from
    }

    /// Alternating saccades and fixations to random points on the table.
    pub fn random<R: Rng>(rng: &mut R, layout: &TableLayout, fixations: usize) -> Self {
        let margin = 20.0;
        let mut steps = Vec::with_capacity(2 * fixations.max(1));
        for _ in 0..fixations.max(1) {
            let target_mm = Point::new(
                rng.random_range(margin..layout.width_mm - margin),
                rng.random_range(margin..layout.height_mm - margin),
            );
            steps.push(ScanStep::Saccade { target_mm, duration_s: rng.random_range(0.03..0.08) });
            steps.push(ScanStep::Fixate { target_mm, duration_s: rng.random_range(0.2..0.8) });
        }
        Self::new(steps).expect("generated steps are valid")
    }

    /// Follows a calibration schedule: a saccade to each target, then a fixation.
    pub fn calibration(sched: &CalibrationSchedule, layout: &TableLayout, saccade_s: f64) -> Result<Self, EvalError> {
        let saccade_s = saccade_s.clamp(1e-3, sched.per_point_duration_s / 2.0);
        let mut steps = Vec::new();
        if sched.start_t > 0.0 {
            steps.push(ScanStep::Fixate { target_mm: layout.projection_px_to_table(sched.points[0]), duration_s: sched.start_t });
        }
        for p in &sched.points {
            let target_mm = layout.projection_px_to_table(*p);
            steps.push(ScanStep::Saccade { target_mm, duration_s: saccade_s });
            steps.push(ScanStep::Fixate { target_mm, duration_s: sched.per_point_duration_s - saccade_s });
        }
        Self::new(steps)
    }
}

/// Ground-truth scene camera: where table points appear in camera pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraPose {
    pub label: String,
    pub camera_from_table: Homography,
    /// Per-sample dropout probability, aligned with the layout's markers.
    pub marker_dropout: Vec<f64>,
}

impl CameraPose {
    pub fn new(label: impl Into<String>, camera_from_table: Homography, marker_dropout: Vec<f64>) -> Result<Self, EvalError> {
        if marker_dropout.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(EvalError::InvalidParticipant("marker dropout must be in [0, 1]"));
        }
        Ok(Self { label: label.into(), camera_from_table, marker_dropout })
    }

    /// Camera pixels equal table millimetres; nothing drops out.
    pub fn identity(layout: &TableLayout) -> Self {
        Self { label: "identity".into(), camera_from_table: Homography::IDENTITY, marker_dropout: vec![0.0; layout.markers.len()] }
    }

    fn from_quad(label: &str, layout: &TableLayout, quad: [Point; 4], dropout: Vec<f64>) -> Self {
        let (w, h) = (layout.width_mm, layout.height_mm);
        let table = [Point::new(0.0, 0.0), Point::new(w, 0.0), Point::new(w, h), Point::new(0.0, h)];
        let fit = fit_homography(&table, &quad).expect("preset quads are non-degenerate");
        Self { label: label.into(), camera_from_table: fit.homography, marker_dropout: dropout }
    }

    /// Seated at the long edge, looking across the table.
    pub fn horizontal(layout: &TableLayout) -> Self {
        let quad = [Point::new(180.0, 260.0), Point::new(908.0, 260.0), Point::new(1010.0, 820.0), Point::new(78.0, 820.0)];
        Self::from_quad("horizontal", layout, quad, vec![0.05; layout.markers.len()])
    }

    /// Seated at the short edge; markers along the far side drop out often.
    pub fn vertical(layout: &TableLayout) -> Self {
        let quad = [Point::new(380.0, 150.0), Point::new(200.0, 950.0), Point::new(880.0, 950.0), Point::new(700.0, 150.0)];
        let cam = Self::from_quad("vertical", layout, quad, Vec::new());
        // far = small camera y
        let dropout = layout
            .markers
            .iter()
            .map(|m| {
                let y = cam.camera_from_table.apply(m.center_mm).map_or(f64::INFINITY, |p| p.y);
                if y < 400.0 {
                    0.35
                } else if y < 700.0 {
                    0.15
                } else {
                    0.05
                }
            })
            .collect();
        Self { marker_dropout: dropout, ..cam }
    }

    pub fn preset(name: &str, layout: &TableLayout) -> Option<Self> {
        match name {
            "horizontal" => Some(Self::horizontal(layout)),
            "vertical" => Some(Self::vertical(layout)),
            "identity" => Some(Self::identity(layout)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticParticipant {
    pub id: ParticipantId,
    pub sample_rate_hz: f64,
    pub scanpath: Scanpath,
    /// Gaze noise σ in camera pixels, per axis.
    pub noise_px: f64,
    pub camera: CameraPose,
}

impl SyntheticParticipant {
    pub fn new(id: impl Into<ParticipantId>, scanpath: Scanpath, camera: CameraPose) -> Self {
        Self { id: id.into(), sample_rate_hz: 60.0, scanpath, noise_px: 0.0, camera }
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        if !(self.sample_rate_hz.is_finite() && self.sample_rate_hz > 0.0) {
            return Err(EvalError::InvalidParticipant("sample rate must be positive"));
        }
        if !(self.noise_px.is_finite() && self.noise_px >= 0.0) {
            return Err(EvalError::InvalidParticipant("noise must be non-negative"));
        }
        if self.camera.marker_dropout.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(EvalError::InvalidParticipant("marker dropout must be in [0, 1]"));
        }
        Ok(())
    }
}

/// A generated sample and the time it is sent.
#[derive(Debug, Clone, PartialEq)]
pub struct TimedSample {
    pub t: f64,
    pub msg: GazeSampleMsg,
}

/// Samples at `start_t + k / rate` for every `k / rate < duration_s`.
pub fn generate_stream(
    p: &SyntheticParticipant,
    layout: &TableLayout,
    start_t: f64,
    duration_s: f64,
    seed: u64,
) -> Result<Vec<TimedSample>, EvalError> {
    p.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, p.noise_px).map_err(|_| EvalError::InvalidParticipant("noise must be non-negative"))?;
    let cam = &p.camera.camera_from_table;
    let n = (duration_s * p.sample_rate_hz).ceil().max(0.0) as u64;
    let mut out = Vec::with_capacity(n as usize);
    for k in 0..n {
        let local = k as f64 / p.sample_rate_hz;
        if local >= duration_s {
            break;
        }
        let mut markers = Vec::with_capacity(layout.markers.len());
        for (i, m) in layout.markers.iter().enumerate() {
            let drop_p = p.camera.marker_dropout.get(i).copied().unwrap_or(0.0);
            // draw even when p is 0 so streams stay aligned across configs
            let dropped = rng.random::<f64>() < drop_p;
            let c = m.corners();
            let corners = [cam.apply(c[0]), cam.apply(c[1]), cam.apply(c[2]), cam.apply(c[3])];
            if let (false, [Ok(a), Ok(b), Ok(c), Ok(d)]) = (dropped, corners) {
                markers.push(MarkerDetection { marker_id: m.id, corners_px: [a, b, c, d] });
            }
        }
        let truth = p.scanpath.position_at(local);
        let mut gaze_px = cam.apply(truth).unwrap_or(Point::new(f64::NAN, f64::NAN));
        if p.noise_px > 0.0 {
            gaze_px = gaze_px + Point::new(noise.sample(&mut rng), noise.sample(&mut rng));
        }
        out.push(TimedSample {
            t: start_t + local,
            msg: GazeSampleMsg { participant_id: p.id.clone(), gaze_px, confidence: 1.0, markers },
        });
    }
    Ok(out)
}

/// One object the simulated detector tracks.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedObject {
    pub object_id: ObjectId,
    pub obb: OrientedBox,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedDetector {
    pub rate_hz: f64,
    pub objects: Vec<SimulatedObject>,
    pub confidence_range: (f64, f64),
    pub jitter_mm: f64,
    pub jitter_rad: f64,
    /// Chance a given object is absent from a frame.
    pub miss_probability: f64,
}

impl SimulatedDetector {
    pub fn new(objects: Vec<SimulatedObject>) -> Self {
        Self { rate_hz: 20.0, objects, confidence_range: (0.5, 0.95), jitter_mm: 2.0, jitter_rad: 0.02, miss_probability: 0.1 }
    }

    pub fn generate(&self, start_t: f64, duration_s: f64, seed: u64) -> Result<Vec<(f64, DetectionMsg)>, EvalError> {
        let (lo, hi) = self.confidence_range;
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) || !(0.0..=1.0).contains(&self.miss_probability) {
            return Err(EvalError::InvalidParticipant("detector confidence and miss rate must lie in [0, 1]"));
        }
        if !(self.rate_hz.is_finite() && self.rate_hz > 0.0) {
            return Err(EvalError::InvalidParticipant("detector rate must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pos = Normal::new(0.0, self.jitter_mm.max(0.0)).expect("finite σ");
        let rot = Normal::new(0.0, self.jitter_rad.max(0.0)).expect("finite σ");
        let mut out = Vec::new();
        let mut k = 0u64;
        loop {
            let local = k as f64 / self.rate_hz;
            if local >= duration_s {
                break;
            }
            let mut detections = Vec::new();
            for o in &self.objects {
                let missed = rng.random::<f64>() < self.miss_probability;
                let confidence = if hi > lo { rng.random_range(lo..=hi) } else { lo };
                let d = Point::new(pos.sample(&mut rng), pos.sample(&mut rng));
                let r = rot.sample(&mut rng);
                if !missed {
                    let obb = OrientedBox::new(o.obb.center_mm + d, o.obb.half_extents_mm, o.obb.rotation_rad + r);
                    detections.push(ObjectDetection { object_id: o.object_id.clone(), obb, confidence });
                }
            }
            out.push((start_t + local, DetectionMsg { detections }));
            k += 1;
        }
        Ok(out)
    }
}
