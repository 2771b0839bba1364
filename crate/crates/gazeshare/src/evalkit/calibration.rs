//! Nine-point calibration: schedule, sample filtering and accuracy report.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use gazeshare_core::geometry::{distinct_known_markers, estimate_homography, MARKER_QUORUM};
use gazeshare_core::{Point, TableLayout};
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::protocol::GazeSampleMsg;

pub const DEFAULT_POINT_DURATION_S: f64 = 2.0;
pub const DEFAULT_ONSET_DELAY_S: f64 = 0.1;
pub const DEFAULT_MARGIN_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSchedule {
    /// Targets in projection pixels, shown in order.
    pub points: Vec<Point>,
    pub per_point_duration_s: f64,
    pub onset_delay_s: f64,
    pub view_label: String,
    /// Hub time at which the first target appears.
    pub start_t: f64,
}

impl CalibrationSchedule {
    /// 3×3 lattice, row-major from the top-left, inset by `margin_fraction`
    /// of the projection extent on every side.
    pub fn nine_point(layout: &TableLayout, margin_fraction: f64, view_label: impl Into<String>) -> Self {
        let (w, h) = (f64::from(layout.proj_width_px), f64::from(layout.proj_height_px));
        let xs = [margin_fraction * w, 0.5 * w, (1.0 - margin_fraction) * w];
        let ys = [margin_fraction * h, 0.5 * h, (1.0 - margin_fraction) * h];
        let points = ys.iter().flat_map(|&y| xs.iter().map(move |&x| Point::new(x, y))).collect();
        Self {
            points,
            per_point_duration_s: DEFAULT_POINT_DURATION_S,
            onset_delay_s: DEFAULT_ONSET_DELAY_S,
            view_label: view_label.into(),
            start_t: 0.0,
        }
    }

    pub fn with_start(mut self, start_t: f64) -> Self {
        self.start_t = start_t;
        self
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        if self.points.is_empty() {
            return Err(EvalError::InvalidSchedule("no targets"));
        }
        if !(self.per_point_duration_s.is_finite() && self.per_point_duration_s > 0.0) {
            return Err(EvalError::InvalidSchedule("per-point duration must be positive"));
        }
        if !(self.onset_delay_s >= 0.0 && self.onset_delay_s < self.per_point_duration_s) {
            return Err(EvalError::InvalidSchedule("onset delay must be in [0, per-point duration)"));
        }
        if !self.points.iter().all(|p| p.is_finite()) || !self.start_t.is_finite() {
            return Err(EvalError::InvalidSchedule("non-finite target or start time"));
        }
        Ok(())
    }

    pub fn onset(&self, index: usize) -> f64 {
        self.start_t + index as f64 * self.per_point_duration_s
    }

    pub fn end_t(&self) -> f64 {
        self.onset(self.points.len())
    }

    /// Index of the target on screen at `t`; each target owns `[onset, next onset)`.
    pub fn point_at(&self, t: f64) -> Option<usize> {
        if !(t >= self.start_t) {
            return None;
        }
        let i = ((t - self.start_t) / self.per_point_duration_s).floor() as usize;
        // floor can land one slot late right at a boundary
        let i = if i > 0 && t < self.onset(i) { i - 1 } else { i };
        (i < self.points.len()).then_some(i)
    }
}

/// A gaze sample with the hub time it arrived.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceivedSample {
    pub receipt_t: f64,
    pub msg: GazeSampleMsg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Retained { point: usize },
    Onset { point: usize },
    Quorum { point: usize },
    /// Outside every target's slot.
    Unscheduled,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterCounts {
    pub received: u64,
    pub retained: u64,
    pub discarded_onset: u64,
    pub discarded_quorum: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterResult {
    /// One verdict per input sample, in input order.
    pub verdicts: Vec<Verdict>,
    pub per_point: Vec<FilterCounts>,
    pub unscheduled: u64,
}

impl FilterResult {
    pub fn totals(&self) -> FilterCounts {
        self.per_point.iter().fold(FilterCounts::default(), |mut acc, c| {
            acc.received += c.received;
            acc.retained += c.retained;
            acc.discarded_onset += c.discarded_onset;
            acc.discarded_quorum += c.discarded_quorum;
            acc
        })
    }

    pub fn retained_indices(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.verdicts.iter().enumerate().filter_map(|(i, v)| match v {
            Verdict::Retained { point } => Some((i, *point)),
            _ => None,
        })
    }
}

/// Onset is checked before quorum, so a sample failing both counts as onset.
pub fn filter_samples(samples: &[ReceivedSample], sched: &CalibrationSchedule, layout: &TableLayout) -> FilterResult {
    let mut per_point = vec![FilterCounts::default(); sched.points.len()];
    let mut unscheduled = 0;
    let verdicts = samples
        .iter()
        .map(|s| {
            let Some(point) = sched.point_at(s.receipt_t) else {
                unscheduled += 1;
                return Verdict::Unscheduled;
            };
            let c = &mut per_point[point];
            c.received += 1;
            if s.receipt_t < sched.onset(point) + sched.onset_delay_s {
                c.discarded_onset += 1;
                Verdict::Onset { point }
            } else if distinct_known_markers(&s.msg.markers, layout) < MARKER_QUORUM {
                c.discarded_quorum += 1;
                Verdict::Quorum { point }
            } else {
                c.retained += 1;
                Verdict::Retained { point }
            }
        })
        .collect();
    FilterResult { verdicts, per_point, unscheduled }
}

/// A retained sample mapped into projection pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MappedSample {
    pub point: usize,
    pub p_px: Point,
}

/// Maps every retained sample through its own marker fit.
///
/// Returns the mapped samples and, per target, how many could not be mapped
/// (degenerate marker geometry or a point at infinity).
pub fn map_retained(
    samples: &[ReceivedSample],
    filtered: &FilterResult,
    layout: &TableLayout,
) -> (Vec<MappedSample>, Vec<u64>) {
    let mut unmappable = vec![0u64; filtered.per_point.len()];
    let mut mapped = Vec::new();
    for (i, point) in filtered.retained_indices() {
        let s = &samples[i].msg;
        let p = estimate_homography(&s.markers, layout)
            .and_then(|fit| fit.homography.apply(s.gaze_px))
            .map(|mm| layout.table_to_projection_px(mm));
        match p {
            Ok(p_px) if p_px.is_finite() => mapped.push(MappedSample { point, p_px }),
            _ => unmappable[point] += 1,
        }
    }
    (mapped, unmappable)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointAccuracy {
    pub index: usize,
    pub target_px: Point,
    /// Retained and mapped samples the statistics are computed over.
    pub samples: u64,
    pub mean_error_px: Option<f64>,
    pub std_error_px: Option<f64>,
    pub received: u64,
    pub discarded_onset: u64,
    pub discarded_quorum: u64,
    pub unmappable: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub view_label: String,
    pub distance_note: String,
    pub points: Vec<PointAccuracy>,
    pub min_mean_error_px: Option<f64>,
    pub max_mean_error_px: Option<f64>,
    /// Targets that kept no samples.
    pub empty_points: Vec<usize>,
    pub unscheduled: u64,
}

/// Mean and population deviation, summed in sorted order so the result
/// does not depend on sample order.
fn mean_std(mut d: Vec<f64>) -> Option<(f64, f64)> {
    if d.is_empty() {
        return None;
    }
    d.sort_by(f64::total_cmp);
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let mut sq: Vec<f64> = d.iter().map(|x| (x - mean) * (x - mean)).collect();
    sq.sort_by(f64::total_cmp);
    Some((mean, (sq.iter().sum::<f64>() / n).sqrt()))
}

pub fn accuracy_report(
    sched: &CalibrationSchedule,
    mapped: &[MappedSample],
    filtered: &FilterResult,
    unmappable: &[u64],
    distance_note: impl Into<String>,
) -> AccuracyReport {
    let mut dists: Vec<Vec<f64>> = vec![Vec::new(); sched.points.len()];
    for m in mapped {
        dists[m.point].push(m.p_px.distance(sched.points[m.point]));
    }
    let points: Vec<PointAccuracy> = dists
        .into_iter()
        .enumerate()
        .map(|(index, d)| {
            let samples = d.len() as u64;
            let stats = mean_std(d);
            let c = filtered.per_point.get(index).copied().unwrap_or_default();
            PointAccuracy {
                index,
                target_px: sched.points[index],
                samples,
                mean_error_px: stats.map(|s| s.0),
                std_error_px: stats.map(|s| s.1),
                received: c.received,
                discarded_onset: c.discarded_onset,
                discarded_quorum: c.discarded_quorum,
                unmappable: unmappable.get(index).copied().unwrap_or(0),
            }
        })
        .collect();
    let means = points.iter().filter_map(|p| p.mean_error_px);
    let min = means.clone().reduce(f64::min);
    let max = means.reduce(f64::max);
    AccuracyReport {
        view_label: sched.view_label.clone(),
        distance_note: distance_note.into(),
        empty_points: points.iter().filter(|p| p.samples == 0).map(|p| p.index).collect(),
        points,
        min_mean_error_px: min,
        max_mean_error_px: max,
        unscheduled: filtered.unscheduled,
    }
}

/// Filter, map and summarize in one go.
pub fn evaluate_samples(
    samples: &[ReceivedSample],
    sched: &CalibrationSchedule,
    layout: &TableLayout,
    distance_note: impl Into<String>,
) -> Result<AccuracyReport, EvalError> {
    sched.validate()?;
    let filtered = filter_samples(samples, sched, layout);
    let (mapped, unmappable) = map_retained(samples, &filtered, layout);
    Ok(accuracy_report(sched, &mapped, &filtered, &unmappable, distance_note))
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_owned(), |x| format!("{x:.2}"))
}

impl AccuracyReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "view: {}", self.view_label);
        let _ = writeln!(s, "distance: {}", self.distance_note);
        let _ = writeln!(
            s,
            "{:>5} {:>9} {:>9} {:>10} {:>9} {:>8} {:>8} {:>7} {:>9}",
            "point", "target_x", "target_y", "mean_px", "std_px", "samples", "onset", "quorum", "unmapped"
        );
        for p in &self.points {
            let _ = writeln!(
                s,
                "{:>5} {:>9.1} {:>9.1} {:>10} {:>9} {:>8} {:>8} {:>7} {:>9}",
                p.index,
                p.target_px.x,
                p.target_px.y,
                opt(p.mean_error_px),
                opt(p.std_error_px),
                p.samples,
                p.discarded_onset,
                p.discarded_quorum,
                p.unmappable
            );
        }
        let _ = writeln!(s, "mean error range: {} .. {} px", opt(self.min_mean_error_px), opt(self.max_mean_error_px));
        if !self.empty_points.is_empty() {
            let list: Vec<String> = self.empty_points.iter().map(ToString::to_string).collect();
            let _ = writeln!(s, "empty points: {}", list.join(", "));
        }
        let _ = writeln!(s, "unscheduled samples: {}", self.unscheduled);
        s
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Writes `report.txt` and `report.json` into `dir`, creating it.
    pub fn write_to(&self, dir: &Path) -> Result<(), EvalError> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("report.txt"), self.to_text())?;
        fs::write(dir.join("report.json"), self.to_json())?;
        Ok(())
    }
}
