use std::collections::HashMap;

use gazeshare_core::attention::{AttentionGrid, AttentionParams, Cell, GridGeometry, MappedGazeEvent};
use gazeshare_core::geometry::{estimate_homography, GeometryError, MARKER_QUORUM};
use gazeshare_core::{Homography, MarkerDetection, Point, TableLayout};
use proptest::prelude::*;

/// Table-to-camera maps resembling a head-mounted camera looking at the table.
fn camera_homography() -> impl Strategy<Value = Homography> {
    (
        0.6f64..1.6,
        -0.25f64..0.25,
        -0.25f64..0.25,
        0.6f64..1.6,
        -200.0f64..200.0,
        -200.0f64..200.0,
        -3e-4f64..3e-4,
        -3e-4f64..3e-4,
    )
        .prop_filter_map("singular", |(a, b, c, d, tx, ty, g, h)| {
            Homography::new([[a, b, tx], [c, d, ty], [g, h, 1.0]]).ok()
        })
}

fn detections(layout: &TableLayout, table_to_cam: &Homography, ids: &[u32]) -> Option<Vec<MarkerDetection>> {
    ids.iter()
        .map(|id| {
            let corners = layout.marker(*id)?.corners();
            let mut px = [Point::default(); 4];
            for (o, c) in px.iter_mut().zip(corners) {
                *o = table_to_cam.apply(c).ok()?;
            }
            Some(MarkerDetection { marker_id: *id, corners_px: px })
        })
        .collect()
}

proptest! {
    #[test]
    fn map_then_unmap_returns_point(h in camera_homography(), x in -100.0f64..900.0, y in -100.0f64..700.0) {
        let p = Point::new(x, y);
        if let Ok(q) = h.apply(p) {
            if let Ok(back) = h.inverse().apply(q) {
                let scale = 1.0 + p.norm();
                prop_assert!((back.x - p.x).abs() <= 1e-9 * scale);
                prop_assert!((back.y - p.y).abs() <= 1e-9 * scale);
            }
        }
    }

    #[test]
    fn dlt_is_exact_on_clean_corners(
        h in camera_homography(),
        ids in proptest::sample::subsequence(vec![0u32, 1, 2, 3, 4, 5], 3..=6),
    ) {
        let layout = TableLayout::default();
        let dets = detections(&layout, &h, &ids).unwrap();
        let fit = estimate_homography(&dets, &layout).unwrap();
        prop_assert!(fit.rms_residual < 1e-8, "rms {}", fit.rms_residual);
        prop_assert!(fit.homography.max_scaled_difference(&h.inverse()) < 1e-6);
    }

    #[test]
    fn sub_quorum_never_estimates(
        h in camera_homography(),
        ids in proptest::sample::subsequence(vec![0u32, 1, 2, 3, 4, 5], 0..MARKER_QUORUM),
    ) {
        let layout = TableLayout::default();
        let dets = detections(&layout, &h, &ids).unwrap();
        let is_quorum_error = matches!(
            estimate_homography(&dets, &layout),
            Err(GeometryError::QuorumNotMet { .. })
        );
        prop_assert!(is_quorum_error);
    }

    #[test]
    fn projection_pixels_are_linear(ax in 0.0f64..770.0, ay in 0.0f64..550.0, bx in 0.0f64..770.0, by in 0.0f64..550.0) {
        let layout = TableLayout::default();
        let (a, b) = (Point::new(ax, ay), Point::new(bx, by));
        let mid = layout.table_to_projection_px(a.midpoint(b));
        let mid2 = layout.table_to_projection_px(a).midpoint(layout.table_to_projection_px(b));
        prop_assert!((mid.x - mid2.x).abs() < 1e-9 && (mid.y - mid2.y).abs() < 1e-9);
    }

    /// Grid state equals a per-cell scalar re-simulation with explicit decay
    /// between timestamps.
    #[test]
    fn grid_matches_scalar_resimulation(
        steps in proptest::collection::vec((0usize..4, 0usize..14, 0usize..20, 0.0f64..0.5), 1..300),
    ) {
        let params = AttentionParams::default();
        let geo = GridGeometry::default();
        let mut grid = AttentionGrid::new(geo, params, 0.0).unwrap();
        let mut oracle: HashMap<(usize, usize), f64> = HashMap::new();
        let mut last_seen: HashMap<usize, f64> = HashMap::new();
        let mut last_t = 0.0;
        let mut t = 0.0;
        for (who, r, c, gap) in steps {
            t += gap;
            let dt = last_seen.get(&who).map_or(0.0, |prev| t - prev);
            last_seen.insert(who, t);
            let (cw, ch) = (770.0 / 20.0, 550.0 / 14.0);
            let p = Point::new((c as f64 + 0.5) * cw, (r as f64 + 0.5) * ch);

            grid.decay(t);
            grid.ingest(&MappedGazeEvent { participant_id: format!("p{who}").into(), t, p_mm: p, dt_s: dt });

            let f = 0.5f64.powf((t - last_t) / 10.0);
            for v in oracle.values_mut() {
                *v *= f;
            }
            let inc = dt.min(0.2);
            let v = oracle.entry((r, c)).or_insert(0.0);
            *v = (*v + inc).min(3.0);
            last_t = t;
        }
        for row in 0..14 {
            for col in 0..20 {
                let want = oracle.get(&(row, col)).copied().unwrap_or(0.0);
                let got = grid.dwell(Cell::new(row, col));
                prop_assert!((got - want).abs() <= 1e-9, "cell ({row},{col}) {got} vs {want}");
                prop_assert!((0.0..=3.0).contains(&got));
            }
        }
    }
}
