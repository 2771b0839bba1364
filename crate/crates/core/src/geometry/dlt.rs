//! Normalised direct linear transform.

use alloc::vec::Vec;

use super::linalg::{inv3, mat3_mul, jacobi_svd, Mat3};
use super::{GeometryError, Homography, HomographyFit, MarkerDetection, Point, TableLayout};
use crate::math::sqrt;

/// Fewest distinct markers that still yield a usable mapping.
pub const MARKER_QUORUM: usize = 3;

// Ratio of the second-smallest to the largest singular value below which the
// null space is treated as more than one-dimensional.
const RANK_TOLERANCE: f64 = 1e-9;

/// Similarity that moves the centroid to the origin and the mean distance
/// from it to sqrt(2).
fn conditioning(points: &[Point]) -> Result<Mat3, GeometryError> {
    let n = points.len() as f64;
    let cx = points.iter().map(|p| p.x).sum::<f64>() / n;
    let cy = points.iter().map(|p| p.y).sum::<f64>() / n;
    let mean_dist = points.iter().map(|p| p.distance(Point::new(cx, cy))).sum::<f64>() / n;
    if !(mean_dist > 0.0 && mean_dist.is_finite()) {
        return Err(GeometryError::DegenerateConfiguration);
    }
    let s = sqrt(2.0) / mean_dist;
    Ok([[s, 0.0, -s * cx], [0.0, s, -s * cy], [0.0, 0.0, 1.0]])
}

fn transform(t: &Mat3, p: Point) -> Point {
    Point::new(t[0][0] * p.x + t[0][2], t[1][1] * p.y + t[1][2])
}

/// Least-squares homography taking every `src[i]` to `dst[i]`.
///
/// Needs at least four correspondences, no three of which may be the only
/// non-collinear support; rank-deficient systems are rejected.
pub fn fit_homography(src: &[Point], dst: &[Point]) -> Result<HomographyFit, GeometryError> {
    if src.len() != dst.len() || src.len() < 4 {
        return Err(GeometryError::DegenerateConfiguration);
    }
    if !src.iter().chain(dst).all(|p| p.is_finite()) {
        return Err(GeometryError::DegenerateConfiguration);
    }
    let t_src = conditioning(src)?;
    let t_dst = conditioning(dst)?;

    let mut rows: Vec<[f64; 9]> = Vec::with_capacity(2 * src.len());
    for (s, d) in src.iter().zip(dst) {
        let s = transform(&t_src, *s);
        let d = transform(&t_dst, *d);
        rows.push([-s.x, -s.y, -1.0, 0.0, 0.0, 0.0, d.x * s.x, d.x * s.y, d.x]);
        rows.push([0.0, 0.0, 0.0, -s.x, -s.y, -1.0, d.y * s.x, d.y * s.y, d.y]);
    }

    let svd = jacobi_svd(&rows);
    let order = svd.ascending();
    let largest = svd.values[order[8]];
    if !(largest > 0.0) || svd.values[order[1]] <= RANK_TOLERANCE * largest {
        return Err(GeometryError::DegenerateConfiguration);
    }
    let h = svd.vectors[order[0]];
    let normalized = [[h[0], h[1], h[2]], [h[3], h[4], h[5]], [h[6], h[7], h[8]]];
    let m = mat3_mul(&inv3(&t_dst), &mat3_mul(&normalized, &t_src));
    let homography = Homography::new(m).map_err(|_| GeometryError::DegenerateConfiguration)?;

    let mut sq = 0.0;
    for (s, d) in src.iter().zip(dst) {
        let mapped = homography.apply(*s).map_err(|_| GeometryError::DegenerateConfiguration)?;
        let e = mapped.distance(*d);
        sq += e * e;
    }
    let rms_residual = sqrt(sq / src.len() as f64);
    Ok(HomographyFit { homography, rms_residual, markers_used: 0 })
}

/// Scene-camera to table homography from detected marker corners.
///
/// Detections of ids missing from `layout` are ignored, and a repeated id only
/// contributes its first detection. Fewer than [`MARKER_QUORUM`] distinct
/// usable markers is [`GeometryError::QuorumNotMet`].
pub fn estimate_homography(
    detections: &[MarkerDetection],
    layout: &TableLayout,
) -> Result<HomographyFit, GeometryError> {
    let mut used: Vec<u32> = Vec::with_capacity(detections.len());
    let mut src = Vec::with_capacity(4 * detections.len());
    let mut dst = Vec::with_capacity(4 * detections.len());
    for det in detections {
        let Some(spec) = layout.marker(det.marker_id) else { continue };
        if used.contains(&det.marker_id) {
            continue;
        }
        if !det.is_finite() {
            return Err(GeometryError::InvalidDetection(det.marker_id));
        }
        used.push(det.marker_id);
        src.extend_from_slice(&det.corners_px);
        dst.extend_from_slice(&spec.corners());
    }
    if used.len() < MARKER_QUORUM {
        return Err(GeometryError::QuorumNotMet { found: used.len(), required: MARKER_QUORUM });
    }
    let mut fit = fit_homography(&src, &dst)?;
    fit.markers_used = used.len();
    Ok(fit)
}

/// Number of distinct markers in `detections` that `layout` knows about.
pub fn distinct_known_markers(detections: &[MarkerDetection], layout: &TableLayout) -> usize {
    let mut seen: Vec<u32> = Vec::new();
    for d in detections {
        if layout.marker(d.marker_id).is_some() && !seen.contains(&d.marker_id) {
            seen.push(d.marker_id);
        }
    }
    seen.len()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::MarkerSpec;

    fn project(h: &Homography, corners: [Point; 4]) -> [Point; 4] {
        corners.map(|c| h.apply(c).unwrap())
    }

    /// Detections a camera with table-to-image map `table_to_cam` would report.
    fn detections_for(layout: &TableLayout, table_to_cam: &Homography, ids: &[u32]) -> Vec<MarkerDetection> {
        ids.iter()
            .map(|id| MarkerDetection {
                marker_id: *id,
                corners_px: project(table_to_cam, layout.marker(*id).unwrap().corners()),
            })
            .collect()
    }

    #[test]
    fn identity_from_replicated_unit_square() {
        let square = [Point::new(0.0, 0.0), Point::new(1.0, 0.0), Point::new(1.0, 1.0), Point::new(0.0, 1.0)];
        let mut src = Vec::new();
        for _ in 0..3 {
            src.extend_from_slice(&square);
        }
        let fit = fit_homography(&src, &src).unwrap();
        let m = fit.homography.matrix();
        for r in 0..3 {
            for c in 0..3 {
                let want = if r == c { 1.0 } else { 0.0 };
                assert!((m[r][c] - want).abs() < 1e-9, "{m:?}");
            }
        }
    }

    #[test]
    fn identity_layout_detections_recover_identity() {
        let layout = TableLayout {
            markers: (0..3).map(|i| MarkerSpec::new(i, Point::new(0.5 + 3.0 * i as f64, 0.5 + (i % 2) as f64 * 4.0), 1.0)).collect(),
            ..TableLayout::default()
        };
        let dets = detections_for(&layout, &Homography::IDENTITY, &[0, 1, 2]);
        let fit = estimate_homography(&dets, &layout).unwrap();
        assert!(fit.homography.max_scaled_difference(&Homography::IDENTITY) < 1e-9);
        assert_eq!(fit.markers_used, 3);
    }

    #[test]
    fn recovers_known_projective_map() {
        let layout = TableLayout::default();
        // Camera pixels -> table mm ground truth.
        let truth = Homography::new([
            [0.82, 0.07, -45.0],
            [-0.05, 0.91, 12.5],
            [2.1e-4, -1.3e-4, 1.0],
        ])
        .unwrap();
        let dets = detections_for(&layout, &truth.inverse(), &[0, 1, 2]);
        let fit = estimate_homography(&dets, &layout).unwrap();
        let (got, want) = (fit.homography.matrix(), truth.matrix());
        for r in 0..3 {
            for c in 0..3 {
                assert!((got[r][c] - want[r][c]).abs() <= 1e-6 * want[r][c].abs().max(1e-3), "{got:?}");
            }
        }
        assert!(fit.rms_residual < 1e-8, "{}", fit.rms_residual);
    }

    #[test]
    fn two_markers_fail_quorum() {
        let layout = TableLayout::default();
        let dets = detections_for(&layout, &Homography::IDENTITY, &[0, 1]);
        assert_eq!(
            estimate_homography(&dets, &layout),
            Err(GeometryError::QuorumNotMet { found: 2, required: 3 })
        );
    }

    #[test]
    fn repeated_and_unknown_ids_do_not_count() {
        let layout = TableLayout::default();
        let mut dets = detections_for(&layout, &Homography::IDENTITY, &[0, 1, 1]);
        dets.push(MarkerDetection { marker_id: 42, corners_px: [Point::new(1.0, 1.0); 4] });
        assert_eq!(distinct_known_markers(&dets, &layout), 2);
        assert!(matches!(estimate_homography(&dets, &layout), Err(GeometryError::QuorumNotMet { found: 2, .. })));
    }

    #[test]
    fn collinear_points_are_degenerate() {
        let src: Vec<Point> = (0..12).map(|i| Point::new(i as f64, 2.0 * i as f64)).collect();
        let dst: Vec<Point> = (0..12).map(|i| Point::new(i as f64, 3.0)).collect();
        assert_eq!(fit_homography(&src, &dst), Err(GeometryError::DegenerateConfiguration));
    }

    #[test]
    fn collapsed_detection_is_degenerate() {
        let layout = TableLayout::default();
        let dets: Vec<_> = (0..3)
            .map(|id| MarkerDetection { marker_id: id, corners_px: [Point::new(5.0, 5.0); 4] })
            .collect();
        assert_eq!(estimate_homography(&dets, &layout), Err(GeometryError::DegenerateConfiguration));
    }

    #[test]
    fn non_finite_corner_rejected() {
        let layout = TableLayout::default();
        let mut dets = detections_for(&layout, &Homography::IDENTITY, &[0, 1, 2]);
        dets[1].corners_px[2].x = f64::NAN;
        assert_eq!(estimate_homography(&dets, &layout), Err(GeometryError::InvalidDetection(1)));
    }
}
