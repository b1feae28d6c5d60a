//! Matching projected model points to heatmap maxima.
//!
//! Point-model points search a circular window around their current
//! projection on the matching point channel. Split line points search along
//! the image-space perpendicular of their line on the matching line channel.
//! Both keep the best value only if it clears the acceptance threshold.

use std::fmt::Write as _;

use nalgebra::Vector2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{pose_point_jacobian, CameraIntrinsics, Pose, PoseGraph};
use crate::heatmap::{Channel, ImageGrid, ProjectionImageSet};
use crate::turbine::{model_point, point_position, ModelPointId, TurbineParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    /// Radius of the circular point search, pixels.
    pub window_radius: f64,
    /// Half-length of the perpendicular line search, pixels.
    pub line_search_halflength: f64,
    pub accept_threshold: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            window_radius: 15.0,
            line_search_halflength: 20.0,
            accept_threshold: 0.5,
        }
    }
}

impl SearchConfig {
    /// Scales the pixel sizes from the 128-pixel reference width.
    pub fn scaled_for_width(mut self, width: usize) -> Self {
        let s = width as f64 / 128.0;
        self.window_radius *= s;
        self.line_search_halflength *= s;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.window_radius >= 1.0 && self.line_search_halflength >= 1.0) {
            return Err(Error::invalid("search radius and half-length must be at least 1 px"));
        }
        if !(self.accept_threshold > 0.0 && self.accept_threshold < 1.0) {
            return Err(Error::invalid("acceptance threshold must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Best accepted pixel of a single search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeakMatch {
    pub target: Vector2<f64>,
    pub peak_value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub frame_index: usize,
    pub model_id: ModelPointId,
    pub target: Vector2<f64>,
    pub peak_value: f64,
}

/// Circular-window search for the brightest pixel around `a_star`.
///
/// Ties go to the pixel closest to `a_star`, then to row-major order.
pub fn point_correspondence(
    grid: &ImageGrid,
    a_star: &Vector2<f64>,
    cfg: &SearchConfig,
) -> Option<PeakMatch> {
    let radius = cfg.window_radius;
    let max_u = (grid.width() - 1) as f64;
    let max_v = (grid.height() - 1) as f64;
    let u0 = (a_star.x - radius).ceil().max(0.0);
    let u1 = (a_star.x + radius).floor().min(max_u);
    let v0 = (a_star.y - radius).ceil().max(0.0);
    let v1 = (a_star.y + radius).floor().min(max_v);
    if !(u0 <= u1 && v0 <= v1) {
        return None;
    }
    let r2 = radius * radius;
    let mut best: Option<(f64, f64, Vector2<f64>)> = None;
    for v in v0 as usize..=v1 as usize {
        for u in u0 as usize..=u1 as usize {
            let p = Vector2::new(u as f64, v as f64);
            let d2 = (p - a_star).norm_squared();
            if d2 > r2 {
                continue;
            }
            let value = grid.get(u, v);
            let better = match best {
                None => true,
                Some((bv, bd, _)) => value > bv || (value == bv && d2 < bd),
            };
            if better {
                best = Some((value, d2, p));
            }
        }
    }
    let (value, _, target) = best?;
    (value >= cfg.accept_threshold).then_some(PeakMatch {
        target,
        peak_value: value,
    })
}

/// Perpendicular search across a projected line, in 1-pixel steps.
///
/// `image_dir` is the unit direction of the projected line at `a_star`.
/// Offsets are visited as `0, +1, -1, +2, -2, ...` so ties resolve to the
/// smaller offset.
pub fn line_correspondence(
    grid: &ImageGrid,
    a_star: &Vector2<f64>,
    image_dir: &Vector2<f64>,
    cfg: &SearchConfig,
) -> Option<PeakMatch> {
    let normal = Vector2::new(-image_dir.y, image_dir.x);
    let steps = cfg.line_search_halflength.floor() as i64;
    let mut best: Option<PeakMatch> = None;
    for k in 0..=2 * steps {
        let offset = if k % 2 == 1 { (k + 1) / 2 } else { -(k / 2) };
        let pos = a_star + normal * offset as f64;
        let Some(value) = grid.sample_bilinear(&pos) else {
            continue;
        };
        if best.is_none_or(|b| value > b.peak_value) {
            best = Some(PeakMatch {
                target: pos,
                peak_value: value,
            });
        }
    }
    best.filter(|b| b.peak_value >= cfg.accept_threshold)
}

/// Point-model correspondences for one frame.
pub fn frame_point_correspondences(
    pose: &Pose,
    theta: &TurbineParams,
    k: &CameraIntrinsics,
    heatmaps: &ProjectionImageSet,
    cfg: &SearchConfig,
) -> Vec<Correspondence> {
    let mut out = Vec::new();
    for id in ModelPointId::points() {
        let ModelPointId::Point(p) = id else { unreachable!() };
        let Ok(a_star) = crate::geometry::project(pose, k, &point_position(theta, p)) else {
            continue;
        };
        if let Some(m) = point_correspondence(heatmaps.channel(Channel::for_point(p)), &a_star, cfg) {
            out.push(Correspondence {
                frame_index: heatmaps.frame_index,
                model_id: id,
                target: m.target,
                peak_value: m.peak_value,
            });
        }
    }
    out
}

/// Split-line correspondences for one frame.
pub fn frame_line_correspondences(
    pose: &Pose,
    theta: &TurbineParams,
    k: &CameraIntrinsics,
    heatmaps: &ProjectionImageSet,
    cfg: &SearchConfig,
    split_count: usize,
) -> Vec<Correspondence> {
    let mut out = Vec::new();
    for id in ModelPointId::line_points(split_count) {
        let ModelPointId::Line { line, .. } = id else { unreachable!() };
        let (start, end) = line.endpoints();
        let along = point_position(theta, end) - point_position(theta, start);
        let Ok(proj) = pose_point_jacobian(pose, k, &model_point(theta, id)) else {
            continue;
        };
        // image direction of the projected 3-D line at this point
        let dir = proj.d_point * along;
        if dir.norm() < 1e-9 {
            continue;
        }
        let dir = dir.normalize();
        let grid = heatmaps.channel(Channel::for_line(line));
        if let Some(m) = line_correspondence(grid, &proj.pixel, &dir, cfg) {
            out.push(Correspondence {
                frame_index: heatmaps.frame_index,
                model_id: id,
                target: m.target,
                peak_value: m.peak_value,
            });
        }
    }
    out
}

/// Which model point sets to match.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MatchSelection {
    pub points: bool,
    pub lines: bool,
}

impl MatchSelection {
    pub const ALL: MatchSelection = MatchSelection {
        points: true,
        lines: true,
    };
}

/// Correspondences for every vertex of the graph, in frame order.
pub fn build_correspondences(
    graph: &PoseGraph,
    theta: &TurbineParams,
    k: &CameraIntrinsics,
    heatmaps: &[ProjectionImageSet],
    cfg: &SearchConfig,
    split_count: usize,
) -> Result<Vec<Correspondence>> {
    let found = build_selected(&graph.vertices, theta, k, heatmaps, cfg, split_count, MatchSelection::ALL)?;
    Ok(found.into_iter().map(|(_, c)| c).collect())
}

pub(crate) fn build_selected(
    poses: &[Pose],
    theta: &TurbineParams,
    k: &CameraIntrinsics,
    heatmaps: &[ProjectionImageSet],
    cfg: &SearchConfig,
    split_count: usize,
    select: MatchSelection,
) -> Result<Vec<(usize, Correspondence)>> {
    if heatmaps.len() != poses.len() {
        return Err(Error::invalid(format!(
            "{} heatmap sets for {} vertices",
            heatmaps.len(),
            poses.len()
        )));
    }
    let per_frame: Vec<Vec<Correspondence>> = poses
        .par_iter()
        .zip(heatmaps.par_iter())
        .map(|(pose, maps)| {
            let mut out = Vec::new();
            if select.points {
                out.extend(frame_point_correspondences(pose, theta, k, maps, cfg));
            }
            if select.lines {
                out.extend(frame_line_correspondences(pose, theta, k, maps, cfg, split_count));
            }
            out
        })
        .collect();
    Ok(per_frame
        .into_iter()
        .enumerate()
        .flat_map(|(i, cs)| cs.into_iter().map(move |c| (i, c)))
        .collect())
}

/// Debug dump with columns `frame,model_id,u,v,peak`.
pub fn to_csv(corrs: &[Correspondence]) -> String {
    let mut s = String::from("frame,model_id,u,v,peak\n");
    for c in corrs {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            c.frame_index,
            c.model_id.label(),
            c.target.x,
            c.target.y,
            c.peak_value
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaussian_peak(w: usize, h: usize, cx: f64, cy: f64, sigma: f64) -> ImageGrid {
        ImageGrid::from_fn(w, h, |u, v| {
            let d2 = (u as f64 - cx).powi(2) + (v as f64 - cy).powi(2);
            (-d2 / (2.0 * sigma * sigma)).exp()
        })
    }

    fn cfg() -> SearchConfig {
        SearchConfig::default()
    }

    #[test]
    fn point_search_finds_peak() {
        let grid = gaussian_peak(128, 128, 40.0, 40.0, 3.0);
        let m = point_correspondence(&grid, &Vector2::new(43.0, 38.0), &cfg()).unwrap();
        assert_eq!(m.target, Vector2::new(40.0, 40.0));
        assert_eq!(m.peak_value, 1.0);
    }

    #[test]
    fn point_search_rejects_empty_and_distant() {
        let zero = ImageGrid::zeros(128, 128);
        assert!(point_correspondence(&zero, &Vector2::new(40.0, 40.0), &cfg()).is_none());
        let grid = gaussian_peak(128, 128, 40.0, 40.0, 3.0);
        assert!(point_correspondence(&grid, &Vector2::new(80.0, 80.0), &cfg()).is_none());
        assert!(point_correspondence(&grid, &Vector2::new(-20.0, 40.0), &cfg()).is_none());
    }

    #[test]
    fn point_search_ties_prefer_nearest() {
        let mut grid = vec![0.0; 100];
        grid[5 * 10 + 2] = 0.9;
        grid[5 * 10 + 7] = 0.9;
        let grid = ImageGrid::new(10, 10, grid).unwrap();
        let m = point_correspondence(&grid, &Vector2::new(6.0, 5.0), &cfg()).unwrap();
        assert_eq!(m.target, Vector2::new(7.0, 5.0));
        // equidistant: row-major order wins
        let m = point_correspondence(&grid, &Vector2::new(4.5, 5.0), &cfg()).unwrap();
        assert_eq!(m.target, Vector2::new(2.0, 5.0));
    }

    fn ridge(col: usize) -> ImageGrid {
        ImageGrid::from_fn(128, 128, |u, _| if u == col { 1.0 } else { 0.0 })
    }

    #[test]
    fn line_search_crosses_ridge() {
        let m = line_correspondence(
            &ridge(50),
            &Vector2::new(53.0, 30.0),
            &Vector2::new(0.0, 1.0),
            &cfg(),
        )
        .unwrap();
        assert_eq!(m.target, Vector2::new(50.0, 30.0));
        assert_eq!(m.peak_value, 1.0);
    }

    #[test]
    fn line_search_misses() {
        let dir = Vector2::new(0.0, 1.0);
        let zero = ImageGrid::zeros(128, 128);
        assert!(line_correspondence(&zero, &Vector2::new(53.0, 30.0), &dir, &cfg()).is_none());
        assert!(line_correspondence(&ridge(50), &Vector2::new(80.0, 30.0), &dir, &cfg()).is_none());
        assert!(line_correspondence(&ridge(50), &Vector2::new(53.0, -5.0), &dir, &cfg()).is_none());
    }

    #[test]
    fn wider_window_never_loses_matches() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let grid = gaussian_peak(64, 64, rng.gen_range(0.0..64.0), rng.gen_range(0.0..64.0), 2.5);
            let a = Vector2::new(rng.gen_range(-10.0..74.0), rng.gen_range(-10.0..74.0));
            let small = SearchConfig { window_radius: 5.0, ..cfg() };
            let large = SearchConfig { window_radius: 12.0, ..cfg() };
            if point_correspondence(&grid, &a, &small).is_some() {
                assert!(point_correspondence(&grid, &a, &large).is_some());
            }
        }
    }

    #[test]
    fn csv_dump() {
        let c = Correspondence {
            frame_index: 3,
            model_id: ModelPointId::Point(crate::turbine::PointId::Hub),
            target: Vector2::new(1.0, 2.5),
            peak_value: 0.75,
        };
        assert_eq!(to_csv(&[c]), "frame,model_id,u,v,peak\n3,r,1,2.5,0.75\n");
    }
}
