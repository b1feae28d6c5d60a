mod common;

use nalgebra::{UnitQuaternion, Vector2, Vector3};
use proptest::prelude::*;

use turbine_fit::correspondence::{build_correspondences, line_correspondence, point_correspondence, SearchConfig};
use turbine_fit::geometry::project;
use turbine_fit::simeval::{Scene, SceneConfig};
use turbine_fit::turbine::model_point;
use turbine_fit::{ImageGrid, Pose, PoseGraph, ProjectionImageSet, RenderConfig};

fn blob(cx: f64, cy: f64) -> ImageGrid {
    ImageGrid::from_fn(128, 128, |u, v| {
        let d2 = (u as f64 - cx).powi(2) + (v as f64 - cy).powi(2);
        (-d2 / 18.0).exp()
    })
}

#[test]
fn point_search_examples() {
    let cfg = SearchConfig::default();
    let grid = blob(40.0, 40.0);
    let m = point_correspondence(&grid, &Vector2::new(43.0, 38.0), &cfg).unwrap();
    assert_eq!(m.target, Vector2::new(40.0, 40.0));
    assert!(point_correspondence(&ImageGrid::zeros(128, 128), &Vector2::new(43.0, 38.0), &cfg).is_none());
    assert!(point_correspondence(&grid, &Vector2::new(80.0, 80.0), &cfg).is_none());
}

#[test]
fn line_search_examples() {
    let cfg = SearchConfig::default();
    let ridge = |col: f64| ImageGrid::from_fn(128, 128, |u, _| if u as f64 == col { 1.0 } else { 0.0 });
    let dir = Vector2::new(0.0, 1.0);
    let m = line_correspondence(&ridge(50.0), &Vector2::new(53.0, 30.0), &dir, &cfg).unwrap();
    assert_eq!(m.target, Vector2::new(50.0, 30.0));
    assert!(line_correspondence(&ImageGrid::zeros(128, 128), &Vector2::new(53.0, 30.0), &dir, &cfg).is_none());
    assert!(line_correspondence(&ridge(50.0), &Vector2::new(75.0, 30.0), &dir, &cfg).is_none());
}

fn noise_free_scene(frames: usize) -> (Scene, Vec<ProjectionImageSet>) {
    let cfg = SceneConfig {
        frame_count: frames,
        render: RenderConfig::noise_free(),
        ..Default::default()
    };
    let scene = Scene::generate(&cfg, 0).unwrap();
    let maps = scene.render().unwrap();
    (scene, maps)
}

#[test]
fn ground_truth_matches_land_on_projections() {
    let (scene, maps) = noise_free_scene(20);
    let graph = PoseGraph::from_trajectory(scene.trajectory_gt.clone()).unwrap();
    let corrs = build_correspondences(&graph, &scene.theta_gt, &scene.k, &maps, &SearchConfig::default(), 8).unwrap();
    assert!(!corrs.is_empty());
    let mut worst = 0.0f64;
    for c in &corrs {
        let pose = &scene.trajectory_gt[c.frame_index];
        let a = project(pose, &scene.k, &model_point(&scene.theta_gt, c.model_id)).unwrap();
        worst = worst.max((a - c.target).norm());
    }
    assert!(worst <= 1.0, "worst match {worst} px from its projection");
}

#[test]
fn empty_heatmaps_give_no_matches() {
    let (scene, _) = noise_free_scene(4);
    let graph = PoseGraph::from_trajectory(scene.trajectory_gt.clone()).unwrap();
    let maps: Vec<_> = (0..4).map(|i| ProjectionImageSet::empty(i, 128, 128)).collect();
    let corrs = build_correspondences(&graph, &scene.theta_gt, &scene.k, &maps, &SearchConfig::default(), 8).unwrap();
    assert!(corrs.is_empty());
}

#[test]
fn frame_facing_away_contributes_nothing() {
    let (scene, maps) = noise_free_scene(4);
    let mut poses = scene.trajectory_gt.clone();
    let flip = UnitQuaternion::from_axis_angle(&Vector3::y_axis(), std::f64::consts::PI);
    poses[2] = Pose::new(flip * poses[2].q, flip * poses[2].t);
    let graph = PoseGraph::from_trajectory(poses).unwrap();
    let corrs = build_correspondences(&graph, &scene.theta_gt, &scene.k, &maps, &SearchConfig::default(), 8).unwrap();
    assert!(corrs.iter().all(|c| c.frame_index != 2));
    assert!(corrs.iter().any(|c| c.frame_index == 1));
}

#[test]
fn matching_is_deterministic() {
    let cfg = SceneConfig {
        frame_count: 6,
        ..Default::default()
    };
    let scene = Scene::generate(&cfg, 11).unwrap();
    let maps = scene.render().unwrap();
    let graph = PoseGraph::from_trajectory(scene.trajectory_gt.clone()).unwrap();
    let run = || build_correspondences(&graph, &scene.theta_gt, &scene.k, &maps, &SearchConfig::default(), 8).unwrap();
    assert_eq!(run(), run());
}

fn arb_grid() -> impl Strategy<Value = ImageGrid> {
    (0.0..64.0f64, 0.0..64.0f64, 1.0..5.0f64, 0.3..1.0f64, any::<u64>()).prop_map(|(cx, cy, s, peak, seed)| {
        let mut state = seed | 1;
        ImageGrid::from_fn(64, 64, |u, v| {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            let noise = (state % 1000) as f64 / 4000.0;
            let d2 = (u as f64 - cx).powi(2) + (v as f64 - cy).powi(2);
            (peak * (-d2 / (2.0 * s * s)).exp() + noise).min(1.0)
        })
    })
}

proptest! {
    #[test]
    fn point_targets_are_valid(grid in arb_grid(), ax in -20.0..84.0f64, ay in -20.0..84.0f64, r in 1.0..20.0f64) {
        let cfg = SearchConfig { window_radius: r, ..Default::default() };
        let a = Vector2::new(ax, ay);
        if let Some(m) = point_correspondence(&grid, &a, &cfg) {
            prop_assert!(grid.contains(&m.target));
            prop_assert!(m.peak_value >= cfg.accept_threshold);
            prop_assert!((m.target - a).norm() <= r);
        }
        prop_assert_eq!(point_correspondence(&grid, &a, &cfg), point_correspondence(&grid, &a, &cfg));
    }

    #[test]
    fn wider_window_keeps_matches(grid in arb_grid(), ax in -20.0..84.0f64, ay in -20.0..84.0f64, r in 1.0..15.0f64, extra in 0.0..10.0f64) {
        let small = SearchConfig { window_radius: r, ..Default::default() };
        let large = SearchConfig { window_radius: r + extra, ..Default::default() };
        let a = Vector2::new(ax, ay);
        if point_correspondence(&grid, &a, &small).is_some() {
            prop_assert!(point_correspondence(&grid, &a, &large).is_some());
        }
    }

    #[test]
    fn line_targets_are_valid(grid in arb_grid(), ax in -10.0..74.0f64, ay in -10.0..74.0f64, angle in 0.0..std::f64::consts::TAU) {
        let cfg = SearchConfig::default();
        let dir = Vector2::new(angle.cos(), angle.sin());
        if let Some(m) = line_correspondence(&grid, &Vector2::new(ax, ay), &dir, &cfg) {
            prop_assert!(grid.contains(&m.target));
            prop_assert!(m.peak_value >= cfg.accept_threshold);
        }
    }
}
