//! Finite-difference and construction oracles shared by the focused suites
//! and the acceptance run. Each check panics on the first violation.

use std::sync::Arc;

use nalgebra::{DMatrix, UnitQuaternion, Vector2, Vector3, Vector6};
use rand::Rng;

use turbine_fit::geometry::{pose_point_jacobian, project, relative_pose, PoseTangent};
use turbine_fit::heatmap::{neg_log_prob, render_synthetic};
use turbine_fit::optimizer::{
    interpolation_with_jacobian, pairwise_jacobians, project_model_point, residual_pairwise,
    residual_unary_correspondence, residual_unary_interpolation, InformationMatrix,
};
use turbine_fit::correspondence::SearchConfig;
use turbine_fit::optimizer::{build_problem, solve, CostConfig, SolverConfig};
use turbine_fit::simeval::{add_pose_noise, NoiseSpec, Scene, SceneConfig};
use turbine_fit::turbine::{instantiate_points, model_point, point_jacobian};
use turbine_fit::{ImageGrid, PoseGraph, ProjectionImageSet, ModelPointId, Pose, RelativePose, RenderConfig, TurbineParams};

use super::{assert_close, central_diff, intrinsics, random_pose, random_theta, rng};

const CONFIGS: u64 = 100;
const H: f64 = 1e-6;
const REL: f64 = 1e-4;
const ABS: f64 = 1e-6;

fn all_ids() -> Vec<ModelPointId> {
    ModelPointId::points().chain(ModelPointId::line_points(8)).collect()
}

fn bump_theta(theta: &TurbineParams, j: usize, h: f64) -> TurbineParams {
    let mut v = theta.to_vector();
    v[j] += h;
    TurbineParams::from_vector(&v)
}

fn bump_pose(pose: &Pose, j: usize, h: f64) -> Pose {
    let mut d = PoseTangent::zeros();
    d[j] = h;
    pose.retract(&d)
}

fn to_dm<const R: usize, const C: usize>(m: &nalgebra::SMatrix<f64, R, C>) -> DMatrix<f64> {
    DMatrix::from_column_slice(R, C, m.as_slice())
}

pub fn turbine_point_jacobian_matches_finite_differences() {
    let mut rng = rng(1);
    for _ in 0..CONFIGS {
        let theta = random_theta(&mut rng);
        for id in all_ids() {
            let fd = central_diff(7, H, |j, h| model_point(&bump_theta(&theta, j, h), id).as_slice().to_vec());
            assert_close(&to_dm(&point_jacobian(&theta, id)), &fd, REL, ABS, &id.label());
        }
    }
}

pub fn projection_jacobians_match_finite_differences() {
    let mut rng = rng(2);
    let k = intrinsics();
    for _ in 0..CONFIGS {
        let theta = random_theta(&mut rng);
        let pose = random_pose(&mut rng, &theta);
        let p = model_point(&theta, ModelPointId::points().nth(rng.gen_range(0..6)).unwrap());
        let j = pose_point_jacobian(&pose, &k, &p).unwrap();
        let fd_pose = central_diff(6, H, |c, h| project(&bump_pose(&pose, c, h), &k, &p).unwrap().as_slice().to_vec());
        assert_close(&to_dm(&j.d_pose), &fd_pose, REL, ABS, "d_pose");
        let fd_point = central_diff(3, H, |c, h| {
            let mut q = p;
            q[c] += h;
            project(&pose, &k, &q).unwrap().as_slice().to_vec()
        });
        assert_close(&to_dm(&j.d_point), &fd_point, REL, ABS, "d_point");
    }
}

pub fn correspondence_residual_jacobians_match_finite_differences() {
    let mut rng = rng(3);
    let k = intrinsics();
    let ids = all_ids();
    for _ in 0..CONFIGS {
        let theta = random_theta(&mut rng);
        let pose = random_pose(&mut rng, &theta);
        let id = ids[rng.gen_range(0..ids.len())];
        let target = Vector2::new(rng.gen_range(0.0..128.0), rng.gen_range(0.0..128.0));
        let lambda: f64 = rng.gen_range(0.05..3.0);
        let proj = project_model_point(&pose, &theta, &k, id).unwrap();
        let s = lambda.sqrt();
        let fd_pose = central_diff(6, H, |c, h| {
            residual_unary_correspondence(&bump_pose(&pose, c, h), &theta, &k, id, &target, lambda)
                .unwrap()
                .as_slice()
                .to_vec()
        });
        assert_close(&(to_dm(&proj.d_pose) * s), &fd_pose, REL, ABS, "corr d_pose");
        let fd_theta = central_diff(7, H, |c, h| {
            residual_unary_correspondence(&pose, &bump_theta(&theta, c, h), &k, id, &target, lambda)
                .unwrap()
                .as_slice()
                .to_vec()
        });
        assert_close(&(to_dm(&proj.d_theta) * s), &fd_theta, REL, ABS, "corr d_theta");
    }
}

pub fn interpolation_residual_jacobians_match_finite_differences() {
    let mut rng = rng(4);
    let k = intrinsics();
    let ids = all_ids();
    let mut checked = 0;
    while checked < CONFIGS {
        let theta = random_theta(&mut rng);
        let pose = random_pose(&mut rng, &theta);
        let maps = render_synthetic(&theta, &pose, &k, (128, 128), &RenderConfig::default(), checked as usize).unwrap();
        // evaluate slightly off the rendering pose so points sit on peak flanks
        let est = pose.retract(&Vector6::from_fn(|i, _| {
            if i < 3 {
                rng.gen_range(-0.3..0.3)
            } else {
                rng.gen_range(-0.01..0.01)
            }
        }));
        let id = ids[rng.gen_range(0..ids.len())];
        let grid = maps.channel(turbine_fit::Channel::for_model_point(id));
        let Ok(px) = project(&est, &k, &model_point(&theta, id)) else { continue };
        let value = grid.interpolate(&px).0;
        if !(1e-3..0.99).contains(&value) {
            continue;
        }
        let lambda: f64 = rng.gen_range(0.05..3.0);
        let (r, jp, jt) = interpolation_with_jacobian(&est, &theta, &k, grid, id, lambda).unwrap();
        let direct = residual_unary_interpolation(&est, &theta, &k, grid, id, lambda).unwrap();
        assert!((r - direct).abs() < 1e-12);
        let fd_pose = central_diff(6, H, |c, h| {
            vec![residual_unary_interpolation(&bump_pose(&est, c, h), &theta, &k, grid, id, lambda).unwrap()]
        });
        assert_close(&to_dm(&jp), &fd_pose, REL, ABS, "interp d_pose");
        let fd_theta = central_diff(7, H, |c, h| {
            vec![residual_unary_interpolation(&est, &bump_theta(&theta, c, h), &k, grid, id, lambda).unwrap()]
        });
        assert_close(&to_dm(&jt), &fd_theta, REL, ABS, "interp d_theta");
        checked += 1;
    }
}

pub fn pairwise_jacobians_match_finite_differences() {
    let mut rng = rng(5);
    for _ in 0..CONFIGS {
        let random = |rng: &mut rand_chacha::ChaCha8Rng| {
            Pose::new(
                UnitQuaternion::from_scaled_axis(Vector3::from_fn(|_, _| rng.gen_range(-2.0..2.0))),
                Vector3::from_fn(|_, _| rng.gen_range(-20.0..20.0)),
            )
        };
        let pi = random(&mut rng);
        let pj = random(&mut rng);
        // measurement near the estimate, as in practice
        let est = relative_pose(&pi, &pj);
        let meas = RelativePose {
            t_ij: est.t_ij + Vector3::from_fn(|_, _| rng.gen_range(-1.0..1.0)),
            q_ij: UnitQuaternion::from_scaled_axis(Vector3::from_fn(|_, _| rng.gen_range(-0.3..0.3))) * est.q_ij,
        };
        let a = nalgebra::Matrix6::from_fn(|_, _| rng.gen_range(-1.0..1.0));
        let info = InformationMatrix::new(a * a.transpose() + nalgebra::Matrix6::identity() * 0.5).unwrap();
        let (ji, jj) = pairwise_jacobians(&pi, &pj, &meas, &info);
        let fd_i = central_diff(6, H, |c, h| {
            residual_pairwise(&bump_pose(&pi, c, h), &pj, &meas, &info).as_slice().to_vec()
        });
        let fd_j = central_diff(6, H, |c, h| {
            residual_pairwise(&pi, &bump_pose(&pj, c, h), &meas, &info).as_slice().to_vec()
        });
        assert_close(&to_dm(&ji), &fd_i, REL, ABS, "pairwise d_i");
        assert_close(&to_dm(&jj), &fd_j, REL, ABS, "pairwise d_j");
    }
}

fn random_grid(seed: u64, w: usize, h: usize) -> ImageGrid {
    let mut rng = rng(seed);
    ImageGrid::from_fn(w, h, |_, _| rng.gen_range(0.0..1.0))
}

pub fn lattice_values_reproduced_exactly() {
    let g = random_grid(1, 17, 11);
    for v in 0..11 {
        for u in 0..17 {
            let (value, _) = g.interpolate(&Vector2::new(u as f64, v as f64));
            assert_eq!(value, g.get(u, v), "({u},{v})");
        }
    }
}

pub fn constant_field_has_zero_gradient() {
    let g = ImageGrid::filled(9, 7, 0.37);
    let mut rng = rng(2);
    for _ in 0..200 {
        let p = Vector2::new(rng.gen_range(-2.0..10.0), rng.gen_range(-2.0..8.0));
        let (value, grad) = g.interpolate(&p);
        assert!((value - 0.37).abs() < 1e-15);
        assert_eq!(grad, Vector2::zeros());
    }
}

pub fn gradient_matches_finite_differences() {
    let g = random_grid(3, 32, 24);
    let mut rng = rng(4);
    let h = 1e-6;
    for _ in 0..1000 {
        let p = Vector2::new(rng.gen_range(0.0..31.0), rng.gen_range(0.0..23.0));
        let (_, grad) = g.interpolate(&p);
        let dx = (g.interpolate(&(p + Vector2::new(h, 0.0))).0 - g.interpolate(&(p - Vector2::new(h, 0.0))).0) / (2.0 * h);
        let dy = (g.interpolate(&(p + Vector2::new(0.0, h))).0 - g.interpolate(&(p - Vector2::new(0.0, h))).0) / (2.0 * h);
        assert!((grad.x - dx).abs() < 1e-5, "{p}: {} vs {dx}", grad.x);
        assert!((grad.y - dy).abs() < 1e-5, "{p}: {} vs {dy}", grad.y);
    }
}

pub fn neg_log_gradient_matches_finite_differences_away_from_clamps() {
    let g = ImageGrid::from_fn(32, 32, |u, v| {
        let d2 = (u as f64 - 15.3).powi(2) + (v as f64 - 16.8).powi(2);
        (-d2 / 18.0).exp()
    });
    let mut rng = rng(5);
    let h = 1e-6;
    let mut checked = 0;
    while checked < 500 {
        let p = Vector2::new(rng.gen_range(5.0..26.0), rng.gen_range(5.0..26.0));
        let value = g.interpolate(&p).0;
        if !(1e-4..0.99).contains(&value) {
            continue;
        }
        let (_, grad) = neg_log_prob(&g, &p);
        let dx = (neg_log_prob(&g, &(p + Vector2::new(h, 0.0))).0 - neg_log_prob(&g, &(p - Vector2::new(h, 0.0))).0) / (2.0 * h);
        let dy = (neg_log_prob(&g, &(p + Vector2::new(0.0, h))).0 - neg_log_prob(&g, &(p - Vector2::new(0.0, h))).0) / (2.0 * h);
        assert!((grad.x - dx).abs() < 1e-5 * (1.0 + dx.abs()));
        assert!((grad.y - dy).abs() < 1e-5 * (1.0 + dy.abs()));
        checked += 1;
    }
}

/// The four point-model invariants and the blade relabelling symmetry.
pub fn point_model_invariants(count: usize) {
    let mut rng = rng(10);
    for _ in 0..count {
        let theta = random_theta(&mut rng);
        let p = instantiate_points(&theta).unwrap();
        assert_eq!(p.p_g.z, 0.0);
        assert!(((p.p_t - p.p_g).norm() - theta.h).abs() < 1e-9, "tower height");
        let nacelle = p.p_r - p.p_t;
        let expected = Vector3::new(theta.r * theta.omega.cos(), theta.r * theta.omega.sin(), 0.0);
        assert!((nacelle - expected).norm() < 1e-9, "nacelle");
        for tip in p.p_b {
            assert!(((tip - p.p_r).norm() - theta.b).abs() < 1e-9, "blade length");
        }
        let side = 3f64.sqrt() * theta.b;
        for (i, j) in [(0, 1), (1, 2), (0, 2)] {
            assert!(((p.p_b[i] - p.p_b[j]).norm() - side).abs() < 1e-9, "blade spacing");
        }
        let turned = TurbineParams {
            phi: theta.phi + 2.0 * std::f64::consts::PI / 3.0,
            ..theta
        };
        let q = instantiate_points(&turned).unwrap();
        assert!((q.p_r - p.p_r).norm() < 1e-9);
        for i in 0..3 {
            assert!((q.p_b[i] - p.p_b[(i + 1) % 3]).norm() < 1e-9, "blade gauge");
        }
    }
}

pub fn pairwise_only_recovers_chained_measurements() {
    let cfg = SceneConfig {
        frame_count: 20,
        render: RenderConfig::noise_free(),
        ..Default::default()
    };
    let scene = Scene::generate(&cfg, 0).unwrap();
    let maps: Arc<[ProjectionImageSet]> = scene.render().unwrap().into();
    let spec = NoiseSpec {
        seed: 3,
        pos_step_sigma: 0.2,
        rot_step_sigma: 0.02,
        ..NoiseSpec::zero()
    };
    let (_, measurements) = add_pose_noise(&scene.trajectory_gt, &spec).unwrap();
    let chained = PoseGraph::new(scene.trajectory_gt.clone(), measurements.clone()).unwrap().chained();
    // initialise far from the chain
    let mut rng = rng(8);
    let init: Vec<Pose> = scene
        .trajectory_gt
        .iter()
        .enumerate()
        .map(|(i, p)| {
            if i == 0 {
                *p
            } else {
                Pose::new(
                    UnitQuaternion::from_scaled_axis(Vector3::from_fn(|_, _| rng.gen_range(-0.1..0.1))) * p.q,
                    p.t + Vector3::from_fn(|_, _| rng.gen_range(-1.0..1.0)),
                )
            }
        })
        .collect();
    let graph = PoseGraph::new(init, measurements).unwrap();
    let mut p = build_problem(&graph, &scene.theta_gt, &scene.k, maps, &CostConfig::pairwise_only(), &SearchConfig::default()).unwrap();
    let report = solve(&mut p, &SolverConfig::default()).unwrap();
    assert!(report.converged(), "{report:?}");
    for (est, want) in p.poses().iter().zip(&chained) {
        assert!((est.centre() - want.centre()).norm() < 1e-6);
        assert!(est.q.angle_to(&want.q) < 1e-6);
    }
}
