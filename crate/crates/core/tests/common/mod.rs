#![allow(dead_code)]

pub mod oracles;

use nalgebra::{DMatrix, UnitQuaternion, Vector3};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use turbine_fit::turbine::instantiate_points;
use turbine_fit::{CameraIntrinsics, Pose, TurbineParams};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn intrinsics() -> CameraIntrinsics {
    CameraIntrinsics::new(80.0, 80.0, 64.0, 64.0).unwrap()
}

pub fn random_theta(rng: &mut impl Rng) -> TurbineParams {
    TurbineParams {
        c: [rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0)],
        h: rng.gen_range(15.0..60.0),
        omega: rng.gen_range(-3.1..3.1),
        r: rng.gen_range(1.0..8.0),
        phi: rng.gen_range(-3.1..3.1),
        b: rng.gen_range(5.0..25.0),
    }
}

/// A camera 1.5 to 3 blade lengths from the hub, looking near it.
pub fn random_pose(rng: &mut impl Rng, theta: &TurbineParams) -> Pose {
    let hub = instantiate_points(theta).unwrap().p_r;
    let dir = Vector3::new(
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-0.3..0.3),
    )
    .normalize();
    let dist = theta.b * rng.gen_range(1.5..3.0) + theta.r;
    let eye = hub + dir * dist;
    let aim = hub + Vector3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
    let pose = Pose::look_at(&eye, &aim, &Vector3::z()).unwrap();
    let roll = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), rng.gen_range(-0.3..0.3));
    Pose::new(roll * pose.q, roll * pose.t)
}

/// `|a - b| <= rel * max(|a|, |b|) + abs` elementwise, reporting the worst entry.
pub fn assert_close(analytic: &DMatrix<f64>, fd: &DMatrix<f64>, rel: f64, abs: f64, what: &str) {
    assert_eq!(analytic.shape(), fd.shape(), "{what}: shape");
    for (i, (a, b)) in analytic.iter().zip(fd.iter()).enumerate() {
        let tol = rel * a.abs().max(b.abs()) + abs;
        assert!(
            (a - b).abs() <= tol,
            "{what}: entry {i} analytic {a} vs finite difference {b}\nanalytic {analytic}\nfd {fd}"
        );
    }
}

/// Central differences of `f` over `n` scalar inputs.
pub fn central_diff(n: usize, h: f64, mut f: impl FnMut(usize, f64) -> Vec<f64>) -> DMatrix<f64> {
    let mut cols = Vec::with_capacity(n);
    for j in 0..n {
        let plus = f(j, h);
        let minus = f(j, -h);
        cols.push(plus.iter().zip(&minus).map(|(p, m)| (p - m) / (2.0 * h)).collect::<Vec<_>>());
    }
    let rows = cols[0].len();
    DMatrix::from_fn(rows, n, |i, j| cols[j][i])
}
