//! Rigid poses, pinhole projection and relative-pose algebra.
//!
//! A [`Pose`] maps world points into the camera frame: `x_c = R(q) x + t`.
//! The camera looks down +z with +x to the right and +y down the image.
//! Local rotation updates are applied on the left, `q <- exp(delta) * q`, and
//! every pose tangent is ordered `(translation, rotation)`.

use nalgebra::{
    Matrix2x3, Matrix3, Matrix4, Quaternion, SMatrix, SVector, Unit, UnitQuaternion, Vector2,
    Vector3,
};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest camera-frame depth that still counts as in front of the camera.
pub const MIN_DEPTH: f64 = 1e-6;

pub type PoseTangent = SVector<f64, 6>;
pub type Matrix2x6 = SMatrix<f64, 2, 6>;

/// World-to-camera rigid transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "PoseRepr", into = "PoseRepr")]
pub struct Pose {
    pub q: UnitQuaternion<f64>,
    pub t: Vector3<f64>,
}

#[derive(Serialize, Deserialize)]
struct PoseRepr {
    /// `[w, x, y, z]`
    q: [f64; 4],
    t: [f64; 3],
}

impl From<PoseRepr> for Pose {
    fn from(r: PoseRepr) -> Self {
        let [w, x, y, z] = r.q;
        Pose {
            q: unit_from_wxyz(w, x, y, z),
            t: Vector3::from(r.t),
        }
    }
}

impl From<Pose> for PoseRepr {
    fn from(p: Pose) -> Self {
        PoseRepr {
            q: [p.q.w, p.q.i, p.q.j, p.q.k],
            t: [p.t.x, p.t.y, p.t.z],
        }
    }
}

impl Default for Pose {
    fn default() -> Self {
        Pose::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            q: UnitQuaternion::identity(),
            t: Vector3::zeros(),
        }
    }

    pub fn new(q: UnitQuaternion<f64>, t: Vector3<f64>) -> Self {
        Pose { q, t }
    }

    /// Builds the world-to-camera pose of a camera centred at `eye` looking
    /// at `target`, with image "up" as close to `up` as possible.
    pub fn look_at(eye: &Vector3<f64>, target: &Vector3<f64>, up: &Vector3<f64>) -> Result<Self> {
        let forward = target - eye;
        if forward.norm() < 1e-12 {
            return Err(Error::invalid("look_at target coincides with camera centre"));
        }
        let forward = forward.normalize();
        let right = forward.cross(up);
        if right.norm() < 1e-12 {
            return Err(Error::invalid("look_at direction is parallel to up vector"));
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        let rot = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let q = UnitQuaternion::from_matrix(&rot);
        let t = -(q * eye);
        Ok(Pose { q, t })
    }

    /// Converts a camera-in-world pose (camera-to-world rotation and centre).
    pub fn from_camera_in_world(q_wc: UnitQuaternion<f64>, centre: Vector3<f64>) -> Self {
        let q = q_wc.inverse();
        Pose { q, t: -(q * centre) }
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.q.to_rotation_matrix().into_inner()
    }

    pub fn transform(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.q * p + self.t
    }

    /// Camera centre in world coordinates.
    pub fn centre(&self) -> Vector3<f64> {
        -(self.q.inverse() * self.t)
    }

    /// Applies a `(translation, rotation)` tangent update.
    pub fn retract(&self, delta: &PoseTangent) -> Pose {
        let dt = delta.fixed_rows::<3>(0).into_owned();
        let dr = delta.fixed_rows::<3>(3).into_owned();
        let q = UnitQuaternion::from_scaled_axis(dr) * self.q;
        Pose {
            q: renormalize(&q),
            t: self.t + dt,
        }
    }

    /// Composes another transform on the left: `x -> g(self(x))`.
    pub fn then(&self, g: &Pose) -> Pose {
        Pose {
            q: g.q * self.q,
            t: g.q * self.t + g.t,
        }
    }
}

/// Keeps stored values bit-exact when they are already unit length.
fn unit_from_wxyz(w: f64, x: f64, y: f64, z: f64) -> UnitQuaternion<f64> {
    let q = Quaternion::new(w, x, y, z);
    if (q.norm_squared() - 1.0).abs() <= 8.0 * f64::EPSILON {
        Unit::new_unchecked(q)
    } else {
        Unit::new_normalize(q)
    }
}

pub(crate) fn renormalize(q: &UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    Unit::new_normalize(q.into_inner())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        let k = CameraIntrinsics { fx, fy, cx, cy };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.fx, self.fy, self.cx, self.cy].iter().all(|v| v.is_finite());
        if !finite || self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::invalid(format!(
                "intrinsics need finite values and positive focal lengths: {self:?}"
            )));
        }
        Ok(())
    }

    /// Projects a camera-frame point.
    pub fn project_camera(&self, pc: &Vector3<f64>) -> Result<Vector2<f64>> {
        if !(pc.z > MIN_DEPTH) {
            return Err(Error::Cheirality { depth: pc.z });
        }
        Ok(Vector2::new(
            self.cx + self.fx * pc.x / pc.z,
            self.cy + self.fy * pc.y / pc.z,
        ))
    }

    fn camera_jacobian(&self, pc: &Vector3<f64>) -> Matrix2x3<f64> {
        let iz = 1.0 / pc.z;
        let iz2 = iz * iz;
        Matrix2x3::new(
            self.fx * iz,
            0.0,
            -self.fx * pc.x * iz2,
            0.0,
            self.fy * iz,
            -self.fy * pc.y * iz2,
        )
    }
}

/// Pinhole projection of a world point through a world-to-camera pose.
pub fn project(pose: &Pose, k: &CameraIntrinsics, p: &Vector3<f64>) -> Result<Vector2<f64>> {
    k.project_camera(&pose.transform(p))
}

/// Projection together with its derivatives.
#[derive(Debug, Clone, Copy)]
pub struct ProjectionJacobian {
    pub pixel: Vector2<f64>,
    /// w.r.t. the `(translation, rotation)` pose tangent
    pub d_pose: Matrix2x6,
    /// w.r.t. the world point
    pub d_point: Matrix2x3<f64>,
}

pub fn pose_point_jacobian(
    pose: &Pose,
    k: &CameraIntrinsics,
    p: &Vector3<f64>,
) -> Result<ProjectionJacobian> {
    let rp = pose.q * p;
    let pc = rp + pose.t;
    let pixel = k.project_camera(&pc)?;
    let dproj = k.camera_jacobian(&pc);
    let mut d_pose = Matrix2x6::zeros();
    d_pose.fixed_view_mut::<2, 3>(0, 0).copy_from(&dproj);
    d_pose
        .fixed_view_mut::<2, 3>(0, 3)
        .copy_from(&(dproj * -skew(&rp)));
    Ok(ProjectionJacobian {
        pixel,
        d_pose,
        d_point: dproj * pose.rotation(),
    })
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Relative transform between two graph vertices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "RelativeRepr", into = "RelativeRepr")]
pub struct RelativePose {
    pub t_ij: Vector3<f64>,
    pub q_ij: UnitQuaternion<f64>,
}

#[derive(Serialize, Deserialize)]
struct RelativeRepr {
    t: [f64; 3],
    /// `[w, x, y, z]`
    q: [f64; 4],
}

impl From<RelativeRepr> for RelativePose {
    fn from(r: RelativeRepr) -> Self {
        let [w, x, y, z] = r.q;
        RelativePose {
            t_ij: Vector3::from(r.t),
            q_ij: unit_from_wxyz(w, x, y, z),
        }
    }
}

impl From<RelativePose> for RelativeRepr {
    fn from(r: RelativePose) -> Self {
        RelativeRepr {
            t: [r.t_ij.x, r.t_ij.y, r.t_ij.z],
            q: [r.q_ij.w, r.q_ij.i, r.q_ij.j, r.q_ij.k],
        }
    }
}

impl RelativePose {
    /// Reconstructs `pose_j` from `pose_i`; inverse of [`relative_pose`].
    pub fn apply(&self, pose_i: &Pose) -> Pose {
        Pose {
            q: renormalize(&(pose_i.q * self.q_ij)),
            t: pose_i.t + pose_i.q * self.t_ij,
        }
    }
}

/// `t_ij = R(q_i)^T (t_j - t_i)`, `q_ij = q_i^-1 * q_j`.
pub fn relative_pose(pose_i: &Pose, pose_j: &Pose) -> RelativePose {
    let inv = pose_i.q.inverse();
    RelativePose {
        t_ij: inv * (pose_j.t - pose_i.t),
        q_ij: inv * pose_j.q,
    }
}

/// `2 * Vec(q_meas * q_est^-1)`.
pub fn quat_error(q_meas: &UnitQuaternion<f64>, q_est: &UnitQuaternion<f64>) -> Vector3<f64> {
    let e = q_meas * q_est.inverse();
    2.0 * e.imag()
}

/// Left-multiplication matrix: `a * b = L(a) b`, coordinates `(w, x, y, z)`.
pub fn quat_left_matrix(a: &UnitQuaternion<f64>) -> Matrix4<f64> {
    let (w, x, y, z) = (a.w, a.i, a.j, a.k);
    Matrix4::new(
        w, -x, -y, -z, //
        x, w, -z, y, //
        y, z, w, -x, //
        z, -y, x, w,
    )
}

/// Right-multiplication matrix: `a * b = R(b) a`, coordinates `(w, x, y, z)`.
pub fn quat_right_matrix(b: &UnitQuaternion<f64>) -> Matrix4<f64> {
    let (w, x, y, z) = (b.w, b.i, b.j, b.k);
    Matrix4::new(
        w, -x, -y, -z, //
        x, w, z, -y, //
        y, -z, w, x, //
        z, y, -x, w,
    )
}

/// Key-frame poses joined by sequential edges, each carrying a measured
/// relative pose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseGraph {
    pub vertices: Vec<Pose>,
    pub measurements: Vec<RelativePose>,
}

impl PoseGraph {
    pub fn new(vertices: Vec<Pose>, measurements: Vec<RelativePose>) -> Result<Self> {
        let g = PoseGraph {
            vertices,
            measurements,
        };
        g.validate()?;
        Ok(g)
    }

    /// Graph whose measurements are the exact relative poses of `vertices`.
    pub fn from_trajectory(vertices: Vec<Pose>) -> Result<Self> {
        let measurements = vertices
            .windows(2)
            .map(|w| relative_pose(&w[0], &w[1]))
            .collect();
        Self::new(vertices, measurements)
    }

    pub fn validate(&self) -> Result<()> {
        if self.vertices.is_empty() {
            return Err(Error::invalid("pose graph needs at least one vertex"));
        }
        if self.measurements.len() + 1 != self.vertices.len() {
            return Err(Error::invalid(format!(
                "pose graph with {} vertices needs {} measurements, got {}",
                self.vertices.len(),
                self.vertices.len() - 1,
                self.measurements.len()
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Trajectory obtained by chaining the measurements from the first vertex.
    pub fn chained(&self) -> Vec<Pose> {
        let mut out = Vec::with_capacity(self.vertices.len());
        let mut current = self.vertices[0];
        out.push(current);
        for m in &self.measurements {
            current = m.apply(&current);
            out.push(current);
        }
        out
    }
}
