//! Residual functions and their analytic Jacobians.
//!
//! Every Jacobian is taken with respect to the turbine parameters in
//! `(c_x, c_y, h, omega, r, phi, b)` order and the `(translation, rotation)`
//! tangent of each pose involved.

use nalgebra::{Matrix3, Matrix6, SMatrix, Vector2, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    pose_point_jacobian, quat_error, quat_left_matrix, quat_right_matrix, relative_pose, skew,
    CameraIntrinsics, Matrix2x6, Pose, RelativePose,
};
use crate::heatmap::{neg_log_prob, ImageGrid};
use crate::turbine::{model_point, point_jacobian, ModelPointId, TurbineParams, PARAM_DIM};

/// Pairwise weighting `C` together with a lower Cholesky factor `L`, `C = L L^T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[[f64; 6]; 6]", into = "[[f64; 6]; 6]")]
pub struct InformationMatrix {
    matrix: Matrix6<f64>,
    factor: Matrix6<f64>,
}

impl InformationMatrix {
    pub fn new(matrix: Matrix6<f64>) -> Result<Self> {
        if (matrix - matrix.transpose()).abs().max() > 1e-12 * matrix.abs().max().max(1.0) {
            return Err(Error::invalid("information matrix must be symmetric"));
        }
        let chol = matrix
            .cholesky()
            .ok_or_else(|| Error::invalid("information matrix must be positive definite"))?;
        Ok(InformationMatrix {
            matrix,
            factor: chol.l(),
        })
    }

    /// Diagonal information from translation and rotation precisions.
    pub fn diagonal(translation: f64, rotation: f64) -> Result<Self> {
        Self::new(Matrix6::from_diagonal(&Vector6::new(
            translation,
            translation,
            translation,
            rotation,
            rotation,
            rotation,
        )))
    }

    pub fn matrix(&self) -> &Matrix6<f64> {
        &self.matrix
    }

    pub fn factor(&self) -> &Matrix6<f64> {
        &self.factor
    }
}

impl Default for InformationMatrix {
    /// sigma_t = 0.2 m, sigma_R = 0.05 rad
    fn default() -> Self {
        Self::diagonal(25.0, 400.0).expect("positive diagonal")
    }
}

impl TryFrom<[[f64; 6]; 6]> for InformationMatrix {
    type Error = Error;
    fn try_from(rows: [[f64; 6]; 6]) -> Result<Self> {
        Self::new(Matrix6::from_fn(|i, j| rows[i][j]))
    }
}

impl From<InformationMatrix> for [[f64; 6]; 6] {
    fn from(m: InformationMatrix) -> Self {
        let mut rows = [[0.0; 6]; 6];
        for (i, row) in rows.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = m.matrix[(i, j)];
            }
        }
        rows
    }
}

/// `sqrt(lambda) * (projection - target)`.
pub fn residual_unary_correspondence(
    vertex: &Pose,
    theta: &TurbineParams,
    k: &CameraIntrinsics,
    model_id: ModelPointId,
    target: &Vector2<f64>,
    lambda: f64,
) -> Result<Vector2<f64>> {
    let px = crate::geometry::project(vertex, k, &model_point(theta, model_id))?;
    Ok((px - target) * lambda.sqrt())
}

/// `sqrt(lambda * -log Gamma(grid, projection))`.
pub fn residual_unary_interpolation(
    vertex: &Pose,
    theta: &TurbineParams,
    k: &CameraIntrinsics,
    grid: &ImageGrid,
    model_id: ModelPointId,
    lambda: f64,
) -> Result<f64> {
    let px = crate::geometry::project(vertex, k, &model_point(theta, model_id))?;
    Ok((lambda * neg_log_prob(grid, &px).0).sqrt())
}

/// Translation and rotation difference between measured and estimated
/// relative poses, before weighting.
pub fn relative_pose_error(pose_i: &Pose, pose_j: &Pose, meas: &RelativePose) -> Vector6<f64> {
    let est = relative_pose(pose_i, pose_j);
    let dt = meas.t_ij - est.t_ij;
    let dq = quat_error(&meas.q_ij, &est.q_ij);
    Vector6::new(dt.x, dt.y, dt.z, dq.x, dq.y, dq.z)
}

/// `L^T [t_meas - t_est; 2 Vec(q_meas * q_est^-1)]`, whose squared norm is
/// the Mahalanobis distance under `C`.
pub fn residual_pairwise(
    pose_i: &Pose,
    pose_j: &Pose,
    meas: &RelativePose,
    info: &InformationMatrix,
) -> Vector6<f64> {
    info.factor().transpose() * relative_pose_error(pose_i, pose_j, meas)
}

/// Jacobians of the pairwise residual w.r.t. the tangents of both poses.
pub fn pairwise_jacobians(
    pose_i: &Pose,
    pose_j: &Pose,
    meas: &RelativePose,
    info: &InformationMatrix,
) -> (Matrix6<f64>, Matrix6<f64>) {
    let rt_i = pose_i.rotation().transpose();
    let delta = pose_j.t - pose_i.t;
    // rotation error is 2 Vec(q_m q_j^-1 exp(.) q_i), perturbed in the middle
    let left = quat_left_matrix(&(meas.q_ij * pose_j.q.inverse()));
    let right = quat_right_matrix(&pose_i.q);
    let rot: Matrix3<f64> = (left * right).fixed_view::<3, 3>(1, 1).into_owned();

    let mut ji = Matrix6::zeros();
    ji.fixed_view_mut::<3, 3>(0, 0).copy_from(&rt_i);
    ji.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-rt_i * skew(&delta)));
    ji.fixed_view_mut::<3, 3>(3, 3).copy_from(&rot);

    let mut jj = Matrix6::zeros();
    jj.fixed_view_mut::<3, 3>(0, 0).copy_from(&-rt_i);
    jj.fixed_view_mut::<3, 3>(3, 3).copy_from(&-rot);

    let lt = info.factor().transpose();
    (lt * ji, lt * jj)
}

pub type ThetaJacobian2 = SMatrix<f64, 2, PARAM_DIM>;

/// Projection of a model point with derivatives w.r.t. the pose tangent and θ.
#[derive(Debug, Clone, Copy)]
pub struct ModelProjection {
    pub pixel: Vector2<f64>,
    pub d_pose: Matrix2x6,
    pub d_theta: ThetaJacobian2,
}

pub fn project_model_point(
    vertex: &Pose,
    theta: &TurbineParams,
    k: &CameraIntrinsics,
    model_id: ModelPointId,
) -> Result<ModelProjection> {
    let p = model_point(theta, model_id);
    let j = pose_point_jacobian(vertex, k, &p)?;
    Ok(ModelProjection {
        pixel: j.pixel,
        d_pose: j.d_pose,
        d_theta: j.d_point * point_jacobian(theta, model_id),
    })
}

/// Interpolation residual with its row Jacobians `(d_pose, d_theta)`.
pub fn interpolation_with_jacobian(
    vertex: &Pose,
    theta: &TurbineParams,
    k: &CameraIntrinsics,
    grid: &ImageGrid,
    model_id: ModelPointId,
    lambda: f64,
) -> Result<(f64, SMatrix<f64, 1, 6>, SMatrix<f64, 1, PARAM_DIM>)> {
    let proj = project_model_point(vertex, theta, k, model_id)?;
    let (cost, grad) = neg_log_prob(grid, &proj.pixel);
    let r = (lambda * cost).sqrt();
    if r < 1e-12 {
        return Ok((r, SMatrix::zeros(), SMatrix::zeros()));
    }
    // d sqrt(lambda c) = lambda dc / (2 r)
    let scale = lambda / (2.0 * r);
    let g = grad.transpose() * scale;
    Ok((r, g * proj.d_pose, g * proj.d_theta))
}
