//! Skeletal wind-turbine model.
//!
//! A turbine is described by seven scalars: base position `c` on the ground
//! plane, tower height `h`, heading `omega` about the world z-axis, nacelle
//! length `r`, blade rotation `phi` about the nacelle axis and blade length
//! `b`. From these we instantiate a six-point skeleton (base, tower top, blade
//! centre and three blade tips) and a five-segment line model that joins
//! them. Every instantiated point has a closed-form 3x7 Jacobian with respect
//! to the parameters, in the fixed order `(c_x, c_y, h, omega, r, phi, b)`.
//!
//! Rotations are right-handed: `R_omega` turns about +z, `R_phi` about +x.

use std::f64::consts::{PI, TAU};

use nalgebra::{SMatrix, SVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of scalar turbine parameters.
pub const PARAM_DIM: usize = 7;

/// Blade spacing about the nacelle axis.
pub const BLADE_SPACING: f64 = TAU / 3.0;

/// Default number of interior points each line is split into.
pub const DEFAULT_SPLIT_COUNT: usize = 8;

pub type ParamVector = SVector<f64, PARAM_DIM>;

/// Derivative of a model point with respect to `(c_x, c_y, h, omega, r, phi, b)`.
pub type ParamJacobian = SMatrix<f64, 3, PARAM_DIM>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TurbineParams {
    /// Base position on the x-y plane, metres.
    pub c: [f64; 2],
    /// Tower height, metres.
    pub h: f64,
    /// Heading about the world z-axis, radians.
    pub omega: f64,
    /// Nacelle length, metres.
    pub r: f64,
    /// Blade rotation about the nacelle axis, radians.
    pub phi: f64,
    /// Blade length, metres.
    pub b: f64,
}

impl TurbineParams {
    /// The unit turbine that reproduces the default point model.
    pub const IDENTITY: TurbineParams = TurbineParams {
        c: [0.0, 0.0],
        h: 1.0,
        omega: 0.0,
        r: 1.0,
        phi: 0.0,
        b: 1.0,
    };

    pub fn to_vector(&self) -> ParamVector {
        ParamVector::from_column_slice(&[
            self.c[0], self.c[1], self.h, self.omega, self.r, self.phi, self.b,
        ])
    }

    pub fn from_vector(v: &ParamVector) -> Self {
        TurbineParams {
            c: [v[0], v[1]],
            h: v[2],
            omega: v[3],
            r: v[4],
            phi: v[5],
            b: v[6],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|x| x.is_finite())
    }

    /// Checks that the parameters describe a physically valid turbine.
    pub fn validate(&self) -> Result<()> {
        if !self.is_finite() {
            return Err(Error::invalid("turbine parameters must be finite"));
        }
        if self.h <= 0.0 || self.r <= 0.0 || self.b <= 0.0 {
            return Err(Error::invalid(format!(
                "turbine dimensions must be positive (h={}, r={}, b={})",
                self.h, self.r, self.b
            )));
        }
        Ok(())
    }

    /// Heading wrapped to (-pi, pi]. Reporting only.
    pub fn canonical_omega(&self) -> f64 {
        wrap_pi(self.omega)
    }

    /// Blade rotation wrapped to [0, 2pi/3). Reporting only.
    pub fn canonical_phi(&self) -> f64 {
        let w = self.phi.rem_euclid(BLADE_SPACING);
        // rem_euclid can round up to the modulus itself
        if w >= BLADE_SPACING {
            0.0
        } else {
            w
        }
    }

    fn blade_angle(&self, blade: usize) -> f64 {
        self.phi + BLADE_SPACING * blade as f64
    }
}

pub(crate) fn wrap_pi(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(TAU) - PI;
    if w <= -PI {
        w + TAU
    } else {
        w
    }
}

/// Skeleton points of the turbine point model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PointId {
    Base,
    TowerTop,
    Hub,
    Blade1,
    Blade2,
    Blade3,
}

impl PointId {
    pub const ALL: [PointId; 6] = [
        PointId::Base,
        PointId::TowerTop,
        PointId::Hub,
        PointId::Blade1,
        PointId::Blade2,
        PointId::Blade3,
    ];

    pub fn label(self) -> &'static str {
        match self {
            PointId::Base => "g",
            PointId::TowerTop => "t",
            PointId::Hub => "r",
            PointId::Blade1 => "b1",
            PointId::Blade2 => "b2",
            PointId::Blade3 => "b3",
        }
    }

    fn blade_index(self) -> Option<usize> {
        match self {
            PointId::Blade1 => Some(0),
            PointId::Blade2 => Some(1),
            PointId::Blade3 => Some(2),
            _ => None,
        }
    }
}

/// Segments of the turbine line model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LineId {
    Tower,
    Nacelle,
    Blade1,
    Blade2,
    Blade3,
}

impl LineId {
    pub const ALL: [LineId; 5] = [
        LineId::Tower,
        LineId::Nacelle,
        LineId::Blade1,
        LineId::Blade2,
        LineId::Blade3,
    ];

    /// Start and end points of the segment in the point model.
    pub fn endpoints(self) -> (PointId, PointId) {
        match self {
            LineId::Tower => (PointId::Base, PointId::TowerTop),
            LineId::Nacelle => (PointId::TowerTop, PointId::Hub),
            LineId::Blade1 => (PointId::Hub, PointId::Blade1),
            LineId::Blade2 => (PointId::Hub, PointId::Blade2),
            LineId::Blade3 => (PointId::Hub, PointId::Blade3),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            LineId::Tower => "lt",
            LineId::Nacelle => "lr",
            LineId::Blade1 => "lb1",
            LineId::Blade2 => "lb2",
            LineId::Blade3 => "lb3",
        }
    }
}

/// Identifies one model point that a residual is attached to.
///
/// Split-line points are the `index`-th of `count` interior points, sitting at
/// fraction `index / (count + 1)` from the line start (`index` is 1-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelPointId {
    Point(PointId),
    Line { line: LineId, index: u32, count: u32 },
}

impl ModelPointId {
    pub fn fraction(&self) -> Option<f64> {
        match *self {
            ModelPointId::Point(_) => None,
            ModelPointId::Line { index, count, .. } => {
                Some(f64::from(index) / (f64::from(count) + 1.0))
            }
        }
    }

    /// Short stable label, e.g. `t` or `lb2[3/8]`.
    pub fn label(&self) -> String {
        match *self {
            ModelPointId::Point(p) => p.label().to_string(),
            ModelPointId::Line { line, index, count } => {
                format!("{}[{}/{}]", line.label(), index, count)
            }
        }
    }

    /// Every point of a point model.
    pub fn points() -> impl Iterator<Item = ModelPointId> {
        PointId::ALL.into_iter().map(ModelPointId::Point)
    }

    /// Every split point of every line at the given split count.
    pub fn line_points(count: usize) -> impl Iterator<Item = ModelPointId> {
        let count = count as u32;
        LineId::ALL.into_iter().flat_map(move |line| {
            (1..=count).map(move |index| ModelPointId::Line { line, index, count })
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointModel {
    pub p_g: Vector3<f64>,
    pub p_t: Vector3<f64>,
    pub p_r: Vector3<f64>,
    pub p_b: [Vector3<f64>; 3],
}

impl PointModel {
    pub fn get(&self, id: PointId) -> Vector3<f64> {
        match id {
            PointId::Base => self.p_g,
            PointId::TowerTop => self.p_t,
            PointId::Hub => self.p_r,
            PointId::Blade1 => self.p_b[0],
            PointId::Blade2 => self.p_b[1],
            PointId::Blade3 => self.p_b[2],
        }
    }
}

pub type Segment = (Vector3<f64>, Vector3<f64>);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineModel {
    pub l_t: Segment,
    pub l_r: Segment,
    pub l_b: [Segment; 3],
}

impl LineModel {
    pub fn get(&self, id: LineId) -> Segment {
        match id {
            LineId::Tower => self.l_t,
            LineId::Nacelle => self.l_r,
            LineId::Blade1 => self.l_b[0],
            LineId::Blade2 => self.l_b[1],
            LineId::Blade3 => self.l_b[2],
        }
    }
}

/// The unit-height, unit-blade model every instance is built from.
pub fn default_point_model() -> PointModel {
    let tip = Vector3::new(1.0, 0.0, 2.0);
    PointModel {
        p_g: Vector3::new(0.0, 0.0, 0.0),
        p_t: Vector3::new(0.0, 0.0, 1.0),
        p_r: Vector3::new(1.0, 0.0, 1.0),
        p_b: [tip, tip, tip],
    }
}

fn rot_z(angle: f64, v: &Vector3<f64>) -> Vector3<f64> {
    let (s, c) = angle.sin_cos();
    Vector3::new(c * v.x - s * v.y, s * v.x + c * v.y, v.z)
}

/// Point in the heading frame (before `R_omega` and the base offset).
///
/// Expanding the instantiation functions on the default points gives
/// `(0,0,0)`, `(0,0,h)`, `(r,0,h)` and `(r, -b sin phi_i, h + b cos phi_i)`;
/// the base and tower top are not rotated.
fn local_point(theta: &TurbineParams, id: PointId) -> Vector3<f64> {
    match id {
        PointId::Base => Vector3::zeros(),
        PointId::TowerTop => Vector3::new(0.0, 0.0, theta.h),
        PointId::Hub => Vector3::new(theta.r, 0.0, theta.h),
        _ => {
            let blade = id.blade_index().unwrap_or(0);
            let (s, c) = theta.blade_angle(blade).sin_cos();
            Vector3::new(theta.r, -theta.b * s, theta.h + theta.b * c)
        }
    }
}

fn base_offset(theta: &TurbineParams) -> Vector3<f64> {
    Vector3::new(theta.c[0], theta.c[1], 0.0)
}

/// World position of a point-model point. Parameters are not checked.
pub fn point_position(theta: &TurbineParams, id: PointId) -> Vector3<f64> {
    let local = local_point(theta, id);
    match id {
        PointId::Base | PointId::TowerTop => base_offset(theta) + local,
        _ => base_offset(theta) + rot_z(theta.omega, &local),
    }
}

/// World position of any model point, including split-line points.
pub fn model_point(theta: &TurbineParams, id: ModelPointId) -> Vector3<f64> {
    match id {
        ModelPointId::Point(p) => point_position(theta, p),
        ModelPointId::Line { line, .. } => {
            let (a, b) = line.endpoints();
            let f = id.fraction().unwrap_or(0.0);
            point_position(theta, a) * (1.0 - f) + point_position(theta, b) * f
        }
    }
}

pub fn instantiate_points(theta: &TurbineParams) -> Result<PointModel> {
    if !theta.is_finite() {
        return Err(Error::invalid("turbine parameters must be finite"));
    }
    Ok(PointModel {
        p_g: point_position(theta, PointId::Base),
        p_t: point_position(theta, PointId::TowerTop),
        p_r: point_position(theta, PointId::Hub),
        p_b: [
            point_position(theta, PointId::Blade1),
            point_position(theta, PointId::Blade2),
            point_position(theta, PointId::Blade3),
        ],
    })
}

pub fn instantiate_lines(theta: &TurbineParams) -> Result<LineModel> {
    let p = instantiate_points(theta)?;
    Ok(LineModel {
        l_t: (p.p_g, p.p_t),
        l_r: (p.p_t, p.p_r),
        l_b: [(p.p_r, p.p_b[0]), (p.p_r, p.p_b[1]), (p.p_r, p.p_b[2])],
    })
}

/// Interior points at fractions `k / (count + 1)`, `k = 1..=count`.
///
/// Endpoints are excluded. A zero-length segment yields no points.
pub fn split_line(line: &Segment, count: usize) -> Vec<Vector3<f64>> {
    let (a, b) = line;
    if (b - a).norm() == 0.0 {
        return Vec::new();
    }
    let denom = count as f64 + 1.0;
    (1..=count)
        .map(|k| {
            let f = k as f64 / denom;
            a * (1.0 - f) + b * f
        })
        .collect()
}

fn point_param_jacobian(theta: &TurbineParams, id: PointId) -> ParamJacobian {
    let mut j = ParamJacobian::zeros();
    j[(0, 0)] = 1.0;
    j[(1, 1)] = 1.0;
    match id {
        PointId::Base => {}
        PointId::TowerTop => j[(2, 2)] = 1.0,
        _ => {
            let local = local_point(theta, id);
            let (s, c) = theta.omega.sin_cos();
            // d/dh: z-only, unaffected by R_omega
            j[(2, 2)] = 1.0;
            // d/domega
            j[(0, 3)] = -s * local.x - c * local.y;
            j[(1, 3)] = c * local.x - s * local.y;
            // d/dr
            j[(0, 4)] = c;
            j[(1, 4)] = s;
            if let Some(blade) = id.blade_index() {
                let (sp, cp) = theta.blade_angle(blade).sin_cos();
                let d_phi = rot_z(theta.omega, &Vector3::new(0.0, -theta.b * cp, -theta.b * sp));
                let d_b = rot_z(theta.omega, &Vector3::new(0.0, -sp, cp));
                j.set_column(5, &d_phi);
                j.set_column(6, &d_b);
            }
        }
    }
    j
}

/// Analytic 3x7 Jacobian of a model point w.r.t. `(c_x, c_y, h, omega, r, phi, b)`.
pub fn point_jacobian(theta: &TurbineParams, id: ModelPointId) -> ParamJacobian {
    match id {
        ModelPointId::Point(p) => point_param_jacobian(theta, p),
        ModelPointId::Line { line, .. } => {
            let (a, b) = line.endpoints();
            let f = id.fraction().unwrap_or(0.0);
            point_param_jacobian(theta, a) * (1.0 - f) + point_param_jacobian(theta, b) * f
        }
    }
}
