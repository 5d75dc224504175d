//! Camera model, linearized per-pixel motion matrices and SE(3) plumbing.
//!
//! The motion model is written in normalized image coordinates with focal
//! length fixed to 1: pixel coordinates enter only through
//! [`CameraIntrinsics::pixel_to_normalized`]. For a point at normalized
//! coordinates `x` with inverse depth `rho`, the image velocity induced by
//! a camera twist `T = (tau, omega)` is
//!
//! ```text
//! v(x) = rho(x) A(x) tau + B(x) omega = Q(x) T
//! ```
//!
//! with `A = [1 0 -x; 0 1 -y]` and `B = [-xy 1+x^2 -y; -1-y^2 xy x]`.
//! Translation is depth-coupled, rotation is not, which is what makes the
//! least-squares fit in [`crate::egomotion`] well posed.

use nalgebra::{Matrix2x3, Matrix2x6, Matrix3, UnitQuaternion, Vector2, Vector3, Vector6};
use thiserror::Error;

use crate::grid::{InverseDepthMap, MotionField, VectorField};

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(&'static str),
    #[error("pixel ({u}, {v}) outside {width}x{height} image")]
    PixelOutOfBounds {
        u: usize,
        v: usize,
        width: usize,
        height: usize,
    },
    #[error("depth map is {got_w}x{got_h} but intrinsics expect {want_w}x{want_h}")]
    ShapeMismatch {
        got_w: usize,
        got_h: usize,
        want_w: usize,
        want_h: usize,
    },
    #[error("camera velocity has non-finite components")]
    NonFiniteVelocity,
}

/// Pinhole projection parameters mapping pixels to normalized coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
    ) -> Result<Self, GeometryError> {
        if !(fx > 0.0 && fy > 0.0) || !fx.is_finite() || !fy.is_finite() {
            return Err(GeometryError::InvalidIntrinsics("focal lengths must be positive"));
        }
        if !(cx > 0.0 && cx < width as f64) || !(cy > 0.0 && cy < height as f64) {
            return Err(GeometryError::InvalidIntrinsics(
                "principal point must lie inside the image",
            ));
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    /// TUM RGB-D freiburg1 calibration (640x480).
    pub fn tum_fr1() -> Self {
        Self {
            fx: 517.306408,
            fy: 516.469215,
            cx: 318.643040,
            cy: 255.313989,
            width: 640,
            height: 480,
        }
    }

    /// TUM RGB-D freiburg2 calibration (640x480).
    pub fn tum_fr2() -> Self {
        Self {
            fx: 520.908620,
            fy: 521.007327,
            cx: 325.141442,
            cy: 249.701764,
            width: 640,
            height: 480,
        }
    }

    /// TUM RGB-D freiburg3 calibration (640x480).
    pub fn tum_fr3() -> Self {
        Self {
            fx: 535.4,
            fy: 539.2,
            cx: 320.1,
            cy: 247.6,
            width: 640,
            height: 480,
        }
    }

    /// ROS default Kinect calibration used when no per-sequence values exist.
    pub fn tum_default() -> Self {
        Self {
            fx: 525.0,
            fy: 525.0,
            cx: 319.5,
            cy: 239.5,
            width: 640,
            height: 480,
        }
    }

    /// Look up a preset by name (`fr1`, `fr2`, `fr3`, `default`).
    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "fr1" | "freiburg1" => Some(Self::tum_fr1()),
            "fr2" | "freiburg2" => Some(Self::tum_fr2()),
            "fr3" | "freiburg3" => Some(Self::tum_fr3()),
            "default" | "ros" => Some(Self::tum_default()),
            _ => None,
        }
    }

    /// Map an in-bounds pixel to normalized coordinates.
    pub fn pixel_to_normalized(&self, u: usize, v: usize) -> Result<NormalizedCoords, GeometryError> {
        if u >= self.width || v >= self.height {
            return Err(GeometryError::PixelOutOfBounds {
                u,
                v,
                width: self.width,
                height: self.height,
            });
        }
        Ok(self.normalized_at(u as f64, v as f64))
    }

    /// Unchecked variant for continuous pixel coordinates.
    #[inline]
    pub fn normalized_at(&self, u: f64, v: f64) -> NormalizedCoords {
        NormalizedCoords {
            x: (u - self.cx) / self.fx,
            y: (v - self.cy) / self.fy,
        }
    }

    /// Same intrinsics rescaled to a different resolution.
    pub fn scaled_to(&self, width: usize, height: usize) -> Self {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        Self {
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: self.cx * sx,
            cy: self.cy * sy,
            width,
            height,
        }
    }
}

/// Dimensionless normalized image coordinates `((u-cx)/fx, (v-cy)/fy)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizedCoords {
    pub x: f64,
    pub y: f64,
}

/// Instantaneous camera twist: translational and rotational velocity per
/// frame interval.
///
/// `omega` is an unconstrained angular-velocity vector whose magnitude is
/// the rotation rate in radians per interval; the axis-angle product
/// `omega * delta` exponentiates to the rotation over `delta` intervals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraVelocity {
    pub tau: Vector3<f64>,
    pub omega: Vector3<f64>,
}

impl CameraVelocity {
    pub fn new(tau: Vector3<f64>, omega: Vector3<f64>) -> Self {
        Self { tau, omega }
    }

    pub fn zero() -> Self {
        Self {
            tau: Vector3::zeros(),
            omega: Vector3::zeros(),
        }
    }

    /// Stacked `[tau; omega]` 6-vector, the unknown of the normal equations.
    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(
            self.tau.x, self.tau.y, self.tau.z, self.omega.x, self.omega.y, self.omega.z,
        )
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self {
            tau: Vector3::new(v[0], v[1], v[2]),
            omega: Vector3::new(v[3], v[4], v[5]),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|c| c.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.to_vector().norm()
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            tau: self.tau * s,
            omega: self.omega * s,
        }
    }
}

/// Rigid transform: orthonormal rotation plus translation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_parts(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_quaternion(q: &UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation: q.to_rotation_matrix().into_inner(),
            translation,
        }
    }

    pub fn rotation_quaternion(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_matrix(&self.rotation)
    }

    /// `self` then `other`: `(R_a R_b, R_a t_b + t_a)`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Max deviation of `R^T R` from identity plus `|det(R) - 1|`.
    pub fn orthonormality_defect(&self) -> f64 {
        let gram = self.rotation.transpose() * self.rotation;
        let mut defect = (self.rotation.determinant() - 1.0).abs();
        for i in 0..3 {
            for j in 0..3 {
                let target = if i == j { 1.0 } else { 0.0 };
                defect = defect.max((gram[(i, j)] - target).abs());
            }
        }
        defect
    }
}

/// `A(x) = [1 0 -x; 0 1 -y]`: the translational velocity Jacobian in
/// normalized coordinates (depth-coupled through `rho`).
#[inline]
pub fn matrix_a(x: &NormalizedCoords) -> Matrix2x3<f64> {
    Matrix2x3::new(1.0, 0.0, -x.x, 0.0, 1.0, -x.y)
}

/// `B(x) = [-xy 1+x^2 -y; -1-y^2 xy x]`: the rotational velocity Jacobian,
/// independent of depth.
#[inline]
pub fn matrix_b(x: &NormalizedCoords) -> Matrix2x3<f64> {
    let (xn, yn) = (x.x, x.y);
    Matrix2x3::new(
        -xn * yn,
        1.0 + xn * xn,
        -yn,
        -1.0 - yn * yn,
        xn * yn,
        xn,
    )
}

/// Stacked `Q(x) = [rho A(x) | B(x)]`, one 2x6 block of the full system.
#[inline]
pub fn matrix_q(x: &NormalizedCoords, rho: f64) -> Matrix2x6<f64> {
    let a = matrix_a(x);
    let b = matrix_b(x);
    let mut q = Matrix2x6::zeros();
    q.fixed_view_mut::<2, 3>(0, 0).copy_from(&(a * rho));
    q.fixed_view_mut::<2, 3>(0, 3).copy_from(&b);
    q
}

/// Evaluate the motion field `v(x) = rho(x) A(x) tau + B(x) omega` on the
/// pixel grid. Invalid-depth pixels stay invalid in the output.
pub fn synthesize_motion_field(
    rho: &InverseDepthMap,
    velocity: &CameraVelocity,
    intrinsics: &CameraIntrinsics,
) -> Result<MotionField, GeometryError> {
    let (w, h) = rho.dims();
    if w != intrinsics.width || h != intrinsics.height {
        return Err(GeometryError::ShapeMismatch {
            got_w: w,
            got_h: h,
            want_w: intrinsics.width,
            want_h: intrinsics.height,
        });
    }
    if !velocity.is_finite() {
        return Err(GeometryError::NonFiniteVelocity);
    }
    Ok(MotionField(VectorField::from_fn(w, h, |px, py| {
        if !rho.valid[(px, py)] {
            return None;
        }
        let x = intrinsics.normalized_at(px as f64, py as f64);
        let v = matrix_a(&x) * velocity.tau * rho.rho[(px, py)] + matrix_b(&x) * velocity.omega;
        Some(Vector2::new(v.x, v.y))
    })))
}

/// Rotation exponential via Rodrigues with a second-order Taylor branch for
/// `|theta| < 1e-6` to avoid the 0/0 in `sin(theta)/theta`.
pub fn rotation_exp(axis_angle: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = axis_angle.norm_squared();
    let theta = libm::sqrt(theta2);
    let k = skew(axis_angle);
    let (c1, c2) = if theta < 1e-6 {
        // sin(t)/t = 1 - t^2/6, (1-cos(t))/t^2 = 1/2 - t^2/24
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        (libm::sin(theta) / theta, (1.0 - libm::cos(theta)) / theta2)
    };
    Matrix3::identity() + k * c1 + k * k * c2
}

#[inline]
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Exponentiate a twist over `delta` frame intervals:
/// rotation `exp(skew(omega * delta))`, translation `tau * delta`.
pub fn twist_to_pose(velocity: &CameraVelocity, delta: f64) -> Pose {
    Pose {
        rotation: rotation_exp(&(velocity.omega * delta)),
        translation: velocity.tau * delta,
    }
}

/// Relative camera pose consistent with the motion field of this twist.
///
/// The field model moves scene points with `V = tau + X x omega` relative
/// to the camera, which corresponds to the camera itself rotating with
/// body angular velocity `omega` while translating with velocity `-tau`
/// in its own frame. Use this when chaining fitted twists into a camera
/// trajectory comparable against external ground truth.
pub fn twist_to_camera_pose(velocity: &CameraVelocity, delta: f64) -> Pose {
    Pose {
        rotation: rotation_exp(&(velocity.omega * delta)),
        translation: -velocity.tau * delta,
    }
}
