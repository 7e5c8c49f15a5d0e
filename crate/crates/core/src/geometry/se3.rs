//! Rigid transforms and the SE(3) exponential/logarithm.
//!
//! Twists are ordered `(rho, phi)`: the first three components are the
//! translational part, the last three the rotation vector.

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3, Vector6};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;
pub type Twist = Vector6<f64>;

// Below this angle the closed forms lose digits to cancellation; use series.
const SMALL_ANGLE: f64 = 1e-2;

/// Skew-symmetric cross-product matrix, `hat(a) * b == a.cross(&b)`.
pub fn hat(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rotation matrix from a rotation vector (Rodrigues).
pub fn so3_exp(phi: &Vec3) -> Mat3 {
    let theta2 = phi.norm_squared();
    let theta = theta2.sqrt();
    let k = hat(phi);
    let (a, b) = if theta < SMALL_ANGLE {
        (
            1.0 - theta2 / 6.0 + theta2 * theta2 / 120.0,
            0.5 - theta2 / 24.0 + theta2 * theta2 / 720.0,
        )
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    Mat3::identity() + k * a + k * k * b
}

/// Rotation vector of a rotation matrix. Valid for angles in `[0, pi]`.
pub fn so3_log(r: &Mat3) -> Vec3 {
    let cos = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let w = Vec3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    // atan2 keeps full precision near both 0 and pi, unlike acos.
    let theta = (0.5 * w.norm()).atan2(cos);
    if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        return w * (0.5 * (1.0 + t2 / 6.0 + 7.0 * t2 * t2 / 360.0));
    }
    if std::f64::consts::PI - theta < 1e-4 {
        // Near pi the antisymmetric part vanishes; recover the axis from the
        // symmetric part R + R^T = 2 cos I + 2 (1 - cos) a a^T.
        let s = (r + r.transpose()) * 0.5 - Mat3::identity() * cos;
        let denom = 1.0 - cos;
        let diag = Vec3::new(s[(0, 0)], s[(1, 1)], s[(2, 2)]) / denom;
        let i = diag.imax();
        let mut axis = Vec3::zeros();
        axis[i] = diag[i].max(0.0).sqrt();
        for j in 0..3 {
            if j != i {
                axis[j] = s[(i, j)] / denom / axis[i];
            }
        }
        axis.normalize_mut();
        if axis.dot(&w) < 0.0 {
            axis = -axis;
        }
        return axis * theta;
    }
    w * (theta / (2.0 * theta.sin()))
}

/// Left Jacobian of SO(3); maps the translational twist to the translation.
fn so3_left_jacobian(phi: &Vec3) -> Mat3 {
    let theta2 = phi.norm_squared();
    let theta = theta2.sqrt();
    let k = hat(phi);
    let (b, c) = if theta < SMALL_ANGLE {
        (
            0.5 - theta2 / 24.0 + theta2 * theta2 / 720.0,
            1.0 / 6.0 - theta2 / 120.0 + theta2 * theta2 / 5040.0,
        )
    } else {
        (
            (1.0 - theta.cos()) / theta2,
            (theta - theta.sin()) / (theta2 * theta),
        )
    };
    Mat3::identity() + k * b + k * k * c
}

fn so3_left_jacobian_inv(phi: &Vec3) -> Mat3 {
    let theta2 = phi.norm_squared();
    let theta = theta2.sqrt();
    let k = hat(phi);
    let c = if theta < SMALL_ANGLE {
        1.0 / 12.0 + theta2 / 720.0 + theta2 * theta2 / 30240.0
    } else {
        (1.0 - theta * theta.sin() / (2.0 * (1.0 - theta.cos()))) / theta2
    };
    Mat3::identity() - k * 0.5 + k * k * c
}

/// A rigid transform. As a camera pose it maps camera coordinates to world
/// coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn new(rotation: Mat3, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::new(Mat3::identity(), Vec3::zeros())
    }

    pub fn exp(twist: &Twist) -> Self {
        let rho = twist.fixed_rows::<3>(0).into_owned();
        let phi = twist.fixed_rows::<3>(3).into_owned();
        Self::new(so3_exp(&phi), so3_left_jacobian(&phi) * rho)
    }

    pub fn log(&self) -> Twist {
        let phi = so3_log(&self.rotation);
        let rho = so3_left_jacobian_inv(&phi) * self.translation;
        Twist::new(rho.x, rho.y, rho.z, phi.x, phi.y, phi.z)
    }

    pub fn from_quaternion(translation: Vec3, qx: f64, qy: f64, qz: f64, qw: f64) -> Self {
        let q = UnitQuaternion::from_quaternion(Quaternion::new(qw, qx, qy, qz));
        Self::new(q.to_rotation_matrix().into_inner(), translation)
    }

    /// Unit quaternion as `[qx, qy, qz, qw]` with `qw >= 0`.
    pub fn quaternion(&self) -> [f64; 4] {
        rotation_to_quaternion(&self.rotation)
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// Applies the inverse transform without forming it.
    pub fn inverse_transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation.transpose() * (p - self.translation)
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self::new(rt, -(rt * self.translation))
    }

    pub fn compose(&self, other: &Pose) -> Self {
        Self::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    /// Left update `exp(delta) * self`.
    pub fn left_update(&self, delta: &Twist) -> Self {
        Pose::exp(delta).compose(self)
    }

    /// Largest deviation of `R^T R` from identity and of `det R` from one.
    pub fn orthonormality_error(&self) -> f64 {
        rotation_error(&self.rotation)
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        self.translation.iter().all(|v| v.is_finite()) && self.orthonormality_error() <= tol
    }

    pub fn rotation_angle_to(&self, other: &Pose) -> f64 {
        so3_log(&(self.rotation.transpose() * other.rotation)).norm()
    }
}

pub fn rotation_error(r: &Mat3) -> f64 {
    let ortho = (r.transpose() * r - Mat3::identity()).abs().max();
    ortho.max((r.determinant() - 1.0).abs())
}

pub fn rotation_to_quaternion(r: &Mat3) -> [f64; 4] {
    let rot = nalgebra::Rotation3::from_matrix_unchecked(*r);
    let q = UnitQuaternion::from_rotation_matrix(&rot);
    let q = if q.w < 0.0 { -q.into_inner() } else { q.into_inner() };
    [q.i, q.j, q.k, q.w]
}

pub fn quaternion_to_rotation(q: [f64; 4]) -> Mat3 {
    UnitQuaternion::from_quaternion(Quaternion::new(q[3], q[0], q[1], q[2]))
        .to_rotation_matrix()
        .into_inner()
}

/// Nearest rotation matrix in the Frobenius sense.
pub fn orthonormalize(r: &Mat3) -> Mat3 {
    let svd = r.svd(true, true);
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let mut out = u * v_t;
    if out.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        out = u * v_t;
    }
    out
}
