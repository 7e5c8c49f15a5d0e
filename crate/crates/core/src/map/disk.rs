use nalgebra::{Matrix4, Quaternion, UnitQuaternion};

use crate::error::{Error, Result};
use crate::geometry::{Mat3, Vec3};

pub const MIN_SCALE: f64 = 1e-6;
pub const MAX_SCALE: f64 = 10.0;

/// A surface-aligned Gaussian splat.
///
/// The tangent frame `[t1, t2, n]` is stored as a unit quaternion so that
/// serialization is exact. There is no third scale: the disk has no extent
/// along its normal.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianDisk {
    pub center: Vec3,
    pub rotation: UnitQuaternion<f64>,
    pub scales: [f64; 2],
    pub color: [f64; 3],
    pub opacity: f64,
    pub creation_frame: usize,
}

impl GaussianDisk {
    pub fn new(
        center: Vec3,
        frame: &Mat3,
        scales: [f64; 2],
        color: [f64; 3],
        opacity: f64,
        creation_frame: usize,
    ) -> Result<Self> {
        if crate::geometry::rotation_error(frame) > 1e-6 {
            return Err(Error::invalid("tangent frame is not a rotation"));
        }
        let rot = nalgebra::Rotation3::from_matrix_unchecked(*frame);
        let disk = Self {
            center,
            rotation: UnitQuaternion::from_rotation_matrix(&rot),
            scales,
            color,
            opacity,
            creation_frame,
        };
        disk.validate()?;
        Ok(disk)
    }

    /// Disk whose normal is `normal`, with the tangent completion of
    /// [`tangent_frame`].
    pub fn from_normal(
        center: Vec3,
        normal: &Vec3,
        scales: [f64; 2],
        color: [f64; 3],
        opacity: f64,
        creation_frame: usize,
    ) -> Result<Self> {
        Self::new(center, &tangent_frame(normal), scales, color, opacity, creation_frame)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.center.iter().all(|c| c.is_finite()) {
            return Err(Error::invalid("disk center must be finite"));
        }
        if !self.scales.iter().all(|s| *s > MIN_SCALE && *s < MAX_SCALE) {
            return Err(Error::invalid(format!(
                "disk scales {:?} outside ({MIN_SCALE}, {MAX_SCALE})",
                self.scales
            )));
        }
        if !(0.0..=1.0).contains(&self.opacity) {
            return Err(Error::invalid("opacity must lie in [0, 1]"));
        }
        if !self.color.iter().all(|c| c.is_finite()) {
            return Err(Error::invalid("color must be finite"));
        }
        Ok(())
    }

    /// Tangent frame `[t1, t2, n]` as matrix columns.
    pub fn frame(&self) -> Mat3 {
        self.rotation.to_rotation_matrix().into_inner()
    }

    pub fn normal(&self) -> Vec3 {
        self.rotation * Vec3::z()
    }

    /// `R diag(s1^2, s2^2, 0) R^T`.
    pub fn covariance(&self) -> Mat3 {
        let r = self.frame();
        let s = Mat3::from_diagonal(&Vec3::new(self.scales[0], self.scales[1], 0.0));
        let rs = r * s;
        rs * rs.transpose()
    }

    /// Maps homogeneous disk coordinates `(u, v, 1, 1)` to world points.
    pub fn homography(&self) -> Matrix4<f64> {
        let r = self.frame();
        let t1 = r.column(0) * self.scales[0];
        let t2 = r.column(1) * self.scales[1];
        let p = self.center;
        Matrix4::new(
            t1.x, t2.x, 0.0, p.x, //
            t1.y, t2.y, 0.0, p.y, //
            t1.z, t2.z, 0.0, p.z, //
            0.0, 0.0, 0.0, 1.0,
        )
    }

    pub fn point_at(&self, u: f64, v: f64) -> Vec3 {
        let r = self.frame();
        self.center + r.column(0) * (self.scales[0] * u) + r.column(1) * (self.scales[1] * v)
    }

    /// Renormalizes the stored rotation.
    pub fn reorthonormalize(&mut self) {
        let q: Quaternion<f64> = *self.rotation.quaternion();
        self.rotation = UnitQuaternion::from_quaternion(q);
    }
}

/// Orthonormal frame `[t1, t2, n]` completing a unit normal.
///
/// `t1 = normalize(a x n)` with `a = z`, or `a = y` when the normal is within
/// about 25 degrees of the z axis; `t2 = n x t1`.
pub fn tangent_frame(normal: &Vec3) -> Mat3 {
    let n = normal.normalize();
    let a = if n.z.abs() > 0.9 { Vec3::y() } else { Vec3::z() };
    let t1 = a.cross(&n).normalize();
    let t2 = n.cross(&t1);
    Mat3::from_columns(&[t1, t2, n])
}

/// Distance-aware initial scale `base * z^-p`, clamped into the valid range.
pub fn initial_scale(z_depth: f64, p_exponent: f64, base_scale: f64) -> Result<(f64, f64)> {
    if !(z_depth > 0.0) {
        return Err(Error::invalid("depth must be positive"));
    }
    let s = clamp_scale(base_scale * z_depth.powf(-p_exponent));
    Ok((s, s))
}

#[inline]
pub fn clamp_scale(s: f64) -> f64 {
    // Open interval: keep a hair inside both bounds.
    s.clamp(MIN_SCALE * (1.0 + 1e-9), MAX_SCALE * (1.0 - 1e-12))
}
