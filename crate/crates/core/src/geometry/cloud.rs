use rayon::prelude::*;

use super::camera::{DepthImage, Intrinsics};
use super::se3::{Mat3, Vec3};
use crate::error::{Error, Result};
use crate::spatial::KdTree;

/// Default normal-direction variance of a flattened covariance.
pub const DEFAULT_EPSILON: f64 = 1e-3;

#[derive(Debug, Clone, Default)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    pub covariances: Option<Vec<Mat3>>,
    pub normals: Option<Vec<Vec3>>,
}

impl PointCloud {
    pub fn from_points(points: Vec<Vec3>) -> Self {
        Self {
            points,
            covariances: None,
            normals: None,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Back-projects every `stride`-th valid pixel (row-major) into the camera
/// frame.
pub fn backproject(depth: &DepthImage, intrinsics: &Intrinsics, stride: usize) -> Result<PointCloud> {
    if stride == 0 {
        return Err(Error::invalid("stride must be at least 1"));
    }
    let mut points = Vec::new();
    for v in (0..depth.height).step_by(stride) {
        for u in (0..depth.width).step_by(stride) {
            let d = *depth.get(u, v);
            if d > 0.0 {
                points.push(intrinsics.backproject(u as f64, v as f64, d));
            }
        }
    }
    Ok(PointCloud::from_points(points))
}

/// Sample covariance (divisor `n - 1`) of a set of points.
pub fn sample_covariance<'a>(points: impl ExactSizeIterator<Item = &'a Vec3> + Clone) -> Mat3 {
    let n = points.len();
    if n < 2 {
        return Mat3::zeros();
    }
    let mean = points.clone().fold(Vec3::zeros(), |acc, p| acc + p) / n as f64;
    let mut c = Mat3::zeros();
    for p in points {
        let d = p - mean;
        c += d * d.transpose();
    }
    c / (n - 1) as f64
}

/// Fills `covariances` with the sample covariance of each point's `k`
/// nearest neighbors (the point itself included).
pub fn estimate_point_covariances(cloud: &PointCloud, k_neighbors: usize) -> Result<PointCloud> {
    if k_neighbors < 4 {
        return Err(Error::invalid("k_neighbors must be at least 4"));
    }
    if cloud.len() < k_neighbors {
        return Err(Error::InsufficientPoints {
            needed: k_neighbors,
            got: cloud.len(),
        });
    }
    let tree = KdTree::build(&cloud.points);
    let covariances = cloud
        .points
        .par_iter()
        .map(|p| {
            let nn = tree.knn(p, k_neighbors);
            let pts: Vec<Vec3> = nn.iter().map(|n| cloud.points[n.index]).collect();
            sample_covariance(pts.iter())
        })
        .collect();
    Ok(PointCloud {
        points: cloud.points.clone(),
        covariances: Some(covariances),
        normals: cloud.normals.clone(),
    })
}

/// Replaces the spectrum of a covariance with `{1, 1, epsilon}`, keeping the
/// eigenvectors. The `epsilon` axis is the direction of least variance.
pub fn flatten_covariance(c: &Mat3, epsilon: f64) -> Result<Mat3> {
    let asym = (c - c.transpose()).abs().max();
    if asym > 1e-6 {
        return Err(Error::NotSymmetric(asym));
    }
    if !(epsilon > 0.0) {
        return Err(Error::invalid("epsilon must be positive"));
    }
    let normal = least_variance_direction(&((c + c.transpose()) * 0.5));
    Ok(plane_covariance(&normal, epsilon))
}

/// `I + (epsilon - 1) n n^T` for a unit normal.
#[inline]
pub fn plane_covariance(normal: &Vec3, epsilon: f64) -> Mat3 {
    Mat3::identity() + normal * normal.transpose() * (epsilon - 1.0)
}

/// Unit eigenvector of the smallest eigenvalue of a symmetric matrix.
pub fn least_variance_direction(c: &Mat3) -> Vec3 {
    let eig = c.symmetric_eigen();
    let i = eig.eigenvalues.imin();
    eig.eigenvectors.column(i).normalize()
}
