//! Frame-to-model generalized ICP with plane-prior covariances.
//!
//! Source points carry flattened neighborhood covariances; each target disk
//! contributes the flattened covariance of its own geometry, which is the
//! plane prior along the disk normal. The objective `sum d^T Omega d` is
//! minimized by Gauss-Newton on left-multiplied SE(3) increments.

use nalgebra::{Matrix3x6, Matrix6, Vector6};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    backproject, estimate_point_covariances, flatten_covariance, hat, plane_covariance, DepthImage,
    Intrinsics, Mat3, PointCloud, Pose, Twist, Vec3, DEFAULT_EPSILON,
};
use crate::map::MapData;
use crate::spatial::KdTree;

/// Fewer matches than this at any iteration loses tracking.
pub const MIN_MATCHES: usize = 10;
const MAX_HALVINGS: usize = 8;
const CHUNK: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub src_index: usize,
    /// Index of the matched disk in the map.
    pub tgt_index: usize,
    pub dist2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GicpParams {
    pub max_iters: usize,
    pub gate_radius: f64,
    /// Convergence threshold on the update norm.
    pub tol: f64,
    pub epsilon: f64,
    /// Pixel stride when back-projecting the tracking cloud.
    pub stride: usize,
    /// Neighbors used for source covariances.
    pub k_neighbors: usize,
}

impl Default for GicpParams {
    fn default() -> Self {
        Self {
            max_iters: 30,
            gate_radius: 0.1,
            tol: 1e-7,
            epsilon: DEFAULT_EPSILON,
            stride: 2,
            k_neighbors: 10,
        }
    }
}

impl GicpParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters must be at least 1"));
        }
        if !(self.gate_radius > 0.0 && self.tol > 0.0) {
            return Err(Error::invalid("gate_radius and tol must be positive"));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::invalid("epsilon must lie in (0, 1)"));
        }
        if self.stride == 0 || self.k_neighbors < 4 {
            return Err(Error::invalid("stride must be >= 1 and k_neighbors >= 4"));
        }
        Ok(())
    }
}

/// Diagnostics of one Gauss-Newton iteration. Both objectives use the same
/// correspondences and information matrices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationStats {
    pub matches: usize,
    pub objective_before: f64,
    pub objective_after: f64,
    pub step_norm: f64,
    pub halvings: usize,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationResult {
    pub pose: Pose,
    pub iterations: usize,
    pub objective: f64,
    pub corr_ratio: f64,
    pub converged: bool,
    pub trace: Vec<IterationStats>,
}

/// Tracking cloud of a depth image in the camera frame, with flattened
/// neighborhood covariances.
pub fn source_cloud(depth: &DepthImage, k: &Intrinsics, params: &GicpParams) -> Result<PointCloud> {
    let cloud = backproject(depth, k, params.stride)?;
    let mut cloud = estimate_point_covariances(&cloud, params.k_neighbors)?;
    if let Some(covs) = cloud.covariances.as_mut() {
        for c in covs.iter_mut() {
            *c = flatten_covariance(c, params.epsilon)?;
        }
    }
    Ok(cloud)
}

/// Plane-prior covariance of a map disk. The disk covariance has its null
/// direction along the normal, so flattening it yields exactly this.
pub fn disk_plane_covariance(map: &MapData, index: usize, epsilon: f64) -> Mat3 {
    plane_covariance(&map.disks()[index].normal(), epsilon)
}

fn match_all(
    points: &[Vec3],
    pose: &Pose,
    tree: &KdTree,
    gate_radius: f64,
) -> Vec<Correspondence> {
    if !(gate_radius > 0.0) {
        return Vec::new();
    }
    let r2 = gate_radius * gate_radius;
    points
        .par_iter()
        .enumerate()
        .filter_map(|(i, p)| {
            let q = pose.transform_point(p);
            let nn = tree.knn(&q, 1).into_iter().next()?;
            (nn.dist2 <= r2).then_some(Correspondence {
                src_index: i,
                tgt_index: nn.index,
                dist2: nn.dist2,
            })
        })
        .collect()
}

/// Nearest map disk center within `gate_radius` of every transformed source
/// point, and the matched fraction.
pub fn find_correspondences(
    src: &PointCloud,
    pose_guess: &Pose,
    map: &MapData,
    gate_radius: f64,
) -> Result<(Vec<Correspondence>, f64)> {
    if src.is_empty() {
        return Err(Error::invalid("source cloud is empty"));
    }
    let tree = KdTree::build(map.centers());
    let corr = match_all(&src.points, pose_guess, &tree, gate_radius);
    let ratio = corr.len() as f64 / src.len() as f64;
    Ok((corr, ratio))
}

/// Residual `x_tgt - T x_src` and information `(C_tgt + R C_src R^T)^-1`.
pub fn residual_and_information(
    x_src: &Vec3,
    c_src: &Mat3,
    x_tgt: &Vec3,
    c_tgt: &Mat3,
    pose: &Pose,
) -> Result<(Vec3, Mat3)> {
    let r = pose.rotation;
    let combined = c_tgt + r * c_src * r.transpose();
    let combined = (combined + combined.transpose()) * 0.5;
    let info = combined
        .cholesky()
        .map(|c| c.inverse())
        .ok_or(Error::SingularCovariance)?;
    Ok((x_tgt - pose.transform_point(x_src), info))
}

/// Correspondences with frozen information matrices.
struct Epoch {
    src: Vec<Vec3>,
    tgt: Vec<Vec3>,
    info: Vec<Mat3>,
}

impl Epoch {
    fn build(
        cloud: &PointCloud,
        covs: &[Mat3],
        map: &MapData,
        corr: &[Correspondence],
        pose: &Pose,
        epsilon: f64,
    ) -> Result<Self> {
        let parts: Vec<(Vec3, Vec3, Mat3)> = corr
            .par_iter()
            .map(|c| {
                let xs = cloud.points[c.src_index];
                let xt = map.centers()[c.tgt_index];
                let ct = disk_plane_covariance(map, c.tgt_index, epsilon);
                let (_, info) = residual_and_information(&xs, &covs[c.src_index], &xt, &ct, pose)?;
                Ok((xs, xt, info))
            })
            .collect::<Result<_>>()?;
        let mut e = Epoch {
            src: Vec::with_capacity(parts.len()),
            tgt: Vec::with_capacity(parts.len()),
            info: Vec::with_capacity(parts.len()),
        };
        for (s, t, i) in parts {
            e.src.push(s);
            e.tgt.push(t);
            e.info.push(i);
        }
        Ok(e)
    }

    fn len(&self) -> usize {
        self.src.len()
    }

    /// Objective at `pose`, summed per chunk and then in chunk order.
    fn objective(&self, pose: &Pose) -> f64 {
        let idx: Vec<usize> = (0..self.len()).collect();
        idx.par_chunks(CHUNK)
            .map(|ch| {
                ch.iter()
                    .map(|&i| {
                        let d = self.tgt[i] - pose.transform_point(&self.src[i]);
                        d.dot(&(self.info[i] * d))
                    })
                    .sum::<f64>()
            })
            .collect::<Vec<_>>()
            .into_iter()
            .sum()
    }

    /// Gauss-Newton normal equations `(H, g)` with `H = sum J^T O J` and
    /// `g = sum J^T O d`.
    fn normal_equations(&self, pose: &Pose) -> (Matrix6<f64>, Vector6<f64>) {
        let idx: Vec<usize> = (0..self.len()).collect();
        idx.par_chunks(CHUNK)
            .map(|ch| {
                let mut h = Matrix6::zeros();
                let mut g = Vector6::zeros();
                for &i in ch {
                    let tx = pose.transform_point(&self.src[i]);
                    let d = self.tgt[i] - tx;
                    // d(d)/d(delta) = -[I | -[Tx]x]
                    let mut j = Matrix3x6::zeros();
                    j.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-Mat3::identity()));
                    j.fixed_view_mut::<3, 3>(0, 3).copy_from(&hat(&tx));
                    let jt_o = j.transpose() * self.info[i];
                    h += jt_o * j;
                    g += jt_o * d;
                }
                (h, g)
            })
            .collect::<Vec<_>>()
            .into_iter()
            .fold((Matrix6::zeros(), Vector6::zeros()), |(h, g), (hh, gg)| (h + hh, g + gg))
    }
}

/// Objective `sum d^T Omega d` for given correspondences at `pose`.
pub fn gicp_objective(
    src: &PointCloud,
    map: &MapData,
    corr: &[Correspondence],
    pose: &Pose,
    epsilon: f64,
) -> Result<f64> {
    let covs = src
        .covariances
        .as_ref()
        .ok_or_else(|| Error::invalid("source cloud has no covariances"))?;
    Ok(Epoch::build(src, covs, map, corr, pose, epsilon)?.objective(pose))
}

/// Registers a camera-frame source cloud against the map, starting at
/// `init`. Correspondences are re-matched every iteration; information
/// matrices are frozen within an iteration.
pub fn solve_gicp(
    src: &PointCloud,
    map: &MapData,
    init: &Pose,
    params: &GicpParams,
) -> Result<RegistrationResult> {
    params.validate()?;
    let covs = src
        .covariances
        .as_ref()
        .ok_or_else(|| Error::invalid("source cloud has no covariances"))?;
    if src.len() < MIN_MATCHES {
        return Err(Error::InsufficientPoints {
            needed: MIN_MATCHES,
            got: src.len(),
        });
    }
    if map.is_empty() {
        return Err(Error::invalid("map is empty"));
    }
    let tree = KdTree::build(map.centers());
    let mut pose = *init;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut objective = f64::NAN;
    for _ in 0..params.max_iters {
        let corr = match_all(&src.points, &pose, &tree, params.gate_radius);
        let matches = corr.len();
        if matches < MIN_MATCHES {
            return Err(Error::TrackingLost {
                matched: matches,
                needed: MIN_MATCHES,
            });
        }
        let epoch = Epoch::build(src, covs, map, &corr, &pose, params.epsilon)?;
        let before = epoch.objective(&pose);
        let (h, g) = epoch.normal_equations(&pose);
        // Minimizer of the linearized objective: H delta = -g.
        let delta: Twist = match h.cholesky() {
            Some(c) => -c.solve(&g),
            None => h
                .lu()
                .solve(&(-g))
                .ok_or_else(|| Error::invalid("degenerate registration geometry"))?,
        };
        let mut step = delta;
        let mut halvings = 0;
        let mut candidate = pose.left_update(&step);
        let mut after;
        let mut accepted = false;
        loop {
            after = epoch.objective(&candidate);
            if after <= before {
                accepted = true;
                break;
            }
            if halvings == MAX_HALVINGS {
                break;
            }
            halvings += 1;
            step *= 0.5;
            candidate = pose.left_update(&step);
        }
        let step_norm = step.norm();
        trace.push(IterationStats {
            matches,
            objective_before: before,
            objective_after: if accepted { after } else { before },
            step_norm,
            halvings,
            accepted,
        });
        log::debug!(
            "gicp iter {}: matches {matches}, objective {before:.6e} -> {after:.6e}, |step| {step_norm:.3e}",
            trace.len()
        );
        if !accepted {
            objective = before;
            converged = true;
            break;
        }
        pose = candidate;
        objective = after;
        if delta.norm() < params.tol {
            converged = true;
            break;
        }
    }
    let matched = match_all(&src.points, &pose, &tree, params.gate_radius).len();
    Ok(RegistrationResult {
        pose,
        iterations: trace.len(),
        objective,
        corr_ratio: matched as f64 / src.len() as f64,
        converged,
        trace,
    })
}
