//! Map refinement over keyframes with adaptive-moment updates. Camera poses
//! are read-only here.

mod loss;

use std::collections::HashMap;

use nalgebra::UnitQuaternion;
use serde::{Deserialize, Serialize};

pub use loss::{
    depth_loss, gan_loss, loss_with_masks, photometric_loss, total_loss, GanLoss, LossMasks,
    LossReport, LossWeights, MIN_DEPTH_ALPHA,
};

use crate::error::{Error, Result};
use crate::geometry::{normals_from_depth, Frame, NormalMap, Pose, Vec3};
use crate::map::{clamp_scale, GaussianMap};
use crate::render::{render, RenderSettings};

pub const DEFAULT_PRUNE_OPACITY: f64 = 0.005;

/// Step sizes per parameter group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearningRates {
    pub center: f64,
    pub rotation: f64,
    pub scales: f64,
    pub color: f64,
    pub opacity: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            center: 1.6e-4,
            rotation: 1e-3,
            scales: 5e-3,
            color: 2.5e-3,
            opacity: 5e-2,
        }
    }
}

impl LearningRates {
    pub fn zero() -> Self {
        Self {
            center: 0.0,
            rotation: 0.0,
            scales: 0.0,
            color: 0.0,
            opacity: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.center, self.rotation, self.scales, self.color, self.opacity];
        if all.iter().all(|v| v.is_finite() && *v >= 0.0) {
            Ok(())
        } else {
            Err(Error::invalid("learning rates must be finite and non-negative"))
        }
    }

    /// Per-parameter rate in the order of `DiskGradient::to_array`.
    fn per_param(&self) -> [f64; 12] {
        let mut lr = [0.0; 12];
        lr[0..3].fill(self.center);
        lr[3..6].fill(self.rotation);
        lr[6..8].fill(self.scales);
        lr[8..11].fill(self.color);
        lr[11] = self.opacity;
        lr
    }
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-15;
const OPACITY_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, Default)]
struct AdamSlot {
    m: [f64; 12],
    v: [f64; 12],
    steps: u32,
}

impl AdamSlot {
    fn step(&mut self, g: &[f64; 12], lr: &[f64; 12]) -> [f64; 12] {
        self.steps += 1;
        let t = self.steps as i32;
        let (c1, c2) = (1.0 - BETA1.powi(t), 1.0 - BETA2.powi(t));
        let mut out = [0.0; 12];
        for i in 0..12 {
            self.m[i] = BETA1 * self.m[i] + (1.0 - BETA1) * g[i];
            self.v[i] = BETA2 * self.v[i] + (1.0 - BETA2) * g[i] * g[i];
            out[i] = -lr[i] * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + ADAM_EPS);
        }
        out
    }
}

/// A keyframe's observation with its precomputed sensor normals.
#[derive(Debug, Clone)]
pub struct TrainingView {
    pub frame: Frame,
    pub gt_normals: NormalMap,
}

impl TrainingView {
    pub fn new(frame: Frame) -> Self {
        let gt_normals = normals_from_depth(&frame.depth, &frame.intrinsics);
        Self { frame, gt_normals }
    }
}

/// One row of the loss trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTraceRow {
    pub iteration: usize,
    pub frame_index: usize,
    pub report: LossReport,
    pub disk_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub weights: LossWeights,
    pub learning_rates: LearningRates,
    pub prune_opacity: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            weights: LossWeights::default(),
            learning_rates: LearningRates::default(),
            prune_opacity: DEFAULT_PRUNE_OPACITY,
        }
    }
}

/// Adaptive-moment optimizer over all disk parameters. Its per-disk state
/// follows the map as long as new disks are only appended.
#[derive(Debug, Clone, Default)]
pub struct MapOptimizer {
    pub config: OptimizerConfig,
    pub settings: RenderSettings,
    slots: Vec<AdamSlot>,
    cursor: usize,
    iteration: usize,
}

impl MapOptimizer {
    pub fn new(config: OptimizerConfig, settings: RenderSettings) -> Self {
        Self {
            config,
            settings,
            ..Default::default()
        }
    }

    /// Total iterations run so far.
    pub fn iterations(&self) -> usize {
        self.iteration
    }

    fn check_poses(map: &GaussianMap, pose_lookup: &dyn Fn(usize) -> Option<Pose>) -> Result<()> {
        for kf in map.mapping_keyframes() {
            let p = pose_lookup(kf.frame_index).ok_or(Error::MissingPose(kf.frame_index))?;
            if p != kf.pose {
                return Err(Error::PoseMutated);
            }
        }
        Ok(())
    }

    /// Runs `iters` steps, visiting the mapping keyframes round-robin and
    /// pruning transparent disks whenever a pass over them completes.
    pub fn optimize(
        &mut self,
        map: &mut GaussianMap,
        views: &HashMap<usize, TrainingView>,
        pose_lookup: &dyn Fn(usize) -> Option<Pose>,
        iters: usize,
    ) -> Result<Vec<LossTraceRow>> {
        let mut trace = Vec::with_capacity(iters);
        if iters == 0 {
            return Ok(trace);
        }
        self.config.weights.validate()?;
        self.config.learning_rates.validate()?;
        if map.is_empty() {
            return Err(Error::invalid("cannot optimize an empty map"));
        }
        let keyframes = map.mapping_keyframes().to_vec();
        if keyframes.is_empty() {
            return Err(Error::invalid("no mapping keyframes to optimize over"));
        }
        Self::check_poses(map, pose_lookup)?;
        let lr = self.config.learning_rates.per_param();
        for _ in 0..iters {
            self.slots.resize(map.len(), AdamSlot::default());
            let kf = keyframes[self.cursor % keyframes.len()];
            let view = views
                .get(&kf.frame_index)
                .ok_or_else(|| Error::invalid(format!("no image for keyframe {}", kf.frame_index)))?;
            let snapshot = map.snapshot();
            let k = &view.frame.intrinsics;
            let out = render(&snapshot, &kf.pose, k, &self.settings);
            let (report, grads) = total_loss(
                &snapshot,
                &kf.pose,
                &view.frame,
                &view.gt_normals,
                &out,
                &self.settings,
                &self.config.weights,
            )?;
            drop(snapshot);
            let slots = &mut self.slots;
            map.update_disks(|disks| {
                for ((d, g), slot) in disks.iter_mut().zip(&grads.disks).zip(slots.iter_mut()) {
                    let mut g = g.to_array();
                    // Scales step in log space, opacity in logit space.
                    g[6] *= d.scales[0];
                    g[7] *= d.scales[1];
                    let o = d.opacity.clamp(OPACITY_EPS, 1.0 - OPACITY_EPS);
                    g[11] *= o * (1.0 - o);
                    // Disks this view does not see keep their state untouched.
                    if g.iter().any(|v| *v != 0.0) {
                        apply_step(d, &slot.step(&g, &lr));
                    }
                }
            });
            trace.push(LossTraceRow {
                iteration: self.iteration,
                frame_index: kf.frame_index,
                report,
                disk_count: map.len(),
            });
            self.iteration += 1;
            self.cursor += 1;
            if self.cursor % keyframes.len() == 0 {
                self.cursor = 0;
                self.prune(map);
            }
        }
        Self::check_poses(map, pose_lookup)?;
        Ok(trace)
    }

    /// Drops disks whose opacity fell below the threshold, keeping the
    /// optimizer state aligned.
    pub fn prune(&mut self, map: &mut GaussianMap) -> usize {
        let threshold = self.config.prune_opacity;
        if !map.disks().iter().any(|d| d.opacity < threshold) {
            return 0;
        }
        self.slots.resize(map.len(), AdamSlot::default());
        let keep: Vec<bool> = map.disks().iter().map(|d| d.opacity >= threshold).collect();
        let mut it = keep.iter();
        self.slots.retain(|_| *it.next().expect("one flag per slot"));
        let removed = map.retain(|d| d.opacity >= threshold);
        log::debug!("pruned {removed} transparent disks");
        removed
    }
}

/// Applies a parameter step and projects back onto the valid set.
fn apply_step(d: &mut crate::map::GaussianDisk, s: &[f64; 12]) {
    d.center += Vec3::new(s[0], s[1], s[2]);
    let w = Vec3::new(s[3], s[4], s[5]);
    if w != Vec3::zeros() {
        d.rotation = UnitQuaternion::from_scaled_axis(w) * d.rotation;
        d.reorthonormalize();
    }
    d.scales = [clamp_scale(d.scales[0] * s[6].exp()), clamp_scale(d.scales[1] * s[7].exp())];
    for c in 0..3 {
        d.color[c] = (d.color[c] + s[8 + c]).clamp(0.0, 1.0);
    }
    let o = d.opacity.clamp(OPACITY_EPS, 1.0 - OPACITY_EPS);
    let logit = (o / (1.0 - o)).ln() + s[11];
    d.opacity = (1.0 / (1.0 + (-logit).exp())).clamp(0.0, 1.0);
}
