//! The global disk map: storage, spatial index, keyframes and seeding.

mod disk;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use disk::{clamp_scale, initial_scale, tangent_frame, GaussianDisk, MAX_SCALE, MIN_SCALE};

use crate::error::{Error, Result};
use crate::geometry::{normals_from_depth, Frame, Pose, Vec3};
use crate::spatial::{Neighbor, VoxelGrid};

pub const DEFAULT_CELL_SIZE: f64 = 0.1;

/// Disk storage plus an index over the disk centers. Shared between the
/// writer and snapshots; the writer copies on write while snapshots live.
#[derive(Debug, Clone)]
pub struct MapData {
    disks: Vec<GaussianDisk>,
    centers: Vec<Vec3>,
    index: VoxelGrid,
}

impl MapData {
    fn new(cell_size: f64) -> Self {
        Self {
            disks: Vec::new(),
            centers: Vec::new(),
            index: VoxelGrid::new(cell_size),
        }
    }

    fn push(&mut self, disk: GaussianDisk) {
        let i = self.disks.len();
        self.index.insert(i, &disk.center);
        self.centers.push(disk.center);
        self.disks.push(disk);
    }

    fn reindex(&mut self) {
        self.centers = self.disks.iter().map(|d| d.center).collect();
        self.index.clear();
        for (i, c) in self.centers.iter().enumerate() {
            self.index.insert(i, c);
        }
    }

    pub fn disks(&self) -> &[GaussianDisk] {
        &self.disks
    }

    pub fn centers(&self) -> &[Vec3] {
        &self.centers
    }

    pub fn len(&self) -> usize {
        self.disks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.disks.is_empty()
    }

    /// Up to `max_count` disks within `max_radius` of `point`, nearest first,
    /// equal distances ordered by insertion index.
    pub fn query_neighbors(&self, point: &Vec3, max_count: usize, max_radius: f64) -> Vec<Neighbor> {
        self.index
            .radius_search(&self.centers, point, max_radius, max_count)
    }

    pub fn nearest_within(&self, point: &Vec3, max_radius: f64) -> Option<Neighbor> {
        self.index.nearest_within(&self.centers, point, max_radius)
    }
}

/// Immutable, generation-stamped view of the map.
#[derive(Debug, Clone)]
pub struct MapSnapshot {
    data: Arc<MapData>,
    generation: u64,
}

impl MapSnapshot {
    pub fn generation(&self) -> u64 {
        self.generation
    }

    /// Builds a standalone snapshot from a list of disks.
    pub fn from_disks(disks: Vec<GaussianDisk>, generation: u64) -> Self {
        let mut data = MapData::new(DEFAULT_CELL_SIZE);
        for d in disks {
            data.push(d);
        }
        Self {
            data: Arc::new(data),
            generation,
        }
    }
}

impl std::ops::Deref for MapSnapshot {
    type Target = MapData;

    fn deref(&self) -> &MapData {
        &self.data
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keyframe {
    pub frame_index: usize,
    pub pose: Pose,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KeyframePolicy {
    pub corr_ratio_threshold: f64,
    pub mapping_interval: usize,
}

impl Default for KeyframePolicy {
    fn default() -> Self {
        Self {
            corr_ratio_threshold: 0.9,
            mapping_interval: 8,
        }
    }
}

impl KeyframePolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.corr_ratio_threshold > 0.0 && self.corr_ratio_threshold < 1.0) {
            return Err(Error::invalid("corr_ratio_threshold must lie in (0, 1)"));
        }
        if self.mapping_interval == 0 {
            return Err(Error::invalid("mapping_interval must be at least 1"));
        }
        Ok(())
    }

    pub fn is_tracking_keyframe(&self, corr_ratio: f64) -> bool {
        corr_ratio < self.corr_ratio_threshold
    }

    pub fn is_mapping_keyframe(&self, frame_index: usize) -> bool {
        frame_index % self.mapping_interval == 0
    }
}

/// The global map. Single writer; readers take [`MapSnapshot`]s.
#[derive(Debug, Clone)]
pub struct GaussianMap {
    data: Arc<MapData>,
    tracking_keyframes: Vec<Keyframe>,
    mapping_keyframes: Vec<Keyframe>,
    generation: u64,
}

impl Default for GaussianMap {
    fn default() -> Self {
        Self::new()
    }
}

impl std::ops::Deref for GaussianMap {
    type Target = MapData;

    fn deref(&self) -> &MapData {
        &self.data
    }
}

impl GaussianMap {
    pub fn new() -> Self {
        Self::with_cell_size(DEFAULT_CELL_SIZE)
    }

    pub fn with_cell_size(cell_size: f64) -> Self {
        Self {
            data: Arc::new(MapData::new(cell_size)),
            tracking_keyframes: Vec::new(),
            mapping_keyframes: Vec::new(),
            generation: 0,
        }
    }

    pub fn from_disks(disks: Vec<GaussianDisk>) -> Self {
        let mut map = Self::new();
        for d in disks {
            map.push(d);
        }
        map
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn snapshot(&self) -> MapSnapshot {
        MapSnapshot {
            data: Arc::clone(&self.data),
            generation: self.generation,
        }
    }

    pub fn push(&mut self, disk: GaussianDisk) {
        Arc::make_mut(&mut self.data).push(disk);
        self.generation += 1;
    }

    /// Applies `f` to the disks, then re-indexes and advances the generation.
    pub fn update_disks<R>(&mut self, f: impl FnOnce(&mut Vec<GaussianDisk>) -> R) -> R {
        let data = Arc::make_mut(&mut self.data);
        let out = f(&mut data.disks);
        data.reindex();
        self.generation += 1;
        out
    }

    /// Removes disks failing `keep`; returns how many were removed.
    pub fn retain(&mut self, mut keep: impl FnMut(&GaussianDisk) -> bool) -> usize {
        self.update_disks(|disks| {
            let before = disks.len();
            disks.retain(|d| keep(d));
            before - disks.len()
        })
    }

    pub fn add_tracking_keyframe(&mut self, frame_index: usize, pose: Pose) -> Result<()> {
        check_pose(&pose)?;
        self.tracking_keyframes.push(Keyframe { frame_index, pose });
        Ok(())
    }

    pub fn add_mapping_keyframe(&mut self, frame_index: usize, pose: Pose) -> Result<()> {
        check_pose(&pose)?;
        self.mapping_keyframes.push(Keyframe { frame_index, pose });
        Ok(())
    }

    pub fn tracking_keyframes(&self) -> &[Keyframe] {
        &self.tracking_keyframes
    }

    pub fn mapping_keyframes(&self) -> &[Keyframe] {
        &self.mapping_keyframes
    }
}

fn check_pose(pose: &Pose) -> Result<()> {
    if !pose.is_valid(1e-9) {
        return Err(Error::invalid("keyframe pose is not a valid rigid transform"));
    }
    Ok(())
}

/// Parameters of [`seed_disks_from_frame`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeedParams {
    pub seed_stride: usize,
    pub base_scale: f64,
    pub p_exponent: f64,
    /// Gate radius as a fraction of the local initial scale.
    pub gate_factor: f64,
    pub initial_opacity: f64,
}

impl Default for SeedParams {
    fn default() -> Self {
        Self {
            seed_stride: 4,
            base_scale: 0.05,
            p_exponent: 0.333,
            gate_factor: 0.5,
            initial_opacity: 0.7,
        }
    }
}

/// Adds one disk per sampled pixel that has valid depth and a valid normal
/// and no existing disk within the seeding gate. Returns the number added.
pub fn seed_disks_from_frame(
    frame: &Frame,
    pose: &Pose,
    map: &mut GaussianMap,
    params: &SeedParams,
) -> Result<usize> {
    if params.seed_stride == 0 {
        return Err(Error::invalid("seed_stride must be at least 1"));
    }
    check_pose(pose)?;
    let k = &frame.intrinsics;
    let normals = normals_from_depth(&frame.depth, k);
    let mut added = 0;
    for v in (0..frame.depth.height).step_by(params.seed_stride) {
        for u in (0..frame.depth.width).step_by(params.seed_stride) {
            let i = frame.depth.index(u, v);
            let z = frame.depth.data[i];
            if z <= 0.0 || !normals.valid[i] {
                continue;
            }
            let (s1, s2) = initial_scale(z, params.p_exponent, params.base_scale)?;
            let center = pose.transform_point(&k.backproject(u as f64, v as f64, z));
            if map.nearest_within(&center, params.gate_factor * s1).is_some() {
                continue;
            }
            let normal = pose.rotation * normals.normals.data[i];
            let color = frame.color.data[i].map(|c| c.clamp(0.0, 1.0));
            map.push(GaussianDisk::from_normal(
                center,
                &normal,
                [s1, s2],
                color,
                params.initial_opacity,
                frame.index,
            )?);
            added += 1;
        }
    }
    Ok(added)
}
