//! The tracking and mapping loop.
//!
//! Frames are processed strictly in order: track against the map, register
//! keyframes, seed new disks and run a few optimization steps whenever a
//! mapping keyframe arrives. Everything is sequential at this level, so a
//! run is a pure function of the dataset and the configuration.

use std::collections::HashMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{
    ate, depth_l1, depth_mask, extract_mesh, mesh_prf, psnr, ssim, TriangleMesh, TsdfVolume,
    ASSOCIATION_TOLERANCE, DEFAULT_SAMPLES, DEFAULT_TRUNCATION,
};
use crate::geometry::{orthonormalize, DepthImage, Frame, Image, Intrinsics, Pose, Vec3};
use crate::map::{seed_disks_from_frame, GaussianMap, KeyframePolicy, SeedParams};
use crate::optim::{LearningRates, LossTraceRow, LossWeights, MapOptimizer, OptimizerConfig, TrainingView};
use crate::render::{render, RenderSettings};
use crate::synth::SyntheticScene;
use crate::tracking::{solve_gicp, source_cloud, GicpParams};
use crate::trajectory::Trajectory;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MappingConfig {
    /// Optimization steps run at every mapping keyframe.
    pub iterations_per_keyframe: usize,
    /// Passes over all mapping keyframes after the last frame.
    pub final_epochs: usize,
    pub prune_opacity: f64,
    /// Also seed disks at tracking keyframes, not only at mapping keyframes.
    pub seed_tracking_keyframes: bool,
}

impl Default for MappingConfig {
    fn default() -> Self {
        Self {
            iterations_per_keyframe: 10,
            final_epochs: 5,
            prune_opacity: crate::optim::DEFAULT_PRUNE_OPACITY,
            seed_tracking_keyframes: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub voxel_size: f64,
    pub truncation: f64,
    /// Distance threshold of the mesh precision/recall, meters.
    pub mesh_threshold: f64,
    pub mesh_samples: usize,
    /// Minimum rendered opacity for a pixel to count in depth metrics.
    pub min_alpha: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            voxel_size: 0.01,
            truncation: DEFAULT_TRUNCATION,
            mesh_threshold: 0.01,
            mesh_samples: DEFAULT_SAMPLES,
            min_alpha: crate::optim::MIN_DEPTH_ALPHA,
        }
    }
}

/// Every tunable of a run. Serialized as TOML with one section per owner,
/// so `tracking.gate_radius = 0.1` addresses a single field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SlamConfig {
    pub seed: u64,
    pub tracking: GicpParams,
    pub keyframes: KeyframePolicy,
    pub seeding: SeedParams,
    pub weights: LossWeights,
    pub learning_rates: LearningRates,
    pub mapping: MappingConfig,
    pub render: RenderSettings,
    pub eval: EvalConfig,
}

impl Default for SlamConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            tracking: GicpParams::default(),
            keyframes: KeyframePolicy::default(),
            seeding: SeedParams::default(),
            weights: LossWeights::default(),
            learning_rates: LearningRates::default(),
            mapping: MappingConfig::default(),
            render: RenderSettings::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl SlamConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.tracking.validate()?;
        self.keyframes.validate()?;
        self.weights.validate()?;
        self.learning_rates.validate()?;
        let s = &self.seeding;
        if s.seed_stride == 0 {
            return Err(Error::Config("seeding.seed_stride must be at least 1".into()));
        }
        if !(s.base_scale > 0.0 && s.p_exponent >= 0.0 && s.gate_factor >= 0.0) {
            return Err(Error::Config("seeding scales must be positive".into()));
        }
        if !(s.initial_opacity > 0.0 && s.initial_opacity <= 1.0) {
            return Err(Error::Config("seeding.initial_opacity must lie in (0, 1]".into()));
        }
        let r = &self.render;
        if !(r.near > 0.0 && r.far > r.near) {
            return Err(Error::Config("render planes need 0 < near < far".into()));
        }
        if r.tile_size == 0 {
            return Err(Error::Config("render.tile_size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.mapping.prune_opacity) {
            return Err(Error::Config("mapping.prune_opacity must lie in [0, 1)".into()));
        }
        let e = &self.eval;
        if !(e.voxel_size > 0.0 && e.truncation >= 2.0 * e.voxel_size) {
            return Err(Error::Config("eval.truncation must be at least twice eval.voxel_size".into()));
        }
        if !(e.mesh_threshold > 0.0) || e.mesh_samples == 0 {
            return Err(Error::Config("eval mesh threshold and samples must be positive".into()));
        }
        Ok(())
    }

    pub fn optimizer(&self) -> OptimizerConfig {
        OptimizerConfig {
            weights: self.weights,
            learning_rates: self.learning_rates,
            prune_opacity: self.mapping.prune_opacity,
        }
    }
}

/// Random-access RGB-D sequence.
pub trait Dataset {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn frame(&self, index: usize) -> Result<Frame>;

    fn ground_truth(&self) -> Option<Trajectory> {
        None
    }

    fn reference_mesh(&self) -> Option<TriangleMesh> {
        None
    }
}

impl Dataset for SyntheticScene {
    fn len(&self) -> usize {
        self.frames
    }

    fn frame(&self, index: usize) -> Result<Frame> {
        self.render_frame(index)
    }

    fn ground_truth(&self) -> Option<Trajectory> {
        Some(self.trajectory())
    }

    fn reference_mesh(&self) -> Option<TriangleMesh> {
        Some(SyntheticScene::reference_mesh(self))
    }
}

/// Outcome of one processed frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameReport {
    pub pose: Pose,
    pub corr_ratio: f64,
    pub tracking_keyframe: bool,
    pub mapping_keyframe: bool,
    pub seeded: usize,
}

/// Mutable state of a run.
pub struct SlamState {
    pub config: SlamConfig,
    pub map: GaussianMap,
    pub trajectory: Trajectory,
    pub loss_trace: Vec<LossTraceRow>,
    optimizer: MapOptimizer,
    views: HashMap<usize, TrainingView>,
    poses: HashMap<usize, Pose>,
    last_pose: Option<Pose>,
}

impl SlamState {
    pub fn new(config: SlamConfig) -> Result<Self> {
        config.validate()?;
        let optimizer = MapOptimizer::new(config.optimizer(), config.render);
        Ok(Self {
            config,
            map: GaussianMap::new(),
            trajectory: Trajectory::new(),
            loss_trace: Vec::new(),
            optimizer,
            views: HashMap::new(),
            poses: HashMap::new(),
            last_pose: None,
        })
    }

    fn seed(&mut self, frame: &Frame, pose: &Pose) -> Result<usize> {
        seed_disks_from_frame(frame, pose, &mut self.map, &self.config.seeding)
    }

    fn optimize(&mut self, iters: usize) -> Result<()> {
        let poses = &self.poses;
        let rows = self
            .optimizer
            .optimize(&mut self.map, &self.views, &|i| poses.get(&i).copied(), iters)?;
        self.loss_trace.extend(rows);
        Ok(())
    }

    /// Tracks one frame and updates the map. On error the state is left as
    /// it was before the call.
    pub fn process_frame(&mut self, frame: Frame) -> Result<FrameReport> {
        let index = frame.index;
        let Some(prev) = self.last_pose else {
            let pose = Pose::identity();
            let seeded = self.seed(&frame, &pose)?;
            self.map.add_tracking_keyframe(index, pose)?;
            self.map.add_mapping_keyframe(index, pose)?;
            self.trajectory.push(frame.timestamp, pose)?;
            self.poses.insert(index, pose);
            self.last_pose = Some(pose);
            self.views.insert(index, TrainingView::new(frame));
            self.optimize(self.config.mapping.iterations_per_keyframe)?;
            return Ok(FrameReport {
                pose,
                corr_ratio: 1.0,
                tracking_keyframe: true,
                mapping_keyframe: true,
                seeded,
            });
        };
        let cloud = source_cloud(&frame.depth, &frame.intrinsics, &self.config.tracking)?;
        let reg = solve_gicp(&cloud, &self.map, &prev, &self.config.tracking)?;
        let pose = Pose::new(orthonormalize(&reg.pose.rotation), reg.pose.translation);
        self.trajectory.push(frame.timestamp, pose)?;
        self.poses.insert(index, pose);
        self.last_pose = Some(pose);
        let policy = self.config.keyframes;
        let tracking_keyframe = policy.is_tracking_keyframe(reg.corr_ratio);
        let mapping_keyframe = policy.is_mapping_keyframe(index);
        let mut seeded = 0;
        if tracking_keyframe {
            self.map.add_tracking_keyframe(index, pose)?;
            if self.config.mapping.seed_tracking_keyframes && !mapping_keyframe {
                seeded += self.seed(&frame, &pose)?;
            }
        }
        if mapping_keyframe {
            self.map.add_mapping_keyframe(index, pose)?;
            seeded += self.seed(&frame, &pose)?;
            self.views.insert(index, TrainingView::new(frame));
            self.optimize(self.config.mapping.iterations_per_keyframe)?;
        }
        log::debug!(
            "frame {index}: {} gicp iterations, corr {:.3}, {} disks",
            reg.iterations,
            reg.corr_ratio,
            self.map.len()
        );
        Ok(FrameReport {
            pose,
            corr_ratio: reg.corr_ratio,
            tracking_keyframe,
            mapping_keyframe,
            seeded,
        })
    }

    /// Final passes over every mapping keyframe.
    pub fn finish(&mut self) -> Result<()> {
        let iters = self.config.mapping.final_epochs * self.map.mapping_keyframes().len();
        if iters > 0 && !self.map.is_empty() {
            self.optimize(iters)?;
        }
        Ok(())
    }
}

/// Summary numbers of a run; absent entries could not be computed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub ate_rmse_cm: Option<f64>,
    pub depth_l1_cm: Option<f64>,
    pub psnr_db: Option<f64>,
    pub ssim: Option<f64>,
    pub precision_pct: Option<f64>,
    pub recall_pct: Option<f64>,
    pub f1_pct: Option<f64>,
    pub fps: Option<f64>,
    pub disk_count: usize,
    pub frames: usize,
}

pub struct RunOutput {
    pub trajectory: Trajectory,
    pub map: GaussianMap,
    pub metrics: Metrics,
    pub loss_trace: Vec<LossTraceRow>,
    /// Frame at which tracking was lost, if the run halted early.
    pub lost_at: Option<usize>,
}

fn is_tracking_failure(e: &Error) -> bool {
    matches!(e, Error::TrackingLost { .. } | Error::InsufficientPoints { .. })
}

/// Processes the whole dataset, refines the map and evaluates it. Losing
/// track stops the run but keeps everything estimated so far.
pub fn run(dataset: &dyn Dataset, config: &SlamConfig) -> Result<RunOutput> {
    if dataset.is_empty() {
        return Err(Error::invalid("dataset has no frames"));
    }
    let mut state = SlamState::new(config.clone())?;
    let start = Instant::now();
    let mut lost_at = None;
    for i in 0..dataset.len() {
        let frame = dataset.frame(i).map_err(|e| Error::Dataset {
            index: i,
            source: Box::new(e),
        })?;
        match state.process_frame(frame) {
            Ok(_) => {}
            Err(e) if is_tracking_failure(&e) => {
                log::warn!("tracking lost at frame {i}: {e}");
                lost_at = Some(i);
                break;
            }
            Err(e) => return Err(e),
        }
    }
    state.finish()?;
    let elapsed = start.elapsed().as_secs_f64();
    let mut metrics = evaluate(dataset, config, &state.map, &state.trajectory)?;
    metrics.fps = Some(state.trajectory.len() as f64 / elapsed.max(1e-9));
    Ok(RunOutput {
        trajectory: state.trajectory,
        map: state.map,
        metrics,
        loss_trace: state.loss_trace,
        lost_at,
    })
}

/// Rendered depth divided by opacity where the opacity reaches `min_alpha`.
pub fn normalized_depth(depth: &DepthImage, alpha: &Image<f64>, min_alpha: f64) -> DepthImage {
    let data = depth
        .data
        .iter()
        .zip(&alpha.data)
        .map(|(&d, &a)| if a >= min_alpha && a > 0.0 { d / a } else { 0.0 })
        .collect();
    Image::from_vec(depth.width, depth.height, data).expect("same size")
}

/// Fuses depth rendered from the map at every trajectory pose.
pub fn fuse_map(
    map: &GaussianMap,
    trajectory: &Trajectory,
    k: &Intrinsics,
    config: &SlamConfig,
) -> Result<TriangleMesh> {
    if map.is_empty() {
        return Ok(TriangleMesh::default());
    }
    let margin = Vec3::repeat(config.eval.truncation);
    let (mut lo, mut hi) = (Vec3::repeat(f64::INFINITY), Vec3::repeat(f64::NEG_INFINITY));
    for c in map.centers() {
        lo = lo.inf(c);
        hi = hi.sup(c);
    }
    let mut vol = TsdfVolume::covering(lo - margin, hi + margin, config.eval.voxel_size, config.eval.truncation)?;
    let snapshot = map.snapshot();
    for (_, pose) in trajectory.iter() {
        let out = render(&snapshot, pose, k, &config.render);
        let depth = normalized_depth(&out.depth, &out.alpha, config.eval.min_alpha);
        vol.integrate(&depth, Some(&out.color), pose, k)?;
    }
    Ok(extract_mesh(&vol))
}

/// Metrics of a map and trajectory against the dataset. Image metrics
/// average over the mapping-keyframe frames (every `mapping_interval`-th).
pub fn evaluate(
    dataset: &dyn Dataset,
    config: &SlamConfig,
    map: &GaussianMap,
    trajectory: &Trajectory,
) -> Result<Metrics> {
    let mut m = Metrics {
        disk_count: map.len(),
        frames: trajectory.len(),
        ..Default::default()
    };
    let alignment = match dataset.ground_truth() {
        Some(gt) if trajectory.len() >= 2 => {
            let res = ate(trajectory, &gt, ASSOCIATION_TOLERANCE)?;
            m.ate_rmse_cm = Some(100.0 * res.rmse);
            Some(res.alignment)
        }
        Some(_) => Some(Pose::identity()),
        None => None,
    };
    if map.is_empty() {
        return Ok(m);
    }
    let snapshot = map.snapshot();
    let (mut l1, mut ps, mut ss, mut n) = (0.0, 0.0, 0.0, 0usize);
    let mut k = None;
    for (i, pose) in trajectory.poses.iter().enumerate() {
        if !config.keyframes.is_mapping_keyframe(i) {
            continue;
        }
        let frame = dataset.frame(i).map_err(|e| Error::Dataset {
            index: i,
            source: Box::new(e),
        })?;
        let out = render(&snapshot, pose, &frame.intrinsics, &config.render);
        let mask = depth_mask(&frame.depth, &out.alpha)?;
        match depth_l1(&out.depth, &frame.depth, &mask) {
            Ok(v) => l1 += v,
            Err(Error::NoSupervisedPixels) => l1 += f64::NAN,
            Err(e) => return Err(e),
        }
        let color = clamp_color(&out.color);
        ps += psnr(&color, &frame.color)?;
        ss += ssim(&color, &frame.color)?;
        n += 1;
        k = Some(frame.intrinsics);
    }
    if n > 0 {
        let n = n as f64;
        m.depth_l1_cm = Some(l1 / n).filter(|v| v.is_finite());
        m.psnr_db = Some(ps / n);
        m.ssim = Some(ss / n);
    }
    if let (Some(reference), Some(align), Some(k)) = (dataset.reference_mesh(), alignment, k) {
        let mut mesh = fuse_map(map, trajectory, &k, config)?;
        for v in mesh.vertices.iter_mut() {
            *v = align.transform_point(v);
        }
        if !mesh.is_empty() {
            let prf = mesh_prf(&mesh, &reference, config.eval.mesh_threshold, config.eval.mesh_samples, config.seed)?;
            m.precision_pct = Some(prf.precision_pct);
            m.recall_pct = Some(prf.recall_pct);
            m.f1_pct = Some(prf.f1_pct);
        }
    }
    Ok(m)
}

fn clamp_color(c: &crate::geometry::ColorImage) -> crate::geometry::ColorImage {
    let data = c.data.iter().map(|p| p.map(|v| v.clamp(0.0, 1.0))).collect();
    Image::from_vec(c.width, c.height, data).expect("same size")
}
