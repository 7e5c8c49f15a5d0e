//! A small synthetic room mapped from ground-truth keyframes, for refinement
//! and ablation experiments.

use std::collections::HashMap;

use g2s::geometry::{so3_exp, Frame, Pose, Vec3};
use g2s::map::{seed_disks_from_frame, GaussianMap, SeedParams};
use g2s::optim::TrainingView;
use g2s::render::{render, RenderOutput, RenderSettings};
use g2s::synth::SyntheticScene;
use rand::Rng;

pub const KEYFRAMES: [usize; 5] = [0, 10, 20, 30, 40];
pub const HELD_OUT: usize = 25;

pub struct Room {
    pub scene: SyntheticScene,
    pub map: GaussianMap,
    pub views: HashMap<usize, TrainingView>,
    pub poses: HashMap<usize, Pose>,
    pub held: Frame,
    pub held_pose: Pose,
}

/// The default room at half resolution.
pub fn half_room() -> SyntheticScene {
    SyntheticScene {
        width: 160,
        height: 120,
        fx: 80.0,
        fy: 80.0,
        ..Default::default()
    }
}

/// Seeds disks from ground-truth keyframes, then tilts every disk by up to
/// `tilt` rad about a random tangent axis and shifts it along its normal by
/// up to `shift` m.
pub fn room(scene: SyntheticScene, tilt: f64, shift: f64, seed: u64) -> Room {
    let mut map = GaussianMap::new();
    let mut views = HashMap::new();
    let mut poses = HashMap::new();
    for f in KEYFRAMES {
        let frame = scene.render_frame(f).unwrap();
        let pose = scene.pose(f);
        seed_disks_from_frame(&frame, &pose, &mut map, &SeedParams::default()).unwrap();
        map.add_mapping_keyframe(f, pose).unwrap();
        poses.insert(f, pose);
        views.insert(f, TrainingView::new(frame));
    }
    let mut rng = super::rng(seed);
    map.update_disks(|disks| {
        for d in disks.iter_mut() {
            let f = d.frame();
            let t1: Vec3 = f.column(0).into();
            let t2: Vec3 = f.column(1).into();
            let n: Vec3 = f.column(2).into();
            let a: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let axis = t1 * a.cos() + t2 * a.sin();
            let r = so3_exp(&(axis * rng.random_range(-tilt..=tilt)));
            d.rotation = nalgebra::UnitQuaternion::from_rotation_matrix(&nalgebra::Rotation3::from_matrix_unchecked(r))
                * d.rotation;
            d.center += n * rng.random_range(-shift..=shift);
        }
    });
    let held = scene.render_frame(HELD_OUT).unwrap();
    let held_pose = scene.pose(HELD_OUT);
    Room {
        scene,
        map,
        views,
        poses,
        held,
        held_pose,
    }
}

/// Mean |rendered - true| depth (m) over pixels with valid truth and
/// alpha >= 0.5.
pub fn masked_depth_l1(out: &RenderOutput, truth: &Frame) -> f64 {
    let mut sum = 0.0;
    let mut n = 0;
    for i in 0..truth.depth.data.len() {
        if truth.depth.data[i] > 0.0 && out.alpha.data[i] >= 0.5 {
            sum += (out.depth.data[i] - truth.depth.data[i]).abs();
            n += 1;
        }
    }
    sum / n as f64
}

impl Room {
    pub fn held_out_depth_l1(&self, settings: &RenderSettings) -> f64 {
        let out = render(&self.map.snapshot(), &self.held_pose, &self.held.intrinsics, settings);
        masked_depth_l1(&out, &self.held)
    }

    pub fn lookup(&self) -> impl Fn(usize) -> Option<Pose> + '_ {
        |f| self.poses.get(&f).copied()
    }
}
