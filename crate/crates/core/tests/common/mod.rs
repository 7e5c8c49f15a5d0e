//! Shared fixtures for the integration tests.
#![allow(dead_code)]

pub mod gradcheck;
pub mod isotropic;
pub mod room;

use g2s::geometry::{so3_exp, Intrinsics, Pose, Vec3};
use g2s::map::{tangent_frame, GaussianDisk};
use nalgebra::UnitQuaternion;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn small_camera() -> Intrinsics {
    Intrinsics::new(40.0, 40.0, 23.5, 17.5, 48, 36).unwrap()
}

/// Random disks roughly facing a camera at the origin looking down +z.
pub fn random_disks(rng: &mut ChaCha8Rng, n: usize) -> Vec<GaussianDisk> {
    (0..n)
        .map(|_| {
            let z = rng.random_range(1.0..2.5);
            let center = Vec3::new(
                rng.random_range(-0.45..0.45) * z,
                rng.random_range(-0.35..0.35) * z,
                z,
            );
            let tilt = Vec3::new(rng.random_range(-0.6..0.6), rng.random_range(-0.6..0.6), 0.0);
            let normal = so3_exp(&tilt) * Vec3::new(0.0, 0.0, -1.0);
            let spin = so3_exp(&(normal * rng.random_range(0.0..6.0)));
            let frame = spin * tangent_frame(&normal);
            GaussianDisk::new(
                center,
                &frame,
                [rng.random_range(0.06..0.2), rng.random_range(0.06..0.2)],
                [rng.random(), rng.random(), rng.random()],
                rng.random_range(0.3..0.95),
                0,
            )
            .unwrap()
        })
        .collect()
}

/// Parameter `p` of a disk in the order of `DiskGradient::to_array`.
pub fn perturb(disk: &GaussianDisk, p: usize, h: f64) -> GaussianDisk {
    let mut d = disk.clone();
    match p {
        0..=2 => d.center[p] += h,
        3..=5 => {
            let mut w = Vec3::zeros();
            w[p - 3] = h;
            d.rotation = UnitQuaternion::from_scaled_axis(w) * d.rotation;
        }
        6..=7 => d.scales[p - 6] += h,
        8..=10 => d.color[p - 8] += h,
        11 => d.opacity += h,
        _ => unreachable!(),
    }
    d
}

pub const PARAM_NAMES: [&str; 12] = [
    "cx", "cy", "cz", "wx", "wy", "wz", "s1", "s2", "r", "g", "b", "opacity",
];

pub fn identity() -> Pose {
    Pose::identity()
}

use g2s::geometry::PointCloud;
use g2s::map::{seed_disks_from_frame, GaussianMap, SeedParams};
use g2s::synth::SyntheticScene;
use g2s::tracking::{source_cloud, GicpParams};

/// Map seeded from one synthetic frame at the identity pose, plus that
/// frame's tracking cloud.
pub fn room_tracking_fixture(frame: usize) -> (GaussianMap, PointCloud) {
    let scene = SyntheticScene::default();
    let f = scene.render_frame(frame).unwrap();
    let mut map = GaussianMap::new();
    seed_disks_from_frame(&f, &Pose::identity(), &mut map, &SeedParams::default()).unwrap();
    let cloud = source_cloud(&f.depth, &f.intrinsics, &GicpParams::default()).unwrap();
    (map, cloud)
}

/// Random rigid motion with rotation angle `<= max_angle` and translation
/// norm `<= max_trans`.
pub fn random_motion(rng: &mut ChaCha8Rng, max_angle: f64, max_trans: f64) -> Pose {
    let unit = |rng: &mut ChaCha8Rng| loop {
        let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    };
    let w = unit(rng) * rng.random_range(0.0..max_angle);
    let t = unit(rng) * rng.random_range(0.0..max_trans);
    Pose::new(so3_exp(&w), t)
}

pub fn moved_cloud(cloud: &PointCloud, gt: &Pose) -> PointCloud {
    let r = gt.rotation.transpose();
    PointCloud {
        points: cloud.points.iter().map(|p| gt.inverse_transform_point(p)).collect(),
        covariances: cloud
            .covariances
            .as_ref()
            .map(|cs| cs.iter().map(|c| r * c * r.transpose()).collect()),
        normals: None,
    }
}
