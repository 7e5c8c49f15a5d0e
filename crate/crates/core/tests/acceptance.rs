//! End-to-end acceptance checks. Runs without the libtest harness so every
//! criterion prints its PASS/FAIL line even when the suite passes.

mod common;

use std::time::{Duration, Instant};

use common::gradcheck::{check_scene, random_scene};
use common::isotropic::render_isotropic;
use common::room::{half_room, room, Room};
use common::{moved_cloud, random_motion, rng, room_tracking_fixture};
use g2s::eval::{ate_rmse, mesh_prf, psnr, ssim, TriangleMesh};
use g2s::geometry::{so3_exp, Image, Intrinsics, Pose, Twist, Vec3};
use g2s::io;
use g2s::map::{tangent_frame, GaussianDisk, MapSnapshot};
use g2s::optim::{LossTraceRow, LossWeights, MapOptimizer, OptimizerConfig};
use g2s::pipeline::{self, SlamConfig};
use g2s::render::{render, RenderSettings};
use g2s::synth::SyntheticScene;
use g2s::tracking::{solve_gicp, GicpParams};
use g2s::trajectory::Trajectory;
use rand::Rng;

type Outcome = Result<String, String>;

fn gate(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(elapsed: Duration, limit_s: u64) -> bool {
    elapsed <= Duration::from_secs(limit_s)
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let mut r = rng(0xacce);
    let (mut checked, mut plain, mut worst, mut failures) = (0, 0, 0.0f64, Vec::new());
    for s in 0..20 {
        let n = r.random_range(5..=50);
        let scene = random_scene(&mut r, n);
        let stats = check_scene(&scene, &LossWeights::default(), 1e-5, 1e-4, 1e-8);
        checked += stats.checked;
        plain += stats.plain_passed;
        worst = worst.max(stats.max_rel_error);
        failures.extend(stats.failures.into_iter().map(|f| format!("scene {s}: {f}")));
    }
    let t = start.elapsed();
    let detail = format!(
        "{checked} gradients, max rel error {worst:.2e}, {} failures ({plain} also pass plain central differences), {:.0} s",
        failures.len(),
        t.as_secs_f64()
    );
    for f in failures.iter().take(5) {
        eprintln!("    {f}");
    }
    gate(failures.is_empty() && checked > 0 && within(t, 300), detail)
}

fn gicp_recovery() -> Outcome {
    let start = Instant::now();
    let (map, cloud) = room_tracking_fixture(0);
    let mut r = rng(0x61c9);
    let (mut recovered, mut steps, mut monotone) = (0, 0, 0);
    for _ in 0..50 {
        let gt = random_motion(&mut r, 10f64.to_radians(), 0.1);
        let res = solve_gicp(&moved_cloud(&cloud, &gt), &map, &Pose::identity(), &GicpParams::default())
            .map_err(|e| e.to_string())?;
        steps += res.trace.len();
        monotone += res.trace.iter().filter(|it| it.objective_after <= it.objective_before).count();
        if res.pose.rotation_angle_to(&gt) < 1e-3 && (res.pose.translation - gt.translation).norm() < 1e-3 {
            recovered += 1;
        }
    }
    let t = start.elapsed();
    gate(
        recovered >= 48 && monotone == steps && within(t, 120),
        format!("{recovered}/50 recovered, {monotone}/{steps} steps non-increasing, {:.0} s", t.as_secs_f64()),
    )
}

/// Largest distance from the disk plane over pixels back-projected from
/// normalized depth, for pixels with alpha above 0.05.
fn plane_violation(depth: &[f64], alpha: &[f64], pose: &Pose, k: &Intrinsics, center: &Vec3, normal: &Vec3) -> (f64, usize) {
    let mut worst = 0.0f64;
    let mut n = 0;
    for y in 0..k.height {
        for x in 0..k.width {
            let i = y * k.width + x;
            if alpha[i] < 0.05 {
                continue;
            }
            let z = depth[i] / alpha[i];
            let cam = Vec3::new((x as f64 - k.cx) / k.fx * z, (y as f64 - k.cy) / k.fy * z, z);
            let world = pose.transform_point(&cam);
            worst = worst.max(normal.dot(&(world - center)).abs());
            n += 1;
        }
    }
    (worst, n)
}

fn multiview_consistency() -> Outcome {
    let k = Intrinsics::new(120.0, 120.0, 79.5, 59.5, 160, 120).map_err(|e| e.to_string())?;
    let center = Vec3::new(0.0, 0.0, 1.5);
    let normal = (so3_exp(&Vec3::new(0.5, 0.4, 0.0)) * -Vec3::z()).normalize();
    let disk = GaussianDisk::new(center, &tangent_frame(&normal), [0.2, 0.1], [0.7, 0.5, 0.3], 0.9, 0)
        .map_err(|e| e.to_string())?;
    let orbit = |angle: f64| {
        let r = so3_exp(&Vec3::new(0.0, angle, 0.0));
        Pose::new(r, center - r * Vec3::new(0.0, 0.0, 1.5))
    };
    let (a, b) = (orbit(-15f64.to_radians()), orbit(15f64.to_radians()));
    let snap = MapSnapshot::from_disks(vec![disk.clone()], 0);
    let mut disk_worst = 0.0f64;
    let mut iso_worst = 0.0f64;
    for pose in [a, b] {
        let out = render(&snap, &pose, &k, &RenderSettings::default());
        let (w, n) = plane_violation(&out.depth.data, &out.alpha.data, &pose, &k, &center, &normal);
        if n == 0 {
            return Err("disk not visible".into());
        }
        disk_worst = disk_worst.max(w);
        let iso = render_isotropic(std::slice::from_ref(&disk), &pose, &k, 0.05);
        iso_worst = iso_worst.max(plane_violation(&iso.depth, &iso.alpha, &pose, &k, &center, &normal).0);
    }
    gate(
        disk_worst < 1e-6 && iso_worst > 1e-3,
        format!("disk off-plane {disk_worst:.2e} m, isotropic control {iso_worst:.2e} m"),
    )
}

fn end_to_end() -> Outcome {
    let start = Instant::now();
    let scene = SyntheticScene::default();
    let out = pipeline::run(&scene, &SlamConfig::default()).map_err(|e| e.to_string())?;
    let t = start.elapsed();
    let m = out.metrics;
    let (ate, l1, f1) = (
        m.ate_rmse_cm.unwrap_or(f64::INFINITY),
        m.depth_l1_cm.unwrap_or(f64::INFINITY),
        m.f1_pct.unwrap_or(0.0),
    );
    gate(
        out.lost_at.is_none() && out.trajectory.len() == scene.frames && ate < 1.0 && l1 < 1.0 && f1 >= 90.0 && within(t, 900),
        format!(
            "ATE {ate:.3} cm, depth L1 {l1:.3} cm, F1 {f1:.1}% (P {:.1} R {:.1}), {} disks, {:.0} s",
            m.precision_pct.unwrap_or(0.0),
            m.recall_pct.unwrap_or(0.0),
            m.disk_count,
            t.as_secs_f64()
        ),
    )
}

const ABLATION_ITERS: usize = 500;

fn refine(weights: LossWeights) -> (Room, Vec<LossTraceRow>) {
    let mut r = room(half_room(), 0.3, 0.01, 1);
    let settings = RenderSettings::default();
    let cfg = OptimizerConfig {
        weights,
        ..Default::default()
    };
    let mut opt = MapOptimizer::new(cfg, settings);
    let poses = r.poses.clone();
    let lookup = |f: usize| poses.get(&f).copied();
    let trace = opt.optimize(&mut r.map, &r.views, &lookup, ABLATION_ITERS).unwrap();
    (r, trace)
}

fn isotropic_depth_l1(r: &Room) -> f64 {
    let iso = render_isotropic(r.map.disks(), &r.held_pose, &r.held.intrinsics, RenderSettings::default().near);
    let (mut sum, mut n) = (0.0, 0);
    for (i, truth) in r.held.depth.data.iter().enumerate() {
        if *truth > 0.0 && iso.alpha[i] >= 0.5 {
            sum += (iso.depth[i] - truth).abs();
            n += 1;
        }
    }
    sum / n as f64
}

fn ablation(full: &(Room, Vec<LossTraceRow>)) -> Outcome {
    let settings = RenderSettings::default();
    let no_gan = LossWeights {
        gan: 0.0,
        ..Default::default()
    };
    let (plain, _) = refine(no_gan);
    let with_gan = full.0.held_out_depth_l1(&settings);
    let without = plain.held_out_depth_l1(&settings);
    let iso = isotropic_depth_l1(&full.0);
    let gan_gain = 1.0 - with_gan / without;
    gate(
        gan_gain >= 0.10 && iso >= 2.0 * with_gan,
        format!(
            "held-out depth L1: full {:.2} cm, no GAN {:.2} cm ({:.0}% lower with GAN), isotropic {:.2} cm ({:.1}x)",
            100.0 * with_gan,
            100.0 * without,
            100.0 * gan_gain,
            100.0 * iso,
            iso / with_gan
        ),
    )
}

fn weighted_sum(full: &(Room, Vec<LossTraceRow>)) -> Outcome {
    let w = LossWeights::default();
    if (w.photometric, w.depth, w.gan) != (1.0, 0.1, 0.05) {
        return Err(format!("default weights are {w:?}"));
    }
    let worst = full
        .1
        .iter()
        .map(|row| {
            let r = &row.report;
            (r.total - (r.photometric + 0.1 * r.depth + 0.05 * r.gan)).abs()
        })
        .fold(0.0, f64::max);
    gate(
        full.1.len() == ABLATION_ITERS && worst <= 1e-9,
        format!("{} steps, max |total - weighted sum| {worst:.1e}", full.1.len()),
    )
}

fn metric_oracles() -> Outcome {
    let mut r = rng(0x3e7);
    let stamps: Vec<f64> = (0..40).map(|i| i as f64 / 30.0).collect();
    let poses: Vec<Pose> = stamps
        .iter()
        .map(|t| Pose::new(so3_exp(&Vec3::new(0.1 * t, 0.3 * t, 0.0)), Vec3::new(t.sin(), 0.2 * t, (2.0 * t).cos())))
        .collect();
    let gt = Trajectory::from_parts(stamps, poses).map_err(|e| e.to_string())?;
    let mut ate_worst = 0.0f64;
    for _ in 0..20 {
        let tw = Twist::from_fn(|_, _| r.random_range(-3.0..3.0));
        ate_worst = ate_worst.max(ate_rmse(&gt.transformed(&Pose::exp(&tw)), &gt).map_err(|e| e.to_string())?);
    }

    let a = Image::filled(32, 32, [0.5; 3]);
    let b = Image::filled(32, 32, [0.6; 3]);
    let p = psnr(&a, &b).map_err(|e| e.to_string())?;
    let noisy = Image {
        width: 32,
        height: 32,
        data: (0..32 * 32).map(|_| [r.random(), r.random(), r.random()]).collect(),
    };
    let s = ssim(&noisy, &noisy).map_err(|e| e.to_string())?;

    let room = TriangleMesh::box_interior(Vec3::new(-1.0, -0.6, -0.8), Vec3::new(1.0, 0.6, 0.8));
    let prf = mesh_prf(&room, &room, 0.01, 100_000, 0).map_err(|e| e.to_string())?;
    let prf_ok = [prf.precision_pct, prf.recall_pct, prf.f1_pct].iter().all(|v| (v - 100.0).abs() <= 0.5);

    gate(
        ate_worst < 1e-9 && (p - 20.0).abs() < 1e-9 && (s - 1.0).abs() < 1e-12 && prf_ok,
        format!(
            "ATE invariance {ate_worst:.1e}, PSNR {p:.12} dB, SSIM(a,a) {s}, mesh P/R/F1 {:.2}/{:.2}/{:.2}",
            prf.precision_pct, prf.recall_pct, prf.f1_pct
        ),
    )
}

/// Runs the pipeline and writes the files a deterministic command-line run
/// writes. The frame rate is dropped, as G2S_DETERMINISTIC=1 does.
fn deterministic_run(dir: &std::path::Path) -> Result<(Vec<u8>, Vec<u8>), String> {
    let scene = SyntheticScene {
        width: 80,
        height: 60,
        fx: 40.0,
        fy: 40.0,
        frames: 10,
        ..Default::default()
    };
    let mut cfg = SlamConfig::default();
    cfg.mapping.iterations_per_keyframe = 3;
    cfg.mapping.final_epochs = 1;
    cfg.eval.voxel_size = 0.04;
    cfg.eval.truncation = 0.12;
    cfg.eval.mesh_samples = 5000;
    let out = pipeline::run(&scene, &cfg).map_err(|e| e.to_string())?;
    let mut m = out.metrics;
    m.fps = None;
    std::fs::create_dir_all(dir).map_err(|e| e.to_string())?;
    let (traj, metrics) = (dir.join("trajectory.txt"), dir.join("metrics.json"));
    io::write_trajectory(&traj, &out.trajectory).map_err(|e| e.to_string())?;
    io::write_metrics(&metrics, &m).map_err(|e| e.to_string())?;
    Ok((std::fs::read(traj).unwrap(), std::fs::read(metrics).unwrap()))
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let a = deterministic_run(&tmp.path().join("a"))?;
    let b = deterministic_run(&tmp.path().join("b"))?;
    gate(
        a.0 == b.0 && a.1 == b.1,
        format!(
            "trajectory.txt {} ({} B), metrics.json {} ({} B)",
            if a.0 == b.0 { "identical" } else { "differs" },
            a.0.len(),
            if a.1 == b.1 { "identical" } else { "differs" },
            a.1.len()
        ),
    )
}

fn report(id: usize, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let (ok, detail) = match f() {
        Ok(d) => (true, d),
        Err(d) => (false, d),
    };
    println!("{} {id} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    ok
}

fn main() {
    // `cargo test -- --list` and filters are accepted but not interpreted.
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let mut ok = true;
    ok &= report(1, "gradient correctness", gradient_correctness);
    ok &= report(2, "GICP recovery", gicp_recovery);
    ok &= report(3, "multi-view depth consistency", multiview_consistency);
    ok &= report(4, "end-to-end synthetic room", end_to_end);
    let full = refine(LossWeights::default());
    ok &= report(5, "ablation direction", || ablation(&full));
    ok &= report(6, "loss-weight contract", || weighted_sum(&full));
    ok &= report(7, "metric oracles", metric_oracles);
    ok &= report(8, "determinism", determinism);
    if !ok {
        std::process::exit(1);
    }
}
