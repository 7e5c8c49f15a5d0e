mod common;

use common::*;
use g2s::geometry::{Intrinsics, Pose, Twist, Vec3};
use g2s::map::{GaussianDisk, MapSnapshot};
use g2s::render::{
    project_disks, render, render_backward, splat_weight, RenderOutput, RenderSettings,
    UpstreamGradients, CUTOFF_Q, MIN_TRANSMITTANCE,
};
use rand::Rng;

fn to_world(disks: &[GaussianDisk], pose: &Pose) -> Vec<GaussianDisk> {
    let q = nalgebra::UnitQuaternion::from_matrix(&pose.rotation);
    disks
        .iter()
        .map(|d| {
            let mut d = d.clone();
            d.center = pose.transform_point(&d.center);
            d.rotation = q * d.rotation;
            d
        })
        .collect()
}

/// Pixels whose compositing could change structure under a tiny perturbation.
fn fragile_pixels(disks: &[GaussianDisk], pose: &Pose, k: &Intrinsics, s: &RenderSettings) -> Vec<bool> {
    let splats = project_disks(disks, pose, k, s.near, s.far);
    let mut out = vec![false; k.width * k.height];
    for y in 0..k.height {
        for x in 0..k.width {
            let mut t = 1.0;
            for sp in &splats {
                let Some(hit) = splat_weight(sp, x as f64, y as f64) else { continue };
                let q = hit.u * hit.u + hit.v * hit.v;
                if (q - CUTOFF_Q).abs() < 0.05 {
                    out[y * k.width + x] = true;
                }
                if hit.weight > 0.0 {
                    t *= 1.0 - sp.opacity * hit.weight;
                    if (t / MIN_TRANSMITTANCE - 1.0).abs() < 0.1 {
                        out[y * k.width + x] = true;
                    }
                    if t < MIN_TRANSMITTANCE {
                        break;
                    }
                }
            }
        }
    }
    out
}

fn pixel_losses(out: &RenderOutput, g: &UpstreamGradients) -> Vec<f64> {
    (0..out.depth.data.len())
        .map(|i| {
            let c = out.color.data[i];
            let gc = g.color.data[i];
            c[0] * gc[0]
                + c[1] * gc[1]
                + c[2] * gc[2]
                + out.depth.data[i] * g.depth.data[i]
                + out.normal.data[i].dot(&g.normal.data[i])
                + out.alpha.data[i] * g.alpha.data[i]
        })
        .collect()
}

fn check_scene(seed: u64, n: usize, background: [f64; 3]) {
    let mut r = rng(seed);
    let k = small_camera();
    let pose = Pose::exp(&Twist::new(0.3, -0.2, 0.5, 0.1, -0.2, 0.15));
    let disks = to_world(&random_disks(&mut r, n), &pose);
    let settings = RenderSettings {
        background,
        tile_size: 8,
        ..Default::default()
    };
    let fragile = fragile_pixels(&disks, &pose, &k, &settings);
    let mut up = UpstreamGradients::zeros(k.width, k.height);
    for i in 0..fragile.len() {
        if fragile[i] {
            continue;
        }
        up.color.data[i] = [r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)];
        up.depth.data[i] = r.random_range(-1.0..1.0);
        up.normal.data[i] = Vec3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0));
        up.alpha.data[i] = r.random_range(-1.0..1.0);
    }
    let snap = MapSnapshot::from_disks(disks.clone(), 0);
    let fwd = render(&snap, &pose, &k, &settings);
    let grads = render_backward(&snap, &pose, &k, &settings, &fwd, &up).unwrap();

    let h = 1e-6;
    let mut checked = 0;
    for (di, disk) in disks.iter().enumerate() {
        let analytic = grads.disks[di].to_array();
        for p in 0..12 {
            let eval = |sign: f64| {
                let mut ds = disks.clone();
                ds[di] = perturb(disk, p, sign * h);
                let out = render(&MapSnapshot::from_disks(ds, 0), &pose, &k, &settings);
                pixel_losses(&out, &up)
            };
            let (plus, minus) = (eval(1.0), eval(-1.0));
            let fd: f64 = plus.iter().zip(&minus).map(|(a, b)| a - b).sum::<f64>() / (2.0 * h);
            let a = analytic[p];
            let tol = 1e-5 + 1e-4 * a.abs().max(fd.abs());
            assert!(
                (fd - a).abs() <= tol,
                "seed {seed} disk {di} {}: analytic {a} fd {fd}",
                PARAM_NAMES[p]
            );
            if a != 0.0 {
                checked += 1;
            }
        }
    }
    assert!(checked > 12, "too few non-zero gradients ({checked})");
}

#[test]
fn gradients_match_finite_differences() {
    for seed in 0..3 {
        check_scene(seed, 6, [0.0; 3]);
    }
}

#[test]
fn gradients_with_background_color() {
    check_scene(11, 5, [0.2, 0.5, 0.9]);
}

#[test]
fn backward_rejects_stale_forward() {
    let mut r = rng(5);
    let k = small_camera();
    let disks = random_disks(&mut r, 3);
    let s = RenderSettings::default();
    let fwd = render(&MapSnapshot::from_disks(disks.clone(), 1), &identity(), &k, &s);
    let up = UpstreamGradients::zeros(k.width, k.height);
    assert!(render_backward(&MapSnapshot::from_disks(disks, 2), &identity(), &k, &s, &fwd, &up).is_err());
}

#[test]
fn backward_is_deterministic_across_thread_counts() {
    let mut r = rng(9);
    let k = small_camera();
    let disks = random_disks(&mut r, 8);
    let s = RenderSettings { tile_size: 4, ..Default::default() };
    let snap = MapSnapshot::from_disks(disks, 0);
    let fwd = render(&snap, &identity(), &k, &s);
    let mut up = UpstreamGradients::zeros(k.width, k.height);
    for v in up.depth.data.iter_mut() {
        *v = r.random_range(-1.0..1.0);
    }
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| render_backward(&snap, &identity(), &k, &s, &fwd, &up).unwrap())
    };
    let a = run(1);
    let b = run(4);
    for (x, y) in a.disks.iter().zip(&b.disks) {
        assert_eq!(x.to_array(), y.to_array());
    }
}
