//! Finite-difference check of the full weighted loss against the analytic
//! renderer gradients.
//!
//! Masks are frozen at the nominal parameters. Pixels where an infinitesimal
//! change could switch the compositing structure (kernel cutoff, early
//! termination) or sit on an L1 kink are removed from every mask, so the
//! loss is smooth in a neighborhood of the nominal parameters.

use g2s::geometry::{normals_from_depth, Frame, Image, Intrinsics, NormalMap, Pose, Twist, Vec3};
use g2s::map::{GaussianDisk, MapSnapshot};
use g2s::optim::{loss_with_masks, LossMasks, LossWeights, TrainingView};
use g2s::render::{
    project_disks, render, render_backward, splat_weight, RenderOutput, RenderSettings, CUTOFF_Q,
    MIN_TRANSMITTANCE,
};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{perturb, random_disks, small_camera, PARAM_NAMES};

const Q_MARGIN: f64 = 0.05;
const KINK_MARGIN: f64 = 5e-3;

pub struct Scene {
    pub disks: Vec<GaussianDisk>,
    pub pose: Pose,
    pub view: TrainingView,
    pub settings: RenderSettings,
}

/// Random disks in front of a posed camera, observed against a tilted
/// textured plane.
pub fn random_scene(r: &mut ChaCha8Rng, n: usize) -> Scene {
    let k = small_camera();
    let pose = Pose::exp(&Twist::new(
        r.random_range(-0.3..0.3),
        r.random_range(-0.3..0.3),
        r.random_range(-0.3..0.3),
        r.random_range(-0.2..0.2),
        r.random_range(-0.2..0.2),
        r.random_range(-0.2..0.2),
    ));
    let q = nalgebra::UnitQuaternion::from_matrix(&pose.rotation);
    let disks = random_disks(r, n)
        .into_iter()
        .map(|mut d| {
            d.center = pose.transform_point(&d.center);
            d.rotation = q * d.rotation;
            d
        })
        .collect();
    let (a, b, c) = (r.random_range(-0.3..0.3), r.random_range(-0.2..0.2), r.random_range(1.5..2.2));
    let mut depth = Image::filled(k.width, k.height, 0.0);
    let mut color = Image::filled(k.width, k.height, [0.0; 3]);
    let phase: [f64; 3] = [r.random(), r.random(), r.random()];
    for v in 0..k.height {
        for u in 0..k.width {
            let ray = k.ray(u as f64, v as f64);
            *depth.get_mut(u, v) = c / (1.0 - a * ray.x - b * ray.y);
            *color.get_mut(u, v) = [0, 1, 2].map(|ch| {
                0.5 + 0.4 * (0.3 * u as f64 + 0.2 * v as f64 * (ch as f64 + 1.0) + 6.0 * phase[ch]).sin()
            });
        }
    }
    let frame = Frame::new(color, depth, k, 0, 0.0).unwrap();
    Scene {
        disks,
        pose,
        view: TrainingView::new(frame),
        settings: RenderSettings {
            tile_size: 8,
            ..Default::default()
        },
    }
}

/// Pixels near the kernel cutoff or the termination threshold.
fn structural_fragile(disks: &[GaussianDisk], pose: &Pose, k: &Intrinsics, s: &RenderSettings) -> Vec<bool> {
    let splats = project_disks(disks, pose, k, s.near, s.far);
    let mut out = vec![false; k.width * k.height];
    for y in 0..k.height {
        for x in 0..k.width {
            let i = y * k.width + x;
            let mut t = 1.0;
            // Every splat is tested, not only those whose box holds the
            // pixel: a pixel just outside a box can enter it under a
            // perturbation.
            for sp in &splats {
                let Some(hit) = splat_weight(sp, x as f64, y as f64) else { continue };
                if (hit.u * hit.u + hit.v * hit.v - CUTOFF_Q).abs() < Q_MARGIN {
                    out[i] = true;
                }
                if hit.weight > 0.0 {
                    t *= 1.0 - sp.opacity * hit.weight;
                    if (t / MIN_TRANSMITTANCE - 1.0).abs() < 0.1 {
                        out[i] = true;
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

fn dilate(mask: &[bool], w: usize, h: usize) -> Vec<bool> {
    let mut out = mask.to_vec();
    for y in 0..h {
        for x in 0..w {
            if mask[y * w + x] {
                for yy in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                    for xx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                        out[yy * w + xx] = true;
                    }
                }
            }
        }
    }
    out
}

pub fn frozen_masks(scene: &Scene, out: &RenderOutput) -> LossMasks {
    let frame = &scene.view.frame;
    let k = &frame.intrinsics;
    let dn = normals_from_depth(&out.depth, k);
    let mut m = LossMasks::new(frame, &scene.view.gt_normals, out, &dn);
    let fragile = structural_fragile(&scene.disks, &scene.pose, k, &scene.settings);
    let fragile_wide = dilate(&fragile, k.width, k.height);
    for i in 0..fragile.len() {
        let kink_c = (0..3).any(|c| (out.color.data[i][c] - frame.color.data[i][c]).abs() < KINK_MARGIN);
        let kink_d = (out.depth.data[i] - frame.depth.data[i]).abs() < KINK_MARGIN;
        let diff = out.normal.data[i] - scene.view.gt_normals.normals.data[i];
        let kink_n = diff.iter().any(|v| v.abs() < KINK_MARGIN);
        // Alpha exactly at the depth-mask threshold cannot be frozen safely.
        let edge_alpha = (out.alpha.data[i] - 0.5).abs() < 1e-3;
        m.photometric[i] &= !(fragile[i] || kink_c);
        m.depth[i] &= !(fragile[i] || kink_d || edge_alpha);
        m.gan[i] &= !(fragile_wide[i] || kink_n);
    }
    m
}

fn count(m: &[bool]) -> f64 {
    m.iter().filter(|v| **v).count() as f64
}

/// Weighted per-pixel loss contributions, computed directly from the
/// definitions. Their sum is the total loss.
pub fn pixel_losses(
    frame: &Frame,
    gt_normals: &NormalMap,
    out: &RenderOutput,
    masks: &LossMasks,
    w: &LossWeights,
) -> Vec<f64> {
    let dn = normals_from_depth(&out.depth, &frame.intrinsics);
    let (np, nd, ng) = (count(&masks.photometric), count(&masks.depth), count(&masks.gan));
    (0..frame.depth.data.len())
        .map(|i| {
            let mut l = 0.0;
            if masks.photometric[i] {
                let e: f64 = (0..3).map(|c| (out.color.data[i][c] - frame.color.data[i][c]).abs()).sum();
                l += w.photometric * e / (3.0 * np);
            }
            if masks.depth[i] {
                l += w.depth * (out.depth.data[i] - frame.depth.data[i]).abs() / nd;
            }
            if masks.gan[i] {
                let g = gt_normals.normals.data[i];
                let r = out.normal.data[i];
                let d = dn.normals.data[i];
                let cos = |a: Vec3, b: Vec3| a.dot(&b) / (a.norm().max(1e-8) * b.norm().max(1e-8));
                let l1 = (g.x - r.x).abs() + (g.y - r.y).abs() + (g.z - r.z).abs();
                l += w.gan * (l1 + (1.0 - cos(g, r)) + (1.0 - cos(g, d))) / ng;
            }
            l
        })
        .collect()
}

pub struct CheckStats {
    pub checked: usize,
    pub max_rel_error: f64,
    pub failures: Vec<String>,
    /// Gradients that also pass against the plain central difference at `h`.
    pub plain_passed: usize,
}

/// Compares every disk parameter gradient with central differences, for
/// gradients larger than `min_grad` in magnitude.
///
/// The reference is the Richardson combination `(4 D(h/2) - D(h)) / 3` of
/// central differences `D`, which cancels the `h^2` truncation term. Where
/// pixel contributions nearly cancel, that term alone can exceed the
/// tolerance at `h = 1e-5`.
pub fn check_scene(scene: &Scene, weights: &LossWeights, h: f64, rel_tol: f64, min_grad: f64) -> CheckStats {
    let frame = &scene.view.frame;
    let k = &frame.intrinsics;
    let snap = MapSnapshot::from_disks(scene.disks.clone(), 0);
    let out = render(&snap, &scene.pose, k, &scene.settings);
    let masks = frozen_masks(scene, &out);
    let (report, up) = loss_with_masks(frame, &scene.view.gt_normals, &out, weights, &masks).unwrap();
    let oracle_total: f64 = pixel_losses(frame, &scene.view.gt_normals, &out, &masks, weights).iter().sum();
    assert!((oracle_total - report.total).abs() < 1e-12, "loss oracle disagrees");
    let grads = render_backward(&snap, &scene.pose, k, &scene.settings, &out, &up).unwrap();

    let mut stats = CheckStats {
        checked: 0,
        max_rel_error: 0.0,
        failures: Vec::new(),
        plain_passed: 0,
    };
    for (di, disk) in scene.disks.iter().enumerate() {
        let analytic = grads.disks[di].to_array();
        for p in 0..12 {
            let a = analytic[p];
            if a.abs() <= min_grad {
                continue;
            }
            let eval = |step: f64| {
                let mut ds = scene.disks.clone();
                ds[di] = perturb(disk, p, step);
                let o = render(&MapSnapshot::from_disks(ds, 0), &scene.pose, k, &scene.settings);
                pixel_losses(frame, &scene.view.gt_normals, &o, &masks, weights)
            };
            let central = |step: f64| {
                let (plus, minus) = (eval(step), eval(-step));
                plus.iter().zip(&minus).map(|(x, y)| x - y).sum::<f64>() / (2.0 * step)
            };
            let (d1, d2) = (central(h), central(0.5 * h));
            let fd = (4.0 * d2 - d1) / 3.0;
            let rel = (fd - a).abs() / a.abs();
            if (d1 - a).abs() <= rel_tol * a.abs() {
                stats.plain_passed += 1;
            }
            stats.checked += 1;
            stats.max_rel_error = stats.max_rel_error.max(rel);
            if rel > rel_tol {
                stats.failures.push(format!(
                    "disk {di} {}: analytic {a:.6e}, fd {fd:.6e}, rel {rel:.2e}",
                    PARAM_NAMES[p]
                ));
            }
        }
    }
    stats
}
