//! Reference renderer treating every disk as an isotropic 3D Gaussian with
//! the disk's geometric-mean scale. Depth of a splat is its center depth, as
//! in ellipsoid splatting. Compositing follows the disk renderer.

use g2s::geometry::{Intrinsics, Pose};
use g2s::map::GaussianDisk;
use g2s::render::{CUTOFF_Q, MIN_TRANSMITTANCE};

pub struct IsoRender {
    pub depth: Vec<f64>,
    pub alpha: Vec<f64>,
}

struct Splat {
    u: f64,
    v: f64,
    z: f64,
    /// Inverse 2D covariance (a, b, c) of [[a, b], [b, c]].
    conic: (f64, f64, f64),
    radius: f64,
    opacity: f64,
}

pub fn render_isotropic(disks: &[GaussianDisk], pose: &Pose, k: &Intrinsics, near: f64) -> IsoRender {
    let inv = pose.inverse();
    let mut splats: Vec<(usize, Splat)> = disks
        .iter()
        .enumerate()
        .filter_map(|(i, d)| {
            let c = inv.transform_point(&d.center);
            if c.z <= near {
                return None;
            }
            // Ellipsoid splatting drops centers well outside the frustum;
            // their linearized footprints are meaningless.
            let lim_x = 1.3 * (k.width as f64 * 0.5) / k.fx;
            let lim_y = 1.3 * (k.height as f64 * 0.5) / k.fy;
            if (c.x / c.z).abs() > lim_x || (c.y / c.z).abs() > lim_y {
                return None;
            }
            let s2 = d.scales[0] * d.scales[1];
            let (iz, iz2) = (1.0 / c.z, 1.0 / (c.z * c.z));
            let j0 = [k.fx * iz, 0.0, -k.fx * c.x * iz2];
            let j1 = [0.0, k.fy * iz, -k.fy * c.y * iz2];
            let dot = |a: &[f64; 3], b: &[f64; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
            let (a, b, cc) = (s2 * dot(&j0, &j0), s2 * dot(&j0, &j1), s2 * dot(&j1, &j1));
            let det = a * cc - b * b;
            if det <= 0.0 {
                return None;
            }
            let radius = (CUTOFF_Q * a.max(cc)).sqrt();
            Some((
                i,
                Splat {
                    u: k.fx * c.x * iz + k.cx,
                    v: k.fy * c.y * iz + k.cy,
                    z: c.z,
                    conic: (cc / det, -b / det, a / det),
                    radius,
                    opacity: d.opacity,
                },
            ))
        })
        .collect();
    splats.sort_by(|a, b| a.1.z.total_cmp(&b.1.z).then(a.0.cmp(&b.0)));

    let n = k.width * k.height;
    let mut t = vec![1.0; n];
    let mut depth = vec![0.0; n];
    for (_, s) in &splats {
        let x0 = (s.u - s.radius).floor().max(0.0) as usize;
        let y0 = (s.v - s.radius).floor().max(0.0) as usize;
        let x1 = ((s.u + s.radius).ceil() as i64).min(k.width as i64 - 1);
        let y1 = ((s.v + s.radius).ceil() as i64).min(k.height as i64 - 1);
        if x1 < 0 || y1 < 0 {
            continue;
        }
        for y in y0..=y1 as usize {
            for x in x0..=x1 as usize {
                let i = y * k.width + x;
                if t[i] < MIN_TRANSMITTANCE {
                    continue;
                }
                let (dx, dy) = (x as f64 - s.u, y as f64 - s.v);
                let (a, b, c) = s.conic;
                let q = a * dx * dx + 2.0 * b * dx * dy + c * dy * dy;
                if q > CUTOFF_Q {
                    continue;
                }
                let alpha = s.opacity * (-0.5 * q).exp();
                depth[i] += s.z * alpha * t[i];
                t[i] *= 1.0 - alpha;
            }
        }
    }
    IsoRender {
        depth,
        alpha: t.iter().map(|t| 1.0 - t).collect(),
    }
}
