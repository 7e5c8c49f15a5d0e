//! Surface normals from depth via central differences of back-projected
//! positions, and the adjoint of that map.

use super::camera::{DepthImage, Image, Intrinsics};
use super::se3::Vec3;

const DEGENERATE_CROSS: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct NormalMap {
    pub normals: Image<Vec3>,
    pub valid: Vec<bool>,
}

impl NormalMap {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            normals: Image::filled(width, height, Vec3::zeros()),
            valid: vec![false; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.normals.width
    }

    pub fn height(&self) -> usize {
        self.normals.height
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }
}

fn neighborhood_valid(depth: &DepthImage, u: usize, v: usize) -> bool {
    (v - 1..=v + 1).all(|y| (u - 1..=u + 1).all(|x| *depth.get(x, y) > 0.0))
}

/// Unnormalized cross product of the central-difference gradients at an
/// interior pixel, with the stencil positions needed by the adjoint.
struct Stencil {
    gx: Vec3,
    gy: Vec3,
    cross: Vec3,
}

fn stencil(depth: &DepthImage, k: &Intrinsics, u: usize, v: usize) -> Stencil {
    let p = |x: usize, y: usize| k.backproject(x as f64, y as f64, *depth.get(x, y));
    let gx = (p(u + 1, v) - p(u - 1, v)) * 0.5;
    let gy = (p(u, v + 1) - p(u, v - 1)) * 0.5;
    Stencil {
        gx,
        gy,
        cross: gx.cross(&gy),
    }
}

/// Camera-facing unit normals for every interior pixel whose 3x3
/// neighborhood has valid depth.
pub fn normals_from_depth(depth: &DepthImage, k: &Intrinsics) -> NormalMap {
    let (w, h) = (depth.width, depth.height);
    let mut out = NormalMap::empty(w, h);
    if w < 3 || h < 3 {
        return out;
    }
    for v in 1..h - 1 {
        for u in 1..w - 1 {
            if !neighborhood_valid(depth, u, v) {
                continue;
            }
            let s = stencil(depth, k, u, v);
            let norm = s.cross.norm();
            if norm < DEGENERATE_CROSS {
                continue;
            }
            let mut n = s.cross / norm;
            if n.dot(&k.ray(u as f64, v as f64)) > 0.0 {
                n = -n;
            }
            let i = depth.index(u, v);
            out.normals.data[i] = n;
            out.valid[i] = true;
        }
    }
    out
}

/// Pulls a gradient on the normals of `normals_from_depth(depth)` back to the
/// depth image. Only pixels flagged in `mask` (and valid in the forward map)
/// contribute.
pub fn normals_from_depth_backward(
    depth: &DepthImage,
    k: &Intrinsics,
    grad_normals: &Image<Vec3>,
    mask: &[bool],
) -> DepthImage {
    let (w, h) = (depth.width, depth.height);
    let mut grad = DepthImage::filled(w, h, 0.0);
    if w < 3 || h < 3 {
        return grad;
    }
    for v in 1..h - 1 {
        for u in 1..w - 1 {
            let i = depth.index(u, v);
            if !mask[i] || !neighborhood_valid(depth, u, v) {
                continue;
            }
            let g_n = grad_normals.data[i];
            if g_n == Vec3::zeros() {
                continue;
            }
            let s = stencil(depth, k, u, v);
            let norm = s.cross.norm();
            if norm < DEGENERATE_CROSS {
                continue;
            }
            let m_hat = s.cross / norm;
            let sign = if m_hat.dot(&k.ray(u as f64, v as f64)) > 0.0 { -1.0 } else { 1.0 };
            // n = sign * m / |m|
            let g_m = (g_n - m_hat * m_hat.dot(&g_n)) * (sign / norm);
            // m = gx x gy
            let g_gx = s.gy.cross(&g_m);
            let g_gy = g_m.cross(&s.gx);
            let mut add = |x: usize, y: usize, g: Vec3, weight: f64| {
                let r = k.ray(x as f64, y as f64);
                *grad.get_mut(x, y) += weight * r.dot(&g);
            };
            add(u + 1, v, g_gx, 0.5);
            add(u - 1, v, g_gx, -0.5);
            add(u, v + 1, g_gy, 0.5);
            add(u, v - 1, g_gy, -0.5);
        }
    }
    grad
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn camera() -> Intrinsics {
        Intrinsics::new(40.0, 40.0, 15.5, 11.5, 32, 24).unwrap()
    }

    /// Depth of the plane `n . X = c` along each pixel ray.
    fn plane_depth(k: &Intrinsics, n: Vec3, c: f64) -> DepthImage {
        let mut d = DepthImage::filled(k.width, k.height, 0.0);
        for v in 0..k.height {
            for u in 0..k.width {
                *d.get_mut(u, v) = c / n.dot(&k.ray(u as f64, v as f64));
            }
        }
        d
    }

    #[test]
    fn fronto_parallel_plane() {
        let k = camera();
        let depth = DepthImage::filled(k.width, k.height, 2.0);
        let nm = normals_from_depth(&depth, &k);
        assert_eq!(nm.valid_count(), (k.width - 2) * (k.height - 2));
        for (n, ok) in nm.normals.data.iter().zip(&nm.valid) {
            if *ok {
                assert_abs_diff_eq!(*n, Vec3::new(0.0, 0.0, -1.0), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn tilted_ramp_recovers_plane_normal() {
        // z = 1 + 0.1 x  <=>  -0.1 x + z = 1
        let k = camera();
        let plane = Vec3::new(-0.1, 0.0, 1.0);
        let depth = plane_depth(&k, plane, 1.0);
        let nm = normals_from_depth(&depth, &k);
        let want = -plane.normalize();
        for (n, ok) in nm.normals.data.iter().zip(&nm.valid) {
            if *ok {
                assert!((n - want).norm() < 1e-3);
            }
        }
        assert!(nm.valid_count() > 0);
    }

    #[test]
    fn isolated_pixel_is_masked() {
        let k = camera();
        let mut depth = DepthImage::filled(k.width, k.height, 0.0);
        *depth.get_mut(10, 10) = 1.0;
        assert_eq!(normals_from_depth(&depth, &k).valid_count(), 0);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let k = camera();
        let mut depth = plane_depth(&k, Vec3::new(0.2, -0.3, 1.0), 1.5);
        // Add curvature so the normals vary per pixel.
        for v in 0..k.height {
            for u in 0..k.width {
                *depth.get_mut(u, v) += 0.02 * ((u as f64) * 0.7).sin() * ((v as f64) * 0.4).cos();
            }
        }
        let weights: Vec<Vec3> = (0..depth.len())
            .map(|i| Vec3::new((i as f64 * 0.37).sin(), (i as f64 * 0.11).cos(), 0.3))
            .collect();
        let weights = Image::from_vec(k.width, k.height, weights).unwrap();
        let objective = |d: &DepthImage| {
            let nm = normals_from_depth(d, &k);
            nm.normals
                .data
                .iter()
                .zip(&weights.data)
                .map(|(n, w)| n.dot(w))
                .sum::<f64>()
        };
        let mask = normals_from_depth(&depth, &k).valid;
        let grad = normals_from_depth_backward(&depth, &k, &weights, &mask);
        let h = 1e-6;
        for &(u, v) in &[(5, 5), (6, 9), (20, 12), (1, 1), (30, 22)] {
            let mut plus = depth.clone();
            *plus.get_mut(u, v) += h;
            let mut minus = depth.clone();
            *minus.get_mut(u, v) -= h;
            let fd = (objective(&plus) - objective(&minus)) / (2.0 * h);
            let an = *grad.get(u, v);
            assert!((fd - an).abs() <= 1e-6 * fd.abs().max(1.0), "({u},{v}) fd {fd} analytic {an}");
        }
    }
}
