//! CPU tile-based rasterizer for 2D Gaussian disks.
//!
//! Each pixel ray is intersected with the disk planes; the hit is expressed in
//! disk coordinates `(u, v)` and weighted by `exp(-(u^2 + v^2) / 2)`. Disks
//! are composited front to back in order of their center depth. The depth of
//! a contribution is the ray-plane intersection depth, not the center depth.

mod backward;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use backward::{render_backward, DiskGradient, RenderGradients, UpstreamGradients};

use crate::geometry::{ColorImage, DepthImage, Image, Intrinsics, Pose, Vec3};
use crate::map::{GaussianDisk, MapSnapshot};

/// Kernel support radius in disk units.
pub const CUTOFF_SIGMA: f64 = 3.0;
pub const CUTOFF_Q: f64 = CUTOFF_SIGMA * CUTOFF_SIGMA;
/// Compositing stops once transmittance drops below this.
pub const MIN_TRANSMITTANCE: f64 = 1e-4;
const PARALLEL_EPS: f64 = 1e-8;
const NORMAL_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderSettings {
    pub near: f64,
    pub far: f64,
    pub background: [f64; 3],
    pub tile_size: usize,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            near: 0.05,
            far: 100.0,
            background: [0.0; 3],
            tile_size: 16,
        }
    }
}

/// Inclusive pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelRect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl PixelRect {
    #[inline]
    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x <= self.x1 && y >= self.y0 && y <= self.y1
    }
}

/// A disk expressed in the camera frame, ready for rasterization.
#[derive(Debug, Clone, Copy)]
pub struct ProjectedSplat {
    pub disk: usize,
    pub bbox: PixelRect,
    pub center: Vec3,
    pub normal: Vec3,
    pub tangent1: Vec3,
    pub tangent2: Vec3,
    pub scales: [f64; 2],
    pub color: [f64; 3],
    pub opacity: f64,
    /// Camera-frame normal flipped to face the camera; feeds the normal
    /// channel only.
    pub facing_sign: f64,
    pub sort_depth: f64,
    /// Pixel-affine coefficients `(c0, c_x, c_y)` of the ray-plane
    /// denominator and of the unnormalized `u`, `v` numerators.
    den: [f64; 3],
    num_u: [f64; 3],
    num_v: [f64; 3],
}

impl ProjectedSplat {
    pub fn facing_normal(&self) -> Vec3 {
        self.normal * self.facing_sign
    }
}

/// Ray-disk intersection for one pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplatHit {
    pub u: f64,
    pub v: f64,
    /// Kernel value `exp(-(u^2 + v^2) / 2)`, zero past the cutoff.
    pub weight: f64,
    /// Camera-frame depth of the intersection.
    pub depth: f64,
}

fn camera_splat(disk: &GaussianDisk, index: usize, pose: &Pose) -> ProjectedSplat {
    let r_cw = pose.rotation.transpose();
    let frame = disk.frame();
    let center = pose.inverse_transform_point(&disk.center);
    let normal = r_cw * frame.column(2);
    let facing_sign = if normal.dot(&center) > 0.0 { -1.0 } else { 1.0 };
    ProjectedSplat {
        disk: index,
        bbox: PixelRect {
            x0: 0,
            y0: 0,
            x1: 0,
            y1: 0,
        },
        center,
        normal,
        tangent1: r_cw * frame.column(0),
        tangent2: r_cw * frame.column(1),
        scales: disk.scales,
        color: disk.color,
        opacity: disk.opacity,
        facing_sign,
        sort_depth: center.z,
        den: [0.0; 3],
        num_u: [0.0; 3],
        num_v: [0.0; 3],
    }
}

/// Coefficients of `a . ray(px, py)` as an affine function of the pixel.
fn ray_affine(a: &Vec3, k: &Intrinsics) -> [f64; 3] {
    let (ax, ay) = (a.x / k.fx, a.y / k.fy);
    [a.z - ax * k.cx - ay * k.cy, ax, ay]
}

impl ProjectedSplat {
    /// Disk coordinates hit by the ray of `(px, py)`, if the ray meets the
    /// plane in front of the camera.
    #[inline]
    fn plane_coords(&self, px: f64, py: f64) -> Option<(f64, f64)> {
        let affine = |c: &[f64; 3]| c[0] + c[1] * px + c[2] * py;
        let denom = affine(&self.den);
        if denom.abs() < PARALLEL_EPS || self.normal.dot(&self.center) / denom <= 0.0 {
            return None;
        }
        Some((affine(&self.num_u) / denom, affine(&self.num_v) / denom))
    }

    /// Whether the cutoff circle can reach any pixel of the rectangle
    /// `[x0, x1] x [y0, y1]`. Conservative when a corner ray misses the
    /// plane; exact otherwise, since the pixel-to-plane map keeps the
    /// rectangle a convex quad.
    fn touches_rect(&self, x0: f64, y0: f64, x1: f64, y1: f64) -> bool {
        let corners = [(x0, y0), (x1, y0), (x1, y1), (x0, y1)];
        let mut quad = [(0.0, 0.0); 4];
        for (q, &(x, y)) in quad.iter_mut().zip(&corners) {
            match self.plane_coords(x, y) {
                Some(uv) => *q = uv,
                None => return true,
            }
        }
        let r2 = CUTOFF_Q * (1.0 + 1e-9);
        let mut sign = 0.0;
        let mut inside = true;
        for i in 0..4 {
            let (ax, ay) = quad[i];
            let (bx, by) = quad[(i + 1) % 4];
            let (ex, ey) = (bx - ax, by - ay);
            // Distance from the origin to the edge segment.
            let len2 = ex * ex + ey * ey;
            let t = if len2 > 0.0 { (-(ax * ex + ay * ey) / len2).clamp(0.0, 1.0) } else { 0.0 };
            let (px, py) = (ax + t * ex, ay + t * ey);
            if px * px + py * py <= r2 {
                return true;
            }
            let cross = ex * (-ay) - ey * (-ax);
            if sign == 0.0 {
                sign = cross.signum();
            } else if cross * sign < 0.0 {
                inside = false;
            }
        }
        inside
    }

    fn prepare(&mut self, k: &Intrinsics) {
        let plane = self.normal.dot(&self.center);
        self.den = ray_affine(&self.normal, k);
        let r1 = ray_affine(&self.tangent1, k);
        let r2 = ray_affine(&self.tangent2, k);
        let (c1, c2) = (self.tangent1.dot(&self.center), self.tangent2.dot(&self.center));
        for i in 0..3 {
            self.num_u[i] = (plane * r1[i] - c1 * self.den[i]) / self.scales[0];
            self.num_v[i] = (plane * r2[i] - c2 * self.den[i]) / self.scales[1];
        }
    }
}

/// Range of `(a0 + a1 cos t + a2 sin t) / (b0 + b1 cos t + b2 sin t)` over
/// the full circle, assuming the denominator stays positive.
fn ratio_extent(a: [f64; 3], b: [f64; 3]) -> (f64, f64) {
    let f = |t: f64| {
        let (s, c) = t.sin_cos();
        (a[0] + a[1] * c + a[2] * s) / (b[0] + b[1] * c + b[2] * s)
    };
    // Stationary points solve P sin t + Q cos t + K = 0.
    let p = a[0] * b[1] - a[1] * b[0];
    let q = a[2] * b[0] - a[0] * b[2];
    let k = a[2] * b[1] - a[1] * b[2];
    let rho = p.hypot(q);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut visit = |v: f64| {
        lo = lo.min(v);
        hi = hi.max(v);
    };
    if rho > 1e-300 && (k / rho).abs() <= 1.0 {
        let phi = q.atan2(p);
        let s = (-k / rho).asin();
        visit(f(s - phi));
        visit(f(std::f64::consts::PI - s - phi));
    } else {
        for i in 0..4 {
            visit(f(i as f64 * std::f64::consts::FRAC_PI_2));
        }
    }
    (lo, hi)
}

/// Pixel rectangle covering the projection of the disk's cutoff ellipse,
/// or `None` when it misses the image.
fn splat_bbox(s: &ProjectedSplat, k: &Intrinsics) -> Option<PixelRect> {
    let a = s.tangent1 * (CUTOFF_SIGMA * s.scales[0]);
    let b = s.tangent2 * (CUTOFF_SIGMA * s.scales[1]);
    let p = s.center;
    let min_z = p.z - a.z.hypot(b.z);
    let (w, h) = (k.width as f64, k.height as f64);
    let (xmin, xmax, ymin, ymax) = if min_z <= 1e-9 {
        // The ellipse reaches the camera plane; its projection is unbounded.
        (0.0, w - 1.0, 0.0, h - 1.0)
    } else {
        let (x0, x1) = ratio_extent([p.x, a.x, b.x], [p.z, a.z, b.z]);
        let (y0, y1) = ratio_extent([p.y, a.y, b.y], [p.z, a.z, b.z]);
        (k.fx * x0 + k.cx, k.fx * x1 + k.cx, k.fy * y0 + k.cy, k.fy * y1 + k.cy)
    };
    let x0 = xmin.ceil().max(0.0);
    let y0 = ymin.ceil().max(0.0);
    let x1 = xmax.floor().min(w - 1.0);
    let y1 = ymax.floor().min(h - 1.0);
    if !(x0 <= x1 && y0 <= y1) {
        return None;
    }
    Some(PixelRect {
        x0: x0 as usize,
        y0: y0 as usize,
        x1: x1 as usize,
        y1: y1 as usize,
    })
}

/// Transforms disks into the camera frame, culls by center depth and screen
/// extent, and sorts front to back (ties by disk index).
pub fn project_disks(
    disks: &[GaussianDisk],
    pose: &Pose,
    k: &Intrinsics,
    near: f64,
    far: f64,
) -> Vec<ProjectedSplat> {
    let mut out: Vec<ProjectedSplat> = disks
        .par_iter()
        .enumerate()
        .filter_map(|(i, d)| {
            let mut s = camera_splat(d, i, pose);
            if !(s.sort_depth > near && s.sort_depth < far) {
                return None;
            }
            s.bbox = splat_bbox(&s, k)?;
            s.prepare(k);
            Some(s)
        })
        .collect();
    out.sort_by(|a, b| a.sort_depth.total_cmp(&b.sort_depth).then(a.disk.cmp(&b.disk)));
    out
}

/// Intersects the ray of pixel `(px, py)` with the splat plane.
#[inline]
pub fn splat_weight(s: &ProjectedSplat, px: f64, py: f64) -> Option<SplatHit> {
    let affine = |c: &[f64; 3]| c[0] + c[1] * px + c[2] * py;
    let denom = affine(&s.den);
    if denom.abs() < PARALLEL_EPS {
        return None;
    }
    let inv = 1.0 / denom;
    let depth = s.normal.dot(&s.center) * inv;
    if depth <= 0.0 {
        return None;
    }
    let u = affine(&s.num_u) * inv;
    let v = affine(&s.num_v) * inv;
    let q = u * u + v * v;
    let weight = if q > CUTOFF_Q { 0.0 } else { (-0.5 * q).exp() };
    Some(SplatHit {
        u,
        v,
        weight,
        depth,
    })
}

/// One splat's share of a pixel, recorded in compositing order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Contribution {
    /// Position in the projected splat list.
    pub splat: usize,
    pub hit: SplatHit,
    pub alpha: f64,
    /// Transmittance in front of this splat.
    pub transmittance: f64,
    /// Position in the tile list the pixel was composited from.
    pub(crate) list_pos: usize,
}

#[derive(Debug, Clone, Copy, Default)]
struct PixelValue {
    color: [f64; 3],
    depth: f64,
    normal: Vec3,
    alpha: f64,
}

fn composite_pixel(
    splats: &[ProjectedSplat],
    list: &[u32],
    x: usize,
    y: usize,
    background: &[f64; 3],
    mut record: Option<&mut Vec<Contribution>>,
) -> PixelValue {
    let mut t = 1.0;
    let mut out = PixelValue::default();
    let (px, py) = (x as f64, y as f64);
    for (pos, &si) in list.iter().enumerate() {
        let s = &splats[si as usize];
        if !s.bbox.contains(x, y) {
            continue;
        }
        let Some(hit) = splat_weight(s, px, py) else {
            continue;
        };
        let alpha = s.opacity * hit.weight;
        if alpha <= 0.0 {
            continue;
        }
        let w = alpha * t;
        for c in 0..3 {
            out.color[c] += s.color[c] * w;
        }
        out.depth += hit.depth * w;
        out.normal += s.facing_normal() * w;
        if let Some(rec) = record.as_deref_mut() {
            rec.push(Contribution {
                splat: si as usize,
                hit,
                alpha,
                transmittance: t,
                list_pos: pos,
            });
        }
        t *= 1.0 - alpha;
        if t < MIN_TRANSMITTANCE {
            break;
        }
    }
    for c in 0..3 {
        out.color[c] += background[c] * t;
    }
    out.alpha = 1.0 - t;
    let n = out.normal.norm();
    out.normal = if n < NORMAL_EPS { Vec3::zeros() } else { out.normal / n };
    out
}

/// Splat lists per tile, each in global front-to-back order.
pub(crate) struct TileBins {
    pub tile_size: usize,
    pub tiles_x: usize,
    pub lists: Vec<Vec<u32>>,
}

impl TileBins {
    pub fn build(splats: &[ProjectedSplat], k: &Intrinsics, tile_size: usize) -> Self {
        let tile_size = tile_size.max(1);
        let tiles_x = k.width.div_ceil(tile_size);
        let tiles_y = k.height.div_ceil(tile_size);
        let mut lists = vec![Vec::new(); tiles_x * tiles_y];
        for (i, s) in splats.iter().enumerate() {
            for ty in s.bbox.y0 / tile_size..=s.bbox.y1 / tile_size {
                for tx in s.bbox.x0 / tile_size..=s.bbox.x1 / tile_size {
                    let x0 = (tx * tile_size).max(s.bbox.x0);
                    let y0 = (ty * tile_size).max(s.bbox.y0);
                    let x1 = ((tx + 1) * tile_size - 1).min(s.bbox.x1);
                    let y1 = ((ty + 1) * tile_size - 1).min(s.bbox.y1);
                    if s.touches_rect(x0 as f64, y0 as f64, x1 as f64, y1 as f64) {
                        lists[ty * tiles_x + tx].push(i as u32);
                    }
                }
            }
        }
        Self {
            tile_size,
            tiles_x,
            lists,
        }
    }

    pub fn tile_pixels(&self, tile: usize, k: &Intrinsics) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let tx = tile % self.tiles_x;
        let ty = tile / self.tiles_x;
        let xs = tx * self.tile_size..((tx + 1) * self.tile_size).min(k.width);
        let ys = ty * self.tile_size..((ty + 1) * self.tile_size).min(k.height);
        (xs, ys)
    }
}

#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub color: ColorImage,
    pub depth: DepthImage,
    /// Camera-frame unit normals; zero where nothing was hit.
    pub normal: Image<Vec3>,
    pub alpha: Image<f64>,
    /// Map generation this output was rendered from.
    pub generation: u64,
}

impl RenderOutput {
    pub fn width(&self) -> usize {
        self.depth.width
    }

    pub fn height(&self) -> usize {
        self.depth.height
    }
}

/// Renders color, depth, normal and accumulated opacity.
pub fn render(
    map: &MapSnapshot,
    pose: &Pose,
    k: &Intrinsics,
    settings: &RenderSettings,
) -> RenderOutput {
    let splats = project_disks(map.disks(), pose, k, settings.near, settings.far);
    let bins = TileBins::build(&splats, k, settings.tile_size);
    let tiles: Vec<Vec<(usize, PixelValue)>> = (0..bins.lists.len())
        .into_par_iter()
        .map(|tile| {
            let (xs, ys) = bins.tile_pixels(tile, k);
            let list = &bins.lists[tile];
            let mut px = Vec::with_capacity(xs.len() * ys.len());
            for y in ys {
                for x in xs.clone() {
                    let v = composite_pixel(&splats, list, x, y, &settings.background, None);
                    px.push((y * k.width + x, v));
                }
            }
            px
        })
        .collect();
    let (w, h) = (k.width, k.height);
    let mut out = RenderOutput {
        color: Image::filled(w, h, [0.0; 3]),
        depth: Image::filled(w, h, 0.0),
        normal: Image::filled(w, h, Vec3::zeros()),
        alpha: Image::filled(w, h, 0.0),
        generation: map.generation(),
    };
    for (i, v) in tiles.into_iter().flatten() {
        out.color.data[i] = v.color;
        out.depth.data[i] = v.depth;
        out.normal.data[i] = v.normal;
        out.alpha.data[i] = v.alpha;
    }
    out
}

/// The compositing record of a single pixel, for diagnostics and tests.
pub fn pixel_contributions(
    map: &MapSnapshot,
    pose: &Pose,
    k: &Intrinsics,
    settings: &RenderSettings,
    x: usize,
    y: usize,
) -> (Vec<ProjectedSplat>, Vec<Contribution>) {
    let splats = project_disks(map.disks(), pose, k, settings.near, settings.far);
    let list: Vec<u32> = (0..splats.len() as u32).collect();
    let mut rec = Vec::new();
    composite_pixel(&splats, &list, x, y, &settings.background, Some(&mut rec));
    (splats, rec)
}
