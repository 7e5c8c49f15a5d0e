//! Analytic adjoint of the forward rasterizer.

use std::ops::{AddAssign, Mul};

use rayon::prelude::*;

use super::{
    composite_pixel, project_disks, Contribution, ProjectedSplat, RenderOutput, RenderSettings,
    TileBins, NORMAL_EPS,
};
use crate::error::{Error, Result};
use crate::geometry::{Image, Intrinsics, Pose, Vec3};
use crate::map::MapSnapshot;

/// Loss gradients with respect to each rendered channel.
#[derive(Debug, Clone)]
pub struct UpstreamGradients {
    pub color: Image<[f64; 3]>,
    pub depth: Image<f64>,
    /// Gradient on the normalized normal channel.
    pub normal: Image<Vec3>,
    pub alpha: Image<f64>,
}

impl UpstreamGradients {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            color: Image::filled(width, height, [0.0; 3]),
            depth: Image::filled(width, height, 0.0),
            normal: Image::filled(width, height, Vec3::zeros()),
            alpha: Image::filled(width, height, 0.0),
        }
    }

    fn is_zero_at(&self, i: usize) -> bool {
        self.color.data[i] == [0.0; 3]
            && self.depth.data[i] == 0.0
            && self.normal.data[i] == Vec3::zeros()
            && self.alpha.data[i] == 0.0
    }
}

/// Per-disk partial derivatives. `rotation` is the gradient with respect to a
/// world-frame rotation increment applied on the left of the tangent frame.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DiskGradient {
    pub center: Vec3,
    pub rotation: Vec3,
    pub scales: [f64; 2],
    pub color: [f64; 3],
    pub opacity: f64,
}

impl DiskGradient {
    pub fn to_array(&self) -> [f64; 12] {
        [
            self.center.x,
            self.center.y,
            self.center.z,
            self.rotation.x,
            self.rotation.y,
            self.rotation.z,
            self.scales[0],
            self.scales[1],
            self.color[0],
            self.color[1],
            self.color[2],
            self.opacity,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

impl AddAssign for DiskGradient {
    fn add_assign(&mut self, o: Self) {
        self.center += o.center;
        self.rotation += o.rotation;
        for i in 0..2 {
            self.scales[i] += o.scales[i];
        }
        for i in 0..3 {
            self.color[i] += o.color[i];
        }
        self.opacity += o.opacity;
    }
}

impl Mul<f64> for DiskGradient {
    type Output = Self;

    fn mul(self, k: f64) -> Self {
        Self {
            center: self.center * k,
            rotation: self.rotation * k,
            scales: self.scales.map(|v| v * k),
            color: self.color.map(|v| v * k),
            opacity: self.opacity * k,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct RenderGradients {
    /// Indexed like the map's disks.
    pub disks: Vec<DiskGradient>,
}

impl RenderGradients {
    pub fn zeros(n: usize) -> Self {
        Self {
            disks: vec![DiskGradient::default(); n],
        }
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            disks: self.disks.iter().map(|g| *g * k).collect(),
        }
    }

    pub fn add(&mut self, other: &RenderGradients) {
        for (a, b) in self.disks.iter_mut().zip(&other.disks) {
            *a += *b;
        }
    }
}

/// Camera-frame gradient of one splat.
#[derive(Debug, Clone, Copy, Default)]
struct SplatGrad {
    center: Vec3,
    normal: Vec3,
    tangent1: Vec3,
    tangent2: Vec3,
    scales: [f64; 2],
    color: [f64; 3],
    opacity: f64,
}

impl AddAssign for SplatGrad {
    fn add_assign(&mut self, o: Self) {
        self.center += o.center;
        self.normal += o.normal;
        self.tangent1 += o.tangent1;
        self.tangent2 += o.tangent2;
        for i in 0..2 {
            self.scales[i] += o.scales[i];
        }
        for i in 0..3 {
            self.color[i] += o.color[i];
        }
        self.opacity += o.opacity;
    }
}

/// Gradient of one contribution's geometry given `dL/dalpha` and
/// `dL/d(depth)`, plus the direct normal-feature gradient.
fn contribution_grad(
    s: &ProjectedSplat,
    k: &Intrinsics,
    x: usize,
    y: usize,
    c: &Contribution,
    g_alpha: f64,
    g_depth: f64,
    g_normal_feature: Vec3,
    g_color: [f64; 3],
) -> SplatGrad {
    let ray = k.ray(x as f64, y as f64);
    let denom = s.normal.dot(&ray);
    let t = c.hit.depth;
    let delta = ray * t - s.center;
    let (s1, s2) = (s.scales[0], s.scales[1]);
    let a = c.hit.u * s1;
    let b = c.hit.v * s2;
    let g_weight = g_alpha * s.opacity;
    // weight = exp(-q / 2)
    let g_q = -0.5 * c.hit.weight * g_weight;
    let g_a = g_q * 2.0 * a / (s1 * s1);
    let g_b = g_q * 2.0 * b / (s2 * s2);
    let g_delta = s.tangent1 * g_a + s.tangent2 * g_b;
    let g_t = g_depth + g_delta.dot(&ray);
    SplatGrad {
        center: -g_delta + s.normal * (g_t / denom),
        normal: -delta * (g_t / denom) + g_normal_feature * s.facing_sign,
        tangent1: delta * g_a,
        tangent2: delta * g_b,
        scales: [
            g_q * (-2.0 * a * a / (s1 * s1 * s1)),
            g_q * (-2.0 * b * b / (s2 * s2 * s2)),
        ],
        color: g_color,
        opacity: g_alpha * c.hit.weight,
    }
}

/// Backpropagates channel gradients of one pixel through compositing.
#[allow(clippy::too_many_arguments)]
fn pixel_backward(
    splats: &[ProjectedSplat],
    k: &Intrinsics,
    x: usize,
    y: usize,
    contribs: &[Contribution],
    background: &[f64; 3],
    g_out_color: [f64; 3],
    g_out_depth: f64,
    g_out_normal: Vec3,
    g_out_alpha: f64,
    mut emit: impl FnMut(&Contribution, SplatGrad),
) {
    // Normal channel is normalize(sum n_i w_i).
    let mut acc = Vec3::zeros();
    for c in contribs {
        acc += splats[c.splat].facing_normal() * (c.alpha * c.transmittance);
    }
    let norm = acc.norm();
    let g_acc = if norm < NORMAL_EPS {
        Vec3::zeros()
    } else {
        let n_hat = acc / norm;
        (g_out_normal - n_hat * n_hat.dot(&g_out_normal)) / norm
    };

    // Values composited behind the current splat, background included.
    let mut behind_color = *background;
    let mut behind_depth = 0.0;
    let mut behind_normal = Vec3::zeros();
    let mut behind_alpha = 0.0;
    for c in contribs.iter().rev() {
        let s = &splats[c.splat];
        let (a, t) = (c.alpha, c.transmittance);
        let n_i = s.facing_normal();
        let mut g_alpha = 0.0;
        for ch in 0..3 {
            g_alpha += g_out_color[ch] * (s.color[ch] - behind_color[ch]);
        }
        g_alpha += g_out_depth * (c.hit.depth - behind_depth);
        g_alpha += g_acc.dot(&(n_i - behind_normal));
        g_alpha += g_out_alpha * (1.0 - behind_alpha);
        g_alpha *= t;
        let w = a * t;
        let grad = contribution_grad(
            s,
            k,
            x,
            y,
            c,
            g_alpha,
            g_out_depth * w,
            g_acc * w,
            g_out_color.map(|g| g * w),
        );
        emit(c, grad);
        for ch in 0..3 {
            behind_color[ch] = s.color[ch] * a + (1.0 - a) * behind_color[ch];
        }
        behind_depth = c.hit.depth * a + (1.0 - a) * behind_depth;
        behind_normal = n_i * a + behind_normal * (1.0 - a);
        behind_alpha = a + (1.0 - a) * behind_alpha;
    }
}

/// Gradients of a scalar loss with respect to every disk parameter, given the
/// loss gradients on the channels of `forward`.
///
/// Per-tile partial sums are reduced in tile order, so the result does not
/// depend on thread scheduling.
pub fn render_backward(
    map: &MapSnapshot,
    pose: &Pose,
    k: &Intrinsics,
    settings: &RenderSettings,
    forward: &RenderOutput,
    upstream: &UpstreamGradients,
) -> Result<RenderGradients> {
    if forward.generation != map.generation() {
        return Err(Error::GenerationMismatch {
            forward: forward.generation,
            current: map.generation(),
        });
    }
    if upstream.depth.width != k.width || upstream.depth.height != k.height {
        return Err(Error::invalid("upstream gradient size does not match the camera"));
    }
    let splats = project_disks(map.disks(), pose, k, settings.near, settings.far);
    let bins = TileBins::build(&splats, k, settings.tile_size);
    let partials: Vec<Vec<(u32, SplatGrad)>> = (0..bins.lists.len())
        .into_par_iter()
        .map(|tile| {
            let list = &bins.lists[tile];
            let mut local = vec![SplatGrad::default(); list.len()];
            let mut touched = vec![false; list.len()];
            let (xs, ys) = bins.tile_pixels(tile, k);
            let mut contribs = Vec::new();
            for y in ys {
                for x in xs.clone() {
                    let i = y * k.width + x;
                    if upstream.is_zero_at(i) {
                        continue;
                    }
                    contribs.clear();
                    composite_pixel(&splats, list, x, y, &settings.background, Some(&mut contribs));
                    pixel_backward(
                        &splats,
                        k,
                        x,
                        y,
                        &contribs,
                        &settings.background,
                        upstream.color.data[i],
                        upstream.depth.data[i],
                        upstream.normal.data[i],
                        upstream.alpha.data[i],
                        |c, g| {
                            local[c.list_pos] += g;
                            touched[c.list_pos] = true;
                        },
                    );
                }
            }
            list.iter()
                .zip(local)
                .zip(touched)
                .filter(|(_, t)| *t)
                .map(|((&si, g), _)| (si, g))
                .collect()
        })
        .collect();

    let mut per_splat = vec![SplatGrad::default(); splats.len()];
    for tile in partials {
        for (si, g) in tile {
            per_splat[si as usize] += g;
        }
    }

    let mut out = RenderGradients::zeros(map.len());
    let r_wc = pose.rotation;
    for (s, g) in splats.iter().zip(per_splat) {
        let frame = map.disks()[s.disk].frame();
        let g_t1 = r_wc * g.tangent1;
        let g_t2 = r_wc * g.tangent2;
        let g_n = r_wc * g.normal;
        out.disks[s.disk] = DiskGradient {
            center: r_wc * g.center,
            rotation: frame.column(0).cross(&g_t1)
                + frame.column(1).cross(&g_t2)
                + frame.column(2).cross(&g_n),
            scales: g.scales,
            color: g.color,
            opacity: g.opacity,
        };
    }
    Ok(out)
}
