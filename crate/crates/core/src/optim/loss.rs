//! Photometric, depth and geometry-aware normal losses with their gradients
//! on the rendered channels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    normals_from_depth, normals_from_depth_backward, ColorImage, DepthImage, Frame, Image, NormalMap,
    Pose, Vec3,
};
use crate::map::MapSnapshot;
use crate::render::{render_backward, RenderGradients, RenderOutput, RenderSettings, UpstreamGradients};

/// Norm floor for the cosine terms.
const COS_FLOOR: f64 = 1e-8;
/// Rendered pixels below this opacity are not depth-supervised.
pub const MIN_DEPTH_ALPHA: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub photometric: f64,
    pub depth: f64,
    pub gan: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            photometric: 1.0,
            depth: 0.1,
            gan: 0.05,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.photometric, self.depth, self.gan]
            .iter()
            .all(|w| w.is_finite() && *w >= 0.0)
        {
            Ok(())
        } else {
            Err(Error::invalid("loss weights must be finite and non-negative"))
        }
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            photometric: self.photometric * k,
            depth: self.depth * k,
            gan: self.gan * k,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossReport {
    pub total: f64,
    pub photometric: f64,
    pub depth: f64,
    pub gan: f64,
    pub photometric_pixels: usize,
    pub depth_pixels: usize,
    pub gan_pixels: usize,
}

#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn check_mask(mask: &[bool], len: usize) -> Result<usize> {
    if mask.len() != len {
        return Err(Error::invalid("mask size does not match the images"));
    }
    match mask.iter().filter(|m| **m).count() {
        0 => Err(Error::NoSupervisedPixels),
        n => Ok(n),
    }
}

/// Mean absolute color difference over masked pixels and all channels.
pub fn photometric_loss(rendered: &ColorImage, gt: &ColorImage, mask: &[bool]) -> Result<(f64, ColorImage)> {
    if rendered.width != gt.width || rendered.height != gt.height {
        return Err(Error::invalid("color images differ in size"));
    }
    let n = check_mask(mask, rendered.len())?;
    let denom = 3.0 * n as f64;
    let mut grad = Image::filled(rendered.width, rendered.height, [0.0; 3]);
    let mut sum = 0.0;
    for i in 0..rendered.len() {
        if !mask[i] {
            continue;
        }
        for c in 0..3 {
            let d = rendered.data[i][c] - gt.data[i][c];
            sum += d.abs();
            grad.data[i][c] = sign(d) / denom;
        }
    }
    Ok((sum / denom, grad))
}

/// Mean absolute depth difference over masked pixels.
pub fn depth_loss(rendered: &DepthImage, gt: &DepthImage, mask: &[bool]) -> Result<(f64, DepthImage)> {
    if rendered.width != gt.width || rendered.height != gt.height {
        return Err(Error::invalid("depth images differ in size"));
    }
    let n = check_mask(mask, rendered.len())? as f64;
    let mut grad = DepthImage::filled(rendered.width, rendered.height, 0.0);
    let mut sum = 0.0;
    for i in 0..rendered.len() {
        if mask[i] {
            let d = rendered.data[i] - gt.data[i];
            sum += d.abs();
            grad.data[i] = sign(d) / n;
        }
    }
    Ok((sum / n, grad))
}

/// `1 - cos(a, b)` and its gradient with respect to `b`.
fn cosine_term(a: &Vec3, b: &Vec3) -> (f64, Vec3) {
    let (na, nb) = (a.norm().max(COS_FLOOR), b.norm().max(COS_FLOOR));
    let dot = a.dot(b);
    let cos = dot / (na * nb);
    let mut g = a / (na * nb);
    if b.norm() > COS_FLOOR {
        g -= b * (dot / (na * nb * nb * nb));
    }
    (1.0 - cos, -g)
}

#[derive(Debug, Clone)]
pub struct GanLoss {
    pub value: f64,
    pub grad_rendered: Image<Vec3>,
    pub grad_depth_normals: Image<Vec3>,
}

/// Mean over masked pixels of
/// `|n_gt - n_r|_1 + (1 - cos(n_gt, n_r)) + (1 - cos(n_gt, n_d))`.
pub fn gan_loss(
    gt: &Image<Vec3>,
    rendered: &Image<Vec3>,
    depth_normals: &Image<Vec3>,
    mask: &[bool],
) -> Result<GanLoss> {
    if gt.len() != rendered.len() || gt.len() != depth_normals.len() {
        return Err(Error::invalid("normal maps differ in size"));
    }
    let n = check_mask(mask, gt.len())? as f64;
    let (w, h) = (gt.width, gt.height);
    let mut out = GanLoss {
        value: 0.0,
        grad_rendered: Image::filled(w, h, Vec3::zeros()),
        grad_depth_normals: Image::filled(w, h, Vec3::zeros()),
    };
    let mut sum = 0.0;
    for i in 0..gt.len() {
        if !mask[i] {
            continue;
        }
        let (g, r, d) = (gt.data[i], rendered.data[i], depth_normals.data[i]);
        let diff = r - g;
        let l1 = diff.abs().sum();
        let (cr, gcr) = cosine_term(&g, &r);
        let (cd, gcd) = cosine_term(&g, &d);
        sum += l1 + cr + cd;
        out.grad_rendered.data[i] = (diff.map(sign) + gcr) / n;
        out.grad_depth_normals.data[i] = gcd / n;
    }
    out.value = sum / n;
    Ok(out)
}

/// Per-term supervision masks.
#[derive(Debug, Clone, PartialEq)]
pub struct LossMasks {
    pub photometric: Vec<bool>,
    pub depth: Vec<bool>,
    pub gan: Vec<bool>,
}

impl LossMasks {
    /// Photometric: every pixel. Depth: valid sensor depth and rendered
    /// opacity of at least 0.5. Normals: all three normal maps nonzero.
    pub fn new(frame: &Frame, gt_normals: &NormalMap, out: &RenderOutput, depth_normals: &NormalMap) -> Self {
        let n = frame.depth.len();
        Self {
            photometric: vec![true; n],
            depth: (0..n)
                .map(|i| frame.depth.data[i] > 0.0 && out.alpha.data[i] >= MIN_DEPTH_ALPHA)
                .collect(),
            gan: (0..n)
                .map(|i| gt_normals.valid[i] && out.normal.data[i] != Vec3::zeros() && depth_normals.valid[i])
                .collect(),
        }
    }
}

/// Weighted loss and the gradients on the rendered channels, under fixed
/// masks. A depth or normal term with no supervised pixels contributes zero.
pub fn loss_with_masks(
    frame: &Frame,
    gt_normals: &NormalMap,
    out: &RenderOutput,
    weights: &LossWeights,
    masks: &LossMasks,
) -> Result<(LossReport, UpstreamGradients)> {
    weights.validate()?;
    let k = &frame.intrinsics;
    let (w, h) = (k.width, k.height);
    if out.width() != w || out.height() != h {
        return Err(Error::invalid("render size does not match the frame"));
    }
    let mut up = UpstreamGradients::zeros(w, h);
    let mut report = LossReport::default();

    let (lp, gp) = photometric_loss(&out.color, &frame.color, &masks.photometric)?;
    report.photometric = lp;
    report.photometric_pixels = masks.photometric.iter().filter(|m| **m).count();
    for (u, g) in up.color.data.iter_mut().zip(&gp.data) {
        *u = g.map(|v| v * weights.photometric);
    }

    match depth_loss(&out.depth, &frame.depth, &masks.depth) {
        Ok((ld, gd)) => {
            report.depth = ld;
            report.depth_pixels = masks.depth.iter().filter(|m| **m).count();
            for (u, g) in up.depth.data.iter_mut().zip(&gd.data) {
                *u += g * weights.depth;
            }
        }
        Err(Error::NoSupervisedPixels) => {}
        Err(e) => return Err(e),
    }

    let depth_normals = normals_from_depth(&out.depth, k);
    match gan_loss(&gt_normals.normals, &out.normal, &depth_normals.normals, &masks.gan) {
        Ok(gl) => {
            report.gan = gl.value;
            report.gan_pixels = masks.gan.iter().filter(|m| **m).count();
            for (u, g) in up.normal.data.iter_mut().zip(&gl.grad_rendered.data) {
                *u = g * weights.gan;
            }
            let scaled = Image {
                width: w,
                height: h,
                data: gl.grad_depth_normals.data.iter().map(|g| g * weights.gan).collect(),
            };
            let through_depth = normals_from_depth_backward(&out.depth, k, &scaled, &masks.gan);
            for (u, g) in up.depth.data.iter_mut().zip(&through_depth.data) {
                *u += g;
            }
        }
        Err(Error::NoSupervisedPixels) => {}
        Err(e) => return Err(e),
    }

    report.total = weights.photometric * report.photometric
        + weights.depth * report.depth
        + weights.gan * report.gan;
    Ok((report, up))
}

/// Full weighted loss of a rendered frame and its gradient on every disk.
#[allow(clippy::too_many_arguments)]
pub fn total_loss(
    map: &MapSnapshot,
    pose: &Pose,
    frame: &Frame,
    gt_normals: &NormalMap,
    out: &RenderOutput,
    settings: &RenderSettings,
    weights: &LossWeights,
) -> Result<(LossReport, RenderGradients)> {
    let depth_normals = normals_from_depth(&out.depth, &frame.intrinsics);
    let masks = LossMasks::new(frame, gt_normals, out, &depth_normals);
    let (report, up) = loss_with_masks(frame, gt_normals, out, weights, &masks)?;
    let grads = render_backward(map, pose, &frame.intrinsics, settings, out, &up)?;
    Ok((report, grads))
}
