use nalgebra::Matrix3;

use crate::error::{Error, Result};
use crate::geometry::{ColorImage, DepthImage, Image, Mat3, Pose, Vec3};
use crate::trajectory::Trajectory;

/// Default timestamp association tolerance, seconds.
pub const ASSOCIATION_TOLERANCE: f64 = 0.02;
/// Reported PSNR when the images are (nearly) identical.
pub const PSNR_CAP_DB: f64 = 100.0;
const PSNR_MIN_MSE: f64 = 1e-10;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

/// Pairs each estimated pose with the ground-truth pose nearest in time,
/// keeping pairs closer than `tolerance`. Returns `(estimated, reference)`
/// index pairs.
pub fn associate(estimated: &Trajectory, reference: &Trajectory, tolerance: f64) -> Vec<(usize, usize)> {
    let gt = &reference.stamps;
    let mut pairs = Vec::new();
    if gt.is_empty() {
        return pairs;
    }
    for (i, &t) in estimated.stamps.iter().enumerate() {
        let j = gt.partition_point(|&s| s < t);
        let best = [j.checked_sub(1), (j < gt.len()).then_some(j)]
            .into_iter()
            .flatten()
            .min_by(|&a, &b| (gt[a] - t).abs().total_cmp(&(gt[b] - t).abs()))
            .expect("reference is nonempty");
        if (gt[best] - t).abs() <= tolerance {
            pairs.push((i, best));
        }
    }
    pairs
}

/// Least-squares rigid transform `(R, t)` minimizing `sum |R a_i + t - b_i|^2`.
pub fn rigid_alignment(a: &[Vec3], b: &[Vec3]) -> Result<Pose> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::invalid("rigid alignment needs at least two point pairs"));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<Vec3>() / n;
    let mb = b.iter().sum::<Vec3>() / n;
    let mut h = Matrix3::zeros();
    for (p, q) in a.iter().zip(b) {
        h += (p - ma) * (q - mb).transpose();
    }
    let svd = h.svd(true, true);
    let (u, vt) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
    let v = vt.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let r: Mat3 = v * Matrix3::from_diagonal(&Vec3::new(1.0, 1.0, d)) * u.transpose();
    Ok(Pose::new(r, mb - r * ma))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AteResult {
    /// Meters.
    pub rmse: f64,
    /// Maps estimated positions onto the reference.
    pub alignment: Pose,
    pub pairs: usize,
}

/// Absolute trajectory error after rigid alignment (no scale).
pub fn ate(estimated: &Trajectory, reference: &Trajectory, tolerance: f64) -> Result<AteResult> {
    let pairs = associate(estimated, reference, tolerance);
    if pairs.len() < 2 {
        return Err(Error::invalid(format!(
            "ATE needs at least two associated poses, found {}",
            pairs.len()
        )));
    }
    let a: Vec<Vec3> = pairs.iter().map(|&(i, _)| estimated.poses[i].translation).collect();
    let b: Vec<Vec3> = pairs.iter().map(|&(_, j)| reference.poses[j].translation).collect();
    let alignment = rigid_alignment(&a, &b)?;
    let sq: f64 = a
        .iter()
        .zip(&b)
        .map(|(p, q)| (alignment.transform_point(p) - q).norm_squared())
        .sum();
    Ok(AteResult {
        rmse: (sq / a.len() as f64).sqrt(),
        alignment,
        pairs: a.len(),
    })
}

/// ATE RMSE in meters with the default association tolerance.
pub fn ate_rmse(estimated: &Trajectory, reference: &Trajectory) -> Result<f64> {
    Ok(ate(estimated, reference, ASSOCIATION_TOLERANCE)?.rmse)
}

fn same_shape<A, B>(a: &Image<A>, b: &Image<B>) -> Result<()> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::invalid(format!(
            "image sizes differ: {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    Ok(())
}

/// Pixels with valid reference depth and rendered alpha of at least 0.5.
pub fn depth_mask(gt: &DepthImage, alpha: &Image<f64>) -> Result<Image<bool>> {
    same_shape(gt, alpha)?;
    let data = gt.data.iter().zip(&alpha.data).map(|(d, a)| *d > 0.0 && *a >= 0.5).collect();
    Image::from_vec(gt.width, gt.height, data)
}

/// Mean absolute depth difference over the mask, in centimeters.
pub fn depth_l1(rendered: &DepthImage, gt: &DepthImage, mask: &Image<bool>) -> Result<f64> {
    same_shape(rendered, gt)?;
    same_shape(rendered, mask)?;
    let (sum, n) = rendered
        .data
        .iter()
        .zip(&gt.data)
        .zip(&mask.data)
        .filter(|(_, m)| **m)
        .fold((0.0, 0usize), |(s, n), ((r, g), _)| (s + (r - g).abs(), n + 1));
    if n == 0 {
        return Err(Error::NoSupervisedPixels);
    }
    Ok(100.0 * sum / n as f64)
}

fn check_unit_range(img: &ColorImage) -> Result<()> {
    if img.data.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::invalid("image values must lie in [0, 1]"));
    }
    Ok(())
}

/// Peak signal-to-noise ratio for images in [0, 1], in dB.
pub fn psnr(a: &ColorImage, b: &ColorImage) -> Result<f64> {
    same_shape(a, b)?;
    check_unit_range(a)?;
    check_unit_range(b)?;
    if a.is_empty() {
        return Err(Error::invalid("PSNR of empty images"));
    }
    let sq: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(p, q)| (0..3).map(|c| (p[c] - q[c]).powi(2)).sum::<f64>())
        .sum();
    let mse = sq / (3 * a.len()) as f64;
    if mse < PSNR_MIN_MSE {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}

/// Normalized 1D Gaussian taps; the 2D window is their outer product.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let mid = (size as f64 - 1.0) / 2.0;
    let w: Vec<f64> = (0..size)
        .map(|i| (-(i as f64 - mid).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering of a single-channel image.
fn filter_valid(img: &[f64], w: usize, h: usize, taps: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = taps.len();
    let (ow, oh) = (w + 1 - n, h + 1 - n);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().enumerate().map(|(k, t)| t * img[y * w + x + k]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().enumerate().map(|(k, t)| t * rows[(y + k) * ow + x]).sum();
        }
    }
    (out, ow, oh)
}

/// Structural similarity with an 11x11 Gaussian window (sigma 1.5), averaged
/// over every window position that fits inside the image and over the
/// three channels.
pub fn ssim(a: &ColorImage, b: &ColorImage) -> Result<f64> {
    same_shape(a, b)?;
    check_unit_range(a)?;
    check_unit_range(b)?;
    let (w, h) = (a.width, a.height);
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::invalid(format!("SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}")));
    }
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let mut total = 0.0;
    for c in 0..3 {
        let x: Vec<f64> = a.data.iter().map(|p| p[c]).collect();
        let y: Vec<f64> = b.data.iter().map(|p| p[c]).collect();
        let prod = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> { x.iter().zip(&y).map(|(p, q)| f(*p, *q)).collect() };
        let (mx, ..) = filter_valid(&x, w, h, &taps);
        let (my, ..) = filter_valid(&y, w, h, &taps);
        let (mxx, ..) = filter_valid(&prod(&|p, _| p * p), w, h, &taps);
        let (myy, ..) = filter_valid(&prod(&|_, q| q * q), w, h, &taps);
        let (mxy, ..) = filter_valid(&prod(&|p, q| p * q), w, h, &taps);
        let mut sum = 0.0;
        for i in 0..mx.len() {
            let (ux, uy) = (mx[i], my[i]);
            let vx = mxx[i] - ux * ux;
            let vy = myy[i] - uy * uy;
            let cxy = mxy[i] - ux * uy;
            sum += ((2.0 * ux * uy + SSIM_C1) * (2.0 * cxy + SSIM_C2))
                / ((ux * ux + uy * uy + SSIM_C1) * (vx + vy + SSIM_C2));
        }
        total += sum / mx.len() as f64;
    }
    Ok(total / 3.0)
}
