use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{ColorImage, DepthImage, Intrinsics, Pose, Vec3};

pub const DEFAULT_TRUNCATION: f64 = 0.04;

/// Dense truncated signed distance grid. Samples sit at
/// `origin + (i, j, k) * voxel_size`; values are positive in front of the
/// observed surface and normalized by the truncation distance.
#[derive(Debug, Clone, PartialEq)]
pub struct TsdfVolume {
    pub voxel_size: f64,
    pub truncation: f64,
    pub origin: Vec3,
    pub dims: [usize; 3],
    pub tsdf: Vec<f64>,
    pub weight: Vec<f64>,
    pub color: Vec<[f32; 3]>,
}

impl TsdfVolume {
    pub fn new(origin: Vec3, dims: [usize; 3], voxel_size: f64, truncation: f64) -> Result<Self> {
        if !(voxel_size > 0.0 && voxel_size.is_finite()) {
            return Err(Error::invalid("voxel size must be positive"));
        }
        if !(truncation >= 2.0 * voxel_size && truncation.is_finite()) {
            return Err(Error::invalid("truncation must be at least twice the voxel size"));
        }
        if dims.iter().any(|&d| d < 2) {
            return Err(Error::invalid("volume needs at least 2 samples per axis"));
        }
        let n = dims.iter().product::<usize>();
        if n > 200_000_000 {
            return Err(Error::invalid(format!("volume of {n} voxels is too large")));
        }
        Ok(Self {
            voxel_size,
            truncation,
            origin,
            dims,
            tsdf: vec![1.0; n],
            weight: vec![0.0; n],
            color: vec![[0.0; 3]; n],
        })
    }

    /// Volume covering the box `[min, max]` padded by the truncation distance.
    pub fn covering(min: Vec3, max: Vec3, voxel_size: f64, truncation: f64) -> Result<Self> {
        if (0..3).any(|i| !(max[i] >= min[i])) {
            return Err(Error::invalid("volume bounds are inverted"));
        }
        let origin = min - Vec3::repeat(truncation);
        let ext = max - min + Vec3::repeat(2.0 * truncation);
        let dims = [0, 1, 2].map(|i| (ext[i] / voxel_size).ceil() as usize + 1);
        Self::new(origin, dims, voxel_size, truncation)
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.dims[1] + j) * self.dims[0] + i
    }

    #[inline]
    pub fn position(&self, i: usize, j: usize, k: usize) -> Vec3 {
        self.origin + Vec3::new(i as f64, j as f64, k as f64) * self.voxel_size
    }

    /// Fuses one depth image (meters, 0 = invalid) observed from `pose`.
    /// Each voxel in the frustum takes the depth of its nearest pixel; the
    /// projective signed distance is clamped to the truncation band and
    /// averaged with unit weight. Voxels farther than the truncation
    /// distance behind the surface are left untouched.
    pub fn integrate(
        &mut self,
        depth: &DepthImage,
        color: Option<&ColorImage>,
        pose: &Pose,
        k: &Intrinsics,
    ) -> Result<()> {
        if depth.width != k.width || depth.height != k.height {
            return Err(Error::invalid("depth image does not match intrinsics"));
        }
        if let Some(c) = color {
            if c.width != k.width || c.height != k.height {
                return Err(Error::invalid("color image does not match intrinsics"));
            }
        }
        let [nx, ny, _] = self.dims;
        let slab = nx * ny;
        let r_cw = pose.rotation.transpose();
        let step = r_cw * Vec3::x() * self.voxel_size;
        let (origin, voxel, trunc) = (self.origin, self.voxel_size, self.truncation);
        let (w, h) = (k.width as f64, k.height as f64);
        self.tsdf
            .par_chunks_mut(slab)
            .zip(self.weight.par_chunks_mut(slab))
            .zip(self.color.par_chunks_mut(slab))
            .enumerate()
            .for_each(|(kz, ((tsdf, weight), col))| {
                for j in 0..ny {
                    let row = origin + Vec3::new(0.0, j as f64, kz as f64) * voxel;
                    let mut p = r_cw * (row - pose.translation);
                    for i in 0..nx {
                        if i > 0 {
                            p += step;
                        }
                        if p.z <= 0.0 {
                            continue;
                        }
                        let u = (k.fx * p.x / p.z + k.cx).round();
                        let v = (k.fy * p.y / p.z + k.cy).round();
                        if !(u >= 0.0 && v >= 0.0 && u < w && v < h) {
                            continue;
                        }
                        let pix = v as usize * k.width + u as usize;
                        let d = depth.data[pix];
                        if d <= 0.0 {
                            continue;
                        }
                        let sdf = d - p.z;
                        if sdf < -trunc {
                            continue;
                        }
                        let t = (sdf / trunc).min(1.0);
                        let idx = j * nx + i;
                        let w0 = weight[idx];
                        tsdf[idx] = (tsdf[idx] * w0 + t) / (w0 + 1.0);
                        if let Some(c) = color {
                            let c = c.data[pix];
                            for ch in 0..3 {
                                col[idx][ch] = ((col[idx][ch] as f64 * w0 + c[ch]) / (w0 + 1.0)) as f32;
                            }
                        }
                        weight[idx] = w0 + 1.0;
                    }
                }
            });
        Ok(())
    }
}
