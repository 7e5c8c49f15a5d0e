use serde::{Deserialize, Serialize};

use super::se3::Vec3;
use crate::error::{Error, Result};

/// Pinhole camera. Pixel `(u, v)` has its center at integer coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// Raw depth units per meter.
    pub depth_scale: f64,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            depth_scale: 5000.0,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn with_depth_scale(mut self, depth_scale: f64) -> Result<Self> {
        self.depth_scale = depth_scale;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::invalid("focal lengths must be positive"));
        }
        if !(self.cx > 0.0 && self.cx < self.width as f64) {
            return Err(Error::invalid("cx must lie inside the image"));
        }
        if !(self.cy > 0.0 && self.cy < self.height as f64) {
            return Err(Error::invalid("cy must lie inside the image"));
        }
        if !(self.depth_scale > 0.0) {
            return Err(Error::invalid("depth_scale must be positive"));
        }
        Ok(())
    }

    /// Viewing ray with unit z component.
    #[inline]
    pub fn ray(&self, u: f64, v: f64) -> Vec3 {
        Vec3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }

    #[inline]
    pub fn backproject(&self, u: f64, v: f64, depth: f64) -> Vec3 {
        self.ray(u, v) * depth
    }

    /// Projects a camera-frame point; `None` at or behind the camera plane.
    #[inline]
    pub fn project(&self, p: &Vec3) -> Option<(f64, f64)> {
        if p.z <= 0.0 {
            return None;
        }
        Some((self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy))
    }

    /// Intrinsics for an image downsampled by an integer factor.
    pub fn scaled(&self, factor: usize) -> Self {
        let f = factor as f64;
        Self {
            fx: self.fx / f,
            fy: self.fy / f,
            cx: self.cx / f,
            cy: self.cy / f,
            width: self.width / factor,
            height: self.height / factor,
            depth_scale: self.depth_scale,
        }
    }
}

/// Row-major image buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Image<T> {
    pub width: usize,
    pub height: usize,
    pub data: Vec<T>,
}

impl<T: Clone> Image<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }
}

impl<T> Image<T> {
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::invalid(format!(
                "image buffer has {} entries, expected {}x{}",
                data.len(),
                width,
                height
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    #[inline]
    pub fn index(&self, u: usize, v: usize) -> usize {
        v * self.width + u
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> &T {
        &self.data[v * self.width + u]
    }

    #[inline]
    pub fn get_mut(&mut self, u: usize, v: usize) -> &mut T {
        &mut self.data[v * self.width + u]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

pub type DepthImage = Image<f64>;
pub type ColorImage = Image<[f64; 3]>;

/// One RGB-D observation. Depth is in meters with 0 marking invalid pixels.
#[derive(Debug, Clone)]
pub struct Frame {
    pub color: ColorImage,
    pub depth: DepthImage,
    pub intrinsics: Intrinsics,
    pub index: usize,
    pub timestamp: f64,
}

impl Frame {
    pub fn new(
        color: ColorImage,
        depth: DepthImage,
        intrinsics: Intrinsics,
        index: usize,
        timestamp: f64,
    ) -> Result<Self> {
        if color.width != intrinsics.width
            || color.height != intrinsics.height
            || depth.width != intrinsics.width
            || depth.height != intrinsics.height
        {
            return Err(Error::invalid("frame images do not match intrinsics size"));
        }
        if depth.data.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
            return Err(Error::invalid("depth must be finite and non-negative"));
        }
        if color.data.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::invalid("color must be finite"));
        }
        Ok(Self {
            color,
            depth,
            intrinsics,
            index,
            timestamp,
        })
    }

    pub fn valid_depth_count(&self) -> usize {
        self.depth.data.iter().filter(|d| **d > 0.0).count()
    }
}
