//! Procedural RGB-D sequences inside an axis-aligned box room.
//!
//! World axes follow the camera convention: `y` points down, so the floor is
//! the `y = max` face. Depth is ray-cast exactly; color is a flat per-face
//! shade, optionally modulated by a checkerboard.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::TriangleMesh;
use crate::geometry::{ColorImage, DepthImage, Frame, Image, Intrinsics, Mat3, Pose, Vec3};
use crate::trajectory::Trajectory;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Texture {
    Checker,
    /// Uniform gray everywhere.
    Flat,
}

/// Circular camera path looking at its own center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Orbit {
    pub center: [f64; 3],
    pub radius: f64,
    /// Offset of the orbit plane along world up (`-y`).
    pub height: f64,
    /// Orbit angle advanced per frame, radians.
    pub angular_step: f64,
    pub start_angle: f64,
    /// Peak up/down tilt of the view direction, radians.
    pub pitch_amplitude: f64,
    /// Frames per full pitch oscillation.
    pub pitch_period: f64,
}

impl Default for Orbit {
    fn default() -> Self {
        Self {
            center: [0.0; 3],
            radius: 0.4,
            height: 0.0,
            angular_step: 2.0 * std::f64::consts::PI / 50.0,
            start_angle: 0.0,
            pitch_amplitude: 0.5,
            pitch_period: 25.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticScene {
    pub room_min: [f64; 3],
    pub room_max: [f64; 3],
    pub texture: Texture,
    /// Checker square edge, meters.
    pub checker_size: f64,
    pub orbit: Orbit,
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub frames: usize,
    pub frame_rate: f64,
}

impl Default for SyntheticScene {
    fn default() -> Self {
        Self {
            room_min: [-1.0, -0.6, -0.8],
            room_max: [1.0, 0.6, 0.8],
            texture: Texture::Checker,
            checker_size: 0.2,
            orbit: Orbit::default(),
            width: 320,
            height: 240,
            fx: 160.0,
            fy: 160.0,
            frames: 50,
            frame_rate: 30.0,
        }
    }
}

const FACE_COLORS: [[f64; 3]; 6] = [
    [0.85, 0.35, 0.30],
    [0.30, 0.70, 0.40],
    [0.85, 0.80, 0.55],
    [0.45, 0.40, 0.35],
    [0.35, 0.45, 0.85],
    [0.75, 0.45, 0.80],
];

impl SyntheticScene {
    /// Parses a scene description; absent fields take their defaults.
    pub fn from_toml(text: &str) -> Result<Self> {
        let scene: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        scene.validate()?;
        Ok(scene)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scene serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = (self.min(), self.max());
        if !(0..3).all(|i| lo[i] < hi[i]) {
            return Err(Error::invalid("room_min must be below room_max on every axis"));
        }
        if self.frames == 0 {
            return Err(Error::invalid("frame count must be at least 1"));
        }
        if !(self.frame_rate > 0.0) {
            return Err(Error::invalid("frame_rate must be positive"));
        }
        if !(self.checker_size > 0.0) {
            return Err(Error::invalid("checker_size must be positive"));
        }
        if !(self.orbit.radius >= 0.0 && self.orbit.pitch_period > 0.0) {
            return Err(Error::invalid("orbit radius and pitch period must be positive"));
        }
        self.intrinsics()?;
        for k in 0..self.frames {
            let p = self.position(k);
            if !(0..3).all(|i| p[i] > lo[i] && p[i] < hi[i]) {
                return Err(Error::invalid(format!("camera {k} leaves the room")));
            }
        }
        Ok(())
    }

    pub fn min(&self) -> Vec3 {
        Vec3::from(self.room_min)
    }

    pub fn max(&self) -> Vec3 {
        Vec3::from(self.room_max)
    }

    pub fn intrinsics(&self) -> Result<Intrinsics> {
        Intrinsics::new(
            self.fx,
            self.fy,
            (self.width as f64 - 1.0) * 0.5,
            (self.height as f64 - 1.0) * 0.5,
            self.width,
            self.height,
        )
    }

    pub fn timestamp(&self, k: usize) -> f64 {
        k as f64 / self.frame_rate
    }

    fn angle(&self, k: usize) -> f64 {
        self.orbit.start_angle + self.orbit.angular_step * k as f64
    }

    fn position(&self, k: usize) -> Vec3 {
        let o = &self.orbit;
        let a = self.angle(k);
        Vec3::from(o.center) + Vec3::new(o.radius * a.cos(), -o.height, o.radius * a.sin())
    }

    /// Ground-truth camera-to-world pose of frame `k`.
    pub fn pose(&self, k: usize) -> Pose {
        let o = &self.orbit;
        let pos = self.position(k);
        let a = self.angle(k);
        let inward = Vec3::new(-a.cos(), 0.0, -a.sin());
        // A zero radius degenerates to looking along the orbit tangent.
        let inward = if o.radius > 0.0 { inward } else { Vec3::new(-a.sin(), 0.0, a.cos()) };
        let pitch = o.pitch_amplitude * (2.0 * std::f64::consts::PI * k as f64 / o.pitch_period).sin();
        let down = Vec3::y();
        let forward = inward * pitch.cos() - down * pitch.sin();
        let right = down.cross(&forward).normalize();
        let cam_down = forward.cross(&right);
        Pose::new(Mat3::from_columns(&[right, cam_down, forward]), pos)
    }

    pub fn trajectory(&self) -> Trajectory {
        let mut t = Trajectory::new();
        for k in 0..self.frames {
            t.push(self.timestamp(k), self.pose(k))
                .expect("synthetic timestamps increase");
        }
        t
    }

    /// Distance along `dir` to the room wall and the index of the face hit
    /// (`2 * axis` for the min face, `2 * axis + 1` for the max face).
    pub fn cast(&self, origin: &Vec3, dir: &Vec3) -> Option<(f64, usize)> {
        let (lo, hi) = (self.min(), self.max());
        let mut best: Option<(f64, usize)> = None;
        for i in 0..3 {
            let (t, face) = if dir[i] > 0.0 {
                ((hi[i] - origin[i]) / dir[i], 2 * i + 1)
            } else if dir[i] < 0.0 {
                ((lo[i] - origin[i]) / dir[i], 2 * i)
            } else {
                continue;
            };
            if best.is_none_or(|(bt, _)| t < bt) {
                best = Some((t, face));
            }
        }
        best.filter(|(t, _)| *t > 0.0)
    }

    fn shade(&self, p: &Vec3, face: usize) -> [f64; 3] {
        match self.texture {
            Texture::Flat => [0.5; 3],
            Texture::Checker => {
                let axis = face / 2;
                let (a, b) = ((axis + 1) % 3, (axis + 2) % 3);
                let cell = (p[a] / self.checker_size).floor() + (p[b] / self.checker_size).floor();
                let k = if cell.rem_euclid(2.0) == 0.0 { 1.0 } else { 0.45 };
                FACE_COLORS[face].map(|c| c * k)
            }
        }
    }

    pub fn render_frame(&self, k: usize) -> Result<Frame> {
        self.render_view(&self.pose(k), k, self.timestamp(k))
    }

    /// Renders the room from an arbitrary camera-to-world pose.
    pub fn render_view(&self, pose: &Pose, index: usize, timestamp: f64) -> Result<Frame> {
        let intr = self.intrinsics()?;
        let (w, h) = (self.width, self.height);
        let mut depth = DepthImage::filled(w, h, 0.0);
        let mut color: ColorImage = Image::filled(w, h, [0.0; 3]);
        for v in 0..h {
            for u in 0..w {
                let dir = pose.rotation * intr.ray(u as f64, v as f64);
                if let Some((t, face)) = self.cast(&pose.translation, &dir) {
                    let i = v * w + u;
                    // The camera ray has unit z, so the ray parameter is the depth.
                    depth.data[i] = t;
                    color.data[i] = self.shade(&(pose.translation + dir * t), face);
                }
            }
        }
        Frame::new(color, depth, intr, index, timestamp)
    }

    pub fn reference_mesh(&self) -> TriangleMesh {
        TriangleMesh::box_interior(self.min(), self.max())
    }
}
