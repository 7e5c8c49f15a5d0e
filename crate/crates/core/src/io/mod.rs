//! Files on disk: TUM-layout sequences, images, trajectories, maps, meshes,
//! loss traces and metric summaries.

mod ply;
mod tum;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use image::{ImageBuffer, Luma, Rgb};

pub use ply::{read_map_ply, read_mesh_ply, write_map_ply, write_mesh_ply};
pub use tum::{associate_nearest, read_index, DatasetDescriptor, IndexEntry, TumDataset, DEFAULT_INTRINSICS};

use crate::error::{Error, Result};
use crate::geometry::{ColorImage, DepthImage, Image, Intrinsics, Pose, Vec3};
use crate::optim::LossTraceRow;
use crate::pipeline::Metrics;
use crate::render::RenderOutput;
use crate::synth::SyntheticScene;
use crate::trajectory::Trajectory;

/// Writes depth in meters as 16-bit PNG; values are rounded to raw units
/// and saturate at the largest representable depth.
pub fn write_depth_png(path: &Path, depth: &DepthImage, depth_scale: f64) -> Result<()> {
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_fn(depth.width as u32, depth.height as u32, |u, v| {
        let d = *depth.get(u as usize, v as usize);
        let raw = if d.is_finite() && d > 0.0 { (d * depth_scale).round().min(65535.0) } else { 0.0 };
        Luma([raw as u16])
    });
    buf.save(path)?;
    Ok(())
}

pub fn read_depth_png(path: &Path, depth_scale: f64) -> Result<DepthImage> {
    let img = image::open(path)?.into_luma16();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img.into_raw().into_iter().map(|r| r as f64 / depth_scale).collect();
    Image::from_vec(w, h, data)
}

fn to_u8(c: f64) -> u8 {
    (c.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn write_color_png(path: &Path, color: &ColorImage) -> Result<()> {
    let buf: ImageBuffer<Rgb<u8>, Vec<u8>> = ImageBuffer::from_fn(color.width as u32, color.height as u32, |u, v| {
        Rgb(color.get(u as usize, v as usize).map(to_u8))
    });
    buf.save(path)?;
    Ok(())
}

pub fn read_color_png(path: &Path) -> Result<ColorImage> {
    let img = image::open(path)?.into_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img.pixels().map(|p| p.0.map(|c| c as f64 / 255.0)).collect();
    Image::from_vec(w, h, data)
}

/// Normals mapped from [-1, 1] to [0, 255] per channel.
pub fn write_normal_png(path: &Path, normals: &Image<Vec3>) -> Result<()> {
    let buf: ImageBuffer<Rgb<u8>, Vec<u8>> = ImageBuffer::from_fn(normals.width as u32, normals.height as u32, |u, v| {
        let n = normals.get(u as usize, v as usize);
        Rgb([0, 1, 2].map(|i| to_u8((n[i] + 1.0) / 2.0)))
    });
    buf.save(path)?;
    Ok(())
}

/// Writes `color.png`, `depth.png` and `normal.png` into `dir`.
pub fn write_render(dir: &Path, out: &RenderOutput, depth_scale: f64) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_color_png(&dir.join("color.png"), &out.color)?;
    write_depth_png(&dir.join("depth.png"), &out.depth, depth_scale)?;
    write_normal_png(&dir.join("normal.png"), &out.normal)
}

/// One `timestamp tx ty tz qx qy qz qw` line.
pub fn format_pose(stamp: f64, p: &Pose) -> String {
    let t = p.translation;
    let q = p.quaternion();
    format!(
        "{stamp:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6}",
        t.x, t.y, t.z, q[0], q[1], q[2], q[3]
    )
}

pub fn write_trajectory(path: &Path, traj: &Trajectory) -> Result<()> {
    let mut s = String::from("# timestamp tx ty tz qx qy qz qw\n");
    for (stamp, p) in traj.iter() {
        s.push_str(&format_pose(stamp, p));
        s.push('\n');
    }
    fs::write(path, s)?;
    Ok(())
}

/// Parses `tx ty tz qx qy qz qw`.
pub fn parse_pose(fields: &[&str]) -> std::result::Result<Pose, String> {
    if fields.len() != 7 {
        return Err(format!("expected 7 pose values, found {}", fields.len()));
    }
    let mut v = [0.0f64; 7];
    for (x, f) in v.iter_mut().zip(fields) {
        *x = f.parse().map_err(|_| format!("not a number: {f:?}"))?;
    }
    let qn = (v[3] * v[3] + v[4] * v[4] + v[5] * v[5] + v[6] * v[6]).sqrt();
    if !(qn > 0.0 && v.iter().all(|x| x.is_finite())) {
        return Err("pose quaternion is degenerate".into());
    }
    Ok(Pose::from_quaternion(Vec3::new(v[0], v[1], v[2]), v[3], v[4], v[5], v[6]))
}

/// Reads a TUM trajectory; `#` lines and blank lines are skipped.
pub fn read_trajectory(path: &Path) -> Result<Trajectory> {
    let text = fs::read_to_string(path)?;
    let mut traj = Trajectory::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            msg,
        };
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 8 {
            return Err(err(format!("expected 8 fields, found {}", f.len())));
        }
        let stamp: f64 = f[0].parse().map_err(|_| err(format!("bad timestamp {:?}", f[0])))?;
        let pose = parse_pose(&f[1..]).map_err(err)?;
        traj.push(stamp, pose).map_err(|e| err(e.to_string()))?;
    }
    Ok(traj)
}

pub fn write_loss_trace(path: &Path, rows: &[LossTraceRow]) -> Result<()> {
    let mut s = String::from("iteration,total,photometric,depth,gan,disk_count\n");
    for r in rows {
        let p = &r.report;
        writeln!(s, "{},{},{},{},{},{}", r.iteration, p.total, p.photometric, p.depth, p.gan, r.disk_count)
            .expect("string write");
    }
    fs::write(path, s)?;
    Ok(())
}

pub fn write_metrics(path: &Path, m: &Metrics) -> Result<()> {
    let mut s = serde_json::to_string_pretty(m)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

pub fn read_metrics(path: &Path) -> Result<Metrics> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

pub fn write_intrinsics(path: &Path, k: &Intrinsics) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(k)? + "\n")?;
    Ok(())
}

pub fn read_intrinsics(path: &Path) -> Result<Intrinsics> {
    let k: Intrinsics = serde_json::from_str(&fs::read_to_string(path)?)?;
    k.validate()?;
    Ok(k)
}

/// Name of the file holding the reference surface of a synthetic sequence.
pub const REFERENCE_MESH: &str = "reference_mesh.ply";
pub const INTRINSICS_FILE: &str = "intrinsics.json";

/// Writes a synthetic sequence in TUM layout plus `intrinsics.json`, the
/// scene description and the reference mesh.
pub fn write_synthetic(dir: &Path, scene: &SyntheticScene) -> Result<()> {
    scene.validate()?;
    let k = scene.intrinsics()?;
    fs::create_dir_all(dir.join("rgb"))?;
    fs::create_dir_all(dir.join("depth"))?;
    let mut rgb = String::from("# timestamp filename\n");
    let mut depth = String::from("# timestamp filename\n");
    for i in 0..scene.frames {
        let f = scene.render_frame(i)?;
        let stamp = format!("{:.6}", f.timestamp);
        let name = format!("{stamp}.png");
        write_color_png(&dir.join("rgb").join(&name), &f.color)?;
        write_depth_png(&dir.join("depth").join(&name), &f.depth, k.depth_scale)?;
        writeln!(rgb, "{stamp} rgb/{name}").expect("string write");
        writeln!(depth, "{stamp} depth/{name}").expect("string write");
    }
    fs::write(dir.join("rgb.txt"), rgb)?;
    fs::write(dir.join("depth.txt"), depth)?;
    write_trajectory(&dir.join("groundtruth.txt"), &scene.trajectory())?;
    write_intrinsics(&dir.join(INTRINSICS_FILE), &k)?;
    fs::write(dir.join("scene.toml"), scene.to_toml())?;
    write_mesh_ply(&dir.join(REFERENCE_MESH), &scene.reference_mesh())
}
