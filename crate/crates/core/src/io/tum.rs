use std::fs;
use std::path::{Path, PathBuf};

use super::{read_color_png, read_depth_png, read_intrinsics, read_mesh_ply, read_trajectory, INTRINSICS_FILE, REFERENCE_MESH};
use crate::error::{Error, Result};
use crate::eval::{TriangleMesh, ASSOCIATION_TOLERANCE};
use crate::geometry::{Frame, Intrinsics};
use crate::pipeline::Dataset;
use crate::trajectory::Trajectory;

/// Camera used when neither an override nor `intrinsics.json` is given.
pub const DEFAULT_INTRINSICS: Intrinsics = Intrinsics {
    fx: 525.0,
    fy: 525.0,
    cx: 319.5,
    cy: 239.5,
    width: 640,
    height: 480,
    depth_scale: 5000.0,
};

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetDescriptor {
    pub root: PathBuf,
    /// Largest rgb/depth timestamp gap accepted as a pair, seconds.
    pub tolerance: f64,
    pub intrinsics: Option<Intrinsics>,
}

impl DatasetDescriptor {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            tolerance: ASSOCIATION_TOLERANCE,
            intrinsics: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub stamp: f64,
    pub file: String,
}

/// Parses an `rgb.txt` / `depth.txt` index.
pub fn read_index(path: &Path) -> Result<Vec<IndexEntry>> {
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::invalid(format!("missing index file {}", path.display())),
        _ => e.into(),
    })?;
    let mut out = Vec::new();
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
        let [stamp, file] = f.as_slice() else {
            return Err(err(format!("expected `timestamp filename`, found {} fields", f.len())));
        };
        let stamp: f64 = stamp.parse().map_err(|_| err(format!("bad timestamp {stamp:?}")))?;
        if !stamp.is_finite() {
            return Err(err("timestamp is not finite".into()));
        }
        out.push(IndexEntry {
            stamp,
            file: file.to_string(),
        });
    }
    Ok(out)
}

/// For every entry of `a`, the index of the nearest entry of `b` when it is
/// within `tolerance`; ties go to the earlier entry of `b`.
pub fn associate_nearest(a: &[f64], b: &[f64], tolerance: f64) -> Vec<(usize, usize)> {
    let mut sorted: Vec<(f64, usize)> = b.iter().copied().zip(0..).collect();
    sorted.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
    // First entry of the run of equal stamps at `s`, which has the lowest index.
    let first_at = |s: f64| sorted[sorted.partition_point(|x| x.0 < s)];
    let mut out = Vec::new();
    for (i, &t) in a.iter().enumerate() {
        let p = sorted.partition_point(|x| x.0 < t);
        let above = sorted.get(p).copied();
        let below = p.checked_sub(1).map(|q| first_at(sorted[q].0));
        let best = match (below, above) {
            (Some(l), Some(h)) => {
                let (dl, dh) = (t - l.0, h.0 - t);
                if dl < dh || (dl == dh && l.1 < h.1) { l } else { h }
            }
            (Some(x), None) | (None, Some(x)) => x,
            (None, None) => continue,
        };
        if (best.0 - t).abs() <= tolerance {
            out.push((i, best.1));
        }
    }
    out
}

/// A TUM-layout RGB-D sequence. Frames are loaded on demand.
#[derive(Debug, Clone)]
pub struct TumDataset {
    pub root: PathBuf,
    pub intrinsics: Intrinsics,
    /// Associated (timestamp, rgb file, depth file) triples.
    pub pairs: Vec<(f64, PathBuf, PathBuf)>,
    pub skipped_rgb: usize,
    pub skipped_depth: usize,
    gt: Option<Trajectory>,
    mesh: Option<TriangleMesh>,
}

impl TumDataset {
    pub fn open(desc: &DatasetDescriptor) -> Result<Self> {
        if !desc.root.is_dir() {
            return Err(Error::invalid(format!("dataset root {} is not a directory", desc.root.display())));
        }
        if !(desc.tolerance > 0.0) {
            return Err(Error::invalid("association tolerance must be positive"));
        }
        let rgb = read_index(&desc.root.join("rgb.txt"))?;
        let depth = read_index(&desc.root.join("depth.txt"))?;
        let rs: Vec<f64> = rgb.iter().map(|e| e.stamp).collect();
        let ds: Vec<f64> = depth.iter().map(|e| e.stamp).collect();
        let matches = associate_nearest(&rs, &ds, desc.tolerance);
        let mut used_depth = vec![false; depth.len()];
        let mut pairs: Vec<(f64, PathBuf, PathBuf)> = Vec::with_capacity(matches.len());
        for &(i, j) in &matches {
            if pairs.last().is_some_and(|p| p.0 >= rgb[i].stamp) {
                return Err(Error::invalid("rgb timestamps must increase"));
            }
            used_depth[j] = true;
            pairs.push((rgb[i].stamp, desc.root.join(&rgb[i].file), desc.root.join(&depth[j].file)));
        }
        let skipped_rgb = rgb.len() - matches.len();
        let skipped_depth = used_depth.iter().filter(|u| !**u).count();
        if skipped_rgb + skipped_depth > 0 {
            log::info!("association skipped {skipped_rgb} rgb and {skipped_depth} depth entries");
        }
        let intrinsics = match desc.intrinsics {
            Some(k) => k,
            None if desc.root.join(INTRINSICS_FILE).exists() => read_intrinsics(&desc.root.join(INTRINSICS_FILE))?,
            None => DEFAULT_INTRINSICS,
        };
        intrinsics.validate()?;
        let gt_path = desc.root.join("groundtruth.txt");
        let gt = if gt_path.exists() { Some(read_trajectory(&gt_path)?) } else { None };
        let mesh_path = desc.root.join(REFERENCE_MESH);
        let mesh = if mesh_path.exists() { Some(read_mesh_ply(&mesh_path)?) } else { None };
        Ok(Self {
            root: desc.root.clone(),
            intrinsics,
            pairs,
            skipped_rgb,
            skipped_depth,
            gt,
            mesh,
        })
    }
}

impl Dataset for TumDataset {
    fn len(&self) -> usize {
        self.pairs.len()
    }

    fn frame(&self, index: usize) -> Result<Frame> {
        let (stamp, rgb, depth) = self
            .pairs
            .get(index)
            .ok_or_else(|| Error::invalid(format!("frame {index} out of range")))?;
        let color = read_color_png(rgb)?;
        let depth = read_depth_png(depth, self.intrinsics.depth_scale)?;
        Frame::new(color, depth, self.intrinsics, index, *stamp)
    }

    fn ground_truth(&self) -> Option<Trajectory> {
        self.gt.clone()
    }

    fn reference_mesh(&self) -> Option<TriangleMesh> {
        self.mesh.clone()
    }
}
