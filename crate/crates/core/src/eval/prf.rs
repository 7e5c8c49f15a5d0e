use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::mesh::TriangleMesh;
use crate::error::{Error, Result};
use crate::geometry::Vec3;

pub const DEFAULT_SAMPLES: usize = 100_000;

/// Closest point to `p` on triangle `abc`.
pub fn closest_point_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Vec3 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return a + ab * (d1 / (d1 - d3));
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return a + ac * (d2 / (d2 - d6));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
    }
    let denom = 1.0 / (va + vb + vc);
    a + ab * (vb * denom) + ac * (vc * denom)
}

/// Uniform grid over triangles for bounded-radius distance queries.
pub struct TriangleGrid<'a> {
    mesh: &'a TriangleMesh,
    cell: f64,
    cells: HashMap<[i64; 3], Vec<u32>>,
}

impl<'a> TriangleGrid<'a> {
    /// Grid with cells of edge `cell`; queries are exact up to that radius.
    pub fn new(mesh: &'a TriangleMesh, cell: f64) -> Result<Self> {
        if !(cell > 0.0 && cell.is_finite()) {
            return Err(Error::invalid("grid cell size must be positive"));
        }
        mesh.validate()?;
        let key = |p: &Vec3| [0, 1, 2].map(|i| (p[i] / cell).floor() as i64);
        let mut cells: HashMap<[i64; 3], Vec<u32>> = HashMap::new();
        for t in 0..mesh.triangles.len() {
            let [a, b, c] = mesh.corners(t);
            let lo = key(&a.inf(&b).inf(&c));
            let hi = key(&a.sup(&b).sup(&c));
            for x in lo[0]..=hi[0] {
                for y in lo[1]..=hi[1] {
                    for z in lo[2]..=hi[2] {
                        cells.entry([x, y, z]).or_default().push(t as u32);
                    }
                }
            }
        }
        Ok(Self { mesh, cell, cells })
    }

    /// Distance from `p` to the mesh if it is at most the cell size.
    pub fn distance_within(&self, p: &Vec3) -> Option<f64> {
        let k = [0, 1, 2].map(|i| (p[i] / self.cell).floor() as i64);
        let mut best = f64::INFINITY;
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    let Some(list) = self.cells.get(&[k[0] + dx, k[1] + dy, k[2] + dz]) else {
                        continue;
                    };
                    for &t in list {
                        let [a, b, c] = self.mesh.corners(t as usize);
                        best = best.min((closest_point_on_triangle(p, &a, &b, &c) - p).norm());
                    }
                }
            }
        }
        (best <= self.cell).then_some(best)
    }
}

/// Points drawn uniformly by area from the mesh surface.
pub fn sample_surface(mesh: &TriangleMesh, n: usize, seed: u64) -> Result<Vec<Vec3>> {
    let mut cdf = Vec::with_capacity(mesh.triangles.len());
    let mut acc = 0.0;
    for t in 0..mesh.triangles.len() {
        acc += mesh.triangle_area(t);
        cdf.push(acc);
    }
    if !(acc > 0.0) {
        return Err(Error::invalid("cannot sample a mesh with zero area"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|_| {
            let r = rng.random::<f64>() * acc;
            let t = cdf.partition_point(|&c| c <= r).min(cdf.len() - 1);
            let [a, b, c] = mesh.corners(t);
            let (r1, r2): (f64, f64) = (rng.random(), rng.random());
            let s = r1.sqrt();
            a * (1.0 - s) + b * (s * (1.0 - r2)) + c * (s * r2)
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeshPrf {
    pub precision_pct: f64,
    pub recall_pct: f64,
    pub f1_pct: f64,
}

fn within_fraction(points: &[Vec3], grid: &TriangleGrid, threshold: f64) -> f64 {
    let hits = points
        .iter()
        .filter(|p| grid.distance_within(p).is_some_and(|d| d <= threshold))
        .count();
    hits as f64 / points.len() as f64
}

/// Precision, recall and F1 (percent) of `predicted` against `reference`
/// at a distance threshold, from `samples` area-uniform points per mesh.
pub fn mesh_prf(
    predicted: &TriangleMesh,
    reference: &TriangleMesh,
    threshold: f64,
    samples: usize,
    seed: u64,
) -> Result<MeshPrf> {
    if predicted.is_empty() || reference.is_empty() {
        return Err(Error::invalid("mesh metrics need two nonempty meshes"));
    }
    if !(threshold > 0.0) || samples == 0 {
        return Err(Error::invalid("threshold and sample count must be positive"));
    }
    let pred_pts = sample_surface(predicted, samples, seed)?;
    let ref_pts = sample_surface(reference, samples, seed.wrapping_add(1))?;
    let precision = within_fraction(&pred_pts, &TriangleGrid::new(reference, threshold)?, threshold);
    let recall = within_fraction(&ref_pts, &TriangleGrid::new(predicted, threshold)?, threshold);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(MeshPrf {
        precision_pct: 100.0 * precision,
        recall_pct: 100.0 * recall,
        f1_pct: 100.0 * f1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(x0: f64, x1: f64, z: f64) -> TriangleMesh {
        let v = vec![
            Vec3::new(x0, 0.0, z),
            Vec3::new(x1, 0.0, z),
            Vec3::new(x1, 1.0, z),
            Vec3::new(x0, 1.0, z),
        ];
        TriangleMesh::new(v, vec![[0, 1, 2], [0, 2, 3]]).unwrap()
    }

    fn brute_distance(p: &Vec3, m: &TriangleMesh) -> f64 {
        (0..m.triangles.len())
            .map(|t| {
                let [a, b, c] = m.corners(t);
                (closest_point_on_triangle(p, &a, &b, &c) - p).norm()
            })
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn closest_point_regions() {
        let (a, b, c) = (Vec3::zeros(), Vec3::x(), Vec3::y());
        let q = closest_point_on_triangle(&Vec3::new(0.2, 0.3, 1.0), &a, &b, &c);
        assert!((q - Vec3::new(0.2, 0.3, 0.0)).norm() < 1e-15);
        assert_eq!(closest_point_on_triangle(&Vec3::new(-1.0, -1.0, 0.0), &a, &b, &c), a);
        let e = closest_point_on_triangle(&Vec3::new(1.0, 1.0, 0.0), &a, &b, &c);
        assert!((e - Vec3::new(0.5, 0.5, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn grid_matches_brute_force_within_radius() {
        let mesh = TriangleMesh::box_interior(Vec3::new(-0.3, -0.2, -0.25), Vec3::new(0.3, 0.2, 0.25));
        let grid = TriangleGrid::new(&mesh, 0.05).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..2000 {
            let p = Vec3::new(r.random_range(-0.4..0.4), r.random_range(-0.3..0.3), r.random_range(-0.3..0.3));
            let d = brute_distance(&p, &mesh);
            match grid.distance_within(&p) {
                Some(g) => assert!((g - d).abs() < 1e-12),
                None => assert!(d > 0.05 - 1e-12),
            }
        }
    }

    #[test]
    fn samples_lie_on_the_mesh() {
        let mesh = TriangleMesh::box_interior(Vec3::zeros(), Vec3::new(1.0, 2.0, 3.0));
        for p in sample_surface(&mesh, 500, 9).unwrap() {
            assert!(brute_distance(&p, &mesh) < 1e-12);
        }
    }

    #[test]
    fn identical_meshes_score_full_marks() {
        let mesh = TriangleMesh::box_interior(Vec3::new(-1.0, -0.6, -0.8), Vec3::new(1.0, 0.6, 0.8));
        let m = mesh_prf(&mesh, &mesh, 0.01, DEFAULT_SAMPLES, 1).unwrap();
        assert!(m.precision_pct > 99.5 && m.recall_pct > 99.5 && m.f1_pct > 99.5, "{m:?}");
    }

    #[test]
    fn shifted_plane_scores_zero() {
        let m = mesh_prf(&square(0.0, 1.0, 0.05), &square(0.0, 1.0, 0.0), 0.01, 20_000, 2).unwrap();
        assert_eq!((m.precision_pct, m.recall_pct, m.f1_pct), (0.0, 0.0, 0.0));
    }

    #[test]
    fn half_mesh_has_half_recall() {
        let m = mesh_prf(&square(0.0, 0.5, 0.0), &square(0.0, 1.0, 0.0), 0.01, DEFAULT_SAMPLES, 4).unwrap();
        assert!(m.precision_pct > 99.9, "{m:?}");
        // Reference points within 1 cm of the cut also count as recalled.
        assert!((m.recall_pct - 50.0).abs() < 2.0, "{m:?}");
        assert!((m.f1_pct - 200.0 / 3.0).abs() < 2.0, "{m:?}");
    }

    #[test]
    fn rejects_empty_meshes() {
        assert!(mesh_prf(&TriangleMesh::default(), &square(0.0, 1.0, 0.0), 0.01, 10, 0).is_err());
    }
}
