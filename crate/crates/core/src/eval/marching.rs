//! Marching cubes over a TSDF volume.
//!
//! The per-configuration triangle table is derived once from the cube faces:
//! on every face the zero crossings are joined into segments that cut off
//! runs of negative corners (diagonal ambiguities always separate the
//! negative corners), the segments are chained into closed loops and each
//! loop is fanned into triangles. Neighboring cells see the same sign
//! pattern on a shared face and therefore the same segments, so the
//! extracted surface has no cracks.

use std::collections::HashMap;
use std::sync::OnceLock;

use super::mesh::TriangleMesh;
use super::tsdf::TsdfVolume;
use crate::geometry::Vec3;

const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

const EDGES: [[usize; 2]; 12] = [
    [0, 1],
    [1, 2],
    [3, 2],
    [0, 3],
    [4, 5],
    [5, 6],
    [7, 6],
    [4, 7],
    [0, 4],
    [1, 5],
    [2, 6],
    [3, 7],
];

/// Corner cycles of the six faces, counter-clockwise seen from outside.
const FACES: [[usize; 4]; 6] = [
    [0, 4, 7, 3],
    [1, 2, 6, 5],
    [0, 1, 5, 4],
    [3, 7, 6, 2],
    [0, 3, 2, 1],
    [4, 5, 6, 7],
];

fn edge_between(a: usize, b: usize) -> usize {
    EDGES
        .iter()
        .position(|e| (e[0] == a && e[1] == b) || (e[0] == b && e[1] == a))
        .expect("face corners share a cube edge")
}

/// Triangles (as edge triples) for a configuration; bit `c` set means
/// corner `c` is negative.
fn case_triangles(case: usize) -> Vec<[u8; 3]> {
    let inside = |c: usize| case >> c & 1 == 1;
    let mut next = [usize::MAX; 12];
    for face in FACES {
        for i in 0..4 {
            let (a, b) = (face[i], face[(i + 1) % 4]);
            if !(inside(a) && !inside(b)) {
                continue;
            }
            // Walk back to the first negative corner of this run.
            let mut s = i;
            while inside(face[(s + 3) % 4]) {
                s = (s + 3) % 4;
            }
            let entry = edge_between(face[(s + 3) % 4], face[s]);
            next[edge_between(a, b)] = entry;
        }
    }
    let mut used = [false; 12];
    let mut tris = Vec::new();
    for start in 0..12 {
        if next[start] == usize::MAX || used[start] {
            continue;
        }
        let mut poly = Vec::new();
        let mut e = start;
        while !used[e] {
            used[e] = true;
            poly.push(e as u8);
            e = next[e];
        }
        // Reversed so normals point toward the positive side.
        for i in 1..poly.len() - 1 {
            tris.push([poly[0], poly[i + 1], poly[i]]);
        }
    }
    tris
}

fn table() -> &'static [Vec<[u8; 3]>] {
    static TABLE: OnceLock<Vec<Vec<[u8; 3]>>> = OnceLock::new();
    TABLE.get_or_init(|| (0..256).map(case_triangles).collect())
}

/// Extracts the zero level set. Only cells whose eight samples all carry
/// positive weight produce triangles; zero-area triangles are dropped.
/// Triangle normals point toward positive values (free space).
pub fn extract_mesh(vol: &TsdfVolume) -> TriangleMesh {
    let [nx, ny, nz] = vol.dims;
    let table = table();
    let mut verts: Vec<Vec3> = Vec::new();
    let mut tris: Vec<[u32; 3]> = Vec::new();
    let mut edge_vertex: HashMap<(usize, usize), u32> = HashMap::new();
    let min_area2 = (1e-12 * vol.voxel_size * vol.voxel_size).powi(2);
    for k in 0..nz - 1 {
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                let idx = CORNERS.map(|c| vol.index(i + c[0], j + c[1], k + c[2]));
                if idx.iter().any(|&n| vol.weight[n] <= 0.0) {
                    continue;
                }
                let vals = idx.map(|n| vol.tsdf[n]);
                let case = (0..8).fold(0, |m, c| m | (usize::from(vals[c] < 0.0) << c));
                if case == 0 || case == 255 {
                    continue;
                }
                let mut vertex = |e: usize| -> u32 {
                    let [a, b] = EDGES[e];
                    let key = (idx[a].min(idx[b]), idx[a].max(idx[b]));
                    *edge_vertex.entry(key).or_insert_with(|| {
                        let pa = vol.position(i + CORNERS[a][0], j + CORNERS[a][1], k + CORNERS[a][2]);
                        let pb = vol.position(i + CORNERS[b][0], j + CORNERS[b][1], k + CORNERS[b][2]);
                        let t = vals[a] / (vals[a] - vals[b]);
                        verts.push(pa + (pb - pa) * t);
                        (verts.len() - 1) as u32
                    })
                };
                let cell: Vec<[u32; 3]> = table[case].iter().map(|tri| tri.map(|e| vertex(e as usize))).collect();
                for t in cell {
                    let [a, b, c] = t.map(|v| verts[v as usize]);
                    if (b - a).cross(&(c - a)).norm_squared() > min_area2 {
                        tris.push(t);
                    }
                }
            }
        }
    }
    TriangleMesh {
        vertices: verts,
        triangles: tris,
    }
}
