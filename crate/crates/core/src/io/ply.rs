//! Binary little-endian PLY for disk maps and triangle meshes.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion};

use crate::error::{Error, Result};
use crate::eval::TriangleMesh;
use crate::geometry::Vec3;
use crate::map::{GaussianDisk, GaussianMap};

const DISK_PROPERTIES: [&str; 17] = [
    "x", "y", "z", "nx", "ny", "nz", "s1", "s2", "red", "green", "blue", "opacity", "qx", "qy", "qz", "qw",
    "frame",
];

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Writes one vertex per disk; every field is stored as a double except
/// the creation frame.
pub fn write_map_ply(path: &Path, disks: &[GaussianDisk]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "ply\nformat binary_little_endian 1.0")?;
    writeln!(w, "element vertex {}", disks.len())?;
    for name in &DISK_PROPERTIES[..16] {
        writeln!(w, "property double {name}")?;
    }
    writeln!(w, "property uint frame\nend_header")?;
    for d in disks {
        let n = d.normal();
        let q = d.rotation.quaternion();
        let vals = [
            d.center.x, d.center.y, d.center.z, n.x, n.y, n.z, d.scales[0], d.scales[1], d.color[0], d.color[1],
            d.color[2], d.opacity, q.i, q.j, q.k, q.w,
        ];
        for v in vals {
            w.write_all(&v.to_le_bytes())?;
        }
        let frame = u32::try_from(d.creation_frame).map_err(|_| Error::invalid("creation frame exceeds u32"))?;
        w.write_all(&frame.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

struct Header {
    elements: Vec<(String, usize, Vec<String>)>,
}

fn read_header(path: &Path, r: &mut impl BufRead) -> Result<Header> {
    let mut line = String::new();
    let mut elements: Vec<(String, usize, Vec<String>)> = Vec::new();
    let mut n = 0;
    loop {
        line.clear();
        if r.read_line(&mut line)? == 0 {
            return Err(parse_err(path, n + 1, "missing end_header"));
        }
        n += 1;
        let t: Vec<&str> = line.split_whitespace().collect();
        match t.as_slice() {
            ["ply"] if n == 1 => {}
            _ if n == 1 => return Err(parse_err(path, 1, "not a PLY file")),
            ["format", "binary_little_endian", "1.0"] => {}
            ["format", ..] => return Err(parse_err(path, n, "only binary_little_endian 1.0 is supported")),
            ["comment", ..] | [] => {}
            ["element", name, count] => {
                let count = count.parse().map_err(|_| parse_err(path, n, "bad element count"))?;
                elements.push((name.to_string(), count, Vec::new()));
            }
            ["property", ty, name] => {
                let el = elements.last_mut().ok_or_else(|| parse_err(path, n, "property before element"))?;
                el.2.push(format!("{ty} {name}"));
            }
            ["property", "list", a, b, name] => {
                let el = elements.last_mut().ok_or_else(|| parse_err(path, n, "property before element"))?;
                el.2.push(format!("list {a} {b} {name}"));
            }
            ["end_header"] => return Ok(Header { elements }),
            _ => return Err(parse_err(path, n, format!("unexpected header line {:?}", line.trim()))),
        }
    }
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Reads a map written by [`write_map_ply`]. The tangent frame comes from
/// the stored quaternion; the normal columns are redundant and ignored.
pub fn read_map_ply(path: &Path) -> Result<GaussianMap> {
    let mut r = BufReader::new(File::open(path)?);
    let header = read_header(path, &mut r)?;
    let expected: Vec<String> = DISK_PROPERTIES
        .iter()
        .map(|p| if *p == "frame" { "uint frame".to_string() } else { format!("double {p}") })
        .collect();
    let [(name, count, props)] = header.elements.as_slice() else {
        return Err(parse_err(path, 0, "expected a single vertex element"));
    };
    if name != "vertex" || *props != expected {
        return Err(parse_err(path, 0, "vertex properties do not describe a disk map"));
    }
    let mut disks = Vec::with_capacity(*count);
    for _ in 0..*count {
        let mut v = [0.0; 16];
        for x in v.iter_mut() {
            *x = read_f64(&mut r)?;
        }
        let frame = read_u32(&mut r)? as usize;
        let q = UnitQuaternion::new_unchecked(Quaternion::new(v[15], v[12], v[13], v[14]));
        if ((q.norm() - 1.0).abs()) > 1e-9 {
            return Err(Error::invalid("stored disk quaternion is not unit length"));
        }
        let disk = GaussianDisk {
            center: Vec3::new(v[0], v[1], v[2]),
            rotation: q,
            scales: [v[6], v[7]],
            color: [v[8], v[9], v[10]],
            opacity: v[11],
            creation_frame: frame,
        };
        disk.validate()?;
        disks.push(disk);
    }
    Ok(GaussianMap::from_disks(disks))
}

pub fn write_mesh_ply(path: &Path, mesh: &TriangleMesh) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "ply\nformat binary_little_endian 1.0")?;
    writeln!(w, "element vertex {}", mesh.vertices.len())?;
    writeln!(w, "property double x\nproperty double y\nproperty double z")?;
    writeln!(w, "element face {}", mesh.triangles.len())?;
    writeln!(w, "property list uchar uint vertex_indices\nend_header")?;
    for v in &mesh.vertices {
        for c in v.iter() {
            w.write_all(&c.to_le_bytes())?;
        }
    }
    for t in &mesh.triangles {
        w.write_all(&[3u8])?;
        for i in t {
            w.write_all(&i.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_mesh_ply(path: &Path) -> Result<TriangleMesh> {
    let mut r = BufReader::new(File::open(path)?);
    let header = read_header(path, &mut r)?;
    let ok = match header.elements.as_slice() {
        [(v, _, vp), (f, _, fp)] => {
            v == "vertex"
                && *vp == ["double x", "double y", "double z"]
                && f == "face"
                && *fp == ["list uchar uint vertex_indices"]
        }
        _ => false,
    };
    if !ok {
        return Err(parse_err(path, 0, "expected double vertices and uint triangle lists"));
    }
    let (nv, nf) = (header.elements[0].1, header.elements[1].1);
    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        vertices.push(Vec3::new(read_f64(&mut r)?, read_f64(&mut r)?, read_f64(&mut r)?));
    }
    let mut triangles = Vec::with_capacity(nf);
    for _ in 0..nf {
        let mut n = [0u8];
        r.read_exact(&mut n)?;
        if n[0] != 3 {
            return Err(Error::invalid("only triangle faces are supported"));
        }
        triangles.push([read_u32(&mut r)?, read_u32(&mut r)?, read_u32(&mut r)?]);
    }
    TriangleMesh::new(vertices, triangles)
}
