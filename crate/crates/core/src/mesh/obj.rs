//! Wavefront OBJ reading and writing.
//!
//! Supports `v x y z [r g b]` (the common vertex-color extension), `vt`,
//! and `f` with `v`, `v/vt`, `v//vn` or `v/vt/vn` corners. Polygons are
//! fan-triangulated. Normals are ignored on read and not written.

use std::fmt::Write as _;
use std::path::Path;

use super::{TexCoords, TriangleMesh};
use crate::{Error, Result, Vec3};

pub fn parse_obj(text: &str) -> Result<TriangleMesh> {
    let mut positions = Vec::new();
    let mut colors: Vec<[f64; 3]> = Vec::new();
    let mut uvs = Vec::new();
    let mut faces = Vec::new();
    let mut face_uvs = Vec::new();
    let mut all_faces_have_uv = true;

    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        let mut it = line.split_whitespace();
        let Some(tag) = it.next() else { continue };
        let bad = |msg: &str| Error::bad_input(format!("obj line {}", lineno + 1), msg.to_string());
        let floats = |it: std::str::SplitWhitespace| -> Result<Vec<f64>> {
            it.map(|t| t.parse::<f64>().map_err(|_| bad("expected a number")))
                .collect()
        };
        match tag {
            "v" => {
                let v = floats(it)?;
                if v.len() < 3 {
                    return Err(bad("vertex needs 3 coordinates"));
                }
                positions.push(Vec3::new(v[0], v[1], v[2]));
                if v.len() >= 6 {
                    colors.push([v[3], v[4], v[5]]);
                }
            }
            "vt" => {
                let v = floats(it)?;
                if v.len() < 2 {
                    return Err(bad("texture coordinate needs 2 values"));
                }
                uvs.push([v[0], v[1]]);
            }
            "f" => {
                let mut corners = Vec::new();
                for tok in it {
                    let mut parts = tok.split('/');
                    let resolve = |s: &str, len: usize| -> Result<u32> {
                        let i: i64 = s.parse().map_err(|_| bad("bad face index"))?;
                        let idx = if i < 0 { len as i64 + i } else { i - 1 };
                        if idx < 0 || idx >= len as i64 {
                            return Err(bad("face index out of range"));
                        }
                        Ok(idx as u32)
                    };
                    let v = resolve(parts.next().unwrap_or(""), positions.len())?;
                    let vt = match parts.next() {
                        Some(s) if !s.is_empty() => Some(resolve(s, uvs.len())?),
                        _ => None,
                    };
                    corners.push((v, vt));
                }
                if corners.len() < 3 {
                    return Err(bad("face needs at least 3 corners"));
                }
                for k in 1..corners.len() - 1 {
                    let tri = [corners[0], corners[k], corners[k + 1]];
                    faces.push(tri.map(|c| c.0));
                    match (tri[0].1, tri[1].1, tri[2].1) {
                        (Some(a), Some(b), Some(c)) => face_uvs.push([a, b, c]),
                        _ => all_faces_have_uv = false,
                    }
                }
            }
            _ => {}
        }
    }
    let mut mesh = TriangleMesh::new(positions, faces);
    if !colors.is_empty() {
        if colors.len() != mesh.positions.len() {
            return Err(Error::bad_input(
                "obj vertex colors",
                "either every vertex or none must carry a color",
            ));
        }
        mesh.vertex_colors = Some(colors);
    }
    if all_faces_have_uv && !face_uvs.is_empty() {
        mesh.texcoords = Some(TexCoords {
            uvs,
            faces: face_uvs,
        });
    }
    mesh.check_indices()?;
    Ok(mesh)
}

pub fn format_obj(mesh: &TriangleMesh, material_lib: Option<&str>) -> String {
    let mut s = String::with_capacity(mesh.positions.len() * 40 + mesh.faces.len() * 20);
    if let Some(lib) = material_lib {
        let _ = writeln!(s, "mtllib {lib}");
        let _ = writeln!(s, "usemtl baked");
    }
    for (i, p) in mesh.positions.iter().enumerate() {
        match &mesh.vertex_colors {
            Some(c) => {
                let c = c[i];
                let _ = writeln!(s, "v {} {} {} {} {} {}", p.x, p.y, p.z, c[0], c[1], c[2]);
            }
            None => {
                let _ = writeln!(s, "v {} {} {}", p.x, p.y, p.z);
            }
        }
    }
    match &mesh.texcoords {
        Some(tc) => {
            for uv in &tc.uvs {
                let _ = writeln!(s, "vt {} {}", uv[0], uv[1]);
            }
            for (f, t) in mesh.faces.iter().zip(&tc.faces) {
                let _ = writeln!(
                    s,
                    "f {}/{} {}/{} {}/{}",
                    f[0] + 1,
                    t[0] + 1,
                    f[1] + 1,
                    t[1] + 1,
                    f[2] + 1,
                    t[2] + 1
                );
            }
        }
        None => {
            for f in &mesh.faces {
                let _ = writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
            }
        }
    }
    s
}

pub fn read_obj(path: impl AsRef<Path>) -> Result<TriangleMesh> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_obj(&text)
}

pub fn write_obj(path: impl AsRef<Path>, mesh: &TriangleMesh) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_obj(mesh, None)).map_err(|e| Error::io(path, e))
}

/// Writes the OBJ plus a one-material MTL that references `texture_file`.
pub fn write_textured_obj(path: impl AsRef<Path>, mesh: &TriangleMesh, texture_file: &str) -> Result<()> {
    let path = path.as_ref();
    let mtl_path = path.with_extension("mtl");
    let mtl_name = mtl_path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "mesh.mtl".into());
    let mtl = format!("newmtl baked\nKd 1 1 1\nmap_Kd {texture_file}\n");
    std::fs::write(&mtl_path, mtl).map_err(|e| Error::io(&mtl_path, e))?;
    std::fs::write(path, format_obj(mesh, Some(&mtl_name))).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::icosphere;

    #[test]
    fn parses_polygons_colors_and_uvs() {
        let text = "\
# quad
v 0 0 0 1 0 0
v 1 0 0 0 1 0
v 1 1 0 0 0 1
v 0 1 0 1 1 1
vt 0 0
vt 1 0
vt 1 1
vt 0 1
vn 0 0 1
f 1/1/1 2/2/1 3/3/1 4/4/1
";
        let m = parse_obj(text).unwrap();
        assert_eq!(m.num_faces(), 2);
        assert_eq!(m.faces, vec![[0, 1, 2], [0, 2, 3]]);
        assert_eq!(m.vertex_colors.as_ref().unwrap()[1], [0.0, 1.0, 0.0]);
        assert_eq!(m.texcoords.as_ref().unwrap().faces[1], [0, 2, 3]);
    }

    #[test]
    fn negative_indices() {
        let m = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf -3 -2 -1\n").unwrap();
        assert_eq!(m.faces, vec![[0, 1, 2]]);
    }

    #[test]
    fn bad_index_is_bad_input() {
        let e = parse_obj("v 0 0 0\nf 1 2 3\n").unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn round_trip_is_exact() {
        let mut m = icosphere(Vec3::new(0.1, 0.2, 0.3), 0.7, 2).unwrap();
        m.vertex_colors = Some(m.positions.iter().map(|p| [p.x.abs(), p.y.abs(), 0.25]).collect());
        let back = parse_obj(&format_obj(&m, None)).unwrap();
        assert_eq!(back, m);
    }
}
