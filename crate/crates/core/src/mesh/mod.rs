//! Indexed triangle meshes.
//!
//! [`TriangleMesh`] is a plain value type: positions, counter-clockwise faces
//! and optional per-vertex colors, frozen markers and texture coordinates.
//! Local topology edits go through [`EditableMesh`], which keeps incidence
//! lists up to date so that a remeshing pass does not rebuild adjacency
//! after every operation.

mod editable;
pub mod obj;
mod validate;

use std::collections::BTreeMap;

pub use editable::{EditableMesh, Rejection};
pub use validate::{validate, validate_with_epsilon, ComponentReport, ValidationReport};

use crate::{Error, Result, Vec3};

/// Face areas below this are treated as degenerate.
pub const DEFAULT_AREA_EPSILON: f64 = 1e-12;

/// Marks a missing neighbor in [`face_neighbors`].
pub const NO_FACE: u32 = u32::MAX;
/// Marks an edge shared by more than two faces in [`face_neighbors`].
pub const NON_MANIFOLD: u32 = u32::MAX - 1;

/// Per-corner texture coordinates. `faces[f][k]` indexes into `uvs`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TexCoords {
    pub uvs: Vec<[f64; 2]>,
    pub faces: Vec<[u32; 3]>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TriangleMesh {
    pub positions: Vec<Vec3>,
    /// Counter-clockwise vertex triples; the winding defines the outward normal.
    pub faces: Vec<[u32; 3]>,
    /// RGB in [0, 1].
    pub vertex_colors: Option<Vec<[f64; 3]>>,
    /// Frozen vertices are excluded from optimization and destructive edits.
    pub frozen: Option<Vec<bool>>,
    pub texcoords: Option<TexCoords>,
}

impl TriangleMesh {
    pub fn new(positions: Vec<Vec3>, faces: Vec<[u32; 3]>) -> Self {
        TriangleMesh {
            positions,
            faces,
            ..Default::default()
        }
    }

    pub fn num_vertices(&self) -> usize {
        self.positions.len()
    }

    pub fn num_faces(&self) -> usize {
        self.faces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn is_frozen(&self, v: usize) -> bool {
        self.frozen.as_ref().is_some_and(|f| f[v])
    }

    pub fn frozen_count(&self) -> usize {
        self.frozen
            .as_ref()
            .map_or(0, |f| f.iter().filter(|&&x| x).count())
    }

    /// Checks the index-range and repeated-index invariants.
    pub fn check_indices(&self) -> Result<()> {
        let n = self.positions.len();
        for (i, f) in self.faces.iter().enumerate() {
            if f.iter().any(|&v| v as usize >= n) {
                return Err(Error::Structural(format!(
                    "face {i} {f:?} references a vertex >= {n}"
                )));
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::Structural(format!("face {i} {f:?} repeats a vertex")));
            }
        }
        if let Some(c) = &self.vertex_colors {
            if c.len() != n {
                return Err(Error::Structural("vertex color count mismatch".into()));
            }
        }
        if let Some(fr) = &self.frozen {
            if fr.len() != n {
                return Err(Error::Structural("frozen flag count mismatch".into()));
            }
        }
        Ok(())
    }

    /// Unnormalized face normal: twice the area times the unit normal.
    pub fn face_cross(&self, f: usize) -> Vec3 {
        let [a, b, c] = self.faces[f].map(|i| self.positions[i as usize]);
        (b - a).cross(&(c - a))
    }

    pub fn face_area(&self, f: usize) -> f64 {
        0.5 * self.face_cross(f).norm()
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    /// Area-weighted vertex normals; zero for isolated vertices.
    pub fn vertex_normals(&self) -> Vec<Vec3> {
        let mut acc = vec![Vec3::zeros(); self.positions.len()];
        for (fi, f) in self.faces.iter().enumerate() {
            let c = self.face_cross(fi);
            for &v in f {
                acc[v as usize] += c;
            }
        }
        for n in &mut acc {
            let len = n.norm();
            if len > 0.0 {
                *n /= len;
            }
        }
        acc
    }

    /// Axis-aligned bounds over all vertices, `None` when there are none.
    pub fn bounds(&self) -> Option<(Vec3, Vec3)> {
        let first = *self.positions.first()?;
        Some(self.positions.iter().fold((first, first), |(lo, hi), p| {
            (lo.inf(p), hi.sup(p))
        }))
    }

    pub fn bbox_diagonal(&self) -> f64 {
        self.bounds().map_or(0.0, |(lo, hi)| (hi - lo).norm())
    }

    /// Mean length over unique edges.
    pub fn mean_edge_length(&self) -> f64 {
        let edges = unique_edges(&self.faces);
        if edges.is_empty() {
            return 0.0;
        }
        edges
            .iter()
            .map(|&(a, b)| (self.positions[a as usize] - self.positions[b as usize]).norm())
            .sum::<f64>()
            / edges.len() as f64
    }

    /// Appends `other` as a separate set of vertices and faces. Optional
    /// attributes present on either side are filled with defaults on the other
    /// (white colors, unfrozen). Texture coordinates are dropped unless both
    /// sides carry them.
    pub fn append(&mut self, other: &TriangleMesh) {
        let offset = self.positions.len() as u32;
        let n_self = self.positions.len();
        if self.vertex_colors.is_some() || other.vertex_colors.is_some() {
            let mut c = self
                .vertex_colors
                .take()
                .unwrap_or_else(|| vec![[1.0; 3]; n_self]);
            match &other.vertex_colors {
                Some(oc) => c.extend_from_slice(oc),
                None => c.extend(std::iter::repeat([1.0; 3]).take(other.positions.len())),
            }
            self.vertex_colors = Some(c);
        }
        if self.frozen.is_some() || other.frozen.is_some() {
            let mut fr = self.frozen.take().unwrap_or_else(|| vec![false; n_self]);
            match &other.frozen {
                Some(of) => fr.extend_from_slice(of),
                None => fr.extend(std::iter::repeat(false).take(other.positions.len())),
            }
            self.frozen = Some(fr);
        }
        self.texcoords = match (self.texcoords.take(), &other.texcoords) {
            (Some(mut a), Some(b)) => {
                let uv_off = a.uvs.len() as u32;
                a.uvs.extend_from_slice(&b.uvs);
                a.faces
                    .extend(b.faces.iter().map(|f| f.map(|i| i + uv_off)));
                Some(a)
            }
            _ => None,
        };
        self.positions.extend_from_slice(&other.positions);
        self.faces
            .extend(other.faces.iter().map(|f| f.map(|i| i + offset)));
    }

    /// Connected component label per vertex (by shared faces); isolated
    /// vertices get their own label. Labels are numbered in order of first
    /// appearance by vertex index.
    pub fn component_labels(&self) -> (Vec<usize>, usize) {
        let n = self.positions.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for f in &self.faces {
            for k in 1..3 {
                let a = find(&mut parent, f[0] as usize);
                let b = find(&mut parent, f[k] as usize);
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
        let mut label = vec![usize::MAX; n];
        let mut root_label = BTreeMap::new();
        for v in 0..n {
            let r = find(&mut parent, v);
            let next = root_label.len();
            label[v] = *root_label.entry(r).or_insert(next);
        }
        (label, root_label.len())
    }

    /// Number of connected components that contain at least one face.
    pub fn face_component_count(&self) -> usize {
        let (labels, _) = self.component_labels();
        let mut seen: Vec<usize> = self.faces.iter().map(|f| labels[f[0] as usize]).collect();
        seen.sort_unstable();
        seen.dedup();
        seen.len()
    }

    /// Drops every optional attribute except colors.
    pub fn geometry_only(&self) -> TriangleMesh {
        TriangleMesh::new(self.positions.clone(), self.faces.clone())
    }

    /// Submesh made of the given faces, with vertices renumbered in order.
    pub fn submesh(&self, faces: impl IntoIterator<Item = usize>) -> TriangleMesh {
        let mut map = vec![u32::MAX; self.positions.len()];
        let mut out = TriangleMesh::default();
        let mut colors = Vec::new();
        for fi in faces {
            let f = self.faces[fi].map(|v| {
                let v = v as usize;
                if map[v] == u32::MAX {
                    map[v] = out.positions.len() as u32;
                    out.positions.push(self.positions[v]);
                    if let Some(c) = &self.vertex_colors {
                        colors.push(c[v]);
                    }
                }
                map[v]
            });
            out.faces.push(f);
        }
        if self.vertex_colors.is_some() {
            out.vertex_colors = Some(colors);
        }
        out
    }
}

/// Sorted `(min, max)` vertex pair.
#[inline]
pub fn edge_key(a: u32, b: u32) -> (u32, u32) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Unique undirected edges in sorted order.
pub fn unique_edges(faces: &[[u32; 3]]) -> Vec<(u32, u32)> {
    let mut e: Vec<(u32, u32)> = faces
        .iter()
        .flat_map(|f| (0..3).map(move |k| edge_key(f[k], f[(k + 1) % 3])))
        .collect();
    e.sort_unstable();
    e.dedup();
    e
}

/// For each face and each local edge `k` (from corner `k` to corner `k+1`),
/// the face on the other side, [`NO_FACE`] on a boundary, or
/// [`NON_MANIFOLD`] when more than two faces share the edge.
pub fn face_neighbors(faces: &[[u32; 3]]) -> Vec<[u32; 3]> {
    let mut half: Vec<(u32, u32, u32, u8)> = Vec::with_capacity(faces.len() * 3);
    for (fi, f) in faces.iter().enumerate() {
        for k in 0..3 {
            let (a, b) = edge_key(f[k], f[(k + 1) % 3]);
            half.push((a, b, fi as u32, k as u8));
        }
    }
    half.sort_unstable();
    let mut out = vec![[NO_FACE; 3]; faces.len()];
    let mut i = 0;
    while i < half.len() {
        let mut j = i + 1;
        while j < half.len() && half[j].0 == half[i].0 && half[j].1 == half[i].1 {
            j += 1;
        }
        match j - i {
            1 => {}
            2 => {
                let (f0, k0) = (half[i].2, half[i].3);
                let (f1, k1) = (half[i + 1].2, half[i + 1].3);
                out[f0 as usize][k0 as usize] = f1;
                out[f1 as usize][k1 as usize] = f0;
            }
            _ => {
                for h in &half[i..j] {
                    out[h.2 as usize][h.3 as usize] = NON_MANIFOLD;
                }
            }
        }
        i = j;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdjacencyInfo {
    pub vertex_faces: Vec<Vec<u32>>,
    /// Keyed by the sorted vertex pair.
    pub edge_faces: BTreeMap<(u32, u32), Vec<u32>>,
    /// Sorted one-ring neighbor indices.
    pub one_ring: Vec<Vec<u32>>,
}

impl AdjacencyInfo {
    pub fn num_edges(&self) -> usize {
        self.edge_faces.len()
    }

    pub fn is_boundary_vertex(&self, v: usize) -> bool {
        self.one_ring[v]
            .iter()
            .any(|&u| self.edge_faces[&edge_key(v as u32, u)].len() == 1)
    }
}

pub fn build_adjacency(mesh: &TriangleMesh) -> Result<AdjacencyInfo> {
    let n = mesh.positions.len();
    for (i, f) in mesh.faces.iter().enumerate() {
        if f.iter().any(|&v| v as usize >= n) {
            return Err(Error::Structural(format!(
                "face {i} {f:?} references a vertex >= {n}"
            )));
        }
    }
    let mut vertex_faces = vec![Vec::new(); n];
    let mut edge_faces: BTreeMap<(u32, u32), Vec<u32>> = BTreeMap::new();
    let mut one_ring = vec![Vec::new(); n];
    for (fi, f) in mesh.faces.iter().enumerate() {
        for k in 0..3 {
            let (a, b) = (f[k], f[(k + 1) % 3]);
            vertex_faces[a as usize].push(fi as u32);
            if a != b {
                edge_faces.entry(edge_key(a, b)).or_default().push(fi as u32);
                one_ring[a as usize].push(b);
                one_ring[b as usize].push(a);
            }
        }
    }
    for r in &mut one_ring {
        r.sort_unstable();
        r.dedup();
    }
    Ok(AdjacencyInfo {
        vertex_faces,
        edge_faces,
        one_ring,
    })
}

/// Icosahedron subdivided `level` times and projected onto the sphere.
pub fn icosphere(center: Vec3, radius: f64, level: u32) -> Result<TriangleMesh> {
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(Error::Contract(format!("icosphere radius {radius} must be > 0")));
    }
    if level > 7 {
        return Err(Error::Contract(format!("icosphere level {level} exceeds 7")));
    }
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut pos: Vec<Vec3> = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ]
    .iter()
    .map(|p| Vec3::from(*p).normalize())
    .collect();
    let mut faces: Vec<[u32; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..level {
        let mut mid: BTreeMap<(u32, u32), u32> = BTreeMap::new();
        let mut next = Vec::with_capacity(faces.len() * 4);
        let mut midpoint = |a: u32, b: u32, pos: &mut Vec<Vec3>| -> u32 {
            *mid.entry(edge_key(a, b)).or_insert_with(|| {
                let p = (pos[a as usize] + pos[b as usize]).normalize();
                pos.push(p);
                (pos.len() - 1) as u32
            })
        };
        for [a, b, c] in faces {
            let ab = midpoint(a, b, &mut pos);
            let bc = midpoint(b, c, &mut pos);
            let ca = midpoint(c, a, &mut pos);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    let positions = pos.into_iter().map(|p| center + p * radius).collect();
    Ok(TriangleMesh::new(positions, faces))
}

/// Axis-aligned box with two outward-facing triangles per side.
pub fn cuboid(min: Vec3, max: Vec3) -> TriangleMesh {
    let corner = |i: usize| {
        Vec3::new(
            if i & 1 == 0 { min.x } else { max.x },
            if i & 2 == 0 { min.y } else { max.y },
            if i & 4 == 0 { min.z } else { max.z },
        )
    };
    let positions = (0..8).map(corner).collect();
    let faces = vec![
        [0, 2, 3],
        [0, 3, 1], // -z
        [4, 5, 7],
        [4, 7, 6], // +z
        [0, 1, 5],
        [0, 5, 4], // -y
        [2, 6, 7],
        [2, 7, 3], // +y
        [0, 4, 6],
        [0, 6, 2], // -x
        [1, 3, 7],
        [1, 7, 5], // +x
    ];
    TriangleMesh::new(positions, faces)
}

/// Umbrella Laplacian: mean of the one-ring minus the vertex position.
/// Isolated vertices get a zero vector.
pub fn uniform_laplacian(mesh: &TriangleMesh, adjacency: &AdjacencyInfo) -> Vec<Vec3> {
    mesh.positions
        .iter()
        .zip(&adjacency.one_ring)
        .map(|(p, ring)| {
            if ring.is_empty() {
                return Vec3::zeros();
            }
            let sum: Vec3 = ring.iter().map(|&u| mesh.positions[u as usize]).sum();
            sum / ring.len() as f64 - p
        })
        .collect()
}

/// Outcome of a local topology edit that may legally refuse to apply.
#[derive(Debug, Clone, PartialEq)]
pub enum EditOutcome {
    Applied(TriangleMesh),
    Rejected(Rejection),
}

impl EditOutcome {
    pub fn applied(self) -> Option<TriangleMesh> {
        match self {
            EditOutcome::Applied(m) => Some(m),
            EditOutcome::Rejected(_) => None,
        }
    }

    pub fn is_rejected(&self) -> bool {
        matches!(self, EditOutcome::Rejected(_))
    }
}

fn require_edge(em: &EditableMesh, edge: (u32, u32)) -> Result<()> {
    if em.edge_faces(edge.0, edge.1).is_empty() {
        return Err(Error::Contract(format!("{edge:?} is not an edge of the mesh")));
    }
    Ok(())
}

/// Inserts the edge midpoint and splits both incident faces.
pub fn edge_split(mesh: &TriangleMesh, edge: (u32, u32)) -> Result<TriangleMesh> {
    mesh.check_indices()?;
    let mut em = EditableMesh::from_mesh(mesh, 0, &[]);
    require_edge(&em, edge)?;
    em.split(edge.0, edge.1)
        .map_err(|r| Error::Contract(format!("cannot split {edge:?}: {r:?}")))?;
    Ok(em.to_mesh().0)
}

/// Merges the edge endpoints at the midpoint (or at the frozen endpoint).
pub fn edge_collapse(mesh: &TriangleMesh, edge: (u32, u32)) -> Result<EditOutcome> {
    mesh.check_indices()?;
    let mut em = EditableMesh::from_mesh(mesh, 0, &[]);
    require_edge(&em, edge)?;
    Ok(match em.collapse(edge.0, edge.1, None) {
        Ok(_) => EditOutcome::Applied(em.to_mesh().0),
        Err(r) => EditOutcome::Rejected(r),
    })
}

/// Replaces the shared diagonal of the two faces on `edge` with the other one.
pub fn edge_flip(mesh: &TriangleMesh, edge: (u32, u32)) -> Result<EditOutcome> {
    mesh.check_indices()?;
    let mut em = EditableMesh::from_mesh(mesh, 0, &[]);
    require_edge(&em, edge)?;
    Ok(match em.flip(edge.0, edge.1, false) {
        Ok(()) => EditOutcome::Applied(em.to_mesh().0),
        Err(r) => EditOutcome::Rejected(r),
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub fn tetrahedron() -> TriangleMesh {
        TriangleMesh::new(
            vec![
                Vec3::new(1.0, 1.0, 1.0),
                Vec3::new(1.0, -1.0, -1.0),
                Vec3::new(-1.0, 1.0, -1.0),
                Vec3::new(-1.0, -1.0, 1.0),
            ],
            vec![[0, 1, 2], [0, 2, 3], [0, 3, 1], [1, 3, 2]],
        )
    }

    pub fn quad() -> TriangleMesh {
        TriangleMesh::new(
            vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(1.0, 1.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2], [0, 2, 3]],
        )
    }

    pub fn grid(n: usize) -> TriangleMesh {
        let mut positions = Vec::new();
        for j in 0..=n {
            for i in 0..=n {
                positions.push(Vec3::new(i as f64, j as f64, 0.0));
            }
        }
        let idx = |i: usize, j: usize| (j * (n + 1) + i) as u32;
        let mut faces = Vec::new();
        for j in 0..n {
            for i in 0..n {
                faces.push([idx(i, j), idx(i + 1, j), idx(i + 1, j + 1)]);
                faces.push([idx(i, j), idx(i + 1, j + 1), idx(i, j + 1)]);
            }
        }
        TriangleMesh::new(positions, faces)
    }

    #[test]
    fn tetrahedron_adjacency_has_six_closed_edges() {
        let adj = build_adjacency(&tetrahedron()).unwrap();
        assert_eq!(adj.num_edges(), 6);
        assert!(adj.edge_faces.values().all(|f| f.len() == 2));
    }

    #[test]
    fn single_triangle_has_three_boundary_edges() {
        let m = TriangleMesh::new(
            vec![Vec3::zeros(), Vec3::x(), Vec3::y()],
            vec![[0, 1, 2]],
        );
        let adj = build_adjacency(&m).unwrap();
        assert_eq!(adj.num_edges(), 3);
        assert!(adj.edge_faces.values().all(|f| f.len() == 1));
        assert!(adj.is_boundary_vertex(0));
    }

    #[test]
    fn shared_edge_maps_to_both_faces() {
        let adj = build_adjacency(&quad()).unwrap();
        assert_eq!(adj.edge_faces[&(0, 2)], vec![0, 1]);
    }

    #[test]
    fn adjacency_rejects_out_of_range() {
        let m = TriangleMesh::new(vec![Vec3::zeros(); 2], vec![[0, 1, 2]]);
        assert!(matches!(build_adjacency(&m), Err(Error::Structural(_))));
    }

    #[test]
    fn one_ring_is_symmetric() {
        let m = icosphere(Vec3::zeros(), 1.0, 2).unwrap();
        let adj = build_adjacency(&m).unwrap();
        for (v, ring) in adj.one_ring.iter().enumerate() {
            for &u in ring {
                assert!(adj.one_ring[u as usize].binary_search(&(v as u32)).is_ok());
            }
        }
    }

    #[test]
    fn icosphere_counts() {
        for (level, v, f) in [(0, 12, 20), (1, 42, 80), (2, 162, 320), (3, 642, 1280)] {
            let m = icosphere(Vec3::zeros(), 1.0, level).unwrap();
            assert_eq!(m.num_vertices(), v);
            assert_eq!(m.num_faces(), f);
        }
    }

    #[test]
    fn icosphere_on_sphere_and_outward() {
        let c = Vec3::new(0.3, -1.0, 2.0);
        for level in 0..=4 {
            let m = icosphere(c, 2.5, level).unwrap();
            for p in &m.positions {
                assert!(((p - c).norm() - 2.5).abs() < 1e-6);
            }
            for fi in 0..m.num_faces() {
                let centroid: Vec3 =
                    m.faces[fi].iter().map(|&v| m.positions[v as usize]).sum::<Vec3>() / 3.0;
                assert!(m.face_cross(fi).dot(&(centroid - c)) > 0.0);
            }
            let r = validate(&m);
            assert!(r.is_watertight());
            assert_eq!(r.components.len(), 1);
            assert_eq!(r.components[0].euler_characteristic, 2);
        }
    }

    #[test]
    fn icosphere_rejects_bad_parameters() {
        assert!(icosphere(Vec3::zeros(), 0.0, 1).is_err());
        assert!(icosphere(Vec3::zeros(), 1.0, 8).is_err());
    }

    #[test]
    fn cuboid_is_closed_and_outward() {
        let m = cuboid(Vec3::new(-1.0, -2.0, -3.0), Vec3::new(1.0, 2.0, 3.0));
        let r = validate(&m);
        assert!(r.is_watertight());
        assert_eq!(r.components[0].euler_characteristic, 2);
        for fi in 0..m.num_faces() {
            let centroid: Vec3 =
                m.faces[fi].iter().map(|&v| m.positions[v as usize]).sum::<Vec3>() / 3.0;
            assert!(m.face_cross(fi).dot(&centroid) > 0.0);
        }
    }

    #[test]
    fn laplacian_grid_interior_is_zero() {
        let m = grid(4);
        let adj = build_adjacency(&m).unwrap();
        let lap = uniform_laplacian(&m, &adj);
        // Vertex (2,2) has a symmetric one-ring in this triangulation.
        assert!(lap[2 * 5 + 2].norm() < 1e-12);
    }

    #[test]
    fn laplacian_sphere_points_inward() {
        let m = icosphere(Vec3::zeros(), 1.0, 2).unwrap();
        let adj = build_adjacency(&m).unwrap();
        for (p, l) in m.positions.iter().zip(uniform_laplacian(&m, &adj)) {
            assert!(l.dot(p) < 0.0);
        }
    }

    #[test]
    fn laplacian_chain_end_and_isolated() {
        // A lone triangle plus an isolated vertex: the isolated one is zero.
        let m = TriangleMesh::new(
            vec![Vec3::zeros(), Vec3::x(), Vec3::y(), Vec3::new(5.0, 5.0, 5.0)],
            vec![[0, 1, 2]],
        );
        let adj = build_adjacency(&m).unwrap();
        let lap = uniform_laplacian(&m, &adj);
        assert_eq!(lap[3], Vec3::zeros());
        assert!((lap[0] - Vec3::new(0.5, 0.5, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn split_quad_diagonal() {
        let m = edge_split(&quad(), (0, 2)).unwrap();
        assert_eq!(m.num_vertices(), 5);
        assert_eq!(m.num_faces(), 4);
        assert_eq!(m.positions[4], Vec3::new(0.5, 0.5, 0.0));
        assert!(validate(&m).is_valid());
    }

    #[test]
    fn collapse_tetrahedron_rejected() {
        let t = tetrahedron();
        for (a, b) in unique_edges(&t.faces) {
            assert!(edge_collapse(&t, (a, b)).unwrap().is_rejected());
        }
    }

    #[test]
    fn flip_convex_quad() {
        let out = edge_flip(&quad(), (0, 2)).unwrap().applied().unwrap();
        assert_eq!(out.num_vertices(), 4);
        let edges = unique_edges(&out.faces);
        assert!(edges.contains(&(1, 3)));
        assert!(!edges.contains(&(0, 2)));
        // Orientation preserved: both faces still face +z.
        for fi in 0..2 {
            assert!(out.face_cross(fi).z > 0.0);
        }
    }

    #[test]
    fn edit_on_missing_edge_is_contract_error() {
        assert!(matches!(edge_split(&quad(), (1, 3)), Err(Error::Contract(_))));
    }

    #[test]
    fn collapse_keeps_frozen_position() {
        let mut m = icosphere(Vec3::zeros(), 1.0, 1).unwrap();
        let mut fr = vec![false; m.num_vertices()];
        let (a, b) = unique_edges(&m.faces)[0];
        fr[b as usize] = true;
        m.frozen = Some(fr);
        let pb = m.positions[b as usize];
        let out = edge_collapse(&m, (a, b)).unwrap().applied().unwrap();
        assert!(out.positions.contains(&pb));
        assert_eq!(out.frozen_count(), 1);
    }

    #[test]
    fn collapse_of_two_frozen_rejected() {
        let mut m = icosphere(Vec3::zeros(), 1.0, 1).unwrap();
        m.frozen = Some(vec![true; m.num_vertices()]);
        let (a, b) = unique_edges(&m.faces)[0];
        assert_eq!(
            edge_collapse(&m, (a, b)).unwrap(),
            EditOutcome::Rejected(Rejection::Frozen)
        );
    }

    #[test]
    fn append_keeps_components_separate() {
        let mut a = tetrahedron();
        a.frozen = Some(vec![true; 4]);
        a.append(&tetrahedron());
        assert_eq!(a.face_component_count(), 2);
        assert_eq!(a.frozen_count(), 4);
        assert_eq!(a.frozen.as_ref().unwrap().len(), 8);
    }

    #[test]
    fn face_neighbors_tetrahedron() {
        let t = tetrahedron();
        let nb = face_neighbors(&t.faces);
        for (f, n) in nb.iter().enumerate() {
            for k in 0..3 {
                let g = n[k] as usize;
                assert!(g < 4 && g != f);
            }
        }
    }
}
