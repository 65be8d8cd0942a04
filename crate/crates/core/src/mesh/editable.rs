use super::{edge_key, TriangleMesh, DEFAULT_AREA_EPSILON};
use crate::Vec3;

/// Why a collapse or flip refused to apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rejection {
    NotAnEdge,
    NonManifoldEdge,
    BoundaryEdge,
    Frozen,
    LinkCondition,
    /// Interior edge joining two boundary vertices would pinch the surface.
    BoundaryPinch,
    ExistingEdge,
    Degenerate,
    FoldOver,
    TooLong,
}

/// Working copy of a mesh supporting local edits with incidence lists.
///
/// Faces and vertices are never physically removed until [`to_mesh`]
/// compacts them, so indices stay stable during a pass. Each vertex carries
/// `attr_dim` floats that are averaged on split and kept by the survivor on
/// collapse.
///
/// [`to_mesh`]: EditableMesh::to_mesh
#[derive(Debug, Clone)]
pub struct EditableMesh {
    pub positions: Vec<Vec3>,
    pub frozen: Vec<bool>,
    pub faces: Vec<[u32; 3]>,
    pub area_epsilon: f64,
    attr_dim: usize,
    attrs: Vec<f64>,
    has_colors: bool,
    face_alive: Vec<bool>,
    vertex_alive: Vec<bool>,
    vertex_faces: Vec<Vec<u32>>,
}

impl EditableMesh {
    /// `extra` holds `extra_dim` floats per vertex (may be empty when
    /// `extra_dim` is zero). Vertex colors, when present, travel as attributes.
    pub fn from_mesh(mesh: &TriangleMesh, extra_dim: usize, extra: &[f64]) -> Self {
        let n = mesh.positions.len();
        assert_eq!(extra.len(), n * extra_dim);
        let has_colors = mesh.vertex_colors.is_some();
        let attr_dim = extra_dim + if has_colors { 3 } else { 0 };
        let mut attrs = Vec::with_capacity(n * attr_dim);
        for v in 0..n {
            if let Some(c) = &mesh.vertex_colors {
                attrs.extend_from_slice(&c[v]);
            }
            attrs.extend_from_slice(&extra[v * extra_dim..(v + 1) * extra_dim]);
        }
        let mut vertex_faces = vec![Vec::new(); n];
        for (fi, f) in mesh.faces.iter().enumerate() {
            for &v in f {
                vertex_faces[v as usize].push(fi as u32);
            }
        }
        EditableMesh {
            positions: mesh.positions.clone(),
            frozen: mesh.frozen.clone().unwrap_or_else(|| vec![false; n]),
            faces: mesh.faces.clone(),
            area_epsilon: DEFAULT_AREA_EPSILON,
            attr_dim,
            attrs,
            has_colors,
            face_alive: vec![true; mesh.faces.len()],
            vertex_alive: vec![true; n],
            vertex_faces,
        }
    }

    pub fn is_face_alive(&self, f: usize) -> bool {
        self.face_alive[f]
    }

    pub fn is_vertex_alive(&self, v: usize) -> bool {
        self.vertex_alive[v]
    }

    pub fn alive_faces(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.faces.len()).filter(|&f| self.face_alive[f])
    }

    /// Alive faces containing both `a` and `b`.
    pub fn edge_faces(&self, a: u32, b: u32) -> Vec<u32> {
        if a == b || a as usize >= self.positions.len() || b as usize >= self.positions.len() {
            return Vec::new();
        }
        self.vertex_faces[a as usize]
            .iter()
            .copied()
            .filter(|&f| self.faces[f as usize].contains(&b))
            .collect()
    }

    pub fn vertex_faces(&self, v: u32) -> &[u32] {
        &self.vertex_faces[v as usize]
    }

    /// Sorted one-ring.
    pub fn ring(&self, v: u32) -> Vec<u32> {
        let mut r: Vec<u32> = self.vertex_faces[v as usize]
            .iter()
            .flat_map(|&f| self.faces[f as usize])
            .filter(|&u| u != v)
            .collect();
        r.sort_unstable();
        r.dedup();
        r
    }

    pub fn valence(&self, v: u32) -> usize {
        self.ring(v).len()
    }

    pub fn is_boundary_vertex(&self, v: u32) -> bool {
        self.ring(v)
            .into_iter()
            .any(|u| self.edge_faces(v, u).len() == 1)
    }

    /// Unique alive edges in sorted order.
    pub fn edges(&self) -> Vec<(u32, u32)> {
        let mut e: Vec<(u32, u32)> = self
            .alive_faces()
            .flat_map(|fi| {
                let f = self.faces[fi];
                (0..3).map(move |k| edge_key(f[k], f[(k + 1) % 3]))
            })
            .collect();
        e.sort_unstable();
        e.dedup();
        e
    }

    pub fn edge_length(&self, a: u32, b: u32) -> f64 {
        (self.positions[a as usize] - self.positions[b as usize]).norm()
    }

    pub fn face_cross(&self, f: usize) -> Vec3 {
        let [a, b, c] = self.faces[f].map(|i| self.positions[i as usize]);
        (b - a).cross(&(c - a))
    }

    pub fn face_area(&self, f: usize) -> f64 {
        0.5 * self.face_cross(f).norm()
    }

    fn attr(&self, v: u32) -> &[f64] {
        let d = self.attr_dim;
        &self.attrs[v as usize * d..(v as usize + 1) * d]
    }

    fn push_vertex(&mut self, p: Vec3, frozen: bool, attr: &[f64]) -> u32 {
        self.positions.push(p);
        self.frozen.push(frozen);
        self.attrs.extend_from_slice(attr);
        self.vertex_alive.push(true);
        self.vertex_faces.push(Vec::new());
        (self.positions.len() - 1) as u32
    }

    fn push_face(&mut self, f: [u32; 3]) -> u32 {
        let id = self.faces.len() as u32;
        self.faces.push(f);
        self.face_alive.push(true);
        for &v in &f {
            self.vertex_faces[v as usize].push(id);
        }
        id
    }

    fn kill_face(&mut self, fi: u32) {
        self.face_alive[fi as usize] = false;
        for v in self.faces[fi as usize] {
            self.vertex_faces[v as usize].retain(|&g| g != fi);
        }
    }

    /// Rotates `f` so that it starts with the directed edge between `a` and
    /// `b`; returns the rotated face and whether the direction is `a -> b`.
    fn rotate_to_edge(f: [u32; 3], a: u32, b: u32) -> ([u32; 3], bool) {
        for k in 0..3 {
            let (x, y) = (f[k], f[(k + 1) % 3]);
            if (x, y) == (a, b) || (x, y) == (b, a) {
                return ([x, y, f[(k + 2) % 3]], x == a);
            }
        }
        unreachable!("face does not contain the edge")
    }

    /// Splits edge `(a, b)` at its midpoint; returns the new vertex.
    pub fn split(&mut self, a: u32, b: u32) -> Result<u32, Rejection> {
        let faces = self.edge_faces(a, b);
        if faces.is_empty() {
            return Err(Rejection::NotAnEdge);
        }
        if faces.len() > 2 {
            return Err(Rejection::NonManifoldEdge);
        }
        let p = 0.5 * (self.positions[a as usize] + self.positions[b as usize]);
        let attr: Vec<f64> = self
            .attr(a)
            .iter()
            .zip(self.attr(b))
            .map(|(x, y)| 0.5 * (x + y))
            .collect();
        let frozen = self.frozen[a as usize] && self.frozen[b as usize];
        let m = self.push_vertex(p, frozen, &attr);
        for fi in faces {
            let ([x, y, z], _) = Self::rotate_to_edge(self.faces[fi as usize], a, b);
            self.kill_face(fi);
            self.push_face([x, m, z]);
            self.push_face([m, y, z]);
        }
        Ok(m)
    }

    /// Checks whether collapsing `(a, b)` is legal; returns
    /// `(survivor, removed, new_position)`.
    ///
    /// When `max_edge` is given the collapse is also refused if it would
    /// create an edge longer than that.
    pub fn check_collapse(
        &self,
        a: u32,
        b: u32,
        max_edge: Option<f64>,
    ) -> Result<(u32, u32, Vec3), Rejection> {
        let shared = self.edge_faces(a, b);
        if shared.is_empty() {
            return Err(Rejection::NotAnEdge);
        }
        if shared.len() > 2 {
            return Err(Rejection::NonManifoldEdge);
        }
        let (fa, fb) = (self.frozen[a as usize], self.frozen[b as usize]);
        let (keep, remove, target) = match (fa, fb) {
            (true, true) => return Err(Rejection::Frozen),
            (true, false) => (a, b, self.positions[a as usize]),
            (false, true) => (b, a, self.positions[b as usize]),
            (false, false) => (
                a,
                b,
                0.5 * (self.positions[a as usize] + self.positions[b as usize]),
            ),
        };

        let opposite: Vec<u32> = shared
            .iter()
            .map(|&f| Self::rotate_to_edge(self.faces[f as usize], a, b).0[2])
            .collect();
        if opposite.len() == 2 && opposite[0] == opposite[1] {
            return Err(Rejection::LinkCondition);
        }
        if shared.len() == 2 && self.is_boundary_vertex(a) && self.is_boundary_vertex(b) {
            return Err(Rejection::BoundaryPinch);
        }

        let ring_a = self.ring(a);
        let ring_b = self.ring(b);
        let mut common: Vec<u32> = ring_a
            .iter()
            .copied()
            .filter(|v| ring_b.binary_search(v).is_ok())
            .collect();
        common.sort_unstable();
        let mut opp_sorted = opposite.clone();
        opp_sorted.sort_unstable();
        if common != opp_sorted {
            return Err(Rejection::LinkCondition);
        }
        if let [c, d] = opp_sorted[..] {
            // The edge (c, d) in both links, as in a tetrahedron.
            let has_face = |v: u32| {
                self.vertex_faces[v as usize].iter().any(|&f| {
                    let f = self.faces[f as usize];
                    f.contains(&c) && f.contains(&d)
                })
            };
            if has_face(a) && has_face(b) {
                return Err(Rejection::LinkCondition);
            }
        }

        if let Some(max_edge) = max_edge {
            for &u in ring_a.iter().chain(&ring_b) {
                if u != a && u != b && (self.positions[u as usize] - target).norm() > max_edge {
                    return Err(Rejection::TooLong);
                }
            }
        }

        // Faces that survive around either endpoint must stay non-degenerate
        // and keep their orientation.
        for &v in &[a, b] {
            for &fi in &self.vertex_faces[v as usize] {
                if shared.contains(&fi) {
                    continue;
                }
                let f = self.faces[fi as usize];
                let old = self.face_cross(fi as usize);
                let moved = f.map(|u| {
                    if u == a || u == b {
                        target
                    } else {
                        self.positions[u as usize]
                    }
                });
                let new = (moved[1] - moved[0]).cross(&(moved[2] - moved[0]));
                if 0.5 * new.norm() < self.area_epsilon {
                    return Err(Rejection::Degenerate);
                }
                if new.dot(&old) <= 0.0 {
                    return Err(Rejection::FoldOver);
                }
            }
        }
        Ok((keep, remove, target))
    }

    /// Collapses `(a, b)`; returns the surviving vertex.
    pub fn collapse(&mut self, a: u32, b: u32, max_edge: Option<f64>) -> Result<u32, Rejection> {
        let (keep, remove, target) = self.check_collapse(a, b, max_edge)?;
        for fi in self.edge_faces(a, b) {
            self.kill_face(fi);
        }
        let moved: Vec<u32> = self.vertex_faces[remove as usize].clone();
        for fi in moved {
            for v in self.faces[fi as usize].iter_mut() {
                if *v == remove {
                    *v = keep;
                }
            }
            self.vertex_faces[keep as usize].push(fi);
        }
        self.vertex_faces[remove as usize].clear();
        self.vertex_alive[remove as usize] = false;
        self.positions[keep as usize] = target;
        Ok(keep)
    }

    /// Opposite vertices `(c, d)` of the two faces on `(a, b)`, with the
    /// first face containing the directed edge `a -> b`.
    fn flip_quad(&self, a: u32, b: u32) -> Result<(u32, u32, u32, u32), Rejection> {
        let shared = self.edge_faces(a, b);
        match shared.len() {
            0 => return Err(Rejection::NotAnEdge),
            1 => return Err(Rejection::BoundaryEdge),
            2 => {}
            _ => return Err(Rejection::NonManifoldEdge),
        }
        let (f0, dir0) = Self::rotate_to_edge(self.faces[shared[0] as usize], a, b);
        let (f1, dir1) = Self::rotate_to_edge(self.faces[shared[1] as usize], a, b);
        if dir0 == dir1 {
            // Inconsistent orientation across the edge.
            return Err(Rejection::NonManifoldEdge);
        }
        let (c, d) = if dir0 { (f0[2], f1[2]) } else { (f1[2], f0[2]) };
        Ok((shared[0], shared[1], c, d))
    }

    /// Whether flipping `(a, b)` is legal. `respect_frozen` refuses flips
    /// touching frozen vertices.
    pub fn check_flip(&self, a: u32, b: u32, respect_frozen: bool) -> Result<(u32, u32), Rejection> {
        let (f0, f1, c, d) = self.flip_quad(a, b)?;
        if c == d {
            return Err(Rejection::LinkCondition);
        }
        if respect_frozen && [a, b, c, d].iter().any(|&v| self.frozen[v as usize]) {
            return Err(Rejection::Frozen);
        }
        if !self.edge_faces(c, d).is_empty() || self.ring(c).binary_search(&d).is_ok() {
            return Err(Rejection::ExistingEdge);
        }
        let p = |v: u32| self.positions[v as usize];
        let n_old = self.face_cross(f0 as usize) + self.face_cross(f1 as usize);
        // a -> b -> c and b -> a -> d become d -> b -> c and c -> a -> d.
        for tri in [[d, b, c], [c, a, d]] {
            let n = (p(tri[1]) - p(tri[0])).cross(&(p(tri[2]) - p(tri[0])));
            if 0.5 * n.norm() < self.area_epsilon {
                return Err(Rejection::Degenerate);
            }
            if n.dot(&n_old) <= 0.0 {
                return Err(Rejection::FoldOver);
            }
        }
        Ok((c, d))
    }

    pub fn flip(&mut self, a: u32, b: u32, respect_frozen: bool) -> Result<(), Rejection> {
        let (c, d) = self.check_flip(a, b, respect_frozen)?;
        for fi in self.edge_faces(a, b) {
            self.kill_face(fi);
        }
        self.push_face([d, b, c]);
        self.push_face([c, a, d]);
        Ok(())
    }

    /// Compacts alive faces and vertices into a [`TriangleMesh`] and returns
    /// the old-to-new vertex index map (`u32::MAX` for removed vertices) plus
    /// the extra attributes of the surviving vertices.
    pub fn to_mesh_with_extra(&self) -> (TriangleMesh, Vec<u32>, Vec<f64>) {
        let mut map = vec![u32::MAX; self.positions.len()];
        let mut positions = Vec::new();
        let mut frozen = Vec::new();
        let mut colors = Vec::new();
        let extra_dim = self.attr_dim - if self.has_colors { 3 } else { 0 };
        let mut extra = Vec::new();
        for v in 0..self.positions.len() {
            if !self.vertex_alive[v] {
                continue;
            }
            map[v] = positions.len() as u32;
            positions.push(self.positions[v]);
            frozen.push(self.frozen[v]);
            let attr = self.attr(v as u32);
            if self.has_colors {
                colors.push([attr[0], attr[1], attr[2]]);
                extra.extend_from_slice(&attr[3..]);
            } else {
                extra.extend_from_slice(attr);
            }
        }
        debug_assert_eq!(extra.len(), positions.len() * extra_dim);
        let faces = self
            .alive_faces()
            .map(|f| self.faces[f].map(|v| map[v as usize]))
            .collect();
        let mesh = TriangleMesh {
            positions,
            faces,
            vertex_colors: self.has_colors.then_some(colors),
            frozen: frozen.iter().any(|&f| f).then_some(frozen),
            texcoords: None,
        };
        (mesh, map, extra)
    }

    pub fn to_mesh(&self) -> (TriangleMesh, Vec<u32>) {
        let (m, map, _) = self.to_mesh_with_extra();
        (m, map)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::tests::{grid, quad, tetrahedron};
    use crate::mesh::{icosphere, validate};

    #[test]
    fn split_boundary_edge() {
        let mut em = EditableMesh::from_mesh(&quad(), 0, &[]);
        let m = em.split(0, 1).unwrap();
        assert_eq!(m, 4);
        let (out, _) = em.to_mesh();
        assert_eq!(out.num_faces(), 3);
        assert!(validate(&out).is_valid());
    }

    #[test]
    fn split_averages_attributes() {
        let q = quad();
        let extra: Vec<f64> = (0..4).flat_map(|v| [v as f64, 10.0 * v as f64]).collect();
        let mut em = EditableMesh::from_mesh(&q, 2, &extra);
        em.split(0, 2).unwrap();
        let (_, _, ex) = em.to_mesh_with_extra();
        assert_eq!(&ex[8..10], &[1.0, 10.0]);
    }

    #[test]
    fn collapse_on_sphere_keeps_manifold() {
        let s = icosphere(Vec3::zeros(), 1.0, 2).unwrap();
        let mut em = EditableMesh::from_mesh(&s, 0, &[]);
        let edges = em.edges();
        let mut done = 0;
        for (a, b) in edges.into_iter().step_by(7) {
            if em.is_vertex_alive(a as usize)
                && em.is_vertex_alive(b as usize)
                && em.collapse(a, b, None).is_ok()
            {
                done += 1;
            }
        }
        assert!(done > 10);
        let (out, _) = em.to_mesh();
        let r = validate(&out);
        assert!(r.is_watertight(), "{}", r.summary());
        assert_eq!(r.components[0].euler_characteristic, 2);
    }

    #[test]
    fn collapse_grid_boundary_edge() {
        let g = grid(3);
        let mut em = EditableMesh::from_mesh(&g, 0, &[]);
        em.collapse(1, 2, None).unwrap();
        let (out, _) = em.to_mesh();
        assert!(validate(&out).is_valid());
        assert_eq!(out.num_vertices(), 15);
    }

    #[test]
    fn collapse_interior_edge_between_boundary_vertices_rejected() {
        let g = grid(1);
        let mut em = EditableMesh::from_mesh(&g, 0, &[]);
        assert_eq!(em.collapse(0, 3, None), Err(Rejection::BoundaryPinch));
    }

    #[test]
    fn tetrahedron_flip_rejected() {
        let mut em = EditableMesh::from_mesh(&tetrahedron(), 0, &[]);
        assert_eq!(em.flip(0, 1, false), Err(Rejection::ExistingEdge));
    }

    #[test]
    fn flip_refuses_fold() {
        // Concave quad: flipping would fold the surface.
        let m = TriangleMesh::new(
            vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(2.0, 0.0, 0.0),
                Vec3::new(0.3, 0.3, 0.0),
                Vec3::new(0.0, 2.0, 0.0),
            ],
            vec![[0, 1, 2], [0, 2, 3]],
        );
        let mut em = EditableMesh::from_mesh(&m, 0, &[]);
        assert_eq!(em.flip(0, 2, false), Err(Rejection::FoldOver));
    }
}
