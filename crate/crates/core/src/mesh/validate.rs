use std::collections::BTreeMap;

use super::{edge_key, TriangleMesh, DEFAULT_AREA_EPSILON};

#[derive(Debug, Clone, PartialEq)]
pub struct ComponentReport {
    pub vertices: usize,
    pub edges: usize,
    pub faces: usize,
    pub euler_characteristic: i64,
    pub boundary_edges: usize,
}

/// Result of [`validate`]. Never fails; every problem is listed.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub area_epsilon: f64,
    /// Faces referencing a vertex index out of range.
    pub index_errors: Vec<usize>,
    /// Faces that repeat a vertex index.
    pub repeated_index_faces: Vec<usize>,
    /// Edges with more than two incident faces.
    pub non_manifold_edges: Vec<(u32, u32)>,
    pub boundary_edges: usize,
    pub degenerate_faces: Vec<usize>,
    pub non_finite_vertices: Vec<usize>,
    /// One entry per face-connected component, ordered by lowest vertex index.
    pub components: Vec<ComponentReport>,
}

impl ValidationReport {
    pub fn is_edge_manifold(&self) -> bool {
        self.non_manifold_edges.is_empty()
    }

    pub fn is_watertight(&self) -> bool {
        self.is_valid() && self.boundary_edges == 0
    }

    /// No index problems, non-manifold edges, degenerate faces or NaNs.
    pub fn is_valid(&self) -> bool {
        self.index_errors.is_empty()
            && self.repeated_index_faces.is_empty()
            && self.non_manifold_edges.is_empty()
            && self.degenerate_faces.is_empty()
            && self.non_finite_vertices.is_empty()
    }

    pub fn summary(&self) -> String {
        format!(
            "index_errors={} repeated={} non_manifold={} degenerate={} non_finite={} boundary_edges={} components={}",
            self.index_errors.len(),
            self.repeated_index_faces.len(),
            self.non_manifold_edges.len(),
            self.degenerate_faces.len(),
            self.non_finite_vertices.len(),
            self.boundary_edges,
            self.components.len()
        )
    }
}

pub fn validate(mesh: &TriangleMesh) -> ValidationReport {
    validate_with_epsilon(mesh, DEFAULT_AREA_EPSILON)
}

pub fn validate_with_epsilon(mesh: &TriangleMesh, area_epsilon: f64) -> ValidationReport {
    let n = mesh.positions.len();
    let mut report = ValidationReport {
        area_epsilon,
        ..Default::default()
    };
    report.non_finite_vertices = mesh
        .positions
        .iter()
        .enumerate()
        .filter(|(_, p)| !p.iter().all(|c| c.is_finite()))
        .map(|(i, _)| i)
        .collect();

    let mut good_faces = Vec::with_capacity(mesh.faces.len());
    for (i, f) in mesh.faces.iter().enumerate() {
        if f.iter().any(|&v| v as usize >= n) {
            report.index_errors.push(i);
            continue;
        }
        if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
            report.repeated_index_faces.push(i);
            continue;
        }
        let area = mesh.face_area(i);
        if !(area >= area_epsilon) {
            report.degenerate_faces.push(i);
        }
        good_faces.push(i);
    }

    let mut edge_count: BTreeMap<(u32, u32), usize> = BTreeMap::new();
    for &fi in &good_faces {
        let f = mesh.faces[fi];
        for k in 0..3 {
            *edge_count.entry(edge_key(f[k], f[(k + 1) % 3])).or_default() += 1;
        }
    }
    for (&e, &c) in &edge_count {
        if c > 2 {
            report.non_manifold_edges.push(e);
        } else if c == 1 {
            report.boundary_edges += 1;
        }
    }

    let sub = TriangleMesh::new(
        mesh.positions.clone(),
        good_faces.iter().map(|&f| mesh.faces[f]).collect(),
    );
    let (labels, count) = sub.component_labels();
    let mut comps: Vec<Option<ComponentReport>> = vec![None; count];
    let mut used = vec![false; n];
    for f in &sub.faces {
        let c = labels[f[0] as usize];
        let entry = comps[c].get_or_insert(ComponentReport {
            vertices: 0,
            edges: 0,
            faces: 0,
            euler_characteristic: 0,
            boundary_edges: 0,
        });
        entry.faces += 1;
        for &v in f {
            if !used[v as usize] {
                used[v as usize] = true;
                entry.vertices += 1;
            }
        }
    }
    for (&(a, _), &c) in &edge_count {
        if let Some(entry) = comps[labels[a as usize]].as_mut() {
            entry.edges += 1;
            if c == 1 {
                entry.boundary_edges += 1;
            }
        }
    }
    report.components = comps
        .into_iter()
        .flatten()
        .map(|mut c| {
            c.euler_characteristic = c.vertices as i64 - c.edges as i64 + c.faces as i64;
            c
        })
        .collect();
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::tests::{quad, tetrahedron};
    use crate::Vec3;

    #[test]
    fn tetrahedron_is_watertight_sphere() {
        let r = validate(&tetrahedron());
        assert!(r.is_watertight());
        assert_eq!(r.components.len(), 1);
        assert_eq!(r.components[0].euler_characteristic, 2);
    }

    #[test]
    fn repeated_index_flagged() {
        let mut m = tetrahedron();
        m.faces.push([0, 0, 1]);
        let r = validate(&m);
        assert_eq!(r.repeated_index_faces, vec![4]);
        assert!(!r.is_valid());
    }

    #[test]
    fn two_disjoint_tetrahedra() {
        let mut m = tetrahedron();
        let mut other = tetrahedron();
        for p in &mut other.positions {
            *p += Vec3::new(10.0, 0.0, 0.0);
        }
        m.append(&other);
        let r = validate(&m);
        assert_eq!(r.components.len(), 2);
        assert!(r.components.iter().all(|c| c.euler_characteristic == 2));
    }

    #[test]
    fn open_quad_has_boundary() {
        let r = validate(&quad());
        assert!(r.is_valid());
        assert!(!r.is_watertight());
        assert_eq!(r.boundary_edges, 4);
        assert_eq!(r.components[0].euler_characteristic, 1);
    }

    #[test]
    fn flags_nan_degenerate_and_nonmanifold() {
        let mut m = quad();
        m.positions.push(Vec3::new(f64::NAN, 0.0, 0.0));
        m.positions.push(Vec3::new(0.5, 0.5, 1.0));
        m.faces.push([0, 2, 5]);
        m.faces.push([0, 1, 1]);
        m.positions.push(Vec3::new(2.0, 0.0, 0.0));
        m.faces.push([0, 1, 6]); // collinear: zero area
        m.faces.push([0, 1, 9]);
        let r = validate(&m);
        assert_eq!(r.non_finite_vertices, vec![4]);
        assert_eq!(r.non_manifold_edges, vec![(0, 2)]);
        assert_eq!(r.repeated_index_faces, vec![3]);
        assert_eq!(r.degenerate_faces, vec![4]);
        assert_eq!(r.index_errors, vec![5]);
    }
}
