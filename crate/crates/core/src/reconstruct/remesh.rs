//! Continuous remeshing toward a target edge length.

use crate::mesh::{EditableMesh, TriangleMesh};

use super::config::RemeshConfig;

/// What one pass did.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RemeshStats {
    pub splits: usize,
    pub collapses: usize,
    pub flips: usize,
    /// Degenerate faces removed by the cleanup step.
    pub cleaned: usize,
}

/// One pass of split, collapse, flip and degenerate cleanup.
///
/// Edges touching a frozen vertex are left alone, so the frozen part of a
/// mesh keeps its exact positions and connectivity.
pub fn remesh_pass(mesh: &TriangleMesh, target: f64, factors: &RemeshConfig) -> (TriangleMesh, RemeshStats) {
    let (out, _, stats) = remesh_with_attrs(mesh, 0, &[], target, factors);
    (out, stats)
}

/// Like [`remesh_pass`], carrying `dim` floats per vertex: averaged on
/// split, kept by the surviving vertex on collapse.
pub(crate) fn remesh_with_attrs(
    mesh: &TriangleMesh,
    dim: usize,
    attrs: &[f64],
    target: f64,
    factors: &RemeshConfig,
) -> (TriangleMesh, Vec<f64>, RemeshStats) {
    let mut em = EditableMesh::from_mesh(mesh, dim, attrs);
    let mut stats = RemeshStats::default();
    if target > 0.0 && target.is_finite() {
        let hi = factors.split_factor * target;
        let lo = factors.collapse_factor * target;
        stats.splits = split_long(&mut em, hi);
        stats.collapses = collapse_short(&mut em, lo, hi);
        stats.flips = flip_valence(&mut em);
    }
    stats.cleaned = clean_degenerate(&mut em);
    let (out, _, extra) = em.to_mesh_with_extra();
    (out, extra, stats)
}

fn touches_frozen(em: &EditableMesh, a: u32, b: u32) -> bool {
    em.frozen[a as usize] || em.frozen[b as usize]
}

/// Edges with their lengths, filtered and sorted by `order` with the
/// vertex pair as a deterministic tie-break.
fn candidates(em: &EditableMesh, keep: impl Fn(f64) -> bool, longest_first: bool) -> Vec<(f64, u32, u32)> {
    let mut c: Vec<(f64, u32, u32)> = em
        .edges()
        .into_iter()
        .filter(|&(a, b)| !touches_frozen(em, a, b))
        .map(|(a, b)| (em.edge_length(a, b), a, b))
        .filter(|&(l, _, _)| keep(l))
        .collect();
    c.sort_by(|x, y| {
        let o = x.0.total_cmp(&y.0);
        let o = if longest_first { o.reverse() } else { o };
        o.then((x.1, x.2).cmp(&(y.1, y.2)))
    });
    c
}

fn split_long(em: &mut EditableMesh, hi: f64) -> usize {
    let mut n = 0;
    for (_, a, b) in candidates(em, |l| l > hi, true) {
        if em.split(a, b).is_ok() {
            n += 1;
        }
    }
    n
}

fn collapse_short(em: &mut EditableMesh, lo: f64, hi: f64) -> usize {
    let mut n = 0;
    for (_, a, b) in candidates(em, |l| l < lo, false) {
        if !em.is_vertex_alive(a as usize) || !em.is_vertex_alive(b as usize) {
            continue;
        }
        // Earlier collapses may have moved the endpoints.
        if em.edge_length(a, b) >= lo {
            continue;
        }
        if em.collapse(a, b, Some(hi)).is_ok() {
            n += 1;
        }
    }
    n
}

fn valence_target(em: &EditableMesh, v: u32) -> i64 {
    if em.is_boundary_vertex(v) {
        4
    } else {
        6
    }
}

fn flip_valence(em: &mut EditableMesh) -> usize {
    let mut n = 0;
    for (a, b) in em.edges() {
        if touches_frozen(em, a, b) || em.edge_faces(a, b).len() != 2 {
            continue;
        }
        let Ok((c, d)) = em.check_flip(a, b, true) else {
            continue;
        };
        let dev = |v: u32, delta: i64| {
            let d = em.valence(v) as i64 + delta - valence_target(em, v);
            d * d
        };
        let before = dev(a, 0) + dev(b, 0) + dev(c, 0) + dev(d, 0);
        let after = dev(a, -1) + dev(b, -1) + dev(c, 1) + dev(d, 1);
        if after < before && em.flip(a, b, true).is_ok() {
            n += 1;
        }
    }
    n
}

/// Removes faces below the area epsilon by collapsing their shortest legal
/// edge, or failing that flipping their longest edge.
fn clean_degenerate(em: &mut EditableMesh) -> usize {
    let mut n = 0;
    for _round in 0..4 {
        let bad: Vec<usize> = em
            .alive_faces()
            .filter(|&f| !(em.face_area(f) >= em.area_epsilon))
            .collect();
        if bad.is_empty() {
            break;
        }
        let mut progress = false;
        for f in bad {
            if !em.is_face_alive(f) || em.face_area(f) >= em.area_epsilon {
                continue;
            }
            let fv = em.faces[f];
            let mut edges: Vec<(f64, u32, u32)> = (0..3)
                .map(|k| (fv[k], fv[(k + 1) % 3]))
                .map(|(a, b)| (em.edge_length(a, b), a, b))
                .collect();
            edges.sort_by(|x, y| x.0.total_cmp(&y.0));
            let mut collapsed = false;
            for &(_, a, b) in &edges {
                if !touches_frozen(em, a, b) && em.collapse(a, b, None).is_ok() {
                    collapsed = true;
                    break;
                }
            }
            let fixed = collapsed || {
                let (_, a, b) = edges[2];
                !touches_frozen(em, a, b) && em.flip(a, b, true).is_ok()
            };
            if fixed {
                n += 1;
                progress = true;
            }
        }
        if !progress {
            break;
        }
    }
    n
}
