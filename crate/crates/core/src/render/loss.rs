//! Multiview normal + alpha image loss with Laplacian smoothing, and its
//! analytic gradient with respect to vertex positions.
//!
//! Per view the rendered raster holds alpha and alpha-premultiplied vertex
//! normals. The normal term compares premultiplied normals, which vanish on
//! background on both sides, so it only sees the union of the foregrounds
//! while staying continuous at silhouettes.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::raster::{bary_backward, composite, composite_backward, EdgePoint, Fade, SceneGeometry, ViewRaster};
use super::MultiviewSet;
use crate::mesh::{build_adjacency, TriangleMesh, NO_FACE};
use crate::{Error, Result, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub w_normal: f64,
    pub w_alpha: f64,
    pub lambda_smooth: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            w_normal: 1.0,
            w_alpha: 1.0,
            lambda_smooth: 0.02,
        }
    }
}

impl LossWeights {
    pub fn check(&self) -> Result<()> {
        let all = [self.w_normal, self.w_alpha, self.lambda_smooth];
        if all.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::Contract("loss weights must be finite and non-negative".into()));
        }
        if all.iter().all(|&w| w == 0.0) {
            return Err(Error::Contract("at least one loss weight must be positive".into()));
        }
        Ok(())
    }
}

/// Weighted terms of one loss evaluation; `total` is their sum.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub total: f64,
    pub normal: f64,
    pub alpha: f64,
    pub smooth: f64,
}

/// Targets prepared once for repeated evaluation.
pub struct LossTargets<'a> {
    set: &'a MultiviewSet,
    premult: Vec<Vec<[f64; 3]>>,
}

impl<'a> LossTargets<'a> {
    pub fn new(set: &'a MultiviewSet) -> Result<Self> {
        set.check()?;
        Ok(LossTargets {
            set,
            premult: set.views.iter().map(|v| v.premultiplied_normals()).collect(),
        })
    }

    pub fn set(&self) -> &MultiviewSet {
        self.set
    }

    /// Loss and d loss / d position. Frozen vertices get zero gradient.
    pub fn evaluate(&self, mesh: &TriangleMesh, weights: &LossWeights) -> Result<(LossBreakdown, Vec<Vec3>)> {
        weights.check()?;
        mesh.check_indices()?;
        let nv = mesh.positions.len();
        let scene = SceneGeometry::new(mesh);
        let nviews = self.set.views.len();
        let res = self.set.resolution();
        let scale = 1.0 / (nviews * res * res) as f64;

        let per_view: Vec<ViewGrad> = (0..nviews)
            .into_par_iter()
            .map(|i| self.view_grad(&scene, i, weights, scale))
            .collect();

        let mut terms = LossBreakdown::default();
        let mut grad = vec![Vec3::zeros(); nv];
        let mut g_normal = vec![Vec3::zeros(); nv];
        for vg in &per_view {
            terms.normal += vg.normal;
            terms.alpha += vg.alpha;
            for v in 0..nv {
                grad[v] += vg.g_pos[v];
                g_normal[v] += vg.g_vn[v];
            }
        }
        normals_backward(mesh, &g_normal, &mut grad);

        if weights.lambda_smooth > 0.0 {
            terms.smooth = weights.lambda_smooth * laplacian_energy(mesh, &mut grad, weights.lambda_smooth)?;
        }
        terms.total = terms.normal + terms.alpha + terms.smooth;

        if let Some(frozen) = &mesh.frozen {
            for (g, &f) in grad.iter_mut().zip(frozen) {
                if f {
                    *g = Vec3::zeros();
                }
            }
        }
        Ok((terms, grad))
    }

    fn view_grad(&self, scene: &SceneGeometry, i: usize, weights: &LossWeights, scale: f64) -> ViewGrad {
        let mesh = scene.mesh;
        let nv = mesh.positions.len();
        let target = &self.set.views[i];
        let t_normal = &self.premult[i];
        let camera = &target.camera;
        let vr = ViewRaster::new(scene, camera);
        let n = vr.res * vr.res;

        // Channels: alpha, premultiplied normal.
        let mut base = vec![[0.0f64; 4]; n];
        let mut unnorm = vec![Vec3::zeros(); n];
        for p in 0..n {
            let f = vr.face[p];
            if f == NO_FACE {
                continue;
            }
            let fv = mesh.faces[f as usize];
            let l = vr.bary[p];
            let m: Vec3 = (0..3).map(|k| scene.vertex_normals[fv[k] as usize] * l[k]).sum();
            unnorm[p] = m;
            let len = m.norm();
            let nn = if len > 0.0 { m / len } else { m };
            base[p] = [1.0, nn.x, nn.y, nn.z];
        }
        let pairs = vr.pairs(scene);
        let crossings = &pairs.crossings;
        let edge_vals: Vec<[f64; 4]> = crossings
            .iter()
            .map(|c| {
                let v = point_value(scene, &c.at);
                match &c.fade {
                    None => v,
                    Some(fade) => {
                        let o = chord_middle(scene, fade);
                        std::array::from_fn(|k| fade.w * v[k] + (1.0 - fade.w) * o[k])
                    }
                }
            })
            .collect();
        let out = composite(&base, &pairs, &edge_vals, &[0.0; 4]);

        let mut normal = 0.0;
        let mut alpha = 0.0;
        let mut g_out = vec![[0.0f64; 4]; n];
        for p in 0..n {
            let da = out[p][0] - target.alpha[p];
            alpha += da * da;
            g_out[p][0] = 2.0 * weights.w_alpha * scale * da;
            for c in 0..3 {
                let dn = out[p][c + 1] - t_normal[p][c];
                normal += dn * dn;
                g_out[p][c + 1] = 2.0 * weights.w_normal * scale * dn;
            }
        }

        let (mut g_t, mut g_edge) = (Vec::new(), Vec::new());
        let g_base = composite_backward(&base, &pairs, &edge_vals, &[0.0; 4], &g_out, &mut g_t, &mut g_edge);

        let mut g_xy = vec![[0.0f64; 2]; nv];
        let mut g_vn = vec![Vec3::zeros(); nv];
        for (k, c) in crossings.iter().enumerate() {
            let g = g_edge[k];
            let w = c.fade.map_or(1.0, |f| f.w);
            point_backward(scene, &c.at, g.map(|x| x * w), &mut g_vn, &mut g_xy);
            for (j, v) in c.at.edge.into_iter().enumerate() {
                g_xy[v as usize][0] += g_t[k] * c.dt[j][0];
                g_xy[v as usize][1] += g_t[k] * c.dt[j][1];
            }
            if let Some(fade) = &c.fade {
                for end in &fade.ends {
                    point_backward(scene, end, g.map(|x| x * 0.5 * (1.0 - w)), &mut g_vn, &mut g_xy);
                }
                let (v, o) = (point_value(scene, &c.at), chord_middle(scene, fade));
                let g_w: f64 = (0..4).map(|ch| g[ch] * (v[ch] - o[ch])).sum();
                for (j, fv) in mesh.faces[fade.face as usize].into_iter().enumerate() {
                    g_xy[fv as usize][0] += g_w * fade.dw[j][0];
                    g_xy[fv as usize][1] += g_w * fade.dw[j][1];
                }
            }
        }

        for p in 0..n {
            let f = vr.face[p];
            if f == NO_FACE {
                continue;
            }
            let g = Vec3::new(g_base[p][1], g_base[p][2], g_base[p][3]);
            if g == Vec3::zeros() {
                continue;
            }
            let m = unnorm[p];
            let len = m.norm();
            if !(len > 0.0) {
                continue;
            }
            let nn = m / len;
            let g_m = (g - nn * nn.dot(&g)) / len;
            let fv = mesh.faces[f as usize];
            let l = vr.bary[p];
            let mut g_l = [0.0; 3];
            for k in 0..3 {
                let vn = scene.vertex_normals[fv[k] as usize];
                g_vn[fv[k] as usize] += g_m * l[k];
                g_l[k] = vn.dot(&g_m);
            }
            let tri = fv.map(|v| vr.xy[v as usize]);
            let q = [(p % vr.res) as f64 + 0.5, (p / vr.res) as f64 + 0.5];
            let g_tri = bary_backward(tri, q, l, g_l);
            for k in 0..3 {
                let v = fv[k] as usize;
                g_xy[v][0] += g_tri[k][0];
                g_xy[v][1] += g_tri[k][1];
            }
        }

        let basis = camera.basis();
        let g_pos = g_xy
            .iter()
            .map(|g| basis.x_row * g[0] + basis.y_row * g[1])
            .collect();
        ViewGrad {
            normal: weights.w_normal * scale * normal,
            alpha: weights.w_alpha * scale * alpha,
            g_pos,
            g_vn,
        }
    }
}

struct ViewGrad {
    normal: f64,
    alpha: f64,
    g_pos: Vec<Vec3>,
    g_vn: Vec<Vec3>,
}

/// Loss of `mesh` against `targets` and its gradient per vertex position.
pub fn loss_and_gradients(
    mesh: &TriangleMesh,
    targets: &MultiviewSet,
    weights: &LossWeights,
) -> Result<(LossBreakdown, Vec<Vec3>)> {
    LossTargets::new(targets)?.evaluate(mesh, weights)
}

/// Coverage and unit normal at a point on an edge, from the lerped vertex
/// normals.
fn point_value(scene: &SceneGeometry, pt: &EdgePoint) -> [f64; 4] {
    let m = edge_normal(scene, pt);
    let len = m.norm();
    let nn = if len > 0.0 { m / len } else { m };
    [1.0, nn.x, nn.y, nn.z]
}

fn chord_middle(scene: &SceneGeometry, fade: &Fade) -> [f64; 4] {
    let [a, b] = fade.ends.map(|e| point_value(scene, &e));
    std::array::from_fn(|k| 0.5 * (a[k] + b[k]))
}

fn edge_normal(scene: &SceneGeometry, pt: &EdgePoint) -> Vec3 {
    let [a, b] = pt.edge.map(|v| scene.vertex_normals[v as usize]);
    a * (1.0 - pt.u) + b * pt.u
}

fn point_backward(scene: &SceneGeometry, pt: &EdgePoint, g: [f64; 4], g_vn: &mut [Vec3], g_xy: &mut [[f64; 2]]) {
    let g = Vec3::new(g[1], g[2], g[3]);
    let m = edge_normal(scene, pt);
    let len = m.norm();
    if !(len > 0.0) || g == Vec3::zeros() {
        return;
    }
    let [va, vb] = pt.edge.map(|v| v as usize);
    let nn = m / len;
    let g_m = (g - nn * nn.dot(&g)) / len;
    g_vn[va] += g_m * (1.0 - pt.u);
    g_vn[vb] += g_m * pt.u;
    let g_u = g_m.dot(&(scene.vertex_normals[vb] - scene.vertex_normals[va]));
    for (j, v) in [va, vb].into_iter().enumerate() {
        g_xy[v][0] += g_u * pt.du[j][0];
        g_xy[v][1] += g_u * pt.du[j][1];
    }
}

/// Chains gradients on normalized area-weighted vertex normals back to
/// positions.
fn normals_backward(mesh: &TriangleMesh, g_normal: &[Vec3], grad: &mut [Vec3]) {
    let nv = mesh.positions.len();
    let mut acc = vec![Vec3::zeros(); nv];
    for fi in 0..mesh.faces.len() {
        let c = mesh.face_cross(fi);
        for &v in &mesh.faces[fi] {
            acc[v as usize] += c;
        }
    }
    let g_acc: Vec<Vec3> = acc
        .iter()
        .zip(g_normal)
        .map(|(u, g)| {
            let len = u.norm();
            if len > 0.0 && *g != Vec3::zeros() {
                let n = u / len;
                (g - n * n.dot(g)) / len
            } else {
                Vec3::zeros()
            }
        })
        .collect();
    for f in &mesh.faces {
        let [i0, i1, i2] = f.map(|v| v as usize);
        let g_c = g_acc[i0] + g_acc[i1] + g_acc[i2];
        if g_c == Vec3::zeros() {
            continue;
        }
        let e1 = mesh.positions[i1] - mesh.positions[i0];
        let e2 = mesh.positions[i2] - mesh.positions[i0];
        let g1 = e2.cross(&g_c);
        let g2 = g_c.cross(&e1);
        grad[i1] += g1;
        grad[i2] += g2;
        grad[i0] -= g1 + g2;
    }
}

/// Returns the unweighted energy `sum |L v|^2` and adds `lambda` times its
/// gradient into `grad`.
fn laplacian_energy(mesh: &TriangleMesh, grad: &mut [Vec3], lambda: f64) -> Result<f64> {
    let adj = build_adjacency(mesh)?;
    let lap = crate::mesh::uniform_laplacian(mesh, &adj);
    let mut energy = 0.0;
    for (v, ring) in adj.one_ring.iter().enumerate() {
        let l = lap[v];
        energy += l.norm_squared();
        if ring.is_empty() {
            continue;
        }
        grad[v] -= l * (2.0 * lambda);
        let share = l * (2.0 * lambda / ring.len() as f64);
        for &u in ring {
            grad[u as usize] += share;
        }
    }
    Ok(energy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{standard_rig_six, OrthoCamera, CameraRig};
    use crate::mesh::icosphere;
    use crate::render::render_conditions;

    fn smooth_only() -> LossWeights {
        LossWeights {
            w_normal: 0.0,
            w_alpha: 0.0,
            lambda_smooth: 1.0,
        }
    }

    #[test]
    fn perfect_fit_has_zero_loss_and_gradient() {
        let m = icosphere(Vec3::new(0.05, -0.1, 0.0), 0.7, 2).unwrap();
        let rig = standard_rig_six(64, 1.0).unwrap();
        let targets = render_conditions(&m, &rig).unwrap();
        let w = LossWeights {
            lambda_smooth: 0.0,
            ..Default::default()
        };
        let (l, g) = loss_and_gradients(&m, &targets, &w).unwrap();
        assert!(l.total.abs() < 1e-20, "{l:?}");
        let gmax = g.iter().map(|v| v.amax()).fold(0.0, f64::max);
        assert!(gmax < 1e-8, "{gmax}");
    }

    #[test]
    fn smoothness_gradient_matches_finite_differences() {
        let mut m = icosphere(Vec3::zeros(), 1.0, 1).unwrap();
        for (i, p) in m.positions.iter_mut().enumerate() {
            *p *= 1.0 + 0.05 * ((i * 7 % 5) as f64 - 2.0);
        }
        let rig = standard_rig_six(16, 1.5).unwrap();
        let targets = render_conditions(&TriangleMesh::default(), &rig).unwrap();
        let t = LossTargets::new(&targets).unwrap();
        let (_, g) = t.evaluate(&m, &smooth_only()).unwrap();
        let h = 1e-6;
        for v in 0..m.positions.len() {
            for c in 0..3 {
                let mut mp = m.clone();
                mp.positions[v][c] += h;
                let mut mm = m.clone();
                mm.positions[v][c] -= h;
                let fd = (t.evaluate(&mp, &smooth_only()).unwrap().0.total
                    - t.evaluate(&mm, &smooth_only()).unwrap().0.total)
                    / (2.0 * h);
                let a = g[v][c];
                assert!((fd - a).abs() <= 1e-4 * a.abs().max(1e-3), "{v} {c}: {fd} vs {a}");
            }
        }
    }

    #[test]
    fn translated_triangle_gradient_points_toward_target() {
        let res = 64;
        let h = 1.0;
        let cam = OrthoCamera::new(0.0, 0.0, h, res).unwrap();
        let rig = CameraRig::new(vec![cam]).unwrap();
        let tri = TriangleMesh::new(
            vec![Vec3::new(0.4, 0.0, -0.4), Vec3::new(-0.45, 0.0, -0.35), Vec3::new(0.0, 0.0, 0.5)],
            vec![[0, 1, 2]],
        );
        let shift = cam.right() * (3.0 / cam.pixel_scale());
        let mut moved = tri.clone();
        for p in &mut moved.positions {
            *p += shift;
        }
        let targets = render_conditions(&moved, &rig).unwrap();
        let w = LossWeights {
            lambda_smooth: 0.0,
            ..Default::default()
        };
        let (_, g) = loss_and_gradients(&tri, &targets, &w).unwrap();
        for gv in &g {
            assert!((-gv).dot(&shift) > 0.0, "{gv:?}");
        }
    }

    #[test]
    fn frozen_vertices_get_zero_gradient() {
        let mut m = icosphere(Vec3::zeros(), 0.6, 1).unwrap();
        m.frozen = Some((0..m.positions.len()).map(|i| i % 2 == 0).collect());
        let rig = standard_rig_six(32, 1.0).unwrap();
        let targets = render_conditions(&icosphere(Vec3::zeros(), 0.8, 2).unwrap(), &rig).unwrap();
        let (_, g) = loss_and_gradients(&m, &targets, &LossWeights::default()).unwrap();
        for (i, gv) in g.iter().enumerate() {
            if i % 2 == 0 {
                assert_eq!(*gv, Vec3::zeros());
            }
        }
        assert!(g.iter().any(|v| v.norm() > 0.0));
    }

    #[test]
    fn invalid_weights_rejected() {
        assert!(LossWeights { w_normal: 0.0, w_alpha: 0.0, lambda_smooth: 0.0 }.check().is_err());
        assert!(LossWeights { w_normal: -1.0, ..Default::default() }.check().is_err());
    }
}
