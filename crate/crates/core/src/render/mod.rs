//! Forward rendering of color, normal, alpha and depth views, and the
//! differentiable multiview image loss.

pub mod io;
mod loss;
pub(crate) mod raster;

use rayon::prelude::*;

pub use loss::{loss_and_gradients, LossBreakdown, LossTargets, LossWeights};

use crate::camera::{CameraRig, OrthoCamera};
use crate::mesh::{TriangleMesh, NO_FACE};
use crate::texture::Texture;
use crate::{Error, Result, Vec3};
use raster::{composite, SceneGeometry, ViewRaster};

/// Where per-pixel normals come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Shading {
    /// Flat per-face normals.
    Face,
    /// Barycentric interpolation of area-weighted vertex normals, renormalized.
    #[default]
    Vertex,
    /// Like `Vertex`, but each corner only averages the faces around its
    /// vertex that meet the corner's face at less than [`CREASE_ANGLE_DEG`],
    /// so sharp edges stay sharp.
    Crease,
}

pub const CREASE_ANGLE_DEG: f64 = 45.0;

/// Per-corner normals for [`Shading::Crease`].
fn crease_normals(mesh: &TriangleMesh) -> Vec<[Vec3; 3]> {
    let mut around: Vec<Vec<u32>> = vec![Vec::new(); mesh.num_vertices()];
    for (f, fv) in mesh.faces.iter().enumerate() {
        for &v in fv {
            around[v as usize].push(f as u32);
        }
    }
    let cross: Vec<Vec3> = (0..mesh.num_faces()).map(|f| mesh.face_cross(f)).collect();
    let cos_limit = CREASE_ANGLE_DEG.to_radians().cos();
    mesh.faces
        .iter()
        .enumerate()
        .map(|(f, fv)| {
            let nf = cross[f].normalize();
            fv.map(|v| {
                let sum: Vec3 = around[v as usize]
                    .iter()
                    .map(|&g| cross[g as usize])
                    .filter(|c| c.norm() > 0.0 && c.normalize().dot(&nf) >= cos_limit)
                    .sum();
                let len = sum.norm();
                if len > 0.0 {
                    sum / len
                } else {
                    nf
                }
            })
        })
        .collect()
}

/// One rendered or generated view. Rasters are row-major, `resolution^2` long.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewRecord {
    pub camera: OrthoCamera,
    /// RGB in [0, 1], composited over a white background.
    pub color: Vec<[f64; 3]>,
    /// World-space normals, not premultiplied; zero on background.
    pub normal: Vec<[f64; 3]>,
    /// Coverage in [0, 1].
    pub alpha: Vec<f64>,
    /// Depth of the nearest surface (+inf on background), when known.
    pub depth: Option<Vec<f64>>,
}

impl ViewRecord {
    pub fn resolution(&self) -> usize {
        self.camera.resolution
    }

    /// View with every raster blank: white color, zero alpha and normals.
    pub fn blank(camera: OrthoCamera) -> Self {
        let n = camera.resolution * camera.resolution;
        ViewRecord {
            camera,
            color: vec![[1.0; 3]; n],
            normal: vec![[0.0; 3]; n],
            alpha: vec![0.0; n],
            depth: None,
        }
    }

    pub fn check(&self) -> Result<()> {
        self.camera.check()?;
        let n = self.camera.resolution * self.camera.resolution;
        if self.color.len() != n || self.normal.len() != n || self.alpha.len() != n {
            return Err(Error::Contract(format!(
                "view rasters must hold {n} pixels for resolution {}",
                self.camera.resolution
            )));
        }
        if self.depth.as_ref().is_some_and(|d| d.len() != n) {
            return Err(Error::Contract("depth raster size mismatch".into()));
        }
        if self.alpha.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(Error::Contract("alpha outside [0, 1]".into()));
        }
        Ok(())
    }

    /// Normals scaled by alpha, the form compared by the loss.
    pub fn premultiplied_normals(&self) -> Vec<[f64; 3]> {
        self.normal
            .iter()
            .zip(&self.alpha)
            .map(|(n, &a)| [n[0] * a, n[1] * a, n[2] * a])
            .collect()
    }

    /// Foreground mask at `alpha > threshold`.
    pub fn mask(&self, threshold: f64) -> Vec<bool> {
        self.alpha.iter().map(|&a| a > threshold).collect()
    }

    pub fn foreground_count(&self, threshold: f64) -> usize {
        self.alpha.iter().filter(|&&a| a > threshold).count()
    }

    /// Box-filtered reduction by an integer factor. Alpha and premultiplied
    /// normals are averaged; colors are averaged as composited.
    pub fn downsample(&self, factor: usize) -> Result<ViewRecord> {
        let res = self.resolution();
        if factor == 0 || res % factor != 0 {
            return Err(Error::Contract(format!(
                "cannot downsample {res} pixels by {factor}"
            )));
        }
        if factor == 1 {
            return Ok(self.clone());
        }
        let out_res = res / factor;
        let camera = self.camera.with_resolution(out_res);
        camera.check()?;
        let premult = self.premultiplied_normals();
        let k = 1.0 / (factor * factor) as f64;
        let mut out = ViewRecord::blank(camera);
        out.color = vec![[0.0; 3]; out_res * out_res];
        for y in 0..out_res {
            for x in 0..out_res {
                let o = y * out_res + x;
                let mut a = 0.0;
                let mut n = [0.0; 3];
                let mut c = [0.0; 3];
                for dy in 0..factor {
                    for dx in 0..factor {
                        let i = (y * factor + dy) * res + x * factor + dx;
                        a += self.alpha[i];
                        for ch in 0..3 {
                            n[ch] += premult[i][ch];
                            c[ch] += self.color[i][ch];
                        }
                    }
                }
                a *= k;
                out.alpha[o] = a;
                for ch in 0..3 {
                    out.color[o][ch] = c[ch] * k;
                    out.normal[o][ch] = if a > 0.0 { n[ch] * k / a } else { 0.0 };
                }
            }
        }
        Ok(out)
    }
}

/// An ordered set of views sharing resolution and extent.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiviewSet {
    pub views: Vec<ViewRecord>,
}

impl MultiviewSet {
    pub fn new(views: Vec<ViewRecord>) -> Result<Self> {
        let set = MultiviewSet { views };
        set.check()?;
        Ok(set)
    }

    pub fn check(&self) -> Result<()> {
        let first = self
            .views
            .first()
            .ok_or_else(|| Error::Contract("multiview set is empty".into()))?;
        for v in &self.views {
            v.check()?;
            if v.camera.resolution != first.camera.resolution
                || v.camera.half_extent != first.camera.half_extent
            {
                return Err(Error::Contract(
                    "views must share resolution and half_extent".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }

    pub fn resolution(&self) -> usize {
        self.views[0].resolution()
    }

    pub fn rig(&self) -> CameraRig {
        CameraRig {
            cameras: self.views.iter().map(|v| v.camera).collect(),
        }
    }

    /// Resamples every view to `resolution`, which must divide the current one.
    pub fn at_resolution(&self, resolution: usize) -> Result<MultiviewSet> {
        let res = self.resolution();
        if resolution == 0 || res % resolution != 0 {
            return Err(Error::Contract(format!(
                "render resolution {resolution} must divide target resolution {res}"
            )));
        }
        let views = self
            .views
            .iter()
            .map(|v| v.downsample(res / resolution))
            .collect::<Result<Vec<_>>>()?;
        Ok(MultiviewSet { views })
    }

    /// True when every camera matches the other set's, in order.
    pub fn same_rig(&self, other: &MultiviewSet) -> bool {
        self.views.len() == other.views.len()
            && self
                .views
                .iter()
                .zip(&other.views)
                .all(|(a, b)| a.camera == b.camera)
    }
}

/// Encodes a unit normal into [0, 1] per channel as `(n + 1) / 2`.
pub fn encode_normal(n: [f64; 3]) -> [f64; 3] {
    n.map(|c| (c + 1.0) * 0.5)
}

pub fn decode_normal(c: [f64; 3]) -> [f64; 3] {
    c.map(|v| v * 2.0 - 1.0)
}

/// Color source for [`rasterize_with`].
#[derive(Clone, Copy)]
pub enum ColorSource<'a> {
    /// Vertex colors, white where absent.
    Vertex,
    /// Bilinear lookup in a texture through the mesh's texture coordinates.
    Texture(&'a Texture),
}

/// Renders one view of `mesh`.
pub fn rasterize(mesh: &TriangleMesh, camera: &OrthoCamera, shading: Shading) -> Result<ViewRecord> {
    rasterize_with(mesh, camera, shading, ColorSource::Vertex)
}

pub fn rasterize_with(
    mesh: &TriangleMesh,
    camera: &OrthoCamera,
    shading: Shading,
    colors: ColorSource,
) -> Result<ViewRecord> {
    camera.check()?;
    mesh.check_indices()?;
    let scene = SceneGeometry::new(mesh);
    render_view(&scene, camera, shading, colors)
}

fn render_view(
    scene: &SceneGeometry,
    camera: &OrthoCamera,
    shading: Shading,
    colors: ColorSource,
) -> Result<ViewRecord> {
    let mesh = scene.mesh;
    if let ColorSource::Texture(_) = colors {
        if mesh.texcoords.is_none() {
            return Err(Error::Contract("textured render needs texture coordinates".into()));
        }
    }
    let vr = ViewRaster::new(scene, camera);
    let n = vr.res * vr.res;
    let corners = match shading {
        Shading::Crease => crease_normals(mesh),
        _ => Vec::new(),
    };
    // Channels: alpha, premultiplied normal, color over white.
    let shade = |f: u32, l: [f64; 3]| -> [f64; 7] {
        let fv = mesh.faces[f as usize];
        let normal = match shading {
            Shading::Face => mesh.face_cross(f as usize).normalize(),
            Shading::Vertex | Shading::Crease => {
                let m: Vec3 = (0..3)
                    .map(|k| match shading {
                        Shading::Crease => corners[f as usize][k] * l[k],
                        _ => scene.vertex_normals[fv[k] as usize] * l[k],
                    })
                    .sum();
                let len = m.norm();
                if len > 0.0 {
                    m / len
                } else {
                    m
                }
            }
        };
        let color = match colors {
            ColorSource::Vertex => match &mesh.vertex_colors {
                Some(vc) => {
                    let mut c = [0.0; 3];
                    for k in 0..3 {
                        for ch in 0..3 {
                            c[ch] += l[k] * vc[fv[k] as usize][ch];
                        }
                    }
                    c
                }
                None => [1.0; 3],
            },
            ColorSource::Texture(tex) => {
                let tc = mesh.texcoords.as_ref().expect("checked above");
                let tf = tc.faces[f as usize];
                let mut uv = [0.0; 2];
                for k in 0..3 {
                    uv[0] += l[k] * tc.uvs[tf[k] as usize][0];
                    uv[1] += l[k] * tc.uvs[tf[k] as usize][1];
                }
                tex.sample(uv)
            }
        };
        [1.0, normal.x, normal.y, normal.z, color[0], color[1], color[2]]
    };
    let background = [0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0];
    let mut base = vec![background; n];
    for (p, px) in base.iter_mut().enumerate() {
        if vr.face[p] != NO_FACE {
            *px = shade(vr.face[p], vr.bary[p]);
        }
    }
    let pairs = vr.pairs(scene);
    let edge_vals: Vec<[f64; 7]> = pairs
        .crossings
        .iter()
        .map(|c| {
            let fv = &mesh.faces[c.face as usize];
            let v = shade(c.face, c.at.bary(fv));
            match &c.fade {
                None => v,
                Some(fade) => {
                    let sv = &mesh.faces[fade.face as usize];
                    let [o0, o1] = fade.ends.map(|e| shade(fade.face, e.bary(sv)));
                    std::array::from_fn(|k| fade.w * v[k] + (1.0 - fade.w) * 0.5 * (o0[k] + o1[k]))
                }
            }
        })
        .collect();
    let out = composite(&base, &pairs, &edge_vals, &background);
    let mut view = ViewRecord::blank(*camera);
    for (p, px) in out.iter().enumerate() {
        let a = px[0].clamp(0.0, 1.0);
        view.alpha[p] = a;
        view.normal[p] = if a > 0.0 {
            [px[1] / a, px[2] / a, px[3] / a]
        } else {
            [0.0; 3]
        };
        view.color[p] = [px[4], px[5], px[6]].map(|c| c.clamp(0.0, 1.0));
    }
    view.depth = Some(vr.depth);
    Ok(view)
}

/// Renders one view per rig camera, in rig order.
pub fn render_conditions(mesh: &TriangleMesh, rig: &CameraRig) -> Result<MultiviewSet> {
    render_conditions_with(mesh, rig, Shading::Vertex, ColorSource::Vertex)
}

pub fn render_conditions_with(
    mesh: &TriangleMesh,
    rig: &CameraRig,
    shading: Shading,
    colors: ColorSource,
) -> Result<MultiviewSet> {
    rig.check()?;
    mesh.check_indices()?;
    let scene = SceneGeometry::new(mesh);
    let views = rig
        .cameras
        .par_iter()
        .map(|cam| render_view(&scene, cam, shading, colors))
        .collect::<Result<Vec<_>>>()?;
    Ok(MultiviewSet { views })
}

/// Depth raster of `mesh` seen from `camera` (+inf on background).
pub fn render_depth(mesh: &TriangleMesh, camera: &OrthoCamera) -> Vec<f64> {
    let scene = SceneGeometry {
        mesh,
        vertex_normals: Vec::new(),
        neighbors: Vec::new(),
    };
    ViewRaster::new(&scene, camera).depth
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::standard_rig_six;
    use crate::mesh::icosphere;

    #[test]
    fn empty_mesh_renders_white() {
        let cam = OrthoCamera::new(0.0, 0.0, 1.0, 32).unwrap();
        let v = rasterize(&TriangleMesh::default(), &cam, Shading::Vertex).unwrap();
        assert!(v.alpha.iter().all(|&a| a == 0.0));
        assert!(v.color.iter().all(|&c| c == [1.0; 3]));
    }

    #[test]
    fn white_conditions_from_empty_mesh() {
        let rig = standard_rig_six(32, 1.0).unwrap();
        let set = render_conditions(&TriangleMesh::default(), &rig).unwrap();
        assert_eq!(set.len(), 6);
        for v in &set.views {
            assert_eq!(*v, ViewRecord { depth: v.depth.clone(), ..ViewRecord::blank(v.camera) });
        }
    }

    #[test]
    fn camera_facing_normal_encoding() {
        // Square in the XZ plane facing +Y, toward the front camera.
        let m = TriangleMesh::new(
            vec![
                Vec3::new(-0.5, 0.0, -0.5),
                Vec3::new(0.5, 0.0, -0.5),
                Vec3::new(0.5, 0.0, 0.5),
                Vec3::new(-0.5, 0.0, 0.5),
            ],
            vec![[0, 2, 1], [0, 3, 2]],
        );
        assert!(m.face_cross(0).y > 0.0);
        let cam = OrthoCamera::new(0.0, 0.0, 1.0, 32).unwrap();
        let v = rasterize(&m, &cam, Shading::Face).unwrap();
        let c = 16 * 32 + 16;
        assert_eq!(v.alpha[c], 1.0);
        let enc = encode_normal(v.normal[c]);
        assert!((enc[0] - 0.5).abs() < 1e-12 && (enc[1] - 1.0).abs() < 1e-12 && (enc[2] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn quarter_frame_square_alpha() {
        // Square covering the top-left quarter of the frame in the front view.
        let h = 1.0;
        let m = TriangleMesh::new(
            vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(h, 0.0, 0.0),
                Vec3::new(h, 0.0, h),
                Vec3::new(0.0, 0.0, h),
            ],
            vec![[0, 2, 1], [0, 3, 2]],
        );
        let res = 64;
        let cam = OrthoCamera::new(0.0, 0.0, h, res).unwrap();
        let v = rasterize(&m, &cam, Shading::Face).unwrap();
        let mean = v.alpha.iter().sum::<f64>() / (res * res) as f64;
        // Analytic projected area is a quarter of the frame; the antialiased
        // perimeter is two half-frame edges long.
        let perimeter_tol = (res as f64) / (res * res) as f64;
        assert!((mean - 0.25).abs() <= perimeter_tol, "{mean}");
    }

    #[test]
    fn sphere_normals_match_analytic() {
        let m = icosphere(Vec3::zeros(), 0.9, 5).unwrap();
        let cam = OrthoCamera::new(45.0, 0.0, 1.0, 512).unwrap();
        let v = rasterize(&m, &cam, Shading::Vertex).unwrap();
        let depth = v.depth.as_ref().unwrap();
        let mut max_err: f64 = 0.0;
        for p in 0..v.alpha.len() {
            if v.alpha[p] < 1.0 || !depth[p].is_finite() {
                continue;
            }
            let (x, y) = ((p % 512) as f64 + 0.5, (p / 512) as f64 + 0.5);
            let point = cam.pixel_to_world(x, y, depth[p]);
            let n = Vec3::from(v.normal[p]);
            let ang = n.normalize().dot(&point.normalize()).clamp(-1.0, 1.0).acos();
            max_err = max_err.max(ang.to_degrees());
            assert!((n.norm() - 1.0).abs() < 0.1);
        }
        assert!(max_err < 5.0, "max angular error {max_err}");
    }

    #[test]
    fn rendering_is_thread_count_independent() {
        let m = icosphere(Vec3::new(0.1, 0.0, 0.0), 0.7, 3).unwrap();
        let rig = standard_rig_six(48, 1.0).unwrap();
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let eight = rayon::ThreadPoolBuilder::new().num_threads(8).build().unwrap();
        let a = one.install(|| render_conditions(&m, &rig).unwrap());
        let b = eight.install(|| render_conditions(&m, &rig).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn downsample_preserves_mean_alpha() {
        let m = icosphere(Vec3::zeros(), 0.6, 3).unwrap();
        let cam = OrthoCamera::new(0.0, 0.0, 1.0, 64).unwrap();
        let v = rasterize(&m, &cam, Shading::Vertex).unwrap();
        let d = v.downsample(2).unwrap();
        let ma = v.alpha.iter().sum::<f64>() / v.alpha.len() as f64;
        let md = d.alpha.iter().sum::<f64>() / d.alpha.len() as f64;
        assert!((ma - md).abs() < 1e-12);
    }

    #[test]
    fn normal_encoding_round_trip() {
        for n in [[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.577, 0.577, -0.577]] {
            let back = decode_normal(encode_normal(n));
            for c in 0..3 {
                assert!((back[c] - n[c]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn crease_shading_keeps_cube_faces_flat() {
        let cube = crate::mesh::cuboid(Vec3::repeat(-0.4), Vec3::repeat(0.4));
        let cam = OrthoCamera::new(30.0, 20.0, 1.0, 64).unwrap();
        let flat = rasterize(&cube, &cam, Shading::Face).unwrap();
        let crease = rasterize(&cube, &cam, Shading::Crease).unwrap();
        for (a, b) in flat.normal.iter().zip(&crease.normal) {
            for c in 0..3 {
                assert!((a[c] - b[c]).abs() < 1e-9);
            }
        }
        let sphere = icosphere(Vec3::zeros(), 0.6, 3).unwrap();
        let smooth = rasterize(&sphere, &cam, Shading::Vertex).unwrap();
        let crease = rasterize(&sphere, &cam, Shading::Crease).unwrap();
        assert_eq!(smooth, crease);
    }

    #[test]
    fn silhouette_sweep_is_continuous() {
        // Drag each vertex of a coarse sphere across a pixel in tiny steps;
        // premultiplied values may only drift, never jump.
        let base = icosphere(Vec3::zeros(), 0.6, 0).unwrap();
        let cam = OrthoCamera::new(30.0, 20.0, 1.0, 32).unwrap();
        let dir = Vec3::new(0.31, -0.2, 0.17).normalize();
        let step = 2e-4;
        for v in 0..base.positions.len() {
            let mut mesh = base.clone();
            let mut prev = rasterize(&mesh, &cam, Shading::Vertex).unwrap();
            for _ in 0..300 {
                mesh.positions[v] += dir * step;
                let cur = rasterize(&mesh, &cam, Shading::Vertex).unwrap();
                for p in 0..cur.alpha.len() {
                    let mut d = (cur.alpha[p] - prev.alpha[p]).abs();
                    for c in 0..3 {
                        d += (cur.normal[p][c] * cur.alpha[p] - prev.normal[p][c] * prev.alpha[p]).abs();
                    }
                    assert!(d < 0.02, "vertex {v} pixel {p} changed by {d}");
                }
                prev = cur;
            }
        }
    }
}

