//! Baking multiview color images onto a mesh, as vertex colors or as a
//! box-projected texture atlas.

use std::collections::VecDeque;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::OrthoCamera;
use crate::mesh::{build_adjacency, face_neighbors, TexCoords, TriangleMesh, NO_FACE, NON_MANIFOLD};
use crate::render::{render_depth, MultiviewSet, ViewRecord};
use crate::{Error, Result, Vec3};

/// RGB texture raster, row-major with row 0 at v = 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Texture {
    pub resolution: usize,
    pub texels: Vec<[f64; 3]>,
}

impl Texture {
    /// Bilinear lookup with texel centers at half-integers and clamped edges.
    pub fn sample(&self, uv: [f64; 2]) -> [f64; 3] {
        let r = self.resolution;
        let x = (uv[0] * r as f64 - 0.5).clamp(0.0, (r - 1) as f64);
        let y = ((1.0 - uv[1]) * r as f64 - 0.5).clamp(0.0, (r - 1) as f64);
        let (x0, y0) = (x.floor() as usize, y.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(r - 1), (y0 + 1).min(r - 1));
        let (fx, fy) = (x - x0 as f64, y - y0 as f64);
        let t = |x: usize, y: usize| self.texels[y * r + x];
        let mut out = [0.0; 3];
        for (c, o) in out.iter_mut().enumerate() {
            let top = t(x0, y0)[c] * (1.0 - fx) + t(x1, y0)[c] * fx;
            let bottom = t(x0, y1)[c] * (1.0 - fx) + t(x1, y1)[c] * fx;
            *o = top * (1.0 - fy) + bottom * fy;
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BakeMode {
    VertexColors,
    Atlas,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BakeConfig {
    pub mode: BakeMode,
    /// Side of the square atlas; a power of two, at least 256.
    pub atlas_resolution: usize,
    /// Texels of dilation around each chart.
    pub seam_padding: usize,
    /// Views seeing a surface at a cosine at or below this are ignored.
    pub min_view_cosine: f64,
}

impl Default for BakeConfig {
    fn default() -> Self {
        BakeConfig {
            mode: BakeMode::VertexColors,
            atlas_resolution: 1024,
            seam_padding: 4,
            min_view_cosine: 0.2,
        }
    }
}

impl BakeConfig {
    pub fn check(&self) -> Result<()> {
        let r = self.atlas_resolution;
        if r < 256 || !r.is_power_of_two() {
            return Err(Error::Contract(format!("atlas_resolution {r} must be a power of two >= 256")));
        }
        if !(0.0..1.0).contains(&self.min_view_cosine) {
            return Err(Error::Contract("min_view_cosine must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Views plus the mesh's own depth in each, for visibility tests.
struct Sampler<'a> {
    views: &'a [ViewRecord],
    depth: Vec<Vec<f64>>,
    tolerance: f64,
    min_cos: f64,
}

impl<'a> Sampler<'a> {
    fn new(mesh: &TriangleMesh, views: &'a MultiviewSet, min_cos: f64) -> Self {
        let depth = views.views.par_iter().map(|v| render_depth(mesh, &v.camera)).collect();
        Sampler {
            views: &views.views,
            depth,
            tolerance: 1e-3 * mesh.bbox_diagonal(),
            min_cos,
        }
    }

    /// Cosine-weighted blend over the views that see `p` unoccluded and
    /// face-on enough. `None` when no view qualifies.
    fn blend(&self, p: &Vec3, n: &Vec3) -> Option<[f64; 3]> {
        let mut acc = [0.0; 3];
        let mut wsum = 0.0;
        for (view, depth) in self.views.iter().zip(&self.depth) {
            let cam = &view.camera;
            let cos = -n.dot(&cam.view_direction());
            if !(cos > self.min_cos) {
                continue;
            }
            let (x, y, d) = cam.world_to_pixel(p);
            let r = cam.resolution as f64;
            if !(x >= 0.0 && y >= 0.0 && x < r && y < r) {
                continue;
            }
            let pix = y as usize * cam.resolution + x as usize;
            // The depth raster holds the surface at the pixel center, up to
            // about 0.71 px away; allow for the slope between the two.
            let tan = (1.0 - cos * cos).sqrt() / cos;
            let slack = 0.71 * tan / cam.pixel_scale();
            if !(d <= depth[pix] + self.tolerance + slack) {
                continue;
            }
            let Some(c) = sample_foreground(view, cam, x, y) else {
                continue;
            };
            for k in 0..3 {
                acc[k] += cos * c[k];
            }
            wsum += cos;
        }
        (wsum > 0.0).then(|| acc.map(|a| a / wsum))
    }
}

/// Bilinear color at `(x, y)` using only foreground pixels (alpha > 0.5),
/// with the white background composited out.
fn sample_foreground(view: &ViewRecord, cam: &OrthoCamera, x: f64, y: f64) -> Option<[f64; 3]> {
    let res = cam.resolution as i64;
    let (fx, fy) = (x - 0.5, y - 0.5);
    let (x0, y0) = (fx.floor() as i64, fy.floor() as i64);
    let (tx, ty) = (fx - x0 as f64, fy - y0 as f64);
    let mut acc = [0.0; 3];
    let mut wsum = 0.0;
    for (dx, dy, w) in [
        (0, 0, (1.0 - tx) * (1.0 - ty)),
        (1, 0, tx * (1.0 - ty)),
        (0, 1, (1.0 - tx) * ty),
        (1, 1, tx * ty),
    ] {
        let (px, py) = (x0 + dx, y0 + dy);
        if px < 0 || py < 0 || px >= res || py >= res || w <= 0.0 {
            continue;
        }
        let i = (py * res + px) as usize;
        let a = view.alpha[i];
        if !(a > 0.5) {
            continue;
        }
        for k in 0..3 {
            acc[k] += w * ((view.color[i][k] - (1.0 - a)) / a).clamp(0.0, 1.0);
        }
        wsum += w;
    }
    (wsum > 0.0).then(|| acc.map(|c| c / wsum))
}

/// Colors each vertex by the visibility-weighted blend of the views.
/// Vertices that no view sees take the color of the nearest colored vertex
/// along mesh edges (white if their component has none).
pub fn bake_vertex_colors(mesh: &TriangleMesh, views: &MultiviewSet, config: &BakeConfig) -> Result<TriangleMesh> {
    views.check()?;
    config.check()?;
    mesh.check_indices()?;
    let sampler = Sampler::new(mesh, views, config.min_view_cosine);
    let normals = mesh.vertex_normals();
    let colors: Vec<Option<[f64; 3]>> = mesh
        .positions
        .par_iter()
        .zip(&normals)
        .map(|(p, n)| sampler.blend(p, n))
        .collect();
    let mut out = mesh.clone();
    out.vertex_colors = Some(fill_from_neighbors(mesh, colors)?);
    Ok(out)
}

/// Breadth-first propagation of known colors to unknown vertices, in
/// vertex order so the result is deterministic.
fn fill_from_neighbors(mesh: &TriangleMesh, mut colors: Vec<Option<[f64; 3]>>) -> Result<Vec<[f64; 3]>> {
    let adj = build_adjacency(mesh)?;
    let mut queue: VecDeque<usize> = (0..colors.len()).filter(|&v| colors[v].is_some()).collect();
    while let Some(v) = queue.pop_front() {
        let c = colors[v];
        for &u in &adj.one_ring[v] {
            let u = u as usize;
            if colors[u].is_none() {
                colors[u] = c;
                queue.push_back(u);
            }
        }
    }
    Ok(colors.into_iter().map(|c| c.unwrap_or([1.0; 3])).collect())
}

/// A set of faces projected along one axis.
struct Chart {
    faces: Vec<usize>,
    /// The two world axes spanning the chart plane.
    axes: [usize; 2],
    lo: [f64; 2],
    size: [f64; 2],
    /// Texel offset in the atlas after packing.
    offset: [usize; 2],
}

/// Index of the dominant axis and sign of a face normal: 0..6 for
/// +x, -x, +y, -y, +z, -z.
fn dominant_axis(n: &Vec3) -> usize {
    let a = n.abs();
    let k = if a.x >= a.y && a.x >= a.z {
        0
    } else if a.y >= a.z {
        1
    } else {
        2
    };
    2 * k + (n[k] < 0.0) as usize
}

/// Groups faces by dominant normal direction, split into edge-connected
/// pieces.
fn make_charts(mesh: &TriangleMesh) -> Vec<Chart> {
    let group: Vec<usize> = (0..mesh.num_faces()).map(|f| dominant_axis(&mesh.face_cross(f))).collect();
    let neighbors = face_neighbors(&mesh.faces);
    let mut chart_of = vec![usize::MAX; mesh.num_faces()];
    let mut charts = Vec::new();
    for seed in 0..mesh.num_faces() {
        if chart_of[seed] != usize::MAX {
            continue;
        }
        let id = charts.len();
        let mut faces = vec![seed];
        chart_of[seed] = id;
        let mut i = 0;
        while i < faces.len() {
            let f = faces[i];
            i += 1;
            for &g in &neighbors[f] {
                if g == NO_FACE || g == NON_MANIFOLD {
                    continue;
                }
                let g = g as usize;
                if chart_of[g] == usize::MAX && group[g] == group[seed] {
                    chart_of[g] = id;
                    faces.push(g);
                }
            }
        }
        let k = group[seed] / 2;
        let axes = [(k + 1) % 3, (k + 2) % 3];
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for &f in &faces {
            for v in mesh.faces[f] {
                let p = mesh.positions[v as usize];
                for j in 0..2 {
                    lo[j] = lo[j].min(p[axes[j]]);
                    hi[j] = hi[j].max(p[axes[j]]);
                }
            }
        }
        charts.push(Chart {
            faces,
            axes,
            lo,
            size: [hi[0] - lo[0], hi[1] - lo[1]],
            offset: [0, 0],
        });
    }
    charts
}

/// Shelf packing of the charts at `scale` texels per world unit. Each chart
/// gets `pad` free texels on every side. Returns false if they do not fit.
fn pack(charts: &mut [Chart], scale: f64, pad: usize, res: usize) -> bool {
    let dims: Vec<[usize; 2]> = charts
        .iter()
        .map(|c| c.size.map(|s| (s * scale).ceil() as usize + 1 + 2 * pad))
        .collect();
    let mut order: Vec<usize> = (0..charts.len()).collect();
    order.sort_by(|&a, &b| dims[b][1].cmp(&dims[a][1]).then(a.cmp(&b)));
    let (mut x, mut y, mut shelf) = (0, 0, 0);
    for i in order {
        let [w, h] = dims[i];
        if w > res {
            return false;
        }
        if x + w > res {
            y += shelf;
            x = 0;
            shelf = 0;
        }
        if y + h > res {
            return false;
        }
        charts[i].offset = [x + pad, y + pad];
        x += w;
        shelf = shelf.max(h);
    }
    true
}

/// Box-projects the mesh into a texture atlas and fills it from the views.
///
/// Returns the mesh with per-corner texture coordinates and the atlas.
/// Texels that no view sees take the interpolated baked vertex colors, and
/// every chart is dilated by `seam_padding` texels.
pub fn bake_atlas(mesh: &TriangleMesh, views: &MultiviewSet, config: &BakeConfig) -> Result<(TriangleMesh, Texture)> {
    views.check()?;
    config.check()?;
    mesh.check_indices()?;
    let res = config.atlas_resolution;
    let pad = config.seam_padding;
    let mut charts = make_charts(mesh);
    if charts.len() * (2 * pad + 2) * (2 * pad + 2) > res * res {
        return Err(Error::AtlasOverflow {
            resolution: res,
            charts: charts.len(),
        });
    }
    let area: f64 = charts.iter().map(|c| c.size[0] * c.size[1]).sum();
    let mut scale = if area > 0.0 { (0.5 * (res * res) as f64 / area).sqrt() } else { 1.0 };
    let mut packed = false;
    for _ in 0..200 {
        if pack(&mut charts, scale, pad, res) {
            packed = true;
            break;
        }
        scale *= 0.93;
    }
    if !packed {
        return Err(Error::AtlasOverflow {
            resolution: res,
            charts: charts.len(),
        });
    }

    let texel_of = |c: &Chart, p: &Vec3| -> [f64; 2] {
        [
            c.offset[0] as f64 + (p[c.axes[0]] - c.lo[0]) * scale + 0.5,
            c.offset[1] as f64 + (p[c.axes[1]] - c.lo[1]) * scale + 0.5,
        ]
    };
    let mut uvs = Vec::with_capacity(3 * mesh.num_faces());
    let mut uv_faces = vec![[0u32; 3]; mesh.num_faces()];
    for c in &charts {
        for &f in &c.faces {
            for (k, v) in mesh.faces[f].into_iter().enumerate() {
                let t = texel_of(c, &mesh.positions[v as usize]);
                uv_faces[f][k] = uvs.len() as u32;
                uvs.push([t[0] / res as f64, 1.0 - t[1] / res as f64]);
            }
        }
    }

    let colored = bake_vertex_colors(mesh, views, config)?;
    let vertex_colors = colored.vertex_colors.as_ref().expect("baked colors");
    let sampler = Sampler::new(mesh, views, config.min_view_cosine);
    let normals = mesh.vertex_normals();

    // Rasterize every face into its chart; each texel belongs to at most one
    // face since charts do not overlap and a chart's faces tile its plane.
    let mut texels: Vec<Option<[f64; 3]>> = vec![None; res * res];
    for c in &charts {
        for &f in &c.faces {
            let fv = mesh.faces[f];
            let t = fv.map(|v| texel_of(c, &mesh.positions[v as usize]));
            let d = (t[1][0] - t[0][0]) * (t[2][1] - t[0][1]) - (t[2][0] - t[0][0]) * (t[1][1] - t[0][1]);
            if d == 0.0 {
                continue;
            }
            let xmin = t.iter().map(|q| q[0]).fold(f64::INFINITY, f64::min).floor().max(0.0) as usize;
            let xmax = (t.iter().map(|q| q[0]).fold(f64::NEG_INFINITY, f64::max).ceil() as usize).min(res - 1);
            let ymin = t.iter().map(|q| q[1]).fold(f64::INFINITY, f64::min).floor().max(0.0) as usize;
            let ymax = (t.iter().map(|q| q[1]).fold(f64::NEG_INFINITY, f64::max).ceil() as usize).min(res - 1);
            for ty in ymin..=ymax {
                for tx in xmin..=xmax {
                    let q = [tx as f64 + 0.5, ty as f64 + 0.5];
                    let l1 = ((q[0] - t[0][0]) * (t[2][1] - t[0][1]) - (t[2][0] - t[0][0]) * (q[1] - t[0][1])) / d;
                    let l2 = ((t[1][0] - t[0][0]) * (q[1] - t[0][1]) - (q[0] - t[0][0]) * (t[1][1] - t[0][1])) / d;
                    let l0 = 1.0 - l1 - l2;
                    let eps = -1e-9;
                    if l0 < eps || l1 < eps || l2 < eps {
                        continue;
                    }
                    let l = [l0, l1, l2];
                    let idx = ty * res + tx;
                    if texels[idx].is_some() {
                        continue;
                    }
                    let p: Vec3 = (0..3).map(|k| mesh.positions[fv[k] as usize] * l[k]).sum();
                    let n: Vec3 = (0..3).map(|k| normals[fv[k] as usize] * l[k]).sum();
                    let n = if n.norm() > 0.0 { n.normalize() } else { mesh.face_cross(f).normalize() };
                    let color = sampler.blend(&p, &n).unwrap_or_else(|| {
                        let mut c = [0.0; 3];
                        for k in 0..3 {
                            for ch in 0..3 {
                                c[ch] += l[k] * vertex_colors[fv[k] as usize][ch];
                            }
                        }
                        c
                    });
                    texels[idx] = Some(color);
                }
            }
        }
    }
    dilate(&mut texels, res, pad);

    let mut out = mesh.clone();
    out.texcoords = Some(TexCoords { uvs, faces: uv_faces });
    let texture = Texture {
        resolution: res,
        texels: texels.into_iter().map(|t| t.unwrap_or([1.0; 3])).collect(),
    };
    Ok((out, texture))
}

/// Grows written texels into empty neighbors, `steps` rings deep; each new
/// texel is the mean of its written 8-neighbors.
fn dilate(texels: &mut [Option<[f64; 3]>], res: usize, steps: usize) {
    for _ in 0..steps {
        let prev = texels.to_vec();
        for y in 0..res {
            for x in 0..res {
                if prev[y * res + x].is_some() {
                    continue;
                }
                let mut acc = [0.0; 3];
                let mut n = 0;
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let (xx, yy) = (x as i64 + dx, y as i64 + dy);
                        if xx < 0 || yy < 0 || xx >= res as i64 || yy >= res as i64 {
                            continue;
                        }
                        if let Some(c) = prev[yy as usize * res + xx as usize] {
                            for k in 0..3 {
                                acc[k] += c[k];
                            }
                            n += 1;
                        }
                    }
                }
                if n > 0 {
                    texels[y * res + x] = Some(acc.map(|a| a / n as f64));
                }
            }
        }
    }
}
