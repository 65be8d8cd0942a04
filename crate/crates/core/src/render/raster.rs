//! Coverage rasterization and screen-space silhouette antialiasing.
//!
//! Every pixel center is resolved to the nearest face (ties go to the lower
//! face index). Each output pixel is then the average of its four half
//! segments toward the neighboring pixel centers. A half segment that stays
//! on one surface contributes the pixel's own value. When a silhouette
//! crosses the segment between two centers, the segment is split at the
//! crossing and each part takes the value of whatever covers it: the pixel's
//! own value on its own side, the surface value at the crossing point on
//! the far side, or the background. Crossings are found by walking the mesh
//! from a covered pixel toward its neighbor, and for two background pixels
//! by intersecting camera-facing silhouette edges with the segment. A
//! crossing that reaches a pixel center carries exactly the value that
//! pixel takes once it changes sides, so the image is continuous in vertex
//! positions for generic configurations and the silhouette term is
//! differentiable.

use crate::camera::OrthoCamera;
use crate::mesh::{face_neighbors, TriangleMesh, NON_MANIFOLD, NO_FACE};
use crate::Vec3;

const MAX_WALK: usize = 64;
const MIN_AREA2: f64 = 1e-12;
/// Screen area (doubled, in square pixels) below which silhouette values fade.
const FADE_AREA2: f64 = 1.0;

#[inline]
pub(crate) fn cross2(u: [f64; 2], v: [f64; 2]) -> f64 {
    u[0] * v[1] - u[1] * v[0]
}

#[inline]
fn sub2(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

/// Mesh data shared by every view of one render pass.
pub(crate) struct SceneGeometry<'a> {
    pub mesh: &'a TriangleMesh,
    pub vertex_normals: Vec<Vec3>,
    pub neighbors: Vec<[u32; 3]>,
}

impl<'a> SceneGeometry<'a> {
    pub fn new(mesh: &'a TriangleMesh) -> Self {
        SceneGeometry {
            mesh,
            vertex_normals: mesh.vertex_normals(),
            neighbors: face_neighbors(&mesh.faces),
        }
    }
}

/// Per-view projected geometry and per-pixel nearest-face resolution.
pub(crate) struct ViewRaster {
    pub res: usize,
    pub xy: Vec<[f64; 2]>,
    /// Twice the signed screen-space area per face; negative faces point
    /// toward the camera.
    pub area2: Vec<f64>,
    pub face: Vec<u32>,
    pub bary: Vec<[f64; 3]>,
    pub depth: Vec<f64>,
    /// Number of faces covering each pixel center.
    pub layers: Vec<u16>,
}

/// A point on a mesh edge where a pixel segment's line meets it.
#[derive(Debug, Clone, Copy)]
pub(crate) struct EdgePoint {
    pub edge: [u32; 2],
    /// Position along the edge, 0 at `edge[0]`, 1 at `edge[1]`.
    pub u: f64,
    /// d u / d (x, y) of the two edge endpoints.
    pub du: [[f64; 2]; 2],
}

impl EdgePoint {
    /// Barycentric coordinates of the point in `face`.
    pub fn bary(&self, face: &[u32; 3]) -> [f64; 3] {
        let mut l = [0.0; 3];
        for k in 0..3 {
            if face[k] == self.edge[0] {
                l[k] = 1.0 - self.u;
            } else if face[k] == self.edge[1] {
                l[k] = self.u;
            }
        }
        l
    }
}

/// Blend toward the middle of the segment's chord through a nearly edge-on
/// face next to the crossing. When such a face flips facing, the silhouette
/// jumps from one of its edges to another; fading to a value that does not
/// depend on which edge was hit keeps the crossing value continuous.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Fade {
    pub face: u32,
    /// The two points where the segment's line meets the face boundary.
    pub ends: [EdgePoint; 2],
    /// Weight of the crossing point; the chord ends share `1 - w`.
    pub w: f64,
    /// d w / d (x, y) of the face corners.
    pub dw: [[f64; 2]; 3],
}

/// A silhouette edge crossing the segment between two pixel centers.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Crossing {
    /// Position along the segment from its first pixel, in [0, 1].
    pub t: f64,
    /// d t / d (x, y) of the two edge endpoints.
    pub dt: [[f64; 2]; 2],
    /// Face on the surface side of the edge.
    pub face: u32,
    pub at: EdgePoint,
    pub fade: Option<Fade>,
}

impl Crossing {
    fn reversed(mut self) -> Self {
        self.t = 1.0 - self.t;
        for d in &mut self.dt {
            d[0] = -d[0];
            d[1] = -d[1];
        }
        self
    }
}

/// Value source of a segment part.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Node {
    /// Base value of the segment's first pixel.
    A,
    /// Base value of the segment's second pixel.
    B,
    Background,
    /// Surface value at a crossing.
    Edge(u32),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Knot {
    Zero,
    One,
    At(u32),
}

/// Part `[t0, t1]` of a segment. Its share of the first pixel's half takes
/// `near`, its share of the second pixel's half takes `far`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Region {
    pub t0: Knot,
    pub t1: Knot,
    pub near: Node,
    pub far: Node,
}

impl Region {
    fn background(t0: Knot, t1: Knot) -> Self {
        Region {
            t0,
            t1,
            near: Node::Background,
            far: Node::Background,
        }
    }
}

/// Covered part of a segment between two boundary events; `None` is the
/// segment end.
type Stretch = (Option<usize>, Option<usize>);

/// A face boundary edge crossing a segment; `sign` is +1 when the segment
/// enters the face there.
#[derive(Debug, Clone, Copy)]
struct Event {
    sign: i32,
    crossing: Crossing,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct SplitPair {
    pub a: u32,
    pub b: u32,
    pub first: u32,
    pub count: u32,
}

/// Every segment split by a silhouette in one view.
#[derive(Debug, Default, Clone)]
pub(crate) struct PairSet {
    pub crossings: Vec<Crossing>,
    pub regions: Vec<Region>,
    pub pairs: Vec<SplitPair>,
    /// Per pixel: how many of its four half segments are handled by `pairs`.
    pub split_halves: Vec<u8>,
}

impl PairSet {
    fn knot(&self, k: Knot) -> f64 {
        match k {
            Knot::Zero => 0.0,
            Knot::One => 1.0,
            Knot::At(c) => self.crossings[c as usize].t,
        }
    }

    fn regions_of(&self, pair: &SplitPair) -> &[Region] {
        &self.regions[pair.first as usize..(pair.first + pair.count) as usize]
    }
}

/// Lengths of `[t0, t1]` inside `[0, 0.5]` and `[0.5, 1]`, with their
/// derivatives with respect to `t0` and `t1`.
fn half_lengths(t0: f64, t1: f64) -> ([f64; 2], [[f64; 2]; 2]) {
    let step = |c: bool| if c { 1.0 } else { 0.0 };
    let mut len = [t1.min(0.5) - t0.min(0.5), t1.max(0.5) - t0.max(0.5)];
    let mut d = [[0.0; 2]; 2];
    if len[0] > 0.0 {
        d[0] = [-step(t0 < 0.5), step(t1 < 0.5)];
    } else {
        len[0] = 0.0;
    }
    if len[1] > 0.0 {
        d[1] = [-step(t0 > 0.5), step(t1 > 0.5)];
    } else {
        len[1] = 0.0;
    }
    (len, d)
}

impl ViewRaster {
    pub fn new(scene: &SceneGeometry, camera: &OrthoCamera) -> Self {
        let mesh = scene.mesh;
        let res = camera.resolution;
        let basis = camera.basis();
        let mut xy = Vec::with_capacity(mesh.positions.len());
        let mut vdepth = Vec::with_capacity(mesh.positions.len());
        for p in &mesh.positions {
            let (x, y, d) = basis.project(p);
            xy.push([x, y]);
            vdepth.push(d);
        }
        let n = res * res;
        let mut face = vec![NO_FACE; n];
        let mut bary = vec![[0.0; 3]; n];
        let mut depth = vec![f64::INFINITY; n];
        let mut layers = vec![0u16; n];
        let mut area2 = Vec::with_capacity(mesh.faces.len());

        for (fi, f) in mesh.faces.iter().enumerate() {
            let [a, b, c] = f.map(|v| xy[v as usize]);
            let ar = cross2(sub2(b, a), sub2(c, a));
            area2.push(ar);
            if ar.abs() < MIN_AREA2 || !ar.is_finite() {
                continue;
            }
            let [za, zb, zc] = f.map(|v| vdepth[v as usize]);
            let minx = a[0].min(b[0]).min(c[0]);
            let maxx = a[0].max(b[0]).max(c[0]);
            let miny = a[1].min(b[1]).min(c[1]);
            let maxy = a[1].max(b[1]).max(c[1]);
            let x0 = ((minx - 0.5).ceil().max(0.0)) as i64;
            let x1 = ((maxx - 0.5).floor().min(res as f64 - 1.0)) as i64;
            let y0 = ((miny - 0.5).ceil().max(0.0)) as i64;
            let y1 = ((maxy - 0.5).floor().min(res as f64 - 1.0)) as i64;
            if x0 > x1 || y0 > y1 {
                continue;
            }
            let inv = 1.0 / ar;
            for py in y0..=y1 {
                let qy = py as f64 + 0.5;
                for px in x0..=x1 {
                    let q = [px as f64 + 0.5, qy];
                    let la = cross2(sub2(b, q), sub2(c, q)) * inv;
                    let lb = cross2(sub2(c, q), sub2(a, q)) * inv;
                    let lc = cross2(sub2(a, q), sub2(b, q)) * inv;
                    if la < 0.0 || lb < 0.0 || lc < 0.0 {
                        continue;
                    }
                    let z = la * za + lb * zb + lc * zc;
                    if z < camera.near || z > camera.far {
                        continue;
                    }
                    let idx = py as usize * res + px as usize;
                    layers[idx] = layers[idx].saturating_add(1);
                    if z < depth[idx] {
                        depth[idx] = z;
                        face[idx] = fi as u32;
                        bary[idx] = [la, lb, lc];
                    }
                }
            }
        }
        ViewRaster {
            res,
            xy,
            area2,
            face,
            bary,
            depth,
            layers,
        }
    }

    fn center(&self, idx: usize) -> [f64; 2] {
        [(idx % self.res) as f64 + 0.5, (idx / self.res) as f64 + 0.5]
    }

    fn is_degenerate(&self, f: u32) -> bool {
        let a = self.area2[f as usize];
        a.abs() < MIN_AREA2 || !a.is_finite()
    }

    fn is_silhouette(&self, scene: &SceneGeometry, f: u32, local_edge: usize) -> bool {
        let g = scene.neighbors[f as usize][local_edge];
        g == NO_FACE
            || g == NON_MANIFOLD
            || self.is_degenerate(g)
            || (self.area2[g as usize] > 0.0) != (self.area2[f as usize] > 0.0)
    }

    /// All segments between adjacent pixel centers that a silhouette splits,
    /// in scan order.
    pub fn pairs(&self, scene: &SceneGeometry) -> PairSet {
        let res = self.res;
        let mut set = PairSet {
            split_halves: vec![0; res * res],
            ..Default::default()
        };
        let events = self.boundary_events(scene);
        let mut ei = 0;
        for y in 0..res {
            for x in 0..res {
                let p = y * res + x;
                let right = (x + 1 < res).then_some(p + 1);
                let down = (y + 1 < res).then_some(p + res);
                for (dir, q) in [(0, right), (1, down)] {
                    let Some(q) = q else { continue };
                    let key = 2 * p + dir;
                    while ei < events.len() && events[ei].0 < key {
                        ei += 1;
                    }
                    let first = ei;
                    while ei < events.len() && events[ei].0 == key {
                        ei += 1;
                    }
                    self.split_pair(scene, p, q, &events[first..ei], &mut set);
                }
            }
        }
        set
    }

    /// Covered stretches of the segment `a -> b` as pairs of event indices,
    /// `None` standing for a segment end. Returns `None` when the layer
    /// counts implied by the events disagree with the raster.
    fn coverage(&self, a: usize, b: usize, events: &[(usize, Event)]) -> Option<Vec<Stretch>> {
        let mut count = self.layers[a] as i32;
        let mut open: Option<Option<usize>> = (count > 0).then_some(None);
        let mut out = Vec::new();
        for (k, (_, e)) in events.iter().enumerate() {
            let next = count + e.sign;
            if count > 0 && next <= 0 {
                out.push((open.take()?, Some(k)));
            } else if count <= 0 && next > 0 {
                open = Some(Some(k));
            }
            count = next;
        }
        if count != self.layers[b] as i32 {
            return None;
        }
        if let Some(start) = open {
            out.push((start, None));
        }
        Some(out)
    }

    fn split_pair(&self, scene: &SceneGeometry, a: usize, b: usize, events: &[(usize, Event)], set: &mut PairSet) {
        let (fa, fb) = (self.face[a], self.face[b]);
        if fa == fb && fa != NO_FACE {
            return;
        }
        let first = set.regions.len() as u32;
        let split = match self.coverage(a, b, events) {
            Some(stretches) if stretches.as_slice() == [(None, None)] => self.split_by_walks(scene, a, b, false, set),
            Some(stretches) => {
                if stretches.is_empty() {
                    return;
                }
                let end = |set: &mut PairSet, e: Option<usize>, at_end: Knot, own: Node| match e {
                    None => (at_end, own),
                    Some(i) => {
                        set.crossings.push(events[i].1.crossing);
                        let c = set.crossings.len() as u32 - 1;
                        (Knot::At(c), Node::Edge(c))
                    }
                };
                let event_t = |e: Option<usize>, default: f64| e.map_or(default, |i| events[i].1.crossing.t);
                let mut prev = Knot::Zero;
                for (s0, s1) in stretches {
                    // A covered end pixel whose own surface stops inside the
                    // stretch: something farther carries on beyond it.
                    let inner = match (s0, s1) {
                        (None, Some(_)) => self.walk(scene, a, b).filter(|c| c.t < event_t(s1, 1.0)),
                        (Some(_), None) => self
                            .walk(scene, b, a)
                            .map(Crossing::reversed)
                            .filter(|c| c.t > event_t(s0, 0.0)),
                        _ => None,
                    };
                    let (k0, n0) = end(set, s0, Knot::Zero, Node::A);
                    let (k1, n1) = end(set, s1, Knot::One, Node::B);
                    if k0 != Knot::Zero {
                        set.regions.push(Region::background(prev, k0));
                    }
                    match inner {
                        None => set.regions.push(Region { t0: k0, t1: k1, near: n0, far: n1 }),
                        Some(c) => {
                            set.crossings.push(c);
                            let kc = set.crossings.len() as u32 - 1;
                            let (km, nm) = (Knot::At(kc), Node::Edge(kc));
                            if s0.is_none() {
                                set.regions.push(Region { t0: k0, t1: km, near: n0, far: nm });
                                set.regions.push(Region { t0: km, t1: k1, near: n1, far: n1 });
                            } else {
                                set.regions.push(Region { t0: k0, t1: km, near: n0, far: n0 });
                                set.regions.push(Region { t0: km, t1: k1, near: nm, far: n1 });
                            }
                        }
                    }
                    prev = k1;
                }
                if prev != Knot::One {
                    set.regions.push(Region::background(prev, Knot::One));
                }
                true
            }
            None => fa != fb && self.split_by_walks(scene, a, b, true, set),
        };
        if !split {
            return;
        }
        set.pairs.push(SplitPair {
            a: a as u32,
            b: b as u32,
            first,
            count: set.regions.len() as u32 - first,
        });
        set.split_halves[a] += 1;
        set.split_halves[b] += 1;
    }

    /// Splits a segment at the silhouettes found by walking from its covered
    /// ends. Handles occlusion boundaries between two surfaces, and serves as
    /// the fallback when layer counting is inconsistent.
    fn split_by_walks(&self, scene: &SceneGeometry, a: usize, b: usize, allow_gap: bool, set: &mut PairSet) -> bool {
        let (fa, fb) = (self.face[a], self.face[b]);
        let from_a = self.walk(scene, a, b);
        let from_b = self.walk(scene, b, a).map(Crossing::reversed);
        let a_front = if fa == NO_FACE {
            false
        } else if fb == NO_FACE {
            true
        } else if self.depth[a] != self.depth[b] {
            self.depth[a] < self.depth[b]
        } else {
            fa < fb
        };
        let base = set.crossings.len() as u32;
        let k = Knot::At(base);
        let region = |t0, t1, near, far| Region { t0, t1, near, far };
        match (from_a, from_b) {
            (None, None) => return false,
            (Some(ca), Some(cb)) if allow_gap && ca.t <= cb.t => {
                // Background shows through between the two surfaces.
                set.crossings.extend([ca, cb]);
                let k1 = Knot::At(base + 1);
                set.regions.push(region(Knot::Zero, k, Node::A, Node::Edge(base)));
                set.regions.push(Region::background(k, k1));
                set.regions.push(region(k1, Knot::One, Node::Edge(base + 1), Node::B));
            }
            (Some(ca), cb) if cb.is_none() || a_front => {
                set.crossings.push(ca);
                set.regions.push(region(Knot::Zero, k, Node::A, Node::Edge(base)));
                set.regions.push(region(k, Knot::One, Node::B, Node::B));
            }
            (_, Some(cb)) => {
                set.crossings.push(cb);
                set.regions.push(region(Knot::Zero, k, Node::A, Node::A));
                set.regions.push(region(k, Knot::One, Node::Edge(base), Node::B));
            }
            (Some(_), None) => unreachable!(),
        }
        true
    }

    /// Follows the segment from `start_px` toward `end_px` through faces of
    /// the same facing until it crosses a silhouette edge. The returned `t`
    /// is measured from `start_px`.
    fn walk(&self, scene: &SceneGeometry, start_px: usize, end_px: usize) -> Option<Crossing> {
        let faces = &scene.mesh.faces;
        let start = self.center(start_px);
        let dir = sub2(self.center(end_px), start);
        let mut f = self.face[start_px];
        if f == NO_FACE {
            return None;
        }
        for _ in 0..MAX_WALK {
            let fv = faces[f as usize];
            let [a, b, c] = fv.map(|v| self.xy[v as usize]);
            let inv = 1.0 / self.area2[f as usize];
            // Barycentrics at the start point and their rate along the segment.
            let l0 = [
                cross2(sub2(b, start), sub2(c, start)) * inv,
                cross2(sub2(c, start), sub2(a, start)) * inv,
                cross2(sub2(a, start), sub2(b, start)) * inv,
            ];
            let dl = [
                cross2(sub2(c, b), dir) * inv,
                cross2(sub2(a, c), dir) * inv,
                cross2(sub2(b, a), dir) * inv,
            ];
            let mut exit: Option<(usize, f64)> = None;
            for k in 0..3 {
                if dl[k] < 0.0 {
                    let t = -l0[k] / dl[k];
                    if exit.is_none_or(|(_, te)| t < te) {
                        exit = Some((k, t));
                    }
                }
            }
            let (k, t_exit) = exit?;
            if t_exit >= 1.0 {
                return None;
            }
            // Edge opposite corner k runs from corner k+1 to corner k+2,
            // which is local edge index k+1.
            let e_local = (k + 1) % 3;
            if self.is_silhouette(scene, f, e_local) {
                return self.crossing_on(scene, start, dir, f, e_local);
            }
            f = scene.neighbors[f as usize][e_local];
        }
        None
    }

    /// Where the segment from `start` along `dir` crosses local edge `le` of
    /// face `f`.
    fn crossing_on(&self, scene: &SceneGeometry, start: [f64; 2], dir: [f64; 2], f: u32, le: usize) -> Option<Crossing> {
        let fv = scene.mesh.faces[f as usize];
        let edge = [fv[le], fv[(le + 1) % 3]];
        let (pa, pb) = (self.xy[edge[0] as usize], self.xy[edge[1] as usize]);
        let (t, dt) = crossing(start, dir, pa, pb)?;
        Some(Crossing {
            t,
            dt,
            face: f,
            at: self.edge_point(start, dir, edge),
            fade: self.fade(scene, start, dir, f, le),
        })
    }

    fn edge_point(&self, start: [f64; 2], dir: [f64; 2], edge: [u32; 2]) -> EdgePoint {
        let (pa, pb) = (self.xy[edge[0] as usize], self.xy[edge[1] as usize]);
        let (u, du) = edge_parameter(start, dir, pa, pb);
        EdgePoint {
            edge,
            u: u.clamp(0.0, 1.0),
            du,
        }
    }

    fn fade(&self, scene: &SceneGeometry, start: [f64; 2], dir: [f64; 2], f: u32, le: usize) -> Option<Fade> {
        let across = scene.neighbors[f as usize][le];
        let sliver = [Some(f), (across != NO_FACE && across != NON_MANIFOLD).then_some(across)]
            .into_iter()
            .flatten()
            .map(|g| (g, self.area2[g as usize]))
            .filter(|(_, ar)| ar.abs() < FADE_AREA2)
            .min_by(|x, y| x.1.abs().total_cmp(&y.1.abs()));
        let (face, area2) = sliver?;
        let fv = scene.mesh.faces[face as usize];
        // The two edges whose line crossings lie closest to their spans.
        let mut cands: Vec<(f64, EdgePoint)> = (0..3)
            .filter_map(|j| {
                let edge = [fv[j], fv[(j + 1) % 3]];
                let (pa, pb) = (self.xy[edge[0] as usize], self.xy[edge[1] as usize]);
                let (u, du) = edge_parameter(start, dir, pa, pb);
                let finite = u.is_finite() && du.iter().flatten().all(|d| d.is_finite());
                finite.then(|| {
                    let outside = (u - u.clamp(0.0, 1.0)).abs();
                    (outside, EdgePoint { edge, u: u.clamp(0.0, 1.0), du })
                })
            })
            .collect();
        if cands.len() < 2 {
            return None;
        }
        cands.sort_by(|x, y| x.0.total_cmp(&y.0));
        let x = area2.abs() / FADE_AREA2;
        let w = x * x * (3.0 - 2.0 * x);
        let g = area2.signum() * 6.0 * x * (1.0 - x) / FADE_AREA2;
        let [a, b, c] = fv.map(|v| self.xy[v as usize]);
        let (ba, ca) = (sub2(b, a), sub2(c, a));
        let db = [ca[1], -ca[0]];
        let dc = [-ba[1], ba[0]];
        let dw = [
            [-g * (db[0] + dc[0]), -g * (db[1] + dc[1])],
            [g * db[0], g * db[1]],
            [g * dc[0], g * dc[1]],
        ];
        Some(Fade {
            face,
            ends: [cands[0].1, cands[1].1],
            w,
            dw,
        })
    }

    /// Signed crossings of face boundary edges with every segment between
    /// adjacent pixel centers, keyed by `2 * pixel + direction` and sorted
    /// along each segment. Edges shared by two faces of the same facing
    /// cancel out and are skipped.
    fn boundary_events(&self, scene: &SceneGeometry) -> Vec<(usize, Event)> {
        let res = self.res as i64;
        let mut out = Vec::new();
        for (fi, fv) in scene.mesh.faces.iter().enumerate() {
            let f = fi as u32;
            if self.is_degenerate(f) {
                continue;
            }
            for le in 0..3 {
                if !self.is_silhouette(scene, f, le) {
                    continue;
                }
                let (p, q) = (self.xy[fv[le] as usize], self.xy[fv[(le + 1) % 3] as usize]);
                let apex = self.xy[fv[(le + 2) % 3] as usize];
                let apex_side = cross2(sub2(q, p), sub2(apex, p)) > 0.0;
                // Horizontal segments lie on rows y = j + 0.5, vertical ones
                // on columns x = i + 0.5.
                for axis in 0..2 {
                    let other = 1 - axis;
                    let span = q[other] - p[other];
                    if span == 0.0 {
                        continue;
                    }
                    let lo = p[other].min(q[other]);
                    let hi = p[other].max(q[other]);
                    let j0 = (lo - 0.5).ceil().max(0.0) as i64;
                    let j1 = (hi - 0.5).floor().min(res as f64 - 1.0) as i64;
                    for j in j0..=j1 {
                        let line = j as f64 + 0.5;
                        let x = p[axis] + (q[axis] - p[axis]) * (line - p[other]) / span;
                        let i = (x - 0.5).floor() as i64;
                        if i < 0 || i + 1 >= res {
                            continue;
                        }
                        let (a, b) = if axis == 0 {
                            ((j * res + i) as usize, (j * res + i + 1) as usize)
                        } else {
                            ((i * res + j) as usize, ((i + 1) * res + j) as usize)
                        };
                        let start = self.center(a);
                        let dir = sub2(self.center(b), start);
                        let entering = (cross2(sub2(q, p), dir) > 0.0) == apex_side;
                        if let Some(crossing) = self.crossing_on(scene, start, dir, f, le) {
                            let sign = if entering { 1 } else { -1 };
                            out.push((2 * a + axis, Event { sign, crossing }));
                        }
                    }
                }
            }
        }
        out.sort_by(|x, y| x.0.cmp(&y.0).then(x.1.crossing.t.total_cmp(&y.1.crossing.t)));
        out
    }
}

/// Parameter `t` where `start + t * dir` meets the line through `a`, `b`,
/// with its derivatives with respect to `a` and `b`.
pub(crate) fn crossing(
    start: [f64; 2],
    dir: [f64; 2],
    a: [f64; 2],
    b: [f64; 2],
) -> Option<(f64, [[f64; 2]; 2])> {
    let e = sub2(b, a);
    let w = sub2(a, start);
    let num = cross2(e, w);
    let den = cross2(e, dir);
    if den.abs() < 1e-300 {
        return None;
    }
    let t = num / den;
    if !(0.0..=1.0).contains(&t) {
        return None;
    }
    // d num / d a, d num / d b
    let dn_a = [-(b[1] - start[1]), b[0] - start[0]];
    let dn_b = [a[1] - start[1], -(a[0] - start[0])];
    let dd_a = [-dir[1], dir[0]];
    let dd_b = [dir[1], -dir[0]];
    let inv = 1.0 / den;
    let ds = [
        [
            (dn_a[0] - t * dd_a[0]) * inv,
            (dn_a[1] - t * dd_a[1]) * inv,
        ],
        [
            (dn_b[0] - t * dd_b[0]) * inv,
            (dn_b[1] - t * dd_b[1]) * inv,
        ],
    ];
    Some((t, ds))
}

/// Position `u` along `a -> b` where the line `start + t * dir` meets it,
/// with derivatives with respect to `a` and `b`.
pub(crate) fn edge_parameter(
    start: [f64; 2],
    dir: [f64; 2],
    a: [f64; 2],
    b: [f64; 2],
) -> (f64, [[f64; 2]; 2]) {
    let den = cross2(sub2(b, a), dir);
    let u = cross2(sub2(start, a), dir) / den;
    let perp = [dir[1] / den, -dir[0] / den];
    (
        u,
        [
            [(u - 1.0) * perp[0], (u - 1.0) * perp[1]],
            [-u * perp[0], -u * perp[1]],
        ],
    )
}

fn node_value<const C: usize>(
    node: Node,
    pair: &SplitPair,
    base: &[[f64; C]],
    edge_vals: &[[f64; C]],
    background: &[f64; C],
) -> [f64; C] {
    match node {
        Node::A => base[pair.a as usize],
        Node::B => base[pair.b as usize],
        Node::Background => *background,
        Node::Edge(c) => edge_vals[c as usize],
    }
}

fn unsplit_share<const C: usize>(values: &[[f64; C]], split_halves: &[u8]) -> Vec<[f64; C]> {
    values
        .iter()
        .zip(split_halves)
        .map(|(v, &h)| {
            let k = 0.25 * (4 - h) as f64;
            v.map(|c| c * k)
        })
        .collect()
}

/// Applies the cross filter. `edge_vals[k]` is the surface value at
/// `pairs.crossings[k]`.
pub(crate) fn composite<const C: usize>(
    base: &[[f64; C]],
    pairs: &PairSet,
    edge_vals: &[[f64; C]],
    background: &[f64; C],
) -> Vec<[f64; C]> {
    let mut out = unsplit_share(base, &pairs.split_halves);
    for pair in &pairs.pairs {
        for r in pairs.regions_of(pair) {
            let (len, _) = half_lengths(pairs.knot(r.t0), pairs.knot(r.t1));
            for (side, node, px) in [(0, r.near, pair.a), (1, r.far, pair.b)] {
                if len[side] > 0.0 {
                    let v = node_value(node, pair, base, edge_vals, background);
                    let w = 0.5 * len[side];
                    for c in 0..C {
                        out[px as usize][c] += w * v[c];
                    }
                }
            }
        }
    }
    out
}

/// Gradient of [`composite`]. Returns `d loss / d base` and fills
/// `d loss / d t` and `d loss / d edge value` per crossing.
pub(crate) fn composite_backward<const C: usize>(
    base: &[[f64; C]],
    pairs: &PairSet,
    edge_vals: &[[f64; C]],
    background: &[f64; C],
    grad_out: &[[f64; C]],
    grad_t: &mut Vec<f64>,
    grad_edge: &mut Vec<[f64; C]>,
) -> Vec<[f64; C]> {
    let mut gb = unsplit_share(grad_out, &pairs.split_halves);
    grad_t.clear();
    grad_t.resize(pairs.crossings.len(), 0.0);
    grad_edge.clear();
    grad_edge.resize(pairs.crossings.len(), [0.0; C]);
    for pair in &pairs.pairs {
        for r in pairs.regions_of(pair) {
            let (len, dlen) = half_lengths(pairs.knot(r.t0), pairs.knot(r.t1));
            for (side, node, px) in [(0, r.near, pair.a), (1, r.far, pair.b)] {
                if len[side] <= 0.0 {
                    continue;
                }
                let g = grad_out[px as usize];
                let v = node_value(node, pair, base, edge_vals, background);
                let dot: f64 = (0..C).map(|c| g[c] * v[c]).sum();
                for (knot, d) in [(r.t0, dlen[side][0]), (r.t1, dlen[side][1])] {
                    if let Knot::At(k) = knot {
                        grad_t[k as usize] += 0.5 * d * dot;
                    }
                }
                let target = match node {
                    Node::A => &mut gb[pair.a as usize],
                    Node::B => &mut gb[pair.b as usize],
                    Node::Edge(k) => &mut grad_edge[k as usize],
                    Node::Background => continue,
                };
                let w = 0.5 * len[side];
                for c in 0..C {
                    target[c] += w * g[c];
                }
            }
        }
    }
    gb
}

/// Backpropagates `d loss / d lambda` at pixel center `q` of the screen
/// triangle `(a, b, c)` into `d loss / d (a, b, c)`.
pub(crate) fn bary_backward(
    tri: [[f64; 2]; 3],
    q: [f64; 2],
    lambda: [f64; 3],
    g_lambda: [f64; 3],
) -> [[f64; 2]; 3] {
    let [a, b, c] = tri;
    let area = cross2(sub2(b, a), sub2(c, a));
    let inv = 1.0 / area;
    // lambda_k = N_k / A
    let gn = [g_lambda[0] * inv, g_lambda[1] * inv, g_lambda[2] * inv];
    let ga = -(g_lambda[0] * lambda[0] + g_lambda[1] * lambda[1] + g_lambda[2] * lambda[2]) * inv;
    let (aq, bq, cq) = (sub2(a, q), sub2(b, q), sub2(c, q));
    let mut out = [[0.0; 2]; 3];
    // N_a = cross(b - q, c - q)
    out[1][0] += gn[0] * cq[1];
    out[1][1] -= gn[0] * cq[0];
    out[2][0] -= gn[0] * bq[1];
    out[2][1] += gn[0] * bq[0];
    // N_b = cross(c - q, a - q)
    out[2][0] += gn[1] * aq[1];
    out[2][1] -= gn[1] * aq[0];
    out[0][0] -= gn[1] * cq[1];
    out[0][1] += gn[1] * cq[0];
    // N_c = cross(a - q, b - q)
    out[0][0] += gn[2] * bq[1];
    out[0][1] -= gn[2] * bq[0];
    out[1][0] -= gn[2] * aq[1];
    out[1][1] += gn[2] * aq[0];
    // A = cross(b - a, c - a)
    let (ba, ca) = (sub2(b, a), sub2(c, a));
    let da_b = [ca[1], -ca[0]];
    let da_c = [-ba[1], ba[0]];
    out[1][0] += ga * da_b[0];
    out[1][1] += ga * da_b[1];
    out[2][0] += ga * da_c[0];
    out[2][1] += ga * da_c[1];
    out[0][0] -= ga * (da_b[0] + da_c[0]);
    out[0][1] -= ga * (da_b[1] + da_c[1]);
    out
}
