//! Localizing edits from multiview mask differences, seeding new parts and
//! freezing the rest of a prior mesh.

use serde::{Deserialize, Serialize};

use crate::camera::OrthoCamera;
use crate::mesh::{icosphere, TriangleMesh};
use crate::render::MultiviewSet;
use crate::{Error, Result, Vec3};

pub const DEFAULT_MASK_THRESHOLD: f64 = 0.5;
pub const DEFAULT_HULL_GRID: usize = 64;
pub const DEFAULT_SEED_LEVEL: u32 = 3;

/// Axis-aligned box. A box with zero volume counts as empty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn empty() -> Self {
        Aabb {
            min: [0.0; 3],
            max: [0.0; 3],
        }
    }

    pub fn from_corners(min: Vec3, max: Vec3) -> Self {
        Aabb {
            min: min.into(),
            max: max.into(),
        }
    }

    pub fn extent(&self) -> Vec3 {
        Vec3::from(self.max) - Vec3::from(self.min)
    }

    pub fn center(&self) -> Vec3 {
        0.5 * (Vec3::from(self.max) + Vec3::from(self.min))
    }

    pub fn volume(&self) -> f64 {
        let e = self.extent();
        e.x.max(0.0) * e.y.max(0.0) * e.z.max(0.0)
    }

    pub fn is_empty(&self) -> bool {
        !(self.volume() > 0.0)
    }

    /// Closed containment test; always false for an empty box.
    pub fn contains(&self, p: &Vec3) -> bool {
        !self.is_empty() && (0..3).all(|k| p[k] >= self.min[k] && p[k] <= self.max[k])
    }

    /// Grown by `d` on every side; empty boxes stay empty.
    pub fn dilated(&self, d: f64) -> Self {
        if self.is_empty() {
            return *self;
        }
        Aabb {
            min: self.min.map(|x| x - d),
            max: self.max.map(|x| x + d),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EditMode {
    Added,
    Removed,
    Modified,
}

/// Where an edit happened: one change mask per view plus a 3D box.
#[derive(Debug, Clone, PartialEq)]
pub struct EditRegion {
    pub resolution: usize,
    /// Row-major binary masks, one per view in rig order.
    pub masks: Vec<Vec<bool>>,
    pub bounding_box: Aabb,
    pub mode: EditMode,
}

impl EditRegion {
    /// Region with no change anywhere.
    pub fn empty(views: usize, resolution: usize) -> Self {
        EditRegion {
            resolution,
            masks: vec![vec![false; resolution * resolution]; views],
            bounding_box: Aabb::empty(),
            mode: EditMode::Modified,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.bounding_box.is_empty()
    }

    pub fn changed_pixels(&self) -> usize {
        self.masks.iter().flatten().filter(|&&m| m).count()
    }

    /// Checks that the masks fit a set of views.
    pub fn check_against(&self, views: &MultiviewSet) -> Result<()> {
        if self.masks.len() != views.len() {
            return Err(Error::Contract(format!(
                "edit region has {} masks for {} views",
                self.masks.len(),
                views.len()
            )));
        }
        let n = self.resolution * self.resolution;
        if self.masks.iter().any(|m| m.len() != n) {
            return Err(Error::Contract("edit region mask size mismatch".into()));
        }
        Ok(())
    }
}

/// 3x3 erosion followed by 3x3 dilation; removes one-pixel slivers that
/// come from antialiasing differences along unchanged silhouettes.
fn open_mask(mask: &[bool], res: usize) -> Vec<bool> {
    let pass = |src: &[bool], keep_all: bool| -> Vec<bool> {
        let mut out = vec![false; src.len()];
        for y in 0..res {
            for x in 0..res {
                let mut all = true;
                let mut any = false;
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let (xx, yy) = (x as i64 + dx, y as i64 + dy);
                        let v = xx >= 0
                            && yy >= 0
                            && (xx as usize) < res
                            && (yy as usize) < res
                            && src[yy as usize * res + xx as usize];
                        all &= v;
                        any |= v;
                    }
                }
                out[y * res + x] = if keep_all { all } else { any };
            }
        }
        out
    };
    pass(&pass(mask, true), false)
}

/// Compares foreground masks of two renderings of the same rig.
///
/// Each view's change mask is the XOR of `alpha > threshold`, cleaned by a
/// morphological opening. The box comes from carving the change masks
/// against the union of both foregrounds, see [`carve_support`].
pub fn mask_diff(prior: &MultiviewSet, new: &MultiviewSet, threshold: f64) -> Result<EditRegion> {
    prior.check()?;
    new.check()?;
    if !prior.same_rig(new) {
        return Err(Error::Contract("mask_diff needs two view sets on the same rig".into()));
    }
    let res = prior.resolution();
    let mut masks = Vec::with_capacity(prior.len());
    let mut support = Vec::with_capacity(prior.len());
    let (mut added, mut removed) = (0usize, 0usize);
    for (p, n) in prior.views.iter().zip(&new.views) {
        let pm = p.mask(threshold);
        let nm = n.mask(threshold);
        let xor: Vec<bool> = pm.iter().zip(&nm).map(|(a, b)| a != b).collect();
        let opened = open_mask(&xor, res);
        for i in 0..opened.len() {
            if opened[i] {
                if nm[i] {
                    added += 1;
                } else {
                    removed += 1;
                }
            }
        }
        support.push(pm.iter().zip(&nm).map(|(a, b)| *a || *b).collect::<Vec<_>>());
        masks.push(opened);
    }
    let mode = if added > 2 * removed {
        EditMode::Added
    } else if removed > 2 * added {
        EditMode::Removed
    } else {
        EditMode::Modified
    };
    let cameras: Vec<OrthoCamera> = prior.views.iter().map(|v| v.camera).collect();
    let bounding_box = if added + removed == 0 {
        Aabb::empty()
    } else {
        carve_support(&support, &masks, &cameras, DEFAULT_HULL_GRID)?
    };
    Ok(EditRegion {
        resolution: res,
        masks,
        bounding_box,
        mode,
    })
}

/// Pixel index of a world point in `cam`, if it lands inside the frame.
fn pixel_of(cam: &OrthoCamera, p: &Vec3) -> Option<usize> {
    let (x, y, _) = cam.world_to_pixel(p);
    let r = cam.resolution as f64;
    if !(x >= 0.0 && y >= 0.0 && x < r && y < r) {
        return None;
    }
    Some(y as usize * cam.resolution + x as usize)
}

fn check_masks(masks: &[Vec<bool>], cameras: &[OrthoCamera]) -> Result<()> {
    if masks.len() != cameras.len() {
        return Err(Error::Contract("one mask per camera required".into()));
    }
    for (m, c) in masks.iter().zip(cameras) {
        c.check()?;
        if m.len() != c.resolution * c.resolution {
            return Err(Error::Contract("mask size does not match camera".into()));
        }
    }
    Ok(())
}

/// Carves a `grid^3` lattice over the cube `[-h, h]^3` (the common frame of
/// an object-centered rig) and returns the bounds of the surviving cells.
fn carve(
    cameras: &[OrthoCamera],
    grid: usize,
    survives: impl Fn(&[Option<usize>]) -> bool,
) -> Aabb {
    let h = cameras.iter().map(|c| c.half_extent).fold(0.0, f64::max);
    let cell = 2.0 * h / grid as f64;
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    let mut pix = vec![None; cameras.len()];
    for k in 0..grid {
        for j in 0..grid {
            for i in 0..grid {
                let c = Vec3::new(
                    -h + (i as f64 + 0.5) * cell,
                    -h + (j as f64 + 0.5) * cell,
                    -h + (k as f64 + 0.5) * cell,
                );
                for (slot, cam) in pix.iter_mut().zip(cameras) {
                    *slot = pixel_of(cam, &c);
                }
                if survives(&pix) {
                    lo = lo.inf(&(c - Vec3::repeat(0.5 * cell)));
                    hi = hi.sup(&(c + Vec3::repeat(0.5 * cell)));
                }
            }
        }
    }
    if lo.x > hi.x {
        Aabb::empty()
    } else {
        Aabb::from_corners(lo, hi)
    }
}

/// Coarse visual hull: a cell survives iff its center projects inside the
/// frame and onto the mask in every view. Returns the tight box of the
/// surviving cells, empty when none survive.
pub fn carve_hull(masks: &[Vec<bool>], cameras: &[OrthoCamera], grid: usize) -> Result<Aabb> {
    if cameras.len() < 2 {
        return Err(Error::Contract("carve_hull needs at least two views".into()));
    }
    check_masks(masks, cameras)?;
    Ok(carve(cameras, grid, |pix| {
        pix.iter()
            .zip(masks)
            .all(|(p, m)| p.is_some_and(|i| m[i]))
    }))
}

/// Hull of a change: a cell survives iff it projects onto `support` in
/// every view and onto `changed` in views along at least two different
/// axes, or along one axis when that leaves nothing. Opposite views share
/// an axis since they see the same rays.
///
/// A changed part can be hidden behind unchanged geometry in some views, so
/// plain intersection of the change masks would lose it; requiring the
/// combined foreground everywhere still carves away empty space, and asking
/// for two witnesses cuts the ray-shaped spill of a single view.
pub fn carve_support(
    support: &[Vec<bool>],
    changed: &[Vec<bool>],
    cameras: &[OrthoCamera],
    grid: usize,
) -> Result<Aabb> {
    if cameras.len() < 2 {
        return Err(Error::Contract("carving needs at least two views".into()));
    }
    check_masks(support, cameras)?;
    check_masks(changed, cameras)?;
    let axis: Vec<usize> = cameras
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let d = c.view_direction();
            (0..i)
                .find(|&j| cameras[j].view_direction().cross(&d).norm() < 1e-9)
                .unwrap_or(i)
        })
        .collect();
    let with_witnesses = |need: usize| {
        carve(cameras, grid, |pix| {
            let mut seen = vec![false; cameras.len()];
            for (v, p) in pix.iter().enumerate() {
                let Some(i) = *p else { return false };
                if !support[v][i] {
                    return false;
                }
                if changed[v][i] {
                    seen[axis[v]] = true;
                }
            }
            seen.iter().filter(|&&s| s).count() >= need
        })
    };
    let two = with_witnesses(2);
    Ok(if two.is_empty() { with_witnesses(1) } else { two })
}

/// Icosphere centered in the region box with radius half its largest extent.
pub fn seed_sphere(region: &EditRegion, level: u32) -> Result<TriangleMesh> {
    if region.is_empty() {
        return Err(Error::Contract("cannot seed a sphere in an empty region".into()));
    }
    let b = &region.bounding_box;
    icosphere(b.center(), 0.5 * b.extent().max(), level)
}

/// Marks prior vertices that must not change.
///
/// For an added part every prior vertex is frozen: only the new shell is
/// optimized. Otherwise vertices outside the region box grown by `dilation`
/// are frozen. An empty region freezes everything.
pub fn freeze_outside(prior: &TriangleMesh, region: &EditRegion, dilation: f64) -> TriangleMesh {
    let mut out = prior.clone();
    let frozen = if region.mode == EditMode::Added || region.is_empty() {
        vec![true; prior.num_vertices()]
    } else {
        let b = region.bounding_box.dilated(dilation);
        prior
            .positions
            .iter()
            .enumerate()
            .map(|(v, p)| prior.is_frozen(v) || !b.contains(p))
            .collect()
    };
    out.frozen = Some(frozen);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::standard_rig_six;
    use crate::mesh::cuboid;
    use crate::render::render_conditions;

    fn sphere_and_cube() -> (TriangleMesh, TriangleMesh, TriangleMesh) {
        let sphere = icosphere(Vec3::zeros(), 0.5, 3).unwrap();
        let cube = cuboid(Vec3::new(0.45, -0.15, 0.1), Vec3::new(0.75, 0.15, 0.4));
        let mut both = sphere.clone();
        both.append(&cube);
        (sphere, cube, both)
    }

    #[test]
    fn identical_views_give_empty_region() {
        let (sphere, _, _) = sphere_and_cube();
        let rig = standard_rig_six(64, 1.0).unwrap();
        let v = render_conditions(&sphere, &rig).unwrap();
        let r = mask_diff(&v, &v, DEFAULT_MASK_THRESHOLD).unwrap();
        assert_eq!(r.changed_pixels(), 0);
        assert_eq!(r.mode, EditMode::Modified);
        assert!(r.is_empty());
        let frozen = freeze_outside(&sphere, &r, 0.1);
        assert_eq!(frozen.frozen_count(), sphere.num_vertices());
    }

    #[test]
    fn added_cube_is_localized() {
        let (sphere, cube, both) = sphere_and_cube();
        let rig = standard_rig_six(128, 1.0).unwrap();
        let a = render_conditions(&sphere, &rig).unwrap();
        let b = render_conditions(&both, &rig).unwrap();
        let r = mask_diff(&a, &b, DEFAULT_MASK_THRESHOLD).unwrap();
        assert_eq!(r.mode, EditMode::Added);
        let (lo, hi) = cube.bounds().unwrap();
        let centroid = 0.5 * (lo + hi);
        assert!(r.bounding_box.contains(&centroid), "{:?}", r.bounding_box);
        let cube_vol = (hi - lo).product();
        assert!(r.bounding_box.volume() <= 8.0 * cube_vol, "{} vs {}", r.bounding_box.volume(), cube_vol);

        let swapped = mask_diff(&b, &a, DEFAULT_MASK_THRESHOLD).unwrap();
        assert_eq!(swapped.mode, EditMode::Removed);
        assert_eq!(swapped.masks, r.masks);
        assert_eq!(swapped.bounding_box, r.bounding_box);

        let frozen = freeze_outside(&sphere, &r, 0.05);
        assert_eq!(frozen.frozen_count(), sphere.num_vertices());
        assert_eq!(freeze_outside(&frozen, &r, 0.05), frozen);
    }

    #[test]
    fn hull_of_sphere_masks() {
        let r = 0.6;
        let sphere = icosphere(Vec3::zeros(), r, 4).unwrap();
        let rig = standard_rig_six(128, 1.0).unwrap();
        let views = render_conditions(&sphere, &rig).unwrap();
        let masks: Vec<_> = views.views.iter().map(|v| v.mask(0.5)).collect();
        let b = carve_hull(&masks, &rig.cameras, 64).unwrap();
        let cell = 2.0 / 64.0;
        for k in 0..3 {
            assert!((b.min[k] + r).abs() <= cell, "{:?}", b);
            assert!((b.max[k] - r).abs() <= cell, "{:?}", b);
        }
    }

    #[test]
    fn hull_edge_cases() {
        let rig = standard_rig_six(32, 1.0).unwrap();
        let n = 32 * 32;
        let full = vec![vec![true; n]; 6];
        let b = carve_hull(&full, &rig.cameras, 64).unwrap();
        for k in 0..3 {
            assert!((b.min[k] + 1.0).abs() < 1e-12 && (b.max[k] - 1.0).abs() < 1e-12, "{:?}", b);
        }
        let mut one = vec![vec![false; n]; 6];
        one[0] = vec![true; n];
        assert!(carve_hull(&one, &rig.cameras, 64).unwrap().is_empty());
        assert!(carve_hull(&full[..1], &rig.cameras[..1], 64).is_err());
    }

    #[test]
    fn seeding_and_freezing() {
        let mut region = EditRegion::empty(6, 32);
        assert!(seed_sphere(&region, 3).is_err());
        region.bounding_box = Aabb::from_corners(Vec3::repeat(-0.5), Vec3::repeat(0.5));
        let s = seed_sphere(&region, 3).unwrap();
        assert_eq!(s.num_vertices(), 642);
        for p in &s.positions {
            assert!((p.norm() - 0.5).abs() < 1e-9);
        }
        let prior = icosphere(Vec3::zeros(), 0.4, 2).unwrap();
        let f = freeze_outside(&prior, &region, 0.0);
        assert_eq!(f.frozen_count(), 0);
    }

    #[test]
    fn seed_overlaps_masks() {
        let (sphere, _, both) = sphere_and_cube();
        let rig = standard_rig_six(128, 1.0).unwrap();
        let a = render_conditions(&sphere, &rig).unwrap();
        let b = render_conditions(&both, &rig).unwrap();
        let r = mask_diff(&a, &b, DEFAULT_MASK_THRESHOLD).unwrap();
        let seed = seed_sphere(&r, DEFAULT_SEED_LEVEL).unwrap();
        let sv = render_conditions(&seed, &rig).unwrap();
        // Views where the cube hides behind the sphere have empty masks.
        for (v, m) in sv.views.iter().zip(&r.masks).filter(|(_, m)| m.contains(&true)) {
            let inter = v.mask(0.5).iter().zip(m).filter(|(a, b)| **a && **b).count();
            assert!(inter > 0);
        }
    }
}
