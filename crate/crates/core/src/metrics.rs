//! Geometry and image metrics: Chamfer distance, volume IoU, PSNR, SSIM.

use kiddo::{ImmutableKdTree, SquaredEuclidean};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::mesh::{validate, TriangleMesh};
use crate::{Error, Result, Vec3};

pub const DEFAULT_CHAMFER_SAMPLES: usize = 100_000;
pub const DEFAULT_IOU_GRID: usize = 128;
pub const PSNR_CAP_DB: f64 = 99.0;

/// Area-uniform random points on the surface. The same seed on the same
/// mesh always yields the same points.
pub fn sample_surface(mesh: &TriangleMesh, samples: usize, seed: u64) -> Vec<Vec3> {
    let mut cdf = Vec::with_capacity(mesh.num_faces());
    let mut total = 0.0;
    for f in 0..mesh.num_faces() {
        total += mesh.face_area(f);
        cdf.push(total);
    }
    if !(total > 0.0) {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..samples)
        .map(|_| {
            let x = rng.gen::<f64>() * total;
            let f = cdf.partition_point(|&c| c <= x).min(cdf.len() - 1);
            let (r1, r2): (f64, f64) = (rng.gen(), rng.gen());
            let s = r1.sqrt();
            let [a, b, c] = mesh.faces[f].map(|v| mesh.positions[v as usize]);
            a * (1.0 - s) + b * (s * (1.0 - r2)) + c * (s * r2)
        })
        .collect()
}

/// The kd-tree cannot split many points sharing one coordinate, which flat
/// axis-aligned faces produce. Distances are rotation invariant, so both
/// point sets go through this fixed generic rotation first.
fn rotated(points: &[Vec3]) -> Vec<[f64; 3]> {
    let r = nalgebra::Rotation3::from_euler_angles(0.4142, 0.7321, 0.2361);
    points.iter().map(|p| (r * p).into()).collect()
}

/// Mean distance from each point of `from` to the nearest point of `to`.
fn mean_nearest(from: &[[f64; 3]], to: &[[f64; 3]]) -> f64 {
    let tree: ImmutableKdTree<f64, 3> = ImmutableKdTree::new_from_slice(to);
    let d: Vec<f64> = from
        .par_iter()
        .map(|p| tree.nearest_one::<SquaredEuclidean>(p).distance.sqrt())
        .collect();
    d.iter().sum::<f64>() / from.len() as f64
}

/// Symmetric Chamfer distance, raw and after normalization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Chamfer {
    /// In world units.
    pub raw: f64,
    /// After mapping the joint bounding box of both meshes into the unit
    /// cube (uniform scale by its largest side).
    pub normalized: f64,
    /// The scale used for `normalized`.
    pub scale: f64,
}

/// Mean of the two directional mean nearest-sample distances between
/// `samples` area-uniform points on each mesh.
///
/// Both meshes are sampled with the same seed, so the value is exactly
/// symmetric and `chamfer(a, a)` is zero.
pub fn chamfer(a: &TriangleMesh, b: &TriangleMesh, samples: usize, seed: u64) -> Result<Chamfer> {
    if a.is_empty() || b.is_empty() || samples == 0 {
        return Err(Error::Contract("chamfer needs two non-empty meshes and samples > 0".into()));
    }
    let pa = sample_surface(a, samples, seed);
    let pb = sample_surface(b, samples, seed);
    if pa.is_empty() || pb.is_empty() {
        return Err(Error::Contract("chamfer needs meshes with positive area".into()));
    }
    let (pa, pb) = (rotated(&pa), rotated(&pb));
    let d_ab = mean_nearest(&pa, &pb);
    let d_ba = mean_nearest(&pb, &pa);
    let raw = 0.5 * (d_ab + d_ba);
    let (la, ha) = a.bounds().unwrap();
    let (lb, hb) = b.bounds().unwrap();
    let side = (ha.sup(&hb) - la.inf(&lb)).max();
    let scale = if side > 0.0 { 1.0 / side } else { 1.0 };
    Ok(Chamfer {
        raw,
        normalized: raw * scale,
        scale,
    })
}

/// Occupancy of a regular grid by parity of ray crossings along +x.
///
/// Cell `(i, j, k)` has center `lo + (i + 0.5, j + 0.5, k + 0.5) * cell`.
/// The ray through each `(j, k)` column is nudged by a tiny irrational
/// offset so that it never passes exactly through a shared edge.
pub fn voxelize(mesh: &TriangleMesh, lo: Vec3, cell: Vec3, grid: usize) -> Vec<bool> {
    let mut occ = vec![false; grid * grid * grid];
    let nudge = (2f64.sqrt() * 1e-7, 3f64.sqrt() * 1e-7);
    let mut hits: Vec<Vec<f64>> = vec![Vec::new(); grid * grid];
    for f in &mesh.faces {
        let [a, b, c] = f.map(|v| mesh.positions[v as usize]);
        let ymin = a.y.min(b.y).min(c.y);
        let ymax = a.y.max(b.y).max(c.y);
        let zmin = a.z.min(b.z).min(c.z);
        let zmax = a.z.max(b.z).max(c.z);
        let to_idx = |v: f64, l: f64, s: f64| ((v - l) / s - 0.5).floor();
        let j0 = to_idx(ymin, lo.y, cell.y).max(0.0) as usize;
        let j1 = (to_idx(ymax, lo.y, cell.y) + 1.0).min(grid as f64 - 1.0);
        let k0 = to_idx(zmin, lo.z, cell.z).max(0.0) as usize;
        let k1 = (to_idx(zmax, lo.z, cell.z) + 1.0).min(grid as f64 - 1.0);
        if j1 < 0.0 || k1 < 0.0 {
            continue;
        }
        let d = (b.y - a.y) * (c.z - a.z) - (c.y - a.y) * (b.z - a.z);
        if d == 0.0 {
            continue;
        }
        for k in k0..=k1 as usize {
            let z = lo.z + (k as f64 + 0.5 + nudge.1) * cell.z;
            for j in j0..=j1 as usize {
                let y = lo.y + (j as f64 + 0.5 + nudge.0) * cell.y;
                // Barycentric coordinates of (y, z) in the projected triangle.
                let u = ((y - a.y) * (c.z - a.z) - (c.y - a.y) * (z - a.z)) / d;
                let v = ((b.y - a.y) * (z - a.z) - (y - a.y) * (b.z - a.z)) / d;
                if u >= 0.0 && v >= 0.0 && u + v <= 1.0 {
                    hits[k * grid + j].push(a.x + u * (b.x - a.x) + v * (c.x - a.x));
                }
            }
        }
    }
    for (col, xs) in hits.iter_mut().enumerate() {
        xs.sort_by(f64::total_cmp);
        let (k, j) = (col / grid, col % grid);
        for pair in xs.chunks_exact(2) {
            for i in 0..grid {
                let x = lo.x + (i as f64 + 0.5) * cell.x;
                if x > pair[0] && x < pair[1] {
                    occ[(k * grid + j) * grid + i] = true;
                }
            }
        }
    }
    occ
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VolumeIou {
    pub iou: f64,
    /// Parity voxelization of an open mesh is only approximate.
    pub watertight_a: bool,
    pub watertight_b: bool,
}

/// Intersection over union of the two solids on a `grid^3` lattice over
/// their joint bounding box.
pub fn volume_iou(a: &TriangleMesh, b: &TriangleMesh, grid: usize) -> Result<VolumeIou> {
    if (a.is_empty() && b.is_empty()) || grid == 0 {
        return Err(Error::Contract("volume_iou needs a non-empty mesh and grid > 0".into()));
    }
    let bounds = [a.bounds(), b.bounds()];
    let (lo, hi) = bounds
        .iter()
        .flatten()
        .fold((Vec3::repeat(f64::INFINITY), Vec3::repeat(f64::NEG_INFINITY)), |(l, h), (bl, bh)| {
            (l.inf(bl), h.sup(bh))
        });
    let cell = (hi - lo).map(|e| if e > 0.0 { e } else { 1.0 }) / grid as f64;
    let oa = voxelize(a, lo, cell, grid);
    let ob = voxelize(b, lo, cell, grid);
    let inter = oa.iter().zip(&ob).filter(|(x, y)| **x && **y).count();
    let union = oa.iter().zip(&ob).filter(|(x, y)| **x || **y).count();
    Ok(VolumeIou {
        iou: if union == 0 { 0.0 } else { inter as f64 / union as f64 },
        watertight_a: a.is_empty() || validate(a).is_watertight(),
        watertight_b: b.is_empty() || validate(b).is_watertight(),
    })
}

fn check_images(img: &[[f64; 3]], reference: &[[f64; 3]]) -> Result<()> {
    if img.len() != reference.len() || img.is_empty() {
        return Err(Error::Contract(format!(
            "image sizes differ or are empty: {} vs {} pixels",
            img.len(),
            reference.len()
        )));
    }
    Ok(())
}

/// Peak signal-to-noise ratio for values in [0, 1], over the pixels where
/// `mask` is set (all pixels when absent). Capped at 99 dB.
pub fn psnr(img: &[[f64; 3]], reference: &[[f64; 3]], mask: Option<&[bool]>) -> Result<f64> {
    check_images(img, reference)?;
    if mask.is_some_and(|m| m.len() != img.len()) {
        return Err(Error::Contract("psnr mask size differs from the image".into()));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for (i, (a, b)) in img.iter().zip(reference).enumerate() {
        if mask.is_some_and(|m| !m[i]) {
            continue;
        }
        for c in 0..3 {
            let d = a[c] - b[c];
            sum += d * d;
        }
        n += 3;
    }
    if n == 0 || sum == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    let mse = sum / n as f64;
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}

const SSIM_RADIUS: usize = 5;

fn gaussian_window() -> [f64; 2 * SSIM_RADIUS + 1] {
    let sigma: f64 = 1.5;
    let mut w = [0.0; 2 * SSIM_RADIUS + 1];
    for (i, x) in w.iter_mut().enumerate() {
        let d = i as f64 - SSIM_RADIUS as f64;
        *x = (-d * d / (2.0 * sigma * sigma)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|x| x / s)
}

/// Separable Gaussian filter keeping only fully covered positions.
fn filter_valid(src: &[f64], width: usize, height: usize) -> (Vec<f64>, usize, usize) {
    let w = gaussian_window();
    let n = w.len();
    let ow = width + 1 - n;
    let oh = height + 1 - n;
    let mut rows = vec![0.0; ow * height];
    for y in 0..height {
        for x in 0..ow {
            rows[y * ow + x] = (0..n).map(|k| w[k] * src[y * width + x + k]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|k| w[k] * rows[(y + k) * ow + x]).sum();
        }
    }
    (out, ow, oh)
}

/// Mean structural similarity over the three channels, with an 11-tap
/// Gaussian window (sigma 1.5), data range 1 and `K = (0.01, 0.03)`.
/// Images are row-major with the given width.
pub fn ssim(img: &[[f64; 3]], reference: &[[f64; 3]], width: usize) -> Result<f64> {
    check_images(img, reference)?;
    let n = 2 * SSIM_RADIUS + 1;
    if width == 0 || img.len() % width != 0 || width < n || img.len() / width < n {
        return Err(Error::Contract(format!("ssim needs images of at least {n}x{n} pixels")));
    }
    let height = img.len() / width;
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut total = 0.0;
    for ch in 0..3 {
        let x: Vec<f64> = img.iter().map(|p| p[ch]).collect();
        let y: Vec<f64> = reference.iter().map(|p| p[ch]).collect();
        let prod = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(u, v)| u * v).collect() };
        let (mx, ow, oh) = filter_valid(&x, width, height);
        let (my, _, _) = filter_valid(&y, width, height);
        let (sxx, _, _) = filter_valid(&prod(&x, &x), width, height);
        let (syy, _, _) = filter_valid(&prod(&y, &y), width, height);
        let (sxy, _, _) = filter_valid(&prod(&x, &y), width, height);
        let mut sum = 0.0;
        for i in 0..ow * oh {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cxy = sxy[i] - ux * uy;
            sum += ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
        }
        total += sum / (ow * oh) as f64;
    }
    Ok(total / 3.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{cuboid, icosphere};

    #[test]
    fn chamfer_of_identical_meshes_is_zero_and_symmetric() {
        let a = icosphere(Vec3::zeros(), 1.0, 2).unwrap();
        let b = icosphere(Vec3::new(0.2, 0.0, 0.0), 0.9, 3).unwrap();
        assert!(chamfer(&a, &a, 5000, 3).unwrap().raw.abs() < 1e-9);
        let ab = chamfer(&a, &b, 5000, 3).unwrap();
        let ba = chamfer(&b, &a, 5000, 3).unwrap();
        assert_eq!(ab, ba);
        assert!(ab.raw > 0.0);
        assert!((ab.normalized - ab.raw * ab.scale).abs() < 1e-15);
    }

    #[test]
    fn cube_iou_cases() {
        let a = cuboid(Vec3::zeros(), Vec3::repeat(1.0));
        assert!((volume_iou(&a, &a, 128).unwrap().iou - 1.0).abs() < 1e-3);
        let b = cuboid(Vec3::new(0.5, 0.0, 0.0), Vec3::new(1.5, 1.0, 1.0));
        let r = volume_iou(&a, &b, 128).unwrap();
        assert!((r.iou - 1.0 / 3.0).abs() < 0.01, "{r:?}");
        assert!(r.watertight_a && r.watertight_b);
        let c = cuboid(Vec3::repeat(2.0), Vec3::repeat(3.0));
        assert_eq!(volume_iou(&a, &c, 64).unwrap().iou, 0.0);
        assert!(volume_iou(&TriangleMesh::default(), &TriangleMesh::default(), 8).is_err());
    }

    #[test]
    fn sphere_volume_by_parity() {
        let s = icosphere(Vec3::zeros(), 1.0, 4).unwrap();
        let c = cuboid(Vec3::repeat(-1.0), Vec3::repeat(1.0));
        // Sphere inside its bounding cube: IoU is the volume ratio pi / 6.
        let r = volume_iou(&s, &c, 128).unwrap();
        assert!((r.iou - std::f64::consts::PI / 6.0).abs() < 0.01, "{r:?}");
    }

    #[test]
    fn psnr_closed_forms() {
        let a = vec![[0.5; 3]; 64];
        assert_eq!(psnr(&a, &a, None).unwrap(), 99.0);
        let b = vec![[0.5 + 1.0 / 255.0; 3]; 64];
        assert!((psnr(&a, &b, None).unwrap() - 48.1308).abs() < 1e-3);
        let mut mask = vec![false; 64];
        mask[3] = true;
        let mut c = a.clone();
        c[10] = [0.0; 3];
        assert_eq!(psnr(&c, &a, Some(&mask)).unwrap(), 99.0);
        assert!(psnr(&a, &b[..10], None).is_err());
    }

    #[test]
    fn ssim_ordering() {
        let w = 32;
        let img: Vec<[f64; 3]> = (0..w * w)
            .map(|i| {
                let (x, y) = ((i % w) as f64, (i / w) as f64);
                [(x / w as f64), (0.5 + 0.4 * (x * 0.7 + y * 0.3).sin()), (y / w as f64)]
            })
            .collect();
        let inv: Vec<[f64; 3]> = img.iter().map(|p| p.map(|c| 1.0 - c)).collect();
        let same = ssim(&img, &img, w).unwrap();
        assert!((same - 1.0).abs() < 1e-12);
        assert!(ssim(&img, &inv, w).unwrap() < same);
        assert!(ssim(&img[..50], &img[..50], 5).is_err());
    }
}
