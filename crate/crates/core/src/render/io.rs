//! 8-bit PNG storage for view rasters.
//!
//! Color is RGB, alpha is grayscale, normals are stored straight (not
//! premultiplied) as `(n + 1) / 2` with background at mid gray. Optional
//! depth uses a 16-bit grayscale PNG spanning the camera's near/far range,
//! with the top code reserved for background.

use std::path::{Path, PathBuf};

use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};

use super::{decode_normal, encode_normal, ViewRecord};
use crate::camera::OrthoCamera;
use crate::{Error, Result};

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn image_err(path: &Path, source: image::ImageError) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        source,
    }
}

fn open(path: &Path) -> Result<image::DynamicImage> {
    image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => image_err(path, other),
    })
}

fn square_side(path: &Path, w: u32, h: u32) -> Result<usize> {
    if w != h {
        return Err(Error::bad_input(
            path.display().to_string(),
            format!("image is {w}x{h}, expected a square raster"),
        ));
    }
    Ok(w as usize)
}

pub fn write_rgb(path: &Path, resolution: usize, data: &[[f64; 3]]) -> Result<()> {
    let r = resolution as u32;
    let img = RgbImage::from_fn(r, r, |x, y| {
        let c = data[y as usize * resolution + x as usize];
        Rgb([to_u8(c[0]), to_u8(c[1]), to_u8(c[2])])
    });
    img.save(path).map_err(|e| image_err(path, e))
}

pub fn write_gray(path: &Path, resolution: usize, data: &[f64]) -> Result<()> {
    let r = resolution as u32;
    let img = GrayImage::from_fn(r, r, |x, y| Luma([to_u8(data[y as usize * resolution + x as usize])]));
    img.save(path).map_err(|e| image_err(path, e))
}

/// Reads an image as RGB in [0, 1]; returns the square side too.
pub fn read_rgb(path: &Path) -> Result<(usize, Vec<[f64; 3]>)> {
    let img = open(path)?.to_rgb8();
    let res = square_side(path, img.width(), img.height())?;
    let data = img
        .pixels()
        .map(|p| p.0.map(|c| c as f64 / 255.0))
        .collect();
    Ok((res, data))
}

pub fn read_gray(path: &Path) -> Result<(usize, Vec<f64>)> {
    let img = open(path)?.to_luma8();
    let res = square_side(path, img.width(), img.height())?;
    Ok((res, img.pixels().map(|p| p.0[0] as f64 / 255.0).collect()))
}

pub fn write_depth(path: &Path, camera: &OrthoCamera, depth: &[f64]) -> Result<()> {
    let r = camera.resolution as u32;
    let span = camera.far - camera.near;
    let img: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_fn(r, r, |x, y| {
        let d = depth[y as usize * camera.resolution + x as usize];
        let code = if d.is_finite() {
            (((d - camera.near) / span).clamp(0.0, 1.0) * 65534.0).round() as u16
        } else {
            u16::MAX
        };
        Luma([code])
    });
    img.save(path).map_err(|e| image_err(path, e))
}

pub fn read_depth(path: &Path, camera: &OrthoCamera) -> Result<Vec<f64>> {
    let img = open(path)?.to_luma16();
    let res = square_side(path, img.width(), img.height())?;
    if res != camera.resolution {
        return Err(Error::bad_input(
            path.display().to_string(),
            format!("depth is {res} pixels wide, camera expects {}", camera.resolution),
        ));
    }
    let span = camera.far - camera.near;
    Ok(img
        .pixels()
        .map(|p| match p.0[0] {
            u16::MAX => f64::INFINITY,
            c => camera.near + span * c as f64 / 65534.0,
        })
        .collect())
}

/// File paths of one stored view.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewFiles {
    pub color: PathBuf,
    pub normal: PathBuf,
    pub alpha: PathBuf,
    pub depth: Option<PathBuf>,
}

impl ViewFiles {
    /// `<dir>/<stem>_color.png` and siblings.
    pub fn in_dir(dir: &Path, stem: &str, with_depth: bool) -> Self {
        ViewFiles {
            color: dir.join(format!("{stem}_color.png")),
            normal: dir.join(format!("{stem}_normal.png")),
            alpha: dir.join(format!("{stem}_alpha.png")),
            depth: with_depth.then(|| dir.join(format!("{stem}_depth.png"))),
        }
    }
}

pub fn write_view(view: &ViewRecord, files: &ViewFiles) -> Result<()> {
    let res = view.resolution();
    write_rgb(&files.color, res, &view.color)?;
    let enc: Vec<[f64; 3]> = view
        .normal
        .iter()
        .zip(&view.alpha)
        .map(|(n, &a)| if a > 0.0 { encode_normal(*n) } else { [0.5; 3] })
        .collect();
    write_rgb(&files.normal, res, &enc)?;
    write_gray(&files.alpha, res, &view.alpha)?;
    if let (Some(path), Some(depth)) = (&files.depth, &view.depth) {
        write_depth(path, &view.camera, depth)?;
    }
    Ok(())
}

/// Loads a view and checks every raster against the camera resolution.
pub fn read_view(camera: OrthoCamera, files: &ViewFiles) -> Result<ViewRecord> {
    let check = |path: &Path, res: usize| {
        if res == camera.resolution {
            Ok(())
        } else {
            Err(Error::bad_input(
                path.display().to_string(),
                format!("raster is {res} pixels wide, manifest says {}", camera.resolution),
            ))
        }
    };
    let (rc, color) = read_rgb(&files.color)?;
    check(&files.color, rc)?;
    let (rn, enc) = read_rgb(&files.normal)?;
    check(&files.normal, rn)?;
    let (ra, alpha) = read_gray(&files.alpha)?;
    check(&files.alpha, ra)?;
    let normal = enc
        .iter()
        .zip(&alpha)
        .map(|(e, &a)| if a > 0.0 { decode_normal(*e) } else { [0.0; 3] })
        .collect();
    let depth = match &files.depth {
        Some(p) => Some(read_depth(p, &camera)?),
        None => None,
    };
    let view = ViewRecord {
        camera,
        color,
        normal,
        alpha,
        depth,
    };
    view.check().map_err(|e| Error::bad_input(files.alpha.display().to_string(), e.to_string()))?;
    Ok(view)
}

/// Rounds every raster to the values an 8-bit write/read cycle produces.
pub fn quantize_view(view: &ViewRecord) -> ViewRecord {
    let q = |v: f64| to_u8(v) as f64 / 255.0;
    let alpha: Vec<f64> = view.alpha.iter().map(|&a| q(a)).collect();
    let normal = view
        .normal
        .iter()
        .zip(&view.alpha)
        .zip(&alpha)
        .map(|((n, &a), &qa)| {
            if a > 0.0 && qa > 0.0 {
                decode_normal(encode_normal(*n).map(q))
            } else {
                [0.0; 3]
            }
        })
        .collect();
    ViewRecord {
        camera: view.camera,
        color: view.color.iter().map(|c| c.map(q)).collect(),
        normal,
        alpha,
        depth: view.depth.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::icosphere;
    use crate::render::{rasterize, Shading};
    use crate::Vec3;

    fn tmpdir(name: &str) -> PathBuf {
        let d = std::env::temp_dir().join(format!("incremesh-io-{name}-{}", std::process::id()));
        std::fs::create_dir_all(&d).unwrap();
        d
    }

    #[test]
    fn view_round_trip_within_one_code() {
        let mut m = icosphere(Vec3::zeros(), 0.7, 2).unwrap();
        m.vertex_colors = Some((0..m.num_vertices()).map(|i| [(i % 7) as f64 / 6.0, 0.3, 0.9]).collect());
        let cam = OrthoCamera::new(45.0, 0.0, 1.0, 40).unwrap();
        let v = rasterize(&m, &cam, Shading::Vertex).unwrap();
        let dir = tmpdir("round");
        let files = ViewFiles::in_dir(&dir, "v0", true);
        write_view(&v, &files).unwrap();
        let back = read_view(cam, &files).unwrap();
        let q = quantize_view(&v);
        assert_eq!(back.color, q.color);
        assert_eq!(back.alpha, q.alpha);
        for p in 0..back.alpha.len() {
            if back.alpha[p] > 0.0 {
                for c in 0..3 {
                    assert!((back.normal[p][c] - v.normal[p][c]).abs() <= 2.0 / 255.0 + 1e-12);
                    assert_eq!(back.normal[p][c], q.normal[p][c]);
                }
            }
        }
        let (d0, d1) = (v.depth.as_ref().unwrap(), back.depth.as_ref().unwrap());
        for (a, b) in d0.iter().zip(d1) {
            assert!(a == b || (a - b).abs() < 16.0 / 65534.0 * 1.01);
        }
        // A second cycle is exact.
        let files2 = ViewFiles::in_dir(&dir, "v1", false);
        write_view(&back, &files2).unwrap();
        let again = read_view(cam, &files2).unwrap();
        assert_eq!(again.color, back.color);
        assert_eq!(again.normal, back.normal);
        assert_eq!(again.alpha, back.alpha);
        std::fs::remove_dir_all(dir).ok();
    }

    #[test]
    fn wrong_size_is_bad_input() {
        let dir = tmpdir("size");
        let cam = OrthoCamera::new(0.0, 0.0, 1.0, 32).unwrap();
        let v = ViewRecord::blank(cam.with_resolution(16));
        let files = ViewFiles::in_dir(&dir, "v", false);
        write_view(&v, &files).unwrap();
        let err = read_view(cam, &files).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        std::fs::remove_dir_all(dir).ok();
    }

    #[test]
    fn missing_file_is_io_error() {
        let cam = OrthoCamera::new(0.0, 0.0, 1.0, 32).unwrap();
        let files = ViewFiles::in_dir(Path::new("/nonexistent-dir"), "v", false);
        assert!(matches!(read_view(cam, &files), Err(Error::Io { .. })));
    }
}
