//! Orthographic cameras and the fixed view rigs.
//!
//! Convention: world up is +Z. The azimuth-0 camera sits on the +Y axis
//! looking toward -Y, and azimuth rotates counter-clockwise about +Z. Image
//! x grows to the camera's right, image y grows downward, pixel (0, 0) is
//! the top-left pixel and pixel centers sit at half-integers. The camera's
//! right vector is right-handed (`forward x up`), so for the azimuth-0
//! camera world -X appears on the right of the image.
//!
//! Depth is the signed distance along the view direction from the plane
//! through the origin, so it grows away from the camera.

use serde::{Deserialize, Serialize};

use crate::{Error, Result, Vec3};

/// Azimuths of the six-view conditioning rig, in rig order. The first one
/// is the front view used as the edit view.
pub const SIX_VIEW_AZIMUTHS: [f64; 6] = [0.0, 45.0, 90.0, 180.0, 270.0, 315.0];

pub const DEFAULT_RESOLUTION: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrthoCamera {
    /// Degrees.
    pub azimuth: f64,
    /// Degrees.
    pub elevation: f64,
    /// Half the visible width and height, in world units.
    pub half_extent: f64,
    /// Square image side in pixels.
    pub resolution: usize,
    pub near: f64,
    pub far: f64,
}

impl OrthoCamera {
    /// Camera with default depth range `[-8 h, 8 h]` for half extent `h`.
    pub fn new(azimuth: f64, elevation: f64, half_extent: f64, resolution: usize) -> Result<Self> {
        let cam = OrthoCamera {
            azimuth,
            elevation,
            half_extent,
            resolution,
            near: -8.0 * half_extent,
            far: 8.0 * half_extent,
        };
        cam.check()?;
        Ok(cam)
    }

    pub fn check(&self) -> Result<()> {
        if !(self.half_extent > 0.0) || !self.half_extent.is_finite() {
            return Err(Error::Contract(format!(
                "camera half_extent {} must be positive",
                self.half_extent
            )));
        }
        if self.resolution < 16 {
            return Err(Error::Contract(format!(
                "camera resolution {} is below 16",
                self.resolution
            )));
        }
        if !(self.near < self.far) {
            return Err(Error::Contract("camera near must be < far".into()));
        }
        if !self.azimuth.is_finite() || !self.elevation.is_finite() {
            return Err(Error::Contract("camera angles must be finite".into()));
        }
        Ok(())
    }

    /// Same camera at another resolution.
    pub fn with_resolution(&self, resolution: usize) -> Self {
        OrthoCamera {
            resolution,
            ..*self
        }
    }

    /// Unit vector from the origin toward the camera.
    pub fn position_direction(&self) -> Vec3 {
        let (sa, ca) = self.azimuth.to_radians().sin_cos();
        let (se, ce) = self.elevation.to_radians().sin_cos();
        Vec3::new(-sa * ce, ca * ce, se)
    }

    /// Unit direction the camera looks along.
    pub fn view_direction(&self) -> Vec3 {
        -self.position_direction()
    }

    /// Image-right axis in world space; depends on azimuth only.
    pub fn right(&self) -> Vec3 {
        let (sa, ca) = self.azimuth.to_radians().sin_cos();
        Vec3::new(-ca, -sa, 0.0)
    }

    /// Image-up axis in world space (image y grows opposite to it).
    pub fn up(&self) -> Vec3 {
        self.right().cross(&self.view_direction())
    }

    /// Pixels per world unit.
    pub fn pixel_scale(&self) -> f64 {
        self.resolution as f64 / (2.0 * self.half_extent)
    }

    /// Projects a world point to `(pixel x, pixel y, depth)`.
    pub fn world_to_pixel(&self, p: &Vec3) -> (f64, f64, f64) {
        let basis = self.basis();
        basis.project(p)
    }

    /// Precomputed projection rows.
    pub fn basis(&self) -> ProjectionBasis {
        let s = self.pixel_scale();
        let half = self.resolution as f64 / 2.0;
        ProjectionBasis {
            x_row: self.right() * s,
            y_row: -self.up() * s,
            depth_row: self.view_direction(),
            offset: half,
        }
    }

    /// World point on the origin plane seen at pixel `(x, y)`, plus the view
    /// direction; the inverse of [`world_to_pixel`] at depth zero.
    ///
    /// [`world_to_pixel`]: OrthoCamera::world_to_pixel
    pub fn pixel_to_world(&self, x: f64, y: f64, depth: f64) -> Vec3 {
        let s = self.pixel_scale();
        let half = self.resolution as f64 / 2.0;
        self.right() * ((x - half) / s) - self.up() * ((y - half) / s) + self.view_direction() * depth
    }
}

/// Affine orthographic projection: pixel coordinates are dot products with
/// `x_row` / `y_row` plus `offset`.
#[derive(Debug, Clone, Copy)]
pub struct ProjectionBasis {
    pub x_row: Vec3,
    pub y_row: Vec3,
    pub depth_row: Vec3,
    pub offset: f64,
}

impl ProjectionBasis {
    #[inline]
    pub fn project(&self, p: &Vec3) -> (f64, f64, f64) {
        (
            self.x_row.dot(p) + self.offset,
            self.y_row.dot(p) + self.offset,
            self.depth_row.dot(p),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraRig {
    pub cameras: Vec<OrthoCamera>,
}

impl CameraRig {
    pub fn new(cameras: Vec<OrthoCamera>) -> Result<Self> {
        let rig = CameraRig { cameras };
        rig.check()?;
        Ok(rig)
    }

    pub fn check(&self) -> Result<()> {
        let first = self
            .cameras
            .first()
            .ok_or_else(|| Error::Contract("camera rig is empty".into()))?;
        for c in &self.cameras {
            c.check()?;
            if c.resolution != first.resolution || c.half_extent != first.half_extent {
                return Err(Error::Contract(
                    "rig cameras must share resolution and half_extent".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn from_azimuths(azimuths: &[f64], resolution: usize, half_extent: f64) -> Result<Self> {
        let cameras = azimuths
            .iter()
            .map(|&a| OrthoCamera::new(a, 0.0, half_extent, resolution))
            .collect::<Result<Vec<_>>>()?;
        Self::new(cameras)
    }

    pub fn len(&self) -> usize {
        self.cameras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cameras.is_empty()
    }

    pub fn resolution(&self) -> usize {
        self.cameras[0].resolution
    }

    pub fn half_extent(&self) -> f64 {
        self.cameras[0].half_extent
    }

    pub fn with_resolution(&self, resolution: usize) -> Self {
        CameraRig {
            cameras: self
                .cameras
                .iter()
                .map(|c| c.with_resolution(resolution))
                .collect(),
        }
    }
}

/// Six-view rig at azimuths 0, 45, 90, 180, 270 and 315 degrees, elevation 0.
pub fn standard_rig_six(resolution: usize, half_extent: f64) -> Result<CameraRig> {
    CameraRig::from_azimuths(&SIX_VIEW_AZIMUTHS, resolution, half_extent)
}

/// Eight views at 45 degree azimuth increments starting at 0, elevation 0.
pub fn training_rig_eight(resolution: usize, half_extent: f64) -> Result<CameraRig> {
    let az: Vec<f64> = (0..8).map(|i| 45.0 * i as f64).collect();
    CameraRig::from_azimuths(&az, resolution, half_extent)
}

/// Half extent that makes a bounding sphere of `radius` about the origin
/// fill 90% of the frame.
pub fn default_half_extent(radius: f64) -> f64 {
    if radius > 0.0 {
        radius / 0.9
    } else {
        1.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-9
    }

    #[test]
    fn six_view_rig_layout() {
        let rig = standard_rig_six(512, 1.0).unwrap();
        assert_eq!(rig.len(), 6);
        let az: Vec<f64> = rig.cameras.iter().map(|c| c.azimuth).collect();
        assert_eq!(az, vec![0.0, 45.0, 90.0, 180.0, 270.0, 315.0]);
        assert!(rig.cameras.iter().all(|c| c.elevation == 0.0));
        // Front view looks along -Y from +Y.
        assert!((rig.cameras[0].view_direction() - Vec3::new(0.0, -1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn eight_view_rig_layout() {
        let rig = training_rig_eight(DEFAULT_RESOLUTION, 1.0).unwrap();
        let az: Vec<f64> = rig.cameras.iter().map(|c| c.azimuth).collect();
        assert_eq!(az, vec![0.0, 45.0, 90.0, 135.0, 180.0, 225.0, 270.0, 315.0]);
        assert_eq!(rig.resolution(), 512);
        assert!(rig.cameras.iter().all(|c| c.elevation == 0.0));
    }

    #[test]
    fn origin_projects_to_center() {
        for c in standard_rig_six(64, 1.7).unwrap().cameras {
            let (x, y, _) = c.world_to_pixel(&Vec3::zeros());
            assert!(close(x, 32.0) && close(y, 32.0));
        }
    }

    #[test]
    fn front_camera_border_points() {
        let c = OrthoCamera::new(0.0, 0.0, 2.0, 100).unwrap();
        // Right-handed: world -X is on the image right for the front camera.
        let (x, y, _) = c.world_to_pixel(&Vec3::new(-2.0, 0.0, 0.0));
        assert!(close(x, 100.0) && close(y, 50.0));
        let (x, y, _) = c.world_to_pixel(&Vec3::new(0.0, 0.0, 2.0));
        assert!(close(x, 50.0) && close(y, 0.0));
    }

    #[test]
    fn unit_sphere_fills_frame() {
        let c = OrthoCamera::new(45.0, 0.0, 1.0, 64).unwrap();
        let r = c.right();
        let (x0, _, _) = c.world_to_pixel(&(-r));
        let (x1, _, _) = c.world_to_pixel(&r);
        assert!(close(x0, 0.0) && close(x1, 64.0));
    }

    #[test]
    fn moving_along_view_changes_depth_only() {
        let c = OrthoCamera::new(123.0, 20.0, 1.0, 64).unwrap();
        let p = Vec3::new(0.3, -0.2, 0.5);
        let (x0, y0, d0) = c.world_to_pixel(&p);
        let (x1, y1, d1) = c.world_to_pixel(&(p + c.view_direction() * 0.7));
        assert!(close(x0, x1) && close(y0, y1));
        assert!(close(d1 - d0, 0.7));
    }

    #[test]
    fn azimuth_wraps_and_opposes() {
        let p = Vec3::new(0.4, 0.1, -0.3);
        let a = OrthoCamera::new(30.0, 0.0, 1.0, 64).unwrap();
        let b = OrthoCamera::new(390.0, 0.0, 1.0, 64).unwrap();
        let (xa, ya, da) = a.world_to_pixel(&p);
        let (xb, yb, db) = b.world_to_pixel(&p);
        assert!(close(xa, xb) && close(ya, yb) && close(da, db));
        let c0 = OrthoCamera::new(0.0, 0.0, 1.0, 64).unwrap();
        let c180 = OrthoCamera::new(180.0, 0.0, 1.0, 64).unwrap();
        assert!((c0.view_direction() + c180.view_direction()).norm() < 1e-12);
    }

    #[test]
    fn projection_is_affine() {
        let c = OrthoCamera::new(77.0, -10.0, 1.3, 128).unwrap();
        let p = Vec3::new(0.25, -0.5, 0.75);
        let q = Vec3::new(-0.125, 0.5, 0.25);
        let (px, py, pd) = c.world_to_pixel(&p);
        let (qx, qy, qd) = c.world_to_pixel(&q);
        let (mx, my, md) = c.world_to_pixel(&((p + q) * 0.5));
        assert!(close(mx, 0.5 * (px + qx)) && close(my, 0.5 * (py + qy)) && close(md, 0.5 * (pd + qd)));
    }

    #[test]
    fn pixel_to_world_inverts_projection() {
        let c = OrthoCamera::new(200.0, 15.0, 1.5, 96).unwrap();
        let p = Vec3::new(0.3, 0.6, -0.2);
        let (x, y, d) = c.world_to_pixel(&p);
        assert!((c.pixel_to_world(x, y, d) - p).norm() < 1e-12);
    }

    #[test]
    fn invalid_cameras_rejected() {
        assert!(OrthoCamera::new(0.0, 0.0, 0.0, 64).is_err());
        assert!(OrthoCamera::new(0.0, 0.0, 1.0, 8).is_err());
        let mut c = OrthoCamera::new(0.0, 0.0, 1.0, 64).unwrap();
        c.near = c.far;
        assert!(c.check().is_err());
        assert!(CameraRig::new(vec![]).is_err());
    }
}
