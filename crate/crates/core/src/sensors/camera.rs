use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pinhole intrinsics derived from a field of view.
///
/// Camera frame: X right, Y down, Z forward. `u` is the horizontal pixel
/// coordinate, `v` the vertical one; pixel `(col, row)` covers
/// `[col, col+1) x [row, row+1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fov_degrees: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fov_degrees: f64, width: usize, height: usize) -> Result<Self> {
        if !(fov_degrees > 0.0 && fov_degrees < 180.0) {
            return Err(Error::Config(format!("field of view must lie in (0, 180), got {fov_degrees}")));
        }
        if width == 0 || height == 0 {
            return Err(Error::Config("image extent must be positive".into()));
        }
        Ok(Self {
            fov_degrees,
            width,
            height,
        })
    }

    fn half_tan(&self) -> f64 {
        (self.fov_degrees * std::f64::consts::PI / 360.0).tan()
    }

    /// `f_x = H / (2 tan(FoV·π/360))`.
    pub fn fx(&self) -> f64 {
        self.height as f64 / (2.0 * self.half_tan())
    }

    /// `f_y = W / (2 tan(FoV·π/360))`.
    pub fn fy(&self) -> f64 {
        self.width as f64 / (2.0 * self.half_tan())
    }

    /// `u_0 = H / 2`.
    pub fn u0(&self) -> f64 {
        self.height as f64 / 2.0
    }

    /// `v_0 = W / 2`.
    pub fn v0(&self) -> f64 {
        self.width as f64 / 2.0
    }

    /// Continuous image coordinates of a camera-frame point, or `None` behind the camera.
    pub fn project(&self, p: [f64; 3]) -> Option<(f64, f64)> {
        let [x, y, z] = p;
        if z <= 0.0 {
            return None;
        }
        Some((self.fx() * x / z + self.u0(), self.fy() * y / z + self.v0()))
    }

    /// Pixel `(col, row)` containing the projection, if inside the image.
    pub fn pixel(&self, p: [f64; 3]) -> Option<(usize, usize)> {
        let (u, v) = self.project(p)?;
        if u < 0.0 || v < 0.0 {
            return None;
        }
        let (c, r) = (u.floor() as usize, v.floor() as usize);
        (c < self.width && r < self.height).then_some((c, r))
    }

    /// Camera-frame point at depth `z` along the ray through `(u, v)`.
    pub fn back_project(&self, u: f64, v: f64, z: f64) -> [f64; 3] {
        [(u - self.u0()) * z / self.fx(), (v - self.v0()) * z / self.fy(), z]
    }

    /// Unnormalised ray direction (Z component 1) through pixel centre `(col, row)`.
    pub fn pixel_ray(&self, col: usize, row: usize) -> [f64; 3] {
        self.back_project(col as f64 + 0.5, row as f64 + 0.5, 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn optical_axis_hits_principal_point() {
        let cam = CameraIntrinsics::new(91.0, 1042, 1042).unwrap();
        assert_eq!(cam.project([0.0, 0.0, 10.0]), Some((521.0, 521.0)));
        assert_eq!(cam.project([0.0, 0.0, -1.0]), None);
    }

    #[test]
    fn rejects_bad_fov() {
        assert!(CameraIntrinsics::new(180.0, 4, 4).is_err());
        assert!(CameraIntrinsics::new(0.0, 4, 4).is_err());
    }
}
