//! Depth, event, LiDAR and HHA frame encoders.

use crate::error::{Error, Result};
use crate::sensors::{CameraIntrinsics, EventStream, FrameKind, ModalityFrame, PointCloud};
use crate::tensor::Tensor;

/// LiDAR range in metres; also the far end of the inverse-depth encoding.
pub const LIDAR_MAX_RANGE: f64 = 100.0;
/// Near end of the inverse-depth encoding (maps to 1.0).
pub const LIDAR_MIN_RANGE: f64 = 1.0;

fn plane_dims(depth: &Tensor) -> Result<(usize, usize)> {
    match *depth.shape() {
        [h, w] => Ok((h, w)),
        ref s => Err(Error::dim("depth", format!("expected an H x W map, got {s:?}"))),
    }
}

/// Log-scaled depth: `ln(1 + d) / ln(1 + d_max)`, replicated to three channels.
/// Depths beyond `d_max` saturate at 1.
pub fn depth_to_frame(depth: &Tensor, d_max: f64) -> Result<ModalityFrame> {
    if !(d_max > 0.0) {
        return Err(Error::Config(format!("d_max must be positive, got {d_max}")));
    }
    let (h, w) = plane_dims(depth)?;
    let denom = d_max.ln_1p();
    let mut plane = Vec::with_capacity(h * w);
    for (i, &d) in depth.data().iter().enumerate() {
        if !(d > 0.0) {
            return Err(Error::Data(format!(
                "non-positive depth {d} at (row {}, col {})",
                i / w,
                i % w
            )));
        }
        plane.push((d.ln_1p() / denom).min(1.0));
    }
    ModalityFrame::gray(FrameKind::Depth, &plane, h, w)
}

/// Last-event-wins rendering: blue for positive, red for negative, zeros elsewhere.
///
/// "Last" is the largest timestamp; equal timestamps resolve to the later list entry.
pub fn events_to_frame(stream: &EventStream, width: usize, height: usize) -> Result<ModalityFrame> {
    stream.validate(width, height)?;
    let hw = width * height;
    let mut last: Vec<Option<(u64, i8)>> = vec![None; hw];
    for e in &stream.events {
        let slot = &mut last[e.y * width + e.x];
        if slot.is_none_or(|(t, _)| e.t >= t) {
            *slot = Some((e.t, e.polarity));
        }
    }
    let mut data = vec![0.0; 3 * hw];
    for (p, s) in last.iter().enumerate() {
        match s {
            Some((_, 1)) => data[2 * hw + p] = 1.0,
            Some((_, _)) => data[p] = 1.0,
            None => {}
        }
    }
    ModalityFrame::new(FrameKind::Event, Tensor::new(vec![3, height, width], data)?)
}

/// Projected LiDAR frame plus the metric z-buffer (0 where no point landed).
#[derive(Debug, Clone, PartialEq)]
pub struct LidarProjection {
    pub frame: ModalityFrame,
    pub depth: Tensor,
    /// Per-pixel class of the winning point, when the cloud carries classes.
    pub class_ids: Vec<Option<u32>>,
}

/// Normalised inverse depth in `[0, 1]`: 1 at [`LIDAR_MIN_RANGE`], 0 at [`LIDAR_MAX_RANGE`].
pub fn inverse_depth_code(z: f64) -> f64 {
    let lo = 1.0 / LIDAR_MAX_RANGE;
    let hi = 1.0 / LIDAR_MIN_RANGE;
    ((1.0 / z - lo) / (hi - lo)).clamp(0.0, 1.0)
}

pub fn check_rotation(r: &[[f64; 3]; 3]) -> Result<()> {
    let mut worst = 0.0f64;
    for i in 0..3 {
        for j in 0..3 {
            let dot: f64 = (0..3).map(|k| r[k][i] * r[k][j]).sum();
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((dot - target).abs());
        }
    }
    if worst > 1e-6 || !worst.is_finite() {
        return Err(Error::Config(format!("rotation is not orthonormal (deviation {worst:e})")));
    }
    Ok(())
}

pub fn apply_rigid(r: &[[f64; 3]; 3], t: &[f64; 3], p: [f64; 3]) -> [f64; 3] {
    let mut out = *t;
    for (i, o) in out.iter_mut().enumerate() {
        *o += r[i][0] * p[0] + r[i][1] * p[1] + r[i][2] * p[2];
    }
    out
}

pub const IDENTITY: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

/// Projects `R·p + t` through the pinhole model with a nearest-Z z-buffer.
pub fn lidar_to_frame(
    cloud: &PointCloud,
    cam: &CameraIntrinsics,
    r: &[[f64; 3]; 3],
    t: &[f64; 3],
) -> Result<LidarProjection> {
    check_rotation(r)?;
    cloud.validate()?;
    let (w, h) = (cam.width, cam.height);
    let mut zbuf = vec![f64::INFINITY; h * w];
    let mut class_ids = vec![None; h * w];
    for p in &cloud.points {
        let pc = apply_rigid(r, t, p.xyz);
        let Some((col, row)) = cam.pixel(pc) else { continue };
        let idx = row * w + col;
        if pc[2] < zbuf[idx] {
            zbuf[idx] = pc[2];
            class_ids[idx] = p.class_id;
        }
    }
    let depth: Vec<f64> = zbuf.iter().map(|&z| if z.is_finite() { z } else { 0.0 }).collect();
    let plane: Vec<f64> = depth
        .iter()
        .map(|&z| if z > 0.0 { inverse_depth_code(z) } else { 0.0 })
        .collect();
    Ok(LidarProjection {
        frame: ModalityFrame::gray(FrameKind::Lidar, &plane, h, w)?,
        depth: Tensor::new(vec![h, w], depth)?,
        class_ids,
    })
}

/// Simplified HHA: min/max-normalised disparity, height above the lowest
/// back-projected point (up = -Y), and the angle between the camera-facing
/// surface normal and the up axis mapped from `[0, π]` to `[0, 1]`.
pub fn depth_to_hha(depth: &Tensor, cam: &CameraIntrinsics) -> Result<ModalityFrame> {
    let (h, w) = plane_dims(depth)?;
    if (h, w) != (cam.height, cam.width) {
        return Err(Error::dim(
            "depth",
            format!("{h}x{w} map does not match {}x{} intrinsics", cam.height, cam.width),
        ));
    }
    let d = depth.data();
    if let Some(i) = d.iter().position(|&v| !(v > 0.0)) {
        return Err(Error::Data(format!("non-positive depth at (row {}, col {})", i / w, i % w)));
    }
    let hw = h * w;
    let pts: Vec<[f64; 3]> = (0..hw)
        .map(|i| cam.back_project((i % w) as f64 + 0.5, (i / w) as f64 + 0.5, d[i]))
        .collect();

    let disp: Vec<f64> = d.iter().map(|v| 1.0 / v).collect();
    let (dmin, dmax) = min_max(&disp);
    let heights: Vec<f64> = pts.iter().map(|p| -p[1]).collect();
    let (hmin, hmax) = min_max(&heights);

    let mut data = vec![0.0; 3 * hw];
    for i in 0..hw {
        data[i] = if dmax > dmin { (disp[i] - dmin) / (dmax - dmin) } else { 1.0 };
        data[hw + i] = if hmax > hmin { (heights[i] - hmin) / (hmax - hmin) } else { 0.0 };
        data[2 * hw + i] = normal_angle(&pts, h, w, i / w, i % w) / std::f64::consts::PI;
    }
    ModalityFrame::new(FrameKind::Hha, Tensor::new(vec![3, h, w], data)?)
}

fn min_max(v: &[f64]) -> (f64, f64) {
    v.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

fn normal_angle(pts: &[[f64; 3]], h: usize, w: usize, r: usize, c: usize) -> f64 {
    let at = |rr: usize, cc: usize| pts[rr * w + cc];
    let diff = |a: [f64; 3], b: [f64; 3]| [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    let (c0, c1) = (c.saturating_sub(1), (c + 1).min(w - 1));
    let (r0, r1) = (r.saturating_sub(1), (r + 1).min(h - 1));
    if c0 == c1 || r0 == r1 {
        return std::f64::consts::FRAC_PI_2;
    }
    let dx = diff(at(r, c1), at(r, c0));
    let dy = diff(at(r1, c), at(r0, c));
    let mut n = [
        dx[1] * dy[2] - dx[2] * dy[1],
        dx[2] * dy[0] - dx[0] * dy[2],
        dx[0] * dy[1] - dx[1] * dy[0],
    ];
    let norm = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
    if !(norm > 1e-12) {
        return std::f64::consts::FRAC_PI_2;
    }
    // orient towards the camera
    let p = at(r, c);
    if n[0] * p[0] + n[1] * p[1] + n[2] * p[2] > 0.0 {
        n = [-n[0], -n[1], -n[2]];
    }
    let cos_up = (-n[1] / norm).clamp(-1.0, 1.0);
    cos_up.acos()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sensors::{Event, LidarPoint};

    #[test]
    fn depth_endpoints_and_midpoint() {
        let d_max = 80.0;
        let mid = (1.0f64 + d_max).sqrt() - 1.0;
        let t = Tensor::new(vec![1, 3], vec![d_max, 1e-300, mid]).unwrap();
        let f = depth_to_frame(&t, d_max).unwrap();
        assert_eq!(f.data.data()[0], 1.0);
        assert!(f.data.data()[1] < 1e-300);
        assert!((f.data.data()[2] - 0.5).abs() < 1e-15);
        assert!(depth_to_frame(&Tensor::new(vec![1, 1], vec![0.0]).unwrap(), 1.0).is_err());
    }

    #[test]
    fn event_last_wins() {
        let s = EventStream {
            events: vec![
                Event { x: 1, y: 0, t: 1, polarity: 1 },
                Event { x: 1, y: 0, t: 2, polarity: -1 },
            ],
            t0: 0,
            t1: 3,
        };
        let f = events_to_frame(&s, 2, 1).unwrap();
        assert_eq!(f.data.data(), &[0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        let bad = EventStream {
            events: vec![Event { x: 2, y: 0, t: 0, polarity: 1 }],
            t0: 0,
            t1: 1,
        };
        let err = events_to_frame(&bad, 2, 1).unwrap_err().to_string();
        assert!(err.contains("event 0"), "{err}");
    }

    #[test]
    fn zbuffer_keeps_nearest() {
        let cam = CameraIntrinsics::new(90.0, 8, 8).unwrap();
        let cloud = PointCloud {
            points: vec![
                LidarPoint { xyz: [0.0, 0.0, 8.0], class_id: Some(2) },
                LidarPoint { xyz: [0.0, 0.0, 5.0], class_id: Some(1) },
            ],
        };
        let p = lidar_to_frame(&cloud, &cam, &IDENTITY, &[0.0; 3]).unwrap();
        assert_eq!(p.depth.data()[4 * 8 + 4], 5.0);
        assert_eq!(p.frame.data.data()[4 * 8 + 4], inverse_depth_code(5.0));
        assert_eq!(p.class_ids[4 * 8 + 4], Some(1));
        let skew = [[1.0, 0.1, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(matches!(lidar_to_frame(&cloud, &cam, &skew, &[0.0; 3]), Err(Error::Config(_))));
    }
}
