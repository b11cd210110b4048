//! Sensor-failure simulators: motion blur, over/under-exposure, LiDAR jitter
//! and event low resolution.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sensors::convert::apply_rigid;
use crate::sensors::{events_to_frame, EventStream, ModalityFrame, PointCloud};
use crate::tensor::Tensor;

/// Normalised line kernel of `length` taps along `angle` (radians, image x-axis).
pub fn motion_kernel(length: usize, angle: f64) -> (Vec<f64>, usize) {
    let length = length.max(1);
    let radius = length / 2 + 1;
    let size = 2 * radius + 1;
    let mut k = vec![0.0; size * size];
    let (dx, dy) = (angle.cos(), angle.sin());
    let half = (length as f64 - 1.0) / 2.0;
    for i in 0..length {
        let s = i as f64 - half;
        let x = (s * dx).round() as isize + radius as isize;
        let y = (s * dy).round() as isize + radius as isize;
        k[y as usize * size + x as usize] += 1.0;
    }
    let n = length as f64;
    k.iter_mut().for_each(|v| *v /= n);
    (k, size)
}

/// Blurs each channel with a linear motion kernel (edge-replicated borders), clamped to `[0, 1]`.
pub fn corrupt_motion_blur(frame: &ModalityFrame, length: usize, angle: f64) -> Result<ModalityFrame> {
    if length == 0 {
        return Err(Error::Config("blur length must be at least 1".into()));
    }
    let (kernel, size) = motion_kernel(length, angle);
    let r = (size / 2) as isize;
    let (c, h, w) = (3, frame.height(), frame.width());
    let src = frame.data.data();
    let taps: Vec<(isize, isize, f64)> = kernel
        .iter()
        .enumerate()
        .filter(|(_, &v)| v != 0.0)
        .map(|(i, &v)| ((i / size) as isize - r, (i % size) as isize - r, v))
        .collect();
    let mut out = vec![0.0; c * h * w];
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for &(dy, dx, wt) in &taps {
                    let yy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                    let xx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                    acc += wt * plane[yy * w + xx];
                }
                out[(ch * h + y) * w + x] = acc.clamp(0.0, 1.0);
            }
        }
    }
    let mut f = ModalityFrame::new(frame.kind, Tensor::new(vec![c, h, w], out)?)?;
    f.provenance = frame.provenance.clone();
    Ok(f.with_corruption("MB"))
}

/// Multiplies by `gain` and clamps; gain above 1 over-exposes, below 1 under-exposes.
pub fn corrupt_exposure(frame: &ModalityFrame, gain: f64) -> Result<ModalityFrame> {
    if !(gain > 0.0) || !gain.is_finite() {
        return Err(Error::Config(format!("exposure gain must be positive, got {gain}")));
    }
    let data = frame.data.data().iter().map(|v| (v * gain).clamp(0.0, 1.0)).collect();
    let mut f = ModalityFrame::new(frame.kind, Tensor::new(frame.data.shape().to_vec(), data)?)?;
    f.provenance = frame.provenance.clone();
    Ok(f.with_corruption(if gain >= 1.0 { "OE" } else { "UE" }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JitterConfig {
    pub max_angle_deg: f64,
    pub max_translation_m: f64,
}

impl Default for JitterConfig {
    fn default() -> Self {
        Self {
            max_angle_deg: 1.0,
            max_translation_m: 0.01,
        }
    }
}

/// The rigid perturbation drawn for one jitter call.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JitterSample {
    /// Rotations about X, Y, Z in degrees.
    pub angles_deg: [f64; 3],
    pub translation_m: [f64; 3],
}

impl JitterSample {
    pub fn draw(cfg: &JitterConfig, seed: u64) -> Result<Self> {
        if !(cfg.max_angle_deg >= 0.0) || !(cfg.max_translation_m >= 0.0) {
            return Err(Error::Config("jitter ranges must be non-negative".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sym = |half: f64| if half == 0.0 { 0.0 } else { rng.random_range(-half..=half) };
        let angles_deg = [sym(cfg.max_angle_deg), sym(cfg.max_angle_deg), sym(cfg.max_angle_deg)];
        let translation_m = [
            sym(cfg.max_translation_m),
            sym(cfg.max_translation_m),
            sym(cfg.max_translation_m),
        ];
        Ok(Self {
            angles_deg,
            translation_m,
        })
    }

    /// `Rz · Ry · Rx`.
    pub fn rotation(&self) -> [[f64; 3]; 3] {
        let [ax, ay, az] = self.angles_deg.map(f64::to_radians);
        let (sx, cx) = ax.sin_cos();
        let (sy, cy) = ay.sin_cos();
        let (sz, cz) = az.sin_cos();
        [
            [cz * cy, cz * sy * sx - sz * cx, cz * sy * cx + sz * sx],
            [sz * cy, sz * sy * sx + cz * cx, sz * sy * cx - cz * sx],
            [-sy, cy * sx, cy * cx],
        ]
    }

    /// Rotation angle of the composed rotation, in degrees.
    pub fn rotation_magnitude_deg(&self) -> f64 {
        let r = self.rotation();
        let tr = r[0][0] + r[1][1] + r[2][2];
        ((tr - 1.0) / 2.0).clamp(-1.0, 1.0).acos().to_degrees()
    }
}

pub fn corrupt_lidar_jitter(cloud: &PointCloud, seed: u64, cfg: &JitterConfig) -> Result<(PointCloud, JitterSample)> {
    cloud.validate()?;
    let s = JitterSample::draw(cfg, seed)?;
    let r = s.rotation();
    let points = cloud
        .points
        .iter()
        .map(|p| crate::sensors::LidarPoint {
            xyz: apply_rigid(&r, &s.translation_m, p.xyz),
            class_id: p.class_id,
        })
        .collect();
    Ok((PointCloud { points }, s))
}

fn lowres_dims(width: usize, height: usize, factor: f64) -> (usize, usize) {
    (
        ((width as f64 * factor).floor() as usize).max(1),
        ((height as f64 * factor).floor() as usize).max(1),
    )
}

/// Rescales event coordinates by `factor` with floor rounding.
pub fn corrupt_event_lowres(stream: &EventStream, width: usize, height: usize, factor: f64) -> Result<(EventStream, usize, usize)> {
    if !(factor > 0.0 && factor <= 1.0) {
        return Err(Error::Config(format!("resolution factor must lie in (0, 1], got {factor}")));
    }
    stream.validate(width, height)?;
    let (lw, lh) = lowres_dims(width, height, factor);
    let events = stream
        .events
        .iter()
        .map(|e| crate::sensors::Event {
            x: ((e.x as f64 * factor).floor() as usize).min(lw - 1),
            y: ((e.y as f64 * factor).floor() as usize).min(lh - 1),
            ..*e
        })
        .collect();
    Ok((
        EventStream {
            events,
            t0: stream.t0,
            t1: stream.t1,
        },
        lw,
        lh,
    ))
}

/// Renders the low-resolution stream and nearest-upsamples it back to `width x height`.
///
/// Returns the upsampled frame and the low-resolution frame.
pub fn render_event_lowres(
    stream: &EventStream,
    width: usize,
    height: usize,
    factor: f64,
) -> Result<(ModalityFrame, ModalityFrame)> {
    let (low, lw, lh) = corrupt_event_lowres(stream, width, height, factor)?;
    let small = events_to_frame(&low, lw, lh)?;
    let src = small.data.data();
    let mut data = vec![0.0; 3 * width * height];
    for ch in 0..3 {
        for y in 0..height {
            let sy = (y * lh / height).min(lh - 1);
            for x in 0..width {
                let sx = (x * lw / width).min(lw - 1);
                data[(ch * height + y) * width + x] = src[(ch * lh + sy) * lw + sx];
            }
        }
    }
    let full = ModalityFrame::new(small.kind, Tensor::new(vec![3, height, width], data)?)?.with_corruption("EL");
    Ok((full, small.with_corruption("EL")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sensors::FrameKind;

    fn ramp() -> ModalityFrame {
        ModalityFrame::new(FrameKind::Rgb, Tensor::from_fn(&[3, 6, 5], |i| (i % 7) as f64 / 8.0)).unwrap()
    }

    #[test]
    fn blur_length_one_is_identity() {
        let f = ramp();
        for angle in [0.0, 0.7, 2.0] {
            assert_eq!(corrupt_motion_blur(&f, 1, angle).unwrap().data, f.data);
        }
    }

    #[test]
    fn kernel_is_normalised() {
        for (len, a) in [(1, 0.0), (5, 0.3), (9, 1.7)] {
            let (k, _) = motion_kernel(len, a);
            assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn exposure_clamps_and_tags() {
        let f = ModalityFrame::new(FrameKind::Rgb, Tensor::from_fn(&[3, 2, 2], |i| (i % 3) as f64 * 0.25)).unwrap();
        let oe = corrupt_exposure(&f, 4.0).unwrap();
        assert!(oe.data.data().iter().all(|&v| v == 0.0 || v == 1.0));
        assert_eq!(oe.provenance.corruptions, vec!["OE"]);
        assert_eq!(corrupt_exposure(&f, 0.5).unwrap().provenance.corruptions, vec!["UE"]);
        assert!(corrupt_exposure(&f, 0.0).is_err());
    }

    #[test]
    fn zero_width_jitter_is_identity() {
        let cloud = PointCloud {
            points: vec![crate::sensors::LidarPoint { xyz: [1.0, -2.0, 3.5], class_id: None }],
        };
        let cfg = JitterConfig {
            max_angle_deg: 0.0,
            max_translation_m: 0.0,
        };
        let (out, _) = corrupt_lidar_jitter(&cloud, 9, &cfg).unwrap();
        assert_eq!(out, cloud);
    }

    #[test]
    fn lowres_rejects_bad_factor() {
        let s = EventStream::default();
        assert!(corrupt_event_lowres(&s, 4, 4, 0.0).is_err());
        assert!(corrupt_event_lowres(&s, 4, 4, 1.5).is_err());
    }
}
