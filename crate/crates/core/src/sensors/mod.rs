//! Sensor data types, frame converters, failure simulators and file formats.

pub mod camera;
pub mod convert;
pub mod corrupt;
pub mod io;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use camera::CameraIntrinsics;
pub use convert::{depth_to_frame, depth_to_hha, events_to_frame, lidar_to_frame, LidarProjection, LIDAR_MAX_RANGE, LIDAR_MIN_RANGE};
pub use corrupt::{
    corrupt_event_lowres, corrupt_exposure, corrupt_lidar_jitter, corrupt_motion_blur, render_event_lowres, JitterConfig,
    JitterSample,
};

/// Event-camera contrast threshold, both polarities.
pub const EVENT_THRESHOLD: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrameKind {
    Rgb,
    Depth,
    Event,
    Lidar,
    Hha,
}

impl FrameKind {
    pub fn name(self) -> &'static str {
        match self {
            FrameKind::Rgb => "rgb",
            FrameKind::Depth => "depth",
            FrameKind::Event => "event",
            FrameKind::Lidar => "lidar",
            FrameKind::Hha => "hha",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "rgb" => FrameKind::Rgb,
            "depth" => FrameKind::Depth,
            "event" => FrameKind::Event,
            "lidar" => FrameKind::Lidar,
            "hha" => FrameKind::Hha,
            other => return Err(Error::Config(format!("unknown frame kind `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: Option<u64>,
    pub corruptions: Vec<String>,
}

/// Image-like `3 x H x W` encoding of one modality with values in `[0, 1]`.
///
/// Channel semantics: `rgb` colour; `depth` and `lidar` the same scalar in all
/// three channels; `event` red = last event negative, blue = last event
/// positive, green unused; `hha` disparity, height, angle.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalityFrame {
    pub kind: FrameKind,
    pub data: Tensor,
    pub provenance: Provenance,
}

impl ModalityFrame {
    pub fn new(kind: FrameKind, data: Tensor) -> Result<Self> {
        match data.shape() {
            [3, _, _] => {}
            s => return Err(Error::dim("channels", format!("frame must be 3 x H x W, got {s:?}"))),
        }
        if let Some(v) = data.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Data(format!("frame value {v} outside [0, 1]")));
        }
        Ok(Self {
            kind,
            data,
            provenance: Provenance::default(),
        })
    }

    /// Replicates a single `H x W` channel (values in `[0, 1]`) into three channels.
    pub fn gray(kind: FrameKind, plane: &[f64], h: usize, w: usize) -> Result<Self> {
        let mut data = Vec::with_capacity(3 * h * w);
        for _ in 0..3 {
            data.extend_from_slice(plane);
        }
        Self::new(kind, Tensor::new(vec![3, h, w], data)?)
    }

    pub fn height(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn with_corruption(mut self, tag: &str) -> Self {
        self.provenance.corruptions.push(tag.to_string());
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub x: usize,
    pub y: usize,
    /// Microseconds.
    pub t: u64,
    /// +1 or -1.
    pub polarity: i8,
}

/// Events recorded in the interval `[t0, t1)`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EventStream {
    pub events: Vec<Event>,
    pub t0: u64,
    pub t1: u64,
}

impl EventStream {
    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        for (i, e) in self.events.iter().enumerate() {
            if e.x >= width || e.y >= height {
                return Err(Error::Data(format!(
                    "event {i} at ({}, {}) lies outside the {width}x{height} sensor",
                    e.x, e.y
                )));
            }
            if e.t < self.t0 || e.t >= self.t1 {
                return Err(Error::Data(format!(
                    "event {i} at t={} lies outside [{}, {})",
                    e.t, self.t0, self.t1
                )));
            }
            if e.polarity != 1 && e.polarity != -1 {
                return Err(Error::Data(format!("event {i} has polarity {}", e.polarity)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LidarPoint {
    pub xyz: [f64; 3],
    pub class_id: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<LidarPoint>,
}

impl PointCloud {
    pub fn validate(&self) -> Result<()> {
        match self.points.iter().position(|p| p.xyz.iter().any(|c| !c.is_finite())) {
            Some(i) => Err(Error::Data(format!("point {i} has a non-finite coordinate"))),
            None => Ok(()),
        }
    }
}
