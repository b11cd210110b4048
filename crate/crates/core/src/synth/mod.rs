//! Procedural multimodal micro-scenes with analytic ground truth.
//!
//! A scene is a ground plane `Y = camera_height` (camera frame, Y down), a
//! backdrop plane `Z = far`, and a few fronto-parallel shapes standing on the
//! ground. Every modality is rendered by casting rays against that geometry.

pub mod dataset;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::DELIVER_CLASSES;
use crate::sensors::{
    CameraIntrinsics, Event, EventStream, FrameKind, LidarPoint, ModalityFrame, PointCloud, EVENT_THRESHOLD,
    LIDAR_MAX_RANGE,
};
use crate::tensor::Tensor;

pub use dataset::{
    examples_in_memory, make_split, training_conditions, training_in_memory, make_variant, CorruptionSettings, Dataset, DatasetSpec, Example, Manifest, RawSample,
    SampleEntry, Variant, CLEAN, CORRUPTIONS,
};

/// Class shared by the ground plane and the backdrop.
pub const GROUND_CLASS: usize = 0;
/// Duration of the synthetic event window in microseconds.
pub const EVENT_WINDOW_US: u64 = 10_000;

const LIDAR_ELEVATION_DEG: (f64, f64) = (-30.0, 10.0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    #[serde(default)]
    pub seed: u64,
    /// Square image side in pixels; must be divisible by 32.
    #[serde(default = "default_size")]
    pub size: usize,
    /// Including the ground class.
    #[serde(default = "default_classes")]
    pub num_classes: usize,
    /// Inclusive object count range.
    #[serde(default = "default_objects")]
    pub objects: [usize; 2],
    /// Image-plane shift in pixels between the two frames used for events.
    #[serde(default = "default_motion")]
    pub motion: [f64; 2],
    /// LiDAR channels x azimuth steps.
    #[serde(default = "default_lidar_grid")]
    pub lidar_grid: [usize; 2],
    #[serde(default = "default_fov")]
    pub fov_degrees: f64,
    #[serde(default = "default_camera_height")]
    pub camera_height: f64,
    #[serde(default = "default_far")]
    pub far: f64,
    /// Saturation depth of the depth frame encoding.
    #[serde(default = "default_depth_max")]
    pub depth_max: f64,
}

fn default_size() -> usize {
    64
}
fn default_classes() -> usize {
    7
}
fn default_objects() -> [usize; 2] {
    [2, 4]
}
fn default_motion() -> [f64; 2] {
    [2.0, 1.0]
}
fn default_lidar_grid() -> [usize; 2] {
    [16, 128]
}
fn default_fov() -> f64 {
    90.0
}
fn default_camera_height() -> f64 {
    1.5
}
fn default_far() -> f64 {
    40.0
}
fn default_depth_max() -> f64 {
    LIDAR_MAX_RANGE
}

impl Default for SceneSpec {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.size == 0 || self.size % 32 != 0 {
            return Err(Error::Config(format!("image size {} is not a positive multiple of 32", self.size)));
        }
        if self.num_classes < 2 || self.num_classes > DELIVER_CLASSES {
            return Err(Error::Config(format!(
                "class count {} outside [2, {DELIVER_CLASSES}]",
                self.num_classes
            )));
        }
        if self.objects[0] > self.objects[1] {
            return Err(Error::Config(format!("object range {:?} is inverted", self.objects)));
        }
        if self.lidar_grid.contains(&0) {
            return Err(Error::Config("lidar grid needs at least one channel and one azimuth step".into()));
        }
        if !(self.camera_height > 0.0) || !(self.far > 0.0 && self.far <= LIDAR_MAX_RANGE) || !(self.depth_max > 0.0) {
            return Err(Error::Config("camera height, far plane and depth_max must be positive".into()));
        }
        if self.motion.iter().any(|m| !m.is_finite()) {
            return Err(Error::Config("motion vector must be finite".into()));
        }
        CameraIntrinsics::new(self.fov_degrees, self.size, self.size)?;
        Ok(())
    }

    pub fn camera(&self) -> Result<CameraIntrinsics> {
        CameraIntrinsics::new(self.fov_degrees, self.size, self.size)
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Rect,
    Ellipse,
    Triangle,
}

impl Shape {
    /// Object classes cycle through the shapes, so geometry alone carries class information.
    pub fn for_class(class: usize) -> Self {
        [Shape::Rect, Shape::Ellipse, Shape::Triangle][(class.max(1) - 1) % 3]
    }

    /// Point-in-shape test on the object plane, relative to the centre.
    fn contains(self, dx: f64, dy: f64, a: f64, b: f64) -> bool {
        match self {
            Shape::Rect => dx.abs() <= a && dy.abs() <= b,
            Shape::Ellipse => (dx / a).powi(2) + (dy / b).powi(2) <= 1.0,
            // apex at (0, -b), base from (-a, b) to (a, b)
            Shape::Triangle => dy.abs() <= b && dx.abs() <= a * (dy + b) / (2.0 * b),
        }
    }
}

/// A fronto-parallel planar object at depth `z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub shape: Shape,
    pub class: usize,
    pub z: f64,
    /// Centre `(X, Y)` on the plane `Z = z`, metres.
    pub center: [f64; 2],
    pub half_extent: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    /// Ray parameter (distance when the direction is unit length).
    pub t: f64,
    pub point: [f64; 3],
    pub class: usize,
    pub albedo: [f64; 3],
}

/// Reflectance per class; the backdrop shares class 0 with the ground but not its colour.
pub fn class_albedo(class: usize) -> [f64; 3] {
    if class == GROUND_CLASS {
        return [0.42, 0.40, 0.36];
    }
    let hue = (class as f64 * 0.618_033_988_75).fract() * 6.0;
    let x = 1.0 - (hue % 2.0 - 1.0).abs();
    let (r, g, b) = match hue as usize {
        0 => (1.0, x, 0.0),
        1 => (x, 1.0, 0.0),
        2 => (0.0, 1.0, x),
        3 => (0.0, x, 1.0),
        4 => (x, 0.0, 1.0),
        _ => (1.0, 0.0, x),
    };
    [0.15 + 0.8 * r, 0.15 + 0.8 * g, 0.15 + 0.8 * b]
}

const BACKDROP_ALBEDO: [f64; 3] = [0.55, 0.68, 0.85];

/// Distance falloff applied to albedo.
pub fn shade(z: f64) -> f64 {
    0.35 + 0.65 * (-z / 25.0).exp()
}

fn luminance(c: [f64; 3]) -> f64 {
    0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub spec: SceneSpec,
    pub camera: CameraIntrinsics,
    pub objects: Vec<SceneObject>,
}

impl Scene {
    pub fn new(spec: SceneSpec, objects: Vec<SceneObject>) -> Result<Self> {
        spec.validate()?;
        if let Some(o) = objects.iter().find(|o| o.class >= spec.num_classes || o.class == GROUND_CLASS) {
            return Err(Error::Config(format!(
                "object class {} outside [1, {})",
                o.class, spec.num_classes
            )));
        }
        if let Some(o) = objects
            .iter()
            .find(|o| !(o.z > 0.0) || o.half_extent.iter().any(|e| !(*e > 0.0)))
        {
            return Err(Error::Config(format!("object at z={} has a degenerate extent", o.z)));
        }
        Ok(Self {
            camera: spec.camera()?,
            spec,
            objects,
        })
    }

    /// Samples object layout from `spec.seed`.
    pub fn sample(spec: &SceneSpec) -> Result<Self> {
        spec.validate()?;
        let cam = spec.camera()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let n = rng.random_range(spec.objects[0]..=spec.objects[1]);
        let far = spec.far.clamp(3.0, 8.0);
        let objects = (0..n)
            .map(|_| {
                let class = rng.random_range(1..spec.num_classes);
                let z = rng.random_range(2.5..=far);
                let a = rng.random_range(0.5..1.5);
                let b = rng.random_range(0.5..1.5);
                let u = rng.random_range(0.15..0.85) * spec.size as f64;
                let x = (u - cam.u0()) * z / cam.fx();
                SceneObject {
                    shape: Shape::for_class(class),
                    class,
                    z,
                    center: [x, spec.camera_height - b],
                    half_extent: [a, b],
                }
            })
            .collect();
        Self::new(spec.clone(), objects)
    }

    /// Nearest surface along `origin + t·dir` with `0 < t <= max_t`, from the camera origin.
    pub fn cast(&self, dir: [f64; 3], max_t: f64) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        let mut offer = |t: f64, class: usize, albedo: [f64; 3]| {
            if t > 0.0 && t <= max_t && best.is_none_or(|b| t < b.t) {
                best = Some(Hit {
                    t,
                    point: [t * dir[0], t * dir[1], t * dir[2]],
                    class,
                    albedo,
                });
            }
        };
        if dir[1] > 0.0 {
            offer(self.spec.camera_height / dir[1], GROUND_CLASS, class_albedo(GROUND_CLASS));
        }
        if dir[2] > 0.0 {
            offer(self.spec.far / dir[2], GROUND_CLASS, BACKDROP_ALBEDO);
            for o in &self.objects {
                let t = o.z / dir[2];
                let (px, py) = (t * dir[0], t * dir[1]);
                if o.shape.contains(px - o.center[0], py - o.center[1], o.half_extent[0], o.half_extent[1]) {
                    offer(t, o.class, class_albedo(o.class));
                }
            }
        }
        best
    }

    /// Surface seen through image point `(u, v)`; forward rays always hit the backdrop.
    pub fn hit_at(&self, u: f64, v: f64) -> Hit {
        let d = self.camera.back_project(u, v, 1.0);
        self.cast(d, f64::INFINITY).expect("forward rays hit the backdrop")
    }

    fn color(hit: &Hit) -> [f64; 3] {
        let s = shade(hit.point[2]);
        hit.albedo.map(|a| (a * s).clamp(0.0, 1.0))
    }

    /// Depth, class and colour at every pixel centre, with the image shifted by `(du, dv)`.
    fn raster(&self, du: f64, dv: f64) -> Vec<Hit> {
        let n = self.spec.size;
        (0..n * n)
            .map(|i| self.hit_at((i % n) as f64 + 0.5 - du, (i / n) as f64 + 0.5 - dv))
            .collect()
    }

    pub fn render(&self) -> Result<SceneSample> {
        let n = self.spec.size;
        let hw = n * n;
        let first = self.raster(0.0, 0.0);
        let mut rgb = vec![0.0; 3 * hw];
        for (p, h) in first.iter().enumerate() {
            let c = Self::color(h);
            for ch in 0..3 {
                rgb[ch * hw + p] = c[ch];
            }
        }
        let depth = Tensor::new(vec![n, n], first.iter().map(|h| h.point[2]).collect())?;
        let labels = first.iter().map(|h| Some(h.class)).collect();

        let events = if self.spec.motion == [0.0, 0.0] {
            EventStream {
                events: Vec::new(),
                t0: 0,
                t1: EVENT_WINDOW_US,
            }
        } else {
            let second = self.raster(self.spec.motion[0], self.spec.motion[1]);
            events_between(&first, &second, n)
        };

        let mut frame = ModalityFrame::new(FrameKind::Rgb, Tensor::new(vec![3, n, n], rgb)?)?;
        frame.provenance.seed = Some(self.spec.seed);
        Ok(SceneSample {
            seed: self.spec.seed,
            size: n,
            rgb: frame,
            depth,
            events,
            lidar: self.lidar(),
            labels,
        })
    }

    /// Ray-cast sweep over 360° azimuth and the elevation band, up to the LiDAR range.
    pub fn lidar(&self) -> PointCloud {
        let [channels, steps] = self.spec.lidar_grid;
        let (lo, hi) = LIDAR_ELEVATION_DEG;
        let mut points = Vec::with_capacity(channels * steps);
        for i in 0..channels {
            let e = if channels == 1 {
                (lo + hi) / 2.0
            } else {
                lo + (hi - lo) * i as f64 / (channels - 1) as f64
            }
            .to_radians();
            for j in 0..steps {
                let a = (360.0 * j as f64 / steps as f64).to_radians();
                // azimuth 0 looks down +Z, positive elevation looks up (-Y)
                let dir = [e.cos() * a.sin(), -e.sin(), e.cos() * a.cos()];
                if let Some(h) = self.cast(dir, LIDAR_MAX_RANGE) {
                    points.push(LidarPoint {
                        xyz: h.point,
                        class_id: Some(h.class as u32),
                    });
                }
            }
        }
        PointCloud { points }
    }
}

/// Emits `floor(|Δ log L| / threshold)` events per pixel whose log-luminance
/// change strictly exceeds the threshold, spread evenly over the window.
fn events_between(first: &[Hit], second: &[Hit], width: usize) -> EventStream {
    let mut events = Vec::new();
    for (p, (a, b)) in first.iter().zip(second).enumerate() {
        let la = luminance(Scene::color(a)).max(1e-3).ln();
        let lb = luminance(Scene::color(b)).max(1e-3).ln();
        let delta = lb - la;
        if delta.abs() <= EVENT_THRESHOLD {
            continue;
        }
        let count = (delta.abs() / EVENT_THRESHOLD).floor() as u64;
        let polarity = if delta > 0.0 { 1 } else { -1 };
        for k in 0..count {
            events.push(Event {
                x: p % width,
                y: p / width,
                t: EVENT_WINDOW_US * (k + 1) / (count + 1),
                polarity,
            });
        }
    }
    events.sort_by_key(|e| (e.t, e.y, e.x));
    EventStream {
        events,
        t0: 0,
        t1: EVENT_WINDOW_US,
    }
}

/// Log-luminance of the rendered colour at each pixel, for the given image shift.
pub fn log_luminance(scene: &Scene, du: f64, dv: f64) -> Vec<f64> {
    scene
        .raster(du, dv)
        .iter()
        .map(|h| luminance(Scene::color(h)).max(1e-3).ln())
        .collect()
}

/// Raw sensor outputs of one scene before frame conversion.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSample {
    pub seed: u64,
    pub size: usize,
    pub rgb: ModalityFrame,
    /// Metric depth along Z.
    pub depth: Tensor,
    pub events: EventStream,
    pub lidar: PointCloud,
    pub labels: Vec<Option<usize>>,
}

pub fn generate(spec: &SceneSpec) -> Result<SceneSample> {
    Scene::sample(spec)?.render()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triangle_apex_points_up() {
        assert!(Shape::Triangle.contains(0.0, -0.9, 1.0, 1.0));
        assert!(!Shape::Triangle.contains(0.5, -0.9, 1.0, 1.0));
        assert!(Shape::Triangle.contains(0.95, 0.99, 1.0, 1.0));
    }

    #[test]
    fn palette_is_in_range_and_distinct() {
        let cols: Vec<_> = (0..DELIVER_CLASSES).map(class_albedo).collect();
        for (i, a) in cols.iter().enumerate() {
            assert!(a.iter().all(|v| (0.0..=1.0).contains(v)));
            for b in &cols[i + 1..] {
                assert!(a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() > 1e-3);
            }
        }
    }

    #[test]
    fn class_limit_is_a_config_error() {
        let spec = SceneSpec {
            num_classes: 26,
            ..SceneSpec::default()
        };
        assert!(matches!(generate(&spec), Err(Error::Config(_))));
    }
}
