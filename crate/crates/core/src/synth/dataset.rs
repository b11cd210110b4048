//! On-disk splits of generated scenes and their corrupted variants.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sensors::convert::IDENTITY;
use crate::sensors::io::{
    format_evt, format_xyz, parse_evt, parse_xyz, read_depth_pgm, read_frame_tsr1, read_label_pgm, read_ppm,
    read_text, write_depth_pgm, write_frame_tsr1, write_label_pgm, write_ppm, write_text,
};
use crate::sensors::{
    corrupt_exposure, corrupt_lidar_jitter, corrupt_motion_blur, depth_to_frame, depth_to_hha, events_to_frame,
    lidar_to_frame, render_event_lowres, CameraIntrinsics, FrameKind, JitterConfig, ModalityFrame, PointCloud,
};
use crate::synth::{generate, SceneSample, SceneSpec};
use crate::tensor::Tensor;

/// Failure-mode tags in the order they are reported.
pub const CORRUPTIONS: [&str; 5] = ["MB", "OE", "UE", "LJ", "EL"];
pub const CLEAN: &str = "clean";
const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorruptionSettings {
    pub blur_length: usize,
    pub blur_angle_deg: f64,
    pub over_exposure_gain: f64,
    pub under_exposure_gain: f64,
    pub jitter: JitterConfig,
    pub event_factor: f64,
}

impl Default for CorruptionSettings {
    fn default() -> Self {
        Self {
            blur_length: 7,
            blur_angle_deg: 0.0,
            over_exposure_gain: 3.0,
            under_exposure_gain: 0.3,
            jitter: JitterConfig::default(),
            event_factor: 0.25,
        }
    }
}

/// Input of `synth --spec`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    #[serde(default)]
    pub scene: SceneSpec,
    #[serde(default = "default_train")]
    pub train: usize,
    #[serde(default)]
    pub val: usize,
    #[serde(default = "all_corruptions")]
    pub corruptions: Vec<String>,
    #[serde(default)]
    pub settings: CorruptionSettings,
}

fn default_train() -> usize {
    8
}

fn all_corruptions() -> Vec<String> {
    CORRUPTIONS.iter().map(|s| s.to_string()).collect()
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        if self.train == 0 {
            return Err(Error::Config("the train split needs at least one sample".into()));
        }
        for c in &self.corruptions {
            if !CORRUPTIONS.contains(&c.as_str()) {
                return Err(Error::Config(format!(
                    "unknown corruption `{c}` (expected one of {})",
                    CORRUPTIONS.join(", ")
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub id: String,
    /// Relative to the dataset root.
    pub path: String,
    pub seed: u64,
    pub variants: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub scene: SceneSpec,
    pub settings: CorruptionSettings,
    pub corruptions: Vec<String>,
    pub splits: BTreeMap<String, Vec<SampleEntry>>,
}

/// Sensor outputs of one sample in the form the frame converters consume.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSample {
    pub rgb: ModalityFrame,
    pub depth: Tensor,
    pub event_frame: ModalityFrame,
    pub lidar: PointCloud,
    pub labels: Vec<Option<usize>>,
}

impl RawSample {
    pub fn from_scene(s: &SceneSample) -> Result<Self> {
        Ok(Self {
            rgb: s.rgb.clone(),
            depth: s.depth.clone(),
            event_frame: events_to_frame(&s.events, s.size, s.size)?,
            lidar: s.lidar.clone(),
            labels: s.labels.clone(),
        })
    }

    pub fn size(&self) -> (usize, usize) {
        (self.rgb.height(), self.rgb.width())
    }

    /// Frame tensors in `modalities` order.
    pub fn frames(&self, modalities: &[String], cam: &CameraIntrinsics, depth_max: f64) -> Result<Vec<Tensor>> {
        modalities
            .iter()
            .map(|m| {
                Ok(match FrameKind::parse(m)? {
                    FrameKind::Rgb => self.rgb.data.clone(),
                    FrameKind::Depth => depth_to_frame(&self.depth, depth_max)?.data,
                    FrameKind::Event => self.event_frame.data.clone(),
                    FrameKind::Lidar => lidar_to_frame(&self.lidar, cam, &IDENTITY, &[0.0; 3])?.frame.data,
                    FrameKind::Hha => depth_to_hha(&self.depth, cam)?.data,
                })
            })
            .collect()
    }
}

/// The corrupted modality of one variant.
#[derive(Debug, Clone, PartialEq)]
pub enum Variant {
    Rgb(ModalityFrame),
    Lidar(PointCloud),
    Event(ModalityFrame),
}

fn corruption_seed(seed: u64, tag: &str) -> u64 {
    let pos = CORRUPTIONS.iter().position(|c| *c == tag).unwrap_or(0) as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(pos + 1);
    rng.next_u64()
}

pub fn make_variant(scene: &SceneSample, tag: &str, settings: &CorruptionSettings) -> Result<Variant> {
    Ok(match tag {
        "MB" => Variant::Rgb(corrupt_motion_blur(
            &scene.rgb,
            settings.blur_length,
            settings.blur_angle_deg.to_radians(),
        )?),
        "OE" => Variant::Rgb(corrupt_exposure(&scene.rgb, settings.over_exposure_gain)?),
        "UE" => Variant::Rgb(corrupt_exposure(&scene.rgb, settings.under_exposure_gain)?),
        "LJ" => Variant::Lidar(corrupt_lidar_jitter(&scene.lidar, corruption_seed(scene.seed, tag), &settings.jitter)?.0),
        "EL" => Variant::Event(render_event_lowres(&scene.events, scene.size, scene.size, settings.event_factor)?.0),
        other => return Err(Error::Config(format!("unknown corruption `{other}`"))),
    })
}

impl RawSample {
    pub fn with_variant(&self, v: Variant) -> Self {
        let mut out = self.clone();
        match v {
            Variant::Rgb(f) => out.rgb = f,
            Variant::Lidar(c) => out.lidar = c,
            Variant::Event(f) => out.event_frame = f,
        }
        out
    }
}

fn split_seeds(seed: u64, stream: u64, n: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    (0..n).map(|_| rng.next_u64()).collect()
}

fn write_sample(dir: &Path, scene: &SceneSample, spec: &DatasetSpec) -> Result<()> {
    write_ppm(&dir.join("rgb.ppm"), &scene.rgb)?;
    write_depth_pgm(&dir.join("depth.pgm"), &scene.depth)?;
    write_text(&dir.join("event.evt"), &format_evt(&scene.events))?;
    write_text(&dir.join("lidar.xyz"), &format_xyz(&scene.lidar))?;
    write_label_pgm(&dir.join("label.pgm"), &scene.labels, scene.size, scene.size)?;
    for tag in &spec.corruptions {
        let vdir = dir.join("variants").join(tag);
        match make_variant(scene, tag, &spec.settings)? {
            Variant::Rgb(f) => write_ppm(&vdir.join("rgb.ppm"), &f)?,
            Variant::Lidar(c) => write_text(&vdir.join("lidar.xyz"), &format_xyz(&c))?,
            Variant::Event(f) => write_frame_tsr1(&vdir.join("event.tsr"), &f)?,
        }
    }
    Ok(())
}

/// Generates `train` and `val` splits under `root` and writes `manifest.json`.
pub fn make_split(spec: &DatasetSpec, root: &Path) -> Result<Manifest> {
    spec.validate()?;
    let mut splits = BTreeMap::new();
    for (stream, (name, n)) in [("train", spec.train), ("val", spec.val)].into_iter().enumerate() {
        let seeds = split_seeds(spec.scene.seed, stream as u64, n);
        let entries = seeds
            .par_iter()
            .enumerate()
            .map(|(i, &seed)| {
                let id = format!("{i:06}");
                let rel = format!("{name}/{id}");
                let scene = generate(&spec.scene.with_seed(seed))?;
                write_sample(&root.join(&rel), &scene, spec)?;
                Ok(SampleEntry {
                    id,
                    path: rel,
                    seed,
                    variants: spec.corruptions.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        splits.insert(name.to_string(), entries);
    }
    let manifest = Manifest {
        scene: spec.scene.clone(),
        settings: spec.settings.clone(),
        corruptions: spec.corruptions.clone(),
        splits,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
    write_text(&root.join(MANIFEST), &(text + "\n"))?;
    Ok(manifest)
}

/// One model input: frames in modality order plus labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: String,
    /// `clean` or a corruption tag.
    pub condition: String,
    pub frames: Vec<Tensor>,
    pub labels: Vec<Option<usize>>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: Manifest,
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST);
        let manifest = serde_json::from_str(&read_text(&path)?)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        Ok(Self {
            root: root.to_path_buf(),
            manifest,
        })
    }

    pub fn entries(&self, split: &str) -> Result<&[SampleEntry]> {
        self.manifest
            .splits
            .get(split)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Usage(format!("dataset has no `{split}` split")))
    }

    /// `clean` followed by the corruption tags present in the manifest.
    pub fn conditions(&self) -> Vec<String> {
        let mut c = vec![CLEAN.to_string()];
        c.extend(self.manifest.corruptions.iter().cloned());
        c
    }

    pub fn load_raw(&self, entry: &SampleEntry, condition: &str) -> Result<RawSample> {
        let dir = self.root.join(&entry.path);
        let (labels, h, w) = read_label_pgm(&dir.join("label.pgm"))?;
        let rgb = read_ppm(&dir.join("rgb.ppm"), FrameKind::Rgb)?;
        if (rgb.height(), rgb.width()) != (h, w) {
            return Err(Error::dim("spatial", format!("{}: rgb and label sizes differ", entry.path)));
        }
        let events = parse_evt(&read_text(&dir.join("event.evt"))?)?;
        let raw = RawSample {
            rgb,
            depth: read_depth_pgm(&dir.join("depth.pgm"))?,
            event_frame: events_to_frame(&events, w, h)?,
            lidar: parse_xyz(&read_text(&dir.join("lidar.xyz"))?)?,
            labels,
        };
        if condition == CLEAN {
            return Ok(raw);
        }
        if !entry.variants.iter().any(|v| v == condition) {
            return Err(Error::Usage(format!("sample {} has no `{condition}` variant", entry.path)));
        }
        let vdir = dir.join("variants").join(condition);
        let v = match condition {
            "MB" | "OE" | "UE" => Variant::Rgb(read_ppm(&vdir.join("rgb.ppm"), FrameKind::Rgb)?),
            "LJ" => Variant::Lidar(parse_xyz(&read_text(&vdir.join("lidar.xyz"))?)?),
            "EL" => Variant::Event(read_frame_tsr1(&vdir.join("event.tsr"), FrameKind::Event)?),
            other => return Err(Error::Format(format!("unknown variant `{other}`"))),
        };
        Ok(raw.with_variant(v))
    }

    pub fn load(&self, split: &str, condition: &str, modalities: &[String]) -> Result<Vec<Example>> {
        let cam = self.manifest.scene.camera()?;
        let d_max = self.manifest.scene.depth_max;
        self.entries(split)?
            .iter()
            .map(|e| {
                let raw = self.load_raw(e, condition)?;
                Ok(Example {
                    id: e.id.clone(),
                    condition: condition.to_string(),
                    frames: raw.frames(modalities, &cam, d_max)?,
                    labels: raw.labels,
                })
            })
            .collect()
    }
}

/// Conditions seen in training: every sample clean, plus one corner case per
/// sample cycling through `corruptions`.
pub fn training_conditions(n: usize, corruptions: &[String]) -> Vec<(usize, String)> {
    let mut out: Vec<(usize, String)> = (0..n).map(|i| (i, CLEAN.to_string())).collect();
    if !corruptions.is_empty() {
        out.extend((0..n).map(|i| (i, corruptions[i % corruptions.len()].clone())));
    }
    out
}

impl Dataset {
    /// Training mixture of [`training_conditions`] over one split.
    pub fn load_training(&self, split: &str, modalities: &[String]) -> Result<Vec<Example>> {
        let cam = self.manifest.scene.camera()?;
        let d_max = self.manifest.scene.depth_max;
        let entries = self.entries(split)?;
        training_conditions(entries.len(), &self.manifest.corruptions)
            .iter()
            .map(|(i, cond)| {
                let raw = self.load_raw(&entries[*i], cond)?;
                Ok(Example {
                    id: entries[*i].id.clone(),
                    condition: cond.clone(),
                    frames: raw.frames(modalities, &cam, d_max)?,
                    labels: raw.labels,
                })
            })
            .collect()
    }
}

fn in_memory(spec: &DatasetSpec, split_stream: u64, plan: &[(usize, String)], n: usize, modalities: &[String]) -> Result<Vec<Example>> {
    spec.validate()?;
    let cam = spec.scene.camera()?;
    let seeds = split_seeds(spec.scene.seed, split_stream, n);
    let scenes = seeds
        .par_iter()
        .map(|&seed| generate(&spec.scene.with_seed(seed)))
        .collect::<Result<Vec<_>>>()?;
    plan.par_iter()
        .map(|(i, condition)| {
            let scene = &scenes[*i];
            let mut raw = RawSample::from_scene(scene)?;
            if condition != CLEAN {
                raw = raw.with_variant(make_variant(scene, condition, &spec.settings)?);
            }
            Ok(Example {
                id: format!("{i:06}"),
                condition: condition.clone(),
                frames: raw.frames(modalities, &cam, spec.scene.depth_max)?,
                labels: raw.labels,
            })
        })
        .collect()
}

/// In-memory equivalent of writing a split and loading one condition back,
/// without the 8-bit / millimetre quantisation of the files.
/// `split_stream` is 0 for train and 1 for val.
pub fn examples_in_memory(
    spec: &DatasetSpec,
    split_stream: u64,
    n: usize,
    condition: &str,
    modalities: &[String],
) -> Result<Vec<Example>> {
    let plan: Vec<(usize, String)> = (0..n).map(|i| (i, condition.to_string())).collect();
    in_memory(spec, split_stream, &plan, n, modalities)
}

/// In-memory equivalent of [`Dataset::load_training`].
pub fn training_in_memory(spec: &DatasetSpec, split_stream: u64, n: usize, modalities: &[String]) -> Result<Vec<Example>> {
    in_memory(spec, split_stream, &training_conditions(n, &spec.corruptions), n, modalities)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_corruption_is_rejected() {
        let spec = DatasetSpec {
            corruptions: vec!["XX".into()],
            ..serde_json::from_str("{}").unwrap()
        };
        assert!(matches!(spec.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn corruption_seeds_differ_per_tag() {
        assert_ne!(corruption_seed(5, "LJ"), corruption_seed(5, "MB"));
        assert_eq!(corruption_seed(5, "LJ"), corruption_seed(5, "LJ"));
    }
}
