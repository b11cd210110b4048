use std::collections::BTreeMap;
use std::path::Path;

use amfuse::sensors::EVENT_THRESHOLD;
use amfuse::synth::{
    generate, log_luminance, make_split, Dataset, DatasetSpec, Scene, SceneObject, SceneSpec, Shape, CLEAN,
    CORRUPTIONS, GROUND_CLASS,
};
use sha2::{Digest, Sha256};

fn spec(seed: u64) -> SceneSpec {
    SceneSpec {
        seed,
        ..SceneSpec::default()
    }
}

#[test]
fn square_at_five_metres_reads_five() {
    let s = spec(0);
    let sq = SceneObject {
        shape: Shape::Rect,
        class: 1,
        z: 5.0,
        center: [0.0, 0.0],
        half_extent: [1.0, 1.0],
    };
    let out = Scene::new(s.clone(), vec![sq]).unwrap().render().unwrap();
    let n = s.size;
    for (y, x) in [(n / 2, n / 2), (n / 2 - 3, n / 2 + 4), (n / 2 + 5, n / 2 - 5)] {
        assert!((out.depth.data()[y * n + x] - 5.0).abs() < 1e-12);
        assert_eq!(out.labels[y * n + x], Some(1));
    }
}

#[test]
fn generation_is_deterministic() {
    for seed in [0, 7, 123] {
        assert_eq!(generate(&spec(seed)).unwrap(), generate(&spec(seed)).unwrap());
    }
    assert_ne!(generate(&spec(1)).unwrap().rgb, generate(&spec(2)).unwrap().rgb);
}

#[test]
fn empty_scene_is_ground_and_still_scene_is_silent() {
    let s = SceneSpec {
        objects: [0, 0],
        motion: [0.0, 0.0],
        ..spec(4)
    };
    let out = generate(&s).unwrap();
    assert!(out.labels.iter().all(|&l| l == Some(GROUND_CLASS)));
    assert!(out.events.events.is_empty());
}

#[test]
fn events_follow_the_log_luminance_change() {
    for seed in 0..4 {
        let s = spec(seed);
        let scene = Scene::sample(&s).unwrap();
        let out = scene.render().unwrap();
        let a = log_luminance(&scene, 0.0, 0.0);
        let b = log_luminance(&scene, s.motion[0], s.motion[1]);
        let mut counts = vec![(0usize, 0i8); a.len()];
        for e in &out.events.events {
            let c = &mut counts[e.y * s.size + e.x];
            c.0 += 1;
            c.1 = e.polarity;
        }
        for p in 0..a.len() {
            let d = b[p] - a[p];
            if d.abs() > EVENT_THRESHOLD {
                assert_eq!(counts[p].0, (d.abs() / EVENT_THRESHOLD).floor() as usize);
                assert_eq!(counts[p].1, if d > 0.0 { 1 } else { -1 });
            } else {
                assert_eq!(counts[p].0, 0);
            }
        }
    }
}

#[test]
fn lidar_agrees_with_depth_where_the_surface_is_smooth() {
    let mut checked = 0;
    for seed in 0..4 {
        let s = spec(seed);
        let out = generate(&s).unwrap();
        let cam = s.camera().unwrap();
        let n = s.size;
        let d = out.depth.data();
        for p in &out.lidar.points {
            let Some((col, row)) = cam.pixel(p.xyz) else { continue };
            if col == 0 || row == 0 || col + 1 >= n || row + 1 >= n {
                continue;
            }
            let centre = d[row * n + col];
            let smooth = (row - 1..=row + 1)
                .flat_map(|y| (col - 1..=col + 1).map(move |x| (y, x)))
                .all(|(y, x)| (d[y * n + x] - centre).abs() <= 0.002 * centre);
            if smooth {
                assert!((p.xyz[2] - centre).abs() <= 0.01 * centre, "{} vs {centre}", p.xyz[2]);
                checked += 1;
            }
        }
    }
    assert!(checked > 20, "only {checked} points compared");
}

fn digest_tree(root: &Path) -> BTreeMap<String, String> {
    fn walk(dir: &Path, root: &Path, out: &mut BTreeMap<String, String>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(&p, root, out);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                let h = Sha256::digest(std::fs::read(&p).unwrap());
                out.insert(rel, h.iter().map(|b| format!("{b:02x}")).collect());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

#[test]
fn split_layout_is_complete_and_reproducible() {
    let ds_spec: DatasetSpec = serde_json::from_str(r#"{"scene": {"seed": 3}, "train": 3, "val": 2}"#).unwrap();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let m = make_split(&ds_spec, a.path()).unwrap();
    make_split(&ds_spec, b.path()).unwrap();
    assert_eq!(m.splits["train"].len(), 3);
    assert_eq!(m.splits["val"].len(), 2);
    assert_eq!(digest_tree(a.path()), digest_tree(b.path()));

    let files = digest_tree(a.path());
    for e in m.splits.values().flatten() {
        for f in ["rgb.ppm", "depth.pgm", "event.evt", "lidar.xyz", "label.pgm"] {
            assert!(files.contains_key(&format!("{}/{f}", e.path)), "{} lacks {f}", e.path);
        }
        assert_eq!(e.variants, CORRUPTIONS.map(String::from).to_vec());
    }

    let ds = Dataset::open(a.path()).unwrap();
    let modalities: Vec<String> = ["rgb", "depth", "event", "lidar"].map(String::from).to_vec();
    for cond in ds.conditions() {
        let ex = ds.load("val", &cond, &modalities).unwrap();
        assert_eq!(ex.len(), 2);
        assert_eq!(ex[0].frames.len(), 4);
    }
    let clean = ds.load("val", CLEAN, &modalities).unwrap();
    let ue = ds.load("val", "UE", &modalities).unwrap();
    assert_eq!(clean[0].frames[1], ue[0].frames[1]);
    assert_ne!(clean[0].frames[0], ue[0].frames[0]);
    assert_eq!(ds.load_training("train", &modalities).unwrap().len(), 6);
}

#[test]
fn missing_split_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let ds_spec: DatasetSpec = serde_json::from_str(r#"{"train": 1}"#).unwrap();
    make_split(&ds_spec, dir.path()).unwrap();
    let ds = Dataset::open(dir.path()).unwrap();
    assert!(matches!(ds.entries("test"), Err(amfuse::Error::Usage(_))));
}
