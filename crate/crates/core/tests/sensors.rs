use std::collections::BTreeSet;

use amfuse::sensors::io::{
    format_evt, format_xyz, parse_evt, parse_xyz, read_depth_pgm, read_frame_tsr1, read_label_pgm, read_ppm,
    write_depth_pgm, write_frame_tsr1, write_label_pgm, write_ppm,
};
use amfuse::sensors::{
    corrupt_event_lowres, corrupt_exposure, corrupt_lidar_jitter, corrupt_motion_blur, depth_to_frame, depth_to_hha,
    events_to_frame, CameraIntrinsics, Event, EventStream, FrameKind, JitterConfig, JitterSample, LidarPoint,
    ModalityFrame, PointCloud,
};
use amfuse::synth::{generate, SceneSpec};
use amfuse::{Error, Tensor};
use proptest::prelude::*;

fn active(frame: &ModalityFrame) -> usize {
    let (h, w) = (frame.height(), frame.width());
    let d = frame.data.data();
    (0..h * w).filter(|&p| d[p] > 0.0 || d[2 * h * w + p] > 0.0).count()
}

#[test]
fn jitter_stays_within_bounds_for_a_thousand_seeds() {
    let cfg = JitterConfig::default();
    for seed in 0..1000 {
        let s = JitterSample::draw(&cfg, seed).unwrap();
        assert!(s.angles_deg.iter().all(|a| a.abs() <= 1.0));
        assert!(s.translation_m.iter().all(|t| t.abs() <= 0.01));
        assert!(s.rotation_magnitude_deg() <= 3f64.sqrt() + 1e-12);
    }
}

#[test]
fn jitter_is_rigid() {
    let cloud = PointCloud {
        points: (0..20)
            .map(|i| LidarPoint {
                xyz: [i as f64 * 0.3 - 3.0, (i % 4) as f64, 5.0 + i as f64],
                class_id: Some(i % 3),
            })
            .collect(),
    };
    let (moved, _) = corrupt_lidar_jitter(&cloud, 9, &JitterConfig::default()).unwrap();
    let dist = |a: [f64; 3], b: [f64; 3]| a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    for i in 0..20 {
        for j in 0..i {
            let before = dist(cloud.points[i].xyz, cloud.points[j].xyz);
            let after = dist(moved.points[i].xyz, moved.points[j].xyz);
            assert!((before - after).abs() < 1e-9);
        }
        assert_eq!(moved.points[i].class_id, cloud.points[i].class_id);
    }
}

#[test]
fn lowres_events_keep_exactly_the_downscaled_support() {
    for seed in 0..5 {
        let s = generate(&SceneSpec { seed, ..SceneSpec::default() }).unwrap();
        let n = s.size;
        let full = events_to_frame(&s.events, n, n).unwrap();
        let (low, lw, lh) = corrupt_event_lowres(&s.events, n, n, 0.25).unwrap();
        assert_eq!((lw, lh), (n / 4, n / 4));
        let small = events_to_frame(&low, lw, lh).unwrap();
        let support: BTreeSet<(usize, usize)> = s.events.events.iter().map(|e| (e.x / 4, e.y / 4)).collect();
        assert_eq!(active(&small), support.len());
        assert!(active(&small) <= active(&full));
    }
}

#[test]
fn lowres_without_collisions_keeps_every_pixel() {
    let events = (0..6)
        .map(|i| Event {
            x: 4 * i,
            y: 4 * (5 - i),
            t: i as u64,
            polarity: if i % 2 == 0 { 1 } else { -1 },
        })
        .collect();
    let s = EventStream { events, t0: 0, t1: 10 };
    let (low, lw, lh) = corrupt_event_lowres(&s, 24, 24, 0.25).unwrap();
    assert_eq!(
        active(&events_to_frame(&low, lw, lh).unwrap()),
        active(&events_to_frame(&s, 24, 24).unwrap())
    );
}

#[test]
fn blur_and_exposure_behave_at_the_edges() {
    let s = generate(&SceneSpec::default()).unwrap();
    assert_eq!(corrupt_motion_blur(&s.rgb, 1, 0.3).unwrap().data, s.rgb.data);
    let mb = corrupt_motion_blur(&s.rgb, 7, 0.0).unwrap();
    assert_eq!(mb.provenance.corruptions, vec!["MB".to_string()]);
    let mean = |f: &ModalityFrame| f.data.data().iter().sum::<f64>() / f.data.numel() as f64;
    assert!(mean(&corrupt_exposure(&s.rgb, 0.3).unwrap()) < mean(&s.rgb));
    assert!(mean(&corrupt_exposure(&s.rgb, 3.0).unwrap()) > mean(&s.rgb));
    assert!(matches!(corrupt_motion_blur(&s.rgb, 0, 0.0), Err(Error::Config(_))));
}

#[test]
fn depth_goldens() {
    let f = depth_to_frame(&Tensor::new(vec![1, 3], vec![1e-300, 50.0, 400.0]).unwrap(), 50.0).unwrap();
    let v = f.data.data();
    assert!(v[0] > 0.0 && v[0] < 1e-299);
    assert_eq!((v[1], v[2]), (1.0, 1.0));
    for bad in [0.0, -1.0] {
        let t = Tensor::new(vec![1, 1], vec![bad]).unwrap();
        assert!(matches!(depth_to_frame(&t, 50.0), Err(Error::Data(_))));
    }
}

#[test]
fn hha_channels_are_normalised() {
    let s = generate(&SceneSpec::default()).unwrap();
    let cam = CameraIntrinsics::new(90.0, s.size, s.size).unwrap();
    let f = depth_to_hha(&s.depth, &cam).unwrap();
    assert_eq!(f.kind, FrameKind::Hha);
    assert!(f.data.data().iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let s = generate(&SceneSpec { seed: 5, ..SceneSpec::default() }).unwrap();
    let n = s.size;

    write_ppm(&dir.path().join("a.ppm"), &s.rgb).unwrap();
    let rgb = read_ppm(&dir.path().join("a.ppm"), FrameKind::Rgb).unwrap();
    assert!(rgb.data.max_abs_diff(&s.rgb.data) <= 0.5 / 255.0 + 1e-12);

    write_frame_tsr1(&dir.path().join("a.tsr"), &s.rgb).unwrap();
    assert_eq!(read_frame_tsr1(&dir.path().join("a.tsr"), FrameKind::Rgb).unwrap().data, s.rgb.data);

    write_depth_pgm(&dir.path().join("d.pgm"), &s.depth).unwrap();
    assert!(read_depth_pgm(&dir.path().join("d.pgm")).unwrap().max_abs_diff(&s.depth) <= 5e-4 + 1e-12);

    write_label_pgm(&dir.path().join("l.pgm"), &s.labels, n, n).unwrap();
    assert_eq!(read_label_pgm(&dir.path().join("l.pgm")).unwrap(), (s.labels.clone(), n, n));

    assert_eq!(parse_evt(&format_evt(&s.events)).unwrap(), s.events);
    let back = parse_xyz(&format_xyz(&s.lidar)).unwrap();
    assert_eq!(back.points.len(), s.lidar.points.len());
    for (a, b) in back.points.iter().zip(&s.lidar.points) {
        assert_eq!(a.class_id, b.class_id);
        assert!(a.xyz.iter().zip(&b.xyz).all(|(x, y)| (x - y).abs() < 1e-9));
    }
}

#[test]
fn malformed_inputs_are_format_errors() {
    assert!(matches!(parse_evt("1 2 three 1\n"), Err(Error::Format(_))));
    assert!(matches!(parse_xyz("1.0 2.0\n"), Err(Error::Format(_))));
}

proptest! {
    #[test]
    fn projection_round_trips(
        fov in 30.0f64..150.0, side in 8usize..2048,
        u in 0.0f64..1.0, v in 0.0f64..1.0, z in 0.1f64..100.0,
    ) {
        let cam = CameraIntrinsics::new(fov, side, side).unwrap();
        let (pu, pv) = (u * side as f64, v * side as f64);
        let (ru, rv) = cam.project(cam.back_project(pu, pv, z)).unwrap();
        prop_assert!((ru - pu).abs() < 0.5 && (rv - pv).abs() < 0.5);
    }
}
