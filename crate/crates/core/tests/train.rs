use amfuse::model::{quad_modalities, CmNext, ModelConfig};
use amfuse::synth::{examples_in_memory, DatasetSpec, Example, CLEAN};
use amfuse::train::{
    augment, evaluate, poly_lr, train, AugmentConfig, ConfusionMatrix, EvalReport, TrainConfig, Trainer,
};
use amfuse::Tensor;

fn block_example(k: usize, seed: u64) -> Example {
    let n = 32;
    let labels: Vec<Option<usize>> = (0..n * n)
        .map(|p| {
            let (y, x) = (p / n / 16, p % n / 16);
            Some(((y * 2 + x) as u64 * 3 + seed) as usize % k)
        })
        .collect();
    let plane: Vec<f64> = labels.iter().map(|l| l.unwrap() as f64 / k as f64).collect();
    let frame = |_: usize| Tensor::new(vec![3, n, n], plane.repeat(3)).unwrap();
    Example {
        id: format!("{seed}"),
        condition: CLEAN.into(),
        frames: vec![frame(0), frame(1)],
        labels,
    }
}

#[test]
fn augmentation_keeps_frames_and_labels_aligned() {
    let k = 5;
    for seed in 0..20 {
        let ex = block_example(k, seed);
        let cfg = AugmentConfig {
            crop: Some(32),
            ..AugmentConfig::default()
        };
        let out = augment(&ex, seed, &cfg).unwrap();
        let n = out.frames[1].shape()[1];
        assert_eq!(out.labels.len(), n * n);
        let d = out.frames[1].data();
        let mut checked = 0;
        for y in 2..n - 2 {
            for x in 2..n - 2 {
                let Some(l) = out.labels[y * n + x] else { continue };
                let uniform = (y - 2..=y + 2).all(|yy| (x - 2..=x + 2).all(|xx| out.labels[yy * n + xx] == Some(l)));
                if uniform {
                    assert!((d[y * n + x] - l as f64 / k as f64).abs() < 1e-9, "seed {seed} at ({y}, {x})");
                    checked += 1;
                }
            }
        }
        assert!(checked > 0);
    }
}

fn tiny(classes: usize) -> ModelConfig {
    ModelConfig {
        num_classes: classes,
        ..ModelConfig::tiny(quad_modalities())
    }
}

fn data(n: usize) -> Vec<Example> {
    let spec: DatasetSpec = serde_json::from_str(r#"{"scene": {"seed": 2, "size": 32, "num_classes": 5}}"#).unwrap();
    examples_in_memory(&spec, 0, n, CLEAN, &quad_modalities()).unwrap()
}

#[test]
fn loss_falls_over_fifty_steps() {
    let set = data(4);
    let cfg = TrainConfig {
        lr: 1e-3,
        augment: AugmentConfig {
            enabled: false,
            ..AugmentConfig::default()
        },
        ..TrainConfig::default()
    };
    let mut t = Trainer::new(CmNext::new(tiny(5), 0).unwrap(), cfg).unwrap();
    let losses: Vec<f64> = (0..50).map(|_| t.step(&set, 1e-3).unwrap().0).collect();
    let head = losses[..5].iter().sum::<f64>() / 5.0;
    let tail = losses[45..].iter().sum::<f64>() / 5.0;
    assert!(tail < 0.7 * head, "{head} -> {tail}");
}

#[test]
fn training_is_deterministic() {
    let set = data(3);
    let cfg = TrainConfig {
        epochs: 2,
        warmup_epochs: 1,
        batch_size: 2,
        lr: 1e-3,
        ..TrainConfig::default()
    };
    let run = || train(CmNext::new(tiny(5), 1).unwrap(), &set, &set, &cfg, |_| Ok(())).unwrap();
    let (m1, l1) = run();
    let (m2, l2) = run();
    assert_eq!(l1, l2);
    assert_eq!(m1.to_nnz(), m2.to_nnz());
    assert!(l1.iter().all(|l| l.val_miou.is_some()));
}

#[test]
fn perfect_predictions_score_one() {
    let labels: Vec<Option<usize>> = (0..64).map(|i| Some(i % 3)).collect();
    let preds: Vec<usize> = labels.iter().map(|l| l.unwrap()).collect();
    let mut cm = ConfusionMatrix::new(3);
    cm.add(&labels, &preds).unwrap();
    let r = EvalReport::from_matrices(vec![("clean".into(), cm, 1)]);
    assert_eq!(r.mean, Some(1.0));
    assert_eq!(r.groups["clean"].pixel_accuracy, Some(1.0));
}

#[test]
fn report_table_mirrors_condition_order() {
    let set = data(2);
    let model = CmNext::new(tiny(5), 0).unwrap();
    let groups = vec![("clean".to_string(), set.clone()), ("UE".to_string(), set)];
    let r = evaluate(&model, &groups).unwrap();
    let table = r.table();
    let head: Vec<&str> = table.lines().next().unwrap().split_whitespace().collect();
    assert_eq!(head, vec!["clean", "UE", "Mean"]);
}

#[test]
fn schedule_warms_up_then_decays() {
    let lr = 1e-3;
    assert!((poly_lr(0, 0.0, lr, 2, 10, 0.9) - 1e-4).abs() < 1e-18);
    assert!(poly_lr(5, 0.0, lr, 2, 10, 0.9) < poly_lr(3, 0.0, lr, 2, 10, 0.9));
    assert_eq!(poly_lr(5, 0.3, lr, 0, 10, 0.0), lr);
}
