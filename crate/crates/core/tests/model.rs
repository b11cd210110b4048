use amfuse::autodiff::Graph;
use amfuse::model::{count_params, forward_macs, quad_modalities, CmNext, ModelConfig};
use amfuse::nn::SelfQueryHub;
use amfuse::Tensor;

fn frames(m: usize, n: usize) -> Vec<Tensor> {
    (0..m)
        .map(|i| Tensor::from_fn(&[3, n, n], |j| ((j * (i + 3)) % 17) as f64 / 16.0))
        .collect()
}

#[test]
fn forward_scales_from_zero_to_eight_secondaries() {
    let base = ModelConfig::tiny(vec!["rgb".into()]);
    let mut cfg = base.clone();
    for extra in 0..=8 {
        let model = CmNext::new(cfg.clone(), 0).unwrap();
        let out = model.predict(&frames(extra + 1, 64)).unwrap();
        assert_eq!(out.shape(), &[cfg.num_classes, 64, 64]);
        assert!(out.data().iter().all(|v| v.is_finite()));
        cfg = cfg.with_extra_modality();
    }
}

#[test]
fn parameter_increment_is_the_hub_closed_form() {
    for cfg in [ModelConfig::tiny(quad_modalities()), ModelConfig::paper_b2(quad_modalities())] {
        let channels = cfg.stage_channels;
        let want: usize = channels.iter().map(|&c| SelfQueryHub::params_per_modality(c)).sum();
        assert_eq!(count_params(&cfg).unwrap().per_modality_increment, want);
        assert_eq!(want, channels.iter().map(|c| 11 * c + 1).sum::<usize>());
    }
}

#[test]
fn extra_modality_costs_under_five_percent_of_rgb_compute() {
    let quad = ModelConfig::paper_b2(quad_modalities());
    let rgb = forward_macs(&quad.with_modalities(vec!["rgb".into()]), 1024, 1024).unwrap();
    for cfg in [quad.with_modalities(vec!["rgb".into(), "depth".into()]), quad.clone()] {
        let inc = forward_macs(&cfg.with_extra_modality(), 1024, 1024).unwrap() - forward_macs(&cfg, 1024, 1024).unwrap();
        assert!((inc as f64) < 0.05 * rgb as f64, "{inc} vs {rgb}");
    }
}

#[test]
fn weights_round_trip_through_nnz() {
    let cfg = ModelConfig::tiny(quad_modalities());
    let model = CmNext::new(cfg.clone(), 5).unwrap();
    let back = CmNext::from_nnz(&model.to_nnz(), cfg.clone()).unwrap();
    let x = frames(4, 32);
    assert_eq!(model.predict(&x).unwrap(), back.predict(&x).unwrap());
    let other = cfg.with_modalities(vec!["rgb".into(), "depth".into()]);
    assert!(CmNext::from_nnz(&model.to_nnz(), other).is_err());
}

#[test]
fn wrong_inputs_are_rejected() {
    let model = CmNext::new(ModelConfig::tiny(quad_modalities()), 0).unwrap();
    assert!(model.predict(&frames(3, 32)).is_err());
    assert!(model.predict(&frames(4, 48)).is_err());
}

#[test]
fn input_gradients_reach_the_rgb_frame() {
    let model = CmNext::new(ModelConfig::tiny(quad_modalities()), 2).unwrap();
    let mut g = Graph::new();
    let b = model.bind(&mut g);
    let x: Vec<_> = frames(4, 32).iter().map(|f| g.leaf(&f.clone().with_grad())).collect();
    let logits = model.forward(&mut g, &b, &x).unwrap();
    let loss = g.mean(logits);
    g.backward(loss).unwrap();
    assert!(g.grad(x[0]).is_some_and(|v| v.iter().any(|&d| d != 0.0)));
}
