use proptest::prelude::*;

use dsen::data::Dataset;
use dsen::model::{checkpoint, ModelConfig, ModelGraph};
use dsen::refine::{forward_multistage, restore, LinkMode, RefineConfig};
use dsen::rng::random_tensor;
use dsen::train::{train, Augment, TrainConfig, TrainOutputs};
use dsen::Tensor;

fn small(stages: usize, link: LinkMode) -> RefineConfig {
    RefineConfig {
        stages,
        link,
        base: ModelConfig {
            regular_channels: 4,
            p4_layers: 2,
            kernel: 3,
            ..ModelConfig::default()
        },
    }
}

#[test]
fn a_saved_checkpoint_reproduces_the_network() {
    let cfg = small(2, LinkMode::SkipConcat);
    let model = ModelGraph::<f32>::build(cfg.clone(), 8).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    checkpoint::save(model.params(), &path).unwrap();
    let loaded = ModelGraph::from_params(cfg, checkpoint::load(&path).unwrap()).unwrap();
    let image = random_tensor::<f32>(&[3, 10, 7], 1);
    let (a, _) = restore(&model, &image).unwrap();
    let (b, _) = restore(&loaded, &image).unwrap();
    assert_eq!(a.data(), b.data());
}

/// Pairs whose rain is a constant offset, which a network learns through its biases.
fn offset_pairs(n: usize) -> Dataset {
    let mut ds = Dataset::default();
    for i in 0..n {
        let noise = random_tensor::<f32>(&[3, 12, 12], 100 + i as u64);
        let clean = Tensor::from_vec(&[3, 12, 12], noise.data().iter().map(|v| 0.5 + 0.25 * v).collect()).unwrap();
        let rainy = Tensor::from_vec(&[3, 12, 12], clean.data().iter().map(|v| v + 0.2).collect()).unwrap();
        ds.push(format!("p{i}"), rainy, clean);
    }
    ds
}

fn short_run(seed: u64) -> TrainConfig {
    TrainConfig {
        batch: 2,
        crop: 8,
        max_steps: 40,
        lr0: 0.002,
        augment: Augment::C4,
        seed,
        ..TrainConfig::default()
    }
}

#[test]
fn training_is_deterministic_and_learns_an_offset() {
    let ds = offset_pairs(4);
    let outputs = TrainOutputs { checkpoint: None, log: None };
    let run = || {
        let mut model = ModelGraph::<f32>::build(small(2, LinkMode::SkipConcat), 3).unwrap();
        let records = train(&mut model, &ds, &short_run(3), &outputs).unwrap();
        (records, checkpoint::encode(model.params()))
    };
    let (a, wa) = run();
    let (b, wb) = run();
    assert_eq!(wa, wb);
    assert_eq!(a.len(), 40);
    assert!(a.iter().zip(&b).all(|(x, y)| x.loss.to_bits() == y.loss.to_bits()));
    let head: f64 = a[..5].iter().map(|r| r.loss).sum();
    let tail: f64 = a[35..].iter().map(|r| r.loss).sum();
    assert!(tail < 0.5 * head, "head {head} tail {tail}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn restoring_keeps_the_image_size(h in 5usize..14, w in 5usize..14, stages in 1usize..4, seed in any::<u32>()) {
        let model = ModelGraph::<f32>::build(small(stages, LinkMode::SkipConcat), seed as u64).unwrap();
        let image = random_tensor::<f32>(&[3, h, w], seed as u64);
        let (restored, rain) = restore(&model, &image).unwrap();
        prop_assert_eq!(restored.shape(), &[3, h, w]);
        prop_assert_eq!(rain.shape(), &[3, h, w]);
        // The removed rain is the sum of the per-stage rain layers.
        let batch = Tensor::from_vec(&[1, 3, h, w], image.data().to_vec()).unwrap();
        let stages = forward_multistage(&model, &batch).unwrap();
        for (i, r) in rain.data().iter().enumerate() {
            let total: f32 = stages.iter().map(|s| s.rain.data()[i]).sum();
            prop_assert!((r - total).abs() <= 1e-4 * (1.0 + total.abs()), "{} vs {}", r, total);
        }
    }
}
