use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mdn::segnet::loss::{loss_with_logit_grad, LossKind};
use mdn::segnet::tensor::Tensor;
use mdn::segnet::train::{train_step, Sample};
use mdn::segnet::{SegModelConfig, SegNet, Sgd};

fn tiny(depth: usize, size: usize) -> SegModelConfig {
    SegModelConfig {
        depth,
        base_channels: 2,
        input_size: size,
        ..Default::default()
    }
}

/// Bright square on a dim background with its mask.
fn square_sample(rng: &mut ChaCha8Rng, size: usize) -> Sample {
    let side = rng.random_range(size / 4..size / 2);
    let x0 = rng.random_range(0..size - side);
    let y0 = rng.random_range(0..size - side);
    let inside = |i: usize| {
        let (x, y) = (i % size, i / size);
        (x0..x0 + side).contains(&x) && (y0..y0 + side).contains(&y)
    };
    let n = size * size;
    let mut input = Vec::with_capacity(3 * n);
    for c in 0..3 {
        let gain = [1.0, 0.6, 0.25][c];
        input.extend((0..n).map(|i| {
            let v: f32 = if inside(i) { 0.9 } else { 0.1 };
            gain * v + rng.random_range(-0.02..0.02)
        }));
    }
    let target = (0..n).map(|i| inside(i) as u8 as f32).collect();
    Sample {
        input: Tensor::from_vec(3, size, size, input),
        target: Tensor::from_vec(1, size, size, target),
    }
}

fn batch_loss(model: &SegNet<f32>, batch: &[Sample]) -> f64 {
    let z: Vec<_> = batch.iter().map(|s| model.logits(&s.input).unwrap()).collect();
    let t: Vec<_> = batch.iter().map(|s| s.target.clone()).collect();
    loss_with_logit_grad(&z, &t, LossKind::BcePlusDice).unwrap().0
}

#[test]
fn small_step_does_not_increase_batch_loss() {
    let trials = 40;
    let mut decreased = 0;
    for seed in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let batch: Vec<Sample> = (0..2).map(|_| square_sample(&mut rng, 32)).collect();
        let mut model = SegNet::<f32>::new(tiny(2, 32), seed).unwrap();
        let before = batch_loss(&model, &batch);
        let mut opt = Sgd::new(model.params(), 1e-3, 0.0);
        let refs: Vec<&Sample> = batch.iter().collect();
        let reported = train_step(&mut model, &mut opt, &refs, LossKind::BcePlusDice).unwrap();
        assert!((reported - before).abs() < 1e-6 * before.max(1.0));
        if batch_loss(&model, &batch) <= before {
            decreased += 1;
        }
    }
    assert!(
        decreased * 100 >= 95 * trials,
        "loss decreased in {decreased}/{trials} trials"
    );
}

#[test]
fn output_matches_input_extent_at_every_depth() {
    for depth in 2..=5 {
        let size = 1 << (depth + 1);
        let net = SegNet::<f32>::new(tiny(depth, size), 0).unwrap();
        let y = net.logits(&Tensor::zeros(3, size, size)).unwrap();
        assert_eq!((y.channels, y.height, y.width), (1, size, size), "depth {depth}");
    }
}

#[test]
fn batch_members_are_scored_independently() {
    let net = SegNet::<f32>::new(tiny(2, 16), 8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let xs: Vec<Tensor<f32>> = (0..3)
        .map(|_| Tensor::from_vec(3, 16, 16, (0..768).map(|_| rng.random()).collect()))
        .collect();
    let together = net.forward(&xs).unwrap();
    for (x, y) in xs.iter().zip(&together) {
        let alone = net.forward(std::slice::from_ref(x)).unwrap();
        assert_eq!(alone[0].data, y.data);
        assert!(y.data.iter().all(|&p| (0.0..=1.0).contains(&p)));
    }
    let reversed: Vec<_> = xs.iter().rev().cloned().collect();
    let back = net.forward(&reversed).unwrap();
    assert_eq!(back[2].data, together[0].data);
}

#[test]
fn f32_and_f64_forward_agree() {
    let a = SegNet::<f32>::new(tiny(3, 32), 4).unwrap();
    let b = a.cast::<f64>();
    let x: Vec<f64> = (0..3 * 32 * 32).map(|i| ((i * 31) % 97) as f64 / 97.0).collect();
    let ya = a.logits(&Tensor::from_vec(3, 32, 32, x.iter().map(|&v| v as f32).collect())).unwrap();
    let yb = b.logits(&Tensor::from_vec(3, 32, 32, x)).unwrap();
    for (p, q) in ya.data.iter().zip(&yb.data) {
        assert!((*p as f64 - q).abs() < 1e-4, "{p} vs {q}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn probabilities_stay_in_unit_interval(seed in any::<u64>(), scale in 0.0f32..50.0) {
        let net = SegNet::<f32>::new(tiny(2, 16), seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::from_vec(3, 16, 16, (0..768).map(|_| scale * rng.random::<f32>()).collect());
        let y = net.forward(&[x]).unwrap();
        prop_assert!(y[0].data.iter().all(|p| p.is_finite() && (0.0..=1.0).contains(p)));
    }
}
