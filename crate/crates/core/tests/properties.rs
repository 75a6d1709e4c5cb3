mod common;

use proptest::prelude::*;
use xinggan_core::metrics::{self, detect_joints, mask_ssim, pckh, pose_mask};
use xinggan_core::nets::{generator_forward, init_generator, GeneratorConfig, Variant};
use xinggan_core::objectives::{total_loss, LossParts, LossWeights};
use xinggan_core::synth::{render_person, sample_skeleton, Identity, ImageSize, PoseNoise, NUM_JOINTS};
use xinggan_core::xing::{correlation_matrix, init_sa_block, sa_block, FeatureCode, SaBlockParams};
use xinggan_core::{Binder, Graph, ParamStore, SeedRng, Tensor};

fn tensor(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor<f64> {
    SeedRng::new(seed).uniform_tensor(shape, lo, hi)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn correlation_is_row_stochastic(seed in any::<u64>(), c in 1usize..4, h in 1usize..4, w in 1usize..4) {
        let g = Graph::new();
        let q = g.constant(tensor(&[c, h, w], seed, -3.0, 3.0));
        let k = g.constant(tensor(&[c, h, w], seed ^ 1, -3.0, 3.0));
        let p = correlation_matrix(q, k).unwrap().value();
        let n = h * w;
        for j in 0..n {
            let row = &p.data()[j * n..(j + 1) * n];
            prop_assert!(row.iter().all(|&v| v >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_rows_shift_invariant(seed in any::<u64>(), shift in -50.0f64..50.0) {
        let x = tensor(&[4, 6], seed, -5.0, 5.0);
        let g = Graph::new();
        let a = g.constant(x.clone()).softmax_rows().unwrap().value();
        let b = g.constant(x.map(|v| v + shift)).softmax_rows().unwrap().value();
        prop_assert!(a.max_abs_diff(&b) <= 1e-10);
    }

    #[test]
    fn sa_block_is_position_equivariant(seed in any::<u64>()) {
        let (c, h, w) = (3, 2, 3);
        let n = h * w;
        let mut store = ParamStore::<f64>::new();
        init_sa_block(&mut store, "sa", c, &mut SeedRng::new(seed));
        *store.get_mut("sa.alpha").unwrap() = Tensor::scalar(0.8);
        let fi = tensor(&[c, h, w], seed ^ 2, -1.0, 1.0);
        let fp = tensor(&[c, h, w], seed ^ 3, -1.0, 1.0);
        let mut perm: Vec<usize> = (0..n).collect();
        let mut rng = SeedRng::new(seed ^ 4);
        for i in (1..n).rev() {
            perm.swap(i, rng.below(i + 1));
        }
        let permute = |t: &Tensor<f64>| Tensor::from_fn(&[c, h, w], |i| t.data()[(i / n) * n + perm[i % n]]);
        let run = |a: Tensor<f64>, b: Tensor<f64>| {
            let g = Graph::new();
            let binder = Binder::new(&g, &store, false);
            let p = SaBlockParams::bind(&binder, "sa").unwrap();
            let out = sa_block(FeatureCode::appearance(g.constant(a)), FeatureCode::shape(g.constant(b)), &p).unwrap();
            (*out.map.value()).clone()
        };
        let base = run(fi.clone(), fp.clone());
        let moved = run(permute(&fi), permute(&fp));
        prop_assert!(moved.max_abs_diff(&permute(&base)) <= 1e-12);
    }

    #[test]
    fn ssim_symmetric_and_self_one(seed in any::<u64>(), c in 1usize..4) {
        let a = tensor(&[c, 13, 12], seed, -1.0, 1.0);
        let b = tensor(&[c, 13, 12], seed ^ 9, -1.0, 1.0);
        let ab = metrics::ssim(&a, &b).unwrap();
        prop_assert!((ab - metrics::ssim(&b, &a).unwrap()).abs() <= 1e-9);
        prop_assert!((-1.0..=1.0).contains(&ab));
        prop_assert_eq!(metrics::ssim(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn rendering_and_detection_invariants(seed in any::<u64>(), id in 0u64..500) {
        let idt = Identity::generate(id, seed);
        let size = ImageSize::DESK;
        let sk = sample_skeleton(&idt, size, &PoseNoise::default(), &mut SeedRng::new(seed)).unwrap();
        prop_assert!(sk.in_bounds(size, 2.0));
        let hm = xinggan_core::synth::render_pose_heatmaps::<f64>(&sk, size, 1.5).unwrap();
        prop_assert_eq!(hm.decode(), sk.joints);
        let img = render_person::<f64>(&sk, &idt, size);
        prop_assert_eq!(mask_ssim(&img, &img, &pose_mask(&sk, 3.0, size)).unwrap(), 1.0);
        let found = detect_joints(&img).unwrap();
        let score = pckh(&found, &sk).unwrap();
        let steps = score * NUM_JOINTS as f64;
        prop_assert!((steps - steps.round()).abs() < 1e-12);
    }

    #[test]
    fn total_loss_is_linear_in_each_part(a in 0.0f64..5.0, b in 0.0f64..5.0, c in 0.0f64..5.0, k in 0.0f64..3.0) {
        let w = LossWeights::new(5.0, 50.0, 50.0).unwrap();
        let g = Graph::new();
        let s = |v: f64| g.constant(Tensor::scalar(v));
        let base = total_loss(&LossParts { gan: s(a), l1: s(b), perceptual: s(c) }, &w).unwrap().value().item();
        let scaled = total_loss(&LossParts { gan: s(a), l1: s(k * b), perceptual: s(c) }, &w).unwrap().value().item();
        prop_assert!((scaled - base - 50.0 * (k - 1.0) * b).abs() < 1e-9);
        let zero = LossWeights::new(0.0, 0.0, 0.0).unwrap();
        prop_assert_eq!(total_loss(&LossParts { gan: s(a), l1: s(b), perceptual: s(c) }, &zero).unwrap().value().item(), 0.0);
    }
}

#[test]
fn ten_thousand_skeletons_in_bounds() {
    let size = ImageSize::DESK;
    let noise = PoseNoise::default();
    let mut rng = SeedRng::new(77);
    for i in 0..10_000u64 {
        let idt = Identity::generate(i % 240, 42);
        let sk = sample_skeleton(&idt, size, &noise, &mut rng).unwrap();
        assert!(sk.in_bounds(size, 2.0), "sample {i}");
    }
}

#[test]
fn detection_round_trip_on_a_thousand_renders() {
    let size = ImageSize::DESK;
    let mut rng = SeedRng::new(5);
    let (mut total, mut count) = (0.0, 0);
    for i in 0..1000u64 {
        let idt = Identity::generate(i % 240, 9);
        let sk = sample_skeleton(&idt, size, &PoseNoise::default(), &mut rng).unwrap();
        let found = detect_joints(&render_person::<f32>(&sk, &idt, size)).unwrap();
        for (f, g) in found.iter().zip(&sk.joints) {
            let f = f.expect("every marker is visible on a clean render");
            total += ((f.0 - g.0).powi(2) + (f.1 - g.1).powi(2)).sqrt();
            count += 1;
        }
    }
    assert!(total / count as f64 <= 1.0);
}

#[test]
fn forward_is_deterministic() {
    let cfg = GeneratorConfig::new(Variant::Full, 2, 3, 8).unwrap();
    let mut store = init_generator::<f64>(&cfg, &mut SeedRng::new(3)).unwrap();
    for (name, t) in store.iter_mut() {
        if name.ends_with("sa.alpha") || name.ends_with("as.beta") {
            *t = Tensor::scalar(0.5);
        }
    }
    let inputs = (
        tensor(&[3, 16, 8], 1, -1.0, 1.0),
        tensor(&[18, 16, 8], 2, 0.0, 1.0),
        tensor(&[18, 16, 8], 3, 0.0, 1.0),
    );
    let run = || {
        let g = Graph::new();
        let b = Binder::new(&g, &store, false);
        let out = generator_forward(
            &b,
            &cfg,
            g.constant(inputs.0.clone()),
            g.constant(inputs.1.clone()),
            g.constant(inputs.2.clone()),
        )
        .unwrap();
        (*out.image.value()).clone()
    };
    assert_eq!(run(), run());
}
