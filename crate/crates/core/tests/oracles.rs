mod common;

use common::{compare, Arr, Lcg};
use xinggan_core::metrics::{self, detect_joints, mask_ssim, pckh, pose_mask, segments_mask, Mask};
use xinggan_core::objectives::{l1_loss, perceptual_loss, FeatureExtractor};
use xinggan_core::synth::{render_person, sample_skeleton, Identity, ImageSize, PoseNoise, Skeleton, LIMBS, NUM_JOINTS};
use xinggan_core::{Graph, SeedRng, Tensor};

const TOL: f64 = 1e-10;

#[test]
fn matmul_matches_triple_loop() {
    assert!(compare::matmul(50, 1) <= TOL);
}

#[test]
fn conv2d_matches_nested_loops() {
    assert!(compare::conv2d(60, 2) <= TOL);
}

#[test]
fn batched_conv2d_matches_per_item_loops() {
    assert!(compare::conv2d_batched(40, 12) <= TOL);
}

#[test]
fn softmax_rows_matches_direct_formula() {
    assert!(compare::softmax_rows(50, 3) <= TOL);
}

#[test]
fn correlation_matches_scalar_loop() {
    assert!(compare::correlation(50, 4) <= TOL);
}

#[test]
fn sa_block_matches_scalar_loop() {
    assert!(compare::sa(50, 5) <= TOL);
}

#[test]
fn as_block_matches_scalar_loop() {
    assert!(compare::as_(50, 6) <= TOL);
}

#[test]
fn ssim_matches_direct_windowed_formula() {
    assert!(compare::ssim(30, 7) <= 1e-8);
}

#[test]
fn bce_matches_probability_formula() {
    assert!(compare::bce(50, 8) <= TOL);
}

/// Scatter form of the transposed convolution.
fn conv_transpose_ref(x: &Arr, w: &Arr, stride: usize, pad: usize) -> Arr {
    let (cin, h, wd) = (x.shape[0], x.shape[1], x.shape[2]);
    let (cout, k) = (w.shape[1], w.shape[2]);
    let full_h = (h - 1) * stride + k;
    let full_w = (wd - 1) * stride + k;
    let mut full = vec![0.0; cout * full_h * full_w];
    for c in 0..cin {
        for y in 0..h {
            for xx in 0..wd {
                for o in 0..cout {
                    for ky in 0..k {
                        for kx in 0..k {
                            full[(o * full_h + y * stride + ky) * full_w + xx * stride + kx] +=
                                x.at3(c, y, xx) * w.data[((c * cout + o) * k + ky) * k + kx];
                        }
                    }
                }
            }
        }
    }
    let (oh, ow) = (full_h - 2 * pad, full_w - 2 * pad);
    let mut out = vec![0.0; cout * oh * ow];
    for o in 0..cout {
        for y in 0..oh {
            for xx in 0..ow {
                out[(o * oh + y) * ow + xx] = full[(o * full_h + y + pad) * full_w + xx + pad];
            }
        }
    }
    Arr::new(&[cout, oh, ow], out)
}

#[test]
fn conv_transpose_matches_scatter() {
    let mut rng = Lcg(11);
    for i in 0..20 {
        let (cin, cout) = (1 + i % 3, 1 + (i / 3) % 3);
        let x = rng.arr(&[cin, 2 + i % 3, 1 + i % 4], -1.0, 1.0);
        let w = rng.arr(&[cin, cout, 4, 4], -1.0, 1.0);
        let g = Graph::new();
        let got = g
            .constant(Tensor::new(&x.shape, x.data.clone()).unwrap())
            .conv_transpose2d(g.constant(Tensor::new(&w.shape, w.data.clone()).unwrap()), None, 2, 1)
            .unwrap()
            .value();
        let want = conv_transpose_ref(&x, &w, 2, 1);
        assert_eq!(got.shape(), &want.shape[..]);
        assert!(common::max_abs_diff(got.data(), &want.data) <= TOL);
    }
}

#[test]
fn instance_norm_matches_per_channel_statistics() {
    let mut rng = Lcg(12);
    let x = rng.arr(&[3, 4, 5], -2.0, 2.0);
    let (gamma, beta) = (rng.vec(3, 0.5, 1.5), rng.vec(3, -1.0, 1.0));
    let g = Graph::new();
    let got = g
        .constant(Tensor::new(&x.shape, x.data.clone()).unwrap())
        .instance_norm(
            g.constant(Tensor::new(&[3], gamma.clone()).unwrap()),
            g.constant(Tensor::new(&[3], beta.clone()).unwrap()),
            1e-5,
        )
        .unwrap()
        .value();
    for c in 0..3 {
        let plane = &x.data[c * 20..(c + 1) * 20];
        let mean = plane.iter().sum::<f64>() / 20.0;
        let var = plane.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 20.0;
        for (i, v) in plane.iter().enumerate() {
            let want = gamma[c] * (v - mean) / (var + 1e-5).sqrt() + beta[c];
            assert!((got.data()[c * 20 + i] - want).abs() < 1e-12);
        }
    }
}

#[test]
fn l1_matches_scalar_loop_and_examples() {
    let mut rng = Lcg(13);
    let (a, b) = (rng.vec(24, -1.0, 1.0), rng.vec(24, -1.0, 1.0));
    let g = Graph::new();
    let ta = g.constant(Tensor::new(&[2, 3, 4], a.clone()).unwrap());
    let tb = g.constant(Tensor::new(&[2, 3, 4], b.clone()).unwrap());
    let want = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / 24.0;
    assert!((l1_loss(ta, tb).unwrap().value().item() - want).abs() <= 1e-12);
    assert_eq!(l1_loss(ta, ta).unwrap().value().item(), 0.0);
    let shifted = g.constant(Tensor::new(&[2, 3, 4], a.iter().map(|v| v + 0.5).collect()).unwrap());
    assert!((l1_loss(shifted, ta).unwrap().value().item() - 0.5).abs() < 1e-12);
    assert!(l1_loss(ta, g.constant(Tensor::zeros(&[2, 3, 3]))).is_err());
}

#[test]
fn perceptual_zero_on_identical_and_positive_otherwise() {
    let fx = FeatureExtractor::<f64>::seeded(5);
    let mut rng = SeedRng::new(9);
    let a = rng.uniform_tensor::<f64>(&[3, 16, 8], -1.0, 1.0);
    let b = a.map(|v| v + 0.01);
    let g = Graph::new();
    let (va, vb) = (g.constant(a), g.constant(b));
    assert_eq!(perceptual_loss(&fx, va, va).unwrap().value().item(), 0.0);
    assert!(perceptual_loss(&fx, va, vb).unwrap().value().item() > 0.0);
}

fn halves() -> Tensor<f64> {
    Tensor::from_fn(&[1, 16, 16], |i| if i % 16 < 8 { -1.0 } else { 1.0 })
}

#[test]
fn ssim_anticorrelated_is_negative() {
    let x = halves();
    let inv = x.map(|v| -v);
    assert!(metrics::ssim(&x, &inv).unwrap() < 0.0);
}

#[test]
fn mask_ssim_full_mask_equals_ssim_and_ignores_outside() {
    let mut rng = SeedRng::new(3);
    let a = rng.uniform_tensor::<f64>(&[3, 16, 12], -1.0, 1.0);
    let b = rng.uniform_tensor::<f64>(&[3, 16, 12], -1.0, 1.0);
    let full = Mask {
        height: 16,
        width: 12,
        bits: vec![true; 192],
    };
    assert_eq!(mask_ssim(&a, &b, &full).unwrap(), metrics::ssim(&a, &b).unwrap());
    // b2 differs from a only in the right half; mask keeps the left half
    let b2 = Tensor::from_fn(&[3, 16, 12], |i| if i % 12 < 6 { a.data()[i] } else { -a.data()[i] });
    let mut left = Mask::empty(16, 12);
    for y in 0..16 {
        for x in 0..6 {
            left.bits[y * 12 + x] = true;
        }
    }
    let masked = mask_ssim(&a, &b2, &left).unwrap();
    assert!(masked > metrics::ssim(&a, &b2).unwrap());
    assert_eq!(mask_ssim(&a, &a, &left).unwrap(), 1.0);
}

#[test]
fn mask_area_grows_with_radius() {
    let idt = Identity::generate(1, 2);
    let sk = idt.canonical_pose(ImageSize::DESK);
    let areas: Vec<usize> = (1..=5).map(|r| pose_mask(&sk, r as f64, ImageSize::DESK).count()).collect();
    assert!(areas.windows(2).all(|w| w[0] <= w[1]), "{areas:?}");
    assert_eq!(segments_mask(&sk.joints, &[], 5.0, ImageSize::DESK).count(), 0);
}

#[test]
fn pckh_threshold_arithmetic() {
    let mut joints = [(10.0, 30.0); NUM_JOINTS];
    joints[0] = (10.0, 22.0);
    let gt = Skeleton { joints };
    assert_eq!(gt.head_length(), 8.0);
    let pred: [Option<(f64, f64)>; NUM_JOINTS] = std::array::from_fn(|j| Some((gt.joints[j].0 + 10.0, gt.joints[j].1)));
    assert_eq!(pckh(&pred, &gt), Some(0.0));
    let exact: [Option<(f64, f64)>; NUM_JOINTS] = std::array::from_fn(|j| Some(gt.joints[j]));
    assert_eq!(pckh(&exact, &gt), Some(1.0));
    let near: [Option<(f64, f64)>; NUM_JOINTS] = std::array::from_fn(|j| Some((gt.joints[j].0 + 4.0, gt.joints[j].1)));
    assert_eq!(pckh(&near, &gt), Some(1.0));
}

#[test]
fn detection_on_gray_and_under_palette_permutation() {
    let gray = Tensor::<f64>::full(&[3, 64, 32], -0.5);
    assert!(detect_joints(&gray).unwrap().iter().all(Option::is_none));
    let a = Identity::generate(5, 1);
    let mut b = a.clone();
    b.limb_palette.reverse();
    let sk = sample_skeleton(&a, ImageSize::DESK, &PoseNoise::default(), &mut SeedRng::new(4)).unwrap();
    let da = detect_joints(&render_person::<f64>(&sk, &a, ImageSize::DESK)).unwrap();
    let db = detect_joints(&render_person::<f64>(&sk, &b, ImageSize::DESK)).unwrap();
    assert_eq!(da, db);
}

#[test]
fn identities_differ_only_on_limb_pixels() {
    let a = Identity::generate(1, 0);
    let b = Identity::generate(2, 0);
    let sk = sample_skeleton(&a, ImageSize::DESK, &PoseNoise::default(), &mut SeedRng::new(8)).unwrap();
    let (ia, ib) = (render_person::<f64>(&sk, &a, ImageSize::DESK), render_person::<f64>(&sk, &b, ImageSize::DESK));
    let limbs = segments_mask(&sk.joints, &LIMBS, 1.0, ImageSize::DESK);
    let mut differing = 0;
    for y in 0..64 {
        for x in 0..32 {
            let diff = (0..3).any(|c| ia.at(&[c, y, x]) != ib.at(&[c, y, x]));
            if diff {
                differing += 1;
                assert!(limbs.get(y, x), "pixel ({x},{y}) differs off the limbs");
            }
        }
    }
    assert!(differing > 0);
}
