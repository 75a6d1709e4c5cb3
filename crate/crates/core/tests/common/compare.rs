//! Library-versus-oracle comparisons over random instances; each returns
//! the largest absolute difference seen.
#![allow(dead_code)]

use xinggan_core::objectives::{gan_loss_d, gan_loss_g};
use xinggan_core::xing::{as_block_parts, correlation_matrix, sa_block, AsBlockParams, FeatureCode, SaBlockParams};
use xinggan_core::{metrics, Graph, Tensor};

use super::{Arr, Lcg};

fn t(a: &Arr) -> Tensor<f64> {
    Tensor::new(&a.shape, a.data.clone()).unwrap()
}

fn kernel(a: &Arr) -> Tensor<f64> {
    // [c,c] stored as a 1x1 conv kernel
    Tensor::new(&[a.shape[0], a.shape[1], 1, 1], a.data.clone()).unwrap()
}

pub fn matmul(instances: usize, seed: u64) -> f64 {
    let mut rng = Lcg(seed);
    let mut worst = 0.0f64;
    for i in 0..instances {
        let (m, k, n) = (1 + i % 4, 2 + i % 5, 1 + (i * 7) % 6);
        let (a, b) = (rng.arr(&[m, k], -1.0, 1.0), rng.arr(&[k, n], -1.0, 1.0));
        let g = Graph::new();
        let got = g.constant(t(&a)).matmul(g.constant(t(&b))).unwrap().value();
        worst = worst.max(super::max_abs_diff(got.data(), &super::matmul(&a, &b).data));
    }
    worst
}

pub fn conv2d(instances: usize, seed: u64) -> f64 {
    let mut rng = Lcg(seed);
    let mut worst = 0.0f64;
    for i in 0..instances {
        let (cin, cout) = (1 + i % 3, 1 + (i / 3) % 3);
        let k = [1, 3, 4][i % 3];
        let (stride, pad) = (1 + i % 2, (i / 2) % 2);
        let (h, w) = (k + 2 + i % 4, k + 1 + (i / 4) % 3);
        let x = rng.arr(&[cin, h, w], -1.0, 1.0);
        let wt = rng.arr(&[cout, cin, k, k], -1.0, 1.0);
        let bias = rng.vec(cout, -1.0, 1.0);
        let g = Graph::new();
        let b = g.constant(Tensor::new(&[cout], bias.clone()).unwrap());
        let got = g.constant(t(&x)).conv2d(g.constant(t(&wt)), Some(b), stride, pad).unwrap().value();
        let want = super::conv2d(&x, &wt, Some(&bias), stride, pad);
        assert_eq!(got.shape(), &want.shape[..]);
        worst = worst.max(super::max_abs_diff(got.data(), &want.data));
    }
    worst
}

/// Batched `[B,Cin,H,W]` convolution against the per-item oracle.
pub fn conv2d_batched(instances: usize, seed: u64) -> f64 {
    let mut rng = Lcg(seed);
    let mut worst = 0.0f64;
    for i in 0..instances {
        let (n, cin, cout) = (2 + i % 3, 1 + i % 2, 2 + i % 3);
        let (k, stride, pad) = ([1, 3][i % 2], 1 + (i / 2) % 2, (i / 3) % 2);
        let (h, w) = (k + 3 + i % 3, k + 2 + i % 4);
        let items: Vec<Arr> = (0..n).map(|_| rng.arr(&[cin, h, w], -1.0, 1.0)).collect();
        let wt = rng.arr(&[cout, cin, k, k], -1.0, 1.0);
        let bias = rng.vec(cout, -1.0, 1.0);
        let flat: Vec<f64> = items.iter().flat_map(|a| a.data.iter().copied()).collect();
        let g = Graph::new();
        let x = g.constant(Tensor::new(&[n, cin, h, w], flat).unwrap());
        let b = g.constant(Tensor::new(&[cout], bias.clone()).unwrap());
        let got = x.conv2d(g.constant(t(&wt)), Some(b), stride, pad).unwrap().value();
        let want: Vec<f64> = items
            .iter()
            .flat_map(|a| super::conv2d(a, &wt, Some(&bias), stride, pad).data)
            .collect();
        assert_eq!(got.shape()[0], n);
        worst = worst.max(super::max_abs_diff(got.data(), &want));
    }
    worst
}

pub fn softmax_rows(instances: usize, seed: u64) -> f64 {
    let mut rng = Lcg(seed);
    let mut worst = 0.0f64;
    for i in 0..instances {
        let a = rng.arr(&[1 + i % 5, 1 + (i * 3) % 7], -6.0, 6.0);
        let g = Graph::new();
        let got = g.constant(t(&a)).softmax_rows().unwrap().value();
        worst = worst.max(super::max_abs_diff(got.data(), &super::softmax_rows(&a).data));
    }
    worst
}

fn dims(i: usize) -> (usize, usize, usize) {
    (1 + i % 3, 1 + i % 2, 1 + (i / 2) % 3)
}

pub fn correlation(instances: usize, seed: u64) -> f64 {
    let mut rng = Lcg(seed);
    let mut worst = 0.0f64;
    for i in 0..instances {
        let (c, h, w) = dims(i);
        let (q, k) = (rng.arr(&[c, h, w], -2.0, 2.0), rng.arr(&[c, h, w], -2.0, 2.0));
        let g = Graph::new();
        let got = correlation_matrix(g.constant(t(&q)), g.constant(t(&k))).unwrap().value();
        let want: Vec<f64> = super::correlation(&q, &k).concat();
        worst = worst.max(super::max_abs_diff(got.data(), &want));
    }
    worst
}

pub fn sa(instances: usize, seed: u64) -> f64 {
    let mut rng = Lcg(seed);
    let mut worst = 0.0f64;
    for i in 0..instances {
        let (c, h, w) = dims(i);
        let (fi, fp) = (rng.arr(&[c, h, w], -1.0, 1.0), rng.arr(&[c, h, w], -1.0, 1.0));
        let (wa, wb, wc) = (rng.arr(&[c, c], -1.0, 1.0), rng.arr(&[c, c], -1.0, 1.0), rng.arr(&[c, c], -1.0, 1.0));
        let alpha = rng.uniform(-1.5, 1.5);
        let g = Graph::new();
        let p = SaBlockParams {
            conv_a: g.constant(kernel(&wa)),
            conv_b: g.constant(kernel(&wb)),
            conv_c: g.constant(kernel(&wc)),
            alpha: g.constant(Tensor::new(&[1], vec![alpha]).unwrap()),
        };
        let got = sa_block(FeatureCode::appearance(g.constant(t(&fi))), FeatureCode::shape(g.constant(t(&fp))), &p)
            .unwrap()
            .map
            .value();
        let want = super::sa_block(&fi, &fp, &wa, &wb, &wc, alpha);
        worst = worst.max(super::max_abs_diff(got.data(), &want.data));
    }
    worst
}

pub fn as_(instances: usize, seed: u64) -> f64 {
    let mut rng = Lcg(seed);
    let mut worst = 0.0f64;
    for i in 0..instances {
        let (c, h, w) = dims(i);
        let fp = rng.arr(&[c, h, w], -1.0, 1.0);
        let (fi_prev, fi_new) = (rng.arr(&[c, h, w], -1.0, 1.0), rng.arr(&[c, h, w], -1.0, 1.0));
        let (wd, we, wh) = (rng.arr(&[c, c], -1.0, 1.0), rng.arr(&[c, c], -1.0, 1.0), rng.arr(&[c, c], -1.0, 1.0));
        let beta = rng.uniform(-1.5, 1.5);
        let mw = rng.arr(&[c, 2 * c, 3, 3], -0.5, 0.5);
        let mb = rng.vec(c, -0.5, 0.5);
        let g = Graph::new();
        let p = AsBlockParams {
            conv_d: g.constant(kernel(&wd)),
            conv_e: g.constant(kernel(&we)),
            conv_h: g.constant(kernel(&wh)),
            beta: g.constant(Tensor::new(&[1], vec![beta]).unwrap()),
            merge_weight: g.constant(t(&mw)),
            merge_bias: g.constant(Tensor::new(&[c], mb.clone()).unwrap()),
        };
        let out = as_block_parts(
            FeatureCode::shape(g.constant(t(&fp))),
            FeatureCode::appearance(g.constant(t(&fi_prev))),
            FeatureCode::appearance(g.constant(t(&fi_new))),
            &p,
        )
        .unwrap();
        let (pre, merged) = super::as_block(&fp, &fi_prev, &fi_new, &wd, &we, &wh, beta, &mw, &mb);
        worst = worst
            .max(super::max_abs_diff(out.pre_merge.value().data(), &pre.data))
            .max(super::max_abs_diff(out.code.map.value().data(), &merged.data));
    }
    worst
}

pub fn ssim(instances: usize, seed: u64) -> f64 {
    let mut rng = Lcg(seed);
    let mut worst = 0.0f64;
    for i in 0..instances {
        let (h, w) = (11 + i % 6, 11 + (i / 2) % 5);
        let a = rng.arr(&[1 + i % 3, h, w], -1.0, 1.0);
        // correlated partner so SSIM spans a useful range
        let mix = rng.uniform(0.0, 1.0);
        let noise = rng.vec(a.data.len(), -1.0, 1.0);
        let b = Arr::new(&a.shape, a.data.iter().zip(&noise).map(|(x, n)| mix * x + (1.0 - mix) * n).collect());
        let got = metrics::ssim(&t(&a), &t(&b)).unwrap();
        worst = worst.max((got - super::ssim(&a, &b)).abs());
    }
    worst
}

pub fn bce(instances: usize, seed: u64) -> f64 {
    let mut rng = Lcg(seed);
    let mut worst = 0.0f64;
    for i in 0..instances {
        let n = 1 + i % 8;
        let (real, fake) = (rng.vec(n, -4.0, 4.0), rng.vec(n, -4.0, 4.0));
        let g = Graph::new();
        let r = g.constant(Tensor::new(&[1, n, 1], real.clone()).unwrap());
        let f = g.constant(Tensor::new(&[1, n, 1], fake.clone()).unwrap());
        let d = gan_loss_d(r, f).unwrap().value().item();
        let gl = gan_loss_g(f).value().item();
        let want_d = 0.5 * (super::bce_mean(&real, 1.0) + super::bce_mean(&fake, 0.0));
        let want_g = super::bce_mean(&fake, 1.0);
        worst = worst.max((d - want_d).abs()).max((gl - want_g).abs());
    }
    worst
}
