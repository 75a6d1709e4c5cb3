//! Image quality and pose-fidelity scores for generated people.

use crate::error::{invalid, mismatch, Result};
use crate::synth::{for_each_near, marker_colors, ImageSize, Skeleton, LIMBS, NECK, NOSE, NUM_JOINTS};
use crate::tensor::{Scalar, Tensor};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;
/// A pixel belongs to a marker when its `[0,1]` RGB lies this close.
pub const DETECTION_RADIUS: f64 = 0.15;
/// Fraction of head length within which a joint counts as correct.
pub const PCKH_FRACTION: f64 = 0.5;
pub const DEFAULT_MASK_RADIUS: f64 = 3.0;

fn to_unit<S: Scalar>(img: &Tensor<S>) -> Vec<f64> {
    img.data().iter().map(|v| (v.f64() + 1.0) * 0.5).collect()
}

fn check_images<S: Scalar>(op: &'static str, a: &Tensor<S>, b: &Tensor<S>) -> Result<(usize, usize, usize)> {
    if a.shape() != b.shape() {
        return Err(mismatch(op, a.shape(), b.shape()));
    }
    if a.shape().len() != 3 {
        return Err(invalid(op, format!("expected [C,H,W], got {:?}", a.shape())));
    }
    let (c, h, w) = (a.shape()[0], a.shape()[1], a.shape()[2]);
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(invalid(op, format!("{h}x{w} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")));
    }
    Ok((c, h, w))
}

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let mut taps = [0.0; SSIM_WINDOW];
    let mid = (SSIM_WINDOW / 2) as f64;
    for (i, t) in taps.iter_mut().enumerate() {
        *t = (-(i as f64 - mid).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= s);
    taps
}

/// Valid-mode separable Gaussian filter of one `h x w` plane.
fn blur(plane: &[f64], h: usize, w: usize, taps: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().enumerate().map(|(k, t)| t * plane[y * w + x + k]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().enumerate().map(|(k, t)| t * rows[(y + k) * ow + x]).sum();
        }
    }
    out
}

fn ssim_unit(a: &[f64], b: &[f64], c: usize, h: usize, w: usize) -> f64 {
    let taps = gaussian_taps();
    let (c1, c2) = (K1 * K1, K2 * K2);
    let hw = h * w;
    let mut total = 0.0;
    let mut count = 0usize;
    for ch in 0..c {
        let pa = &a[ch * hw..(ch + 1) * hw];
        let pb = &b[ch * hw..(ch + 1) * hw];
        let aa: Vec<f64> = pa.iter().map(|v| v * v).collect();
        let bb: Vec<f64> = pb.iter().map(|v| v * v).collect();
        let ab: Vec<f64> = pa.iter().zip(pb).map(|(x, y)| x * y).collect();
        let (ma, mb) = (blur(pa, h, w, &taps), blur(pb, h, w, &taps));
        let (eaa, ebb, eab) = (blur(&aa, h, w, &taps), blur(&bb, h, w, &taps), blur(&ab, h, w, &taps));
        for i in 0..ma.len() {
            let va = eaa[i] - ma[i] * ma[i];
            let vb = ebb[i] - mb[i] * mb[i];
            let cov = eab[i] - ma[i] * mb[i];
            let num = (2.0 * ma[i] * mb[i] + c1) * (2.0 * cov + c2);
            let den = (ma[i] * ma[i] + mb[i] * mb[i] + c1) * (va + vb + c2);
            total += num / den;
        }
        count += ma.len();
    }
    total / count as f64
}

/// Mean SSIM over valid 11x11 Gaussian windows and channels. Images are in
/// `[-1,1]` and compared on a `[0,1]` scale.
pub fn ssim<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<f64> {
    let (c, h, w) = check_images("ssim", a, b)?;
    Ok(ssim_unit(&to_unit(a), &to_unit(b), c, h, w))
}

/// Boolean pixel mask, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    pub bits: Vec<bool>,
}

impl Mask {
    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![false; height * width],
        }
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.width + x]
    }
}

/// Union of the given segments dilated by `radius`.
pub fn segments_mask(points: &[(f64, f64)], edges: &[(usize, usize)], radius: f64, size: ImageSize) -> Mask {
    let mut m = Mask::empty(size.height, size.width);
    for &(p, c) in edges {
        for_each_near(size, points[p], points[c], radius, |i| m.bits[i] = true);
    }
    m
}

/// Person region: every limb of the skeleton dilated by `radius`.
pub fn pose_mask(sk: &Skeleton, radius: f64, size: ImageSize) -> Mask {
    segments_mask(&sk.joints, &LIMBS, radius, size)
}

/// SSIM after zeroing (on the `[0,1]` scale) everything outside the mask in
/// both images.
pub fn mask_ssim<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>, mask: &Mask) -> Result<f64> {
    let (c, h, w) = check_images("mask_ssim", a, b)?;
    if (mask.height, mask.width) != (h, w) {
        return Err(mismatch("mask_ssim", &[h, w], &[mask.height, mask.width]));
    }
    if mask.count() == 0 {
        return Err(invalid("mask_ssim", "mask is empty"));
    }
    let apply = |img: &Tensor<S>| {
        let mut v = to_unit(img);
        for ch in 0..c {
            for (i, &keep) in mask.bits.iter().enumerate() {
                if !keep {
                    v[ch * h * w + i] = 0.0;
                }
            }
        }
        v
    };
    Ok(ssim_unit(&apply(a), &apply(b), c, h, w))
}

/// Centroid of each joint's marker-colored pixels, `None` when no pixel
/// matches.
pub fn detect_joints<S: Scalar>(img: &Tensor<S>) -> Result<[Option<(f64, f64)>; NUM_JOINTS]> {
    if img.shape().len() != 3 || img.shape()[0] != 3 {
        return Err(invalid("detect_joints", format!("expected [3,H,W], got {:?}", img.shape())));
    }
    let (h, w) = (img.shape()[1], img.shape()[2]);
    let unit = to_unit(img);
    let markers = marker_colors();
    let mut acc = [(0.0, 0.0, 0usize); NUM_JOINTS];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let px = [unit[i], unit[h * w + i], unit[2 * h * w + i]];
            for (j, m) in markers.iter().enumerate() {
                let d2: f64 = (0..3).map(|c| (px[c] - m[c]).powi(2)).sum();
                if d2 <= DETECTION_RADIUS * DETECTION_RADIUS {
                    acc[j].0 += x as f64;
                    acc[j].1 += y as f64;
                    acc[j].2 += 1;
                }
            }
        }
    }
    let mut out = [None; NUM_JOINTS];
    for (j, &(sx, sy, n)) in acc.iter().enumerate() {
        if n > 0 {
            out[j] = Some((sx / n as f64, sy / n as f64));
        }
    }
    Ok(out)
}

/// Fraction of joints found within half a head length of ground truth.
/// `None` when the ground-truth head is shorter than one pixel.
pub fn pckh(pred: &[Option<(f64, f64)>; NUM_JOINTS], gt: &Skeleton) -> Option<f64> {
    let head = gt.head_length();
    if head < 1.0 {
        return None;
    }
    let thr = PCKH_FRACTION * head;
    let hits = pred
        .iter()
        .zip(&gt.joints)
        .filter(|(p, g)| p.is_some_and(|p| ((p.0 - g.0).powi(2) + (p.1 - g.1).powi(2)).sqrt() <= thr))
        .count();
    Some(hits as f64 / NUM_JOINTS as f64)
}

/// Nose and neck indices used for the head length.
pub const HEAD_JOINTS: (usize, usize) = (NOSE, NECK);

/// Mean absolute difference on the `[-1,1]` scale.
pub fn l1_distance<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(mismatch("l1_distance", a.shape(), b.shape()));
    }
    let s: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x.f64() - y.f64()).abs()).sum();
    Ok(s / a.numel() as f64)
}

/// Held-out scores at one training step.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub step: u64,
    pub ssim: f64,
    pub mask_ssim: f64,
    pub pckh: f64,
    pub l1: f64,
    pub n_samples: usize,
    /// Samples left out of the PCKh mean for a degenerate head.
    pub pckh_skipped: usize,
}

impl EvalReport {
    pub const CSV_HEADER: &'static str = "step,ssim,mask_ssim,pckh,l1,n_samples";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.6},{:.6},{:.6},{:.6},{}",
            self.step, self.ssim, self.mask_ssim, self.pckh, self.l1, self.n_samples
        )
    }

    pub fn parse_csv_row(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 6 {
            return Err(invalid("eval_csv", format!("expected 6 fields, got {}", f.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| invalid("eval_csv", format!("{s:?}: {e}")));
        let int = |s: &str| s.parse::<u64>().map_err(|e| invalid("eval_csv", format!("{s:?}: {e}")));
        Ok(Self {
            step: int(f[0])?,
            ssim: num(f[1])?,
            mask_ssim: num(f[2])?,
            pckh: num(f[3])?,
            l1: num(f[4])?,
            n_samples: int(f[5])? as usize,
            pckh_skipped: 0,
        })
    }
}

/// Running means for an [`EvalReport`].
#[derive(Clone, Debug, Default)]
pub struct EvalAccumulator {
    ssim: f64,
    mask_ssim: f64,
    pckh: f64,
    l1: f64,
    n: usize,
    n_pckh: usize,
}

impl EvalAccumulator {
    /// Scores one generated image against its target and target skeleton.
    pub fn add<S: Scalar>(&mut self, generated: &Tensor<S>, target: &Tensor<S>, target_pose: &Skeleton, mask_radius: f64) -> Result<()> {
        let size = ImageSize {
            height: target.shape()[1],
            width: target.shape()[2],
        };
        self.ssim += ssim(generated, target)?;
        self.mask_ssim += mask_ssim(generated, target, &pose_mask(target_pose, mask_radius, size))?;
        self.l1 += l1_distance(generated, target)?;
        if let Some(p) = pckh(&detect_joints(generated)?, target_pose) {
            self.pckh += p;
            self.n_pckh += 1;
        }
        self.n += 1;
        Ok(())
    }

    pub fn finish(&self, step: u64) -> EvalReport {
        let n = self.n.max(1) as f64;
        EvalReport {
            step,
            ssim: self.ssim / n,
            mask_ssim: self.mask_ssim / n,
            pckh: self.pckh / self.n_pckh.max(1) as f64,
            l1: self.l1 / n,
            n_samples: self.n,
            pckh_skipped: self.n - self.n_pckh,
        }
    }
}
