//! Procedural stick-person pose-transfer data.
//!
//! Every sample is a pure function of `(master seed, identity, pair index)`;
//! nothing is stored besides the manifest.

use std::fmt::Write as _;

use crate::error::{invalid, Result};
use crate::nets::POSE_CHANNELS;
use crate::tensor::{Scalar, SeedRng, Tensor};

pub const NUM_JOINTS: usize = POSE_CHANNELS;

/// Joint names in the standard 18-keypoint order.
pub const JOINT_NAMES: [&str; NUM_JOINTS] = [
    "nose", "neck", "r_shoulder", "r_elbow", "r_wrist", "l_shoulder", "l_elbow", "l_wrist", "r_hip",
    "r_knee", "r_ankle", "l_hip", "l_knee", "l_ankle", "r_eye", "l_eye", "r_ear", "l_ear",
];

pub const NOSE: usize = 0;
pub const NECK: usize = 1;

/// Limbs as (parent, child); every non-neck joint is the child of exactly
/// one limb, so the list doubles as the kinematic tree.
pub const LIMBS: [(usize, usize); 17] = [
    (1, 0),
    (1, 2),
    (2, 3),
    (3, 4),
    (1, 5),
    (5, 6),
    (6, 7),
    (1, 8),
    (8, 9),
    (9, 10),
    (1, 11),
    (11, 12),
    (12, 13),
    (0, 14),
    (0, 15),
    (14, 16),
    (15, 17),
];

/// Canonical joint positions `(x, y)` on the 64x32 reference canvas.
const CANONICAL: [(f64, f64); NUM_JOINTS] = [
    (16.0, 10.0),
    (16.0, 16.0),
    (10.0, 17.0),
    (8.0, 24.0),
    (6.0, 31.0),
    (22.0, 17.0),
    (24.0, 24.0),
    (26.0, 31.0),
    (12.0, 33.0),
    (11.0, 44.0),
    (11.0, 55.0),
    (20.0, 33.0),
    (21.0, 44.0),
    (21.0, 55.0),
    (13.0, 6.0),
    (19.0, 6.0),
    (8.0, 9.0),
    (24.0, 9.0),
];

const REFERENCE_SIZE: (usize, usize) = (64, 32);
/// Face features move rigidly with the nose.
const FACE_JOINTS: [usize; 4] = [14, 15, 16, 17];
const BOUNDS_MARGIN: f64 = 2.0;
const BONE_TOLERANCE: f64 = 0.3;
/// Marker disks of radius 2 share at most a boundary pixel at this separation.
const MIN_JOINT_SEPARATION: f64 = 4.0;
const MAX_TRIES: usize = 100;

pub const BACKGROUND: f64 = -0.5;
pub const LIMB_HALF_WIDTH: f64 = 1.0;
pub const MARKER_RADIUS: f64 = 2.0;
pub const DEFAULT_SIGMA: f64 = 1.5;

/// Limb colors live in this per-channel band; joint markers always have a
/// channel at 0 or 1, so the two never come within 0.3 of each other.
const PALETTE_LEVELS: [f64; 3] = [0.4, 0.55, 0.7];

/// Universal per-joint marker colors in `[0,1]` RGB.
pub fn marker_colors() -> [[f64; 3]; NUM_JOINTS] {
    let levels = [0.0, 1.0, 0.5];
    let mut out = [[0.0; 3]; NUM_JOINTS];
    let mut k = 0;
    'outer: for &r in &levels {
        for &g in &levels {
            for &b in &levels {
                if r == 0.5 && g == 0.5 && b == 0.5 {
                    continue;
                }
                out[k] = [r, g, b];
                k += 1;
                if k == NUM_JOINTS {
                    break 'outer;
                }
            }
        }
    }
    out
}

/// Canvas size `(height, width)`, both multiples of 4.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ImageSize {
    pub height: usize,
    pub width: usize,
}

impl ImageSize {
    pub const DESK: ImageSize = ImageSize {
        height: 64,
        width: 32,
    };

    pub fn new(height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 || height % 4 != 0 || width % 4 != 0 {
            return Err(invalid("image_size", format!("{height}x{width} must be positive multiples of 4")));
        }
        if height < 32 || width < 16 {
            return Err(invalid("image_size", format!("{height}x{width} is too small for a skeleton")));
        }
        Ok(Self { height, width })
    }

    fn scale(&self) -> (f64, f64) {
        (
            self.width as f64 / REFERENCE_SIZE.1 as f64,
            self.height as f64 / REFERENCE_SIZE.0 as f64,
        )
    }
}

/// 18 joint positions in pixels, `(x, y)` = (column, row).
#[derive(Clone, Debug, PartialEq)]
pub struct Skeleton {
    pub joints: [(f64, f64); NUM_JOINTS],
}

impl Skeleton {
    /// Nose-to-neck distance.
    pub fn head_length(&self) -> f64 {
        dist(self.joints[NOSE], self.joints[NECK])
    }

    pub fn in_bounds(&self, size: ImageSize, margin: f64) -> bool {
        self.joints.iter().all(|&(x, y)| {
            x >= margin
                && y >= margin
                && x <= size.width as f64 - 1.0 - margin
                && y <= size.height as f64 - 1.0 - margin
        })
    }

    pub fn min_separation(&self) -> f64 {
        let mut best = f64::INFINITY;
        for i in 0..NUM_JOINTS {
            for j in i + 1..NUM_JOINTS {
                best = best.min(dist(self.joints[i], self.joints[j]));
            }
        }
        best
    }
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

/// A synthetic person: limb palette and body proportions.
#[derive(Clone, Debug, PartialEq)]
pub struct Identity {
    pub id: u64,
    /// One `[0,1]` RGB color per entry of [`LIMBS`].
    pub limb_palette: [[f64; 3]; LIMBS.len()],
    /// Scale applied to arm, leg and torso lengths.
    pub body_scale: f64,
    /// Scale applied to the shoulder and hip spread.
    pub torso_width: f64,
}

impl Identity {
    pub fn generate(id: u64, master_seed: u64) -> Self {
        let mut rng = SeedRng::derive(master_seed, 0x1D00_0000 ^ id);
        let mut pool: Vec<[f64; 3]> = Vec::with_capacity(27);
        for &r in &PALETTE_LEVELS {
            for &g in &PALETTE_LEVELS {
                for &b in &PALETTE_LEVELS {
                    pool.push([r, g, b]);
                }
            }
        }
        let mut limb_palette = [[0.0; 3]; LIMBS.len()];
        for slot in limb_palette.iter_mut() {
            *slot = pool.swap_remove(rng.below(pool.len()));
        }
        Self {
            id,
            limb_palette,
            body_scale: rng.uniform(0.9, 1.1),
            torso_width: rng.uniform(1.0, 1.15),
        }
    }

    /// The identity's upright pose on a canvas of the given size.
    pub fn canonical_pose(&self, size: ImageSize) -> Skeleton {
        self.pose_with(size, |_| 0.0, (0.0, 0.0))
    }

    /// Canonical bone length of limb `k` on the canvas.
    pub fn bone_length(&self, size: ImageSize, k: usize) -> f64 {
        let sk = self.canonical_pose(size);
        let (p, c) = LIMBS[k];
        dist(sk.joints[p], sk.joints[c])
    }

    /// Builds the pose by walking the limb tree, rotating each limb's
    /// canonical direction by `angle(limb)`, then rounding to pixel centers.
    fn pose_with(&self, size: ImageSize, mut angle: impl FnMut(usize) -> f64, shift: (f64, f64)) -> Skeleton {
        let (sx, sy) = size.scale();
        let neck = CANONICAL[NECK];
        let mut joints = [(0.0, 0.0); NUM_JOINTS];
        joints[NECK] = (neck.0 * sx + shift.0, neck.1 * sy + shift.1);
        for (k, &(parent, child)) in LIMBS.iter().enumerate() {
            let (px, py) = joints[parent];
            let mut vx = CANONICAL[child].0 - CANONICAL[parent].0;
            let mut vy = CANONICAL[child].1 - CANONICAL[parent].1;
            if FACE_JOINTS.contains(&child) {
                joints[child] = (px + vx * sx, py + vy * sy);
                continue;
            }
            let is_spread = parent == NECK && matches!(child, 2 | 5 | 8 | 11);
            if is_spread {
                vx *= self.torso_width;
            }
            if child != NOSE {
                vx *= self.body_scale;
                vy *= self.body_scale;
            }
            let a = angle(k);
            let (s, c) = a.sin_cos();
            let (rx, ry) = (vx * c - vy * s, vx * s + vy * c);
            joints[child] = (px + rx * sx, py + ry * sy);
        }
        for j in joints.iter_mut() {
            *j = (j.0.round(), j.1.round());
        }
        Skeleton { joints }
    }

    fn pose_is_valid(&self, sk: &Skeleton, size: ImageSize) -> bool {
        sk.in_bounds(size, BOUNDS_MARGIN)
            && sk.min_separation() >= MIN_JOINT_SEPARATION * size.scale().0.min(size.scale().1)
            && LIMBS.iter().enumerate().all(|(k, &(p, c))| {
                let canon = self.bone_length(size, k);
                let len = dist(sk.joints[p], sk.joints[c]);
                (len - canon).abs() <= BONE_TOLERANCE * canon
            })
    }
}

/// Perturbation strength for [`sample_skeleton`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseNoise {
    /// Std-dev of the per-limb rotation, radians.
    pub limb_angle: f64,
    /// Std-dev of the head and torso rotation, radians.
    pub core_angle: f64,
    /// Max whole-body shift in reference pixels.
    pub shift: f64,
}

impl PoseNoise {
    pub const NONE: PoseNoise = PoseNoise {
        limb_angle: 0.0,
        core_angle: 0.0,
        shift: 0.0,
    };
}

impl Default for PoseNoise {
    fn default() -> Self {
        Self {
            limb_angle: 0.25,
            core_angle: 0.06,
            shift: 1.0,
        }
    }
}

/// Canonical pose perturbed by per-limb angular noise, rejection-resampled
/// until every joint is in bounds, bones are within tolerance and marker
/// disks are disjoint.
pub fn sample_skeleton(identity: &Identity, size: ImageSize, noise: &PoseNoise, rng: &mut SeedRng) -> Result<Skeleton> {
    for _ in 0..MAX_TRIES {
        let shift = (
            rng.uniform(-noise.shift, noise.shift).round() * size.scale().0,
            rng.uniform(-noise.shift, noise.shift).round() * size.scale().1,
        );
        let angles: Vec<f64> = LIMBS
            .iter()
            .map(|&(p, c)| {
                let core = p == NECK || FACE_JOINTS.contains(&c);
                rng.normal() * if core { noise.core_angle } else { noise.limb_angle }
            })
            .collect();
        let sk = identity.pose_with(size, |k| angles[k], shift);
        if identity.pose_is_valid(&sk, size) {
            return Ok(sk);
        }
    }
    Err(invalid(
        "sample_skeleton",
        format!("no valid pose for identity {} after {MAX_TRIES} tries", identity.id),
    ))
}

/// 18-channel Gaussian joint encoding with values in `[0,1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseHeatmap<S>(Tensor<S>);

impl<S: Scalar> PoseHeatmap<S> {
    pub fn new(map: Tensor<S>) -> Result<Self> {
        if map.shape().len() != 3 || map.shape()[0] != NUM_JOINTS {
            return Err(invalid("pose_heatmap", format!("expected [18,H,W], got {:?}", map.shape())));
        }
        if map.data().iter().any(|&v| !(v >= S::zero() && v <= S::one())) {
            return Err(invalid("pose_heatmap", "entries must lie in [0,1]"));
        }
        Ok(Self(map))
    }

    pub fn tensor(&self) -> &Tensor<S> {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor<S> {
        self.0
    }

    /// Argmax position `(x, y)` of every channel.
    pub fn decode(&self) -> [(f64, f64); NUM_JOINTS] {
        let (h, w) = (self.0.shape()[1], self.0.shape()[2]);
        let mut out = [(0.0, 0.0); NUM_JOINTS];
        for (j, slot) in out.iter_mut().enumerate() {
            let plane = &self.0.data()[j * h * w..(j + 1) * h * w];
            let (idx, _) = plane
                .iter()
                .enumerate()
                .fold((0, S::neg_infinity()), |best, (i, &v)| if v > best.1 { (i, v) } else { best });
            *slot = ((idx % w) as f64, (idx / w) as f64);
        }
        out
    }
}

/// Heatmap values below this are stored as exact zeros. The far Gaussian
/// tail would otherwise be subnormal in f32, which is very slow to compute with.
pub const HEATMAP_FLOOR: f64 = 1e-6;

/// One Gaussian channel per joint, peak 1 at the joint.
pub fn render_pose_heatmaps<S: Scalar>(sk: &Skeleton, size: ImageSize, sigma: f64) -> Result<PoseHeatmap<S>> {
    if !(sigma > 0.0) {
        return Err(invalid("render_pose_heatmaps", "sigma must be positive"));
    }
    let (h, w) = (size.height, size.width);
    let denom = 2.0 * sigma * sigma;
    let mut data = Vec::with_capacity(NUM_JOINTS * h * w);
    for &(jx, jy) in &sk.joints {
        for y in 0..h {
            for x in 0..w {
                let d2 = (x as f64 - jx).powi(2) + (y as f64 - jy).powi(2);
                let v = (-d2 / denom).exp();
                data.push(S::of(if v < HEATMAP_FLOOR { 0.0 } else { v }));
            }
        }
    }
    PoseHeatmap::new(Tensor::from_parts(vec![NUM_JOINTS, h, w], data))
}

/// Distance from point `p` to segment `ab`.
pub fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    dist(p, (a.0 + t * dx, a.1 + t * dy))
}

/// Gray background, limbs in the identity palette, then one marker disk per
/// joint in the universal marker color. Output in `[-1,1]`.
pub fn render_person<S: Scalar>(sk: &Skeleton, idt: &Identity, size: ImageSize) -> Tensor<S> {
    let (h, w) = (size.height, size.width);
    let mut rgb = vec![[(BACKGROUND + 1.0) / 2.0; 3]; h * w];
    for (k, &(p, c)) in LIMBS.iter().enumerate() {
        let (a, b) = (sk.joints[p], sk.joints[c]);
        for_each_near(size, a, b, LIMB_HALF_WIDTH, |i| rgb[i] = idt.limb_palette[k]);
    }
    let markers = marker_colors();
    for (j, &pt) in sk.joints.iter().enumerate() {
        for_each_near(size, pt, pt, MARKER_RADIUS, |i| rgb[i] = markers[j]);
    }
    let mut data = vec![S::zero(); 3 * h * w];
    for (i, px) in rgb.iter().enumerate() {
        for ch in 0..3 {
            data[ch * h * w + i] = S::of(px[ch] * 2.0 - 1.0);
        }
    }
    Tensor::from_parts(vec![3, h, w], data)
}

/// Calls `f(row * w + col)` for every pixel within `radius` of segment `ab`.
pub(crate) fn for_each_near(size: ImageSize, a: (f64, f64), b: (f64, f64), radius: f64, mut f: impl FnMut(usize)) {
    let x0 = (a.0.min(b.0) - radius).floor().max(0.0) as usize;
    let x1 = ((a.0.max(b.0) + radius).ceil() as usize).min(size.width - 1);
    let y0 = (a.1.min(b.1) - radius).floor().max(0.0) as usize;
    let y1 = ((a.1.max(b.1) + radius).ceil() as usize).min(size.height - 1);
    for y in y0..=y1 {
        for x in x0..=x1 {
            if segment_distance((x as f64, y as f64), a, b) <= radius {
                f(y * size.width + x);
            }
        }
    }
}

/// One pose-transfer training example.
#[derive(Clone, Debug)]
pub struct Sample<S> {
    pub identity: u64,
    pub pair: u64,
    pub source_image: Tensor<S>,
    pub source_pose: PoseHeatmap<S>,
    pub target_image: Tensor<S>,
    pub target_pose: PoseHeatmap<S>,
    pub source_skeleton: Skeleton,
    pub target_skeleton: Skeleton,
}

/// Two independent poses of one identity, rendered consistently.
pub fn make_pair<S: Scalar>(
    idt: &Identity,
    size: ImageSize,
    noise: &PoseNoise,
    sigma: f64,
    rng: &mut SeedRng,
) -> Result<Sample<S>> {
    let source_skeleton = sample_skeleton(idt, size, noise, rng)?;
    let target_skeleton = sample_skeleton(idt, size, noise, rng)?;
    Ok(Sample {
        identity: idt.id,
        pair: 0,
        source_image: render_person(&source_skeleton, idt, size),
        source_pose: render_pose_heatmaps(&source_skeleton, size, sigma)?,
        target_image: render_person(&target_skeleton, idt, size),
        target_pose: render_pose_heatmaps(&target_skeleton, size, sigma)?,
        source_skeleton,
        target_skeleton,
    })
}

/// Sizes and seed of a synthetic dataset.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DatasetSpec {
    pub master_seed: u64,
    pub train_identities: u64,
    pub test_identities: u64,
    pub pairs_per_identity: u64,
    pub size: ImageSize,
    pub sigma: f64,
    pub noise: PoseNoise,
}

impl DatasetSpec {
    pub fn desk(master_seed: u64) -> Self {
        Self {
            master_seed,
            train_identities: 200,
            test_identities: 40,
            pairs_per_identity: 20,
            size: ImageSize::DESK,
            sigma: DEFAULT_SIGMA,
            noise: PoseNoise::default(),
        }
    }
}

/// Which identity pool a record belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Manifest entry; the sample itself is regenerated from it on demand.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SampleRecord {
    pub identity: u64,
    pub pair: u64,
    pub seed: u64,
}

/// Identity-disjoint train/test pools defined by a [`DatasetSpec`].
#[derive(Clone, Debug)]
pub struct Dataset {
    spec: DatasetSpec,
}

impl Dataset {
    pub fn new(spec: DatasetSpec) -> Self {
        Self { spec }
    }

    pub fn spec(&self) -> &DatasetSpec {
        &self.spec
    }

    /// Train identities are `0..train`, test identities follow them.
    pub fn identity_ids(&self, split: Split) -> std::ops::Range<u64> {
        let t = self.spec.train_identities;
        match split {
            Split::Train => 0..t,
            Split::Test => t..t + self.spec.test_identities,
        }
    }

    pub fn len(&self, split: Split) -> usize {
        let ids = self.identity_ids(split);
        ((ids.end - ids.start) * self.spec.pairs_per_identity) as usize
    }

    pub fn is_empty(&self, split: Split) -> bool {
        self.len(split) == 0
    }

    /// Record `index` of a split, identity-major.
    pub fn record(&self, split: Split, index: usize) -> SampleRecord {
        let ppi = self.spec.pairs_per_identity;
        let identity = self.identity_ids(split).start + index as u64 / ppi;
        let pair = index as u64 % ppi;
        SampleRecord {
            identity,
            pair,
            seed: SeedRng::derive(self.spec.master_seed, (identity << 32) | pair).next_u64(),
        }
    }

    pub fn sample<S: Scalar>(&self, rec: &SampleRecord) -> Result<Sample<S>> {
        let idt = Identity::generate(rec.identity, self.spec.master_seed);
        let mut rng = SeedRng::new(rec.seed);
        let mut s = make_pair(&idt, self.spec.size, &self.spec.noise, self.spec.sigma, &mut rng)?;
        s.pair = rec.pair;
        Ok(s)
    }

    /// `identity,pair,seed` lines preceded by a header, train split first.
    pub fn manifest(&self) -> String {
        let mut out = String::from("split,identity,pair,seed\n");
        for (split, name) in [(Split::Train, "train"), (Split::Test, "test")] {
            for i in 0..self.len(split) {
                let r = self.record(split, i);
                let _ = writeln!(out, "{name},{},{},{}", r.identity, r.pair, r.seed);
            }
        }
        out
    }
}
