//! Encoders, the Xing generator cascade, co-attention fusion and the two
//! conditional discriminators.
//!
//! Layer layout (c = base width, N = intermediates per branch):
//!
//! * image / pose encoder: 3x3 stride-2 conv to c/2, then to c, each followed
//!   by instance norm and ReLU. The pose encoder reads the 36-channel
//!   concatenation of source and target heatmaps.
//! * decoders and attention head: two 4x4 stride-2 transposed convs
//!   (to c/2, then c/4) with instance norm and ReLU, then a 3x3 conv to 3N
//!   channels + Tanh (decoders) or a 1x1 conv to 2N+1 channels + channel
//!   softmax (attention head, which reads the 2c-channel code concat).
//! * discriminators: four 3x3 stride-2 convs (64, 128, 256, 512 channels,
//!   leaky ReLU 0.2) and a 3x3 conv to one logit channel.

use std::fmt;
use std::str::FromStr;

use crate::error::{invalid, Error, Result};
use crate::params::{init_conv, init_conv_transpose, init_norm, Binder, ParamStore};
use crate::tensor::{concat_channels, Scalar, SeedRng, Var};
use crate::xing::{
    as_block, init_as_block, init_sa_block, sa_block, AsBlockParams, FeatureCode, SaBlockParams,
};

pub const POSE_CHANNELS: usize = 18;
pub const DISC_CHANNELS: [usize; 4] = [64, 128, 256, 512];
pub const LEAKY_SLOPE: f64 = 0.2;

/// Generator wiring (ablation variant).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Appearance branch only; the shape code stays at its encoding.
    Sa,
    /// Shape branch only; the appearance code stays at its encoding.
    As,
    /// Both branches, fused by a conv and a single decoder.
    SaAs,
    /// Both branches with co-attention fusion.
    Full,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Sa, Variant::As, Variant::SaAs, Variant::Full];

    pub fn has_sa(self) -> bool {
        self != Variant::As
    }

    pub fn has_as(self) -> bool {
        self != Variant::Sa
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Sa => "SA",
            Variant::As => "AS",
            Variant::SaAs => "SA+AS",
            Variant::Full => "FULL",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "SA" => Ok(Variant::Sa),
            "AS" => Ok(Variant::As),
            "SA+AS" | "SA_AS" | "SAAS" => Ok(Variant::SaAs),
            "FULL" => Ok(Variant::Full),
            other => Err(invalid("variant", format!("unknown variant `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GeneratorConfig {
    pub variant: Variant,
    /// Number of Xing blocks (T).
    pub blocks: usize,
    /// Intermediate images per branch (N).
    pub intermediates: usize,
    /// Base channel width (c).
    pub channels: usize,
}

impl GeneratorConfig {
    pub fn new(variant: Variant, blocks: usize, intermediates: usize, channels: usize) -> Result<Self> {
        let cfg = Self {
            variant,
            blocks,
            intermediates,
            channels,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks == 0 || self.intermediates == 0 {
            return Err(invalid("generator", "T and N must be at least 1"));
        }
        if self.channels == 0 || self.channels % 4 != 0 {
            return Err(invalid(
                "generator",
                format!("channel width {} must be a positive multiple of 4", self.channels),
            ));
        }
        Ok(())
    }

    /// Output channels of the image decoders: 3N under co-attention fusion,
    /// a single RGB image otherwise.
    pub fn decoder_outputs(&self) -> usize {
        match self.variant {
            Variant::Full => 3 * self.intermediates,
            _ => 3,
        }
    }
}

// Convs feeding an instance norm carry no bias: the mean subtraction cancels it.
fn init_encoder<S: Scalar>(store: &mut ParamStore<S>, prefix: &str, cin: usize, c: usize, rng: &mut SeedRng) {
    init_conv(store, &format!("{prefix}.conv0"), c / 2, cin, 3, false, rng);
    init_norm(store, &format!("{prefix}.norm0"), c / 2);
    init_conv(store, &format!("{prefix}.conv1"), c, c / 2, 3, false, rng);
    init_norm(store, &format!("{prefix}.norm1"), c);
}

fn init_upsampler<S: Scalar>(store: &mut ParamStore<S>, prefix: &str, cin: usize, c: usize, rng: &mut SeedRng) {
    init_conv_transpose(store, &format!("{prefix}.up0"), cin, c / 2, 4, false, rng);
    init_norm(store, &format!("{prefix}.norm0"), c / 2);
    init_conv_transpose(store, &format!("{prefix}.up1"), c / 2, c / 4, 4, false, rng);
    init_norm(store, &format!("{prefix}.norm1"), c / 4);
}

/// Fresh generator parameters: fan-in uniform convs, zero biases, unit
/// norm gains and zero attention gains.
pub fn init_generator<S: Scalar>(cfg: &GeneratorConfig, rng: &mut SeedRng) -> Result<ParamStore<S>> {
    cfg.validate()?;
    let c = cfg.channels;
    let mut store = ParamStore::new();
    init_encoder(&mut store, "gen.enc_img", 3, c, rng);
    init_encoder(&mut store, "gen.enc_pose", 2 * POSE_CHANNELS, c, rng);
    for t in 0..cfg.blocks {
        if cfg.variant.has_sa() {
            init_sa_block(&mut store, &format!("gen.block{t}.sa"), c, rng);
        }
        if cfg.variant.has_as() {
            init_as_block(&mut store, &format!("gen.block{t}.as"), c, rng);
        }
    }
    let out = cfg.decoder_outputs();
    match cfg.variant {
        Variant::Sa => {
            init_upsampler(&mut store, "gen.dec_img", c, c, rng);
            init_conv(&mut store, "gen.dec_img.out", out, c / 4, 3, true, rng);
        }
        Variant::As => {
            init_upsampler(&mut store, "gen.dec_pose", c, c, rng);
            init_conv(&mut store, "gen.dec_pose.out", out, c / 4, 3, true, rng);
        }
        Variant::SaAs => {
            init_conv(&mut store, "gen.fuse", c, 2 * c, 3, true, rng);
            init_upsampler(&mut store, "gen.dec_fuse", c, c, rng);
            init_conv(&mut store, "gen.dec_fuse.out", out, c / 4, 3, true, rng);
        }
        Variant::Full => {
            for dec in ["gen.dec_img", "gen.dec_pose"] {
                init_upsampler(&mut store, dec, c, c, rng);
                init_conv(&mut store, &format!("{dec}.out"), out, c / 4, 3, true, rng);
            }
            init_upsampler(&mut store, "gen.attn", 2 * c, c, rng);
            init_conv(&mut store, "gen.attn.out", 2 * cfg.intermediates + 1, c / 4, 1, true, rng);
        }
    }
    Ok(store)
}

fn check_divisible(op: &'static str, h: usize, w: usize) -> Result<()> {
    if h % 4 != 0 || w % 4 != 0 || h == 0 || w == 0 {
        let pad = |d: usize| (4 - d % 4) % 4;
        return Err(invalid(
            op,
            format!(
                "spatial size {h}x{w} must be divisible by 4; pad by {}x{} pixels",
                pad(h),
                pad(w)
            ),
        ));
    }
    Ok(())
}

fn run_encoder<'g, S: Scalar>(b: &Binder<'g, '_, S>, prefix: &str, x: Var<'g, S>) -> Result<Var<'g, S>> {
    let h = b.conv(x, &format!("{prefix}.conv0"), 2, 1)?;
    let h = b.norm(h, &format!("{prefix}.norm0"))?.relu();
    let h = b.conv(h, &format!("{prefix}.conv1"), 2, 1)?;
    Ok(b.norm(h, &format!("{prefix}.norm1"))?.relu())
}

fn run_upsampler<'g, S: Scalar>(b: &Binder<'g, '_, S>, prefix: &str, x: Var<'g, S>) -> Result<Var<'g, S>> {
    let h = b.conv_transpose(x, &format!("{prefix}.up0"), 2, 1)?;
    let h = b.norm(h, &format!("{prefix}.norm0"))?.relu();
    let h = b.conv_transpose(h, &format!("{prefix}.up1"), 2, 1)?;
    Ok(b.norm(h, &format!("{prefix}.norm1"))?.relu())
}

/// Upsampling trunk, 3x3 output conv and Tanh.
fn run_image_decoder<'g, S: Scalar>(b: &Binder<'g, '_, S>, prefix: &str, x: Var<'g, S>) -> Result<Var<'g, S>> {
    let h = run_upsampler(b, prefix, x)?;
    Ok(b.conv(h, &format!("{prefix}.out"), 1, 1)?.tanh())
}

/// Appearance code from a `[3,H,W]` source image.
pub fn encode_image<'g, S: Scalar>(b: &Binder<'g, '_, S>, image: Var<'g, S>) -> Result<FeatureCode<'g, S>> {
    let s = image.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(invalid("encode_image", format!("expected [3,H,W], got {s:?}")));
    }
    check_divisible("encode_image", s[1], s[2])?;
    Ok(FeatureCode::appearance(run_encoder(b, "gen.enc_img", image)?))
}

/// Shape code from the channel concatenation of source and target heatmaps.
pub fn encode_pose<'g, S: Scalar>(
    b: &Binder<'g, '_, S>,
    source: Var<'g, S>,
    target: Var<'g, S>,
) -> Result<FeatureCode<'g, S>> {
    for pose in [source, target] {
        let s = pose.shape();
        if s.len() != 3 || s[0] != POSE_CHANNELS {
            return Err(invalid(
                "encode_pose",
                format!("pose heatmap must have {POSE_CHANNELS} channels, got shape {s:?}"),
            ));
        }
        check_divisible("encode_pose", s[1], s[2])?;
    }
    let stacked = concat_channels(&[source, target])?;
    Ok(FeatureCode::shape(run_encoder(b, "gen.enc_pose", stacked)?))
}

/// Co-attention fusion products.
#[derive(Clone, Copy, Debug)]
pub struct CafOutput<'g, S> {
    pub final_image: Var<'g, S>,
    /// `[3N,H,W]`, image `i` in channels `3i..3i+3`.
    pub intermediates_i: Var<'g, S>,
    pub intermediates_p: Var<'g, S>,
    /// `[2N+1,H,W]` per-pixel simplex.
    pub attention: Var<'g, S>,
}

/// Decodes both final codes into N candidates each, computes 2N+1
/// attention maps from their concatenation and selects per pixel among
/// `[appearance candidates, shape candidates, source image]`.
pub fn caf_forward<'g, S: Scalar>(
    b: &Binder<'g, '_, S>,
    cfg: &GeneratorConfig,
    appearance: FeatureCode<'g, S>,
    shape: FeatureCode<'g, S>,
    source: Var<'g, S>,
) -> Result<CafOutput<'g, S>> {
    let n = cfg.intermediates;
    let head = b.get("gen.attn.out.weight")?.shape();
    if head[0] != 2 * n + 1 {
        return Err(invalid(
            "caf_forward",
            format!("attention head has {} maps, config expects {}", head[0], 2 * n + 1),
        ));
    }
    let (ai, sp) = (appearance.dims(), shape.dims());
    if ai != sp {
        return Err(crate::error::mismatch("caf_forward", &ai, &sp));
    }
    let inter_i = run_image_decoder(b, "gen.dec_img", appearance.map)?;
    let inter_p = run_image_decoder(b, "gen.dec_pose", shape.map)?;
    let src_shape = source.shape();
    let dec_shape = inter_i.shape();
    if src_shape[1..] != dec_shape[1..] || inter_i.shape()[0] != 3 * n {
        return Err(crate::error::mismatch("caf_forward", &src_shape, &dec_shape));
    }
    let codes = concat_channels(&[appearance.map, shape.map])?;
    let trunk = run_upsampler(b, "gen.attn", codes)?;
    let attention = b.conv(trunk, "gen.attn.out", 1, 0)?.softmax_channels()?;

    let mut terms = Vec::with_capacity(2 * n + 1);
    for (branch, inter) in [inter_i, inter_p].into_iter().enumerate() {
        for i in 0..n {
            let map = attention.slice_channels(branch * n + i, 1)?;
            terms.push(inter.slice_channels(3 * i, 3)?.mul_plane(map)?);
        }
    }
    terms.push(source.mul_plane(attention.slice_channels(2 * n, 1)?)?);
    let mut final_image = terms[0];
    for t in &terms[1..] {
        final_image = final_image.add(*t)?;
    }
    Ok(CafOutput {
        final_image,
        intermediates_i: inter_i,
        intermediates_p: inter_p,
        attention,
    })
}

/// Appearance and shape codes after every stage (index 0 = encodings).
#[derive(Clone, Debug)]
pub struct CascadeTrace<'g, S> {
    pub appearance: Vec<FeatureCode<'g, S>>,
    pub shape: Vec<FeatureCode<'g, S>>,
}

/// Runs the T-block cascade from the initial codes.
pub fn xing_cascade<'g, S: Scalar>(
    b: &Binder<'g, '_, S>,
    cfg: &GeneratorConfig,
    appearance0: FeatureCode<'g, S>,
    shape0: FeatureCode<'g, S>,
) -> Result<CascadeTrace<'g, S>> {
    let mut trace = CascadeTrace {
        appearance: vec![appearance0],
        shape: vec![shape0],
    };
    let (mut fi, mut fp) = (appearance0, shape0);
    for t in 0..cfg.blocks {
        let fi_new = if cfg.variant.has_sa() {
            let p = SaBlockParams::bind(b, &format!("gen.block{t}.sa"))?;
            sa_block(fi, fp, &p)?
        } else {
            fi
        };
        let fp_new = if cfg.variant.has_as() {
            let p = AsBlockParams::bind(b, &format!("gen.block{t}.as"))?;
            as_block(fp, fi, fi_new, &p)?
        } else {
            fp
        };
        fi = fi_new;
        fp = fp_new;
        trace.appearance.push(fi);
        trace.shape.push(fp);
    }
    Ok(trace)
}

/// Full generator forward.
#[derive(Clone, Debug)]
pub struct GeneratorOutput<'g, S> {
    pub image: Var<'g, S>,
    pub caf: Option<CafOutput<'g, S>>,
    pub trace: CascadeTrace<'g, S>,
}

pub fn generator_forward<'g, S: Scalar>(
    b: &Binder<'g, '_, S>,
    cfg: &GeneratorConfig,
    source_image: Var<'g, S>,
    source_pose: Var<'g, S>,
    target_pose: Var<'g, S>,
) -> Result<GeneratorOutput<'g, S>> {
    let img_shape = source_image.shape();
    let pose_shape = target_pose.shape();
    if img_shape.len() != 3 || pose_shape.len() != 3 || img_shape[1..] != pose_shape[1..] {
        return Err(crate::error::mismatch("generator_forward", &img_shape, &pose_shape));
    }
    let fi0 = encode_image(b, source_image)?;
    let fp0 = encode_pose(b, source_pose, target_pose)?;
    let trace = xing_cascade(b, cfg, fi0, fp0)?;
    let fi = *trace.appearance.last().expect("cascade has stages");
    let fp = *trace.shape.last().expect("cascade has stages");
    let (image, caf) = match cfg.variant {
        Variant::Full => {
            let caf = caf_forward(b, cfg, fi, fp, source_image)?;
            (caf.final_image, Some(caf))
        }
        Variant::Sa => (run_image_decoder(b, "gen.dec_img", fi.map)?, None),
        Variant::As => (run_image_decoder(b, "gen.dec_pose", fp.map)?, None),
        Variant::SaAs => {
            let fused = b.conv(concat_channels(&[fi.map, fp.map])?, "gen.fuse", 1, 1)?;
            (run_image_decoder(b, "gen.dec_fuse", fused)?, None)
        }
    };
    Ok(GeneratorOutput { image, caf, trace })
}

/// Which conditional discriminator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DiscKind {
    /// Conditioned on the source image.
    Appearance,
    /// Conditioned on the target pose heatmap.
    Shape,
}

impl DiscKind {
    pub fn prefix(self) -> &'static str {
        match self {
            DiscKind::Appearance => "disc_i",
            DiscKind::Shape => "disc_p",
        }
    }

    pub fn condition_channels(self) -> usize {
        match self {
            DiscKind::Appearance => 3,
            DiscKind::Shape => POSE_CHANNELS,
        }
    }

    pub fn input_channels(self) -> usize {
        self.condition_channels() + 3
    }
}

pub fn init_discriminator<S: Scalar>(kind: DiscKind, rng: &mut SeedRng) -> ParamStore<S> {
    let mut store = ParamStore::new();
    let mut cin = kind.input_channels();
    for (i, &cout) in DISC_CHANNELS.iter().enumerate() {
        init_conv(&mut store, &format!("{}.conv{i}", kind.prefix()), cout, cin, 3, true, rng);
        cin = cout;
    }
    init_conv(&mut store, &format!("{}.out", kind.prefix()), 1, cin, 3, true, rng);
    store
}

/// Patch logits `[1, H/16, W/16]` for a conditioned image.
pub fn discriminator_forward<'g, S: Scalar>(
    b: &Binder<'g, '_, S>,
    kind: DiscKind,
    condition: Var<'g, S>,
    image: Var<'g, S>,
) -> Result<Var<'g, S>> {
    let logits = discriminator_forward_batch(b, kind, &[(condition, image)])?;
    let s = logits.shape();
    logits.reshape(&s[1..])
}

/// Patch logits `[B, 1, H/16, W/16]` for `B` (condition, image) pairs of
/// equal size, evaluated as one batch.
pub fn discriminator_forward_batch<'g, S: Scalar>(
    b: &Binder<'g, '_, S>,
    kind: DiscKind,
    pairs: &[(Var<'g, S>, Var<'g, S>)],
) -> Result<Var<'g, S>> {
    if pairs.is_empty() {
        return Err(invalid("discriminator_forward", "empty batch"));
    }
    let mut items = Vec::with_capacity(pairs.len());
    for &(condition, image) in pairs {
        let cs = condition.shape();
        if cs.len() != 3 || cs[0] != kind.condition_channels() {
            return Err(invalid(
                "discriminator_forward",
                format!(
                    "{kind:?} discriminator expects a {}-channel condition, got shape {cs:?}",
                    kind.condition_channels()
                ),
            ));
        }
        items.push(concat_channels(&[condition, image])?);
    }
    let item = items[0].shape();
    if items.iter().any(|v| v.shape() != item) {
        return Err(invalid("discriminator_forward", "batch items differ in size"));
    }
    let mut h = concat_channels(&items)?.reshape(&[items.len(), item[0], item[1], item[2]])?;
    for i in 0..DISC_CHANNELS.len() {
        h = b.conv(h, &format!("{}.conv{i}", kind.prefix()), 2, 1)?.leaky_relu(LEAKY_SLOPE);
    }
    b.conv(h, &format!("{}.out", kind.prefix()), 1, 1)
}
