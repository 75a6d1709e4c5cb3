//! Adversarial, pixel and perceptual losses and their weighted total.

use crate::error::{invalid, mismatch, Result};
use crate::nets::LEAKY_SLOPE;
use crate::params::{init_conv, Binder, ParamStore};
use crate::tensor::{Graph, Scalar, SeedRng, Tensor, Var};

pub const DEFAULT_WEIGHTS: LossWeights = LossWeights {
    lambda_gan: 5.0,
    lambda_l1: 50.0,
    lambda_p: 50.0,
};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda_gan: f64,
    pub lambda_l1: f64,
    pub lambda_p: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        DEFAULT_WEIGHTS
    }
}

impl LossWeights {
    pub fn new(lambda_gan: f64, lambda_l1: f64, lambda_p: f64) -> Result<Self> {
        if [lambda_gan, lambda_l1, lambda_p].iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(invalid("loss_weights", "weights must be finite and non-negative"));
        }
        Ok(Self {
            lambda_gan,
            lambda_l1,
            lambda_p,
        })
    }
}

/// How the two discriminators' generator terms are combined.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum AdversarialReduction {
    #[default]
    Mean,
    Sum,
}

/// Discriminator loss `(BCE(real, 1) + BCE(fake, 0)) / 2`, each averaged over patches.
pub fn gan_loss_d<'g, S: Scalar>(real_logits: Var<'g, S>, fake_logits: Var<'g, S>) -> Result<Var<'g, S>> {
    Ok(real_logits
        .bce_with_logits(1.0)
        .add(fake_logits.bce_with_logits(0.0))?
        .scale(0.5))
}

/// Non-saturating generator loss `BCE(fake, 1)`.
pub fn gan_loss_g<'g, S: Scalar>(fake_logits: Var<'g, S>) -> Var<'g, S> {
    fake_logits.bce_with_logits(1.0)
}

/// Mean absolute difference.
pub fn l1_loss<'g, S: Scalar>(generated: Var<'g, S>, target: Var<'g, S>) -> Result<Var<'g, S>> {
    let (a, b) = (generated.shape(), target.shape());
    if a != b {
        return Err(mismatch("l1_loss", &a, &b));
    }
    Ok(generated.sub(target)?.abs().mean())
}

pub const EXTRACTOR_CHANNELS: [usize; 4] = [8, 16, 32, 64];

/// Fixed, non-trainable feature stack standing in for a pretrained
/// perceptual network. Layer 0 is an identity 1x1 conv, so the first
/// feature map is the image itself; the remaining layers are seeded random
/// 3x3 stride-2 convs with leaky ReLU. Any weight set with the same names
/// can be loaded instead.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureExtractor<S> {
    params: ParamStore<S>,
    layers: usize,
}

impl<S: Scalar> FeatureExtractor<S> {
    pub fn seeded(seed: u64) -> Self {
        let mut rng = SeedRng::new(seed);
        let mut params = ParamStore::new();
        let mut eye = Tensor::zeros(&[3, 3, 1, 1]);
        for c in 0..3 {
            let off = eye.offset(&[c, c, 0, 0]);
            eye.data_mut()[off] = S::one();
        }
        params.insert("fx.layer0.weight", eye);
        let mut cin = 3;
        for (i, &cout) in EXTRACTOR_CHANNELS.iter().enumerate() {
            init_conv(&mut params, &format!("fx.layer{}", i + 1), cout, cin, 3, true, &mut rng);
            cin = cout;
        }
        Self {
            params,
            layers: EXTRACTOR_CHANNELS.len() + 1,
        }
    }

    /// Wraps externally supplied weights named `fx.layer{i}.weight` /
    /// `fx.layer{i}.bias`, layer 0 being a stride-1 1x1 conv.
    pub fn from_params(params: ParamStore<S>) -> Result<Self> {
        let layers = (0..)
            .take_while(|i| params.contains(&format!("fx.layer{i}.weight")))
            .count();
        if layers == 0 {
            return Err(invalid("feature_extractor", "no `fx.layer0.weight` tensor"));
        }
        Ok(Self { params, layers })
    }

    pub fn params(&self) -> &ParamStore<S> {
        &self.params
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    /// Feature maps of every layer, the graph-recorded way.
    pub fn features<'g>(&self, graph: &'g Graph<S>, image: Var<'g, S>) -> Result<Vec<Var<'g, S>>> {
        let b = Binder::new(graph, &self.params, false);
        let mut out = Vec::with_capacity(self.layers);
        let mut h = b.conv(image, "fx.layer0", 1, 0)?;
        out.push(h);
        for i in 1..self.layers {
            h = b.conv(h, &format!("fx.layer{i}"), 2, 1)?.leaky_relu(LEAKY_SLOPE);
            out.push(h);
        }
        Ok(out)
    }
}

/// Sum over extractor layers of the mean absolute feature difference.
pub fn perceptual_loss<'g, S: Scalar>(
    fx: &FeatureExtractor<S>,
    generated: Var<'g, S>,
    target: Var<'g, S>,
) -> Result<Var<'g, S>> {
    let (a, b) = (generated.shape(), target.shape());
    if a != b {
        return Err(mismatch("perceptual_loss", &a, &b));
    }
    let graph = generated.graph();
    let fa = fx.features(graph, generated)?;
    let fb = fx.features(graph, target)?;
    let mut total: Option<Var<'g, S>> = None;
    for (x, y) in fa.into_iter().zip(fb) {
        let term = x.sub(y)?.abs().mean();
        total = Some(match total {
            Some(t) => t.add(term)?,
            None => term,
        });
    }
    Ok(total.expect("extractor has at least one layer"))
}

/// Scalar loss components of one generator step.
#[derive(Clone, Copy, Debug)]
pub struct LossParts<'g, S> {
    pub gan: Var<'g, S>,
    pub l1: Var<'g, S>,
    pub perceptual: Var<'g, S>,
}

/// `lambda_gan * L_gan + lambda_l1 * L_l1 + lambda_p * L_p`.
pub fn total_loss<'g, S: Scalar>(parts: &LossParts<'g, S>, w: &LossWeights) -> Result<Var<'g, S>> {
    parts
        .gan
        .scale(w.lambda_gan)
        .add(parts.l1.scale(w.lambda_l1))?
        .add(parts.perceptual.scale(w.lambda_p))
}

/// Combines the per-discriminator generator terms.
pub fn combine_adversarial<'g, S: Scalar>(
    appearance: Var<'g, S>,
    shape: Var<'g, S>,
    reduction: AdversarialReduction,
) -> Result<Var<'g, S>> {
    let sum = appearance.add(shape)?;
    Ok(match reduction {
        AdversarialReduction::Mean => sum.scale(0.5),
        AdversarialReduction::Sum => sum,
    })
}
