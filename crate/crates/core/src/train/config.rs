//! Flat `key=value` training configuration.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::metrics::DEFAULT_MASK_RADIUS;
use crate::nets::{GeneratorConfig, Variant};
use crate::objectives::{AdversarialReduction, LossWeights, DEFAULT_WEIGHTS};
use crate::synth::{DatasetSpec, ImageSize, PoseNoise, DEFAULT_SIGMA};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub variant: Variant,
    pub blocks: usize,
    pub intermediates: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub weights: LossWeights,
    pub adversarial: AdversarialReduction,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub iterations: usize,
    pub batch_size: usize,
    pub master_seed: u64,
    /// 0 disables periodic evaluation; the first and last steps are always scored.
    pub eval_every: usize,
    /// 0 saves only the final checkpoint.
    pub checkpoint_every: usize,
    pub eval_samples: usize,
    pub train_identities: u64,
    pub test_identities: u64,
    pub pairs_per_identity: u64,
    pub sigma: f64,
    pub mask_radius: f64,
}

impl Default for TrainConfig {
    /// The desk-scale setup: T=3, N=4, 64x32 images, 2,000 iterations.
    fn default() -> Self {
        Self {
            variant: Variant::Full,
            blocks: 3,
            intermediates: 4,
            channels: 64,
            height: 64,
            width: 32,
            weights: DEFAULT_WEIGHTS,
            adversarial: AdversarialReduction::Mean,
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            iterations: 2000,
            batch_size: 4,
            master_seed: 42,
            eval_every: 500,
            checkpoint_every: 0,
            eval_samples: 64,
            train_identities: 200,
            test_identities: 40,
            pairs_per_identity: 20,
            sigma: DEFAULT_SIGMA,
            mask_radius: DEFAULT_MASK_RADIUS,
        }
    }
}

const KEYS: [&str; 23] = [
    "variant",
    "blocks",
    "intermediates",
    "channels",
    "height",
    "width",
    "lambda_gan",
    "lambda_l1",
    "lambda_p",
    "adversarial",
    "lr",
    "beta1",
    "beta2",
    "iterations",
    "batch_size",
    "master_seed",
    "eval_every",
    "checkpoint_every",
    "eval_samples",
    "train_identities",
    "test_identities",
    "pairs_per_identity",
    "sigma",
];

impl TrainConfig {
    /// Full-size network and schedule: T=9, N=10, 90k iterations.
    pub fn paper_scale() -> Self {
        Self {
            blocks: 9,
            intermediates: 10,
            iterations: 90_000,
            ..Self::default()
        }
    }

    pub fn generator(&self) -> Result<GeneratorConfig> {
        GeneratorConfig::new(self.variant, self.blocks, self.intermediates, self.channels)
    }

    pub fn image_size(&self) -> Result<ImageSize> {
        ImageSize::new(self.height, self.width)
    }

    pub fn dataset(&self) -> Result<DatasetSpec> {
        Ok(DatasetSpec {
            master_seed: self.master_seed,
            train_identities: self.train_identities,
            test_identities: self.test_identities,
            pairs_per_identity: self.pairs_per_identity,
            size: self.image_size()?,
            sigma: self.sigma,
            noise: PoseNoise::default(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.generator()?;
        self.image_size()?;
        LossWeights::new(self.weights.lambda_gan, self.weights.lambda_l1, self.weights.lambda_p)?;
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("need lr > 0 and betas in [0,1)");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.train_identities == 0 || self.test_identities == 0 || self.pairs_per_identity == 0 {
            return bad("dataset sizes must be positive");
        }
        if self.eval_samples == 0 || self.eval_samples as u64 > self.test_identities * self.pairs_per_identity {
            return bad("eval_samples must be between 1 and the held-out set size");
        }
        if !(self.sigma > 0.0) || !(self.mask_radius >= 1.0) {
            return bad("need sigma > 0 and mask_radius >= 1");
        }
        Ok(())
    }

    /// Applies one `key=value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T>
        where
            T::Err: std::fmt::Display,
        {
            v.parse().map_err(|e| Error::Config(format!("{key}: cannot parse {v:?}: {e}")))
        }
        match key {
            "variant" => self.variant = num(key, value)?,
            "blocks" => self.blocks = num(key, value)?,
            "intermediates" => self.intermediates = num(key, value)?,
            "channels" => self.channels = num(key, value)?,
            "height" => self.height = num(key, value)?,
            "width" => self.width = num(key, value)?,
            "lambda_gan" => self.weights.lambda_gan = num(key, value)?,
            "lambda_l1" => self.weights.lambda_l1 = num(key, value)?,
            "lambda_p" => self.weights.lambda_p = num(key, value)?,
            "adversarial" => {
                self.adversarial = match value {
                    "mean" => AdversarialReduction::Mean,
                    "sum" => AdversarialReduction::Sum,
                    _ => return Err(Error::Config(format!("adversarial: expected mean or sum, got {value:?}"))),
                }
            }
            "lr" => self.lr = num(key, value)?,
            "beta1" => self.beta1 = num(key, value)?,
            "beta2" => self.beta2 = num(key, value)?,
            "iterations" => self.iterations = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "master_seed" => self.master_seed = num(key, value)?,
            "eval_every" => self.eval_every = num(key, value)?,
            "checkpoint_every" => self.checkpoint_every = num(key, value)?,
            "eval_samples" => self.eval_samples = num(key, value)?,
            "train_identities" => self.train_identities = num(key, value)?,
            "test_identities" => self.test_identities = num(key, value)?,
            "pairs_per_identity" => self.pairs_per_identity = num(key, value)?,
            "sigma" => self.sigma = num(key, value)?,
            "mask_radius" => self.mask_radius = num(key, value)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Parses config text on top of the defaults, then validates.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got {raw:?}", lineno + 1)))?;
            self.set(k.trim(), v.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(())
    }

    /// Every key in a fixed order; `parse(to_text())` reproduces `self`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let adv = match self.adversarial {
            AdversarialReduction::Mean => "mean",
            AdversarialReduction::Sum => "sum",
        };
        let values: [String; KEYS.len()] = [
            self.variant.to_string(),
            self.blocks.to_string(),
            self.intermediates.to_string(),
            self.channels.to_string(),
            self.height.to_string(),
            self.width.to_string(),
            self.weights.lambda_gan.to_string(),
            self.weights.lambda_l1.to_string(),
            self.weights.lambda_p.to_string(),
            adv.to_string(),
            self.lr.to_string(),
            self.beta1.to_string(),
            self.beta2.to_string(),
            self.iterations.to_string(),
            self.batch_size.to_string(),
            self.master_seed.to_string(),
            self.eval_every.to_string(),
            self.checkpoint_every.to_string(),
            self.eval_samples.to_string(),
            self.train_identities.to_string(),
            self.test_identities.to_string(),
            self.pairs_per_identity.to_string(),
            self.sigma.to_string(),
        ];
        for (k, v) in KEYS.iter().zip(values) {
            let _ = writeln!(s, "{k}={v}");
        }
        let _ = writeln!(s, "mask_radius={}", self.mask_radius);
        s
    }
}
