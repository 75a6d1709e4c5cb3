use std::path::{Path, PathBuf};

use log::info;

use crate::error::{Error, Result};
use crate::metrics::{EvalAccumulator, EvalReport};
use crate::nets::{discriminator_forward_batch, generator_forward, init_discriminator, init_generator, DiscKind, GeneratorConfig};
use crate::objectives::{combine_adversarial, gan_loss_d, gan_loss_g, l1_loss, perceptual_loss, total_loss, FeatureExtractor, LossParts};
use crate::params::{Binder, ParamStore};
use crate::synth::{Dataset, Sample, Split};
use crate::tensor::{Graph, SeedRng, Tensor, Var};

use super::adam::Adam;
use super::checkpoint::Checkpoint;
use super::config::TrainConfig;

const GEN_INIT_KEY: u64 = 0x6E_1417;
const DISC_INIT_KEY: u64 = 0xD1_5C17;
const EXTRACTOR_KEY: u64 = 0xF3_A7;
const BATCH_KEY: u64 = 0xBA_7C4;

/// Discriminator loss over pairs laid out as `[reals.., fakes..]`.
fn disc_loss<'g>(disc: &Binder<'g, '_, f32>, kind: DiscKind, pairs: &[(Var<'g, f32>, Var<'g, f32>)]) -> Result<Var<'g, f32>> {
    let logits = discriminator_forward_batch(disc, kind, pairs)?;
    let s = logits.shape();
    let half = s[0] / 2;
    let planes = logits.reshape(&[s[0], s[2], s[3]])?;
    gan_loss_d(planes.slice_channels(0, half)?, planes.slice_channels(half, half)?)
}

fn accumulate<'g>(acc: Option<Var<'g, f32>>, term: Var<'g, f32>) -> Result<Var<'g, f32>> {
    match acc {
        Some(a) => a.add(term),
        None => Ok(term),
    }
}

/// Scalar losses of one training iteration, averaged over the batch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    /// Iteration number after the update, starting at 1.
    pub iteration: u64,
    pub d_loss: f64,
    pub g_loss: f64,
    pub gan: f64,
    pub l1: f64,
    pub perceptual: f64,
}

impl StepStats {
    pub const CSV_HEADER: &'static str = "step,d_loss,g_loss,gan,l1,perceptual";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.iteration, self.d_loss, self.g_loss, self.gan, self.l1, self.perceptual
        )
    }

    pub fn is_finite(&self) -> bool {
        [self.d_loss, self.g_loss, self.gan, self.l1, self.perceptual]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Mutable training state around a [`Checkpoint`].
pub struct Trainer {
    state: Checkpoint,
    gen_cfg: GeneratorConfig,
    dataset: Dataset,
    extractor: FeatureExtractor<f32>,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let gen_cfg = config.generator()?;
        let seed = config.master_seed;
        let generator = init_generator::<f32>(&gen_cfg, &mut SeedRng::derive(seed, GEN_INIT_KEY))?;
        let mut drng = SeedRng::derive(seed, DISC_INIT_KEY);
        let mut discriminators = init_discriminator::<f32>(DiscKind::Appearance, &mut drng);
        discriminators.extend(init_discriminator::<f32>(DiscKind::Shape, &mut drng));
        let gen_opt = Adam::new(&generator, config.lr, config.beta1, config.beta2);
        let disc_opt = Adam::new(&discriminators, config.lr, config.beta1, config.beta2);
        Self::from_checkpoint(Checkpoint {
            config,
            iteration: 0,
            generator,
            discriminators,
            gen_opt,
            disc_opt,
        })
    }

    pub fn from_checkpoint(state: Checkpoint) -> Result<Self> {
        state.config.validate()?;
        let gen_cfg = state.config.generator()?;
        let dataset = Dataset::new(state.config.dataset()?);
        let extractor = FeatureExtractor::seeded(SeedRng::derive(state.config.master_seed, EXTRACTOR_KEY).next_u64());
        Ok(Self {
            state,
            gen_cfg,
            dataset,
            extractor,
        })
    }

    pub fn checkpoint(&self) -> &Checkpoint {
        &self.state
    }

    pub fn into_checkpoint(self) -> Checkpoint {
        self.state
    }

    pub fn config(&self) -> &TrainConfig {
        &self.state.config
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn iteration(&self) -> u64 {
        self.state.iteration
    }

    /// Training batch for the given iteration; a pure function of the seed.
    pub fn batch(&self, iteration: u64) -> Result<Vec<Sample<f32>>> {
        let mut rng = SeedRng::derive(self.state.config.master_seed ^ BATCH_KEY, iteration);
        let n = self.dataset.len(Split::Train);
        (0..self.state.config.batch_size)
            .map(|_| self.dataset.sample(&self.dataset.record(Split::Train, rng.below(n))))
            .collect()
    }

    /// One discriminator update followed by one generator update. On a
    /// non-finite loss the state is left as it was before the call.
    pub fn step(&mut self) -> Result<StepStats> {
        let it = self.state.iteration;
        let batch = self.batch(it)?;
        let inv_b = 1.0 / batch.len() as f64;
        let cfg = self.state.config.clone();

        let graph = Graph::<f32>::new();
        let gen = Binder::new(&graph, &self.state.generator, true);
        let mut fakes = Vec::with_capacity(batch.len());
        for s in &batch {
            let (src, sp, tp) = sample_inputs(&graph, s);
            fakes.push(generator_forward(&gen, &self.gen_cfg, src, sp, tp)?.image);
        }

        let saved_disc = (self.state.discriminators.clone(), self.state.disc_opt.clone());
        let d_loss = {
            let dgraph = Graph::<f32>::new();
            let disc = Binder::new(&dgraph, &self.state.discriminators, true);
            // Real pairs first, then fake pairs, per discriminator.
            let (mut appearance, mut shape) = (Vec::new(), Vec::new());
            let mut fake_pairs = (Vec::new(), Vec::new());
            for (s, fake) in batch.iter().zip(&fakes) {
                let fake = dgraph.constant((*fake.value()).clone());
                let (src, _, tp) = sample_inputs(&dgraph, s);
                let tgt = dgraph.constant(s.target_image.clone());
                appearance.push((src, tgt));
                shape.push((tp, tgt));
                fake_pairs.0.push((src, fake));
                fake_pairs.1.push((tp, fake));
            }
            appearance.extend(fake_pairs.0);
            shape.extend(fake_pairs.1);
            let li = disc_loss(&disc, DiscKind::Appearance, &appearance)?;
            let lp = disc_loss(&disc, DiscKind::Shape, &shape)?;
            let loss = li.add(lp)?;
            let value = loss.value().item() as f64;
            if !value.is_finite() {
                return Err(diverged(it, "discriminator loss"));
            }
            loss.backward()?;
            let grads = disc.gradients();
            drop(disc);
            self.state.disc_opt.update(&mut self.state.discriminators, &grads)?;
            value
        };

        let disc = Binder::new(&graph, &self.state.discriminators, false);
        let mut appearance = Vec::with_capacity(batch.len());
        let mut shape = Vec::with_capacity(batch.len());
        let mut l1: Option<Var<f32>> = None;
        let mut perceptual: Option<Var<f32>> = None;
        for (s, &fake) in batch.iter().zip(&fakes) {
            let (src, _, tp) = sample_inputs(&graph, s);
            let tgt = graph.constant(s.target_image.clone());
            appearance.push((src, fake));
            shape.push((tp, fake));
            l1 = Some(accumulate(l1, l1_loss(fake, tgt)?)?);
            perceptual = Some(accumulate(perceptual, perceptual_loss(&self.extractor, fake, tgt)?)?);
        }
        let adv_i = gan_loss_g(discriminator_forward_batch(&disc, DiscKind::Appearance, &appearance)?);
        let adv_p = gan_loss_g(discriminator_forward_batch(&disc, DiscKind::Shape, &shape)?);
        let parts = LossParts {
            gan: combine_adversarial(adv_i, adv_p, cfg.adversarial)?,
            l1: l1.expect("batch is non-empty").scale(inv_b),
            perceptual: perceptual.expect("batch is non-empty").scale(inv_b),
        };
        let (gan_mean, l1_mean, p_mean) = (
            parts.gan.value().item() as f64,
            parts.l1.value().item() as f64,
            parts.perceptual.value().item() as f64,
        );
        let loss = total_loss(&parts, &cfg.weights)?;
        let g_loss = loss.value().item() as f64;
        if !g_loss.is_finite() {
            (self.state.discriminators, self.state.disc_opt) = saved_disc;
            return Err(diverged(it, "generator loss"));
        }
        loss.backward()?;
        let grads = gen.gradients();
        drop((gen, disc, fakes));
        drop(graph);
        if grads.iter().any(|(_, g)| !g.is_finite()) {
            (self.state.discriminators, self.state.disc_opt) = saved_disc;
            return Err(diverged(it, "generator gradient"));
        }
        self.state.gen_opt.update(&mut self.state.generator, &grads)?;
        self.state.iteration += 1;
        Ok(StepStats {
            iteration: self.state.iteration,
            d_loss,
            g_loss,
            gan: gan_mean,
            l1: l1_mean,
            perceptual: p_mean,
        })
    }

    /// Scores the current generator on the held-out identities.
    pub fn evaluate(&self) -> Result<EvalReport> {
        evaluate_generator(&self.state, self.state.config.eval_samples, EvalMode::Generator)
    }
}

fn diverged(iteration: u64, what: &str) -> Error {
    Error::Diverged {
        iteration: iteration as usize,
        what: what.to_string(),
    }
}

fn sample_inputs<'g>(g: &'g Graph<f32>, s: &Sample<f32>) -> (Var<'g, f32>, Var<'g, f32>, Var<'g, f32>) {
    (
        g.constant(s.source_image.clone()),
        g.constant(s.source_pose.tensor().clone()),
        g.constant(s.target_pose.tensor().clone()),
    )
}

/// What [`evaluate_generator`] compares against the targets.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalMode {
    Generator,
    /// Scores the real target images against themselves.
    PassThrough,
}

/// Held-out sample indices spread evenly over the test identities.
pub fn eval_records(dataset: &Dataset, n: usize) -> Vec<crate::synth::SampleRecord> {
    let len = dataset.len(Split::Test);
    let stride = (len / n.max(1)).max(1);
    (0..n.min(len)).map(|i| dataset.record(Split::Test, i * stride)).collect()
}

/// Runs the generator of `ck` without gradients.
pub fn generate(ck: &Checkpoint, s: &Sample<f32>) -> Result<Tensor<f32>> {
    let graph = Graph::<f32>::new();
    let b = Binder::new(&graph, &ck.generator, false);
    let (src, sp, tp) = sample_inputs(&graph, s);
    let out = generator_forward(&b, &ck.config.generator()?, src, sp, tp)?;
    Ok((*out.image.value()).clone())
}

pub fn evaluate_generator(ck: &Checkpoint, n_samples: usize, mode: EvalMode) -> Result<EvalReport> {
    let dataset = Dataset::new(ck.config.dataset()?);
    let mut acc = EvalAccumulator::default();
    for rec in eval_records(&dataset, n_samples) {
        let s = dataset.sample::<f32>(&rec)?;
        let image = match mode {
            EvalMode::Generator => generate(ck, &s)?,
            EvalMode::PassThrough => s.target_image.clone(),
        };
        acc.add(&image, &s.target_image, &s.target_skeleton, ck.config.mask_radius)?;
    }
    Ok(acc.finish(ck.iteration))
}

/// Receives progress from [`train`].
pub trait TrainObserver {
    fn on_step(&mut self, _stats: &StepStats) {}
    fn on_eval(&mut self, _report: &EvalReport) {}
    fn on_checkpoint(&mut self, _ck: &Checkpoint, _path: Option<&Path>) {}
}

impl TrainObserver for () {}

/// Final state and metric log of a run.
#[derive(Clone, Debug)]
pub struct TrainRun {
    pub checkpoint: Checkpoint,
    pub steps: Vec<StepStats>,
    pub evals: Vec<EvalReport>,
    pub saved: Vec<PathBuf>,
}

/// Runs `config.iterations` steps from initialization. With an output
/// directory, writes checkpoints and CSV logs there; after divergence the
/// last good state is written to `last_good.xgck` before the error returns.
pub fn train(config: TrainConfig, out_dir: Option<&Path>, observer: &mut dyn TrainObserver) -> Result<TrainRun> {
    let mut trainer = Trainer::new(config)?;
    let cfg = trainer.config().clone();
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("effective_config.txt"), cfg.to_text())?;
    }
    let mut run = TrainRun {
        checkpoint: trainer.checkpoint().clone(),
        steps: Vec::new(),
        evals: Vec::new(),
        saved: Vec::new(),
    };
    let report = trainer.evaluate()?;
    info!("step 0: {}", report.csv_row());
    observer.on_eval(&report);
    run.evals.push(report);

    for _ in 0..cfg.iterations {
        let stats = match trainer.step() {
            Ok(s) => s,
            Err(e) => {
                if let Some(dir) = out_dir {
                    trainer.checkpoint().save(dir.join("last_good.xgck"))?;
                }
                return Err(e);
            }
        };
        observer.on_step(&stats);
        run.steps.push(stats);
        let it = stats.iteration as usize;
        if cfg.eval_every > 0 && it % cfg.eval_every == 0 && it != cfg.iterations {
            let report = trainer.evaluate()?;
            info!("step {it}: {}", report.csv_row());
            observer.on_eval(&report);
            run.evals.push(report);
        }
        if cfg.checkpoint_every > 0 && it % cfg.checkpoint_every == 0 && it != cfg.iterations {
            save_point(&trainer, out_dir, &format!("ckpt_{it:06}.xgck"), observer, &mut run)?;
        }
    }
    if cfg.iterations > 0 {
        let report = trainer.evaluate()?;
        info!("step {}: {}", cfg.iterations, report.csv_row());
        observer.on_eval(&report);
        run.evals.push(report);
    }
    save_point(&trainer, out_dir, "final.xgck", observer, &mut run)?;
    if let Some(dir) = out_dir {
        write_logs(dir, &run)?;
    }
    run.checkpoint = trainer.into_checkpoint();
    Ok(run)
}

fn save_point(
    trainer: &Trainer,
    out_dir: Option<&Path>,
    name: &str,
    observer: &mut dyn TrainObserver,
    run: &mut TrainRun,
) -> Result<()> {
    let path = out_dir.map(|d| d.join(name));
    if let Some(p) = &path {
        trainer.checkpoint().save(p)?;
        run.saved.push(p.clone());
    }
    observer.on_checkpoint(trainer.checkpoint(), path.as_deref());
    Ok(())
}

fn write_logs(dir: &Path, run: &TrainRun) -> Result<()> {
    let mut metrics = format!("{}\n", EvalReport::CSV_HEADER);
    for r in &run.evals {
        metrics.push_str(&r.csv_row());
        metrics.push('\n');
    }
    std::fs::write(dir.join("metrics.csv"), metrics)?;
    let mut losses = format!("{}\n", StepStats::CSV_HEADER);
    for s in &run.steps {
        losses.push_str(&s.csv_row());
        losses.push('\n');
    }
    std::fs::write(dir.join("losses.csv"), losses)?;
    Ok(())
}

/// Generator and discriminator parameters, for audits.
pub fn split_params(ck: &Checkpoint) -> (&ParamStore<f32>, &ParamStore<f32>) {
    (&ck.generator, &ck.discriminators)
}
