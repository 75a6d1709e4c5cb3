use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use xinggan_core::gradsuite::run_suite;
use xinggan_core::metrics::EvalReport;
use xinggan_core::synth::{Dataset, Split};
use xinggan_core::train::{dump_attention, evaluate_generator, generate, train, write_png, Checkpoint, EvalMode, StepStats, TrainConfig, TrainObserver};
use xinggan_core::{Error, Tensor};

#[derive(Parser, Debug)]
#[command(name = "xinggan", version, about = "Pose-guided person image generation with crossing attention")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Text file of key=value lines applied on top of the desk defaults
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides master_seed
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Extra key=value overrides, applied after --config
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train from scratch and write checkpoints and CSV logs
    Train(Common),
    /// Score a checkpoint on held-out identities
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        samples: Option<usize>,
        /// Score the real targets against themselves
        #[arg(long)]
        pass_through: bool,
    },
    /// Write source, target and generated images for held-out samples
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 8)]
        samples: usize,
    },
    /// Export intermediates and co-attention maps for one held-out sample
    DumpAttention {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 0)]
        sample: usize,
    },
    /// Compare analytic and finite-difference gradients in 64-bit precision
    Gradcheck(Common),
    /// Render a few synthetic training pairs and the dataset manifest
    SynthPreview {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 8)]
        samples: usize,
    },
}

fn load_config(common: &Common) -> Result<TrainConfig, Error> {
    let mut cfg = TrainConfig::default();
    if let Some(path) = &common.config {
        cfg.apply_text(&std::fs::read_to_string(path)?)?;
    }
    for kv in &common.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects key=value, got {kv:?}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = common.seed {
        cfg.master_seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn prepare_out(common: &Common, cfg: &TrainConfig) -> Result<(), Error> {
    std::fs::create_dir_all(&common.out)?;
    std::fs::write(common.out.join("effective_config.txt"), cfg.to_text())?;
    Ok(())
}

/// Loads a checkpoint; `--seed` re-targets evaluation data without touching weights.
fn load_checkpoint(path: &Path, common: &Common) -> Result<Checkpoint, Error> {
    let mut ck = Checkpoint::load(path)?;
    if let Some(seed) = common.seed {
        ck.config.master_seed = seed;
    }
    Ok(ck)
}

struct Progress;

impl TrainObserver for Progress {
    fn on_step(&mut self, s: &StepStats) {
        if s.iteration % 50 == 0 {
            info!("{}", s.csv_row());
        }
    }

    fn on_eval(&mut self, r: &EvalReport) {
        println!("{}", r.csv_row());
    }
}

fn run(cmd: Command) -> Result<(), Error> {
    match cmd {
        Command::Train(common) => {
            let cfg = load_config(&common)?;
            prepare_out(&common, &cfg)?;
            println!("{}", EvalReport::CSV_HEADER);
            let run = train(cfg, Some(&common.out), &mut Progress)?;
            for p in &run.saved {
                info!("wrote {}", p.display());
            }
        }
        Command::Eval {
            common,
            checkpoint,
            samples,
            pass_through,
        } => {
            let ck = load_checkpoint(&checkpoint, &common)?;
            prepare_out(&common, &ck.config)?;
            let n = samples.unwrap_or(ck.config.eval_samples);
            let mode = if pass_through { EvalMode::PassThrough } else { EvalMode::Generator };
            let report = evaluate_generator(&ck, n, mode)?;
            let text = format!("{}\n{}\n", EvalReport::CSV_HEADER, report.csv_row());
            print!("{text}");
            std::fs::write(common.out.join("eval.csv"), text)?;
        }
        Command::Generate {
            common,
            checkpoint,
            samples,
        } => {
            let ck = load_checkpoint(&checkpoint, &common)?;
            prepare_out(&common, &ck.config)?;
            let dataset = Dataset::new(ck.config.dataset()?);
            for (i, rec) in xinggan_core::train::eval_records(&dataset, samples).iter().enumerate() {
                let s = dataset.sample::<f32>(rec)?;
                write_png(common.out.join(format!("{i:03}_source.png")), &s.source_image)?;
                write_png(common.out.join(format!("{i:03}_target.png")), &s.target_image)?;
                write_png(common.out.join(format!("{i:03}_generated.png")), &generate(&ck, &s)?)?;
            }
        }
        Command::DumpAttention {
            common,
            checkpoint,
            sample,
        } => {
            let ck = load_checkpoint(&checkpoint, &common)?;
            prepare_out(&common, &ck.config)?;
            let dump = dump_attention(&ck, sample, &common.out)?;
            println!(
                "{} attention maps, {} intermediates, {} summaries",
                dump.attention_maps.len(),
                dump.intermediates.len(),
                dump.summaries.len()
            );
        }
        Command::Gradcheck(common) => {
            let cfg = load_config(&common)?;
            prepare_out(&common, &cfg)?;
            let seed = common.seed.unwrap_or(0);
            let mut failed = 0;
            for c in run_suite(seed)? {
                let verdict = if c.passed() { "ok" } else { "FAIL" };
                println!("{:<26} rel_err={:.3e} tol={:.0e} {verdict}", c.name, c.max_rel_error, c.tolerance);
                failed += usize::from(!c.passed());
            }
            if failed > 0 {
                return Err(Error::InvalidArgument {
                    op: "gradcheck",
                    msg: format!("{failed} checks exceeded tolerance"),
                });
            }
        }
        Command::SynthPreview { common, samples } => {
            let cfg = load_config(&common)?;
            prepare_out(&common, &cfg)?;
            let dataset = Dataset::new(cfg.dataset()?);
            std::fs::write(common.out.join("manifest.csv"), dataset.manifest())?;
            for i in 0..samples.min(dataset.len(Split::Train)) {
                let s = dataset.sample::<f32>(&dataset.record(Split::Train, i))?;
                write_png(common.out.join(format!("{i:03}_source.png")), &s.source_image)?;
                write_png(common.out.join(format!("{i:03}_target.png")), &s.target_image)?;
                write_png(common.out.join(format!("{i:03}_target_pose.png")), &heatmap_image(s.target_pose.tensor()))?;
            }
        }
    }
    Ok(())
}

/// Per-pixel max over joint channels, as a gray `[1,H,W]` image in `[-1,1]`.
fn heatmap_image(map: &Tensor<f32>) -> Tensor<f32> {
    let (c, h, w) = (map.shape()[0], map.shape()[1], map.shape()[2]);
    Tensor::from_fn(&[1, h, w], |i| {
        let m = (0..c).map(|k| map.data()[k * h * w + i]).fold(0.0f32, f32::max);
        2.0 * m - 1.0
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
