//! Command-line front end.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::checkpoint::Checkpoint;
use crate::config::{DataSource, ModelConfig, RunConfig, Task};
use crate::data::{generate_synthetic, planted_signal_accuracy, write_dataset, FeatureDims, GeneratorSpec, Precision};
use crate::error::{Error, Result};
use crate::gradcheck::{grad_check_many, GradCheckReport};
use crate::hypergraph::build_incidence;
use crate::metrics::Metrics;
use crate::model::Model;
use crate::par::Execution;
use crate::params::{uniform, Bound, Group};
use crate::report::{evaluate_checkpoint, run_training, write_run};
use crate::tape::Graph;

#[derive(Debug, Parser)]
#[command(
    name = "p3hf",
    version,
    about = "Personality-gated hypergraph transformer with event disentanglement"
)]
pub struct Cli {
    /// Run per-sample work on one thread.
    #[arg(long, global = true)]
    pub sequential: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset (manifest + raw feature files).
    GenData {
        /// Run config whose `data.synthetic` section is used.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the generator seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "f64")]
        precision: PrecisionArg,
    },
    /// Fit a model and write config, report, summary and checkpoint.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides `model.seed`.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
        /// Overrides `model.num_classes`.
        #[arg(long, value_enum)]
        task: Option<Task>,
    },
    /// Recompute validation metrics from a saved checkpoint.
    Eval {
        /// The `config.json` of the run.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Finite-difference check of every parameter gradient on a micro model.
    GradCheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-4)]
        eps: f64,
    },
    /// Print the hyperedge list for `T` frames and window `w`.
    InspectHypergraph {
        #[arg(long = "T")]
        frames: usize,
        #[arg(long = "w")]
        window: usize,
    },
}

#[derive(Clone, Copy, Debug, clap::ValueEnum)]
pub enum PrecisionArg {
    F64,
    F32,
}

/// Relative-error threshold of the micro gradient check.
pub const GRAD_CHECK_TOLERANCE: f64 = 1e-4;

/// Micro configuration: `T = 4`, `D1 = D2 = 4`, `D3 = 2`, `K = 2`, `w = 2`.
pub fn micro_config(seed: u64) -> ModelConfig {
    ModelConfig {
        visual_dim: 3,
        audio_dim: 3,
        personality_dim: 2,
        d1: 4,
        d2: 4,
        d3: 2,
        window: 2,
        heads: 2,
        events: 2,
        num_classes: 3,
        alpha: 0.8,
        beta: 0.1,
        gamma: 0.1,
        seed,
        ..ModelConfig::default()
    }
}

pub fn micro_spec(config: &ModelConfig, seed: u64) -> GeneratorSpec {
    GeneratorSpec {
        subjects_per_class: [2, 2, 2],
        events: config.events,
        min_frames: 4,
        max_frames: 4,
        dims: FeatureDims {
            visual: config.visual_dim,
            audio: config.audio_dim,
            personality: config.personality_dim,
        },
        personality_tokens: 2,
        class_signal: 1.0,
        event_signal: 1.0,
        personality_signal: 0.2,
        noise: 0.5,
        seed,
    }
}

/// Micro model with every parameter redrawn from `U(−1, 1)`, so the check
/// runs away from the near-uniform attention of a fresh initialization
/// where many gradients fall below finite-difference resolution.
pub fn micro_model(seed: u64) -> Result<Model> {
    let mut model = Model::new(&micro_config(seed))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x00c0_ffee);
    for e in model.store.entries_mut() {
        e.value = uniform(&mut rng, e.value.shape(), 1.0);
    }
    Ok(model)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckSuite {
    /// `∂L_main` with respect to every main parameter.
    pub main: GradCheckReport,
    /// `∂L_disc` with respect to every discriminator parameter.
    pub disc: GradCheckReport,
}

impl GradCheckSuite {
    pub fn max_relative_error(&self) -> f64 {
        self.main.max_relative_error.max(self.disc.max_relative_error)
    }
}

/// Checks both training objectives of the micro model against central
/// differences.
pub fn grad_check_suite(seed: u64, eps: f64, exec: Execution) -> Result<GradCheckSuite> {
    let model = micro_model(seed)?;
    let config = &model.config;
    let dataset = generate_synthetic(&micro_spec(config, seed))?;
    let sample = &dataset.samples[(seed as usize) % dataset.samples.len()];
    let check = |group: Group| -> Result<GradCheckReport> {
        let ids = model.store.ids_in(group);
        let points: Vec<_> = ids.iter().map(|&id| model.store.get(id).clone()).collect();
        grad_check_many(
            |g: &mut Graph, vars| {
                let mut bound = Vec::with_capacity(model.store.len());
                let mut next = vars.iter();
                for e in model.store.entries() {
                    if e.group == group {
                        bound.push(*next.next().expect("one var per checked parameter"));
                    } else {
                        bound.push(g.constant(e.value.clone())?);
                    }
                }
                let losses = model.losses(g, &Bound::from_vars(&bound), sample)?;
                Ok(match group {
                    Group::Main => losses.main,
                    Group::Discriminator => losses.forward.disc,
                })
            },
            &points,
            eps,
            exec,
        )
    };
    Ok(GradCheckSuite {
        main: check(Group::Main)?,
        disc: check(Group::Discriminator)?,
    })
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

#[derive(Serialize)]
struct EvalOutput {
    epoch: u64,
    validation: Metrics,
    confusion: Vec<Vec<u64>>,
}

/// Runs one command, writing human output to `out`.
pub fn run(cli: Cli, out: &mut dyn std::io::Write) -> Result<()> {
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::default()
    };
    let io = |e: std::io::Error| Error::io("<stdout>", e);
    match cli.command {
        Command::GenData {
            config,
            seed,
            out: dir,
            precision,
        } => {
            let config = load_config(config.as_deref())?;
            let DataSource::Synthetic(mut spec) = config.data else {
                return Err(Error::Config("gen-data needs a synthetic data section".into()));
            };
            if let Some(s) = seed {
                spec.seed = s;
            }
            let dataset = generate_synthetic(&spec)?;
            let precision = match precision {
                PrecisionArg::F64 => Precision::F64,
                PrecisionArg::F32 => Precision::F32,
            };
            let manifest = write_dataset(&dataset, &dir, precision)?;
            let acc = planted_signal_accuracy(&dataset)?;
            writeln!(
                out,
                "wrote {} samples (classes {:?}) to {}; planted-signal self-test accuracy {acc:.4}",
                manifest.samples.len(),
                manifest.classes,
                dir.display()
            )
            .map_err(io)?;
        }
        Command::Train {
            config,
            seed,
            out: dir,
            task,
        } => {
            let mut config = load_config(config.as_deref())?;
            if let Some(s) = seed {
                config.model.seed = s;
            }
            if let Some(t) = task {
                config.model.num_classes = t.classes();
            }
            config.validate()?;
            let (report, checkpoint) = run_training(&config, exec)?;
            let run = write_run(&dir, &report, &checkpoint)?;
            write!(out, "{}", report.summary()).map_err(io)?;
            writeln!(out, "run directory: {}", run.display()).map_err(io)?;
        }
        Command::Eval { config, checkpoint } => {
            let config = RunConfig::load(&config)?;
            let ck = Checkpoint::load(&checkpoint, &config.model)?;
            let eval = evaluate_checkpoint(&config, &ck, exec)?;
            let output = EvalOutput {
                epoch: ck.epoch,
                validation: eval.metrics,
                confusion: eval.confusion.counts().to_vec(),
            };
            writeln!(out, "{}", serde_json::to_string_pretty(&output)?).map_err(io)?;
        }
        Command::GradCheck { seed, eps } => {
            let start = Instant::now();
            let suite = grad_check_suite(seed, eps, exec)?;
            let elapsed = start.elapsed().as_secs_f64();
            writeln!(
                out,
                "main: {} coordinates, max relative error {:.3e}\ndisc: {} coordinates, max relative error {:.3e}\nelapsed {elapsed:.2}s",
                suite.main.coordinates,
                suite.main.max_relative_error,
                suite.disc.coordinates,
                suite.disc.max_relative_error
            )
            .map_err(io)?;
            if suite.max_relative_error() >= GRAD_CHECK_TOLERANCE {
                return Err(Error::InvalidArgument(format!(
                    "gradient check failed: {:.3e} >= {GRAD_CHECK_TOLERANCE:e}",
                    suite.max_relative_error()
                )));
            }
        }
        Command::InspectHypergraph { frames, window } => {
            let inc = build_incidence(frames, window)?;
            write!(out, "{}", inc.edge_list()).map_err(io)?;
        }
    }
    Ok(())
}
