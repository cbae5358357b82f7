//! `egoid`: extract grid flow, train and evaluate camera-wearer recognizers.

mod commands;
mod config;
mod error;
mod plot;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand};
use egoid::ingest::Protocol;
use egoid::pipeline::{Backend, Fuse};

use crate::config::RunConfig;
use crate::error::{exit, CliError};

#[derive(Debug, Parser)]
#[command(name = "egoid", version, about = "Identify the wearer of a head-mounted camera from its motion")]
struct Cli {
    /// Run configuration (JSON). Omitted fields take their defaults.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// More log output; repeat for more.
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

/// Flags that override fields of the run configuration.
#[derive(Debug, Default, Args)]
struct Overrides {
    /// lpc-svm, raw-svm or cnn.
    #[arg(long)]
    backend: Option<Backend>,
    /// fpsi-identification, evpr-identification or evpr-verification.
    #[arg(long)]
    protocol: Option<Protocol>,
    /// Target subject of a verification split.
    #[arg(long)]
    target: Option<String>,
    /// Seed of the split's non-target draw.
    #[arg(long)]
    split_seed: Option<u64>,
    /// Seed of CNN initialization and shuffling.
    #[arg(long)]
    seed: Option<u64>,
    /// Subtract each frame's mean flow before windowing.
    #[arg(long)]
    stabilize: bool,
    /// Maximum CNN training epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Camera of the test sequences.
    #[arg(long)]
    test_camera: Option<String>,
    /// Window fusion for longer videos: map or mode.
    #[arg(long)]
    fuse: Option<Fuse>,
    /// Evaluated video length in seconds; repeatable.
    #[arg(long = "duration")]
    durations: Vec<f64>,
}

impl Overrides {
    fn apply(&self, c: &mut RunConfig) {
        if let Some(b) = self.backend {
            c.backend = b;
        }
        if let Some(p) = self.protocol {
            c.split.protocol = p;
        }
        if let Some(t) = &self.target {
            c.split.target = Some(t.clone());
        }
        if let Some(s) = self.split_seed {
            c.split.seed = s;
        }
        if let Some(s) = self.seed {
            c.cnn.seed = s;
        }
        if self.stabilize {
            c.stabilize = true;
        }
        if let Some(e) = self.epochs {
            c.cnn.epochs = e;
        }
        if let Some(cam) = &self.test_camera {
            c.split.test_camera = Some(cam.clone());
        }
        if let Some(f) = self.fuse {
            c.eval.fuse = f;
        }
        if !self.durations.is_empty() {
            c.eval.durations = self.durations.clone();
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compute grid optical flow for every sequence with frames and write
    /// flow caches plus an updated manifest. Up-to-date caches are skipped.
    Extract {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Write one descriptor row per window: LPC coefficients, or the hidden
    /// layer of a CNN model.
    Featurize {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// CNN (or SVM) model whose descriptor to emit instead of LPC.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        stabilize: bool,
    },
    /// Train a model on the training side of a split.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Where to write the training report.
        #[arg(long)]
        report: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Closed-set identification of the split's test sequences.
    Identify {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Verification against one target: with a target-vs-rest model, or by
    /// nearest-neighbour matching to the target's gallery (`--nn`).
    Verify {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Nearest-neighbour verification; the model's classes form the
        /// training pool and are excluded from the probes.
        #[arg(long)]
        nn: bool,
        /// Descriptor for `--nn`: cnn (the model's hidden layer) or lpc.
        #[arg(long, default_value = "cnn")]
        descriptor: String,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Generate a seeded synthetic population as flow caches and a manifest.
    Synth {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        subjects: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Summarize identify/verify reports as CSV, JSON and SVG plots.
    Eval {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Render CNN kernels as PNG images, one per flow component.
    VisualizeFilters {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Kernel index; repeatable. Defaults to every kernel.
        #[arg(long = "kernel")]
        kernels: Vec<usize>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Extract { manifest, out_dir } => commands::extract(&cfg, &manifest, &out_dir),
        Command::Featurize {
            manifest,
            out,
            model,
            stabilize,
        } => {
            cfg.stabilize |= stabilize;
            commands::featurize(&cfg, &manifest, &out, model.as_deref())
        }
        Command::Train {
            manifest,
            out,
            report,
            overrides,
        } => {
            overrides.apply(&mut cfg);
            commands::train(&cfg, &manifest, &out, report.as_deref())
        }
        Command::Identify {
            model,
            manifest,
            out,
            overrides,
        } => {
            overrides.apply(&mut cfg);
            commands::identify(&cfg, &model, &manifest, &out)
        }
        Command::Verify {
            model,
            manifest,
            out,
            nn,
            descriptor,
            overrides,
        } => {
            overrides.apply(&mut cfg);
            if nn {
                let use_lpc = match descriptor.as_str() {
                    "cnn" => false,
                    "lpc" => true,
                    other => return Err(CliError::usage(format!("unknown descriptor `{other}` (expected cnn or lpc)"))),
                };
                commands::verify_nn(&cfg, &model, &manifest, &out, use_lpc)
            } else {
                commands::verify(&cfg, &model, &manifest, &out)
            }
        }
        Command::Synth { out_dir, subjects, seed } => {
            if let Some(n) = subjects {
                cfg.synth.n_subjects = n;
            }
            if let Some(s) = seed {
                cfg.synth.master_seed = s;
            }
            commands::synth(&cfg, &out_dir)
        }
        Command::Eval { reports, out_dir } => commands::eval(&reports, &out_dir),
        Command::VisualizeFilters {
            model,
            out_dir,
            kernels,
        } => commands::visualize_filters(&model, &out_dir, &kernels),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::from(exit::OK as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
