use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::error;

use cxrnet::arch::{self, network_gradient_check, Architecture, NetworkOp, ParamStore, Shape3};
use cxrnet::dataset::{self, DatasetManifest, Split, SplitSpec};
use cxrnet::harness::{self, Checkpoint, RunConfig};
use cxrnet::tensor::{GradCheckOptions, Mode, Tensor};
use cxrnet::{Error, Result};

#[derive(Parser)]
#[command(name = "cxrnet", version, about = "CNN training engine and augmentation-ablation harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic 3-class corpus.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        per_class: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 10)]
        seed: u64,
    },
    /// Ingest a folder-per-class corpus, balance it, split it and write a manifest.
    Split {
        #[arg(long)]
        root: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        seed: u64,
        #[arg(long, default_value_t = 0.2)]
        test_fraction: f64,
        #[arg(long, default_value_t = 0.2)]
        validation_fraction: f64,
        /// Exact per-class counts TRAIN,VALIDATION,TEST instead of fractions.
        #[arg(long, value_delimiter = ',', num_args = 3)]
        counts: Option<Vec<usize>>,
    },
    /// Train one model from a JSON run config.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Evaluate a checkpoint on a split of its manifest.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Train once per augmentation subset (32 runs) and write ablation.csv.
    Ablate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Train all three architectures with one config and write comparison.csv.
    Compare {
        #[arg(long)]
        config: PathBuf,
    },
    /// Print parameter count and stage shapes of an architecture.
    Params {
        #[arg(long)]
        arch: Architecture,
        #[arg(long, default_value_t = 256)]
        input: usize,
        #[arg(long, default_value_t = 3)]
        channels: usize,
        #[arg(long, default_value_t = 3)]
        classes: usize,
        /// A decimal or a fraction such as 1/8.
        #[arg(long, default_value = "1", value_parser = parse_ratio)]
        width_scale: f64,
    },
    /// Finite-difference check of a small network's backward pass.
    Gradcheck {
        #[arg(long, default_value = "resnet50")]
        arch: Architecture,
        #[arg(long, default_value = "1/32", value_parser = parse_ratio)]
        width_scale: f64,
        #[arg(long, default_value_t = 64)]
        input: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Batch-norm mode: train (batch statistics) or inference.
        #[arg(long, default_value = "train", value_parser = parse_mode)]
        mode: Mode,
        /// Coordinates checked per tensor.
        #[arg(long, default_value_t = 2)]
        coords: usize,
    },
}

fn parse_ratio(s: &str) -> std::result::Result<f64, String> {
    let value = match s.split_once('/') {
        Some((n, d)) => {
            let n: f64 = n.trim().parse().map_err(|e| format!("{e}"))?;
            let d: f64 = d.trim().parse().map_err(|e| format!("{e}"))?;
            n / d
        }
        None => s.trim().parse().map_err(|e| format!("{e}"))?,
    };
    if value.is_finite() && value > 0.0 {
        Ok(value)
    } else {
        Err(format!("{s} is not a positive ratio"))
    }
}

fn parse_mode(s: &str) -> std::result::Result<Mode, String> {
    match s {
        "train" => Ok(Mode::Train),
        "inference" => Ok(Mode::Inference),
        _ => Err(format!("{s}: expected train or inference")),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth {
            out,
            per_class,
            size,
            seed,
        } => {
            let n = dataset::generate_synthetic(per_class, size, seed, &out)?;
            println!("wrote {n} images to {}", out.display());
        }
        Command::Split {
            root,
            out,
            seed,
            test_fraction,
            validation_fraction,
            counts,
        } => {
            let spec = match counts.as_deref() {
                Some(&[train, validation, test]) => SplitSpec::Counts {
                    train,
                    validation,
                    test,
                    seed,
                },
                _ => SplitSpec::Ratios {
                    test_fraction,
                    validation_fraction_of_trainval: validation_fraction,
                    seed,
                },
            };
            let (manifest, summary) = dataset::ingest(&root)?;
            if !summary.skipped.is_empty() {
                eprintln!("skipped {} unreadable files", summary.skipped.len());
            }
            let manifest: DatasetManifest = dataset::split(&dataset::balance(&manifest, seed)?, &spec)?;
            manifest.save(&out)?;
            for (name, i) in manifest.class_names.iter().zip(0..) {
                let c = |s| manifest.split_counts(s)[i];
                println!(
                    "{name}: train {} validation {} test {}",
                    c(Split::Train),
                    c(Split::Validation),
                    c(Split::Test)
                );
            }
        }
        Command::Train { config } => {
            let config = RunConfig::load(&config)?;
            let out = harness::train(&config)?;
            let r = &out.record;
            match &r.test {
                Some(t) => println!("{}\n{}", t.report, t.confusion.to_table()),
                None => println!("status: {:?}", r.status),
            }
            println!("content hash {}", r.content_hash);
        }
        Command::Eval { checkpoint, split } => {
            let checkpoint = Checkpoint::load(&checkpoint)?;
            let eval = harness::evaluate(&checkpoint, split.parse()?)?;
            println!("{}\n{}", eval.report, eval.confusion.to_table());
        }
        Command::Ablate { config } => {
            let config = RunConfig::load(&config)?;
            let ablation = harness::ablate(&config)?;
            harness::write_ablation_csv(&ablation.rows, std::io::stdout())?;
        }
        Command::Compare { config } => {
            let config = RunConfig::load(&config)?;
            let (rows, _) = harness::compare(&config)?;
            harness::write_comparison_csv(&rows, std::io::stdout())?;
        }
        Command::Params {
            arch,
            input,
            channels,
            classes,
            width_scale,
        } => {
            let spec = arch::build(
                arch,
                Shape3 {
                    h: input,
                    w: input,
                    c: channels,
                },
                classes,
                width_scale,
            )?;
            print!("{}", spec.trace_shapes());
            println!("parameters {}", spec.count_parameters());
            println!("trainable  {}", spec.count_trainable_parameters());
        }
        Command::Gradcheck {
            arch,
            width_scale,
            input,
            seed,
            mode,
            coords,
        } => {
            let spec = arch::build(arch, Shape3 { h: input, w: input, c: 3 }, 3, width_scale)?;
            let op = NetworkOp {
                template: ParamStore::init(&spec, seed),
                spec,
                mode,
            };
            let mut rng_state = seed;
            let batch = Tensor::from_fn(&[2, input, input, 3], |_| {
                rng_state = rng_state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (rng_state >> 11) as f64 / (1u64 << 53) as f64
            });
            let opts = GradCheckOptions {
                seed,
                max_coords: coords,
                ..Default::default()
            };
            let r = network_gradient_check(&op, &batch, &opts)?;
            println!(
                "{arch} width {width_scale} {mode:?}: max relative error {:.3e} over {} coordinates ({} crossed a kink)",
                r.worst, r.checked, r.crossed_kink
            );
            if r.worst >= 1e-3 {
                return Err(Error::InvalidArgument(format!(
                    "gradient check failed: relative error {:.3e} is not below 1e-3",
                    r.worst
                )));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::FAILURE
        }
    }
}
