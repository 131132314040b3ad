//! `cloudloc`: synthetic benchmarks, feature extraction, dataset building,
//! matcher training, localization and evaluation.
//!
//! Exit codes: 0 success (including recorded localization failures),
//! 2 bad input or configuration, 3 pipeline error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use cloudloc::cloud::{C3DF_MAGIC, C3DF_VERSION};
use cloudloc::dataset::CDS1_MAGIC;
use cloudloc::eval::TableFormat;
use cloudloc::image::{C2DF_MAGIC, C2DF_VERSION};
use cloudloc::matcher::{CDM1_MAGIC, CDM1_VERSION};

use commands::{CmdResult, Failure};

fn long_version() -> &'static str {
    let magic = |m: &[u8; 4]| String::from_utf8_lossy(m).into_owned();
    let text = format!(
        "{}\nformats: {} v{}, {} v{}, {} v1, {} v{}",
        env!("CARGO_PKG_VERSION"),
        magic(C2DF_MAGIC),
        C2DF_VERSION,
        magic(C3DF_MAGIC),
        C3DF_VERSION,
        magic(CDS1_MAGIC),
        magic(CDM1_MAGIC),
        CDM1_VERSION
    );
    Box::leak(text.into_boxed_str())
}

#[derive(Parser)]
#[command(name = "cloudloc", version, long_version = long_version(), about = "Localize images in point clouds")]
struct Cli {
    /// Worker thread cap; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Modality {
    #[value(name = "2d")]
    TwoD,
    #[value(name = "3d")]
    ThreeD,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic benchmark bundle.
    Synth {
        /// Benchmark config JSON.
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Detect and describe keypoints in an image (2d) or a cloud (3d).
    Extract {
        modality: Modality,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Build the labeled correspondence dataset from a bundle's training views.
    BuildDataset {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Precomputed cloud features; extracted from the bundle cloud if absent.
        #[arg(long)]
        cloud_features: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Grid-search and train the matcher.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Localize one query image.
    Localize {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        cloud_features: PathBuf,
        /// Query image (.pgm/.ppm) or its precomputed features (.c2df).
        #[arg(long)]
        image: PathBuf,
        /// Pose record JSON with the calibration; a pose in it is used as ground truth.
        #[arg(long)]
        intrinsics: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Summarize a directory of localization results.
    Evaluate {
        #[arg(long)]
        results: PathBuf,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> CmdResult {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::Config(anyhow::anyhow!("--threads must be positive")));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Config(e.into()))?;
    }
    let out_path = match &cli.command {
        Command::Synth { .. } => None,
        Command::Extract { out, .. }
        | Command::BuildDataset { out, .. }
        | Command::Train { out, .. }
        | Command::Localize { out, .. }
        | Command::Evaluate { out, .. } => Some(out.as_path()),
    };
    if let Some(out) = out_path {
        commands::check_output_parent(out)?;
    }
    let load = |p: &Option<PathBuf>| commands::load_config(p.as_deref());
    match cli.command {
        Command::Synth { spec, out } => commands::synth(&spec, &out),
        Command::Extract {
            modality,
            input,
            out,
            config,
        } => {
            let cfg = load(&config)?;
            match modality {
                Modality::TwoD => commands::extract_2d(&input, &out, &cfg),
                Modality::ThreeD => commands::extract_3d(&input, &out, &cfg),
            }
        }
        Command::BuildDataset {
            bundle,
            config,
            cloud_features,
            seed,
            out,
        } => {
            let mut cfg = load(&config)?;
            if let Some(s) = seed {
                cfg.dataset.seed = s;
            }
            commands::build_dataset(&bundle, cloud_features.as_deref(), &out, &cfg)
        }
        Command::Train {
            dataset,
            config,
            seed,
            out,
        } => {
            let mut cfg = load(&config)?;
            if let Some(s) = seed {
                cfg.train_seed = s;
            }
            commands::train(&dataset, &out, &cfg)
        }
        Command::Localize {
            model,
            cloud_features,
            image,
            intrinsics,
            config,
            seed,
            out,
        } => {
            let mut cfg = load(&config)?;
            if let Some(s) = seed {
                cfg.localize.mlesac.seed = s;
            }
            commands::localize_image(&model, &cloud_features, &image, &intrinsics, &out, &cfg)
        }
        Command::Evaluate { results, format, out } => {
            let format = match format {
                Format::Text => TableFormat::Text,
                Format::Csv => TableFormat::Csv,
                Format::Json => TableFormat::Json,
            };
            commands::evaluate(&results, &out, format)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error());
            ExitCode::from(f.exit_code() as u8)
        }
    }
}
