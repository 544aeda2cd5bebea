mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use cropsight::bands::CompositeKind;

use crate::config::{Overrides, PipelineConfig};

#[derive(Debug, Parser)]
#[command(
    name = "cropsight",
    version,
    about = "Crop-loss mapping from before/after satellite rasters"
)]
struct Cli {
    /// Pipeline config file (TOML)
    #[arg(long, global = true, env = "CROPSIGHT_CONFIG", value_name = "TOML")]
    config: Option<PathBuf>,

    /// Print a machine-readable JSON summary instead of text
    #[arg(long, global = true)]
    json: bool,

    /// Worker threads [default: available cores]
    #[arg(long, global = true, value_name = "N", value_parser = clap::value_parser!(u16).range(1..))]
    threads: Option<u16>,

    #[command(flatten)]
    overrides: Overrides,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// NDVI of a multiband reflectance raster
    Ndvi { input: PathBuf, output: PathBuf },
    /// 8-bit RGB or false-colour-infrared composite
    Compose {
        #[arg(long, value_parser = clap::value_parser!(CompositeKind))]
        kind: CompositeKind,
        input: PathBuf,
        output: PathBuf,
    },
    /// Per-band before minus after
    Diff {
        before: PathBuf,
        after: PathBuf,
        output: PathBuf,
    },
    /// Threshold an NDVI difference into a class-index mask
    Groundtruth {
        diff: PathBuf,
        output: PathBuf,
        /// Write class colours instead of indices
        #[arg(long)]
        render: bool,
    },
    /// Paint a class-index mask with the class colours
    Render { mask: PathBuf, output: PathBuf },
    /// Cut a raster into zero-padded square tiles
    Tile {
        input: PathBuf,
        outdir: PathBuf,
        /// File name stem for tiles [default: input file stem]
        #[arg(long)]
        stem: Option<String>,
    },
    /// Reassemble a tile directory into one raster
    Merge {
        indir: PathBuf,
        output: PathBuf,
        /// Crop the padding away using this raster's extent
        #[arg(long, value_name = "RASTER")]
        like: Option<PathBuf>,
    },
    /// Pair input and mask tiles and assign district roles
    Manifest {
        /// Manifest config (TOML with `inputs`, `masks` and a `[districts]` table)
        #[arg(value_name = "CONFIG")]
        layout: PathBuf,
        output: PathBuf,
    },
    /// Score predicted masks against ground truth
    ///
    /// Either `evaluate MANIFEST REPORT --predictions DIR` or
    /// `evaluate GT PRED REPORT`.
    Evaluate {
        #[arg(num_args = 2..=3, required = true, value_name = "INPUTS")]
        paths: Vec<PathBuf>,
        /// Prediction tile root, laid out as `{district}/{year}/{input tile name}`
        #[arg(long, value_name = "DIR")]
        predictions: Option<PathBuf>,
        #[arg(long, default_value = "overall", value_parser = ["overall", "year"])]
        group_by: String,
        /// Label written to the report's input_type column
        #[arg(long, default_value = "rgb")]
        input_type: String,
        /// Manifest role to evaluate, or `all`
        #[arg(long, default_value = "test", value_parser = ["train", "validation", "test", "all"])]
        role: String,
    },
    /// Generate synthetic before/after scenes with a known mask
    Synth { scenespec: PathBuf, outdir: PathBuf },
}

enum Failure {
    Usage(String),
    Data(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Data(e)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();

    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("cropsight: usage: {}", one_line(&msg));
            ExitCode::from(1)
        }
        Err(Failure::Data(e)) => {
            eprintln!("cropsight: {}", one_line(&format!("{e:#}")));
            ExitCode::from(2)
        }
    }
}

fn one_line(msg: &str) -> String {
    msg.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.into())
            .build_global()
            .map_err(|e| Failure::Usage(e.to_string()))?;
    }
    let cfg = PipelineConfig::resolve(cli.config.as_deref(), &cli.overrides)
        .map_err(|e| Failure::Usage(format!("{e:#}")))?;
    let summary = commands::dispatch(cli.command, &cfg)?;
    if cli.json {
        println!("{}", summary.json);
    } else if !summary.text.is_empty() {
        print!("{}", summary.text);
    }
    Ok(())
}
