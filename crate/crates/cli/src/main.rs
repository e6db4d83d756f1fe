use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Parser, Subcommand};

use voxmill::commands::{self, CliError};
use voxmill::config::{parse_triple_f64, ConfigFile, GlobalConfig};

/// Blockwise prediction toolkit for tera-voxel 3D microscopy volumes.
///
/// All machine-readable output is one line of JSON on stdout; logs go to
/// stderr. Dataset arguments are directories containing `attributes.json`.
#[derive(Parser)]
#[command(name = "voxmill", version, max_term_width = 100)]
struct Cli {
    /// Seed for randomized subcommands; equal seeds reproduce bit-identical results.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Physical voxel size as Z,Y,X nanometers (default 40,4,4).
    #[arg(long, global = true, value_name = "Z,Y,X")]
    voxel_size: Option<String>,

    /// Worker threads (default: $VOXMILL_WORKERS, then the CPU count).
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// JSON file with defaults for --seed, --voxel-size, and --workers.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Log verbosity on stderr (-v info, -vv debug, -vvv trace).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a predictor blockwise over a dataset, masked and in parallel.
    Predict {
        /// Input dataset directory.
        #[arg(long)]
        input: PathBuf,
        /// Output dataset directory (created if missing).
        #[arg(long)]
        output: PathBuf,
        /// identity | box:RZ,RY,RX | gauss:RZ,RY,RX@SZ,SY,SX | stdt-oracle:<labels>[@SCALE]
        #[arg(long, default_value = "identity")]
        predictor: String,
        /// Architecture preset name (dtu1-like, dtu2-like) or spec JSON path;
        /// pads input blocks by the network context and validates the block size.
        #[arg(long)]
        arch: Option<String>,
        /// Output block shape ZxYxX.
        #[arg(long)]
        blocks: String,
        /// Low-resolution mask gating blocks: <dataset>:<fz,fy,fx>.
        #[arg(long)]
        mask: Option<String>,
        /// Static multi-machine split: run slice I of N of the plan list.
        #[arg(long, value_name = "I/N")]
        partition: Option<String>,
        /// Journal file of completed block ids; reruns skip finished blocks.
        #[arg(long, value_name = "JOURNAL")]
        resume: Option<PathBuf>,
        /// Fill value for inputs beyond the dataset bounds.
        #[arg(long, default_value_t = 0.0)]
        fill: f64,
        /// Output dataset chunk shape ZxYxX (default: the block shape).
        #[arg(long)]
        out_chunks: Option<String>,
        /// Stop after this many blocks (staged runs).
        #[arg(long)]
        limit: Option<usize>,
        /// Blocks buffered ahead per worker.
        #[arg(long, default_value_t = 2)]
        prefetch: usize,
    },
    /// Score predicted labels against ground truth.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// Optional mask dataset; positives under it are excluded on both sides.
        #[arg(long)]
        ignore: Option<PathBuf>,
        /// Reserved truth label treated as unannotated.
        #[arg(long)]
        ignore_label: Option<u64>,
    },
    /// Signed Euclidean distance transform of binary labels (nm).
    Sedt {
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        ignore_label: Option<u64>,
        #[arg(long, default_value = "gzip")]
        compression: String,
    },
    /// Squash a distance dataset with tanh(d / scale).
    Stdt {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Saturation scale in nanometers.
        #[arg(long, default_value_t = 50.0)]
        scale: f64,
        #[arg(long, default_value = "gzip")]
        compression: String,
    },
    /// Binarize a prediction: positive where value > t.
    Threshold {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        t: f64,
        #[arg(long, default_value = "gzip")]
        compression: String,
    },
    /// Draw augmented training batches and emit them as datasets.
    Sample {
        #[arg(long)]
        raw: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        /// Optional auxiliary labels (e.g. boundaries), sampled alongside.
        #[arg(long)]
        aux: Option<PathBuf>,
        /// Labels (output) shape ZxYxX.
        #[arg(long)]
        shape: String,
        /// Raw context margin per side Z,Y,X.
        #[arg(long, default_value = "0,0,0")]
        context: String,
        #[arg(long, default_value_t = 1)]
        count: usize,
        /// Directory receiving batch_NNNNN/{raw,labels,weights[,aux_labels]}.
        #[arg(long)]
        output: PathBuf,
        /// Augmentation config JSON (defaults are built in).
        #[arg(long)]
        augment: Option<PathBuf>,
        /// Probability of rejecting a synapse-free draw.
        #[arg(long, default_value_t = 0.95)]
        rejection: f64,
        #[arg(long, default_value_t = 1000)]
        max_draws: u32,
    },
    /// Build mean-pooled scale-pyramid levels s1..sN next to the input.
    Pyramid {
        #[arg(long)]
        input: PathBuf,
        /// Whitespace-separated per-level factors, e.g. "1,2,2 2,2,2 13,32,32".
        #[arg(long)]
        levels: String,
        /// Directory receiving the level datasets (default: the input's parent).
        #[arg(long)]
        output_root: Option<PathBuf>,
        /// mean (float32 intensity pyramid) or majority (uint8 label pyramid).
        #[arg(long, default_value = "mean")]
        reducer: String,
        #[arg(long, default_value = "gzip")]
        compression: String,
        #[arg(long, default_value = "64x64x64")]
        out_chunks: String,
        #[arg(long, default_value_t = 2)]
        prefetch: usize,
    },
    /// Threshold a pyramid level into a binary foreground mask.
    Mask {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Inclusive intensity range lo:hi marking foreground.
        #[arg(long)]
        range: String,
        #[arg(long, default_value = "gzip")]
        compression: String,
    },
    /// Tile a region into output blocks and report the plan as JSON.
    Plan {
        /// Take the total region from a dataset's bounds.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Total region shape ZxYxX (alternative to --input).
        #[arg(long)]
        total: Option<String>,
        /// Total region offset Z,Y,X (with --total).
        #[arg(long)]
        offset: Option<String>,
        #[arg(long)]
        blocks: String,
        /// Context per side Z,Y,X.
        #[arg(long)]
        context: Option<String>,
        /// Derive the context (and a FOV report) from an architecture.
        #[arg(long)]
        arch: Option<String>,
        #[arg(long)]
        mask: Option<String>,
    },
    /// Pipeline throughput model: fixed-delay predictor with artificial I/O.
    Bench {
        #[arg(long, default_value_t = 100)]
        blocks_count: u64,
        #[arg(long, default_value = "32x32x32")]
        block_shape: String,
        /// Prediction time per block, milliseconds.
        #[arg(long, default_value_t = 10.0)]
        delay_ms: f64,
        /// Artificial read and write delay per block, milliseconds.
        #[arg(long, default_value_t = 2.0)]
        io_ms: f64,
        #[arg(long, default_value_t = 2)]
        prefetch: usize,
        /// Voxel count for the ETA extrapolation.
        #[arg(long, default_value_t = 50e12)]
        eta_voxels: f64,
        /// Per-worker rate for the ETA extrapolation (voxels/s).
        #[arg(long, default_value_t = 3e6)]
        eta_rate: f64,
    },
    /// Gaussian-PSF density map of a prediction, mean-pooled to a coarser grid.
    Density {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Per-axis PSF sigma Z,Y,X in nanometers.
        #[arg(long)]
        sigma: String,
        /// Target output voxel size Z,Y,X in nanometers.
        #[arg(long)]
        out_voxel: String,
        #[arg(long, default_value = "gzip")]
        compression: String,
    },
}

fn run(cli: Cli) -> Result<serde_json::Value, CliError> {
    let file = match &cli.config {
        Some(path) => ConfigFile::load(path).map_err(|e| CliError::new("config", e))?,
        None => ConfigFile::default(),
    };
    let voxel_size = cli
        .voxel_size
        .as_deref()
        .map(parse_triple_f64)
        .transpose()
        .map_err(|e| CliError::new("usage", e))?;
    let global = GlobalConfig::resolve(cli.seed, voxel_size, cli.workers, &file, cli.verbose)
        .map_err(|e| CliError::new("config", e))?;

    match &cli.command {
        Command::Predict {
            input,
            output,
            predictor,
            arch,
            blocks,
            mask,
            partition,
            resume,
            fill,
            out_chunks,
            limit,
            prefetch,
        } => commands::predict(
            input,
            output,
            predictor,
            arch.as_deref(),
            blocks,
            mask.as_deref(),
            partition.as_deref(),
            resume.as_deref(),
            *fill,
            out_chunks.as_deref(),
            *limit,
            *prefetch,
            &global,
        ),
        Command::Evaluate {
            pred,
            truth,
            ignore,
            ignore_label,
        } => commands::evaluate(pred, truth, ignore.as_deref(), *ignore_label, &global),
        Command::Sedt {
            labels,
            output,
            ignore_label,
            compression,
        } => commands::sedt_cmd(labels, output, *ignore_label, compression, &global),
        Command::Stdt {
            input,
            output,
            scale,
            compression,
        } => commands::stdt_cmd(input, output, *scale, compression, &global),
        Command::Threshold {
            input,
            output,
            t,
            compression,
        } => commands::threshold_cmd(input, output, *t, compression, &global),
        Command::Sample {
            raw,
            labels,
            aux,
            shape,
            context,
            count,
            output,
            augment,
            rejection,
            max_draws,
        } => commands::sample_cmd(
            raw,
            labels,
            aux.as_deref(),
            shape,
            context,
            *count,
            output,
            augment.as_deref(),
            *rejection,
            *max_draws,
            &global,
        ),
        Command::Pyramid {
            input,
            levels,
            output_root,
            reducer,
            compression,
            out_chunks,
            prefetch,
        } => commands::pyramid_cmd(
            input,
            levels,
            output_root.as_deref(),
            reducer,
            compression,
            out_chunks,
            *prefetch,
            &global,
        ),
        Command::Mask {
            input,
            output,
            range,
            compression,
        } => commands::mask_cmd(input, output, range, compression, &global),
        Command::Plan {
            input,
            total,
            offset,
            blocks,
            context,
            arch,
            mask,
        } => commands::plan_cmd(
            input.as_deref(),
            total.as_deref(),
            offset.as_deref(),
            blocks,
            context.as_deref(),
            arch.as_deref(),
            mask.as_deref(),
            &global,
        ),
        Command::Bench {
            blocks_count,
            block_shape,
            delay_ms,
            io_ms,
            prefetch,
            eta_voxels,
            eta_rate,
        } => commands::bench_cmd(
            *blocks_count,
            block_shape,
            *delay_ms,
            *io_ms,
            *prefetch,
            *eta_voxels,
            *eta_rate,
            &global,
        ),
        Command::Density {
            input,
            output,
            sigma,
            out_voxel,
            compression,
        } => commands::density_cmd(input, output, sigma, out_voxel, compression, &global),
    }
}

fn init_logging(verbosity: u8) {
    let level = match verbosity {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        2 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    env_logger::Builder::from_env(env_logger::Env::default())
        .filter_level(level)
        .target(env_logger::Target::Stderr)
        .init();
}

/// Prints the result line without panicking when the consumer closes the
/// pipe early (e.g. `voxmill plan ... | head`).
fn emit(value: &serde_json::Value) {
    use std::io::Write;
    let _ = writeln!(std::io::stdout(), "{value}");
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            // Flag errors still yield machine-readable stdout.
            let err = CliError::new("usage", e.to_string());
            emit(&err.to_json());
            return ExitCode::FAILURE;
        }
        Err(e) => {
            // --help and --version print their conventional human output.
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    init_logging(cli.verbose);
    match run(cli) {
        Ok(value) => {
            emit(&value);
            ExitCode::SUCCESS
        }
        Err(e) => {
            log::error!("{e}");
            emit(&e.to_json());
            ExitCode::FAILURE
        }
    }
}
