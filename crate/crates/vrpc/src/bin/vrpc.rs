//! Command-line front end: train a codec, compress and decompress clouds,
//! and emit rate-distortion tables as CSV.
//!
//! On failure, prints a single machine-parsable line to stderr
//! (`error: code=<N> <message>`) and exits with a per-error-class code.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use vrpc::codec::{compress_cloud, decompress_cloud, keep_for_bpp};
use vrpc::coder::Bitstream;
use vrpc::network::Model;
use vrpc::pointset::{load_auto, save, synth_dataset, FileFormat, PointCloud, SynthSpec};
use vrpc::trainer::{evaluate, evaluate_octree, eval_rows_to_csv, train, TrainConfig};
use vrpc::{Error, Result};

#[derive(Parser)]
#[command(name = "vrpc", about = "Variable-rate learned point cloud codec")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a codec on a directory of clouds or a synthetic dataset spec.
    Train {
        /// Config file (key = value lines); omit for defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Data source: a directory of .xyz/.ply files, or a synthetic
        /// spec like "shape:sphere,n:256,seed:1,count:32".
        #[arg(long)]
        data: String,
        /// Checkpoint output path.
        #[arg(long)]
        out: PathBuf,
        /// Optional training-log CSV path.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Compress one cloud to a bitstream.
    Compress {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in", value_name = "FILE")]
        input: PathBuf,
        /// Kept latent length: an element count like "32", or a bitrate
        /// target like "0.3bpp" resolved by binary search.
        #[arg(long)]
        keep: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decompress a bitstream back to a cloud.
    Decompress {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in", value_name = "FILE")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rate-distortion table over truncations, optionally with an octree
    /// baseline curve, written as CSV.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: String,
        /// Comma-separated kept lengths, e.g. "8,16,32,64".
        #[arg(long)]
        truncations: String,
        /// Comma-separated octree depths, e.g. "4,5,6,7,8,9".
        #[arg(long)]
        baseline_octree: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_dataset(data: &str) -> Result<Vec<PointCloud>> {
    if data.contains("shape:") {
        return synth_dataset(&SynthSpec::parse(data)?);
    }
    let dir = Path::new(data);
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()),
                Some("xyz" | "ply" | "txt")
            )
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no .xyz/.ply/.txt clouds found in {}",
            dir.display()
        )));
    }
    paths.iter().map(|p| load_auto(p)).collect()
}

fn save_cloud(path: &Path, pc: &PointCloud) -> Result<()> {
    let format = match path.extension().and_then(|e| e.to_str()) {
        Some("ply") => FileFormat::PlyAscii,
        _ => FileFormat::XyzText,
    };
    save(path, pc, format)
}

fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad {what} entry {s:?}")))
        })
        .collect()
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, data, out, log } => {
            let cfg = match config {
                Some(path) => TrainConfig::load(&path)?,
                None => TrainConfig::default(),
            };
            let dataset = load_dataset(&data)?;
            let (_, train_log) = train(&dataset, &cfg, Some(&out))?;
            if let Some(log_path) = log {
                train_log.save(&log_path)?;
            }
            println!(
                "trained on {} clouds, {} steps, checkpoint {}",
                dataset.len(),
                train_log.rows.len(),
                out.display()
            );
        }
        Command::Compress { model, input, keep, out } => {
            let model = Model::load(&model)?;
            let pc = load_auto(&input)?;
            let k = if let Some(bpp_text) = keep.strip_suffix("bpp") {
                let target: f64 = bpp_text.trim().parse().map_err(|_| {
                    Error::InvalidArgument(format!("bad bpp target {keep:?}"))
                })?;
                keep_for_bpp(&model, &pc, target)?
            } else {
                keep.parse().map_err(|_| {
                    Error::InvalidArgument(format!(
                        "--keep expects an element count or \"<x>bpp\", got {keep:?}"
                    ))
                })?
            };
            let bs = compress_cloud(&model, &pc, k)?;
            let bytes = bs.to_bytes();
            std::fs::write(&out, &bytes).map_err(|e| Error::io(&out, e))?;
            println!(
                "compressed {} points, kept {}, {} bytes ({:.4} bpp)",
                pc.len(),
                k,
                bytes.len(),
                bs.payload.len() as f64 * 8.0 / pc.len() as f64
            );
        }
        Command::Decompress { model, input, out } => {
            let model = Model::load(&model)?;
            let bytes = std::fs::read(&input).map_err(|e| Error::io(&input, e))?;
            let bs = Bitstream::from_bytes(&bytes)?;
            let pc = decompress_cloud(&model, &bs)?;
            save_cloud(&out, &pc)?;
            println!("decompressed {} points to {}", pc.len(), out.display());
        }
        Command::Eval { model, data, truncations, baseline_octree, out } => {
            let model = Model::load(&model)?;
            let dataset = load_dataset(&data)?;
            let ks: Vec<usize> = parse_list(&truncations, "truncation")?;
            let mut rows = evaluate(&model, &dataset, &ks)?;
            if let Some(depths_text) = baseline_octree {
                let depths: Vec<u8> = parse_list(&depths_text, "octree depth")?;
                rows.extend(evaluate_octree(&dataset, &depths)?);
            }
            std::fs::write(&out, eval_rows_to_csv(&rows)).map_err(|e| Error::io(&out, e))?;
            println!("wrote {} rows to {}", rows.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: code={} {e}", e.exit_code());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
