//! `cdc`: compress, decompress, train, evaluate, and run the perceptual study.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cdc_core::codec::{compress_image, decode_file, decompress_naive, encode_file, BitsDropped};
use cdc_core::metrics::evaluate;
use cdc_core::raster::RawImage;
use cdc_core::study::{serve_blocking, StudyConfig};
use cdc_core::training::{infer, resume, train, Checkpoint, TrainConfig};
use cdc_core::{Error, Result};

#[derive(Parser)]
#[command(name = "cdc", version, about = "Colour-density image compression with a learned decompressor")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Drop low-order bits from every channel and write a .cdc container.
    Compress {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_parser = clap::value_parser!(u32).range(0..=7))]
        bits: u32,
    },
    /// Reconstruct a raster from a .cdc container, by midpoint or with a trained model.
    Decompress {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Train the decompressor on a directory of images.
    Train(TrainArgs),
    /// Compare learned and midpoint reconstructions on a directory of images.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_parser = clap::value_parser!(u32).range(0..=7))]
        bits: u32,
        /// Also write the per-image rows as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Serve the original-versus-reconstructed perceptual study.
    ServeStudy {
        #[arg(long)]
        originals: PathBuf,
        #[arg(long)]
        reconstructed: PathBuf,
        #[arg(long, default_value = "study-trials.jsonl")]
        log: PathBuf,
        #[arg(long, default_value = "127.0.0.1")]
        host: std::net::IpAddr,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory of a built study UI.
        #[arg(long)]
        ui: Option<PathBuf>,
    },
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "run")]
    out: PathBuf,
    #[arg(long, default_value_t = 200)]
    steps: u64,
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u32).range(0..=7))]
    bits: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    batch_size: usize,
    #[arg(long, default_value_t = 64)]
    crop_size: usize,
    #[arg(long, default_value_t = 2e-4)]
    lr: f64,
    #[arg(long, default_value_t = 100.0)]
    lambda: f64,
    #[arg(long, default_value_t = 100)]
    checkpoint_every: u64,
    /// Generator levels per down/up stack.
    #[arg(long, default_value_t = 3)]
    levels: usize,
    #[arg(long, default_value_t = 16)]
    base_channels: usize,
    /// Stride-2 blocks in the discriminator.
    #[arg(long, default_value_t = 3)]
    disc_downsample: usize,
    /// Continue from a checkpoint instead of starting fresh; model flags are taken from it.
    #[arg(long)]
    resume: Option<PathBuf>,
}

fn factor_text(b: BitsDropped) -> String {
    let f = b.compression_factor();
    format!("{:.3} ({}/{})", *f.numer() as f64 / *f.denom() as f64, f.numer(), f.denom())
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Compress { input, out, bits } => {
            let b = BitsDropped::new(bits)?;
            let img = RawImage::load(&input)?;
            let packed = compress_image(&img, b);
            let bytes = encode_file(&packed);
            std::fs::write(&out, &bytes).map_err(Error::file(&out))?;
            let raw = 3 * img.width() as u64 * img.height() as u64;
            println!("nominal factor {}", factor_text(b));
            println!(
                "achieved ratio {:.3} ({raw} raw bytes -> {} bytes including the {}-byte header)",
                raw as f64 / bytes.len() as f64,
                bytes.len(),
                cdc_core::codec::HEADER_LEN
            );
        }
        Command::Decompress { input, out, model } => {
            let bytes = std::fs::read(&input).map_err(Error::file(&input))?;
            let packed = decode_file(&bytes)?;
            let img = match model {
                Some(m) => {
                    let start = std::time::Instant::now();
                    let img = infer(&Checkpoint::load(&m)?, &packed)?;
                    eprintln!("learned reconstruction in {:.3} s", start.elapsed().as_secs_f64());
                    img
                }
                None => decompress_naive(&packed),
            };
            img.save(&out)?;
            println!("wrote {}x{} image to {}", img.width(), img.height(), out.display());
        }
        Command::Train(a) => {
            let outcome = match a.resume {
                Some(ck) => resume(&ck, &a.data, &a.out, Some(a.steps))?,
                None => {
                    let mut cfg = TrainConfig {
                        lambda: a.lambda,
                        learning_rate: a.lr,
                        batch_size: a.batch_size,
                        steps: a.steps,
                        bits_dropped: a.bits,
                        checkpoint_every: a.checkpoint_every,
                        ..TrainConfig::default()
                    }
                    .with_crop_and_seed(a.crop_size, a.seed);
                    cfg.generator.levels_per_stack = a.levels;
                    cfg.generator.base_channels = a.base_channels;
                    cfg.discriminator.base_channels = a.base_channels;
                    cfg.discriminator.num_downsample = a.disc_downsample;
                    train(cfg, &a.data, &a.out)?
                }
            };
            if let Some(last) = outcome.history.last() {
                println!("step {} loss_d {} loss_g {} l1 {}", last.step, last.loss_d, last.loss_g, last.l1);
            }
            println!("checkpoint {}", outcome.checkpoint.display());
            println!("metrics {}", outcome.metrics_log.display());
        }
        Command::Eval { model, data, bits, csv } => {
            let report = evaluate(&model, &data, BitsDropped::new(bits)?)?;
            print!("{}", report.to_table());
            if let Some(path) = csv {
                std::fs::write(&path, report.to_csv()).map_err(Error::file(&path))?;
            }
        }
        Command::ServeStudy { originals, reconstructed, log, host, port, seed, ui } => {
            let cfg = StudyConfig { originals, reconstructed, log_path: log, seed, ui_dir: ui };
            serve_blocking(&cfg, SocketAddr::new(host, port), |addr| {
                println!("listening on http://{addr}");
                println!("port {}", addr.port());
            })?;
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidParameter(_)
        | Error::NotACdcFile(_)
        | Error::UnsupportedVersion(_)
        | Error::CorruptPayload { .. }
        | Error::Config(_) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CDC_LOG", "info")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
