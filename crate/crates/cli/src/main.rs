//! `lean3d` command-line tool.
//!
//! Exit codes: 0 success, 1 usage, 2 I/O or format, 3 decode integrity,
//! 4 lossless check failed. Failures also print one JSON line on stderr.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::Failure;

#[derive(Parser, Debug)]
#[command(name = "lean3d", version, about = "Hierarchical point-cloud geometry codec")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct CodecArgs {
    /// Quantization step applied to raw coordinates.
    #[arg(long = "posq", default_value_t = 1)]
    pub pos_q: u32,
    /// Fixed split depth instead of the unary-fraction rule.
    #[arg(long)]
    pub split: Option<usize>,
    /// Fixed pyramid depth instead of the smallest that fits.
    #[arg(long)]
    pub depth: Option<usize>,
    /// Unary fraction that marks the first deep level.
    #[arg(long, default_value_t = 0.6)]
    pub threshold: f64,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a context table model on a directory of point files.
    Fit {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long = "posq", default_value_t = 1)]
        pos_q: u32,
        #[arg(long)]
        depth: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Encode one point file (.bin or .ply) into a frame packet.
    Encode {
        #[arg(long = "in")]
        input: PathBuf,
        /// Model file; the uniform table when omitted.
        #[arg(long)]
        model: Option<PathBuf>,
        #[command(flatten)]
        codec: CodecArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decode a frame packet to a point file (format by extension).
    Decode {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Place points at voxel centers instead of corners.
        #[arg(long)]
        center: bool,
    },
    /// Encode and decode every frame in a directory and check losslessness.
    Roundtrip {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        model: Option<PathBuf>,
        #[command(flatten)]
        codec: CodecArgs,
    },
    /// Dump the header and stream sizes of a frame packet.
    Stats {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Per-level unary fractions and the chosen split depth.
    SplitDepth {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long = "posq", default_value_t = 1)]
        pos_q: u32,
        #[arg(long)]
        depth: Option<usize>,
        #[arg(long, default_value_t = 0.6)]
        threshold: f64,
    },
    /// Replay a trace through the encoder, link and decoder queues.
    Simulate {
        /// Trace CSV with columns t_enc_ms, bytes, t_dec_ms.
        #[arg(long, conflicts_with = "frames", required_unless_present = "frames")]
        trace: Option<PathBuf>,
        /// Capture a trace by coding every frame in this directory.
        #[arg(long)]
        frames: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[command(flatten)]
        codec: CodecArgs,
        /// Link bandwidth in megabytes (10^6 bytes) per second.
        #[arg(long = "bandwidth-mbps", required_unless_present = "grid")]
        bandwidth_mbps: Option<f64>,
        /// Comma-separated bandwidths, one summary row each.
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<f64>>,
        /// Frame inter-arrival time; 0 keeps the encoder always busy.
        #[arg(long = "period-ms", default_value_t = 0.0)]
        period_ms: f64,
        /// Summary CSV, one row per bandwidth.
        #[arg(long)]
        out: PathBuf,
        /// Per-frame stage times for the first bandwidth.
        #[arg(long = "frames-out")]
        frames_out: Option<PathBuf>,
        /// Also save the trace used (handy with --frames).
        #[arg(long = "trace-out")]
        trace_out: Option<PathBuf>,
    },
    /// Write entropy conformance vectors.
    Vectors {
        #[arg(long)]
        out: PathBuf,
        /// Random CDF vectors on top of the fixed edge cases.
        #[arg(long, default_value_t = 200)]
        random: usize,
        #[arg(long = "rans", default_value_t = 50)]
        rans: usize,
    },
    /// Per-stage timing breakdown over a directory of frames.
    Bench {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        model: Option<PathBuf>,
        #[command(flatten)]
        codec: CodecArgs,
        #[arg(long, default_value_t = 1)]
        repeat: usize,
    },
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Fit {
            input,
            pos_q,
            depth,
            out,
        } => commands::fit(&input, pos_q, depth, &out),
        Command::Encode {
            input,
            model,
            codec,
            out,
        } => commands::encode(&input, model.as_deref(), &codec, &out),
        Command::Decode {
            input,
            model,
            out,
            center,
        } => commands::decode(&input, model.as_deref(), &out, center),
        Command::Roundtrip {
            input,
            model,
            codec,
        } => commands::roundtrip(&input, model.as_deref(), &codec),
        Command::Stats { input } => commands::stats(&input),
        Command::SplitDepth {
            input,
            pos_q,
            depth,
            threshold,
        } => commands::split_depth(&input, pos_q, depth, threshold),
        Command::Simulate {
            trace,
            frames,
            model,
            codec,
            bandwidth_mbps,
            grid,
            period_ms,
            out,
            frames_out,
            trace_out,
        } => {
            let source = match (trace, frames) {
                (Some(t), _) => commands::TraceSource::Csv(t),
                (None, Some(dir)) => commands::TraceSource::Capture {
                    dir,
                    model,
                    codec,
                },
                (None, None) => unreachable!("clap requires one source"),
            };
            let mut bandwidths: Vec<f64> = bandwidth_mbps.into_iter().collect();
            bandwidths.extend(grid.unwrap_or_default());
            commands::simulate(
                source,
                &bandwidths,
                period_ms,
                &out,
                frames_out.as_deref(),
                trace_out.as_deref(),
            )
        }
        Command::Vectors { out, random, rans } => commands::vectors(&out, random, rans),
        Command::Bench {
            input,
            model,
            codec,
            repeat,
        } => commands::bench(&input, model.as_deref(), &codec, repeat),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            if code != 0 {
                commands::report(&Failure::usage(e.kind().to_string()));
            }
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            commands::report(&f);
            ExitCode::from(f.code)
        }
    }
}
