//! `quantstream` CLI: quantization, quantized GEMM, KV-cache benchmarking,
//! sequence-parallel checks, mask dumps, and pipeline simulation.
//!
//! Every command emits one JSON report object: to stdout by default, to a
//! file with `--report`. Logs go to stderr. Exit codes: 0 success,
//! 1 domain error, 2 usage error. Commands that generate random data
//! require an explicit `--seed` and are byte-deterministic given it
//! (except the wall-clock `timing` section of `kv-bench`).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

mod commands;
mod report;

use report::RunReport;

#[derive(Parser)]
#[command(name = "quantstream", version, about = "Block-scaled FP4 quantization and streaming-inference math", max_term_width = 100)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CliQuantMode {
    Standard,
    ScaleSearch,
}

impl From<CliQuantMode> for quantstream_core::QuantMode {
    fn from(m: CliQuantMode) -> Self {
        match m {
            CliQuantMode::Standard => quantstream_core::QuantMode::Standard,
            CliQuantMode::ScaleSearch => quantstream_core::QuantMode::ScaleSearch,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BLayout {
    /// B is K×N and is transposed internally before quantization.
    Kn,
    /// B is already N×K (blocked along the contraction axis).
    Nk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CliPipelineMode {
    Centralized,
    StreamingAsync,
}

#[derive(Subcommand)]
enum Command {
    /// Quantize a float tensor file to packed FP4.
    Quantize {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "scale-search")]
        mode: CliQuantMode,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Dequantize a packed FP4 tensor file to float32.
    Dequantize {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Quantized matrix multiply of two tensor files (A: M×K, B per --b-layout).
    Qgemm {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Quantization recipe for A (weight-like operand).
        #[arg(long, value_enum, default_value = "scale-search")]
        a_mode: CliQuantMode,
        /// Quantization recipe for B (activation-like operand).
        #[arg(long, value_enum, default_value = "standard")]
        b_mode: CliQuantMode,
        #[arg(long, value_enum, default_value = "kn")]
        b_layout: BLayout,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Benchmark the quantized KV cache on seeded synthetic chunks.
    KvBench {
        #[arg(long, default_value_t = 16)]
        chunks: usize,
        #[arg(long, default_value_t = 64)]
        tc: usize,
        #[arg(long, default_value_t = 8)]
        heads: usize,
        #[arg(long, default_value_t = 64)]
        dim: usize,
        #[arg(long, default_value_t = 4)]
        window: usize,
        /// Global attention sink length in frames (8 frames per chunk).
        #[arg(long, default_value_t = 8)]
        global_sink: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Verify sequence-parallel layout, masks, All-to-All, and halo encoding.
    SpCheck {
        #[arg(long = "P")]
        ranks: usize,
        #[arg(long = "L")]
        tokens: usize,
        #[arg(long = "H", default_value_t = 8)]
        heads: usize,
        #[arg(long = "d", default_value_t = 16)]
        head_dim: usize,
        #[arg(long)]
        chunks: usize,
        #[arg(long, default_value_t = 1)]
        halo: usize,
        #[arg(long, default_value_t = 2)]
        receptive_field: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Dump the natural and logical teacher-forcing masks as PBM bitmaps.
    MaskDump {
        #[arg(long = "P")]
        ranks: usize,
        #[arg(long = "L")]
        tokens: usize,
        #[arg(long)]
        chunks: usize,
        #[arg(long, default_value = "natural_mask.pbm")]
        natural_out: PathBuf,
        #[arg(long, default_value = "logical_mask.pbm")]
        logical_out: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Simulate the streaming-decode pipeline.
    PipelineSim {
        #[arg(long)]
        chunks: usize,
        #[arg(long)]
        t_dit: f64,
        #[arg(long)]
        t_vae: f64,
        #[arg(long, value_enum, default_value = "streaming-async")]
        mode: CliPipelineMode,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Fit per-chunk latencies from measured end-to-end pairs.
    PipelineCalibrate {
        #[arg(long)]
        sync: f64,
        #[arg(long = "async")]
        r#async: f64,
        #[arg(long)]
        chunks: usize,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Per-layer Q/K/V All-to-All payload accounting.
    CommReport {
        #[arg(long = "L")]
        tokens: usize,
        #[arg(long = "H")]
        heads: usize,
        #[arg(long = "d")]
        head_dim: usize,
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Quantize {
            input,
            mode,
            out,
            report,
        } => commands::quantize(&input, mode, &out).and_then(|r| emit("quantize", r, report)),
        Command::Dequantize { input, out, report } => {
            commands::dequantize(&input, &out).and_then(|r| emit("dequantize", r, report))
        }
        Command::Qgemm {
            a,
            b,
            out,
            a_mode,
            b_mode,
            b_layout,
            report,
        } => commands::qgemm(&a, &b, &out, a_mode, b_mode, b_layout)
            .and_then(|r| emit("qgemm", r, report)),
        Command::KvBench {
            chunks,
            tc,
            heads,
            dim,
            window,
            global_sink,
            seed,
            report,
        } => commands::kv_bench(chunks, tc, heads, dim, window, global_sink, seed)
            .and_then(|r| emit("kv-bench", r, report)),
        Command::SpCheck {
            ranks,
            tokens,
            heads,
            head_dim,
            chunks,
            halo,
            receptive_field,
            seed,
            report,
        } => commands::sp_check(ranks, tokens, heads, head_dim, chunks, halo, receptive_field, seed)
            .and_then(|r| emit("sp-check", r, report)),
        Command::MaskDump {
            ranks,
            tokens,
            chunks,
            natural_out,
            logical_out,
            report,
        } => commands::mask_dump(ranks, tokens, chunks, &natural_out, &logical_out)
            .and_then(|r| emit("mask-dump", r, report)),
        Command::PipelineSim {
            chunks,
            t_dit,
            t_vae,
            mode,
            report,
        } => commands::pipeline_sim(chunks, t_dit, t_vae, mode)
            .and_then(|r| emit("pipeline-sim", r, report)),
        Command::PipelineCalibrate {
            sync,
            r#async,
            chunks,
            report,
        } => commands::pipeline_calibrate(sync, r#async, chunks)
            .and_then(|r| emit("pipeline-calibrate", r, report)),
        Command::CommReport {
            tokens,
            heads,
            head_dim,
            report,
        } => commands::comm_report(tokens, heads, head_dim)
            .and_then(|r| emit("comm-report", r, report)),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn emit(command: &str, body: report::ReportBody, path: Option<PathBuf>) -> quantstream_core::Result<()> {
    let report = RunReport {
        command: command.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: body.config,
        results: body.results,
        timing: body.timing,
    };
    let mut rendered = serde_json::to_string_pretty(&report).expect("report serializes");
    rendered.push('\n');
    match path {
        Some(p) => {
            std::fs::write(&p, rendered)?;
            eprintln!("report written to {}", p.display());
        }
        None => print!("{rendered}"),
    }
    Ok(())
}
