//! `pftrace` commands.
//!
//! Every command writes to caller-supplied streams and returns its exit
//! code, so the binary is a thin wrapper around [`run`].
//!
//! Exit codes: 0 success, 1 I/O or input error, 2 heap violation or
//! mismatch against an expected-output file.

pub mod config;
pub mod dump;

use std::fs::{self, File};
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use log::debug;
use thiserror::Error;

use crate::decoder::{decode_reader, DecodeOutput};
use crate::encoder::{encode_script_with, EncodeError, EncoderOptions, EventScript, ExpectedOutput, ScriptError};
use crate::instrument::{check_double_free, events_from_words};
use crate::perfmodel::{ComparisonReport, DEFAULT_CPU_MHZ, DEFAULT_X_CYCLES};
use crate::protocol::ProtocolError;

pub use config::{parse_config, ConfigError, ToolConfig};
pub use dump::{format_dump, parse_dump, DumpError, DumpFormat};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_VIOLATION: i32 = 2;

const DECODE_QUEUE_DEPTH: usize = 8;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Config { path: PathBuf, source: ConfigError },
    #[error("{path}: {source}")]
    Script { path: PathBuf, source: ScriptError },
    #[error("{path}: {source}")]
    Dump { path: PathBuf, source: DumpError },
    #[error("{path}: {source}")]
    Expected { path: PathBuf, source: serde_json::Error },
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("output: {0}")]
    Output(#[from] io::Error),
}

#[derive(Debug, Parser)]
#[command(name = "pftrace", version, about = "Decode PFT traces carrying context-ID instrumentation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Decode a raw trace into decoded-trace and instrumented-data dumps.
    Decode {
        trace: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t)]
        format: DumpFormat,
        /// Write the decoded trace memory here instead of stdout.
        #[arg(long)]
        out_trace: Option<PathBuf>,
        /// Write the instrumented data memory here instead of stdout.
        #[arg(long)]
        out_instr: Option<PathBuf>,
        /// Compare against an expected-output file written by `encode`.
        #[arg(long)]
        expected: Option<PathBuf>,
    },
    /// Encode a run script into a raw trace and its expected decoder output.
    Encode {
        script: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_trace: PathBuf,
        /// Expected-output file (JSON). Printed to stdout when omitted.
        #[arg(long)]
        expected: Option<PathBuf>,
        /// Bytes between periodic a-sync packets; 0 disables them.
        #[arg(long, default_value_t = EncoderOptions::DEFAULT_ASYNC_INTERVAL)]
        async_interval: usize,
    },
    /// Check an instrumented-data dump for double frees.
    Check { dump: PathBuf },
    /// Print the latency, bandwidth and overhead comparison.
    Stats {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Decoder clock in MHz.
        #[arg(long, default_value_t = 250.0)]
        clock_mhz: f64,
        /// CPU clock in MHz.
        #[arg(long, default_value_t = DEFAULT_CPU_MHZ)]
        cpu_mhz: f64,
        /// Coprocessor busy-wait cycles of `mcr`.
        #[arg(long, default_value_t = DEFAULT_X_CYCLES)]
        x_cycles: u32,
    },
}

pub fn run(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let result = match cli.command {
        Command::Decode {
            trace,
            config,
            format,
            out_trace,
            out_instr,
            expected,
        } => cmd_decode(
            &trace,
            config.as_deref(),
            format,
            out_trace.as_deref(),
            out_instr.as_deref(),
            expected.as_deref(),
            out,
            err,
        ),
        Command::Encode {
            script,
            config,
            out_trace,
            expected,
            async_interval,
        } => cmd_encode(
            &script,
            config.as_deref(),
            &out_trace,
            expected.as_deref(),
            async_interval,
            out,
        ),
        Command::Check { dump } => cmd_check(&dump, out),
        Command::Stats {
            config,
            clock_mhz,
            cpu_mhz,
            x_cycles,
        } => cmd_stats(config.as_deref(), clock_mhz, cpu_mhz, x_cycles, out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_ERROR
        }
    }
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_owned(),
        source,
    })
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|source| CliError::Io {
        path: path.to_owned(),
        source,
    })
}

pub fn load_config(path: Option<&Path>) -> Result<ToolConfig, CliError> {
    match path {
        None => Ok(ToolConfig::default()),
        Some(path) => parse_config(&read_text(path)?).map_err(|source| CliError::Config {
            path: path.to_owned(),
            source,
        }),
    }
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_decode(
    trace: &Path,
    config: Option<&Path>,
    format: DumpFormat,
    out_trace: Option<&Path>,
    out_instr: Option<&Path>,
    expected: Option<&Path>,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<i32, CliError> {
    let config = load_config(config)?.decoder_config();
    let expected = expected
        .map(|path| {
            serde_json::from_str::<ExpectedOutput>(&read_text(path)?).map_err(|source| {
                CliError::Expected {
                    path: path.to_owned(),
                    source,
                }
            })
        })
        .transpose()?;
    let file = File::open(trace).map_err(|source| CliError::Io {
        path: trace.to_owned(),
        source,
    })?;
    let output = decode_reader(BufReader::new(file), &config, DECODE_QUEUE_DEPTH).map_err(|source| {
        CliError::Io {
            path: trace.to_owned(),
            source,
        }
    })?;
    report_diagnostics(&output, err)?;

    let trace_dump = format_dump(output.addresses(), format, false);
    let instr_dump = format_dump(output.instrumented(), format, true);
    match out_trace {
        Some(path) => write_file(path, trace_dump.as_bytes())?,
        None => write!(out, "DECODE TRACE\n{trace_dump}")?,
    }
    match out_instr {
        Some(path) => write_file(path, instr_dump.as_bytes())?,
        None => write!(out, "INSTRUMENTED DATA\n{instr_dump}")?,
    }

    if let Some(expected) = expected {
        let got = ExpectedOutput {
            addresses: output.addresses().to_vec(),
            instrumented: output.instrumented().to_vec(),
        };
        if got != expected {
            writeln!(
                err,
                "mismatch: expected {} addresses / {} instrumented words, decoded {} / {}",
                expected.addresses.len(),
                expected.instrumented.len(),
                got.addresses.len(),
                got.instrumented.len()
            )?;
            return Ok(EXIT_VIOLATION);
        }
        writeln!(err, "decoded output matches expected")?;
    }
    Ok(EXIT_OK)
}

fn report_diagnostics(output: &DecodeOutput, err: &mut dyn Write) -> io::Result<()> {
    for ev in output.diagnostics() {
        if let Some(d) = ev.diagnostic_reason() {
            writeln!(err, "cycle {}: {d}", ev.cycle)?;
        }
    }
    debug!(
        "{} packets, {} addresses, {} instrumented words",
        output.packets.len(),
        output.addresses().len(),
        output.instrumented().len()
    );
    Ok(())
}

pub fn cmd_encode(
    script: &Path,
    config: Option<&Path>,
    out_trace: &Path,
    expected: Option<&Path>,
    async_interval: usize,
    out: &mut dyn Write,
) -> Result<i32, CliError> {
    let config = load_config(config)?.decoder_config();
    let script: EventScript = read_text(script)?.parse().map_err(|source| CliError::Script {
        path: script.to_owned(),
        source,
    })?;
    let options = EncoderOptions {
        async_interval: (async_interval > 0).then_some(async_interval),
        ..EncoderOptions::default()
    };
    let trace = encode_script_with(&script, &config, &options)?;
    write_file(out_trace, &trace.bytes)?;
    let json = serde_json::to_string_pretty(&trace.expected).expect("plain data serializes");
    match expected {
        Some(path) => write_file(path, format!("{json}\n").as_bytes())?,
        None => writeln!(out, "{json}")?,
    }
    Ok(EXIT_OK)
}

pub fn cmd_check(dump: &Path, out: &mut dyn Write) -> Result<i32, CliError> {
    let words = parse_dump(&read_text(dump)?).map_err(|source| CliError::Dump {
        path: dump.to_owned(),
        source,
    })?;
    let verdict = check_double_free(&events_from_words(&words));
    writeln!(out, "{} events", words.len())?;
    for v in &verdict.violations {
        if v.kind.is_violation() {
            writeln!(out, "{v}")?;
        } else {
            writeln!(out, "note: {v}")?;
        }
    }
    if verdict.is_clean() {
        writeln!(out, "no violations")?;
        Ok(EXIT_OK)
    } else {
        Ok(EXIT_VIOLATION)
    }
}

pub fn cmd_stats(
    config: Option<&Path>,
    clock_mhz: f64,
    cpu_mhz: f64,
    x_cycles: u32,
    out: &mut dyn Write,
) -> Result<i32, CliError> {
    let mut config = load_config(config)?.decoder_config();
    config.clock_mhz = clock_mhz;
    config.validate()?;
    if cpu_mhz.is_nan() || cpu_mhz <= 0.0 {
        return Err(ProtocolError::InvalidClock(cpu_mhz).into());
    }
    write!(out, "{}", ComparisonReport::new(&config, x_cycles, cpu_mhz))?;
    Ok(EXIT_OK)
}
