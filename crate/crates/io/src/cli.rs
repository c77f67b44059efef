//! The `microteleop` command line. Exit codes: 0 success, 1 configuration
//! or input error, 2 runtime fault.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use microteleop_core::scenarios::{compute_metrics, run_scenario_with, TrackingTarget};
use serde_json::json;

use crate::config::parse_config;
use crate::server::{serve, ServerOptions};
use crate::stability::{analyze, render_table, StabilityError, Sweep};
use crate::telemetry::{read_csv, read_jsonl, summarize, Format, TelemetryWriter};

pub const EXIT_OK: u8 = 0;
pub const EXIT_CONFIG: u8 = 1;
pub const EXIT_RUNTIME: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "microteleop", version, about = "Scaled bilateral tele-manipulation of magnetic microrobots")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Csv,
    Jsonl,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a scenario and print its metrics as JSON.
    Run {
        config: PathBuf,
        /// Telemetry file; `.jsonl` selects JSON lines unless --format says otherwise.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 1000)]
        frames_per_flush: usize,
        #[arg(long, value_enum)]
        format: Option<FormatArg>,
    },
    /// Print the Llewellyn stability table of a config, optionally over a sweep.
    AnalyzeStability {
        config: PathBuf,
        /// `key=lo:hi:n`, e.g. `teleop.scaling.force=1e3:1e9:7`.
        #[arg(long)]
        sweep: Option<String>,
    },
    /// Summarize a telemetry file (CSV or JSON lines).
    Metrics {
        telemetry: PathBuf,
        /// Settling band for JSON-lines input (m).
        #[arg(long, default_value_t = 1.0e-5)]
        band: f64,
    },
    /// Serve protocol v1 sessions over WebSocket.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8765")]
        addr: String,
        /// Configs to serve under their scenario names.
        #[arg(long)]
        config: Vec<PathBuf>,
        /// Simulated seconds per wall-clock second.
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
    },
}

fn fail(code: u8, message: impl std::fmt::Display) -> u8 {
    eprintln!("error: {message}");
    code
}

fn read_text(path: &Path) -> Result<String, u8> {
    fs::read_to_string(path).map_err(|e| fail(EXIT_CONFIG, format!("{}: {e}", path.display())))
}

fn load(path: &Path) -> Result<microteleop_core::scenarios::ScenarioConfig<f64>, u8> {
    parse_config(&read_text(path)?).map(|p| p.config).map_err(|e| fail(EXIT_CONFIG, format!("{}: {e}", path.display())))
}

pub fn execute(cli: Cli) -> u8 {
    let result = match cli.command {
        Command::Run { config, out, frames_per_flush, format } => run(&config, out.as_deref(), frames_per_flush, format),
        Command::AnalyzeStability { config, sweep } => analyze_stability(&config, sweep.as_deref()),
        Command::Metrics { telemetry, band } => metrics(&telemetry, band),
        Command::Serve { addr, config, speed } => serve_cmd(&addr, &config, speed),
    };
    result.unwrap_or_else(|code| code)
}

fn run(config: &Path, out: Option<&Path>, frames_per_flush: usize, format: Option<FormatArg>) -> Result<u8, u8> {
    let cfg = load(config)?;
    let mut writer = match out {
        Some(path) => {
            let format = match format {
                Some(FormatArg::Csv) => Format::Csv,
                Some(FormatArg::Jsonl) => Format::Jsonl,
                None => Format::from_path(path),
            };
            let file = File::create(path).map_err(|e| fail(EXIT_RUNTIME, format!("{}: {e}", path.display())))?;
            Some(TelemetryWriter::new(BufWriter::new(file), format, frames_per_flush).map_err(|e| fail(EXIT_RUNTIME, e))?)
        }
        None => None,
    };
    let mut write_error = None;
    let result = run_scenario_with(&cfg, |frame| {
        if let (Some(w), None) = (writer.as_mut(), &write_error) {
            write_error = w.write_frame(frame).err();
        }
    });
    if let Some(e) = write_error {
        return Err(fail(EXIT_RUNTIME, e));
    }
    if let Some(w) = writer {
        w.finish().map_err(|e| fail(EXIT_RUNTIME, e))?;
    }
    match result {
        Ok(run) => {
            let report = json!({ "scenario": cfg.kind.name(), "frames": run.frames.len(), "metrics": run.metrics });
            println!("{}", serde_json::to_string_pretty(&report).expect("metrics serialize"));
            Ok(EXIT_OK)
        }
        Err(fault) => Err(fail(EXIT_RUNTIME, fault)),
    }
}

fn analyze_stability(config: &Path, sweep: Option<&str>) -> Result<u8, u8> {
    let text = read_text(config)?;
    let sweep: Option<Sweep> = sweep.map(str::parse).transpose().map_err(|e: StabilityError| fail(EXIT_CONFIG, e))?;
    match analyze(&text, sweep.as_ref()) {
        Ok(rows) => {
            print!("{}", render_table(sweep.as_ref().map(|s| s.key.as_str()), &rows));
            Ok(EXIT_OK)
        }
        Err(e @ (StabilityError::Config(_) | StabilityError::Sweep(_))) => Err(fail(EXIT_CONFIG, e)),
        Err(e) => Err(fail(EXIT_RUNTIME, e)),
    }
}

fn metrics(path: &Path, band: f64) -> Result<u8, u8> {
    let input_error = |e: &dyn std::fmt::Display| fail(EXIT_CONFIG, format!("{}: {e}", path.display()));
    let mut file = BufReader::new(File::open(path).map_err(|e| input_error(&e))?);
    let mut first = [0u8; 1];
    let n = file.read(&mut first).map_err(|e| input_error(&e))?;
    let rest = BufReader::new(io::Cursor::new(first[..n].to_vec()).chain(file));
    let report = if first[..n] == *b"{" {
        let frames = read_jsonl(rest).map_err(|e| input_error(&e))?;
        let m = compute_metrics(&frames, &TrackingTarget::SlaveReference, band).map_err(|e| input_error(&e))?;
        json!({ "frames": frames.len(), "duration": frames.last().map_or(0.0, |f| f.t), "metrics": m })
    } else {
        let rows = read_csv(rest).map_err(|e| input_error(&e))?;
        json!(summarize(&rows))
    };
    println!("{}", serde_json::to_string_pretty(&report).expect("metrics serialize"));
    Ok(EXIT_OK)
}

fn serve_cmd(addr: &str, configs: &[PathBuf], speed: f64) -> Result<u8, u8> {
    if !(speed > 0.0 && speed.is_finite()) {
        return Err(fail(EXIT_CONFIG, "speed must be positive"));
    }
    let mut overrides = BTreeMap::new();
    for path in configs {
        let cfg = load(path)?;
        overrides.insert(cfg.kind.name().to_string(), cfg);
    }
    let listener = TcpListener::bind(addr).map_err(|e| fail(EXIT_RUNTIME, format!("{addr}: {e}")))?;
    eprintln!("listening on ws://{}", listener.local_addr().map_or_else(|_| addr.to_string(), |a| a.to_string()));
    io::stderr().flush().ok();
    serve(listener, ServerOptions { overrides, speed }).map_err(|e| fail(EXIT_RUNTIME, e))?;
    Ok(EXIT_OK)
}
