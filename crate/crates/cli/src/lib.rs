//! The `pingtrace` command line: simulate rallies, track detections, segment
//! and classify trajectories, plot, benchmark and report.

pub mod bench;
pub mod config;
pub mod plot;
pub mod report;
pub mod simulate;
pub mod stages;
pub mod train;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use pingtrace::io::{self, IoError};

pub use bench::{BenchReport, StageLatency};
pub use config::PipelineConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage error: {0}")]
    Usage(String),
    #[error("invalid input: {0}")]
    Schema(String),
    #[error("analysis failed: {0}")]
    Analysis(String),
    #[error("p99 latency {p99_ms:.4} ms exceeds the budget of {budget_ms} ms")]
    BudgetExceeded { p99_ms: f64, budget_ms: f64 },
    #[error("cannot write output: {0}")]
    Output(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Schema(_) => 2,
            CliError::Analysis(_) | CliError::BudgetExceeded { .. } | CliError::Output(_) => 1,
        }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        match e {
            IoError::Open { .. } => CliError::Usage(e.to_string()),
            IoError::Parse { .. } | IoError::Invalid { .. } => CliError::Schema(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "pingtrace", version, about = "Table-tennis ball tracking and spin analysis")]
pub struct Cli {
    /// Pipeline configuration JSON; built-in defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configuration's seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate scripted or random rallies and render per-camera detections.
    Simulate,
    /// Triangulate and track detections into tracks.jsonl.
    Track {
        #[arg(required = true)]
        detections: Vec<PathBuf>,
        #[arg(long)]
        calibration: Option<PathBuf>,
    },
    /// Detect bounces and returns and smooth between them.
    Segment { input: PathBuf },
    /// Spin features and classes for every return.
    Spin { input: PathBuf },
    /// Scatter plot of spin features as SVG.
    Plot { input: PathBuf },
    /// Time the per-frame pipeline against the real-time budget.
    Bench {
        /// Detection files to replay; a generated corpus when omitted.
        detections: Vec<PathBuf>,
        #[arg(long)]
        calibration: Option<PathBuf>,
        #[arg(long)]
        budget_ms: Option<f64>,
        #[arg(long)]
        frames: Option<u64>,
    },
    /// Event accuracy, spin confusion and smoothing gain on random rallies.
    Report,
    /// Train the recurrent heatmap tracker on synthetic clips.
    TrainToy {
        #[arg(long)]
        steps: Option<usize>,
    },
}

/// Files a command produces. Nothing touches the disk until every input has
/// been read and checked, so a failing command leaves no partial output.
#[derive(Debug, Default)]
pub struct Outputs {
    pub files: Vec<(String, Vec<u8>)>,
    /// Human-readable summary for stdout.
    pub summary: String,
    /// Set when the command produced its outputs but its verdict is a
    /// failure, as when a benchmark misses the budget.
    pub failure: Option<CliError>,
}

impl Outputs {
    pub fn text(&mut self, name: &str, text: String) {
        self.files.push((name.to_string(), text.into_bytes()));
    }

    pub fn bytes(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.push((name.to_string(), bytes));
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) {
        let mut text = serde_json::to_string_pretty(value).expect("value serializes");
        text.push('\n');
        self.text(name, text);
    }

    pub fn jsonl<T: Serialize>(&mut self, name: &str, records: &[T]) {
        self.text(name, io::to_jsonl(records));
    }

    pub fn get(&self, name: &str) -> Option<&[u8]> {
        self.files.iter().find(|(n, _)| n == name).map(|(_, b)| b.as_slice())
    }

    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
        self.files
            .iter()
            .map(|(name, bytes)| {
                let path = dir.join(name);
                io::write_bytes(&path, bytes).map_err(|e| CliError::Output(e.to_string()))?;
                Ok(path)
            })
            .collect()
    }
}

/// Reads a JSONL file, checking each record as it is parsed so errors name
/// the offending line.
pub fn read_checked<T: DeserializeOwned>(path: &Path, check: impl Fn(&T) -> Result<(), String>) -> Result<Vec<T>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |m: String| CliError::Schema(format!("{}:{}: {m}", path.display(), idx + 1));
        let record: T = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        check(&record).map_err(bad)?;
        out.push(record);
    }
    Ok(out)
}

fn resolve_config(cli: &Cli) -> Result<PipelineConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Runs one command to completion in memory.
pub fn execute(command: &Command, cfg: &PipelineConfig) -> Result<Outputs, CliError> {
    match command {
        Command::Simulate => simulate::cmd_simulate(cfg),
        Command::Track { detections, calibration } => stages::cmd_track(detections, calibration.as_deref(), cfg),
        Command::Segment { input } => stages::cmd_segment(input, cfg),
        Command::Spin { input } => stages::cmd_spin(input, cfg),
        Command::Plot { input } => plot::cmd_plot(input, cfg),
        Command::Bench { detections, calibration, budget_ms, frames } => {
            let mut cfg = cfg.clone();
            if let Some(b) = budget_ms {
                cfg.bench.budget_ms = *b;
            }
            if let Some(f) = frames {
                cfg.bench.frames = *f;
            }
            cfg.validate()?;
            bench::cmd_bench(detections, calibration.as_deref(), &cfg)
        }
        Command::Report => report::cmd_e2e_report(cfg),
        Command::TrainToy { steps } => {
            let mut cfg = cfg.clone();
            if let Some(s) = steps {
                cfg.train.steps = *s;
            }
            train::cmd_train_toy(&cfg)
        }
    }
}

/// Runs `cli` and writes its outputs. A command with a failing verdict
/// still writes what it produced; the verdict is left in `failure`.
pub fn run(cli: &Cli) -> Result<Outputs, CliError> {
    let cfg = resolve_config(cli)?;
    let outputs = execute(&cli.command, &cfg)?;
    outputs.write(&cli.out)?;
    Ok(outputs)
}
