//! The `cotforge` command line: argument parsing, config discovery, logging
//! and exit codes. Subcommands live in [`commands`], the review HTTP API in
//! [`server`].

pub mod commands;
pub mod config;
pub mod server;

use std::ffi::OsString;
use std::fmt;
use std::io::Write;
use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use cotforge_core::export::{DatasetKind, SplitRatios};

use commands::{Metric, TranscriptUse};
use config::{CliConfig, CONFIG_ENV};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// An error in how the command was invoked rather than in doing the work.
#[derive(Debug)]
pub struct UsageError(String);

impl UsageError {
    pub fn new(msg: impl Into<String>) -> Self {
        Self(msg.into())
    }
}

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Debug, Parser)]
#[command(name = "cotforge", version, about = "Chain-of-thought annotation pipeline for video QA")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML config file (default: $COTFORGE_CONFIG, then ./cotforge.config).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub data_dir: Option<PathBuf>,
    /// Seed for every randomized component.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Log filter written to stderr, e.g. `info` or `cotforge_core=debug`.
    #[arg(long, global = true)]
    pub log_level: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate sample files and add them to the pool.
    Ingest {
        /// JSONL files with one sample per line.
        paths: Vec<PathBuf>,
        /// Also add N generated samples.
        #[arg(long)]
        synthetic: Option<usize>,
    },
    /// Run generation rounds against the pool.
    Run(RunArgs),
    /// Serve the review API.
    Serve {
        #[arg(long)]
        listen: Option<String>,
        #[arg(long)]
        snapshot_every: Option<u64>,
        /// Directory with the built review console.
        #[arg(long)]
        static_dir: Option<PathBuf>,
    },
    /// Score one rationale.
    Score {
        /// JSON file holding the sample; otherwise it is looked up in the pool.
        #[arg(long)]
        sample_file: Option<PathBuf>,
        #[arg(long)]
        video_id: Option<String>,
        #[arg(long)]
        qa_id: Option<String>,
        #[arg(long)]
        text: Option<String>,
        #[arg(long)]
        text_file: Option<PathBuf>,
        #[arg(long, value_parser = parse_unit)]
        threshold: Option<f64>,
    },
    /// Write a dataset with train/val/test splits.
    Export {
        #[arg(long, value_parser = parse_dataset)]
        dataset: DatasetKind,
        /// train,val,test
        #[arg(long, default_value = "0.6,0.2,0.2", value_parser = parse_ratios)]
        ratios: SplitRatios,
        #[arg(long)]
        out: Option<PathBuf>,
        /// "no" records per "yes" record in topic_qa.
        #[arg(long, default_value_t = 1.0)]
        negative_ratio: f64,
    },
    /// Compute an accuracy metric over model outputs.
    Eval {
        #[arg(long, value_enum)]
        metric: Metric,
        /// JSONL of evaluation records.
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        judge_transcript: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "record")]
        transcript_mode: TranscriptUse,
        #[arg(long)]
        parallelism: Option<usize>,
    },
    /// Length and word-frequency analysis of rationales.
    Analyze {
        /// Exported JSONL files; accepted rationales in the pool when omitted.
        #[arg(long)]
        records: Vec<PathBuf>,
        #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
        bucket_width: u64,
        #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u64).range(1..))]
        top: u64,
        /// Directory for SVG charts.
        #[arg(long)]
        plots: Option<PathBuf>,
    },
    /// Rebuild state from the logs and report on it.
    Replay,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    pub rounds: u32,
    #[arg(long)]
    pub parallelism: Option<usize>,
    #[arg(long, value_parser = parse_unit)]
    pub threshold: Option<f64>,
    /// Provider transcript file.
    #[arg(long)]
    pub transcript: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "record")]
    pub transcript_mode: TranscriptUse,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub batch_size: Option<u64>,
    /// Refine every queued entry after each round with N scripted experts.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub simulate_experts: Option<u64>,
}

fn parse_dataset(s: &str) -> Result<DatasetKind, String> {
    s.parse().map_err(|e: cotforge_core::Error| e.to_string())
}

fn parse_ratios(s: &str) -> Result<SplitRatios, String> {
    s.parse().map_err(|e: cotforge_core::Error| e.to_string())
}

fn parse_unit(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("{s:?} is not a number"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{v} outside [0, 1]"))
    }
}

fn init_logging(level: &str) {
    use tracing_subscriber::EnvFilter;
    let filter = EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(level));
    let _ = tracing_subscriber::fmt().json().with_env_filter(filter).with_writer(std::io::stderr).try_init();
}

fn resolve_config(global: &GlobalArgs) -> Result<CliConfig> {
    let env = std::env::var(CONFIG_ENV).ok();
    let cwd = std::env::current_dir()?;
    let mut cfg = match config::discover(global.config.as_deref(), env.as_deref(), &cwd) {
        Some(p) => CliConfig::load(&p).map_err(|e| UsageError::new(format!("{e:#}")))?,
        None => CliConfig::default(),
    };
    if let Some(d) = &global.data_dir {
        cfg.data_dir = d.clone();
    }
    if let Some(s) = global.seed {
        cfg.seed = s;
    }
    if let Some(l) = &global.log_level {
        cfg.log_level = l.clone();
    }
    Ok(cfg)
}

fn dispatch(cfg: &CliConfig, command: Command) -> Result<serde_json::Value> {
    match command {
        Command::Ingest { paths, synthetic } => commands::ingest(cfg, &paths, synthetic),
        Command::Run(a) => commands::run(cfg, &commands::RunOptions {
            rounds: a.rounds,
            parallelism: a.parallelism,
            threshold: a.threshold,
            transcript: a.transcript,
            transcript_mode: a.transcript_mode,
            batch_size: a.batch_size.map(|b| b as usize),
            simulate_experts: a.simulate_experts.map(|n| n as usize),
        }),
        Command::Serve { listen, snapshot_every, static_dir } => commands::serve(cfg, listen, snapshot_every, static_dir),
        Command::Score { sample_file, video_id, qa_id, text, text_file, threshold } => {
            commands::score(cfg, &commands::ScoreOptions { sample_file, video_id, qa_id, text, text_file, threshold })
        }
        Command::Export { dataset, ratios, out, negative_ratio } => commands::export_cmd(cfg, &commands::ExportArgs {
            dataset,
            ratios,
            seed: None,
            out,
            negative_ratio,
        }),
        Command::Eval { metric, records, judge_transcript, transcript_mode, parallelism } => {
            commands::eval(cfg, metric, &records, judge_transcript.as_deref(), transcript_mode, parallelism)
        }
        Command::Analyze { records, bucket_width, top, plots } => {
            commands::analyze_cmd(cfg, &records, bucket_width as usize, top as usize, plots.as_deref())
        }
        Command::Replay => commands::replay(cfg),
    }
}

/// Runs the CLI, writing the JSON result to `out`; returns the exit code.
pub fn run_cli<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            let _ = if e.use_stderr() { err.write_all(text.as_bytes()) } else { out.write_all(text.as_bytes()) };
            return if code == 0 { EXIT_OK } else { EXIT_USAGE };
        }
    };
    let result = resolve_config(&cli.global).and_then(|cfg| {
        init_logging(&cfg.log_level);
        dispatch(&cfg, cli.command)
    });
    match result {
        Ok(v) => {
            let _ = writeln!(out, "{}", serde_json::to_string_pretty(&v).expect("json values serialize"));
            EXIT_OK
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                EXIT_USAGE
            } else {
                EXIT_FAILURE
            }
        }
    }
}
