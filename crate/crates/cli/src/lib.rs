//! Command line front end for the gentext pipeline.
//!
//! Verbs: `run` (live processing of an event file), `replay` (timed replay
//! of a recorded script), `serve` (HTTP surface plus background consumer and
//! slot scheduler), `batch-slotgen`, `evaluate`, and `synth` for generating
//! synthetic golf rounds to replay.

pub mod commands;
pub mod server;

use std::net::SocketAddr;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "gentext", version, about = "Event-driven generative text pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Options shared by every verb that builds a pipeline.
#[derive(Debug, Clone, Args)]
pub struct PipelineArgs {
    /// Pipeline config (JSON). The built-in config is used when omitted.
    #[arg(long, short, env = "GENTEXT_CONFIG")]
    pub config: Option<PathBuf>,
    /// Ground-truth feed snapshot overriding the config's.
    #[arg(long)]
    pub feeds: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Process scoring events (JSON lines, `-` for stdin) on the wall clock
    /// until every one reaches a terminal state.
    Run {
        #[command(flatten)]
        pipeline: PipelineArgs,
        #[arg(long, default_value = "-")]
        events: String,
        /// Write one JSON trace per delivery here.
        #[arg(long)]
        traces: Option<PathBuf>,
    },
    /// Replay a script of timed events and feed patches.
    Replay {
        #[command(flatten)]
        pipeline: PipelineArgs,
        script: PathBuf,
        /// Replay speed factor; defaults to the config's.
        #[arg(long)]
        speed: Option<f64>,
        /// Sleep for real instead of advancing a simulated clock.
        #[arg(long)]
        wall_clock: bool,
        #[arg(long)]
        traces: Option<PathBuf>,
    },
    /// Serve the HTTP API.
    Serve {
        #[command(flatten)]
        pipeline: PipelineArgs,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Static assets (the review console bundle) served at `/`.
        #[arg(long)]
        static_dir: Option<PathBuf>,
        /// Bearer token for the admin routes.
        #[arg(long, env = "GENTEXT_ADMIN_TOKEN")]
        admin_token: Option<String>,
        /// Skip the slot batch scheduler.
        #[arg(long)]
        no_scheduler: bool,
    },
    /// Generate and export the slot-filler artifacts once.
    BatchSlotgen {
        #[command(flatten)]
        pipeline: PipelineArgs,
    },
    /// Score generated text against references.
    Evaluate {
        /// JSON array or JSON lines of `{generated, reference, logprobs?}`.
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long, default_value = "lev,rouge1,rouge2,rougeL")]
        metrics: String,
        #[arg(long, default_value = "char")]
        unit: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic golf round: a replay script and its feed snapshot.
    Synth {
        #[arg(long, default_value_t = 1000)]
        events: usize,
        #[arg(long, default_value_t = 50)]
        players: usize,
        #[arg(long, default_value_t = 60_000)]
        spacing_ms: u64,
        #[arg(long, default_value_t = 0.0)]
        inconsistent_rate: f64,
        #[arg(long, default_value_t = 0)]
        lag_ms: u64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        script: PathBuf,
        #[arg(long)]
        feeds: PathBuf,
    },
}
