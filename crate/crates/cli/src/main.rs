use clap::Parser;
use tracing_subscriber::EnvFilter;

use gentext::{commands, Cli, Command};
use gentext_core::pipeline::synthetic::GolfScriptSpec;

fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();

    match Cli::parse().command {
        Command::Run { pipeline, events, traces } => {
            commands::run(&pipeline, &events, traces.as_deref())?;
        }
        Command::Replay {
            pipeline,
            script,
            speed,
            wall_clock,
            traces,
        } => {
            commands::replay(&pipeline, &script, speed, wall_clock, traces.as_deref())?;
        }
        Command::Serve {
            pipeline,
            addr,
            static_dir,
            admin_token,
            no_scheduler,
        } => {
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(commands::serve(&pipeline, addr, static_dir, admin_token, !no_scheduler))?;
        }
        Command::BatchSlotgen { pipeline } => commands::batch_slotgen(&pipeline)?,
        Command::Evaluate { pairs, metrics, unit, out } => {
            commands::evaluate(&pairs, &metrics, &unit, out.as_deref())?;
        }
        Command::Synth {
            events,
            players,
            spacing_ms,
            inconsistent_rate,
            lag_ms,
            seed,
            script,
            feeds,
        } => {
            let spec = GolfScriptSpec {
                events,
                players,
                spacing_ms,
                inconsistent_rate,
                lag_ms,
                seed,
            };
            commands::synth(&spec, &script, &feeds)?;
        }
    }
    Ok(())
}
