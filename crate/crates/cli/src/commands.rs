//! Implementations behind each CLI verb.

use std::fs;
use std::io::{self, BufRead, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use serde::Serialize;

use gentext_core::clock::SimClock;
use gentext_core::metrics::{corpus_report, EvalReport, Metric, TextPair, Unit};
use gentext_core::model::{GroundTruthFeeds, ScoringEvent};
use gentext_core::pipeline::synthetic::{golf_round, GolfScriptSpec};
use gentext_core::pipeline::{EventTrace, Pipeline, PipelineConfig, PipelineParts, ReplayScript, RunSummary, Runner};

use crate::server::{router, AppState};
use crate::PipelineArgs;

const IDLE_POLL: Duration = Duration::from_millis(100);

pub fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    match path {
        Some(p) => Ok(PipelineConfig::load(p)?),
        None => Ok(PipelineConfig::builtin()),
    }
}

pub fn build_pipeline(args: &PipelineArgs, simulated: bool) -> Result<Pipeline> {
    let config = load_config(args.config.as_deref())?;
    let feeds = match &args.feeds {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            Some(serde_json::from_str::<GroundTruthFeeds>(&text).with_context(|| format!("parsing {}", path.display()))?)
        }
        None => None,
    };
    let parts = PipelineParts {
        clock: simulated.then(SimClock::new),
        feeds,
        ..Default::default()
    };
    Ok(Pipeline::with_parts(config, parts)?)
}

/// Scoring events, one JSON object per line. Blank lines are skipped.
pub fn parse_events(reader: impl BufRead) -> Result<Vec<ScoringEvent>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).with_context(|| format!("line {}", i + 1))?);
    }
    Ok(out)
}

fn read_events(source: &str) -> Result<Vec<ScoringEvent>> {
    if source == "-" {
        parse_events(io::stdin().lock())
    } else {
        let file = fs::File::open(source).with_context(|| format!("opening {source}"))?;
        parse_events(io::BufReader::new(file)).with_context(|| source.to_string())
    }
}

pub fn write_traces(path: &Path, traces: &[EventTrace]) -> Result<()> {
    let mut w = io::BufWriter::new(fs::File::create(path).with_context(|| format!("creating {}", path.display()))?);
    for t in traces {
        serde_json::to_writer(&mut w, t)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

pub fn run(args: &PipelineArgs, events: &str, traces: Option<&Path>) -> Result<RunSummary> {
    let p = build_pipeline(args, false)?;
    let events = read_events(events)?;
    let mut script = ReplayScript::default();
    for e in events {
        script.push_event(0, e);
    }
    let summary = Runner::new(&p).run(&script)?;
    if let Some(path) = traces {
        write_traces(path, &p.traces())?;
    }
    print_json(&summary)?;
    Ok(summary)
}

pub fn replay(args: &PipelineArgs, script: &Path, speed: Option<f64>, wall_clock: bool, traces: Option<&Path>) -> Result<RunSummary> {
    let p = build_pipeline(args, !wall_clock)?;
    let script = ReplayScript::load(script)?;
    let runner = Runner::new(&p);
    let runner = match speed {
        Some(s) => runner.with_speed(s),
        None => runner,
    };
    let summary = runner.run(&script)?;
    if let Some(path) = traces {
        write_traces(path, &p.traces())?;
    }
    print_json(&summary)?;
    Ok(summary)
}

pub fn batch_slotgen(args: &PipelineArgs) -> Result<()> {
    let p = build_pipeline(args, false)?;
    let run = p.batch_slotgen()?;
    print_json(&run)
}

/// A JSON array or JSON lines of text pairs.
pub fn read_pairs(path: &Path) -> Result<Vec<TextPair>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if text.trim_start().starts_with('[') {
        return serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()));
    }
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{} line {}", path.display(), i + 1)))
        .collect()
}

pub fn evaluate(pairs: &Path, metrics: &str, unit: &str, out: Option<&Path>) -> Result<EvalReport> {
    let pairs = read_pairs(pairs)?;
    let metrics = Metric::parse_list(metrics)?;
    if metrics.is_empty() {
        bail!("no metrics selected");
    }
    let unit: Unit = unit.parse().map_err(anyhow::Error::msg)?;
    let report = corpus_report(&pairs, &metrics, unit)?;
    if let Some(path) = out {
        fs::write(path, serde_json::to_vec_pretty(&report)?).with_context(|| format!("writing {}", path.display()))?;
    }
    print!("{}", report.to_table());
    Ok(report)
}

pub fn synth(spec: &GolfScriptSpec, script: &Path, feeds: &Path) -> Result<()> {
    let round = golf_round(spec);
    fs::write(script, round.script.to_jsonl()).with_context(|| format!("writing {}", script.display()))?;
    fs::write(feeds, serde_json::to_vec_pretty(&round.feeds)?).with_context(|| format!("writing {}", feeds.display()))?;
    eprintln!(
        "{} events, {} late feed patches -> {}",
        round.script.event_count(),
        round.inconsistent.len(),
        script.display()
    );
    Ok(())
}

fn spawn_consumer(p: Arc<Pipeline>, stop: Arc<AtomicBool>) {
    thread::spawn(move || {
        while !stop.load(Ordering::Relaxed) {
            match Runner::new(&p).run(&ReplayScript::default()) {
                Ok(s) if s.deliveries > 0 => tracing::info!(deliveries = s.deliveries, lost = s.lost, "drained"),
                Ok(_) => {}
                Err(e) => tracing::error!("consumer: {e}"),
            }
            // Keep memory flat on a long-running server.
            p.take_traces();
            thread::sleep(IDLE_POLL);
        }
    });
}

fn spawn_scheduler(p: Arc<Pipeline>, stop: Arc<AtomicBool>) {
    thread::spawn(move || {
        let interval = Duration::from_secs(p.config().scheduler.effective_interval_s().max(1));
        while !stop.load(Ordering::Relaxed) {
            match p.batch_slotgen() {
                Ok(r) => tracing::info!(templates = r.templates, purged = r.export.purged.len(), degraded = r.degraded.len(), "slot batch"),
                Err(e) => tracing::error!("slot batch failed, previous artifacts stay live: {e}"),
            }
            let mut slept = Duration::ZERO;
            while slept < interval && !stop.load(Ordering::Relaxed) {
                thread::sleep(IDLE_POLL);
                slept += IDLE_POLL;
            }
        }
    });
}

pub async fn serve(args: &PipelineArgs, addr: SocketAddr, static_dir: Option<PathBuf>, admin_token: Option<String>, scheduler: bool) -> Result<()> {
    let p = Arc::new(build_pipeline(args, false)?);
    let stop = Arc::new(AtomicBool::new(false));
    spawn_consumer(p.clone(), stop.clone());
    if scheduler {
        spawn_scheduler(p.clone(), stop.clone());
    }
    let app = router(
        AppState {
            pipeline: p,
            admin_token,
        },
        static_dir,
    );
    let listener = tokio::net::TcpListener::bind(addr).await.with_context(|| format!("binding {addr}"))?;
    tracing::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    stop.store(true, Ordering::Relaxed);
    Ok(())
}
