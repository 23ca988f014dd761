//! Replay scripts and the loop that feeds them through a [`Pipeline`].
//!
//! A script is JSON lines, each `{"at_ms": .., "event": {..}}` or
//! `{"at_ms": .., "feed_patch": {..}}`. Entries are released at
//! `at_ms / speed` after the run starts. Every partition has one worker that
//! is busy for `service_time_ms` per delivery on a simulated clock; on the
//! wall clock workers are busy for as long as processing really takes.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{ms, Disposition, EventTrace, Pipeline, PipelineError, Terminal, TraceOutcome, CONSUMER_GROUP};
use crate::bus::{Consumer, Envelope, RequeueOutcome};
use crate::model::{Priority, ScoringEvent};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScriptItem {
    Event(ScoringEvent),
    FeedPatch(Value),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub at_ms: u64,
    #[serde(flatten)]
    pub item: ScriptItem,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReplayScript {
    pub entries: Vec<ScriptEntry>,
}

impl ReplayScript {
    pub fn parse_jsonl(text: &str) -> Result<Self, PipelineError> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| PipelineError::Script { line: i + 1, message };
            let v: Value = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
            let obj = v.as_object().ok_or_else(|| err("expected a JSON object".into()))?;
            let at_ms = obj
                .get("at_ms")
                .and_then(Value::as_u64)
                .ok_or_else(|| err("missing or negative `at_ms`".into()))?;
            let item = match (obj.get("event"), obj.get("feed_patch")) {
                (Some(e), None) => {
                    let event: ScoringEvent = serde_json::from_value(e.clone()).map_err(|e| err(format!("event: {e}")))?;
                    event.validate().map_err(|e| err(e.to_string()))?;
                    ScriptItem::Event(event)
                }
                (None, Some(p)) => ScriptItem::FeedPatch(p.clone()),
                _ => return Err(err("expected exactly one of `event` and `feed_patch`".into())),
            };
            entries.push(ScriptEntry { at_ms, item });
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::Load {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::parse_jsonl(&text)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("script entries serialize"));
            out.push('\n');
        }
        out
    }

    pub fn push_event(&mut self, at_ms: u64, event: ScoringEvent) {
        self.entries.push(ScriptEntry {
            at_ms,
            item: ScriptItem::Event(event),
        });
    }

    pub fn push_patch(&mut self, at_ms: u64, patch: Value) {
        self.entries.push(ScriptEntry {
            at_ms,
            item: ScriptItem::FeedPatch(patch),
        });
    }

    pub fn event_count(&self) -> usize {
        self.entries.iter().filter(|e| matches!(e.item, ScriptItem::Event(_))).count()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub count: usize,
    pub mean_ms: f64,
    pub p50_ms: u64,
    pub p95_ms: u64,
    pub p99_ms: u64,
    pub max_ms: u64,
}

impl LatencySummary {
    /// Nearest-rank percentiles.
    pub fn from_samples(mut samples: Vec<u64>) -> Self {
        if samples.is_empty() {
            return Self::default();
        }
        samples.sort_unstable();
        let n = samples.len();
        let rank = |p: f64| samples[((p * n as f64).ceil() as usize).clamp(1, n) - 1];
        Self {
            count: n,
            mean_ms: samples.iter().sum::<u64>() as f64 / n as f64,
            p50_ms: rank(0.50),
            p95_ms: rank(0.95),
            p99_ms: rank(0.99),
            max_ms: samples[n - 1],
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    /// Submissions accounted for by this run.
    pub submitted: usize,
    pub deliveries: usize,
    pub by_terminal: BTreeMap<Terminal, usize>,
    /// Submissions that never reached a terminal state.
    pub lost: usize,
    /// Terminal outcomes beyond one per submission.
    pub duplicates: usize,
    pub requeues: usize,
    /// Deliveries that were handled out of sequence within their partition.
    pub ordering_violations: usize,
    /// First append to terminal outcome, normal traffic.
    pub latency: LatencySummary,
    pub fast_track_latency: LatencySummary,
    pub elapsed_ms: u64,
}

impl RunSummary {
    pub fn count(&self, t: Terminal) -> usize {
        self.by_terminal.get(&t).copied().unwrap_or(0)
    }

    pub fn from_traces(submissions: &BTreeMap<String, usize>, traces: &[EventTrace], elapsed_ms: u64) -> Self {
        let mut s = RunSummary {
            submitted: submissions.values().sum(),
            deliveries: traces.len(),
            elapsed_ms,
            ..Default::default()
        };
        let mut terminals: HashMap<&str, usize> = HashMap::new();
        let mut first_append: HashMap<(&str, Priority), u64> = HashMap::new();
        let mut last_seq: HashMap<(&str, usize), u64> = HashMap::new();
        let (mut normal, mut fast) = (Vec::new(), Vec::new());
        for t in traces {
            let seq = last_seq.entry((t.topic.as_str(), t.partition)).or_insert(t.sequence);
            if t.sequence < *seq {
                s.ordering_violations += 1;
            }
            *seq = (*seq).max(t.sequence);
            let first = first_append.entry((t.event_id.as_str(), t.priority)).or_insert(t.appended_ms);
            *first = (*first).min(t.appended_ms);
            match t.terminal() {
                None => s.requeues += 1,
                Some(term) => {
                    *s.by_terminal.entry(term).or_insert(0) += 1;
                    *terminals.entry(t.event_id.as_str()).or_insert(0) += 1;
                    let latency = t.finished_ms.saturating_sub(*first);
                    match t.priority {
                        Priority::Normal => normal.push(latency),
                        Priority::FastTrack => fast.push(latency),
                    }
                    first_append.remove(&(t.event_id.as_str(), t.priority));
                }
            }
        }
        for (id, n) in submissions {
            let done = terminals.remove(id.as_str()).unwrap_or(0);
            s.lost += n.saturating_sub(done);
            s.duplicates += done.saturating_sub(*n);
        }
        // Terminal outcomes for events submitted before this run began.
        s.duplicates += terminals.values().map(|n| n.saturating_sub(1)).sum::<usize>();
        s.latency = LatencySummary::from_samples(normal);
        s.fast_track_latency = LatencySummary::from_samples(fast);
        s
    }
}

struct Worker {
    consumer: Consumer,
    busy_until: Vec<Duration>,
}

pub struct Runner<'a> {
    pipeline: &'a Pipeline,
    speed: f64,
}

impl<'a> Runner<'a> {
    pub fn new(pipeline: &'a Pipeline) -> Self {
        Self {
            pipeline,
            speed: pipeline.config.replay.speed,
        }
    }

    pub fn with_speed(mut self, speed: f64) -> Self {
        self.speed = speed;
        self
    }

    fn wait_until(&self, at: Duration) {
        match &self.pipeline.sim {
            Some(sim) => sim.advance_to(at),
            None => {
                let now = self.pipeline.clock.now();
                if at > now {
                    std::thread::sleep(at - now);
                }
            }
        }
    }

    /// Replays `script` and keeps going until nothing is in flight, due or
    /// scheduled.
    pub fn run(&self, script: &ReplayScript) -> Result<RunSummary, PipelineError> {
        if !(self.speed > 0.0) {
            return Err(PipelineError::Config(vec!["replay speed must be positive".into()]));
        }
        let p = self.pipeline;
        let clock = p.clock.clone();
        let start = clock.now();
        let first_trace = p.traces.lock().expect("traces poisoned").len();
        let service = Duration::from_millis(p.config.replay.service_time_ms);

        let mut order: Vec<usize> = (0..script.entries.len()).collect();
        order.sort_by_key(|&i| script.entries[i].at_ms);
        let due = |i: usize| start + Duration::from_secs_f64(script.entries[i].at_ms as f64 / 1000.0 / self.speed);

        let mut workers = Vec::new();
        for t in &p.config.topics {
            workers.push(Worker {
                consumer: p.bus.consumer(&t.name, CONSUMER_GROUP)?,
                busy_until: vec![Duration::ZERO; t.partitions],
            });
        }

        let mut next = 0;
        loop {
            let now = clock.now();
            while next < order.len() && due(order[next]) <= now {
                let i = order[next];
                let script_err = |e: PipelineError| PipelineError::Script {
                    line: i + 1,
                    message: e.to_string(),
                };
                match &script.entries[i].item {
                    ScriptItem::Event(e) => {
                        p.submit(e.clone()).map_err(script_err)?;
                    }
                    ScriptItem::FeedPatch(patch) => p.apply_feed_patch(patch).map_err(script_err)?,
                }
                next += 1;
            }

            let mut batch: Vec<(usize, Envelope)> = Vec::new();
            for (wi, w) in workers.iter_mut().enumerate() {
                for part in 0..w.busy_until.len() {
                    if w.busy_until[part] <= now {
                        if let Some(env) = w.consumer.poll_partition(part) {
                            batch.push((wi, env));
                        }
                    }
                }
            }

            if !batch.is_empty() {
                let results: Vec<(Disposition, EventTrace)> = batch.par_iter().map(|(_, env)| p.process(env, now)).collect();
                for ((wi, env), (disposition, mut trace)) in batch.into_iter().zip(results) {
                    let w = &mut workers[wi];
                    match disposition {
                        Disposition::Ack => w.consumer.ack(&env)?,
                        Disposition::DeadLetter => w.consumer.dead_letter(&env)?,
                        Disposition::Requeue(delay) => {
                            if let RequeueOutcome::DeadLettered { attempt } = w.consumer.requeue_with_delay(&env, delay)? {
                                trace.outcome = TraceOutcome::DeadLettered {
                                    reason: format!("gave up after {attempt} attempts"),
                                };
                            }
                        }
                    }
                    w.busy_until[env.partition] = if p.sim.is_some() { now + service } else { clock.now() };
                    p.record(trace);
                }
                continue;
            }

            let mut wake: Option<Duration> = order.get(next).map(|&i| due(i));
            let mut consider = |t: Duration| {
                if t > now {
                    wake = Some(wake.map_or(t, |w| w.min(t)));
                }
            };
            for w in &workers {
                w.busy_until.iter().copied().for_each(&mut consider);
            }
            for t in &p.config.topics {
                if let Some(d) = p.bus.next_due(&t.name) {
                    // Already due but not yet visible: look again right away.
                    consider(d.max(now + Duration::from_millis(1)));
                }
            }
            match wake {
                Some(t) => self.wait_until(t),
                None => break,
            }
        }

        let traces: Vec<EventTrace> = p.traces.lock().expect("traces poisoned")[first_trace..].to_vec();
        let submissions = p.take_submissions();
        Ok(RunSummary::from_traces(&submissions, &traces, ms(clock.now().saturating_sub(start))))
    }
}
