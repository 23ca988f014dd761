//! In-process partitioned topics with Kafka-like semantics.
//!
//! * keys hash (FNV-1a 64) onto the topic's normal partitions,
//! * fast-track traffic is spread round-robin over dedicated partitions,
//! * each partition is a FIFO log with per-partition sequence numbers,
//! * consumer groups get at-least-once delivery: anything delivered but not
//!   acked before its lease runs out (or before the consumer crashes) is
//!   delivered again,
//! * requeued envelopes stay invisible until their `not_before` deadline and
//!   are appended to the log only then, so the log itself stays strictly
//!   ordered by sequence.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::SharedClock;
use crate::hash::fnv1a64;
use crate::model::{Priority, ScoringEvent};

pub const DEFAULT_REQUEUE_DELAY: Duration = Duration::from_secs(5);
pub const DEFAULT_MAX_ATTEMPTS: u32 = 10;
pub const DEFAULT_LEASE: Duration = Duration::from_secs(30);

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BusError {
    #[error("unknown topic `{0}`")]
    UnknownTopic(String),
    #[error("invalid topic `{name}`: {reason}")]
    InvalidTopic { name: String, reason: String },
    #[error("envelope {partition}/{sequence} is not in flight for group `{group}`")]
    NotInFlight {
        group: String,
        partition: usize,
        sequence: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topic {
    pub name: String,
    pub partition_count: usize,
    #[serde(default)]
    pub fast_track_partitions: BTreeSet<usize>,
}

impl Topic {
    pub fn new(name: impl Into<String>, partition_count: usize) -> Self {
        Self {
            name: name.into(),
            partition_count,
            fast_track_partitions: BTreeSet::new(),
        }
    }

    pub fn with_fast_track(mut self, partitions: impl IntoIterator<Item = usize>) -> Self {
        self.fast_track_partitions = partitions.into_iter().collect();
        self
    }

    pub fn dead_letter_name(&self) -> String {
        format!("{}.dead-letter", self.name)
    }

    fn validate(&self) -> Result<(), BusError> {
        let bad = |reason: &str| BusError::InvalidTopic {
            name: self.name.clone(),
            reason: reason.to_string(),
        };
        if self.name.is_empty() {
            return Err(bad("empty name"));
        }
        if self.partition_count == 0 {
            return Err(bad("partition_count must be at least 1"));
        }
        if self.fast_track_partitions.iter().any(|p| *p >= self.partition_count) {
            return Err(bad("fast-track partition out of range"));
        }
        if self.fast_track_partitions.len() == self.partition_count {
            return Err(bad("at least one partition must carry normal traffic"));
        }
        Ok(())
    }

    /// Partitions that take normal traffic, in index order.
    pub fn normal_partitions(&self) -> Vec<usize> {
        (0..self.partition_count)
            .filter(|p| !self.fast_track_partitions.contains(p))
            .collect()
    }

    /// Partition for a normal-priority key. With no fast-track partitions this
    /// is exactly `fnv1a64(key) % partition_count`.
    pub fn partition_for_key(&self, key: &str) -> usize {
        let normal = self.normal_partitions();
        normal[(fnv1a64(key.as_bytes()) % normal.len() as u64) as usize]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub topic: String,
    pub key: String,
    pub payload: ScoringEvent,
    pub partition: usize,
    /// Strictly increasing within a partition.
    pub sequence: u64,
    /// Set on requeued envelopes: the instant they became visible.
    pub not_before: Option<Duration>,
    /// Bus time at which the envelope entered the partition log.
    pub appended_at: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RequeueOutcome {
    Scheduled { not_before: Duration, attempt: u32 },
    DeadLettered { attempt: u32 },
}

#[derive(Debug, Clone, Copy)]
pub struct BusConfig {
    pub max_attempts: u32,
    pub lease: Duration,
}

impl Default for BusConfig {
    fn default() -> Self {
        Self {
            max_attempts: DEFAULT_MAX_ATTEMPTS,
            lease: DEFAULT_LEASE,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopicStats {
    /// Envelopes appended to partition logs (requeues included).
    pub published: u64,
    pub acked: u64,
    pub in_flight: u64,
    /// Appended but not yet delivered to this group.
    pub pending: u64,
    /// Requeued, waiting for `not_before`.
    pub delayed: u64,
    pub requeued: u64,
    pub dead_lettered: u64,
}

#[derive(Debug, Clone)]
struct Delayed {
    due: Duration,
    order: u64,
    key: String,
    event: ScoringEvent,
    partition: usize,
}

#[derive(Debug, Default)]
struct PartitionState {
    log: Vec<Envelope>,
    delayed: Vec<Delayed>,
}

#[derive(Debug, Default)]
struct GroupPartition {
    cursor: usize,
    /// sequence -> lease deadline
    in_flight: BTreeMap<u64, Duration>,
    redeliver: BTreeSet<u64>,
    acked: u64,
}

#[derive(Debug)]
struct TopicState {
    topic: Topic,
    partitions: Vec<PartitionState>,
    groups: HashMap<String, Vec<GroupPartition>>,
    round_robin: usize,
    published: u64,
    requeued: u64,
    dead_lettered: u64,
    delay_order: u64,
}

impl TopicState {
    fn new(topic: Topic) -> Self {
        let partitions = (0..topic.partition_count).map(|_| PartitionState::default()).collect();
        Self {
            topic,
            partitions,
            groups: HashMap::new(),
            round_robin: 0,
            published: 0,
            requeued: 0,
            dead_lettered: 0,
            delay_order: 0,
        }
    }

    fn append(&mut self, partition: usize, key: String, event: ScoringEvent, now: Duration, not_before: Option<Duration>) -> u64 {
        let part = &mut self.partitions[partition];
        let sequence = part.log.len() as u64;
        part.log.push(Envelope {
            topic: self.topic.name.clone(),
            key,
            payload: event,
            partition,
            sequence,
            not_before,
            appended_at: now,
        });
        self.published += 1;
        sequence
    }

    fn promote_due(&mut self, now: Duration) {
        for p in 0..self.partitions.len() {
            let mut due: Vec<Delayed> = Vec::new();
            self.partitions[p].delayed.retain(|d| {
                if d.due <= now {
                    due.push(d.clone());
                    false
                } else {
                    true
                }
            });
            due.sort_by_key(|d| (d.due, d.order));
            for d in due {
                self.append(d.partition, d.key, d.event, now, Some(d.due));
            }
        }
    }

    fn group(&mut self, group: &str) -> &mut Vec<GroupPartition> {
        let count = self.partitions.len();
        self.groups
            .entry(group.to_string())
            .or_insert_with(|| (0..count).map(|_| GroupPartition::default()).collect())
    }

    fn next_for(&mut self, group: &str, partition: usize, now: Duration, lease: Duration) -> Option<Envelope> {
        let log_len = self.partitions[partition].log.len();
        let gp = &mut self.group(group)[partition];
        let expired: Vec<u64> = gp
            .in_flight
            .iter()
            .filter(|(_, deadline)| **deadline <= now)
            .map(|(seq, _)| *seq)
            .collect();
        for seq in expired {
            gp.in_flight.remove(&seq);
            gp.redeliver.insert(seq);
        }
        let seq = if let Some(seq) = gp.redeliver.pop_first() {
            seq
        } else if gp.cursor < log_len {
            gp.cursor += 1;
            (gp.cursor - 1) as u64
        } else {
            return None;
        };
        gp.in_flight.insert(seq, now + lease);
        Some(self.partitions[partition].log[seq as usize].clone())
    }
}

#[derive(Debug)]
struct Inner {
    clock: SharedClock,
    config: BusConfig,
    topics: Mutex<HashMap<String, TopicState>>,
}

/// Thread-safe, cheaply cloneable handle to the in-process bus.
#[derive(Debug, Clone)]
pub struct EventBus {
    inner: Arc<Inner>,
}

impl EventBus {
    pub fn new(clock: SharedClock) -> Self {
        Self::with_config(clock, BusConfig::default())
    }

    pub fn with_config(clock: SharedClock, config: BusConfig) -> Self {
        Self {
            inner: Arc::new(Inner {
                clock,
                config,
                topics: Mutex::new(HashMap::new()),
            }),
        }
    }

    pub fn clock(&self) -> &SharedClock {
        &self.inner.clock
    }

    pub fn config(&self) -> BusConfig {
        self.inner.config
    }

    fn lock(&self) -> MutexGuard<'_, HashMap<String, TopicState>> {
        self.inner.topics.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Registers a topic and its dead-letter companion. Re-creating an
    /// existing topic with the same layout is a no-op.
    pub fn create_topic(&self, topic: Topic) -> Result<(), BusError> {
        topic.validate()?;
        let mut topics = self.lock();
        if let Some(existing) = topics.get(&topic.name) {
            if existing.topic == topic {
                return Ok(());
            }
            return Err(BusError::InvalidTopic {
                name: topic.name,
                reason: "already exists with a different layout".into(),
            });
        }
        let dlq = Topic::new(topic.dead_letter_name(), 1);
        topics.entry(dlq.name.clone()).or_insert_with(|| TopicState::new(dlq));
        topics.insert(topic.name.clone(), TopicState::new(topic));
        Ok(())
    }

    pub fn topic(&self, name: &str) -> Result<Topic, BusError> {
        self.lock()
            .get(name)
            .map(|t| t.topic.clone())
            .ok_or_else(|| BusError::UnknownTopic(name.to_string()))
    }

    /// Appends `event` and returns the partition it landed on.
    pub fn publish(&self, topic: &str, key: &str, event: ScoringEvent, priority: Priority) -> Result<usize, BusError> {
        let now = self.inner.clock.now();
        let mut topics = self.lock();
        let state = topics
            .get_mut(topic)
            .ok_or_else(|| BusError::UnknownTopic(topic.to_string()))?;
        state.promote_due(now);
        let partition = match priority {
            Priority::FastTrack if !state.topic.fast_track_partitions.is_empty() => {
                let fast: Vec<usize> = state.topic.fast_track_partitions.iter().copied().collect();
                let p = fast[state.round_robin % fast.len()];
                state.round_robin = state.round_robin.wrapping_add(1);
                p
            }
            _ => state.topic.partition_for_key(key),
        };
        state.append(partition, key.to_string(), event, now, None);
        Ok(partition)
    }

    pub fn consumer(&self, topic: &str, group: &str) -> Result<Consumer, BusError> {
        let mut topics = self.lock();
        let state = topics
            .get_mut(topic)
            .ok_or_else(|| BusError::UnknownTopic(topic.to_string()))?;
        state.group(group);
        Ok(Consumer {
            bus: self.clone(),
            topic: topic.to_string(),
            group: group.to_string(),
            partition_count: state.topic.partition_count,
            next_partition: 0,
        })
    }

    /// Earliest `not_before` among delayed envelopes of a topic.
    pub fn next_due(&self, topic: &str) -> Option<Duration> {
        self.lock()
            .get(topic)?
            .partitions
            .iter()
            .flat_map(|p| p.delayed.iter().map(|d| d.due))
            .min()
    }

    pub fn stats(&self, topic: &str, group: &str) -> Result<TopicStats, BusError> {
        let now = self.inner.clock.now();
        let mut topics = self.lock();
        let state = topics
            .get_mut(topic)
            .ok_or_else(|| BusError::UnknownTopic(topic.to_string()))?;
        state.promote_due(now);
        let published = state.published;
        let requeued = state.requeued;
        let dead_lettered = state.dead_lettered;
        let delayed = state.partitions.iter().map(|p| p.delayed.len() as u64).sum();
        let log_lens: Vec<usize> = state.partitions.iter().map(|p| p.log.len()).collect();
        let group = state.group(group);
        let mut stats = TopicStats {
            published,
            requeued,
            dead_lettered,
            delayed,
            ..Default::default()
        };
        for (gp, len) in group.iter().zip(log_lens) {
            stats.acked += gp.acked;
            stats.in_flight += (gp.in_flight.len() + gp.redeliver.len()) as u64;
            stats.pending += (len - gp.cursor) as u64;
        }
        Ok(stats)
    }

    /// Full log of a partition, in sequence order.
    pub fn partition_log(&self, topic: &str, partition: usize) -> Result<Vec<Envelope>, BusError> {
        let topics = self.lock();
        let state = topics
            .get(topic)
            .ok_or_else(|| BusError::UnknownTopic(topic.to_string()))?;
        Ok(state
            .partitions
            .get(partition)
            .map(|p| p.log.clone())
            .unwrap_or_default())
    }

    /// Every envelope routed to the topic's dead-letter companion.
    pub fn dead_letters(&self, topic: &str) -> Result<Vec<Envelope>, BusError> {
        let name = self.topic(topic)?.dead_letter_name();
        self.partition_log(&name, 0)
    }
}

/// A consumer-group reader over all partitions of one topic.
#[derive(Debug)]
pub struct Consumer {
    bus: EventBus,
    topic: String,
    group: String,
    partition_count: usize,
    next_partition: usize,
}

impl Consumer {
    pub fn topic(&self) -> &str {
        &self.topic
    }

    pub fn group(&self) -> &str {
        &self.group
    }

    pub fn partition_count(&self) -> usize {
        self.partition_count
    }

    /// Next deliverable envelope from a specific partition.
    pub fn poll_partition(&mut self, partition: usize) -> Option<Envelope> {
        let now = self.bus.inner.clock.now();
        let lease = self.bus.inner.config.lease;
        let mut topics = self.bus.lock();
        let state = topics.get_mut(&self.topic)?;
        state.promote_due(now);
        if partition >= state.partitions.len() {
            return None;
        }
        state.next_for(&self.group, partition, now, lease)
    }

    /// Next deliverable envelope from any partition, visiting partitions
    /// round-robin.
    pub fn poll(&mut self) -> Option<Envelope> {
        for _ in 0..self.partition_count {
            let p = self.next_partition;
            self.next_partition = (self.next_partition + 1) % self.partition_count;
            if let Some(env) = self.poll_partition(p) {
                return Some(env);
            }
        }
        None
    }

    pub fn ack(&mut self, envelope: &Envelope) -> Result<(), BusError> {
        let mut topics = self.bus.lock();
        let state = topics
            .get_mut(&self.topic)
            .ok_or_else(|| BusError::UnknownTopic(self.topic.clone()))?;
        let gp = &mut state.group(&self.group)[envelope.partition];
        if gp.in_flight.remove(&envelope.sequence).is_none() {
            return Err(BusError::NotInFlight {
                group: self.group.clone(),
                partition: envelope.partition,
                sequence: envelope.sequence,
            });
        }
        gp.acked += 1;
        Ok(())
    }

    /// Returns an in-flight envelope for immediate redelivery.
    pub fn nack(&mut self, envelope: &Envelope) -> Result<(), BusError> {
        let mut topics = self.bus.lock();
        let state = topics
            .get_mut(&self.topic)
            .ok_or_else(|| BusError::UnknownTopic(self.topic.clone()))?;
        let gp = &mut state.group(&self.group)[envelope.partition];
        if gp.in_flight.remove(&envelope.sequence).is_none() {
            return Err(BusError::NotInFlight {
                group: self.group.clone(),
                partition: envelope.partition,
                sequence: envelope.sequence,
            });
        }
        gp.redeliver.insert(envelope.sequence);
        Ok(())
    }

    /// Simulates a consumer crash: everything in flight for the group is
    /// redelivered, oldest first per partition.
    pub fn crash(&mut self) {
        let mut topics = self.bus.lock();
        if let Some(state) = topics.get_mut(&self.topic) {
            for gp in state.group(&self.group).iter_mut() {
                let seqs: Vec<u64> = gp.in_flight.keys().copied().collect();
                gp.in_flight.clear();
                gp.redeliver.extend(seqs);
            }
        }
    }

    /// Acks `envelope` and schedules a copy with `attempt_count + 1` that
    /// becomes visible after `delay`. Once the attempt count would exceed the
    /// bus's `max_attempts` the copy goes to the dead-letter topic instead.
    pub fn requeue_with_delay(&mut self, envelope: &Envelope, delay: Duration) -> Result<RequeueOutcome, BusError> {
        self.ack(envelope)?;
        let now = self.bus.inner.clock.now();
        let max_attempts = self.bus.inner.config.max_attempts;
        let mut event = envelope.payload.clone();
        event.attempt_count += 1;
        let attempt = event.attempt_count;
        let mut topics = self.bus.lock();
        if attempt > max_attempts {
            let dlq_name = {
                let state = topics
                    .get_mut(&self.topic)
                    .ok_or_else(|| BusError::UnknownTopic(self.topic.clone()))?;
                state.dead_lettered += 1;
                state.topic.dead_letter_name()
            };
            let dlq = topics
                .get_mut(&dlq_name)
                .ok_or_else(|| BusError::UnknownTopic(dlq_name.clone()))?;
            dlq.append(0, envelope.key.clone(), event, now, None);
            return Ok(RequeueOutcome::DeadLettered { attempt });
        }
        let state = topics
            .get_mut(&self.topic)
            .ok_or_else(|| BusError::UnknownTopic(self.topic.clone()))?;
        let due = now + delay;
        state.requeued += 1;
        state.delay_order += 1;
        let order = state.delay_order;
        state.partitions[envelope.partition].delayed.push(Delayed {
            due,
            order,
            key: envelope.key.clone(),
            event,
            partition: envelope.partition,
        });
        Ok(RequeueOutcome::Scheduled { not_before: due, attempt })
    }
}

impl Consumer {
    /// Acks `envelope` and parks a copy in the topic's dead-letter log
    /// without another delivery attempt.
    pub fn dead_letter(&mut self, envelope: &Envelope) -> Result<(), BusError> {
        self.ack(envelope)?;
        let now = self.bus.inner.clock.now();
        let mut topics = self.bus.lock();
        let dlq_name = {
            let state = topics
                .get_mut(&self.topic)
                .ok_or_else(|| BusError::UnknownTopic(self.topic.clone()))?;
            state.dead_lettered += 1;
            state.topic.dead_letter_name()
        };
        let dlq = topics
            .get_mut(&dlq_name)
            .ok_or_else(|| BusError::UnknownTopic(dlq_name.clone()))?;
        dlq.append(0, envelope.key.clone(), envelope.payload.clone(), now, None);
        Ok(())
    }
}

impl Iterator for Consumer {
    type Item = Envelope;

    /// Drains whatever is deliverable right now; `None` when idle.
    fn next(&mut self) -> Option<Envelope> {
        self.poll()
    }
}
