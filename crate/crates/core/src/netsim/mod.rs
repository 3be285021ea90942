//! Seeded deterministic discrete-event engine.
//!
//! Provides virtual time in fractional milliseconds, timers, and message
//! delivery over parameterized links with optional faults. A simulation
//! instance is self-contained: same seed and configuration, same event
//! order, same trace. Instances may run on parallel threads; they share
//! nothing.

mod link;

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::fmt;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::seed::stream_rng;
use crate::InstitutionId;

pub use link::{
    default_links, DeviceClass, LinkProfile, UnknownDeviceClass, DEVICE_CLASSES,
};

/// Payload carried by messages and timers.
pub trait SimPayload: Clone {
    /// Wire size used for transfer-time computation; control payloads are
    /// treated as size 0 (pure latency).
    fn size_bytes(&self) -> u64 {
        0
    }

    /// One-line description recorded in the event trace.
    fn summary(&self) -> String;
}

/// What arrives at a node when an event fires.
#[derive(Debug, Clone)]
pub enum EventKind<P> {
    Message { from: InstitutionId, payload: P },
    Timer { payload: P },
}

/// A fired event, as handed to the caller by [`Simulation::step`].
#[derive(Debug, Clone)]
pub struct Delivered<P> {
    pub at_ms: f64,
    pub node: InstitutionId,
    pub kind: EventKind<P>,
}

struct Scheduled<P> {
    fire_at: f64,
    seq: u64,
    node: InstitutionId,
    kind: EventKind<P>,
}

impl<P> PartialEq for Scheduled<P> {
    fn eq(&self, other: &Self) -> bool {
        self.seq == other.seq
    }
}

impl<P> Eq for Scheduled<P> {}

impl<P> PartialOrd for Scheduled<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<P> Ord for Scheduled<P> {
    // Reversed so the max-heap pops the earliest (fire_at, seq) first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .fire_at
            .total_cmp(&self.fire_at)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

/// Message-level fault injection knobs, all off by default.
#[derive(Debug, Clone, Copy, Default)]
pub struct FaultPlan {
    pub drop_prob: f64,
    pub duplicate_prob: f64,
    /// Extra uniform delivery delay in [0, reorder_jitter_ms); creates
    /// reordering between messages on the same link.
    pub reorder_jitter_ms: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("cannot schedule event {0} ms in the past")]
    NegativeDelay(f64),
    #[error("step limit {0} exceeded; simulation is likely livelocked")]
    StepLimitExceeded(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceKind {
    Message,
    Timer,
    Note,
}

impl fmt::Display for TraceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TraceKind::Message => "message",
            TraceKind::Timer => "timer",
            TraceKind::Note => "note",
        };
        f.write_str(s)
    }
}

/// One line of the event trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceEntry {
    pub at_ms: f64,
    pub node: InstitutionId,
    pub kind: TraceKind,
    pub summary: String,
}

/// Deterministic discrete-event simulation.
pub struct Simulation<P> {
    now: f64,
    queue: BinaryHeap<Scheduled<P>>,
    next_seq: u64,
    rng: ChaCha8Rng,
    links: BTreeMap<(InstitutionId, InstitutionId), LinkProfile>,
    default_link: LinkProfile,
    faults: FaultPlan,
    busy_until: BTreeMap<InstitutionId, f64>,
    muted: BTreeSet<InstitutionId>,
    steps: u64,
    step_limit: u64,
    trace: Vec<TraceEntry>,
    trace_enabled: bool,
}

pub const DEFAULT_STEP_LIMIT: u64 = 10_000_000;

impl<P: SimPayload> Simulation<P> {
    pub fn new(seed: u64) -> Self {
        Simulation {
            now: 0.0,
            queue: BinaryHeap::new(),
            next_seq: 0,
            rng: stream_rng(seed, "netsim", 0),
            links: BTreeMap::new(),
            default_link: LinkProfile::instant(),
            faults: FaultPlan::default(),
            busy_until: BTreeMap::new(),
            muted: BTreeSet::new(),
            steps: 0,
            step_limit: DEFAULT_STEP_LIMIT,
            trace: Vec::new(),
            trace_enabled: true,
        }
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    /// Processed event count so far.
    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn set_step_limit(&mut self, limit: u64) {
        self.step_limit = limit;
    }

    pub fn set_fault_plan(&mut self, faults: FaultPlan) {
        self.faults = faults;
    }

    pub fn set_trace_enabled(&mut self, enabled: bool) {
        self.trace_enabled = enabled;
    }

    /// Installs `profile` in both directions between `a` and `b`.
    pub fn set_link(&mut self, a: InstitutionId, b: InstitutionId, profile: LinkProfile) {
        self.links.insert((a, b), profile);
        self.links.insert((b, a), profile);
    }

    pub fn link(&self, from: InstitutionId, to: InstitutionId) -> LinkProfile {
        self.links
            .get(&(from, to))
            .copied()
            .unwrap_or(self.default_link)
    }

    /// Sets the profile used for pairs without an explicit link.
    pub fn set_default_link(&mut self, profile: LinkProfile) {
        self.default_link = profile;
    }

    /// A muted node receives nothing: deliveries to it are discarded,
    /// including its own timers. Simulates a crashed or silenced node.
    pub fn set_muted(&mut self, node: InstitutionId, muted: bool) {
        if muted {
            self.muted.insert(node);
        } else {
            self.muted.remove(&node);
        }
    }

    /// Marks `node` unavailable until `until`; deliveries due earlier are
    /// deferred to that time. Models per-message processing cost.
    pub fn set_busy(&mut self, node: InstitutionId, until: f64) {
        let entry = self.busy_until.entry(node).or_insert(0.0);
        if until > *entry {
            *entry = until;
        }
    }

    fn enqueue(&mut self, fire_at: f64, node: InstitutionId, kind: EventKind<P>) -> u64 {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Scheduled {
            fire_at,
            seq,
            node,
            kind,
        });
        seq
    }

    /// Schedules a timer on `node` after `delay_ms`. Returns the unique
    /// event id.
    pub fn schedule_timer(
        &mut self,
        node: InstitutionId,
        delay_ms: f64,
        payload: P,
    ) -> Result<u64, SimError> {
        if delay_ms.is_nan() || delay_ms < 0.0 {
            return Err(SimError::NegativeDelay(delay_ms));
        }
        Ok(self.enqueue(self.now + delay_ms, node, EventKind::Timer { payload }))
    }

    /// Sends `payload` from `from` to `to`, leaving now. Applies the link
    /// transfer time and the fault plan. Self-sends deliver instantly and
    /// are never faulted.
    pub fn send(&mut self, from: InstitutionId, to: InstitutionId, payload: P) {
        self.send_departing_at(self.now, from, to, payload);
    }

    /// [`Simulation::send`] with an explicit departure time at or after
    /// now; drivers use this to stagger a burst of outbound messages.
    pub fn send_departing_at(
        &mut self,
        depart_at: f64,
        from: InstitutionId,
        to: InstitutionId,
        payload: P,
    ) {
        let depart = depart_at.max(self.now);
        if from == to {
            self.enqueue(depart, to, EventKind::Message { from, payload });
            return;
        }
        if self.faults.drop_prob > 0.0 && self.rng.random_range(0.0..1.0) < self.faults.drop_prob {
            if self.trace_enabled {
                self.trace.push(TraceEntry {
                    at_ms: self.now,
                    node: to,
                    kind: TraceKind::Note,
                    summary: format!("dropped from={} {}", from, payload.summary()),
                });
            }
            return;
        }
        let arrival = self.arrival_time(depart, from, to, &payload);
        self.enqueue(arrival, to, EventKind::Message { from, payload: payload.clone() });
        if self.faults.duplicate_prob > 0.0
            && self.rng.random_range(0.0..1.0) < self.faults.duplicate_prob
        {
            let arrival = self.arrival_time(depart, from, to, &payload);
            self.enqueue(arrival, to, EventKind::Message { from, payload });
        }
    }

    fn arrival_time(
        &mut self,
        depart: f64,
        from: InstitutionId,
        to: InstitutionId,
        payload: &P,
    ) -> f64 {
        let link = self.link(from, to);
        let mut delay = link.transfer_time(payload.size_bytes(), &mut self.rng);
        if self.faults.reorder_jitter_ms > 0.0 {
            delay += self.rng.random_range(0.0..self.faults.reorder_jitter_ms);
        }
        depart + delay
    }

    /// Fire time of the next pending event.
    pub fn peek_time(&self) -> Option<f64> {
        self.queue.peek().map(|s| s.fire_at)
    }

    pub fn is_idle(&self) -> bool {
        self.queue.is_empty()
    }

    /// Pops and delivers the next event in (fire_at, seq) order.
    ///
    /// Returns `Ok(None)` when the queue is empty. Deliveries to busy nodes
    /// are deferred to the node's free time; deliveries to muted nodes are
    /// discarded.
    pub fn step(&mut self) -> Result<Option<Delivered<P>>, SimError> {
        self.step_until(f64::INFINITY)
    }

    /// [`Simulation::step`], but never delivers past `deadline`: returns
    /// `Ok(None)` once every remaining event fires later. Discarded and
    /// deferred events do not count as progress, so a deadline check must
    /// live here rather than on [`Simulation::peek_time`].
    pub fn step_until(&mut self, deadline: f64) -> Result<Option<Delivered<P>>, SimError> {
        loop {
            if !self.queue.peek().is_some_and(|e| e.fire_at <= deadline) {
                return Ok(None);
            }
            let event = self.queue.pop().expect("peeked event");
            self.now = self.now.max(event.fire_at);
            if let Some(&busy) = self.busy_until.get(&event.node) {
                if event.fire_at < busy {
                    self.enqueue(busy, event.node, event.kind);
                    continue;
                }
            }
            if self.muted.contains(&event.node) {
                continue;
            }
            if self.steps >= self.step_limit {
                return Err(SimError::StepLimitExceeded(self.step_limit));
            }
            self.steps += 1;
            if self.trace_enabled {
                let (kind, summary) = match &event.kind {
                    EventKind::Message { from, payload } => (
                        TraceKind::Message,
                        format!("from={} {}", from, payload.summary()),
                    ),
                    EventKind::Timer { payload } => (TraceKind::Timer, payload.summary()),
                };
                self.trace.push(TraceEntry {
                    at_ms: self.now,
                    node: event.node,
                    kind,
                    summary,
                });
            }
            return Ok(Some(Delivered {
                at_ms: self.now,
                node: event.node,
                kind: event.kind,
            }));
        }
    }

    /// Drains the queue, handing each event to `handler`. Returns the
    /// complete trace, or the step-limit error on livelock.
    pub fn run_until_idle<F>(&mut self, mut handler: F) -> Result<&[TraceEntry], SimError>
    where
        F: FnMut(&mut Self, Delivered<P>),
    {
        while let Some(event) = self.step()? {
            handler(self, event);
        }
        Ok(&self.trace)
    }

    /// Processes events due at or before `deadline`, then advances the
    /// clock to `deadline`.
    pub fn run_until<F>(&mut self, deadline: f64, mut handler: F) -> Result<&[TraceEntry], SimError>
    where
        F: FnMut(&mut Self, Delivered<P>),
    {
        while let Some(event) = self.step_until(deadline)? {
            handler(self, event);
        }
        self.now = self.now.max(deadline);
        Ok(&self.trace)
    }

    /// Appends a free-form annotation to the trace at the current time.
    pub fn note(&mut self, node: InstitutionId, summary: impl Into<String>) {
        if self.trace_enabled {
            self.trace.push(TraceEntry {
                at_ms: self.now,
                node,
                kind: TraceKind::Note,
                summary: summary.into(),
            });
        }
    }

    pub fn trace(&self) -> &[TraceEntry] {
        &self.trace
    }

    /// One JSON object per line: time, node, kind, summary.
    pub fn trace_jsonl(&self) -> String {
        let mut out = String::new();
        for entry in &self.trace {
            out.push_str(&serde_json::to_string(entry).expect("trace entry serializes"));
            out.push('\n');
        }
        out
    }
}
