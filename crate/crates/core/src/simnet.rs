//! Seeded deterministic discrete-event network simulator.
//!
//! One logical scheduler thread processes events in strict `(tick, sequence)`
//! order; the sequence counter breaks same-tick ties by submission order, so
//! a `(seed, scenario)` pair fully determines every run down to the trace
//! digest. The event path is integer-only: latency is a seeded uniform draw,
//! loss a seeded Bernoulli trial on an exact rational.
//!
//! Per-(src, dst) FIFO is deliberately NOT guaranteed — latency jitter can
//! reorder messages between the same pair — and protocol code must not
//! assume it.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use rand_chacha::ChaCha20Rng;
use rand_core::SeedableRng;

use crate::crypto::{hash_value, Digest};
use crate::dht::{node_id, Endpoint};
use crate::encode::Value;
use crate::rng::{bernoulli, uniform_range, Ratio};

/// Simulation-wide configuration.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub seed: u64,
    /// Inclusive message latency range in ticks; draws of 0 deliver next tick.
    pub latency: (u64, u64),
    pub drop_probability: Ratio,
    /// Hard ceiling a scenario may advance time to.
    pub max_ticks: u64,
    /// Processed-event safety cap; exceeding it halts the run.
    pub max_events: u64,
}

impl Default for SimConfig {
    fn default() -> SimConfig {
        SimConfig {
            seed: 0,
            latency: (1, 3),
            drop_probability: Ratio::ZERO,
            max_ticks: 1_000_000,
            max_events: 2_000_000,
        }
    }
}

/// A node's behavior under simulation. Handlers collect effects through
/// [`Ctx`]; the scheduler applies them once the handler returns.
pub trait Actor {
    fn on_start(&mut self, ctx: &mut Ctx);
    fn on_message(&mut self, ctx: &mut Ctx, src: Endpoint, payload: Vec<u8>);
    fn on_timer(&mut self, ctx: &mut Ctx, timer: TimerId);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TimerId(pub u64);

/// Handler-side view of the simulation: virtual time, the node's own seeded
/// randomness stream, and effect collection.
pub struct Ctx<'a> {
    now: u64,
    self_endpoint: Endpoint,
    rng: &'a mut ChaCha20Rng,
    next_timer_id: &'a mut u64,
    sends: Vec<(Endpoint, Vec<u8>)>,
    timers: Vec<(u64, TimerId)>,
    traces: Vec<(String, String)>,
}

impl Ctx<'_> {
    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn self_endpoint(&self) -> Endpoint {
        self.self_endpoint
    }

    pub fn rng(&mut self) -> &mut ChaCha20Rng {
        self.rng
    }

    /// Queue a message to another endpoint. Whether it is delivered, delayed
    /// or dropped is the scheduler's business.
    pub fn send(&mut self, dst: Endpoint, payload: Vec<u8>) {
        self.sends.push((dst, payload));
    }

    /// Arrange a timer callback `delay` ticks from now.
    pub fn set_timer(&mut self, delay: u64) -> TimerId {
        *self.next_timer_id += 1;
        let id = TimerId(*self.next_timer_id);
        self.timers.push((delay, id));
        id
    }

    /// Emit a protocol-level trace row attributed to this node.
    pub fn trace(&mut self, kind: &str, detail: String) {
        self.traces.push((kind.to_owned(), detail));
    }
}

// ---------------------------------------------------------------------------
// Trace

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEntry {
    pub tick: u64,
    pub node: String,
    pub kind: String,
    pub detail: String,
}

/// Append-only event log. The digest is over the canonical encoding of every
/// row, so two traces are equal iff their digests are.
#[derive(Debug, Clone, Default)]
pub struct Trace {
    entries: Vec<TraceEntry>,
}

impl Trace {
    pub fn entries(&self) -> &[TraceEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn push(&mut self, tick: u64, node: String, kind: &str, detail: String) {
        self.entries.push(TraceEntry {
            tick,
            node,
            kind: kind.to_owned(),
            detail,
        });
    }

    pub fn digest(&self) -> Digest {
        let rows: Vec<Value> = self
            .entries
            .iter()
            .map(|e| {
                Value::list(vec![
                    Value::U64(e.tick),
                    Value::str(&e.node),
                    Value::str(&e.kind),
                    Value::str(&e.detail),
                ])
            })
            .collect();
        hash_value(&Value::List(rows))
    }

    /// One event per line, tab separated: tick, node label, kind, detail.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&format!("{}\t{}\t{}\t{}\n", e.tick, e.node, e.kind, e.detail));
        }
        out
    }

    pub fn parse(text: &str) -> Option<Trace> {
        let mut entries = Vec::new();
        for line in text.lines() {
            if line.is_empty() {
                continue;
            }
            let mut parts = line.splitn(4, '\t');
            let tick = parts.next()?.parse().ok()?;
            let node = parts.next()?.to_owned();
            let kind = parts.next()?.to_owned();
            let detail = parts.next().unwrap_or("").to_owned();
            entries.push(TraceEntry {
                tick,
                node,
                kind,
                detail,
            });
        }
        Some(Trace { entries })
    }
}

// ---------------------------------------------------------------------------
// Scheduler

#[derive(Debug, Clone, PartialEq, Eq)]
enum QueuedEvent {
    Deliver {
        src: Endpoint,
        dst: Endpoint,
        payload: Vec<u8>,
    },
    Timer {
        node: Endpoint,
        id: TimerId,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Scheduled {
    at: u64,
    seq: u64,
    event: QueuedEvent,
}

impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.at, self.seq).cmp(&(other.at, other.seq))
    }
}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct NetCounters {
    pub sent: u64,
    pub delivered: u64,
    pub dropped_random: u64,
    pub dropped_partition: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum SimError {
    #[error("endpoint already in use")]
    DuplicateEndpoint,
    #[error("unknown endpoint")]
    UnknownEndpoint,
    #[error("partition cells overlap")]
    OverlappingCells,
    #[error("partition cells do not cover all nodes")]
    NotCovering,
    #[error("event cap exceeded; simulation halted")]
    EventCapExceeded,
}

/// The simulation: scheduler, transport model, nodes and trace.
pub struct Simulation<A: Actor> {
    config: SimConfig,
    now: u64,
    seq: u64,
    next_timer_id: u64,
    processed: u64,
    queue: BinaryHeap<Reverse<Scheduled>>,
    nodes: BTreeMap<Endpoint, A>,
    rngs: BTreeMap<Endpoint, ChaCha20Rng>,
    labels: BTreeMap<Endpoint, String>,
    /// Cell index per endpoint while partitioned.
    partition: Option<BTreeMap<Endpoint, usize>>,
    net_rng: ChaCha20Rng,
    pub counters: NetCounters,
    trace: Trace,
    halted: bool,
}

fn derive_rng(seed: u64, tag: &str, endpoint: Option<Endpoint>) -> ChaCha20Rng {
    let mut items = vec![Value::U64(seed), Value::str(tag)];
    if let Some(e) = endpoint {
        items.push(e.encode_value());
    }
    ChaCha20Rng::from_seed(*hash_value(&Value::List(items)).as_bytes())
}

impl<A: Actor> Simulation<A> {
    pub fn new(config: SimConfig) -> Simulation<A> {
        assert!(config.latency.0 <= config.latency.1, "latency min > max");
        let net_rng = derive_rng(config.seed, "net", None);
        Simulation {
            config,
            now: 0,
            seq: 0,
            next_timer_id: 0,
            processed: 0,
            queue: BinaryHeap::new(),
            nodes: BTreeMap::new(),
            rngs: BTreeMap::new(),
            labels: BTreeMap::new(),
            partition: None,
            net_rng,
            counters: NetCounters::default(),
            trace: Trace::default(),
            halted: false,
        }
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    pub fn trace_digest(&self) -> Digest {
        self.trace.digest()
    }

    pub fn halted(&self) -> bool {
        self.halted
    }

    /// Messages scheduled but neither delivered nor dropped yet.
    pub fn in_flight(&self) -> u64 {
        self.queue
            .iter()
            .filter(|Reverse(s)| matches!(s.event, QueuedEvent::Deliver { .. }))
            .count() as u64
    }

    pub fn endpoints(&self) -> Vec<Endpoint> {
        self.nodes.keys().copied().collect()
    }

    pub fn node(&self, endpoint: Endpoint) -> Option<&A> {
        self.nodes.get(&endpoint)
    }

    pub fn node_mut(&mut self, endpoint: Endpoint) -> Option<&mut A> {
        self.nodes.get_mut(&endpoint)
    }

    pub fn label(&self, endpoint: Endpoint) -> &str {
        self.labels.get(&endpoint).map(String::as_str).unwrap_or("--------")
    }

    /// Register a node and run its start hook.
    pub fn spawn_node(&mut self, endpoint: Endpoint, actor: A) -> Result<(), SimError> {
        if self.nodes.contains_key(&endpoint) {
            return Err(SimError::DuplicateEndpoint);
        }
        self.rngs
            .insert(endpoint, derive_rng(self.config.seed, "node", Some(endpoint)));
        self.labels
            .insert(endpoint, node_id(endpoint).id.hex_prefix8());
        self.nodes.insert(endpoint, actor);
        self.trace
            .push(self.now, self.labels[&endpoint].clone(), "spawn", endpoint.to_string());
        self.invoke(endpoint, |node, ctx| node.on_start(ctx))
            .expect("just inserted");
        Ok(())
    }

    /// Run a closure against one node with a live context, then apply the
    /// effects it queued. This is how external drivers (scenario runners,
    /// tests) inject work into the simulation.
    pub fn invoke(
        &mut self,
        endpoint: Endpoint,
        f: impl FnOnce(&mut A, &mut Ctx),
    ) -> Result<(), SimError> {
        let Some(mut node) = self.nodes.remove(&endpoint) else {
            return Err(SimError::UnknownEndpoint);
        };
        let mut rng = self.rngs.remove(&endpoint).expect("rng exists");
        let mut ctx = Ctx {
            now: self.now,
            self_endpoint: endpoint,
            rng: &mut rng,
            next_timer_id: &mut self.next_timer_id,
            sends: Vec::new(),
            timers: Vec::new(),
            traces: Vec::new(),
        };
        f(&mut node, &mut ctx);
        let Ctx {
            sends,
            timers,
            traces,
            ..
        } = ctx;
        self.nodes.insert(endpoint, node);
        self.rngs.insert(endpoint, rng);
        for (kind, detail) in traces {
            let label = self.labels[&endpoint].clone();
            self.trace.push(self.now, label, &kind, detail);
        }
        for (delay, id) in timers {
            let at = self.now + delay.max(1);
            self.schedule(at, QueuedEvent::Timer { node: endpoint, id });
        }
        for (dst, payload) in sends {
            self.transmit(endpoint, dst, payload);
        }
        Ok(())
    }

    fn schedule(&mut self, at: u64, event: QueuedEvent) {
        self.seq += 1;
        self.queue.push(Reverse(Scheduled {
            at,
            seq: self.seq,
            event,
        }));
    }

    fn cells_blocked(&self, a: Endpoint, b: Endpoint) -> bool {
        match &self.partition {
            None => false,
            Some(assignment) => match (assignment.get(&a), assignment.get(&b)) {
                (Some(ca), Some(cb)) => ca != cb,
                // Nodes spawned during a partition belong to no cell and are
                // isolated until heal.
                _ => true,
            },
        }
    }

    fn transmit(&mut self, src: Endpoint, dst: Endpoint, payload: Vec<u8>) {
        self.counters.sent += 1;
        let src_label = self.labels[&src].clone();
        if self.cells_blocked(src, dst) {
            self.counters.dropped_partition += 1;
            self.trace
                .push(self.now, src_label, "drop-partition", format!("dst {dst}"));
            return;
        }
        if bernoulli(&mut self.net_rng, self.config.drop_probability) {
            self.counters.dropped_random += 1;
            self.trace
                .push(self.now, src_label, "drop", format!("dst {dst}"));
            return;
        }
        let (min, max) = self.config.latency;
        let latency = uniform_range(&mut self.net_rng, min, max).max(1);
        self.schedule(self.now + latency, QueuedEvent::Deliver { src, dst, payload });
    }

    /// Split the network. Every spawned node must appear in exactly one cell;
    /// cross-cell messages are dropped at send time until [`Self::heal`].
    pub fn partition(&mut self, cells: Vec<BTreeSet<Endpoint>>) -> Result<(), SimError> {
        let mut assignment = BTreeMap::new();
        for (i, cell) in cells.iter().enumerate() {
            for e in cell {
                if assignment.insert(*e, i).is_some() {
                    return Err(SimError::OverlappingCells);
                }
            }
        }
        for e in self.nodes.keys() {
            if !assignment.contains_key(e) {
                return Err(SimError::NotCovering);
            }
        }
        self.trace.push(
            self.now,
            "--------".to_owned(),
            "control",
            format!("partition cells={}", cells.len()),
        );
        self.partition = Some(assignment);
        Ok(())
    }

    pub fn heal(&mut self) {
        if self.partition.take().is_some() {
            self.trace
                .push(self.now, "--------".to_owned(), "control", "heal".to_owned());
        }
    }

    /// Process every event scheduled at or before `tick`, in total order.
    pub fn run_until(&mut self, tick: u64) -> Result<(), SimError> {
        while let Some(Reverse(head)) = self.queue.peek() {
            if head.at > tick || self.halted {
                break;
            }
            let Reverse(scheduled) = self.queue.pop().expect("peeked");
            self.processed += 1;
            if self.processed > self.config.max_events {
                self.halted = true;
                self.trace.push(
                    self.now,
                    "--------".to_owned(),
                    "halt",
                    format!("event cap {} exceeded", self.config.max_events),
                );
                return Err(SimError::EventCapExceeded);
            }
            self.now = scheduled.at;
            match scheduled.event {
                QueuedEvent::Deliver { src, dst, payload } => {
                    if !self.nodes.contains_key(&dst) {
                        continue;
                    }
                    self.counters.delivered += 1;
                    let label = self.labels[&dst].clone();
                    self.trace
                        .push(self.now, label, "deliver", format!("src {src} len {}", payload.len()));
                    self.invoke(dst, |node, ctx| node.on_message(ctx, src, payload))
                        .expect("node exists");
                }
                QueuedEvent::Timer { node, id } => {
                    if !self.nodes.contains_key(&node) {
                        continue;
                    }
                    self.invoke(node, |n, ctx| n.on_timer(ctx, id))
                        .expect("node exists");
                }
            }
        }
        if tick > self.now {
            self.now = tick;
        }
        Ok(())
    }

    pub fn run_for(&mut self, delta: u64) -> Result<(), SimError> {
        self.run_until(self.now + delta)
    }

    /// Drain until no events remain (or the cap trips).
    pub fn run_to_quiescence(&mut self) -> Result<(), SimError> {
        while let Some(Reverse(head)) = self.queue.peek() {
            let at = head.at;
            self.run_until(at)?;
            if self.halted {
                break;
            }
        }
        Ok(())
    }

    /// Conservation check: every sent message is exactly one of delivered,
    /// dropped, or still in flight.
    pub fn conservation_holds(&self) -> bool {
        self.counters.sent
            == self.counters.delivered
                + self.counters.dropped_random
                + self.counters.dropped_partition
                + self.in_flight()
    }
}
