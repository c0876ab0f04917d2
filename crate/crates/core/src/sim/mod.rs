//! Deterministic discrete-event simulator of a layered mix network.
//!
//! Endpoints (clients, discovery nodes) hand packets to their provider, which
//! relays them to the first mix. Mixes and the destination provider hold each
//! packet for the delay embedded in its header. Every link adds a constant
//! transit time. Events are ordered by `(due, insertion sequence)`.

mod delay;
mod report;
mod topology;

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};
use std::sync::Arc;

use crate::crypto::KeyPair;
use crate::sphinx::{DropReason, InboxId, MixState, NodeId, Processed, SphinxPacket};
use crate::time::{SimDuration, SimTime};

pub use delay::sample_delay;
pub use report::{DeliveryRecord, DropRecord, LostRecord, PacketId, SimReport};
pub use topology::{NodeKind, Topology, TopologySpec};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("mean delay must be positive and finite, got {0}")]
    InvalidMean(f64),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("{0} is not an endpoint attached to a provider")]
    NotAnEndpoint(NodeId),
    #[error("topology: {0}")]
    Topology(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    /// Mean per-hop delay in seconds.
    pub mu: f64,
    /// Client send rate, messages per second.
    pub lambda_send: f64,
    /// Constant one-way link latency.
    pub transit: SimDuration,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig { mu: 0.05, lambda_send: 1.0 / 30.0, transit: SimDuration::from_millis(10) }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.mu.is_finite() && self.mu > 0.0) {
            return Err(SimError::InvalidMean(self.mu));
        }
        Ok(())
    }
}

/// A packet ready to leave an endpoint, addressed to its first mix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutboundPacket {
    pub first_hop: NodeId,
    pub packet: SphinxPacket,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FaultMode<B> {
    Crash,
    Byzantine(B),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FaultSpec<B> {
    pub node: NodeId,
    pub mode: FaultMode<B>,
    pub from: SimTime,
    pub to: SimTime,
}

impl<B> FaultSpec<B> {
    fn active(&self, t: SimTime) -> bool {
        self.from <= t && t < self.to
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AuditEvent {
    Relayed { first_hop: NodeId },
    Forwarded { next: NodeId },
    Delivered { inbox: InboxId },
    Dropped(DropReason),
    Lost,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditRecord {
    pub at: SimTime,
    pub node: NodeId,
    pub packet: PacketId,
    pub event: AuditEvent,
}

/// Introspection for tests: who handled which packet and what each hop learned.
/// Only reachable through [`Simulator::audit`], never through [`Ctx`].
#[derive(Debug, Clone, Default)]
pub struct Audit {
    pub records: Vec<AuditRecord>,
    /// Raw packet bytes as they crossed each link, when capture is enabled.
    pub captured: Vec<(PacketId, NodeId, Vec<u8>)>,
    capture_bytes: bool,
}

/// Protocol logic driven by the simulator.
pub trait Application {
    type Event: Clone;
    type Behavior: Clone;

    fn on_delivery(&mut self, ctx: &mut Ctx<'_, Self::Event, Self::Behavior>, endpoint: NodeId, payload: Vec<u8>);

    fn on_event(&mut self, ctx: &mut Ctx<'_, Self::Event, Self::Behavior>, target: NodeId, event: Self::Event);
}

#[derive(Debug, Clone)]
enum Event<E> {
    Relay { provider: NodeId, first_hop: NodeId, packet: SphinxPacket, pid: PacketId },
    Arrive { node: NodeId, packet: SphinxPacket, pid: PacketId },
    Deliver { endpoint: NodeId, payload: Vec<u8>, pid: PacketId },
    App { target: NodeId, event: E },
}

#[derive(Debug, Clone)]
struct Scheduled<E> {
    due: SimTime,
    seq: u64,
    event: Event<E>,
}

impl<E> PartialEq for Scheduled<E> {
    fn eq(&self, other: &Self) -> bool {
        (self.due, self.seq) == (other.due, other.seq)
    }
}
impl<E> Eq for Scheduled<E> {}
impl<E> PartialOrd for Scheduled<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
// Reversed so the max-heap pops the earliest (due, seq).
impl<E> Ord for Scheduled<E> {
    fn cmp(&self, other: &Self) -> Ordering {
        (other.due, other.seq).cmp(&(self.due, self.seq))
    }
}

#[derive(Debug, Clone)]
pub struct Core<E, B> {
    now: SimTime,
    seq: u64,
    next_pid: PacketId,
    queue: BinaryHeap<Scheduled<E>>,
    topology: Arc<Topology>,
    config: SimConfig,
    mixes: BTreeMap<NodeId, MixState>,
    faults: Vec<FaultSpec<B>>,
    offline: BTreeSet<NodeId>,
    inboxes: BTreeMap<NodeId, Vec<Vec<u8>>>,
    submitted_at: HashMap<PacketId, SimTime>,
    report: SimReport,
    audit: Option<Audit>,
}

impl<E, B> Core<E, B> {
    fn push(&mut self, due: SimTime, event: Event<E>) {
        self.seq += 1;
        self.queue.push(Scheduled { due, seq: self.seq, event });
    }

    fn crashed(&self, node: NodeId) -> bool {
        self.faults
            .iter()
            .any(|f| f.node == node && matches!(f.mode, FaultMode::Crash) && f.active(self.now))
    }

    fn behavior(&self, node: NodeId) -> Option<&B> {
        self.faults.iter().find_map(|f| match &f.mode {
            FaultMode::Byzantine(b) if f.node == node && f.active(self.now) => Some(b),
            _ => None,
        })
    }

    fn audit(&mut self, node: NodeId, packet: PacketId, event: AuditEvent, bytes: Option<&SphinxPacket>) {
        if let Some(a) = self.audit.as_mut() {
            a.records.push(AuditRecord { at: self.now, node, packet, event });
            if a.capture_bytes {
                if let Some(p) = bytes {
                    a.captured.push((packet, node, p.to_bytes()));
                }
            }
        }
    }

    fn lose(&mut self, node: NodeId, pid: PacketId) {
        self.report.lost.push(LostRecord { packet: pid, node, at: self.now });
        self.audit(node, pid, AuditEvent::Lost, None);
    }

    fn drop_packet(&mut self, node: NodeId, pid: PacketId, reason: DropReason) {
        self.report.drops.push(DropRecord { packet: pid, node, at: self.now, reason });
        self.audit(node, pid, AuditEvent::Dropped(reason), None);
    }

    fn submit(&mut self, from: NodeId, out: OutboundPacket) -> Result<PacketId, SimError> {
        let provider = self.topology.provider_of(from).ok_or(SimError::NotAnEndpoint(from))?;
        let pid = self.next_pid;
        self.next_pid += 1;
        self.report.submitted += 1;
        self.submitted_at.insert(pid, self.now);
        let due = self.now + self.config.transit;
        self.push(due, Event::Relay { provider, first_hop: out.first_hop, packet: out.packet, pid });
        Ok(pid)
    }

    fn inbox_fetch(&mut self, client: NodeId) -> Result<Vec<Vec<u8>>, SimError> {
        if self.topology.provider_of(client).is_none() {
            return Err(SimError::NotAnEndpoint(client));
        }
        Ok(self.inboxes.remove(&client).unwrap_or_default())
    }

    fn handle_packet_event(&mut self, ev: Event<E>) -> Option<(NodeId, Vec<u8>)> {
        let transit = self.config.transit;
        match ev {
            Event::Relay { provider, first_hop, packet, pid } => {
                if self.crashed(provider) {
                    self.lose(provider, pid);
                    return None;
                }
                self.report.bump(provider);
                if !self.mixes.contains_key(&first_hop) {
                    self.drop_packet(provider, pid, DropReason::Malformed);
                    return None;
                }
                self.audit(provider, pid, AuditEvent::Relayed { first_hop }, Some(&packet));
                let due = self.now + transit;
                self.push(due, Event::Arrive { node: first_hop, packet, pid });
            }
            Event::Arrive { node, packet, pid } => {
                if self.crashed(node) {
                    self.lose(node, pid);
                    return None;
                }
                self.report.bump(node);
                let Some(mix) = self.mixes.get_mut(&node) else {
                    self.drop_packet(node, pid, DropReason::Malformed);
                    return None;
                };
                match mix.process(&packet) {
                    Processed::Forward { next, delay, packet } => {
                        if !self.mixes.contains_key(&next) {
                            self.drop_packet(node, pid, DropReason::Malformed);
                            return None;
                        }
                        self.audit(node, pid, AuditEvent::Forwarded { next }, Some(&packet));
                        let due = self.now + delay + transit;
                        self.push(due, Event::Arrive { node: next, packet, pid });
                    }
                    Processed::Deliver { inbox, delay, payload } => {
                        let Some(endpoint) = self.topology.endpoint_at(node, inbox) else {
                            self.drop_packet(node, pid, DropReason::UnknownInbox);
                            return None;
                        };
                        self.audit(node, pid, AuditEvent::Delivered { inbox }, None);
                        let due = self.now + delay + transit;
                        self.push(due, Event::Deliver { endpoint, payload, pid });
                    }
                    Processed::Drop(reason) => self.drop_packet(node, pid, reason),
                }
            }
            Event::Deliver { endpoint, payload, pid } => {
                if self.crashed(endpoint) {
                    self.lose(endpoint, pid);
                    return None;
                }
                let submitted_at = self.submitted_at.remove(&pid).unwrap_or(self.now);
                let queued = self.offline.contains(&endpoint);
                self.report.deliveries.push(DeliveryRecord {
                    packet: pid,
                    endpoint,
                    submitted_at,
                    delivered_at: self.now,
                    queued,
                });
                self.report.bump(endpoint);
                if queued {
                    self.inboxes.entry(endpoint).or_default().push(payload);
                } else {
                    return Some((endpoint, payload));
                }
            }
            Event::App { .. } => unreachable!("app events are dispatched by the simulator"),
        }
        None
    }
}

/// The application's handle on the simulator during a callback.
pub struct Ctx<'a, E, B> {
    core: &'a mut Core<E, B>,
}

impl<'a, E, B> Ctx<'a, E, B> {
    pub fn now(&self) -> SimTime {
        self.core.now
    }

    pub fn topology(&self) -> &Topology {
        &self.core.topology
    }

    pub fn config(&self) -> &SimConfig {
        &self.core.config
    }

    pub fn submit(&mut self, from: NodeId, out: OutboundPacket) -> Result<PacketId, SimError> {
        self.core.submit(from, out)
    }

    pub fn schedule(&mut self, after: SimDuration, target: NodeId, event: E) {
        let due = self.core.now + after;
        self.core.push(due, Event::App { target, event });
    }

    /// Byzantine behavior active for `node` right now, if any.
    pub fn behavior(&self, node: NodeId) -> Option<&B> {
        self.core.behavior(node)
    }

    pub fn is_crashed(&self, node: NodeId) -> bool {
        self.core.crashed(node)
    }

    pub fn set_online(&mut self, endpoint: NodeId, online: bool) {
        if online {
            self.core.offline.remove(&endpoint);
        } else {
            self.core.offline.insert(endpoint);
        }
    }

    pub fn inbox_fetch(&mut self, client: NodeId) -> Result<Vec<Vec<u8>>, SimError> {
        self.core.inbox_fetch(client)
    }
}

#[derive(Debug, Clone)]
pub struct Simulator<A: Application> {
    pub app: A,
    core: Core<A::Event, A::Behavior>,
}

impl<A: Application> Simulator<A> {
    pub fn new(topology: Topology, mix_keys: Vec<(NodeId, KeyPair)>, config: SimConfig, app: A) -> Result<Self, SimError> {
        config.validate()?;
        let mut mixes = BTreeMap::new();
        for (id, kp) in mix_keys {
            match topology.kind(id) {
                Some(NodeKind::Mix { .. } | NodeKind::Provider) => {
                    mixes.insert(id, MixState::new(kp));
                }
                _ => return Err(SimError::UnknownNode(id)),
            }
        }
        Ok(Simulator {
            app,
            core: Core {
                now: SimTime::ZERO,
                seq: 0,
                next_pid: 0,
                queue: BinaryHeap::new(),
                topology: Arc::new(topology),
                config,
                mixes,
                faults: Vec::new(),
                offline: BTreeSet::new(),
                inboxes: BTreeMap::new(),
                submitted_at: HashMap::new(),
                report: SimReport::default(),
                audit: None,
            },
        })
    }

    pub fn now(&self) -> SimTime {
        self.core.now
    }

    pub fn topology(&self) -> &Topology {
        &self.core.topology
    }

    pub fn config(&self) -> &SimConfig {
        &self.core.config
    }

    pub fn enable_audit(&mut self, capture_bytes: bool) {
        self.core.audit = Some(Audit { capture_bytes, ..Audit::default() });
    }

    pub fn audit(&self) -> Option<&Audit> {
        self.core.audit.as_ref()
    }

    pub fn submit(&mut self, from: NodeId, out: OutboundPacket) -> Result<PacketId, SimError> {
        self.core.submit(from, out)
    }

    pub fn schedule_at(&mut self, at: SimTime, target: NodeId, event: A::Event) {
        self.core.push(at.max(self.core.now), Event::App { target, event });
    }

    pub fn inject_fault(&mut self, spec: FaultSpec<A::Behavior>) {
        self.core.faults.push(spec);
    }

    pub fn faults(&self) -> &[FaultSpec<A::Behavior>] {
        &self.core.faults
    }

    pub fn set_online(&mut self, endpoint: NodeId, online: bool) {
        Ctx { core: &mut self.core }.set_online(endpoint, online)
    }

    pub fn inbox_fetch(&mut self, client: NodeId) -> Result<Vec<Vec<u8>>, SimError> {
        self.core.inbox_fetch(client)
    }

    /// Runs a closure against the application with a live context, e.g. to
    /// start an operation at the current time.
    pub fn act<R>(&mut self, f: impl FnOnce(&mut A, &mut Ctx<'_, A::Event, A::Behavior>) -> R) -> R {
        let mut ctx = Ctx { core: &mut self.core };
        f(&mut self.app, &mut ctx)
    }

    pub fn pending_events(&self) -> usize {
        self.core.queue.len()
    }

    pub fn next_due(&self) -> Option<SimTime> {
        self.core.queue.peek().map(|s| s.due)
    }

    /// Processes one event if any is due at or before `limit`.
    pub fn step(&mut self, limit: SimTime) -> bool {
        match self.core.queue.peek() {
            Some(s) if s.due <= limit => {}
            _ => return false,
        }
        let s = self.core.queue.pop().expect("peeked");
        self.core.now = s.due;
        match s.event {
            Event::App { target, event } => {
                if self.core.crashed(target) {
                    return true;
                }
                let mut ctx = Ctx { core: &mut self.core };
                self.app.on_event(&mut ctx, target, event);
            }
            other => {
                if let Some((endpoint, payload)) = self.core.handle_packet_event(other) {
                    let mut ctx = Ctx { core: &mut self.core };
                    self.app.on_delivery(&mut ctx, endpoint, payload);
                }
            }
        }
        true
    }

    /// Processes every event due at or before `limit`, then advances the clock
    /// to `limit`.
    pub fn run_until(&mut self, limit: SimTime) -> &SimReport {
        while self.step(limit) {}
        self.core.now = self.core.now.max(limit);
        &self.core.report
    }

    /// Runs until `pred` holds (checked after every event) or `limit` passes.
    pub fn run_while(&mut self, limit: SimTime, mut keep_going: impl FnMut(&A) -> bool) {
        while keep_going(&self.app) && self.step(limit) {}
    }

    pub fn report(&self) -> &SimReport {
        &self.core.report
    }

    /// Packets submitted but not yet terminated.
    pub fn in_flight(&self) -> u64 {
        self.core.report.submitted - self.core.report.terminated()
    }
}

/// Minimal application that records what each endpoint receives.
#[derive(Debug, Clone, Default)]
pub struct Recorder {
    pub received: Vec<(NodeId, SimTime, Vec<u8>)>,
}

impl Application for Recorder {
    type Event = ();
    type Behavior = ();

    fn on_delivery(&mut self, ctx: &mut Ctx<'_, (), ()>, endpoint: NodeId, payload: Vec<u8>) {
        self.received.push((endpoint, ctx.now(), payload));
    }

    fn on_event(&mut self, _ctx: &mut Ctx<'_, (), ()>, _target: NodeId, _event: ()) {}
}
