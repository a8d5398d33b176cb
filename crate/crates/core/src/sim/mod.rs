//! Deterministic discrete-event simulation of the bundling network.
//!
//! Sensor nodes capture measurements on their own drifting clocks, queue
//! them, and transmit bundles upstream; gateways merge or forward according
//! to the bundling mode; the head ingests arrivals through the performance
//! maintainer and closes the loop by disseminating new plans. The event
//! loop is single-threaded and totally ordered on (time, node, event kind,
//! insertion), so a run is a pure function of its configuration.
//!
//! Bundle trigger semantics: a node checks its queue *before* enqueueing
//! each newly delivered item and flushes the whole queue (capped at the
//! wire format's 255 entries) once occupancy has reached the bundling
//! number. With unit-rate streams the oldest entry in a bundle then waits
//! exactly `bundling / streams` measurement intervals — the quantity the
//! analytic delay model charges per hop. Batch arrivals can push occupancy
//! past the trigger and ride until the next delivery, which is where the
//! occasional overshoot past the analytic value comes from.

pub mod trace;

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};

use thiserror::Error;

use crate::delay::{service_delay_simplified, ServiceDelayParams};
use crate::head::{ControlRecord, MaintainerConfig, PerformanceMaintainer};
use crate::model::{
    validate_topology, EnergyCounts, EnergyParams, NodeId, RequirementError, RequirementSet,
    Topology, TopologyError, HEAD,
};
use crate::rng::mix;
use crate::sync::{AccuracyTable, ClockState, SyncSample, MAX_DRIFT_PPM};
use crate::time::{Micros, SimTime};
use crate::wire::{BundledMessage, MeasurementRecord, MAX_ENTRIES};

pub use trace::{
    energy_tally, message_counts, BundleLogEntry, DelayRecord, Direction, EnergyTally,
    MessageEvent, TraceSet, WindowCount,
};

/// What a node does with traffic from below.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BundlingMode {
    /// Merge offspring entries into the node's own bundles.
    AllData,
    /// Bundle only own data; forward offspring bundles unchanged.
    SelfData,
    /// No bundling at all: every measurement travels as its own message.
    NoBundling,
}

/// A complete simulation scenario.
#[derive(Clone, Debug)]
pub struct ScenarioConfig {
    pub edges: Vec<(NodeId, NodeId)>,
    pub measurement_interval: Micros,
    /// `(activation time, requirement)` pairs, strictly increasing in time.
    pub schedule: Vec<(Micros, RequirementSet)>,
    pub bundling_mode: BundlingMode,
    pub energy: EnergyParams,
    pub service: ServiceDelayParams,
    pub drifts_milli_ppm: BTreeMap<NodeId, i64>,
    pub seed: u64,
    pub duration: Micros,
    /// Uniform bundling number every node starts with.
    pub initial_plan: u32,
    pub accuracy_table: AccuracyTable,
}

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("topology: {0}")]
    Topology(#[from] TopologyError),
    #[error("duration must be positive")]
    ZeroDuration,
    #[error("measurement interval must be positive")]
    ZeroInterval,
    #[error("initial plan must be at least 1")]
    InitialPlanZero,
    #[error("requirement schedule entry {index}: {source}")]
    Requirement {
        index: usize,
        source: RequirementError,
    },
    #[error("requirement schedule times must be strictly increasing (entry {index})")]
    ScheduleNotIncreasing { index: usize },
    #[error("drift for node {node} exceeds +/-{max} ppm")]
    DriftOutOfRange { node: NodeId, max: i64 },
    #[error("drift map references node {0} not present in the topology")]
    UnknownDriftNode(NodeId),
    #[error(
        "node {node}: bundling {bundling} with {streams} streams can exceed the {cap}-entry message cap"
    )]
    BundleCapExceeded {
        node: NodeId,
        bundling: u32,
        streams: u32,
        cap: usize,
    },
}

impl ScenarioConfig {
    /// Full validation; returns the validated topology.
    pub fn validate(&self) -> Result<Topology, ConfigError> {
        let topo = validate_topology(&self.edges)?;
        if self.duration.is_zero() {
            return Err(ConfigError::ZeroDuration);
        }
        if self.measurement_interval.is_zero() {
            return Err(ConfigError::ZeroInterval);
        }
        if self.initial_plan < 1 {
            return Err(ConfigError::InitialPlanZero);
        }
        let mut prev: Option<Micros> = None;
        for (index, (at, req)) in self.schedule.iter().enumerate() {
            if let Some(p) = prev {
                if *at <= p {
                    return Err(ConfigError::ScheduleNotIncreasing { index });
                }
            }
            prev = Some(*at);
            req.validate()
                .map_err(|source| ConfigError::Requirement { index, source })?;
        }
        for (&node, &milli_ppm) in &self.drifts_milli_ppm {
            if !topo.contains(node) {
                return Err(ConfigError::UnknownDriftNode(node));
            }
            if milli_ppm.abs() > MAX_DRIFT_PPM * 1000 {
                return Err(ConfigError::DriftOutOfRange {
                    node,
                    max: MAX_DRIFT_PPM,
                });
            }
        }
        if self.bundling_mode != BundlingMode::NoBundling {
            let worst_bundling = self
                .schedule
                .iter()
                .map(|(_, r)| r.bundle_max)
                .chain([self.initial_plan])
                .max()
                .unwrap();
            for node in topo.sensors() {
                let streams = 1 + topo.offspring_count(node).unwrap();
                if worst_bundling as u64 * streams as u64 > MAX_ENTRIES as u64 {
                    return Err(ConfigError::BundleCapExceeded {
                        node,
                        bundling: worst_bundling,
                        streams,
                        cap: MAX_ENTRIES,
                    });
                }
            }
        }
        Ok(topo)
    }
}

enum EventKind {
    Requirement { index: usize },
    BeaconEmit,
    BeaconArrive { head_sent: SimTime },
    ParamApply { bundling: u32 },
    Deliver { msg: Box<SimMessage> },
    Measure { seq: u16, local: SimTime },
    FollowupFire,
}

impl EventKind {
    fn rank(&self) -> u8 {
        match self {
            EventKind::Requirement { .. } => 0,
            EventKind::BeaconEmit => 1,
            EventKind::BeaconArrive { .. } => 2,
            EventKind::ParamApply { .. } => 3,
            EventKind::Deliver { .. } => 4,
            EventKind::Measure { .. } => 5,
            EventKind::FollowupFire => 6,
        }
    }
}

struct Event {
    time: SimTime,
    node: NodeId,
    kind: EventKind,
    uid: u64,
}

impl Event {
    fn key(&self) -> (u64, u16, u8, u64) {
        (
            self.time.as_micros(),
            self.node.0,
            self.kind.rank(),
            self.uid,
        )
    }
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}
impl Eq for Event {}
impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Event {
    // reversed: BinaryHeap is a max-heap, we pop the earliest event
    fn cmp(&self, other: &Self) -> Ordering {
        other.key().cmp(&self.key())
    }
}

struct SimMessage {
    wire: BundledMessage,
    relayed: Vec<ControlRecord>,
    /// Reference-clock transmission instant of the original sender
    /// (instrumentation for sync scoring only).
    true_sent: SimTime,
}

struct NodeState {
    parent: NodeId,
    clock: ClockState,
    bundling: u32,
    own_q: VecDeque<MeasurementRecord>,
    offspring_q: VecDeque<MeasurementRecord>,
    pending_control: BTreeMap<NodeId, ControlRecord>,
    /// Latest beacon: (head timestamp, local receipt timestamp).
    last_beacon: Option<(SimTime, SimTime)>,
    bundle_seq: u16,
    counts: EnergyCounts,
    entries_own_sent: u64,
    entries_forwarded: u64,
}

impl NodeState {
    fn occupancy(&self) -> usize {
        self.own_q.len() + self.offspring_q.len()
    }

    fn trigger_level(&self, mode: BundlingMode) -> usize {
        match mode {
            BundlingMode::AllData => self.occupancy(),
            BundlingMode::SelfData => self.own_q.len(),
            BundlingMode::NoBundling => 0,
        }
    }
}

struct Sim<'a> {
    cfg: &'a ScenarioConfig,
    topo: Topology,
    service_time: Micros,
    nodes: BTreeMap<NodeId, NodeState>,
    maintainer: PerformanceMaintainer,
    trace: TraceSet,
    heap: BinaryHeap<Event>,
    next_uid: u64,
    end: SimTime,
}

/// Execute a scenario to completion. Fully deterministic: identical
/// configurations (including the seed) produce identical traces.
pub fn run(cfg: &ScenarioConfig) -> Result<TraceSet, ConfigError> {
    let topo = cfg.validate()?;
    let end = SimTime::ZERO + cfg.duration;
    let service_time = service_delay_simplified(&cfg.service);

    let mut nodes = BTreeMap::new();
    for node in topo.sensors() {
        let drift = cfg.drifts_milli_ppm.get(&node).copied().unwrap_or(0);
        let offset = (mix(cfg.seed, 0xC10C_0000 | node.0 as u64) % 1_000_000) as i64;
        nodes.insert(
            node,
            NodeState {
                parent: topo.parent(node).unwrap(),
                clock: ClockState::new(drift, offset, SimTime::ZERO),
                bundling: cfg.initial_plan,
                own_q: VecDeque::new(),
                offspring_q: VecDeque::new(),
                pending_control: BTreeMap::new(),
                last_beacon: None,
                bundle_seq: 0,
                counts: EnergyCounts::default(),
                entries_own_sent: 0,
                entries_forwarded: 0,
            },
        );
    }

    let maintainer = PerformanceMaintainer::new(MaintainerConfig {
        table: cfg.accuracy_table.clone(),
        service: cfg.service,
        beacon_interval: cfg.measurement_interval,
    });

    let mut sim = Sim {
        cfg,
        trace: TraceSet::new(
            topo.sensors().collect(),
            cfg.energy,
            cfg.bundling_mode,
            cfg.duration,
        ),
        topo,
        service_time,
        nodes,
        maintainer,
        heap: BinaryHeap::new(),
        next_uid: 0,
        end,
    };

    for (index, (at, _)) in cfg.schedule.iter().enumerate() {
        sim.schedule(SimTime::ZERO + *at, HEAD, EventKind::Requirement { index });
    }
    // beacons start one interval in so that a zero head timestamp can stand
    // for "no beacon heard yet"
    sim.schedule(
        SimTime::ZERO + cfg.measurement_interval,
        HEAD,
        EventKind::BeaconEmit,
    );
    let sensor_ids: Vec<NodeId> = sim.topo.sensors().collect();
    for node in sensor_ids {
        let state = &sim.nodes[&node];
        let phase =
            mix(cfg.seed, 0x9EA5_0000 | node.0 as u64) % cfg.measurement_interval.as_micros();
        let first_local =
            state.clock.local_time(SimTime::ZERO) + Micros(phase) + cfg.measurement_interval;
        let at = state.clock.true_from_local(first_local);
        sim.schedule(
            at,
            node,
            EventKind::Measure {
                seq: 1,
                local: first_local,
            },
        );
    }

    while let Some(ev) = sim.heap.pop() {
        if ev.time > sim.end {
            break;
        }
        sim.dispatch(ev);
    }

    let mut trace = sim.trace;
    for (node, state) in sim.nodes {
        trace.energy_counts.insert(node, state.counts);
        trace
            .logical_entries
            .insert(node, (state.entries_own_sent, state.entries_forwarded));
    }
    Ok(trace)
}

impl<'a> Sim<'a> {
    fn schedule(&mut self, time: SimTime, node: NodeId, kind: EventKind) {
        if time > self.end {
            return;
        }
        let uid = self.next_uid;
        self.next_uid += 1;
        self.heap.push(Event {
            time,
            node,
            kind,
            uid,
        });
    }

    fn dispatch(&mut self, ev: Event) {
        let now = ev.time;
        match ev.kind {
            EventKind::Requirement { index } => {
                let (_, req) = &self.cfg.schedule[index];
                let report = self.maintainer.on_requirement(now, req.clone());
                self.process_report(now, report);
            }
            EventKind::BeaconEmit => {
                let children: Vec<NodeId> = self.topo.children(HEAD).to_vec();
                for child in children {
                    self.schedule(
                        now + self.service_time,
                        child,
                        EventKind::BeaconArrive { head_sent: now },
                    );
                }
                self.schedule(
                    now + self.cfg.measurement_interval,
                    HEAD,
                    EventKind::BeaconEmit,
                );
            }
            EventKind::BeaconArrive { head_sent } => {
                let state = self.nodes.get_mut(&ev.node).unwrap();
                let local = state.clock.local_time(now);
                state.last_beacon = Some((head_sent, local));
                let children: Vec<NodeId> = self.topo.children(ev.node).to_vec();
                for child in children {
                    self.schedule(
                        now + self.service_time,
                        child,
                        EventKind::BeaconArrive { head_sent },
                    );
                }
            }
            EventKind::ParamApply { bundling } => {
                self.nodes.get_mut(&ev.node).unwrap().bundling = bundling;
            }
            EventKind::Measure { seq, local } => {
                self.on_measure(now, ev.node, seq, local);
            }
            EventKind::Deliver { msg } => {
                self.on_deliver(now, ev.node, *msg);
            }
            EventKind::FollowupFire => {
                let state = &self.nodes[&ev.node];
                if self.cfg.bundling_mode != BundlingMode::NoBundling
                    && state.trigger_level(self.cfg.bundling_mode) >= state.bundling as usize
                {
                    self.fire(now, ev.node);
                }
            }
        }
    }

    fn on_measure(&mut self, now: SimTime, node: NodeId, seq: u16, local: SimTime) {
        let value = (mix(self.cfg.seed, ((node.0 as u64) << 32) | seq as u64) & 0xFFFF) as u16;
        let entry = MeasurementRecord {
            origin: node,
            seq,
            captured: local,
            value,
        };

        if self.cfg.bundling_mode == BundlingMode::NoBundling {
            self.transmit_single(now, node, entry);
        } else {
            let state = &self.nodes[&node];
            if state.trigger_level(self.cfg.bundling_mode) >= state.bundling as usize {
                self.fire(now, node);
            }
            self.nodes.get_mut(&node).unwrap().own_q.push_back(entry);
        }

        if seq < u16::MAX {
            let next_local = local + self.cfg.measurement_interval;
            let at = self.nodes[&node].clock.true_from_local(next_local);
            self.schedule(
                at,
                node,
                EventKind::Measure {
                    seq: seq + 1,
                    local: next_local,
                },
            );
        }
    }

    /// Flush the queue into one bundled message: own entries first, then
    /// offspring entries, both FIFO, capped at the wire-format limit.
    fn fire(&mut self, now: SimTime, node: NodeId) {
        let mode = self.cfg.bundling_mode;
        let state = self.nodes.get_mut(&node).unwrap();
        let take = match mode {
            BundlingMode::SelfData => state.own_q.len().min(MAX_ENTRIES),
            _ => state.occupancy().min(MAX_ENTRIES),
        };
        if take == 0 {
            return;
        }

        let mut entries = Vec::with_capacity(take);
        let mut own_taken = 0u64;
        while entries.len() < take {
            match state.own_q.pop_front() {
                Some(e) => {
                    entries.push(e);
                    own_taken += 1;
                }
                None => break,
            }
        }
        if mode == BundlingMode::AllData {
            while entries.len() < take {
                entries.push(state.offspring_q.pop_front().unwrap());
            }
        }
        let forwarded_taken = entries.len() as u64 - own_taken;

        state.bundle_seq = state.bundle_seq.wrapping_add(1);
        let (head_sent, node_received) = state.last_beacon.unwrap_or_default();
        let wire = BundledMessage {
            sender: node,
            parent: state.parent,
            seq: state.bundle_seq,
            sync: SyncSample {
                head_sent,
                node_received,
                node_sent: state.clock.local_time(now),
            },
            entries,
        };
        let relayed: Vec<ControlRecord> = std::mem::take(&mut state.pending_control)
            .into_values()
            .collect();

        state.counts.bundles += 1;
        state.entries_own_sent += own_taken;
        state.entries_forwarded += forwarded_taken;
        let parent = state.parent;
        let refire = state.trigger_level(mode) >= state.bundling as usize;
        let log = trace::BundleLogEntry {
            at: now,
            sender: node,
            count: take as u16,
            bundling: state.bundling,
        };

        self.trace.bundle_log.push(log);
        self.trace.record_tx(now, node);
        self.schedule(
            now + self.service_time,
            parent,
            EventKind::Deliver {
                msg: Box::new(SimMessage {
                    wire,
                    relayed,
                    true_sent: now,
                }),
            },
        );
        if refire {
            self.schedule(now + self.service_time, node, EventKind::FollowupFire);
        }
    }

    /// One measurement as its own message (no-bundling mode).
    fn transmit_single(&mut self, now: SimTime, node: NodeId, entry: MeasurementRecord) {
        let state = self.nodes.get_mut(&node).unwrap();
        state.bundle_seq = state.bundle_seq.wrapping_add(1);
        let (head_sent, node_received) = state.last_beacon.unwrap_or_default();
        let wire = BundledMessage {
            sender: node,
            parent: state.parent,
            seq: state.bundle_seq,
            sync: SyncSample {
                head_sent,
                node_received,
                node_sent: state.clock.local_time(now),
            },
            entries: vec![entry],
        };
        state.counts.measurements += 1;
        state.entries_own_sent += 1;
        let parent = state.parent;
        self.trace.record_tx(now, node);
        self.schedule(
            now + self.service_time,
            parent,
            EventKind::Deliver {
                msg: Box::new(SimMessage {
                    wire,
                    relayed: Vec::new(),
                    true_sent: now,
                }),
            },
        );
    }

    fn on_deliver(&mut self, now: SimTime, to: NodeId, msg: SimMessage) {
        if to == HEAD {
            self.head_ingest(now, msg);
            return;
        }
        self.trace.record_rx(now, to);
        match self.cfg.bundling_mode {
            BundlingMode::AllData => {
                let state = &self.nodes[&to];
                if state.trigger_level(BundlingMode::AllData) >= state.bundling as usize {
                    self.fire(now, to);
                }
                let state = self.nodes.get_mut(&to).unwrap();
                let sender = msg.wire.sender;
                state.offspring_q.extend(msg.wire.entries);
                state.pending_control.insert(
                    sender,
                    ControlRecord {
                        origin: sender,
                        parent: msg.wire.parent,
                        sync: msg.wire.sync,
                        true_sent: msg.true_sent,
                    },
                );
                for r in msg.relayed {
                    state.pending_control.insert(r.origin, r);
                }
            }
            BundlingMode::SelfData | BundlingMode::NoBundling => {
                let state = self.nodes.get_mut(&to).unwrap();
                state.counts.forwards += 1;
                state.entries_forwarded += msg.wire.entries.len() as u64;
                let parent = state.parent;
                self.trace.record_tx(now, to);
                self.schedule(
                    now + self.service_time,
                    parent,
                    EventKind::Deliver { msg: Box::new(msg) },
                );
            }
        }
    }

    fn head_ingest(&mut self, now: SimTime, msg: SimMessage) {
        for entry in &msg.wire.entries {
            self.trace
                .delivered_seqs
                .entry(entry.origin)
                .or_default()
                .push(entry.seq);
        }
        let report = self
            .maintainer
            .on_message(now, &msg.wire, &msg.relayed, msg.true_sent);
        for sample in &report.samples {
            self.trace.delays.push(DelayRecord {
                arrival: sample.arrival,
                origin: sample.origin,
                e2e: sample.e2e,
            });
        }
        self.trace.skipped_entries += report.skipped_entries;
        for (node, err) in &report.sync_scores {
            self.trace.sync_scores.push((now, *node, *err));
        }
        self.process_report(now, report);
    }

    fn process_report(&mut self, now: SimTime, report: crate::head::IngestReport) {
        if let Some(plan) = report.new_plan {
            self.trace.plan_history.push((now, plan));
        }
        for update in report.plan_updates {
            self.schedule(
                update.apply_at,
                update.node,
                EventKind::ParamApply {
                    bundling: update.bundling,
                },
            );
        }
        if let Some(err) = report.infeasible {
            self.trace.infeasible_events.push((now, err.to_string()));
        }
    }
}
