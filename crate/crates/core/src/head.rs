//! The head node's runtime control loop.
//!
//! The head recovers routing paths from topology data carried in bundled
//! messages, maintains per-node clock-skew estimates, turns arriving
//! entries into end-to-end delay samples, monitors them against the active
//! requirement, and re-solves the bundling program whenever the requirement
//! or the recovered topology changes. The resulting plan is disseminated
//! downstream with one beacon interval of latency per hop.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::delay::{service_delay_simplified, ServiceDelayParams};
use crate::model::{BundlingPlan, NodeId, RequirementSet, Topology};
use crate::optimizer::{build_constraints, solve, OptimizerError, SolveStatus};
use crate::sync::{translate_timestamp, update_skew, AccuracyTable, SkewEstimate, SyncSample};
use crate::time::{Micros, SimTime};
use crate::wire::BundledMessage;

#[derive(Debug, Error, PartialEq)]
pub enum HeadError {
    #[error("plan has no bundling number for node {0}")]
    IncompletePlan(NodeId),
    #[error(transparent)]
    Optimizer(#[from] OptimizerError),
}

/// Routing paths recovered from message headers.
///
/// Parent claims accumulate in a pending map; a tree snapshot is committed
/// only when the claims validate, so transient inconsistencies during
/// churn never produce an unusable topology.
#[derive(Clone, Debug, Default)]
pub struct PathTable {
    pending: BTreeMap<NodeId, NodeId>,
    snapshot: Option<Topology>,
    revision: u64,
}

impl PathTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Record a `(child, parent)` claim. Returns true iff the committed
    /// tree snapshot changed.
    pub fn observe(&mut self, child: NodeId, parent: NodeId) -> bool {
        if self.pending.get(&child) == Some(&parent) {
            return false;
        }
        self.pending.insert(child, parent);
        let edges: Vec<(NodeId, NodeId)> = self.pending.iter().map(|(&c, &p)| (c, p)).collect();
        match crate::model::validate_topology(&edges) {
            Ok(topo) => {
                if self.snapshot.as_ref() != Some(&topo) {
                    self.snapshot = Some(topo);
                    self.revision += 1;
                    true
                } else {
                    false
                }
            }
            Err(_) => false, // held pending until a valid tree forms
        }
    }

    pub fn topology(&self) -> Option<&Topology> {
        self.snapshot.as_ref()
    }

    pub fn revision(&self) -> u64 {
        self.revision
    }

    /// Hop count of `node` by walking the pending claims; usable before a
    /// full tree has formed.
    pub fn claimed_depth(&self, node: NodeId) -> Option<u32> {
        let mut depth = 0;
        let mut cur = node;
        loop {
            let &p = self.pending.get(&cur)?;
            depth += 1;
            if p == crate::model::HEAD {
                return Some(depth);
            }
            if depth > self.pending.len() as u32 {
                return None; // pending map may be transiently cyclic
            }
            cur = p;
        }
    }
}

/// One end-to-end delay observation, tagged by the originating node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DelaySample {
    pub arrival: SimTime,
    pub origin: NodeId,
    pub e2e: Micros,
}

impl DelaySample {
    /// Head-clock instant the measurement was (estimated to be) captured.
    pub fn measured_at(&self) -> SimTime {
        self.arrival - self.e2e
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct NodeMonitor {
    pub samples: u64,
    pub violations: u64,
    pub max_seen: Micros,
}

/// Monitoring for one requirement segment.
#[derive(Clone, Debug)]
pub struct MonitorSegment {
    pub since: SimTime,
    pub max_delay: Micros,
    pub per_node: BTreeMap<NodeId, NodeMonitor>,
}

impl MonitorSegment {
    pub fn samples(&self) -> u64 {
        self.per_node.values().map(|n| n.samples).sum()
    }

    pub fn violations(&self) -> u64 {
        self.per_node.values().map(|n| n.violations).sum()
    }

    pub fn max_seen(&self) -> Micros {
        self.per_node
            .values()
            .map(|n| n.max_seen)
            .max()
            .unwrap_or(Micros::ZERO)
    }
}

/// Runtime delay monitor. Samples are judged against the requirement that
/// was active when the measurement was taken, so tightening a bound never
/// retroactively condemns samples already in flight.
#[derive(Clone, Debug, Default)]
pub struct Monitor {
    segments: Vec<MonitorSegment>,
}

impl Monitor {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn activate(&mut self, at: SimTime, max_delay: Micros) {
        self.segments.push(MonitorSegment {
            since: at,
            max_delay,
            per_node: BTreeMap::new(),
        });
    }

    pub fn observe(&mut self, sample: &DelaySample) {
        let measured_at = sample.measured_at();
        let Some(segment) = self
            .segments
            .iter_mut()
            .rev()
            .find(|s| s.since <= measured_at)
        else {
            return; // measured before any requirement existed
        };
        let node = segment.per_node.entry(sample.origin).or_default();
        node.samples += 1;
        node.max_seen = node.max_seen.max(sample.e2e);
        if sample.e2e > segment.max_delay {
            node.violations += 1;
        }
    }

    pub fn segments(&self) -> &[MonitorSegment] {
        &self.segments
    }

    pub fn active(&self) -> Option<&MonitorSegment> {
        self.segments.last()
    }
}

/// Build the constraint set for the recovered topology and solve it.
pub fn reoptimize(
    topology: &Topology,
    req: &RequirementSet,
    table: &AccuracyTable,
) -> Result<BundlingPlan, OptimizerError> {
    let cs = build_constraints(topology, req, table)?;
    let report = solve(&cs);
    debug_assert_eq!(report.status, SolveStatus::Optimal);
    Ok(report.plan)
}

/// A scheduled per-node parameter update.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PlanUpdate {
    pub node: NodeId,
    pub bundling: u32,
    pub apply_at: SimTime,
}

/// Schedule per-node updates for `plan`. Parameters ride regular beacons,
/// so a node at depth `d` applies its value after `d` beacon intervals.
pub fn disseminate(
    plan: &BundlingPlan,
    topology: &Topology,
    beacon_interval: Micros,
    now: SimTime,
) -> Result<Vec<PlanUpdate>, HeadError> {
    if let Some(node) = plan.missing_node(topology) {
        return Err(HeadError::IncompletePlan(node));
    }
    let mut updates = Vec::with_capacity(plan.len());
    for node in topology.sensors() {
        let depth = topology.depth(node).unwrap() as u64;
        updates.push(PlanUpdate {
            node,
            bundling: plan.get(node).unwrap(),
            apply_at: now + beacon_interval.scale(depth, 1),
        });
    }
    Ok(updates)
}

/// Control data for one descendant relayed through a gateway bundle: its
/// parent claim and its latest sync triple. `true_sent` is simulator
/// instrumentation (the reference-clock transmission instant) used only to
/// score translation accuracy; the head's decisions never read it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ControlRecord {
    pub origin: NodeId,
    pub parent: NodeId,
    pub sync: SyncSample,
    pub true_sent: SimTime,
}

#[derive(Clone, Debug, Default)]
struct NodeSyncState {
    reference: Option<SyncSample>,
    estimate: Option<SkewEstimate>,
}

/// Everything the head did with one ingested message or requirement change.
#[derive(Debug, Default)]
pub struct IngestReport {
    pub samples: Vec<DelaySample>,
    /// Entries whose origin had no usable skew estimate yet.
    pub skipped_entries: u64,
    /// Non-empty when a re-optimization produced a new plan.
    pub plan_updates: Vec<PlanUpdate>,
    /// The plan that was disseminated, if any.
    pub new_plan: Option<BundlingPlan>,
    /// Set when re-optimization failed; the previous plan stays active.
    pub infeasible: Option<OptimizerError>,
    /// Translation-error scores for ingested sync samples (instrumentation).
    pub sync_scores: Vec<(NodeId, Micros)>,
}

pub struct MaintainerConfig {
    pub table: AccuracyTable,
    pub service: ServiceDelayParams,
    pub beacon_interval: Micros,
}

/// The performance maintainer running at the head: path recovery, time
/// synchronization, delay calculation, monitoring, and plan regeneration.
/// All state is confined to one logical control loop.
pub struct PerformanceMaintainer {
    cfg: MaintainerConfig,
    paths: PathTable,
    monitor: Monitor,
    sync: BTreeMap<NodeId, NodeSyncState>,
    active_req: Option<RequirementSet>,
    plan: Option<BundlingPlan>,
}

impl PerformanceMaintainer {
    pub fn new(cfg: MaintainerConfig) -> Self {
        PerformanceMaintainer {
            cfg,
            paths: PathTable::new(),
            monitor: Monitor::new(),
            sync: BTreeMap::new(),
            active_req: None,
            plan: None,
        }
    }

    pub fn paths(&self) -> &PathTable {
        &self.paths
    }

    pub fn monitor(&self) -> &Monitor {
        &self.monitor
    }

    pub fn plan(&self) -> Option<&BundlingPlan> {
        self.plan.as_ref()
    }

    pub fn estimate(&self, node: NodeId) -> Option<&SkewEstimate> {
        self.sync.get(&node).and_then(|s| s.estimate.as_ref())
    }

    /// Activate a requirement: starts a monitor segment and re-optimizes
    /// if a topology is already known.
    pub fn on_requirement(&mut self, now: SimTime, req: RequirementSet) -> IngestReport {
        self.monitor.activate(now, req.max_delay);
        self.active_req = Some(req);
        let mut report = IngestReport::default();
        self.try_reoptimize(now, &mut report);
        report
    }

    /// Ingest one bundled message arriving at the head, with any relayed
    /// descendant control records.
    pub fn on_message(
        &mut self,
        arrival: SimTime,
        msg: &BundledMessage,
        relayed: &[ControlRecord],
        sender_true_sent: SimTime,
    ) -> IngestReport {
        let mut report = IngestReport::default();

        // Topology data: the sender's own claim plus relayed claims.
        let mut changed = self.paths.observe(msg.sender, msg.parent);
        for r in relayed {
            changed |= self.paths.observe(r.origin, r.parent);
        }

        // Sync samples: the sender's triple plus relayed triples.
        self.ingest_sync(msg.sender, &msg.sync, sender_true_sent, &mut report);
        for r in relayed {
            self.ingest_sync(r.origin, &r.sync, r.true_sent, &mut report);
        }

        // Delay calculation per entry, using each origin's estimate.
        for entry in &msg.entries {
            match self.estimate(entry.origin) {
                None => report.skipped_entries += 1,
                Some(est) => {
                    let translated = translate_timestamp(est, entry.captured);
                    let e2e = Micros(arrival.delta(translated).max(0) as u64);
                    let sample = DelaySample {
                        arrival,
                        origin: entry.origin,
                        e2e,
                    };
                    self.monitor.observe(&sample);
                    report.samples.push(sample);
                }
            }
        }

        // Edge-triggered re-optimization on topology change.
        if changed {
            self.try_reoptimize(arrival, &mut report);
        }
        report
    }

    /// Fold one sync triple into the origin's estimate. Beacons cascade
    /// hop-by-hop with one service time per hop, so the head advances the
    /// beacon timestamp by the claimed depth before anchoring.
    fn ingest_sync(
        &mut self,
        origin: NodeId,
        sync: &SyncSample,
        true_sent: SimTime,
        report: &mut IngestReport,
    ) {
        if sync.head_sent == SimTime::ZERO {
            return; // sender had heard no beacon yet
        }
        let Some(depth) = self.paths.claimed_depth(origin) else {
            return; // no usable path yet; the next bundle retries
        };
        let lag = service_delay_simplified(&self.cfg.service).scale(depth as u64, 1);
        let corrected = SyncSample {
            head_sent: sync.head_sent + lag,
            ..*sync
        };
        let state = self.sync.entry(origin).or_default();
        match update_skew(state.estimate.as_ref(), &corrected, state.reference.as_ref()) {
            Ok(est) => {
                state.estimate = Some(est);
                if state.reference.is_none() {
                    state.reference = Some(corrected);
                }
                let translated = translate_timestamp(&est, corrected.node_sent);
                report
                    .sync_scores
                    .push((origin, Micros(translated.delta(true_sent).unsigned_abs())));
            }
            Err(_) => {
                // same beacon echoed twice; keep the previous estimate
            }
        }
    }

    fn try_reoptimize(&mut self, now: SimTime, report: &mut IngestReport) {
        let (Some(req), Some(topo)) = (&self.active_req, self.paths.topology()) else {
            return;
        };
        match reoptimize(topo, req, &self.cfg.table) {
            Ok(plan) => {
                if self.plan.as_ref() != Some(&plan) {
                    let updates = disseminate(&plan, topo, self.cfg.beacon_interval, now)
                        .expect("freshly solved plan covers the topology it was built from");
                    report.plan_updates = updates;
                    report.new_plan = Some(plan.clone());
                    self.plan = Some(plan);
                }
            }
            Err(err) => report.infeasible = Some(err),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate_topology;
    use crate::wire::MeasurementRecord;

    fn n(id: u16) -> NodeId {
        NodeId(id)
    }

    fn demo_topology() -> Topology {
        validate_topology(&[(n(1), n(0)), (n(2), n(1)), (n(3), n(1)), (n(4), n(2))]).unwrap()
    }

    fn demo_req(max_delay_s: u64, chi_max: u32) -> RequirementSet {
        RequirementSet {
            max_delay: Micros::from_secs(max_delay_s),
            max_sync_error_secs: 5e-6,
            bundle_min: 1,
            bundle_max: chi_max,
            measurement_interval: Micros::from_secs(1),
        }
    }

    #[test]
    fn path_table_replays_demo_topology() {
        let mut table = PathTable::new();
        let mut changes = 0;
        for (c, p) in [(1u16, 0u16), (2, 1), (3, 1), (4, 2)] {
            if table.observe(n(c), n(p)) {
                changes += 1;
            }
        }
        assert_eq!(table.topology(), Some(&demo_topology()));
        assert_eq!(changes, 4);
        // duplicates are idempotent
        assert!(!table.observe(n(4), n(2)));
        let rev = table.revision();
        assert!(!table.observe(n(4), n(2)));
        assert_eq!(table.revision(), rev);
    }

    #[test]
    fn path_table_single_edge_update() {
        let mut table = PathTable::new();
        for (c, p) in [(1u16, 0u16), (2, 1), (3, 1), (4, 2)] {
            table.observe(n(c), n(p));
        }
        let rev = table.revision();
        assert!(table.observe(n(4), n(3)));
        assert_eq!(table.revision(), rev + 1);
        assert_eq!(table.topology().unwrap().parent(n(4)).unwrap(), n(3));
    }

    #[test]
    fn path_table_holds_invalid_states_pending() {
        let mut table = PathTable::new();
        assert!(table.observe(n(1), n(0)));
        // a claim that would orphan node 4 is held until its parent appears
        assert!(!table.observe(n(4), n(2)));
        assert_eq!(
            table.topology(),
            Some(&validate_topology(&[(n(1), n(0))]).unwrap())
        );
        assert!(table.observe(n(2), n(1)));
        assert!(table.topology().unwrap().contains(n(4)));
    }

    #[test]
    fn monitor_thresholds() {
        let mut monitor = Monitor::new();
        monitor.activate(SimTime::ZERO, Micros::from_secs(8));
        let ok = DelaySample {
            arrival: SimTime(100_000_000),
            origin: n(4),
            e2e: Micros(7_750_000),
        };
        let bad = DelaySample {
            arrival: SimTime(101_000_000),
            origin: n(4),
            e2e: Micros(8_300_000),
        };
        monitor.observe(&ok);
        assert_eq!(monitor.active().unwrap().violations(), 0);
        monitor.observe(&bad);
        let seg = monitor.active().unwrap();
        assert_eq!(seg.violations(), 1);
        assert_eq!(seg.samples(), 2);
        assert_eq!(seg.max_seen(), Micros(8_300_000));
    }

    #[test]
    fn monitor_never_judges_retroactively() {
        let mut monitor = Monitor::new();
        monitor.activate(SimTime::ZERO, Micros::from_secs(8));
        // tighten at t=100s
        monitor.activate(SimTime(100_000_000), Micros::from_secs(2));
        // measured at 97s, arrives at 101s: judged against the 8 s segment
        let sample = DelaySample {
            arrival: SimTime(101_000_000),
            origin: n(1),
            e2e: Micros::from_secs(4),
        };
        monitor.observe(&sample);
        assert_eq!(monitor.segments()[0].violations(), 0);
        assert_eq!(monitor.segments()[0].samples(), 1);
        assert_eq!(monitor.segments()[1].samples(), 0);
    }

    #[test]
    fn reoptimize_matches_solver_examples() {
        let topo = demo_topology();
        let table = AccuracyTable::ahts();
        let plan = reoptimize(&topo, &demo_req(8, 15), &table).unwrap();
        assert_eq!(plan.objective(), 26);
        let plan2 = reoptimize(&topo, &demo_req(2, 10), &table).unwrap();
        assert_eq!(plan2.objective(), 5);
        assert_eq!(plan2.get(n(1)), Some(2));
        // determinism
        assert_eq!(plan, reoptimize(&topo, &demo_req(8, 15), &table).unwrap());
    }

    #[test]
    fn disseminate_respects_depth() {
        let topo = demo_topology();
        let plan = BundlingPlan::uniform(&topo, 3);
        let updates = disseminate(&plan, &topo, Micros::from_secs(1), SimTime(10_000_000)).unwrap();
        let by_node: BTreeMap<NodeId, SimTime> =
            updates.iter().map(|u| (u.node, u.apply_at)).collect();
        assert_eq!(by_node[&n(1)], SimTime(11_000_000));
        assert_eq!(by_node[&n(2)], SimTime(12_000_000));
        assert_eq!(by_node[&n(4)], SimTime(13_000_000));
    }

    #[test]
    fn disseminate_rejects_incomplete_plan() {
        let topo = demo_topology();
        let full = BundlingPlan::uniform(&topo, 3);
        let mut plan = BundlingPlan::new();
        for (node, v) in full.iter() {
            if node != n(3) {
                plan.set(node, v);
            }
        }
        assert_eq!(
            disseminate(&plan, &topo, Micros::from_secs(1), SimTime::ZERO).unwrap_err(),
            HeadError::IncompletePlan(n(3))
        );
    }

    #[test]
    fn maintainer_replays_messages_into_a_plan() {
        let mut m = PerformanceMaintainer::new(MaintainerConfig {
            table: AccuracyTable::ahts(),
            service: ServiceDelayParams::default(),
            beacon_interval: Micros::from_secs(1),
        });
        let req_report = m.on_requirement(SimTime::ZERO, demo_req(8, 15));
        assert!(req_report.plan_updates.is_empty(), "no topology yet");

        let sync = SyncSample {
            head_sent: SimTime(1_000_000),
            node_received: SimTime(1_010_000),
            node_sent: SimTime(1_500_000),
        };
        let mk = |sender: u16, parent: u16| BundledMessage {
            sender: n(sender),
            parent: n(parent),
            seq: 1,
            sync,
            entries: vec![MeasurementRecord {
                origin: n(sender),
                seq: 1,
                captured: SimTime(1_200_000),
                value: 7,
            }],
        };
        // the first message forms a valid single-node tree, so the head
        // already optimizes for what it knows: G1 <= 8
        let partial = m.on_message(SimTime(2_000_000), &mk(1, 0), &[], SimTime(1_990_000));
        assert_eq!(partial.new_plan.as_ref().unwrap().objective(), 8);
        let relayed = [
            ControlRecord {
                origin: n(2),
                parent: n(1),
                sync,
                true_sent: SimTime(1_990_000),
            },
            ControlRecord {
                origin: n(3),
                parent: n(1),
                sync,
                true_sent: SimTime(1_990_000),
            },
            ControlRecord {
                origin: n(4),
                parent: n(2),
                sync,
                true_sent: SimTime(1_990_000),
            },
        ];
        let report = m.on_message(SimTime(3_000_000), &mk(1, 0), &relayed, SimTime(2_990_000));
        assert_eq!(report.new_plan.as_ref().unwrap().objective(), 26);
        assert_eq!(report.plan_updates.len(), 4);

        // unchanged topology and requirement: no further dissemination
        let report = m.on_message(SimTime(4_000_000), &mk(1, 0), &relayed, SimTime(3_990_000));
        assert!(report.plan_updates.is_empty());
    }

    #[test]
    fn maintainer_holds_plan_on_infeasible_requirement() {
        let mut m = PerformanceMaintainer::new(MaintainerConfig {
            table: AccuracyTable::ahts(),
            service: ServiceDelayParams::default(),
            beacon_interval: Micros::from_secs(1),
        });
        m.on_requirement(SimTime::ZERO, demo_req(8, 15));
        let sync = SyncSample::default();
        for (c, p) in [(1u16, 0u16), (2, 1), (3, 1), (4, 2)] {
            let msg = BundledMessage {
                sender: n(c),
                parent: n(p),
                seq: 1,
                sync,
                entries: vec![MeasurementRecord {
                    origin: n(c),
                    seq: 1,
                    captured: SimTime::ZERO,
                    value: 0,
                }],
            };
            m.on_message(SimTime(2_000_000), &msg, &[], SimTime(1_000_000));
        }
        let before = m.plan().cloned().unwrap();
        let report = m.on_requirement(
            SimTime(10_000_000),
            RequirementSet {
                max_delay: Micros(500_000),
                ..demo_req(8, 15)
            },
        );
        assert!(report.infeasible.is_some());
        assert!(report.plan_updates.is_empty());
        assert_eq!(m.plan().unwrap(), &before);
    }
}
